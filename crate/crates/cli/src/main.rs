//! `sav-spde`: command line front end for the augmented SAV solver.
//!
//! Every subcommand reads a configuration file, writes its outputs below a
//! single output directory and exits nonzero with one `error kind=... msg=...`
//! line on failure.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sav_spde::check::run_checks;
use sav_spde::config::{parse_config, RunConfig};
use sav_spde::fem::FemOperators;
use sav_spde::mc::{r_tracking_study, run_ensemble, ErrorReport};
use sav_spde::noise::NoiseBasis;
use sav_spde::sav::{run_path, PathConfig, SavState};
use sav_spde::{Error, TorusMesh};

const OUT_ENV: &str = "SAV_SPDE_OUT";

type Job = fn(&RunConfig, &Path) -> Result<(), Error>;

#[derive(Parser)]
#[command(name = "sav-spde", version, about = "Stochastic Allen-Cahn solver with an augmented SAV scheme")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one path and write the step log and field snapshots.
    Run(Common),
    /// Monte Carlo strong errors of every ladder rung against the reference.
    Mc(Common),
    /// Strong errors with convergence orders between consecutive rungs.
    Eoc(Common),
    /// Tracking error of the auxiliary variable under step refinement.
    Rtrack(Common),
    /// Dense-oracle and invariant checks on small problems.
    Check(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the Monte Carlo sample count.
    #[arg(long)]
    samples: Option<u64>,
    /// Worker threads for sample-parallel work (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; wins over the config file and SAV_SPDE_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let text = e.to_string().replace('"', "'");
            let msg = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join("; ");
            eprintln!("error kind={} msg=\"{}\"", e.kind(), msg);
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    let (common, job): (Common, Job) = match command {
        Command::Run(c) => (c, cmd_run),
        Command::Mc(c) => (c, cmd_mc),
        Command::Eoc(c) => (c, cmd_eoc),
        Command::Rtrack(c) => (c, cmd_rtrack),
        Command::Check(c) => (c, cmd_check),
    };
    let mut cfg = parse_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(s) = common.samples {
        if s == 0 {
            return Err(Error::Config(vec!["--samples must be positive".into()]));
        }
        cfg.experiment.samples = s;
    }
    let out = output_dir(common.out, &cfg);
    fs::create_dir_all(&out)?;
    fs::write(out.join("effective.conf"), cfg.emit())?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.workers {
        pool = pool.num_threads(n.max(1));
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(vec![format!("worker pool: {e}")]))?;
    pool.install(|| job(&cfg, &out))
}

fn output_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn create(path: PathBuf) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_field(path: PathBuf, state: &SavState, mesh: &TorusMesh) -> Result<(), Error> {
    let mut w = create(path)?;
    if mesh.dim() == 1 {
        writeln!(w, "node_index,x,phi_value")?;
    } else {
        writeln!(w, "node_index,x,y,phi_value")?;
    }
    for (i, v) in state.phi.values().iter().enumerate() {
        let p = mesh.node_coords(i);
        if mesh.dim() == 1 {
            writeln!(w, "{i},{:e},{v:e}", p[0])?;
        } else {
            writeln!(w, "{i},{:e},{:e},{v:e}", p[0], p[1])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<(), Error> {
    let ops = FemOperators::new(TorusMesh::new(cfg.dim, cfg.level)?);
    let model = cfg.noise_model()?;
    let basis = NoiseBasis::new(&model, &ops.mesh)?;
    let n_steps = cfg.n_steps();
    let path = model.generate_increments(0, n_steps, cfg.tau);
    let phi0 = cfg.initial.interpolate(&ops.mesh, cfg.potential.epsilon);
    let initial = SavState::initial(phi0, &ops.mass, &cfg.potential);
    let record_every = if cfg.dump_stride == 0 { n_steps } else { cfg.dump_stride };
    let path_cfg = PathConfig {
        tau: cfg.tau,
        n_steps,
        record_every,
        solver: cfg.solver,
    };
    let traj = run_path(&path_cfg, &ops, &cfg.potential, &path, &basis, initial)?;

    let mut log = create(out.join("run.log"))?;
    traj.write_log(&mut log)?;
    log.flush()?;
    for s in &traj.snapshots {
        write_field(out.join(format!("field_{:06}.csv", s.step)), s, &ops.mesh)?;
    }
    if cfg.dump_noise {
        let mut w = create(out.join("noise.csv"))?;
        path.write_csv(&mut w)?;
        w.flush()?;
    }
    let last = traj.diagnostics.last().expect("step 0 is always logged");
    println!(
        "run: {} steps, r = {:e}, E_sav = {:e}, max|phi| = {:e}",
        n_steps, last.r, last.e_sav, last.max_abs_phi
    );
    Ok(())
}

fn ensemble(cfg: &RunConfig) -> Result<ErrorReport, Error> {
    run_ensemble(&cfg.experiment_plan(), &cfg.scheme_stack()?)
}

fn cmd_mc(cfg: &RunConfig, out: &Path) -> Result<(), Error> {
    let report = ensemble(cfg)?;
    let mut w = create(out.join("mc.csv"))?;
    writeln!(w, "level,h,tau,E_L2,E_H1,E_tot,samples")?;
    for r in &report.rows {
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e},{:e},{}",
            r.level, r.h, r.tau, r.e_l2, r.e_h1, r.e_tot, report.samples
        )?;
    }
    w.flush()?;
    println!("mc: {} rungs, {} samples", report.rows.len(), report.samples);
    Ok(())
}

fn cmd_eoc(cfg: &RunConfig, out: &Path) -> Result<(), Error> {
    let report = ensemble(cfg)?;
    let mut w = create(out.join("eoc.csv"))?;
    report.write_csv(&mut w)?;
    w.flush()?;
    for r in &report.rows {
        println!(
            "level {:>2}  tau {:.3e}  E_L2 {:.4e}  E_tot {:.4e}  EOC_L2 {}",
            r.level,
            r.tau,
            r.e_l2,
            r.e_tot,
            r.eoc_l2.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())
        );
    }
    Ok(())
}

fn cmd_rtrack(cfg: &RunConfig, out: &Path) -> Result<(), Error> {
    let report = r_tracking_study(&cfg.tracking_plan(), &cfg.scheme_stack()?)?;
    let mut w = create(out.join("rtrack.csv"))?;
    report.write_csv(&mut w)?;
    w.flush()?;
    for r in &report.rows {
        println!("tau {:.4e}  mean max |r - sqrt(E_h)| {:.4e}", r.tau, r.mean_max_error);
    }
    Ok(())
}

fn cmd_check(_cfg: &RunConfig, out: &Path) -> Result<(), Error> {
    let rows = run_checks()?;
    let mut w = create(out.join("check.csv"))?;
    writeln!(w, "check,passed,detail")?;
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &rows {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        println!("{:<width$}  {verdict}  {}", r.name, r.detail);
        writeln!(w, "{},{},{}", r.name, r.passed, r.detail)?;
    }
    w.flush()?;
    let failed = rows.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Error::CheckFailed(failed));
    }
    Ok(())
}
