//! Sectioned `key = value` run configuration.
//!
//! ```text
//! # comment
//! [potential]
//! epsilon = 0.02
//! [noise]
//! modes = explicit
//! mode = 0 0 1.0
//! ```
//!
//! Every key belongs to exactly one section, so a key may also appear before
//! any section header (`dim = 1` alone is a complete file). Keys not listed
//! below are rejected. Repeated keys overwrite, except the row keys `mode`,
//! `ladder` and `track_tau`, which accumulate.
//!
//! | section        | key              | default                                   |
//! |----------------|------------------|-------------------------------------------|
//! | `[potential]`  | `gamma`          | `1e-5`                                    |
//! |                | `epsilon`        | `0.02`                                    |
//! |                | `rho`            | `indicator` (or `smooth`)                 |
//! | `[mesh]`       | `dim`            | `1`                                       |
//! |                | `level`          | `7`                                       |
//! | `[time]`       | `final_time`     | `0.25`                                    |
//! |                | `tau`            | `final_time / 256`                        |
//! | `[initial]`    | `kind`           | `tanh-ellipse` (`constant`, `cosine`)     |
//! |                | `value`          | `0` (constant)                            |
//! |                | `amplitude`      | `0.5` (cosine)                            |
//! |                | `wavenumber`     | `1` (cosine)                              |
//! |                | `center`         | `0.5 0.5` (tanh-ellipse)                  |
//! |                | `semi_axes`      | `0.3 0.18` (tanh-ellipse)                 |
//! | `[noise]`      | `master_seed`    | `20240611`                                |
//! |                | `modes`          | `default`, `none` or `explicit`           |
//! |                | `mode`           | rows `k lambda` (1-D) or `k l lambda`     |
//! | `[experiment]` | `ref_level`      | `9`                                       |
//! |                | `tau_min`        | `final_time / 2^14`                       |
//! |                | `ladder`         | rows `level tau`; levels 5, 6, 7 with `tau = final_time * 2^(4-2m)` |
//! |                | `samples`        | `100`                                     |
//! |                | `compare_tau`    | `auto` (coarsest ladder step)             |
//! |                | `track_level`    | `7`                                       |
//! |                | `track_tau`      | rows; `final_time / 2^k` for `k = 8..=11` |
//! | `[solver]`     | `rel_tolerance`  | `1e-10`                                   |
//! |                | `max_iterations` | `auto` (`10 ceil(sqrt(n))`)               |
//! |                | `preconditioner` | `jacobi` (or `none`)                      |
//! | `[output]`     | `dir`            | unset                                     |
//! |                | `dump_stride`    | `0` (initial and final state only)        |
//! |                | `dump_noise`     | `false`                                   |
//!
//! Row keys given explicitly replace the default rows entirely. Giving `mode`
//! rows implies `modes = explicit`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::linalg::{Preconditioner, SolverOptions};
use crate::mc::{integer_ratio, ExperimentPlan, Rung, SchemeStack, TrackingPlan};
use crate::noise::{default_modes, ModeIndex, ModeSpec, NoiseModel};
use crate::potential::{PotentialParams, RhoKind};
use crate::sav::InitialCondition;

const DEFAULT_SEED: u64 = 20240611;

const KEYS: &[(&str, &str)] = &[
    ("potential", "gamma"),
    ("potential", "epsilon"),
    ("potential", "rho"),
    ("mesh", "dim"),
    ("mesh", "level"),
    ("time", "final_time"),
    ("time", "tau"),
    ("initial", "kind"),
    ("initial", "value"),
    ("initial", "amplitude"),
    ("initial", "wavenumber"),
    ("initial", "center"),
    ("initial", "semi_axes"),
    ("noise", "master_seed"),
    ("noise", "modes"),
    ("noise", "mode"),
    ("experiment", "ref_level"),
    ("experiment", "tau_min"),
    ("experiment", "ladder"),
    ("experiment", "samples"),
    ("experiment", "compare_tau"),
    ("experiment", "track_level"),
    ("experiment", "track_tau"),
    ("solver", "rel_tolerance"),
    ("solver", "max_iterations"),
    ("solver", "preconditioner"),
    ("output", "dir"),
    ("output", "dump_stride"),
    ("output", "dump_noise"),
];

/// How the noise mode table was chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum ModeTable {
    /// The 7 (1-D) or 49 (2-D) reference modes.
    Default,
    /// No noise at all.
    None,
    Explicit(Vec<ModeSpec>),
}

impl ModeTable {
    pub fn modes(&self, dim: usize) -> Vec<ModeSpec> {
        match self {
            ModeTable::Default => default_modes(dim),
            ModeTable::None => Vec::new(),
            ModeTable::Explicit(m) => m.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSection {
    pub ref_level: u32,
    pub tau_min: f64,
    pub ladder: Vec<Rung>,
    pub samples: u64,
    pub compare_tau: Option<f64>,
    pub track_level: u32,
    pub track_taus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub potential: PotentialParams,
    pub dim: usize,
    pub level: u32,
    pub final_time: f64,
    pub tau: f64,
    pub initial: InitialCondition,
    pub master_seed: u64,
    pub modes: ModeTable,
    pub experiment: ExperimentSection,
    pub solver: SolverOptions,
    pub output_dir: Option<PathBuf>,
    /// Snapshot every this many steps; `0` keeps only the first and last state.
    pub dump_stride: usize,
    pub dump_noise: bool,
}

fn default_ladder(final_time: f64) -> Vec<Rung> {
    [5u32, 6, 7]
        .iter()
        .map(|&m| Rung {
            level: m,
            tau: final_time / (1u64 << (2 * m - 4)) as f64,
        })
        .collect()
}

fn default_track_taus(final_time: f64) -> Vec<f64> {
    (8..=11).map(|k| final_time / (1u64 << k) as f64).collect()
}

impl Default for RunConfig {
    fn default() -> Self {
        let final_time = 0.25;
        Self {
            potential: PotentialParams::default(),
            dim: 1,
            level: 7,
            final_time,
            tau: final_time / 256.0,
            initial: InitialCondition::droplet(),
            master_seed: DEFAULT_SEED,
            modes: ModeTable::Default,
            experiment: ExperimentSection {
                ref_level: 9,
                tau_min: final_time / (1u64 << 14) as f64,
                ladder: default_ladder(final_time),
                samples: 100,
                compare_tau: None,
                track_level: 7,
                track_taus: default_track_taus(final_time),
            },
            solver: SolverOptions::default(),
            output_dir: None,
            dump_stride: 0,
            dump_noise: false,
        }
    }
}

/// Raw entries after the syntactic pass: key -> list of (line, value).
type Entries = BTreeMap<&'static str, Vec<(usize, String)>>;

fn lex(text: &str, errs: &mut Vec<String>) -> Entries {
    let mut entries: Entries = BTreeMap::new();
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            match rest.strip_suffix(']') {
                Some(name) => {
                    let name = name.trim();
                    if KEYS.iter().any(|(s, _)| *s == name) {
                        section = Some(name.to_string());
                    } else {
                        errs.push(format!("line {line_no}: unknown section [{name}]"));
                        section = None;
                    }
                }
                None => errs.push(format!("line {line_no}: malformed section header")),
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errs.push(format!("line {line_no}: expected `key = value`"));
            continue;
        };
        let key = key.trim();
        let value = value.trim().to_string();
        match KEYS.iter().find(|(_, k)| *k == key) {
            Some((sec, k)) => {
                if let Some(cur) = &section {
                    if cur != sec {
                        errs.push(format!(
                            "line {line_no}: key `{key}` belongs to [{sec}], found in [{cur}]"
                        ));
                        continue;
                    }
                }
                entries.entry(k).or_default().push((line_no, value));
            }
            None => errs.push(format!("line {line_no}: unknown key `{key}`")),
        }
    }
    entries
}

struct Reader<'a> {
    entries: &'a Entries,
    errs: &'a mut Vec<String>,
}

impl Reader<'_> {
    fn last(&self, key: &str) -> Option<(usize, &str)> {
        self.entries
            .get(key)
            .and_then(|v| v.last())
            .map(|(l, s)| (*l, s.as_str()))
    }

    fn rows(&self, key: &str) -> Vec<(usize, String)> {
        self.entries.get(key).cloned().unwrap_or_default()
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str, into: &mut T) {
        if let Some((line, v)) = self.last(key) {
            match v.parse::<T>() {
                Ok(x) => *into = x,
                Err(_) => self
                    .errs
                    .push(format!("line {line}: `{key}` has invalid value `{v}`")),
            }
        }
    }

    fn pair(&mut self, key: &str, into: &mut [f64; 2]) {
        if let Some((line, v)) = self.last(key) {
            let parts: Vec<_> = v.split_whitespace().map(str::parse::<f64>).collect();
            match parts.as_slice() {
                [Ok(a), Ok(b)] => *into = [*a, *b],
                _ => self
                    .errs
                    .push(format!("line {line}: `{key}` expects two numbers, got `{v}`")),
            }
        }
    }
}

fn parse_auto<T: std::str::FromStr>(v: &str) -> Option<Option<T>> {
    if v == "auto" {
        Some(None)
    } else {
        v.parse().ok().map(Some)
    }
}

fn parse_mode_row(v: &str, dim: usize) -> Option<ModeSpec> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    match (dim, parts.as_slice()) {
        (1, [k, lam]) => Some(ModeSpec {
            index: ModeIndex::D1(k.parse().ok()?),
            amplitude: lam.parse().ok()?,
        }),
        (2, [k, l, lam]) => Some(ModeSpec {
            index: ModeIndex::D2(k.parse().ok()?, l.parse().ok()?),
            amplitude: lam.parse().ok()?,
        }),
        _ => None,
    }
}

/// Parses configuration text, applying defaults and validating the result.
/// All problems are reported together.
pub fn parse_str(text: &str) -> Result<RunConfig> {
    let mut errs = Vec::new();
    let entries = lex(text, &mut errs);
    let mut r = Reader {
        entries: &entries,
        errs: &mut errs,
    };
    let mut c = RunConfig::default();

    r.parsed("gamma", &mut c.potential.gamma);
    r.parsed("epsilon", &mut c.potential.epsilon);
    if let Some((line, v)) = r.last("rho") {
        match RhoKind::parse(v) {
            Some(k) => c.potential.rho = k,
            None => r.errs.push(format!(
                "line {line}: `rho` must be `indicator` or `smooth`, got `{v}`"
            )),
        }
    }

    r.parsed("dim", &mut c.dim);
    r.parsed("level", &mut c.level);
    r.parsed("final_time", &mut c.final_time);
    c.tau = c.final_time / 256.0;
    r.parsed("tau", &mut c.tau);

    let mut value = 0.0;
    let mut amplitude = 0.5;
    let mut wavenumber = 1i32;
    let (mut center, mut semi_axes) = ([0.5, 0.5], [0.3, 0.18]);
    r.parsed("value", &mut value);
    r.parsed("amplitude", &mut amplitude);
    r.parsed("wavenumber", &mut wavenumber);
    r.pair("center", &mut center);
    r.pair("semi_axes", &mut semi_axes);
    let kind = r.last("kind").map(|(l, v)| (l, v.to_string()));
    c.initial = match kind.as_ref().map(|(l, v)| (*l, v.as_str())) {
        None | Some((_, "tanh-ellipse")) => InitialCondition::TanhEllipse { center, semi_axes },
        Some((_, "constant")) => InitialCondition::Constant(value),
        Some((_, "cosine")) => InitialCondition::Cosine {
            amplitude,
            wavenumber,
        },
        Some((line, other)) => {
            r.errs.push(format!(
                "line {line}: `kind` must be constant, cosine or tanh-ellipse, got `{other}`"
            ));
            c.initial
        }
    };

    r.parsed("master_seed", &mut c.master_seed);
    let mode_rows = r.rows("mode");
    let selector = r.last("modes").map(|(l, v)| (l, v.to_string()));
    c.modes = match selector.as_ref().map(|(l, v)| (*l, v.as_str())) {
        None if mode_rows.is_empty() => ModeTable::Default,
        None | Some((_, "explicit")) => {
            let mut modes = Vec::new();
            for (line, v) in &mode_rows {
                match parse_mode_row(v, c.dim) {
                    Some(m) => modes.push(m),
                    None => r.errs.push(format!(
                        "line {line}: `mode` expects {} for dim {}, got `{v}`",
                        if c.dim == 2 { "`k l lambda`" } else { "`k lambda`" },
                        c.dim
                    )),
                }
            }
            ModeTable::Explicit(modes)
        }
        Some((line, sel @ ("default" | "none"))) => {
            if !mode_rows.is_empty() {
                r.errs
                    .push(format!("line {line}: `modes = {sel}` conflicts with `mode` rows"));
            }
            if sel == "none" {
                ModeTable::None
            } else {
                ModeTable::Default
            }
        }
        Some((line, other)) => {
            r.errs.push(format!(
                "line {line}: `modes` must be default, none or explicit, got `{other}`"
            ));
            ModeTable::Default
        }
    };

    let e = &mut c.experiment;
    r.parsed("ref_level", &mut e.ref_level);
    e.tau_min = c.final_time / (1u64 << 14) as f64;
    r.parsed("tau_min", &mut e.tau_min);
    r.parsed("samples", &mut e.samples);
    r.parsed("track_level", &mut e.track_level);
    if let Some((line, v)) = r.last("compare_tau") {
        match parse_auto::<f64>(v) {
            Some(x) => e.compare_tau = x,
            None => r
                .errs
                .push(format!("line {line}: `compare_tau` must be `auto` or a number, got `{v}`")),
        }
    }
    let ladder_rows = r.rows("ladder");
    e.ladder = if ladder_rows.is_empty() {
        default_ladder(c.final_time)
    } else {
        let mut out = Vec::new();
        for (line, v) in &ladder_rows {
            let parts: Vec<&str> = v.split_whitespace().collect();
            match parts.as_slice() {
                [l, t] => match (l.parse(), t.parse()) {
                    (Ok(level), Ok(tau)) => out.push(Rung { level, tau }),
                    _ => r
                        .errs
                        .push(format!("line {line}: `ladder` expects `level tau`, got `{v}`")),
                },
                _ => r
                    .errs
                    .push(format!("line {line}: `ladder` expects `level tau`, got `{v}`")),
            }
        }
        out
    };
    let track_rows = r.rows("track_tau");
    e.track_taus = if track_rows.is_empty() {
        default_track_taus(c.final_time)
    } else {
        let mut out = Vec::new();
        for (line, v) in &track_rows {
            match v.parse() {
                Ok(t) => out.push(t),
                Err(_) => r
                    .errs
                    .push(format!("line {line}: `track_tau` has invalid value `{v}`")),
            }
        }
        out
    };

    r.parsed("rel_tolerance", &mut c.solver.rel_tolerance);
    if let Some((line, v)) = r.last("max_iterations") {
        match parse_auto::<usize>(v) {
            Some(x) => c.solver.max_iterations = x,
            None => r.errs.push(format!(
                "line {line}: `max_iterations` must be `auto` or a count, got `{v}`"
            )),
        }
    }
    if let Some((line, v)) = r.last("preconditioner") {
        match v {
            "jacobi" => c.solver.preconditioner = Preconditioner::Jacobi,
            "none" => c.solver.preconditioner = Preconditioner::None,
            _ => r.errs.push(format!(
                "line {line}: `preconditioner` must be jacobi or none, got `{v}`"
            )),
        }
    }

    if let Some((_, v)) = r.last("dir") {
        c.output_dir = Some(PathBuf::from(v));
    }
    r.parsed("dump_stride", &mut c.dump_stride);
    r.parsed("dump_noise", &mut c.dump_noise);

    errs.extend(c.violations());
    if errs.is_empty() {
        Ok(c)
    } else {
        Err(Error::Config(errs))
    }
}

/// Reads and parses a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_str(&text)
}

impl RunConfig {
    /// Every constraint the configuration breaks, with key names.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = self.potential.validate();
        if !(self.dim == 1 || self.dim == 2) {
            errs.push(format!("dim must be 1 or 2, got {}", self.dim));
        }
        if self.level == 0 {
            errs.push("level must be at least 1".into());
        }
        if !(self.final_time > 0.0 && self.final_time.is_finite()) {
            errs.push(format!("final_time must be positive, got {}", self.final_time));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            errs.push(format!("tau must be positive, got {}", self.tau));
        } else if integer_ratio(self.final_time, self.tau).is_none() {
            errs.push(format!(
                "final_time {} is not an integer multiple of tau {}",
                self.final_time, self.tau
            ));
        }
        if let InitialCondition::TanhEllipse { semi_axes, .. } = self.initial {
            if !(semi_axes[0] > 0.0 && semi_axes[1] > 0.0) {
                errs.push("semi_axes must be positive".into());
            }
        }
        if let ModeTable::Explicit(m) = &self.modes {
            if let Err(e) = NoiseModel::new(self.dim, m.clone(), self.master_seed) {
                errs.push(format!("mode table: {e}"));
            }
        }
        let e = &self.experiment;
        if !(e.tau_min > 0.0 && e.tau_min.is_finite()) {
            errs.push(format!("tau_min must be positive, got {}", e.tau_min));
        }
        for r in &e.ladder {
            if !(r.tau > 0.0 && r.tau.is_finite()) {
                errs.push(format!("ladder tau must be positive, got {}", r.tau));
            }
        }
        if matches!(e.compare_tau, Some(t) if !(t > 0.0 && t.is_finite())) {
            errs.push("compare_tau must be positive".into());
        }
        if e.samples == 0 {
            errs.push("samples must be positive".into());
        }
        for &t in &e.track_taus {
            if !(t > 0.0 && t.is_finite()) {
                errs.push(format!("track_tau must be positive, got {t}"));
            }
        }
        if let Err(msg) = self.solver.validate() {
            errs.push(msg);
        }
        errs
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        NoiseModel::new(self.dim, self.modes.modes(self.dim), self.master_seed)
    }

    pub fn experiment_plan(&self) -> ExperimentPlan {
        ExperimentPlan {
            dim: self.dim,
            ladder: self.experiment.ladder.clone(),
            ref_level: self.experiment.ref_level,
            tau_min: self.experiment.tau_min,
            samples: self.experiment.samples,
            master_seed: self.master_seed,
            final_time: self.final_time,
            compare_tau: self.experiment.compare_tau,
        }
    }

    pub fn tracking_plan(&self) -> TrackingPlan {
        TrackingPlan {
            dim: self.dim,
            level: self.experiment.track_level,
            taus: self.experiment.track_taus.clone(),
            final_time: self.final_time,
            samples: self.experiment.samples,
            master_seed: self.master_seed,
        }
    }

    pub fn scheme_stack(&self) -> Result<SchemeStack> {
        Ok(SchemeStack {
            params: self.potential,
            noise: self.noise_model()?,
            initial: self.initial,
            solver: self.solver,
        })
    }

    pub fn n_steps(&self) -> usize {
        integer_ratio(self.final_time, self.tau).unwrap_or(0)
    }

    /// The effective configuration as text; parsing it gives back `self`.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        let p = &self.potential;
        let _ = writeln!(s, "[potential]");
        let _ = writeln!(s, "gamma = {:?}", p.gamma);
        let _ = writeln!(s, "epsilon = {:?}", p.epsilon);
        let _ = writeln!(s, "rho = {}", p.rho.name());

        let _ = writeln!(s, "\n[mesh]\ndim = {}\nlevel = {}", self.dim, self.level);
        let _ = writeln!(
            s,
            "\n[time]\nfinal_time = {:?}\ntau = {:?}",
            self.final_time, self.tau
        );

        let _ = writeln!(s, "\n[initial]");
        match self.initial {
            InitialCondition::Constant(v) => {
                let _ = writeln!(s, "kind = constant\nvalue = {v:?}");
            }
            InitialCondition::Cosine {
                amplitude,
                wavenumber,
            } => {
                let _ = writeln!(
                    s,
                    "kind = cosine\namplitude = {amplitude:?}\nwavenumber = {wavenumber}"
                );
            }
            InitialCondition::TanhEllipse { center, semi_axes } => {
                let _ = writeln!(
                    s,
                    "kind = tanh-ellipse\ncenter = {:?} {:?}\nsemi_axes = {:?} {:?}",
                    center[0], center[1], semi_axes[0], semi_axes[1]
                );
            }
        }

        let _ = writeln!(s, "\n[noise]\nmaster_seed = {}", self.master_seed);
        match &self.modes {
            ModeTable::Default => {
                let _ = writeln!(s, "modes = default");
            }
            ModeTable::None => {
                let _ = writeln!(s, "modes = none");
            }
            ModeTable::Explicit(rows) => {
                let _ = writeln!(s, "modes = explicit");
                for m in rows {
                    let _ = match m.index {
                        ModeIndex::D1(k) => writeln!(s, "mode = {k} {:?}", m.amplitude),
                        ModeIndex::D2(k, l) => writeln!(s, "mode = {k} {l} {:?}", m.amplitude),
                    };
                }
            }
        }

        let e = &self.experiment;
        let _ = writeln!(s, "\n[experiment]");
        let _ = writeln!(s, "ref_level = {}", e.ref_level);
        let _ = writeln!(s, "tau_min = {:?}", e.tau_min);
        for r in &e.ladder {
            let _ = writeln!(s, "ladder = {} {:?}", r.level, r.tau);
        }
        let _ = writeln!(s, "samples = {}", e.samples);
        match e.compare_tau {
            Some(t) => {
                let _ = writeln!(s, "compare_tau = {t:?}");
            }
            None => {
                let _ = writeln!(s, "compare_tau = auto");
            }
        }
        let _ = writeln!(s, "track_level = {}", e.track_level);
        for t in &e.track_taus {
            let _ = writeln!(s, "track_tau = {t:?}");
        }

        let _ = writeln!(s, "\n[solver]");
        let _ = writeln!(s, "rel_tolerance = {:?}", self.solver.rel_tolerance);
        match self.solver.max_iterations {
            Some(n) => {
                let _ = writeln!(s, "max_iterations = {n}");
            }
            None => {
                let _ = writeln!(s, "max_iterations = auto");
            }
        }
        let _ = writeln!(
            s,
            "preconditioner = {}",
            match self.solver.preconditioner {
                Preconditioner::Jacobi => "jacobi",
                Preconditioner::None => "none",
            }
        );

        let _ = writeln!(s, "\n[output]");
        if let Some(d) = &self.output_dir {
            let _ = writeln!(s, "dir = {}", d.display());
        }
        let _ = writeln!(s, "dump_stride = {}", self.dump_stride);
        let _ = writeln!(s, "dump_noise = {}", self.dump_noise);
        s
    }
}
