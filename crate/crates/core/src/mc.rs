//! Monte Carlo strong-error studies.
//!
//! Every sample draws one set of Brownian increments at the finest step
//! `τ_min`; the reference run and every ladder run consume exact coarsenings
//! of it. Coarse fields are prolonged to the reference mesh and compared at
//! the comparison times `t = k τ̃`:
//!
//! ```text
//! E_L2 = ( max_k  mean_S ‖φ_h(t_k) − φ_*(t_k)‖²_L2 )^½
//! E_H1 = ( τ̃ Σ_k mean_S ‖φ_h(t_k) − φ_*(t_k)‖²_H1 )^½
//! ```
//!
//! with the lumped L² norm and `‖e‖²_H1 = ‖e‖²_L2 + eᵀKe` on the reference
//! mesh. Sample means are accumulated in ascending sample id, so reports do
//! not depend on the worker count.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{lumped_dot, FemOperators};
use crate::linalg::SolverOptions;
use crate::mesh::{prolong, TorusMesh};
use crate::noise::{NoiseBasis, NoiseModel, NoisePath};
use crate::potential::PotentialParams;
use crate::sav::{run_path, InitialCondition, PathConfig, SavState, Trajectory};

/// One `(level, τ)` resolution of a ladder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rung {
    pub level: u32,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub dim: usize,
    pub ladder: Vec<Rung>,
    pub ref_level: u32,
    pub tau_min: f64,
    pub samples: u64,
    pub master_seed: u64,
    pub final_time: f64,
    /// Comparison step; `None` means the coarsest ladder step.
    pub compare_tau: Option<f64>,
}

impl ExperimentPlan {
    /// Small 1-D study: reference level 9, `τ_min = T/2^14`, ladder levels
    /// 5, 6, 7 with `τ = T·2^{4-2m}` (so `τ ∝ h²`), 100 samples, `T = 0.25`.
    pub fn desk_default() -> Self {
        let final_time = 0.25;
        Self {
            dim: 1,
            ladder: [5u32, 6, 7]
                .iter()
                .map(|&m| Rung {
                    level: m,
                    tau: final_time / (1u64 << (2 * m - 4)) as f64,
                })
                .collect(),
            ref_level: 9,
            tau_min: final_time / (1u64 << 14) as f64,
            samples: 100,
            master_seed: 20240611,
            final_time,
            compare_tau: None,
        }
    }
}

/// Integer `a / b` when `a` is an integer multiple of `b` (to 1e-9 relative).
pub fn integer_ratio(a: f64, b: f64) -> Option<usize> {
    if !(a > 0.0 && b > 0.0) {
        return None;
    }
    let q = a / b;
    let n = q.round();
    if n >= 1.0 && (q - n).abs() <= 1e-9 * n {
        Some(n as usize)
    } else {
        None
    }
}

/// Plan with all step ratios resolved to integers.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPlan {
    pub plan: ExperimentPlan,
    pub compare_tau: f64,
    pub fine_steps: usize,
    /// Fine steps per comparison interval.
    pub compare_stride: usize,
    /// Per rung: fine steps per coarse step.
    pub rung_factors: Vec<usize>,
}

impl ResolvedPlan {
    pub fn compare_points(&self) -> usize {
        self.fine_steps / self.compare_stride
    }
}

pub fn validate_plan(plan: &ExperimentPlan) -> Result<ResolvedPlan> {
    let mut errs = Vec::new();
    if !(plan.dim == 1 || plan.dim == 2) {
        errs.push(format!("dim must be 1 or 2, got {}", plan.dim));
    }
    if plan.ladder.is_empty() {
        errs.push("ladder is empty".into());
    }
    if plan.samples == 0 {
        errs.push("sample count must be positive".into());
    }
    let fine_steps = integer_ratio(plan.final_time, plan.tau_min);
    if fine_steps.is_none() {
        errs.push(format!(
            "final time {} is not an integer multiple of tau_min {}",
            plan.final_time, plan.tau_min
        ));
    }
    let mut rung_factors = Vec::new();
    for r in &plan.ladder {
        if r.level > plan.ref_level || r.level == 0 {
            errs.push(format!(
                "ladder level {} must lie in 1..={}",
                r.level, plan.ref_level
            ));
        }
        match integer_ratio(r.tau, plan.tau_min) {
            Some(f) => rung_factors.push(f),
            None => errs.push(format!(
                "ladder tau {} is not an integer multiple of tau_min {}",
                r.tau, plan.tau_min
            )),
        }
        if integer_ratio(plan.final_time, r.tau).is_none() {
            errs.push(format!(
                "final time {} is not an integer multiple of ladder tau {}",
                plan.final_time, r.tau
            ));
        }
    }
    let coarsest = plan.ladder.iter().map(|r| r.tau).fold(0.0, f64::max);
    let compare_tau = plan.compare_tau.unwrap_or(coarsest);
    let compare_stride = integer_ratio(compare_tau, plan.tau_min);
    for r in &plan.ladder {
        if integer_ratio(compare_tau, r.tau).is_none() {
            errs.push(format!(
                "comparison step {compare_tau} is not a multiple of ladder tau {}",
                r.tau
            ));
        }
    }
    if integer_ratio(plan.final_time, compare_tau).is_none() {
        errs.push(format!(
            "final time {} is not an integer multiple of the comparison step {compare_tau}",
            plan.final_time
        ));
    }
    if !errs.is_empty() {
        return Err(Error::Plan(errs.join("; ")));
    }
    Ok(ResolvedPlan {
        plan: plan.clone(),
        compare_tau,
        fine_steps: fine_steps.unwrap(),
        compare_stride: compare_stride.unwrap(),
        rung_factors,
    })
}

/// Everything besides the plan needed to simulate a path.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeStack {
    pub params: PotentialParams,
    pub noise: NoiseModel,
    pub initial: InitialCondition,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub level: u32,
    pub h: f64,
    pub tau: f64,
    pub e_l2: f64,
    pub e_h1: f64,
    pub e_tot: f64,
    pub eoc_l2: Option<f64>,
    pub eoc_h1: Option<f64>,
    pub eoc_tot: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    /// Sorted by ascending τ (finest first).
    pub rows: Vec<ErrorRow>,
    pub samples: u64,
    pub compare_tau: f64,
    pub ref_level: u32,
    pub tau_min: f64,
}

impl ErrorReport {
    /// Writes `eoc.csv`: `level,h,tau,E_L2,EOC_L2,E_H1,EOC_H1,E_tot,EOC_tot,samples`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "level,h,tau,E_L2,EOC_L2,E_H1,EOC_H1,E_tot,EOC_tot,samples")?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{},{:e},{},{:e},{},{}",
                r.level,
                r.h,
                r.tau,
                r.e_l2,
                opt(r.eoc_l2),
                r.e_h1,
                opt(r.eoc_h1),
                r.e_tot,
                opt(r.eoc_tot),
                self.samples
            )?;
        }
        Ok(())
    }
}

/// `log₂(e_{i+1}/e_i)` for errors listed finest first, consecutive rows
/// differing by one doubling of τ.
pub fn compute_eoc(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[1] / w[0]).log2()).collect()
}

/// Order with respect to τ for arbitrary step ratios:
/// `log(e_{i+1}/e_i) / log(τ_{i+1}/τ_i)`; equals [`compute_eoc`] when τ doubles.
pub fn compute_eoc_scaled(errors: &[f64], taus: &[f64]) -> Vec<f64> {
    assert_eq!(errors.len(), taus.len());
    errors
        .windows(2)
        .zip(taus.windows(2))
        .map(|(e, t)| (e[1] / e[0]).log2() / (t[1] / t[0]).log2())
        .collect()
}

/// Squared error norms of one sample at the comparison times `k = 1..=K`.
#[derive(Debug, Clone, PartialEq)]
struct SampleErrors {
    l2_sq: Vec<f64>,
    h1_sq: Vec<f64>,
}

struct Level {
    ops: FemOperators,
    basis: NoiseBasis,
    initial: SavState,
}

impl Level {
    fn new(dim: usize, level: u32, stack: &SchemeStack) -> Result<Self> {
        let ops = FemOperators::new(TorusMesh::new(dim, level)?);
        let basis = NoiseBasis::new(&stack.noise, &ops.mesh)?;
        let phi0 = stack.initial.interpolate(&ops.mesh, stack.params.epsilon);
        let initial = SavState::initial(phi0, &ops.mass, &stack.params);
        Ok(Self {
            ops,
            basis,
            initial,
        })
    }

    fn run(&self, stack: &SchemeStack, path: &NoisePath, n_steps: usize, record_every: usize) -> Result<Trajectory> {
        let cfg = PathConfig {
            tau: path.tau(),
            n_steps,
            record_every,
            solver: stack.solver,
        };
        run_path(&cfg, &self.ops, &stack.params, path, &self.basis, self.initial.clone())
    }
}

fn check_common_path(sample: u64, reference: &[f64], other: &[f64]) -> Result<()> {
    for (mode, (a, b)) in reference.iter().zip(other).enumerate() {
        if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
            return Err(Error::CommonPath {
                sample,
                detail: format!("mode {mode}: reference total {a:e}, coarse total {b:e}"),
            });
        }
    }
    if reference.len() != other.len() {
        return Err(Error::CommonPath {
            sample,
            detail: "mode counts differ".into(),
        });
    }
    Ok(())
}

fn ensemble_sample(
    sample: u64,
    resolved: &ResolvedPlan,
    stack: &SchemeStack,
    reference: &Level,
    rungs: &[Level],
) -> Result<Vec<SampleErrors>> {
    let plan = &resolved.plan;
    let path = stack
        .noise
        .generate_increments(sample, resolved.fine_steps, plan.tau_min);
    let ref_traj = reference.run(stack, &path, resolved.fine_steps, resolved.compare_stride)?;
    let k = resolved.compare_points();
    let ref_mesh = &reference.ops.mesh;

    let mut out = Vec::with_capacity(rungs.len());
    for (level, &factor) in rungs.iter().zip(&resolved.rung_factors) {
        let coarse = path.coarsen(factor)?;
        let n_steps = resolved.fine_steps / factor;
        let stride = resolved.compare_stride / factor;
        let traj = level.run(stack, &coarse, n_steps, stride)?;
        check_common_path(sample, &ref_traj.consumed_totals, &traj.consumed_totals)?;

        let mut errs = SampleErrors {
            l2_sq: Vec::with_capacity(k),
            h1_sq: Vec::with_capacity(k),
        };
        for idx in 1..=k {
            let fine = prolong(&traj.snapshots[idx].phi, &level.ops.mesh, ref_mesh)?;
            let e = fine.sub(&ref_traj.snapshots[idx].phi)?;
            let l2 = lumped_dot(e.values(), e.values(), reference.ops.mass.diag());
            let semi = reference.ops.stiff.matrix().bilinear(e.values(), e.values());
            errs.l2_sq.push(l2);
            errs.h1_sq.push(l2 + semi);
        }
        out.push(errs);
    }
    Ok(out)
}

/// Runs every sample of the plan and reduces the strong error norms.
pub fn run_ensemble(plan: &ExperimentPlan, stack: &SchemeStack) -> Result<ErrorReport> {
    let resolved = validate_plan(plan)?;
    if stack.noise.dim() != plan.dim {
        return Err(Error::Plan("noise model dimension differs from plan".into()));
    }
    let reference = Level::new(plan.dim, plan.ref_level, stack)?;
    let rungs = plan
        .ladder
        .iter()
        .map(|r| Level::new(plan.dim, r.level, stack))
        .collect::<Result<Vec<_>>>()?;

    let per_sample: Vec<Result<Vec<SampleErrors>>> = (0..plan.samples)
        .into_par_iter()
        .map(|s| ensemble_sample(s, &resolved, stack, &reference, &rungs).map_err(|e| e.at_sample(s)))
        .collect();

    let k = resolved.compare_points();
    let mut sums = vec![(vec![0.0; k], vec![0.0; k]); rungs.len()];
    for result in per_sample {
        let errs = result?;
        for (acc, e) in sums.iter_mut().zip(&errs) {
            for i in 0..k {
                acc.0[i] += e.l2_sq[i];
                acc.1[i] += e.h1_sq[i];
            }
        }
    }
    let s = plan.samples as f64;
    let mut rows: Vec<ErrorRow> = plan
        .ladder
        .iter()
        .zip(&sums)
        .map(|(rung, (l2, h1))| {
            let max_l2 = l2.iter().map(|v| v / s).fold(0.0, f64::max);
            let sum_h1: f64 = h1.iter().map(|v| v / s).sum();
            let e_l2 = max_l2.sqrt();
            let e_h1 = (resolved.compare_tau * sum_h1).sqrt();
            ErrorRow {
                level: rung.level,
                h: 1.0 / (1u64 << rung.level) as f64,
                tau: rung.tau,
                e_l2,
                e_h1,
                e_tot: (e_l2 * e_l2 + e_h1 * e_h1).sqrt(),
                eoc_l2: None,
                eoc_h1: None,
                eoc_tot: None,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.tau.total_cmp(&b.tau).then(b.level.cmp(&a.level)));

    let taus: Vec<f64> = rows.iter().map(|r| r.tau).collect();
    let col = |f: fn(&ErrorRow) -> f64| -> Vec<f64> {
        compute_eoc_scaled(&rows.iter().map(f).collect::<Vec<_>>(), &taus)
    };
    let (l2, h1, tot) = (col(|r| r.e_l2), col(|r| r.e_h1), col(|r| r.e_tot));
    for i in 1..rows.len() {
        let finite = |v: f64| v.is_finite().then_some(v);
        rows[i].eoc_l2 = finite(l2[i - 1]);
        rows[i].eoc_h1 = finite(h1[i - 1]);
        rows[i].eoc_tot = finite(tot[i - 1]);
    }
    Ok(ErrorReport {
        rows,
        samples: plan.samples,
        compare_tau: resolved.compare_tau,
        ref_level: plan.ref_level,
        tau_min: plan.tau_min,
    })
}

/// Auxiliary-variable tracking study at fixed mesh level.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingPlan {
    pub dim: usize,
    pub level: u32,
    /// Step sizes; each must divide the final time and be a multiple of the smallest.
    pub taus: Vec<f64>,
    pub final_time: f64,
    pub samples: u64,
    pub master_seed: u64,
}

impl TrackingPlan {
    /// 1-D, `h = 2^-7`, `T = 0.25`, `τ = T/2^8 … T/2^11`, 100 samples.
    pub fn desk_default() -> Self {
        let final_time = 0.25;
        Self {
            dim: 1,
            level: 7,
            taus: (8..=11).map(|k| final_time / (1u64 << k) as f64).collect(),
            final_time,
            samples: 100,
            master_seed: 20240611,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingRow {
    pub tau: f64,
    /// Sample mean of `max_n |r^n − √E_h(φ^n)|`.
    pub mean_max_error: f64,
    pub observed_order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingReport {
    /// Sorted by ascending τ.
    pub rows: Vec<TrackingRow>,
    pub samples: u64,
}

impl TrackingReport {
    /// Writes `rtrack.csv`: `tau,mean_max_tracking_error,observed_order`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "tau,mean_max_tracking_error,observed_order")?;
        for r in &self.rows {
            let order = r.observed_order.map(|x| format!("{x:e}")).unwrap_or_default();
            writeln!(w, "{:e},{:e},{}", r.tau, r.mean_max_error, order)?;
        }
        Ok(())
    }
}

pub fn r_tracking_study(plan: &TrackingPlan, stack: &SchemeStack) -> Result<TrackingReport> {
    if plan.taus.is_empty() || plan.samples == 0 {
        return Err(Error::Plan("tracking study needs step sizes and samples".into()));
    }
    let mut taus = plan.taus.clone();
    taus.sort_by(f64::total_cmp);
    let tau_min = taus[0];
    let fine_steps = integer_ratio(plan.final_time, tau_min)
        .ok_or_else(|| Error::Plan("final time is not a multiple of the smallest tau".into()))?;
    let mut factors = Vec::new();
    for &t in &taus {
        let f = integer_ratio(t, tau_min)
            .filter(|f| fine_steps % f == 0)
            .ok_or_else(|| Error::Plan(format!("tau {t} is not compatible with the smallest tau and T")))?;
        factors.push(f);
    }
    let level = Level::new(plan.dim, plan.level, stack)?;

    let per_sample: Vec<Result<Vec<f64>>> = (0..plan.samples)
        .into_par_iter()
        .map(|s| {
            let path = stack.noise.generate_increments(s, fine_steps, tau_min);
            factors
                .iter()
                .map(|&f| {
                    let coarse = path.coarsen(f)?;
                    let n = fine_steps / f;
                    Ok(level.run(stack, &coarse, n, n)?.max_tracking_error())
                })
                .collect::<Result<Vec<f64>>>()
                .map_err(|e| e.at_sample(s))
        })
        .collect();

    let mut sums = vec![0.0; taus.len()];
    for r in per_sample {
        for (acc, v) in sums.iter_mut().zip(r?) {
            *acc += v;
        }
    }
    let means: Vec<f64> = sums.iter().map(|v| v / plan.samples as f64).collect();
    let orders = compute_eoc_scaled(&means, &taus);
    let rows = taus
        .iter()
        .zip(&means)
        .enumerate()
        .map(|(i, (&tau, &mean))| TrackingRow {
            tau,
            mean_max_error: mean,
            observed_order: if i == 0 { None } else { Some(orders[i - 1]) },
        })
        .collect();
    Ok(TrackingReport {
        rows,
        samples: plan.samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eoc_examples() {
        let e = compute_eoc(&[0.08, 0.17]);
        assert!((e[0] - 1.0874628412503395).abs() < 1e-12);
        assert_eq!(compute_eoc(&[0.3, 0.3]), vec![0.0]);
        assert_eq!(compute_eoc(&[0.2, 0.4, 0.8]), vec![1.0, 1.0]);
        let s = compute_eoc_scaled(&[0.1, 0.2], &[1.0, 4.0]);
        assert!((s[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn desk_plan_is_consistent() {
        let plan = ExperimentPlan::desk_default();
        let r = validate_plan(&plan).unwrap();
        assert_eq!(r.fine_steps, 1 << 14);
        assert_eq!(r.rung_factors, vec![256, 64, 16]);
        assert_eq!(r.compare_stride, 256);
        assert_eq!(r.compare_points(), 64);
    }

    #[test]
    fn plan_violations_are_listed() {
        let mut plan = ExperimentPlan::desk_default();
        plan.ladder.push(Rung { level: 10, tau: 3e-5 });
        let msg = validate_plan(&plan).unwrap_err().to_string();
        assert!(msg.contains("ladder level 10"));
        assert!(msg.contains("not an integer multiple of tau_min"));
    }

    #[test]
    fn integer_ratio_tolerates_roundoff() {
        assert_eq!(integer_ratio(1.04, 1e-5), Some(104000));
        assert_eq!(integer_ratio(3.2e-3, 4e-5), Some(80));
        assert_eq!(integer_ratio(1.0, 0.3), None);
    }

    #[test]
    fn common_path_mismatch_detected() {
        assert!(check_common_path(3, &[1.0, 2.0], &[1.0, 2.0 + 1e-15]).is_ok());
        assert!(matches!(
            check_common_path(3, &[1.0, 2.0], &[1.0, 2.1]),
            Err(Error::CommonPath { sample: 3, .. })
        ));
    }
}
