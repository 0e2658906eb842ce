//! Augmented SAV time stepping.
//!
//! Given `(φ^{n-1}, r^{n-1})` and the nodal noise increment
//! `n = I_h{ρ(φ^{n-1}) ΔW}`, one step solves the coupled linear system
//!
//! ```text
//! A φ^n + τ r^n c = M_L (φ^{n-1} + n),        A = M_L + τ ε K
//! r^n - (c/2)·φ^n = r^{n-1} - (c/2)·φ^{n-1}
//! ```
//!
//! with `c_j = m_j (F'_j / √E + ξ_j)`,
//! `ξ_j = -a F'_j / (4 E^{3/2}) + F''_j n_j / (2 √E)`, `a = Σ_j m_j F'_j n_j`,
//! `E = E_h(φ^{n-1})`, and `F', F''` evaluated at `φ^{n-1}` and scaled by ε⁻¹.
//! The second row is the auxiliary-variable update; its coefficient vector
//! is exactly half of the one in the first row, which is what makes the
//! modified energy `(ε/2)|∇φ|² + r²` dissipative when the noise vanishes.
//!
//! [`SavStepper`] eliminates `r^n` with two SPD solves sharing `A`;
//! [`dense_oracle_step`] solves the full `(N+1)×(N+1)` system directly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fem::{FemOperators, FieldVector, LumpedMass, StiffnessMatrix};
use crate::linalg::{cg_solve, dot, CsrMatrix, SolverOptions};
use crate::noise::{NoiseBasis, NoisePath};
use crate::potential::{energy_eh, energy_eh_slice, energy_total, PotentialParams};

/// Denominator threshold of the scalar elimination.
pub const SINGULAR_STEP_THRESHOLD: f64 = 1e-12;

/// Largest node count accepted by [`dense_oracle_step`].
pub const DENSE_ORACLE_MAX_NODES: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct SavState {
    pub phi: FieldVector,
    pub r: f64,
    pub step: usize,
    pub time: f64,
}

impl SavState {
    /// Step-0 state with `r^0 = √E_h(φ^0)`.
    pub fn initial(phi: FieldVector, mass: &LumpedMass, params: &PotentialParams) -> Self {
        let r = energy_eh(&phi, mass, params).sqrt();
        Self {
            phi,
            r,
            step: 0,
            time: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepCoefficients {
    /// `E_h(φ^{n-1})`
    pub energy: f64,
    /// `∫ I_h{F'(φ^{n-1}) Φ_h ΔW} dx`
    pub a: f64,
    /// Augmentation field; `Ξ_h^n = r^n ξ`.
    pub xi: Vec<f64>,
    /// Coefficient vector of `r^n` in the φ equation.
    pub c: Vec<f64>,
    pub n_vec: FieldVector,
    f1: Vec<f64>,
    f2: Vec<f64>,
    mass: Vec<f64>,
}

impl StepCoefficients {
    /// Coefficient vector `d` of the auxiliary-variable update
    /// `r^n = r^{n-1} + d·(φ^n - φ^{n-1})`, assembled term by term from that
    /// update rule (independently of `c`).
    pub fn r_update_vector(&self) -> Vec<f64> {
        let sqrt_e = self.energy.sqrt();
        let e32 = self.energy * sqrt_e;
        (0..self.c.len())
            .map(|j| {
                let m = self.mass[j];
                let n = self.n_vec.values()[j];
                m * self.f1[j] / (2.0 * sqrt_e) - self.a / (8.0 * e32) * m * self.f1[j]
                    + m * self.f2[j] * n / (4.0 * sqrt_e)
            })
            .collect()
    }
}

pub fn compute_coefficients(
    phi_prev: &FieldVector,
    n_vec: &FieldVector,
    mass: &LumpedMass,
    params: &PotentialParams,
) -> Result<StepCoefficients> {
    phi_prev.same_shape(n_vec)?;
    if phi_prev.len() != mass.len() {
        return Err(Error::Shape("coefficients: field and mass differ in length".into()));
    }
    if !phi_prev.is_finite() || !n_vec.is_finite() {
        return Err(Error::NonFinite("phi or noise increment".into()));
    }
    let inv_eps = 1.0 / params.epsilon;
    let m = mass.diag();
    let phi = phi_prev.values();
    let noise = n_vec.values();
    let energy = energy_eh_slice(phi, m, params);
    if !(energy > 0.0 && energy.is_finite()) {
        return Err(Error::NonFinite(format!("E_h = {energy}")));
    }
    let sqrt_e = energy.sqrt();
    let e32 = energy * sqrt_e;

    let f1: Vec<f64> = phi.iter().map(|&s| inv_eps * params.f1(s)).collect();
    let f2: Vec<f64> = phi.iter().map(|&s| inv_eps * params.f2(s)).collect();
    let mut a = 0.0;
    for j in 0..m.len() {
        a += m[j] * f1[j] * noise[j];
    }
    let xi: Vec<f64> = (0..m.len())
        .map(|j| -a / (4.0 * e32) * f1[j] + f2[j] * noise[j] / (2.0 * sqrt_e))
        .collect();
    let c: Vec<f64> = (0..m.len())
        .map(|j| m[j] * (f1[j] / sqrt_e + xi[j]))
        .collect();
    Ok(StepCoefficients {
        energy,
        a,
        xi,
        c,
        n_vec: n_vec.clone(),
        f1,
        f2,
        mass: m.to_vec(),
    })
}

/// Per-step solver statistics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInfo {
    pub cg_iterations: usize,
    pub denominator: f64,
}

/// Time stepper for fixed `(mesh, τ, ε)`: owns `A = M_L + τ ε K` and the
/// warm-start vectors of both solves.
#[derive(Debug, Clone)]
pub struct SavStepper {
    tau: f64,
    system: CsrMatrix,
    mass: Vec<f64>,
    solver: SolverOptions,
    y1_guess: Vec<f64>,
    rhs: Vec<f64>,
}

impl SavStepper {
    pub fn new(
        mass: &LumpedMass,
        stiff: &StiffnessMatrix,
        tau: f64,
        params: &PotentialParams,
        solver: SolverOptions,
    ) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Plan(format!("time step must be positive, got {tau}")));
        }
        let system = mass
            .as_matrix()
            .linear_combination(1.0, stiff.matrix(), tau * params.epsilon);
        let n = mass.len();
        Ok(Self {
            tau,
            system,
            mass: mass.diag().to_vec(),
            solver,
            y1_guess: vec![0.0; n],
            rhs: vec![0.0; n],
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn system(&self) -> &CsrMatrix {
        &self.system
    }

    pub fn step(&mut self, state: &SavState, coeffs: &StepCoefficients) -> Result<(SavState, StepInfo)> {
        let n = self.mass.len();
        state.phi.same_shape(&coeffs.n_vec)?;
        if state.phi.len() != n {
            return Err(Error::Shape("stepper and state differ in size".into()));
        }
        if !state.r.is_finite() {
            return Err(Error::NonFinite("r".into()));
        }
        let phi_prev = state.phi.values();
        let noise = coeffs.n_vec.values();
        for j in 0..n {
            self.rhs[j] = self.mass[j] * (phi_prev[j] + noise[j]);
        }
        let mut y0 = phi_prev.to_vec();
        let it0 = cg_solve(&self.system, &self.rhs, &mut y0, &self.solver)?;
        let mut y1 = std::mem::take(&mut self.y1_guess);
        let it1 = cg_solve(&self.system, &coeffs.c, &mut y1, &self.solver);
        let it1 = match it1 {
            Ok(it) => it,
            Err(e) => {
                self.y1_guess = vec![0.0; n];
                return Err(e);
            }
        };

        let mut half_c_dphi = 0.0;
        let mut half_c_y1 = 0.0;
        for j in 0..n {
            half_c_dphi += 0.5 * coeffs.c[j] * (y0[j] - phi_prev[j]);
            half_c_y1 += 0.5 * coeffs.c[j] * y1[j];
        }
        let denominator = 1.0 + self.tau * half_c_y1;
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(denominator.abs() >= SINGULAR_STEP_THRESHOLD) {
            self.y1_guess = y1;
            return Err(Error::SingularStep { denominator });
        }
        let r = (state.r + half_c_dphi) / denominator;
        let mut phi = y0;
        for j in 0..n {
            phi[j] -= self.tau * r * y1[j];
        }
        self.y1_guess = y1;

        let mut next_phi = state.phi.clone();
        next_phi.values_mut().copy_from_slice(&phi);
        Ok((
            SavState {
                phi: next_phi,
                r,
                step: state.step + 1,
                time: (state.step + 1) as f64 * self.tau,
            },
            StepInfo {
                cg_iterations: it0 + it1,
                denominator,
            },
        ))
    }
}

/// One step through the two-solve reduction (builds `A` on every call; use
/// [`SavStepper`] for paths).
pub fn sav_step(
    state: &SavState,
    coeffs: &StepCoefficients,
    mass: &LumpedMass,
    stiff: &StiffnessMatrix,
    tau: f64,
    params: &PotentialParams,
    solver: &SolverOptions,
) -> Result<SavState> {
    let mut stepper = SavStepper::new(mass, stiff, tau, params, *solver)?;
    stepper.step(state, coeffs).map(|(s, _)| s)
}

/// Solves the coupled `(N+1)×(N+1)` system for `(φ^n, r^n)` by dense LU.
pub fn dense_oracle_step(
    state: &SavState,
    coeffs: &StepCoefficients,
    mass: &LumpedMass,
    stiff: &StiffnessMatrix,
    tau: f64,
    params: &PotentialParams,
) -> Result<SavState> {
    let n = mass.len();
    if n > DENSE_ORACLE_MAX_NODES {
        return Err(Error::Shape(format!(
            "dense oracle limited to {DENSE_ORACLE_MAX_NODES} nodes, got {n}"
        )));
    }
    state.phi.same_shape(&coeffs.n_vec)?;
    let m = mass.diag();
    let phi_prev = state.phi.values();
    let noise = coeffs.n_vec.values();

    let mut mat = DMatrix::<f64>::zeros(n + 1, n + 1);
    let mut rhs = DVector::<f64>::zeros(n + 1);
    for i in 0..n {
        mat[(i, i)] += m[i];
        for (j, v) in stiff.matrix().row(i) {
            mat[(i, j)] += tau * params.epsilon * v;
        }
        mat[(i, n)] = tau * coeffs.c[i];
        mat[(n, i)] = -0.5 * coeffs.c[i];
        rhs[i] = m[i] * (phi_prev[i] + noise[i]);
    }
    mat[(n, n)] = 1.0;
    rhs[n] = state.r - 0.5 * dot(&coeffs.c, phi_prev);

    let sol = mat.lu().solve(&rhs).ok_or(Error::SingularDense)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularDense);
    }
    let mut phi = state.phi.clone();
    phi.values_mut().copy_from_slice(&sol.as_slice()[..n]);
    Ok(SavState {
        phi,
        r: sol[n],
        step: state.step + 1,
        time: (state.step + 1) as f64 * tau,
    })
}

/// Initial profiles `φ^0 = I_h[u_0]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialCondition {
    Constant(f64),
    /// `amplitude · cos(2π k x)` (times `cos(2π k y)` in 2-D).
    Cosine { amplitude: f64, wavenumber: i32 },
    /// `tanh(d(x) / (√2 ε))` with `d` the signed distance to an ellipse
    /// (positive inside). In 1-D the ellipse is the interval
    /// `center.0 ± semi_axes.0`.
    TanhEllipse { center: [f64; 2], semi_axes: [f64; 2] },
}

impl InitialCondition {
    /// The droplet of the reference experiment: center (0.5, 0.5), semi-axes 0.3 and 0.18.
    pub fn droplet() -> Self {
        InitialCondition::TanhEllipse {
            center: [0.5, 0.5],
            semi_axes: [0.3, 0.18],
        }
    }

    pub fn evaluate(&self, p: [f64; 2], dim: usize, epsilon: f64) -> f64 {
        use std::f64::consts::PI;
        match *self {
            InitialCondition::Constant(v) => v,
            InitialCondition::Cosine {
                amplitude,
                wavenumber,
            } => {
                let k = 2.0 * PI * wavenumber as f64;
                let mut v = amplitude * (k * p[0]).cos();
                if dim == 2 {
                    v *= (k * p[1]).cos();
                }
                v
            }
            InitialCondition::TanhEllipse { center, semi_axes } => {
                let d = if dim == 1 {
                    semi_axes[0] - (p[0] - center[0]).abs()
                } else {
                    ellipse_signed_distance([p[0] - center[0], p[1] - center[1]], semi_axes)
                };
                (d / (std::f64::consts::SQRT_2 * epsilon)).tanh()
            }
        }
    }

    pub fn interpolate(&self, mesh: &crate::mesh::TorusMesh, epsilon: f64) -> FieldVector {
        crate::fem::nodal_interpolate(|p| self.evaluate(p, mesh.dim(), epsilon), mesh)
    }
}

/// Signed distance from `p` (relative to the center) to the ellipse with the
/// given semi-axes; positive inside.
pub fn ellipse_signed_distance(p: [f64; 2], semi_axes: [f64; 2]) -> f64 {
    let (mut e0, mut e1) = (semi_axes[0], semi_axes[1]);
    let (mut y0, mut y1) = (p[0].abs(), p[1].abs());
    if e0 < e1 {
        std::mem::swap(&mut e0, &mut e1);
        std::mem::swap(&mut y0, &mut y1);
    }
    let inside = (y0 / e0).powi(2) + (y1 / e1).powi(2) < 1.0;
    let dist = distance_first_quadrant(e0, e1, y0, y1);
    if inside {
        dist
    } else {
        -dist
    }
}

// Eberly's bisection for the closest point on an axis-aligned ellipse,
// e0 >= e1 > 0, y0, y1 >= 0.
fn distance_first_quadrant(e0: f64, e1: f64, y0: f64, y1: f64) -> f64 {
    if y1 > 0.0 {
        if y0 > 0.0 {
            let z0 = y0 / e0;
            let z1 = y1 / e1;
            let g = z0 * z0 + z1 * z1 - 1.0;
            if g == 0.0 {
                return 0.0;
            }
            let r0 = (e0 / e1).powi(2);
            let s = ellipse_root(r0, z0, z1, g);
            let x0 = r0 * y0 / (s + r0);
            let x1 = y1 / (s + 1.0);
            ((x0 - y0).powi(2) + (x1 - y1).powi(2)).sqrt()
        } else {
            (y1 - e1).abs()
        }
    } else {
        let numer = e0 * y0;
        let denom = e0 * e0 - e1 * e1;
        if numer < denom {
            let xde0 = numer / denom;
            let x0 = e0 * xde0;
            let x1 = e1 * (1.0 - xde0 * xde0).sqrt();
            ((x0 - y0).powi(2) + x1 * x1).sqrt()
        } else {
            (y0 - e0).abs()
        }
    }
}

fn ellipse_root(r0: f64, z0: f64, z1: f64, mut g: f64) -> f64 {
    let n0 = r0 * z0;
    let mut s0 = z1 - 1.0;
    let mut s1 = if g < 0.0 { 0.0 } else { n0.hypot(z1) - 1.0 };
    let mut s = 0.0;
    for _ in 0..1100 {
        s = 0.5 * (s0 + s1);
        if s == s0 || s == s1 {
            break;
        }
        let ratio0 = n0 / (s + r0);
        let ratio1 = z1 / (s + 1.0);
        g = ratio0 * ratio0 + ratio1 * ratio1 - 1.0;
        if g > 0.0 {
            s0 = s;
        } else if g < 0.0 {
            s1 = s;
        } else {
            break;
        }
    }
    s
}

/// Diagnostics recorded after every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub r: f64,
    pub sqrt_eh: f64,
    pub e_sav: f64,
    pub cg_iters: usize,
    pub max_abs_phi: f64,
}

impl StepDiagnostics {
    /// `r^n - √E_h(φ^n)`
    pub fn tracking_error(&self) -> f64 {
        self.r - self.sqrt_eh
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathConfig {
    pub tau: f64,
    pub n_steps: usize,
    /// Keep every `record_every`-th state (step 0 always kept).
    pub record_every: usize,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// States at steps `0, k, 2k, ...` for `k = record_every`, plus the final step.
    pub snapshots: Vec<SavState>,
    /// Step-0 entry followed by one entry per step.
    pub diagnostics: Vec<StepDiagnostics>,
    /// `Σ_n Δβ` per mode over every increment the run consumed.
    pub consumed_totals: Vec<f64>,
}

impl Trajectory {
    pub fn max_tracking_error(&self) -> f64 {
        self.diagnostics
            .iter()
            .fold(0.0, |m, d| m.max(d.tracking_error().abs()))
    }

    pub fn final_state(&self) -> Option<&SavState> {
        self.snapshots.last()
    }

    /// Writes the per-step log: `step,time,r,sqrt_Eh,E_sav,cg_iters`.
    pub fn write_log<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,time,r,sqrt_Eh,E_sav,cg_iters")?;
        for d in &self.diagnostics {
            writeln!(
                w,
                "{},{},{:e},{:e},{:e},{}",
                d.step, d.time, d.r, d.sqrt_eh, d.e_sav, d.cg_iters
            )?;
        }
        Ok(())
    }
}

fn diagnostics_for(
    state: &SavState,
    ops: &FemOperators,
    params: &PotentialParams,
    cg_iters: usize,
) -> StepDiagnostics {
    StepDiagnostics {
        step: state.step,
        time: state.time,
        r: state.r,
        sqrt_eh: energy_eh(&state.phi, &ops.mass, params).sqrt(),
        e_sav: energy_total(&state.phi, state.r, &ops.stiff, params),
        cg_iters,
        max_abs_phi: state.phi.max_abs(),
    }
}

/// Iterates the scheme over `config.n_steps` steps. Step `n` (1-based)
/// consumes exactly the increment with index `n - 1` of `noise`.
pub fn run_path(
    config: &PathConfig,
    ops: &FemOperators,
    params: &PotentialParams,
    noise: &NoisePath,
    basis: &NoiseBasis,
    initial: SavState,
) -> Result<Trajectory> {
    initial.phi.check_mesh(&ops.mesh)?;
    if config.record_every == 0 {
        return Err(Error::Plan("record_every must be positive".into()));
    }
    if noise.n_modes() != basis.n_modes() {
        return Err(Error::Shape("noise path and basis differ in mode count".into()));
    }
    if noise.n_steps() < config.n_steps {
        return Err(Error::Shape(format!(
            "noise path has {} steps, run needs {}",
            noise.n_steps(),
            config.n_steps
        )));
    }
    if noise.n_modes() > 0 && (noise.tau() - config.tau).abs() > 1e-9 * config.tau {
        return Err(Error::Shape(format!(
            "noise path step {} differs from scheme step {}",
            noise.tau(),
            config.tau
        )));
    }

    let mut stepper = SavStepper::new(&ops.mass, &ops.stiff, config.tau, params, config.solver)?;
    let n_nodes = ops.mesh.node_count();
    let mut w = vec![0.0; n_nodes];
    let mut consumed_totals = vec![0.0; noise.n_modes()];
    let mut next_increment = 0usize;

    let mut diagnostics = Vec::with_capacity(config.n_steps + 1);
    diagnostics.push(diagnostics_for(&initial, ops, params, 0));
    let mut snapshots = vec![initial.clone()];
    let mut state = initial;

    for n in 1..=config.n_steps {
        assert_eq!(next_increment, n - 1, "increments must be consumed in order");
        let increments = noise.step(next_increment);
        next_increment += 1;
        for (t, d) in consumed_totals.iter_mut().zip(increments) {
            *t += d;
        }
        basis.field_into(increments, &mut w);
        let mut n_vec = state.phi.clone();
        for ((o, &p), &wi) in n_vec.values_mut().iter_mut().zip(state.phi.values()).zip(&w) {
            *o = params.rho(p) * wi;
        }
        let coeffs = compute_coefficients(&state.phi, &n_vec, &ops.mass, params).map_err(|e| e.at_step(n))?;
        let (next, info) = stepper.step(&state, &coeffs).map_err(|e| e.at_step(n))?;
        state = next;
        diagnostics.push(diagnostics_for(&state, ops, params, info.cg_iterations));
        if n % config.record_every == 0 || n == config.n_steps {
            snapshots.push(state.clone());
        }
    }
    Ok(Trajectory {
        snapshots,
        diagnostics,
        consumed_totals,
    })
}
