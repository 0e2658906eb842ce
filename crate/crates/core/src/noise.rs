//! Truncated Q-Wiener process `W = Σ_k λ_k g_k β_k` on the torus and the
//! discrete diffusion operator `Φ_h`.
//!
//! Brownian increments are generated at the finest time step of a study and
//! coarsened by exact summation, so every resolution of one sample is driven
//! by the same path.
//!
//! Seeding: the stream of mode `rank` in sample `sample_id` is a ChaCha8
//! generator seeded (via `SeedableRng::seed_from_u64`) with
//! `mix(master_seed, sample_id, rank)`, where
//! `mix(m, s, r) = splitmix64(splitmix64(splitmix64(m) ^ s) ^ r)`.
//! Standard normals come from `rand_distr::StandardNormal` (ziggurat) and are
//! scaled by `√τ_min`. Streams are drawn in step order.

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fem::FieldVector;
use crate::mesh::TorusMesh;
use crate::potential::PotentialParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModeIndex {
    D1(i32),
    D2(i32, i32),
}

impl ModeIndex {
    pub fn dim(self) -> usize {
        match self {
            ModeIndex::D1(_) => 1,
            ModeIndex::D2(..) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeSpec {
    pub index: ModeIndex,
    pub amplitude: f64,
}

/// One-dimensional periodic Laplace eigenfunction:
/// `√2 cos(2πkx)` for `k ≥ 1`, `1` for `k = 0`, `√2 sin(2πkx)` for `k ≤ -1`.
pub fn eigenfunction_1d(k: i32, x: f64) -> f64 {
    match k {
        0 => 1.0,
        k if k > 0 => SQRT_2 * (2.0 * PI * k as f64 * x).cos(),
        k => SQRT_2 * (2.0 * PI * k as f64 * x).sin(),
    }
}

/// Tensor-product eigenfunction `g_k(x) g_l(y)` in 2-D, `g_k(x)` in 1-D.
pub fn eigenfunction(index: ModeIndex, point: [f64; 2]) -> f64 {
    match index {
        ModeIndex::D1(k) => eigenfunction_1d(k, point[0]),
        ModeIndex::D2(k, l) => eigenfunction_1d(k, point[0]) * eigenfunction_1d(l, point[1]),
    }
}

/// One-dimensional amplitudes of the default spectrum: 1, 1, 1/4, 1/9 for |k| = 0..3.
pub fn default_lambda(k: i32) -> f64 {
    match k.unsigned_abs() {
        0 | 1 => 1.0,
        2 => 0.25,
        3 => 1.0 / 9.0,
        _ => 0.0,
    }
}

/// Default mode table: `|k| ≤ 3` in 1-D, the 7×7 tensor grid with amplitudes
/// `λ_k λ_l` in 2-D. Ranks run over `k` (outer) then `l`, ascending.
pub fn default_modes(dim: usize) -> Vec<ModeSpec> {
    let range = -3..=3;
    match dim {
        1 => range
            .map(|k| ModeSpec {
                index: ModeIndex::D1(k),
                amplitude: default_lambda(k),
            })
            .collect(),
        _ => range
            .clone()
            .flat_map(|k| {
                range.clone().map(move |l| ModeSpec {
                    index: ModeIndex::D2(k, l),
                    amplitude: default_lambda(k) * default_lambda(l),
                })
            })
            .collect(),
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream seed for `(master_seed, sample_id, mode_rank)`.
pub fn mix_seed(master_seed: u64, sample_id: u64, mode_rank: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master_seed) ^ sample_id) ^ mode_rank)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    dim: usize,
    modes: Vec<ModeSpec>,
    master_seed: u64,
}

impl NoiseModel {
    pub fn new(dim: usize, modes: Vec<ModeSpec>, master_seed: u64) -> Result<Self> {
        for (rank, m) in modes.iter().enumerate() {
            if m.index.dim() != dim {
                return Err(Error::Shape(format!(
                    "mode {rank} has dimension {} in a {dim}-D model",
                    m.index.dim()
                )));
            }
            if !(m.amplitude > 0.0 && m.amplitude.is_finite()) {
                return Err(Error::Shape(format!(
                    "mode {rank} has non-positive amplitude {}",
                    m.amplitude
                )));
            }
        }
        Ok(Self {
            dim,
            modes,
            master_seed,
        })
    }

    pub fn default_for(dim: usize, master_seed: u64) -> Self {
        Self::new(dim, default_modes(dim), master_seed).expect("default modes are valid")
    }

    /// A model with no modes: every increment field is zero.
    pub fn silent(dim: usize) -> Self {
        Self {
            dim,
            modes: Vec::new(),
            master_seed: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> &[ModeSpec] {
        &self.modes
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    /// Brownian increments of every mode for one sample at step `tau_min`.
    pub fn generate_increments(&self, sample_id: u64, n_fine_steps: usize, tau_min: f64) -> NoisePath {
        assert!(n_fine_steps >= 1, "n_fine_steps must be positive");
        let n_modes = self.modes.len();
        let mut increments = vec![0.0; n_fine_steps * n_modes];
        let scale = tau_min.sqrt();
        for rank in 0..n_modes {
            let seed = mix_seed(self.master_seed, sample_id, rank as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for step in 0..n_fine_steps {
                let z: f64 = StandardNormal.sample(&mut rng);
                increments[step * n_modes + rank] = scale * z;
            }
        }
        NoisePath {
            sample_id,
            tau: tau_min,
            n_steps: n_fine_steps,
            n_modes,
            increments,
        }
    }

    /// Nodal values of `Σ_modes λ Δβ g(x_i)` where `Δβ` sums the path over `steps`.
    pub fn noise_field(&self, path: &NoisePath, steps: Range<usize>, mesh: &TorusMesh) -> Result<FieldVector> {
        if steps.end > path.n_steps || steps.start > steps.end {
            return Err(Error::Shape(format!(
                "step range {steps:?} outside a path of {} steps",
                path.n_steps
            )));
        }
        if path.n_modes != self.modes.len() {
            return Err(Error::Shape("path and model have different mode counts".into()));
        }
        let mut totals = vec![0.0; path.n_modes];
        for s in steps {
            for (t, d) in totals.iter_mut().zip(path.step(s)) {
                *t += d;
            }
        }
        let basis = NoiseBasis::new(self, mesh)?;
        let mut out = vec![0.0; mesh.node_count()];
        basis.field_into(&totals, &mut out);
        Ok(FieldVector::new(mesh, out))
    }
}

/// Sampled increments `Δβ_mode` of one path on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    sample_id: u64,
    tau: f64,
    n_steps: usize,
    n_modes: usize,
    /// Step-major: `increments[step * n_modes + mode]`.
    increments: Vec<f64>,
}

impl NoisePath {
    /// Builds a path from explicit step-major increments.
    pub fn from_increments(sample_id: u64, tau: f64, n_modes: usize, increments: Vec<f64>) -> Result<Self> {
        if n_modes == 0 {
            if !increments.is_empty() {
                return Err(Error::Shape("increments given for zero modes".into()));
            }
        } else if !increments.len().is_multiple_of(n_modes) {
            return Err(Error::Shape(format!(
                "{} increments do not split into {n_modes} modes",
                increments.len()
            )));
        }
        let n_steps = increments.len().checked_div(n_modes).unwrap_or(0);
        Ok(Self {
            sample_id,
            tau,
            n_steps,
            n_modes,
            increments,
        })
    }

    /// A path of `n_steps` steps carrying no modes (deterministic runs).
    pub fn silent(n_steps: usize, tau: f64) -> Self {
        Self {
            sample_id: 0,
            tau,
            n_steps,
            n_modes: 0,
            increments: Vec::new(),
        }
    }

    pub fn sample_id(&self) -> u64 {
        self.sample_id
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    /// Increments of every mode during step `step` (0-based).
    pub fn step(&self, step: usize) -> &[f64] {
        &self.increments[step * self.n_modes..(step + 1) * self.n_modes]
    }

    pub fn increment(&self, mode: usize, step: usize) -> f64 {
        self.increments[step * self.n_modes + mode]
    }

    /// Sums every `factor` consecutive increments into one.
    pub fn coarsen(&self, factor: usize) -> Result<NoisePath> {
        if factor == 0 || !self.n_steps.is_multiple_of(factor) {
            return Err(Error::Shape(format!(
                "coarsening factor {factor} does not divide {} steps",
                self.n_steps
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let n = self.n_steps / factor;
        let m = self.n_modes;
        let mut increments = vec![0.0; n * m];
        for c in 0..n {
            let out = &mut increments[c * m..(c + 1) * m];
            for f in c * factor..(c + 1) * factor {
                for (o, d) in out.iter_mut().zip(self.step(f)) {
                    *o += d;
                }
            }
        }
        Ok(NoisePath {
            sample_id: self.sample_id,
            tau: self.tau * factor as f64,
            n_steps: n,
            n_modes: m,
            increments,
        })
    }

    /// `Σ_steps Δβ` per mode, i.e. `β(T)`.
    pub fn totals(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.n_modes];
        for s in 0..self.n_steps {
            for (a, d) in t.iter_mut().zip(self.step(s)) {
                *a += d;
            }
        }
        t
    }

    /// Audit dump with header `sample,mode_rank,step,increment`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "sample,mode_rank,step,increment")?;
        for rank in 0..self.n_modes {
            for step in 0..self.n_steps {
                writeln!(
                    w,
                    "{},{},{},{:e}",
                    self.sample_id,
                    rank,
                    step,
                    self.increment(rank, step)
                )?;
            }
        }
        Ok(())
    }
}

/// `λ_mode g_mode(x_i)` tabulated on one mesh.
#[derive(Debug, Clone)]
pub struct NoiseBasis {
    n_nodes: usize,
    n_modes: usize,
    /// Mode-major: `table[mode * n_nodes + node]`.
    table: Vec<f64>,
}

impl NoiseBasis {
    pub fn new(model: &NoiseModel, mesh: &TorusMesh) -> Result<Self> {
        if model.dim() != mesh.dim() {
            return Err(Error::Shape(format!(
                "{}-D noise model on a {}-D mesh",
                model.dim(),
                mesh.dim()
            )));
        }
        let n_nodes = mesh.node_count();
        let mut table = Vec::with_capacity(n_nodes * model.modes().len());
        for m in model.modes() {
            for i in 0..n_nodes {
                table.push(m.amplitude * eigenfunction(m.index, mesh.node_coords(i)));
            }
        }
        Ok(Self {
            n_nodes,
            n_modes: model.modes().len(),
            table,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    /// `out_i = Σ_mode λ g(x_i) Δβ_mode`
    pub fn field_into(&self, increments: &[f64], out: &mut [f64]) {
        debug_assert_eq!(increments.len(), self.n_modes);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (mode, &d) in increments.iter().enumerate() {
            let row = &self.table[mode * self.n_nodes..(mode + 1) * self.n_nodes];
            for (o, g) in out.iter_mut().zip(row) {
                *o += g * d;
            }
        }
    }
}

/// Nodal `Φ_h(φ) ΔW`: `n_i = ρ(φ_i) w_i`.
pub fn apply_phi_h(phi_prev: &FieldVector, w: &FieldVector, params: &PotentialParams) -> Result<FieldVector> {
    phi_prev.same_shape(w)?;
    let mut out = w.clone();
    for (o, &p) in out.values_mut().iter_mut().zip(phi_prev.values()) {
        *o *= params.rho(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenfunction_values() {
        for x in [0.0, 0.1, 0.77] {
            assert_eq!(eigenfunction_1d(0, x), 1.0);
        }
        assert_eq!(eigenfunction_1d(1, 0.0), SQRT_2);
        assert_eq!(eigenfunction_1d(-1, 0.0), 0.0);
        assert!((eigenfunction(ModeIndex::D2(1, -1), [0.0, 0.25]) + 2.0).abs() < 1e-15);
    }

    #[test]
    fn default_spectrum() {
        let m1 = default_modes(1);
        assert_eq!(m1.len(), 7);
        assert_eq!(m1[0].index, ModeIndex::D1(-3));
        assert_eq!(m1[0].amplitude, 1.0 / 9.0);
        assert_eq!(m1[3].amplitude, 1.0);
        let m2 = default_modes(2);
        assert_eq!(m2.len(), 49);
        assert_eq!(m2[7 * 5 + 1].index, ModeIndex::D2(2, -2));
        assert_eq!(m2[7 * 5 + 1].amplitude, 1.0 / 16.0);
    }

    #[test]
    fn determinism_and_coarsening() {
        let model = NoiseModel::default_for(1, 7);
        let a = model.generate_increments(3, 64, 1e-3);
        let b = model.generate_increments(3, 64, 1e-3);
        assert_eq!(a, b);
        assert_ne!(a, model.generate_increments(4, 64, 1e-3));
        assert_eq!(a.coarsen(1).unwrap(), a);
        let c = a.coarsen(8).unwrap();
        assert_eq!(c.n_steps(), 8);
        assert!((c.tau() - 8e-3).abs() < 1e-18);
        for mode in 0..7 {
            for s in 0..8 {
                let mut sum = 0.0;
                for f in 8 * s..8 * s + 8 {
                    sum += a.increment(mode, f);
                }
                assert_eq!(c.increment(mode, s), sum);
            }
        }
        assert!(a.coarsen(5).is_err());
        assert!(a.coarsen(0).is_err());
    }

    #[test]
    fn field_of_single_constant_mode() {
        let mesh = TorusMesh::new(2, 2).unwrap();
        let model = NoiseModel::new(
            2,
            vec![ModeSpec {
                index: ModeIndex::D2(0, 0),
                amplitude: 0.5,
            }],
            1,
        )
        .unwrap();
        let path = NoisePath::from_increments(0, 0.1, 1, vec![0.3, 0.1]).unwrap();
        let w = model.noise_field(&path, 0..1, &mesh).unwrap();
        assert!(w.values().iter().all(|&v| (v - 0.15).abs() < 1e-16));
        let w2 = model.noise_field(&path, 0..2, &mesh).unwrap();
        assert!(w2.values().iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert!(model.noise_field(&path, 1..3, &mesh).is_err());
        let zero = NoisePath::from_increments(0, 0.1, 1, vec![0.0]).unwrap();
        assert!(model.noise_field(&zero, 0..1, &mesh).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn phi_h_vanishes_in_pure_phase() {
        let mesh = TorusMesh::new(1, 3).unwrap();
        let p = PotentialParams::default();
        let one = FieldVector::constant(&mesh, 1.0);
        let w = FieldVector::constant(&mesh, 2.5);
        assert_eq!(apply_phi_h(&one, &w, &p).unwrap().max_abs(), 0.0);
        let half = FieldVector::constant(&mesh, 0.5);
        assert_eq!(apply_phi_h(&half, &FieldVector::zeros(&mesh), &p).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn rejects_invalid_models() {
        let bad = vec![ModeSpec {
            index: ModeIndex::D1(0),
            amplitude: 0.0,
        }];
        assert!(NoiseModel::new(1, bad, 0).is_err());
        assert!(NoiseModel::new(2, default_modes(1), 0).is_err());
    }

    #[test]
    fn csv_dump_header() {
        let path = NoiseModel::default_for(1, 0).generate_increments(2, 3, 0.01);
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("sample,mode_rank,step,increment\n2,0,0,"));
        assert_eq!(text.lines().count(), 1 + 7 * 3);
    }
}
