//! P1 finite element operators on [`TorusMesh`]es.
//!
//! Every product of finite element functions is mass lumped, i.e. evaluated
//! through nodal interpolation: `∫ I_h{f g} dx = Σ_i m_i f_i g_i`.

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::mesh::TorusMesh;

/// Nodal coefficients of a P1 function, tagged with the mesh it lives on.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldVector {
    dim: usize,
    level: u32,
    values: Vec<f64>,
}

impl FieldVector {
    /// Panics if `values.len()` differs from the mesh node count.
    pub fn new(mesh: &TorusMesh, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            mesh.node_count(),
            "field length does not match mesh"
        );
        Self {
            dim: mesh.dim(),
            level: mesh.level(),
            values,
        }
    }

    pub fn try_new(mesh: &TorusMesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.node_count() {
            return Err(Error::Shape(format!(
                "field of length {} on a mesh with {} nodes",
                values.len(),
                mesh.node_count()
            )));
        }
        Ok(Self::new(mesh, values))
    }

    pub fn zeros(mesh: &TorusMesh) -> Self {
        Self::constant(mesh, 0.0)
    }

    pub fn constant(mesh: &TorusMesh, value: f64) -> Self {
        Self::new(mesh, vec![value; mesh.node_count()])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &FieldVector) -> Result<()> {
        if self.dim != other.dim || self.level != other.level || self.len() != other.len() {
            return Err(Error::Shape(format!(
                "fields on (dim {}, level {}) and (dim {}, level {})",
                self.dim, self.level, other.dim, other.level
            )));
        }
        Ok(())
    }

    pub fn check_mesh(&self, mesh: &TorusMesh) -> Result<()> {
        if self.dim != mesh.dim() || self.level != mesh.level() {
            return Err(Error::Shape(format!(
                "field on (dim {}, level {}) used with mesh (dim {}, level {})",
                self.dim,
                self.level,
                mesh.dim(),
                mesh.level()
            )));
        }
        Ok(())
    }

    /// `self - other`
    pub fn sub(&self, other: &FieldVector) -> Result<FieldVector> {
        self.same_shape(other)?;
        Ok(FieldVector {
            dim: self.dim,
            level: self.level,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FieldVector {
        FieldVector {
            dim: self.dim,
            level: self.level,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Diagonal of the lumped mass matrix, `m_i = Σ_{K ∋ x_i} |K| / (dim + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LumpedMass {
    diag: Vec<f64>,
}

impl LumpedMass {
    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn as_matrix(&self) -> CsrMatrix {
        CsrMatrix::from_diagonal(&self.diag)
    }
}

/// Symmetric stiffness matrix with entries `∫ ∇χ_i · ∇χ_j dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct StiffnessMatrix {
    matrix: CsrMatrix,
}

impl StiffnessMatrix {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(f)
    }
}

pub fn assemble_lumped_mass(mesh: &TorusMesh) -> LumpedMass {
    let share = 1.0 / mesh.vertices_per_cell() as f64;
    let mut diag = vec![0.0; mesh.node_count()];
    for c in 0..mesh.cell_count() {
        let w = mesh.cell_volume(c) * share;
        for &v in mesh.cell_nodes(c) {
            diag[v] += w;
        }
    }
    LumpedMass { diag }
}

/// Gradients of the local P1 basis functions on a cell (constant per cell).
pub(crate) fn local_gradients(mesh: &TorusMesh, cell: usize) -> Vec<[f64; 2]> {
    let p = mesh.cell_coords(cell);
    match mesh.dim() {
        1 => {
            let len = p[1][0] - p[0][0];
            vec![[-1.0 / len, 0.0], [1.0 / len, 0.0]]
        }
        _ => {
            let (x1, y1) = (p[1][0] - p[0][0], p[1][1] - p[0][1]);
            let (x2, y2) = (p[2][0] - p[0][0], p[2][1] - p[0][1]);
            let det = x1 * y2 - x2 * y1;
            // Rows of the inverse Jacobian give the gradients of χ_1 and χ_2.
            let g1 = [y2 / det, -x2 / det];
            let g2 = [-y1 / det, x1 / det];
            let g0 = [-g1[0] - g2[0], -g1[1] - g2[1]];
            vec![g0, g1, g2]
        }
    }
}

pub fn assemble_stiffness(mesh: &TorusMesh) -> StiffnessMatrix {
    let k = mesh.vertices_per_cell();
    let mut trips = Vec::with_capacity(mesh.cell_count() * k * k);
    for c in 0..mesh.cell_count() {
        let vol = mesh.cell_volume(c);
        let grads = local_gradients(mesh, c);
        let nodes = mesh.cell_nodes(c);
        for a in 0..k {
            for b in 0..k {
                let g = grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1];
                trips.push((nodes[a], nodes[b], vol * g));
            }
        }
    }
    StiffnessMatrix {
        matrix: CsrMatrix::from_triplets(mesh.node_count(), &trips),
    }
}

/// `Δ_h ζ = -M_L^{-1} K ζ`.
pub fn discrete_laplacian(
    field: &FieldVector,
    mass: &LumpedMass,
    stiff: &StiffnessMatrix,
) -> Result<FieldVector> {
    check_len(field, mass.len())?;
    let kz = stiff.apply(field.values());
    let mut out = field.clone();
    for ((o, k), m) in out.values_mut().iter_mut().zip(&kz).zip(mass.diag()) {
        *o = -k / m;
    }
    Ok(out)
}

/// `∫ I_h{f g} dx = Σ_i m_i f_i g_i`.
pub fn lumped_inner(f: &FieldVector, g: &FieldVector, mass: &LumpedMass) -> Result<f64> {
    f.same_shape(g)?;
    check_len(f, mass.len())?;
    Ok(lumped_dot(f.values(), g.values(), mass.diag()))
}

pub(crate) fn lumped_dot(f: &[f64], g: &[f64], m: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..m.len() {
        acc += m[i] * f[i] * g[i];
    }
    acc
}

/// `|f|_{H^1}^2 = f^T K f`.
pub fn h1_seminorm_sq(f: &FieldVector, stiff: &StiffnessMatrix) -> Result<f64> {
    check_len(f, stiff.matrix().dim())?;
    Ok(stiff.matrix().bilinear(f.values(), f.values()))
}

/// Nodal interpolation `I_h[u]`.
pub fn nodal_interpolate(f: impl Fn([f64; 2]) -> f64, mesh: &TorusMesh) -> FieldVector {
    let values = (0..mesh.node_count())
        .map(|i| f(mesh.node_coords(i)))
        .collect();
    FieldVector::new(mesh, values)
}

fn check_len(f: &FieldVector, n: usize) -> Result<()> {
    if f.len() != n {
        return Err(Error::Shape(format!(
            "field of length {} against operator of size {n}",
            f.len()
        )));
    }
    Ok(())
}

/// Mesh-level operators shared by every simulation on one mesh.
#[derive(Debug, Clone)]
pub struct FemOperators {
    pub mesh: TorusMesh,
    pub mass: LumpedMass,
    pub stiff: StiffnessMatrix,
}

impl FemOperators {
    pub fn new(mesh: TorusMesh) -> Self {
        let mass = assemble_lumped_mass(&mesh);
        let stiff = assemble_stiffness(&mesh);
        Self { mesh, mass, stiff }
    }
}
