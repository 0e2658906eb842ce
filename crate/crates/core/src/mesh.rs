//! Structured periodic meshes of the unit torus `(0,1)^d`, `d ∈ {1, 2}`.
//!
//! Nodes sit on the grid `h·(i, j)` with `h = 2^-level` and are numbered
//! row-major, `index = j·n + i`, where `n = 2^level` and indices wrap modulo
//! `n`. In 2-D every grid square is split along its lower-left to upper-right
//! diagonal, giving each vertex a star of exactly six triangles.

use crate::error::{Error, Result};
use crate::fem::FieldVector;

/// Largest supported level; keeps `node_count` and cell indices well inside `usize`.
pub const MAX_LEVEL_1D: u32 = 40;
pub const MAX_LEVEL_2D: u32 = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct TorusMesh {
    dim: usize,
    level: u32,
    per_axis: usize,
    spacing: f64,
    /// Flat cell connectivity, `dim + 1` node indices per cell.
    cells: Vec<usize>,
    /// Unwrapped vertex coordinates per cell (1-D uses the first component).
    cell_coords: Vec<[f64; 2]>,
}

impl TorusMesh {
    /// Builds the structured mesh with spacing `2^-level`.
    pub fn new(dim: usize, level: u32) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::Mesh(format!("dim must be 1 or 2, got {dim}")));
        }
        if level == 0 {
            return Err(Error::Mesh("level must be at least 1".into()));
        }
        let max = if dim == 1 { MAX_LEVEL_1D } else { MAX_LEVEL_2D };
        let fits = 1usize
            .checked_shl(level)
            .and_then(|n| n.checked_pow(dim as u32))
            .and_then(|nodes| nodes.checked_mul(2 * dim * (dim + 1)))
            .is_some();
        if level > max || !fits {
            return Err(Error::Mesh(format!(
                "level {level} overflows the node index type for dim {dim}"
            )));
        }

        let n = 1usize << level;
        let h = 1.0 / n as f64;
        let mut cells = Vec::new();
        let mut cell_coords = Vec::new();
        match dim {
            1 => {
                cells.reserve(2 * n);
                cell_coords.reserve(2 * n);
                for i in 0..n {
                    cells.extend_from_slice(&[i, (i + 1) % n]);
                    let x = i as f64 * h;
                    cell_coords.extend_from_slice(&[[x, 0.0], [x + h, 0.0]]);
                }
            }
            _ => {
                cells.reserve(6 * n * n);
                cell_coords.reserve(6 * n * n);
                for j in 0..n {
                    for i in 0..n {
                        let (ip, jp) = ((i + 1) % n, (j + 1) % n);
                        let a = j * n + i;
                        let b = j * n + ip;
                        let c = jp * n + ip;
                        let d = jp * n + i;
                        let (x0, y0) = (i as f64 * h, j as f64 * h);
                        let (x1, y1) = (x0 + h, y0 + h);
                        cells.extend_from_slice(&[a, b, c]);
                        cell_coords.extend_from_slice(&[[x0, y0], [x1, y0], [x1, y1]]);
                        cells.extend_from_slice(&[a, c, d]);
                        cell_coords.extend_from_slice(&[[x0, y0], [x1, y1], [x0, y1]]);
                    }
                }
            }
        }

        Ok(Self {
            dim,
            level,
            per_axis: n,
            spacing: h,
            cells,
            cell_coords,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Nodes per axis, `2^level`.
    pub fn per_axis(&self) -> usize {
        self.per_axis
    }

    pub fn node_count(&self) -> usize {
        self.per_axis.pow(self.dim as u32)
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn vertices_per_cell(&self) -> usize {
        self.dim + 1
    }

    pub fn cell_nodes(&self, cell: usize) -> &[usize] {
        let k = self.dim + 1;
        &self.cells[cell * k..(cell + 1) * k]
    }

    /// Vertex coordinates of `cell`, unwrapped so the simplex is contiguous
    /// in the plane (some may lie at coordinate 1.0).
    pub fn cell_coords(&self, cell: usize) -> &[[f64; 2]] {
        let k = self.dim + 1;
        &self.cell_coords[cell * k..(cell + 1) * k]
    }

    /// Length (1-D) or area (2-D) of a cell.
    pub fn cell_volume(&self, cell: usize) -> f64 {
        let p = self.cell_coords(cell);
        match self.dim {
            1 => (p[1][0] - p[0][0]).abs(),
            _ => {
                let (ax, ay) = (p[1][0] - p[0][0], p[1][1] - p[0][1]);
                let (bx, by) = (p[2][0] - p[0][0], p[2][1] - p[0][1]);
                0.5 * (ax * by - ay * bx).abs()
            }
        }
    }

    /// Integer grid coordinates of a node.
    pub fn grid_index(&self, node: usize) -> (usize, usize) {
        match self.dim {
            1 => (node, 0),
            _ => (node % self.per_axis, node / self.per_axis),
        }
    }

    pub fn node_from_grid(&self, i: usize, j: usize) -> usize {
        let n = self.per_axis;
        match self.dim {
            1 => i % n,
            _ => (j % n) * n + (i % n),
        }
    }

    /// Coordinates of a node in `[0,1)^d`; the second entry is 0 in 1-D.
    pub fn node_coords(&self, node: usize) -> [f64; 2] {
        let (i, j) = self.grid_index(node);
        [i as f64 * self.spacing, j as f64 * self.spacing]
    }

    /// Indices of the cells incident to every node (vertex stars).
    pub fn vertex_stars(&self) -> Vec<Vec<usize>> {
        let mut stars = vec![Vec::new(); self.node_count()];
        for c in 0..self.cell_count() {
            for &v in self.cell_nodes(c) {
                stars[v].push(c);
            }
        }
        stars
    }

    /// Checks that `other` is nested in `self` (same dimension, finer or equal level).
    pub fn is_refined_by(&self, other: &TorusMesh) -> bool {
        self.dim == other.dim && other.level >= self.level
    }
}

/// Evaluates the piecewise linear function on `coarse` at every node of `fine`.
///
/// Dyadic nesting makes the local coordinates exact binary fractions, so the
/// result is the exact P1 interpolant (no quadrature involved).
pub fn prolong(field: &FieldVector, coarse: &TorusMesh, fine: &TorusMesh) -> Result<FieldVector> {
    field.check_mesh(coarse)?;
    if coarse.dim != fine.dim {
        return Err(Error::Shape(format!(
            "prolongation between dim {} and dim {}",
            coarse.dim, fine.dim
        )));
    }
    if fine.level < coarse.level {
        return Err(Error::NotNested {
            coarse: coarse.level,
            fine: fine.level,
        });
    }
    let ratio = 1usize << (fine.level - coarse.level);
    let inv = 1.0 / ratio as f64;
    let v = field.values();
    let mut out = Vec::with_capacity(fine.node_count());
    match fine.dim {
        1 => {
            for node in 0..fine.node_count() {
                let (i0, di) = (node / ratio, node % ratio);
                let s = di as f64 * inv;
                let a = v[coarse.node_from_grid(i0, 0)];
                if di == 0 {
                    out.push(a);
                } else {
                    let b = v[coarse.node_from_grid(i0 + 1, 0)];
                    out.push((1.0 - s) * a + s * b);
                }
            }
        }
        _ => {
            for node in 0..fine.node_count() {
                let (fi, fj) = fine.grid_index(node);
                let (i0, di) = (fi / ratio, fi % ratio);
                let (j0, dj) = (fj / ratio, fj % ratio);
                let a = v[coarse.node_from_grid(i0, j0)];
                if di == 0 && dj == 0 {
                    out.push(a);
                    continue;
                }
                let s = di as f64 * inv;
                let t = dj as f64 * inv;
                let c = v[coarse.node_from_grid(i0 + 1, j0 + 1)];
                let value = if s >= t {
                    let b = v[coarse.node_from_grid(i0 + 1, j0)];
                    (1.0 - s) * a + (s - t) * b + t * c
                } else {
                    let d = v[coarse.node_from_grid(i0, j0 + 1)];
                    (1.0 - t) * a + (t - s) * d + s * c
                };
                out.push(value);
            }
        }
    }
    Ok(FieldVector::new(fine, out))
}
