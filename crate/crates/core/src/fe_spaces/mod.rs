//! Degrees of freedom of the lowest-order de Rham complex on a mesh, the incidence matrices
//! between them, and exact coarse-to-fine embeddings.

pub mod element;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{local_edges, Mesh, NestedPair, TET_FACES};
use crate::sparse::CsrMatrix;

use element::Simplex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Continuous piecewise-linear, one dof per vertex.
    Lagrange,
    /// Lowest-order Nédélec edge elements, one dof per edge.
    Nedelec,
    /// Lowest-order Raviart–Thomas, one dof per face in 3D and per edge in 2D.
    RaviartThomas,
    /// Piecewise constants, one dof per cell.
    PiecewiseConstant,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::Lagrange => "S",
            Family::Nedelec => "N",
            Family::RaviartThomas => "RT",
            Family::PiecewiseConstant => "P0",
        };
        f.write_str(s)
    }
}

/// Identifies a discrete space: family, dimension and mesh resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpaceTag {
    pub family: Family,
    pub dim: usize,
    pub subdivisions: usize,
}

impl SpaceTag {
    pub fn new(family: Family, mesh: &Mesh) -> Self {
        Self {
            family,
            dim: mesh.dim(),
            subdivisions: mesh.subdivisions(),
        }
    }
}

impl fmt::Display for SpaceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(d={}, n={})", self.family, self.dim, self.subdivisions)
    }
}

#[derive(Debug, Clone)]
pub struct DofMap {
    pub family: Family,
    pub mesh: Arc<Mesh>,
    boundary: Vec<bool>,
}

impl DofMap {
    /// Dofs are numbered like the owning entities.
    pub fn new(mesh: Arc<Mesh>, family: Family) -> Self {
        let boundary = match family {
            Family::Lagrange => (0..mesh.num_vertices()).map(|v| mesh.vertex_on_boundary(v)).collect(),
            Family::Nedelec => (0..mesh.num_edges()).map(|e| mesh.edge_on_boundary(e)).collect(),
            Family::RaviartThomas => (0..mesh.num_facets()).map(|f| mesh.facet_on_boundary(f)).collect(),
            Family::PiecewiseConstant => vec![false; mesh.num_cells()],
        };
        Self {
            family,
            mesh,
            boundary,
        }
    }

    pub fn len(&self) -> usize {
        self.boundary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundary.is_empty()
    }

    pub fn tag(&self) -> SpaceTag {
        SpaceTag::new(self.family, &self.mesh)
    }

    pub fn is_boundary(&self, dof: usize) -> bool {
        self.boundary[dof]
    }

    pub fn boundary_dofs(&self) -> Vec<usize> {
        (0..self.len()).filter(|&d| self.boundary[d]).collect()
    }

    pub fn interior_dofs(&self) -> Vec<usize> {
        (0..self.len()).filter(|&d| !self.boundary[d]).collect()
    }
}

/// A sparse matrix mapping the `cols` space into the `rows` space.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    pub rows: SpaceTag,
    pub cols: SpaceTag,
    pub matrix: CsrMatrix,
}

impl SparseOperator {
    pub fn new(rows: SpaceTag, cols: SpaceTag, matrix: CsrMatrix) -> Self {
        Self { rows, cols, matrix }
    }

    /// `self * rhs`; the inner spaces must agree.
    pub fn compose(&self, rhs: &SparseOperator) -> Result<SparseOperator> {
        if self.cols != rhs.rows {
            return Err(Error::IncompatibleSpaces(format!(
                "cannot compose {} <- {} with {} <- {}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(SparseOperator::new(self.rows, rhs.cols, self.matrix.matmul(&rhs.matrix)))
    }

    /// `self - other` for operators between the same spaces.
    pub fn sub(&self, other: &SparseOperator) -> Result<SparseOperator> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::IncompatibleSpaces(format!(
                "cannot subtract {} <- {} from {} <- {}",
                other.rows, other.cols, self.rows, self.cols
            )));
        }
        Ok(SparseOperator::new(self.rows, self.cols, self.matrix.add_scaled(1.0, &other.matrix, -1.0)))
    }

    pub fn transpose(&self) -> SparseOperator {
        SparseOperator::new(self.cols, self.rows, self.matrix.transpose())
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.matrix.ncols(), "vector length does not match {}", self.cols);
        self.matrix.mul_vec(x)
    }
}

/// Discrete gradient from Lagrange to Nédélec dofs: `+1` at the head of each edge, `-1` at its
/// tail.
pub fn gradient_incidence(mesh: &Mesh) -> SparseOperator {
    let rows: Vec<Vec<(usize, f64)>> = (0..mesh.num_edges())
        .map(|e| vec![(mesh.edge_tail(e), -1.0), (mesh.edge_head(e), 1.0)])
        .collect();
    SparseOperator::new(
        SpaceTag::new(Family::Nedelec, mesh),
        SpaceTag::new(Family::Lagrange, mesh),
        CsrMatrix::from_rows(mesh.num_vertices(), rows),
    )
}

/// Discrete curl: Nédélec to Raviart–Thomas face fluxes in 3D, Nédélec to cell values in 2D.
pub fn curl_incidence(mesh: &Mesh) -> SparseOperator {
    let n_tag = SpaceTag::new(Family::Nedelec, mesh);
    if mesh.dim() == 3 {
        let rows = (0..mesh.num_faces())
            .map(|f| {
                let [a, b, c] = mesh.face(f);
                let mut r = vec![
                    (mesh.edge_id(a, b).unwrap(), 1.0),
                    (mesh.edge_id(b, c).unwrap(), 1.0),
                    (mesh.edge_id(a, c).unwrap(), -1.0),
                ];
                r.sort_unstable_by_key(|&(e, _)| e);
                r
            })
            .collect();
        SparseOperator::new(
            SpaceTag::new(Family::RaviartThomas, mesh),
            n_tag,
            CsrMatrix::from_rows(mesh.num_edges(), rows),
        )
    } else {
        let rows = (0..mesh.num_cells())
            .map(|c| {
                let p = mesh.cell_points(c);
                let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
                let inv = 1.0 / mesh.cell_volume(c);
                // With counter-clockwise vertex order the boundary runs 0->1->2->0.
                let ccw = if det > 0.0 { 1.0 } else { -1.0 };
                let signs = [ccw, -ccw, ccw];
                let mut r: Vec<(usize, f64)> = mesh
                    .cell_edges(c)
                    .iter()
                    .zip(signs)
                    .map(|(&e, s)| (e, s * inv))
                    .collect();
                r.sort_unstable_by_key(|&(e, _)| e);
                r
            })
            .collect();
        SparseOperator::new(
            SpaceTag::new(Family::PiecewiseConstant, mesh),
            n_tag,
            CsrMatrix::from_rows(mesh.num_edges(), rows),
        )
    }
}

/// Discrete divergence from face fluxes to cell values (3D).
pub fn divergence_incidence(mesh: &Mesh) -> Result<SparseOperator> {
    if mesh.dim() != 3 {
        return Err(Error::IncompatibleSpaces("divergence incidence needs a 3D mesh".into()));
    }
    let rows = (0..mesh.num_cells())
        .map(|c| {
            let inv = 1.0 / mesh.cell_volume(c);
            let s = Simplex::new(3, mesh.cell_points(c));
            let centroid = mesh.barycenter(c);
            let mut r: Vec<(usize, f64)> = mesh
                .cell_faces(c)
                .iter()
                .zip(TET_FACES)
                .map(|(&f, [a, b, d])| {
                    let n = crate::mesh::cross(
                        crate::mesh::sub(s.points[b], s.points[a]),
                        crate::mesh::sub(s.points[d], s.points[a]),
                    );
                    let out = crate::mesh::dot3(n, crate::mesh::sub(s.points[a], centroid)) > 0.0;
                    (f, if out { inv } else { -inv })
                })
                .collect();
            r.sort_unstable_by_key(|&(f, _)| f);
            r
        })
        .collect();
    Ok(SparseOperator::new(
        SpaceTag::new(Family::PiecewiseConstant, mesh),
        SpaceTag::new(Family::RaviartThomas, mesh),
        CsrMatrix::from_rows(mesh.num_faces(), rows),
    ))
}

/// Rounds `v` to the nearest multiple of `1/denom` when it is that close already; nested
/// structured meshes produce exactly such values.
fn snap(v: f64, denom: f64) -> f64 {
    let s = (v * denom).round();
    if (v * denom - s).abs() < 1e-9 {
        s / denom
    } else {
        v
    }
}

/// Exact representation of coarse basis functions in the fine space (columns = coarse dofs).
pub fn coarse_to_fine_embedding(pair: &NestedPair, family: Family) -> Result<SparseOperator> {
    let (coarse, fine) = (&*pair.coarse, &*pair.fine);
    let ratio = (fine.subdivisions() / coarse.subdivisions()) as f64;
    let dim = coarse.dim();
    let mut trip = Vec::new();
    let (nrows, ncols) = match family {
        Family::Lagrange => {
            for v in 0..fine.num_vertices() {
                let x = fine.vertex(v);
                let k = coarse.locate(&x);
                let s = Simplex::new(dim, coarse.cell_points(k));
                let l = s.barycentric(&x);
                for (i, &y) in coarse.cell(k).iter().enumerate() {
                    let w = snap(l[i], ratio);
                    if w.abs() > 1e-12 {
                        trip.push((v, y, w));
                    }
                }
            }
            (fine.num_vertices(), coarse.num_vertices())
        }
        Family::Nedelec => {
            for e in 0..fine.num_edges() {
                let [a, b] = fine.edge(e);
                // Any coarse cell containing the edge works: tangential traces are continuous.
                let fc = fine.vertex_cells(a).iter().copied().find(|c| fine.cell(*c).contains(&b)).unwrap();
                let k = pair.parent_of(fc);
                let s = Simplex::new(dim, coarse.cell_points(k));
                let (xa, xb) = (fine.vertex(a), fine.vertex(b));
                let mid = [(xa[0] + xb[0]) / 2.0, (xa[1] + xb[1]) / 2.0, (xa[2] + xb[2]) / 2.0];
                let l = s.barycentric(&mid);
                let t = crate::mesh::sub(xb, xa);
                for (&ce, &[i, j]) in coarse.cell_edges(k).iter().zip(local_edges(dim)) {
                    let w = snap(crate::mesh::dot3(s.whitney(i, j, &l), t), 2.0 * ratio * ratio);
                    if w.abs() > 1e-12 {
                        trip.push((e, ce, w));
                    }
                }
            }
            (fine.num_edges(), coarse.num_edges())
        }
        other => {
            return Err(Error::IncompatibleSpaces(format!("no embedding implemented for {other}")));
        }
    };
    Ok(SparseOperator::new(
        SpaceTag::new(family, fine),
        SpaceTag::new(family, coarse),
        CsrMatrix::from_triplets(nrows, ncols, &trip),
    ))
}
