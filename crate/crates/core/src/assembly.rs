//! Bilinear forms, load vectors and the local coupling blocks of the projection construction.

use std::fmt;
use std::sync::Arc;

use faer::Mat;

use crate::error::{Error, Result};
use crate::fe_spaces::element::Simplex;
use crate::fe_spaces::{Family, SpaceTag, SparseOperator};
use crate::mesh::{dot3, local_edges, Mesh, NestedPair};
use crate::quadrature;
use crate::sparse::CsrMatrix;

/// A scalar coefficient field on the unit square or cube.
pub trait Coefficient: fmt::Debug + Send + Sync {
    fn value(&self, x: &[f64; 3]) -> f64;

    /// Fails if the field is not constant on every cell of `mesh`.
    fn check_resolved(&self, mesh: &Mesh) -> Result<()>;

    /// Short identifier used in cache keys.
    fn describe(&self) -> String;
}

#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl Coefficient for Constant {
    fn value(&self, _: &[f64; 3]) -> f64 {
        self.0
    }

    fn check_resolved(&self, _: &Mesh) -> Result<()> {
        Ok(())
    }

    fn describe(&self) -> String {
        format!("const{:?}", self.0)
    }
}

/// Alternating values on a grid of `blocks^dim` squares or cubes; the block at the origin is
/// `black`.
#[derive(Debug, Clone, Copy)]
pub struct Checkerboard {
    pub blocks: usize,
    pub black: f64,
    pub white: f64,
}

impl Checkerboard {
    pub fn new(blocks: usize) -> Self {
        Self {
            blocks,
            black: 1.0,
            white: 0.001,
        }
    }

    pub fn eval(&self, x: &[f64; 3], dim: usize) -> f64 {
        let parity: usize = (0..dim)
            .map(|i| ((x[i] * self.blocks as f64).floor().max(0.0) as usize).min(self.blocks - 1))
            .sum();
        if parity.is_multiple_of(2) {
            self.black
        } else {
            self.white
        }
    }
}

impl Coefficient for Checkerboard {
    fn value(&self, x: &[f64; 3]) -> f64 {
        // Points of a 2D mesh carry a zero third coordinate, which lands in block 0.
        self.eval(x, 3)
    }

    fn check_resolved(&self, mesh: &Mesh) -> Result<()> {
        if !mesh.subdivisions().is_multiple_of(self.blocks) {
            return Err(Error::UnresolvedCoefficient(format!(
                "{} blocks per side on a mesh with {} subdivisions",
                self.blocks,
                mesh.subdivisions()
            )));
        }
        Ok(())
    }

    fn describe(&self) -> String {
        format!("checker{}_{:?}_{:?}", self.blocks, self.black, self.white)
    }
}

/// Cell-wise values of the curl coefficient `mu` and the mass coefficient `kappa`.
#[derive(Debug, Clone)]
pub struct Materials {
    pub mu: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl Materials {
    /// Evaluates both coefficients at cell barycenters after checking they are resolved.
    pub fn new(mesh: &Mesh, mu: &dyn Coefficient, kappa: &dyn Coefficient) -> Result<Self> {
        mu.check_resolved(mesh)?;
        kappa.check_resolved(mesh)?;
        let eval = |c: &dyn Coefficient| (0..mesh.num_cells()).map(|k| c.value(&mesh.barycenter(k))).collect();
        Ok(Self {
            mu: eval(mu),
            kappa: eval(kappa),
        })
    }

    pub fn uniform(mesh: &Mesh, mu: f64, kappa: f64) -> Self {
        Self {
            mu: vec![mu; mesh.num_cells()],
            kappa: vec![kappa; mesh.num_cells()],
        }
    }
}

/// Element matrix of `(mu curl u, curl v) + (kappa u, v)` in local edge order.
pub fn element_matrix(s: &Simplex, mu: f64, kappa: f64) -> [[f64; 6]; 6] {
    let edges = local_edges(s.dim);
    let curls: Vec<[f64; 3]> = edges.iter().map(|&[a, b]| s.whitney_curl(a, b)).collect();
    let mut m = [[0.0; 6]; 6];
    for i in 0..edges.len() {
        for j in 0..edges.len() {
            m[i][j] = mu * s.volume * dot3(curls[i], curls[j]) + kappa * s.whitney_mass(edges[i], edges[j]);
        }
    }
    m
}

fn cell_simplex(mesh: &Mesh, c: usize) -> Simplex {
    Simplex::new(mesh.dim(), mesh.cell_points(c))
}

fn b_triplets(mesh: &Mesh, mats: &Materials, cells: impl Iterator<Item = usize>) -> Vec<(usize, usize, f64)> {
    let mut trip = Vec::new();
    for c in cells {
        let m = element_matrix(&cell_simplex(mesh, c), mats.mu[c], mats.kappa[c]);
        let dofs = mesh.cell_edges(c);
        for (i, &ei) in dofs.iter().enumerate() {
            for (j, &ej) in dofs.iter().enumerate() {
                trip.push((ei, ej, m[i][j]));
            }
        }
    }
    trip
}

/// Global curl-curl matrix on the Nédélec space.
pub fn assemble_b(mesh: &Mesh, mats: &Materials) -> SparseOperator {
    let tag = SpaceTag::new(Family::Nedelec, mesh);
    let n = mesh.num_edges();
    SparseOperator::new(tag, tag, CsrMatrix::from_triplets(n, n, &b_triplets(mesh, mats, 0..mesh.num_cells())))
}

/// Contribution of the given cells, as a matrix on all edges.
pub fn assemble_b_on_cells(mesh: &Mesh, mats: &Materials, cells: &[usize]) -> CsrMatrix {
    let n = mesh.num_edges();
    CsrMatrix::from_triplets(n, n, &b_triplets(mesh, mats, cells.iter().copied()))
}

/// Single-cell contribution `B_T`.
pub fn assemble_b_cell(mesh: &Mesh, mats: &Materials, cell: usize) -> Result<SparseOperator> {
    mesh.check_cell(cell)?;
    let tag = SpaceTag::new(Family::Nedelec, mesh);
    Ok(SparseOperator::new(tag, tag, assemble_b_on_cells(mesh, mats, &[cell])))
}

pub type VectorField = dyn Fn(&[f64; 3]) -> [f64; 3] + Send + Sync;

/// A vector-valued source term.
#[derive(Clone)]
pub struct LoadSpec {
    pub name: String,
    pub source: Arc<VectorField>,
}

impl fmt::Debug for LoadSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LoadSpec").field("name", &self.name).finish()
    }
}

impl LoadSpec {
    pub fn new(name: impl Into<String>, source: impl Fn(&[f64; 3]) -> [f64; 3] + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            source: Arc::new(source),
        }
    }

    pub fn zero() -> Self {
        Self::new("zero", |_| [0.0; 3])
    }

    pub fn eval(&self, x: &[f64; 3]) -> [f64; 3] {
        (self.source)(x)
    }
}

/// `int_cells f . psi_e` for every edge, with a degree-4 rule per cell.
pub fn assemble_load_on_cells(mesh: &Mesh, f: &LoadSpec, cells: impl Iterator<Item = usize>) -> Vec<f64> {
    let rule = quadrature::degree4(mesh.dim());
    let edges = local_edges(mesh.dim());
    let mut b = vec![0.0; mesh.num_edges()];
    for c in cells {
        let s = cell_simplex(mesh, c);
        let dofs = mesh.cell_edges(c);
        let mut local = [0.0; 6];
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let fx = f.eval(&s.point(l));
            for (k, &[a, bb]) in edges.iter().enumerate() {
                local[k] += w * dot3(fx, s.whitney(a, bb, l));
            }
        }
        for (k, &e) in dofs.iter().enumerate() {
            b[e] += s.volume * local[k];
        }
    }
    b
}

pub fn assemble_load(mesh: &Mesh, f: &LoadSpec) -> Vec<f64> {
    assemble_load_on_cells(mesh, f, 0..mesh.num_cells())
}

/// The pairings needed by the local projection problems. `Coarse*` kinds live on the coarse
/// mesh; `Cross*` kinds pair coarse test functions with fine trial functions; `FineMean`
/// integrates fine hat functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// `int grad lambda_z . grad lambda_w` on coarse vertices.
    GradGrad,
    /// `int grad lambda_z . psi_E`, rows coarse vertices, columns coarse edges.
    GradEdge,
    /// `int lambda_z`, rows coarse vertices, one column.
    Mean,
    /// `int curl psi_E . curl psi_F` on coarse edges.
    CurlCurl,
    /// `int grad lambda_z^H . psi_e^h`, rows coarse vertices, columns fine edges.
    CrossGradEdge,
    /// `int curl psi_E^H . curl psi_e^h`, rows coarse edges, columns fine edges.
    CrossCurlCurl,
    /// `int grad lambda_z^H . grad lambda_v^h`, rows coarse vertices, columns fine vertices.
    CrossGradGrad,
    /// `int lambda_v^h`, rows fine vertices, one column.
    FineMean,
}

/// A dense block indexed by sorted global entity lists.
#[derive(Debug, Clone)]
pub struct LocalBlock {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub data: Mat<f64>,
}

impl LocalBlock {
    pub fn row_index(&self, entity: usize) -> Option<usize> {
        self.rows.binary_search(&entity).ok()
    }
}

fn sorted_entities(cells: &[usize], f: impl Fn(usize) -> Vec<usize>) -> Vec<usize> {
    let mut v: Vec<usize> = cells.iter().flat_map(|&c| f(c)).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Assembles `kind` over the union of the given coarse cells.
pub fn assemble_coupling(pair: &NestedPair, kind: Coupling, coarse_cells: &[usize]) -> LocalBlock {
    let (coarse, fine) = (&*pair.coarse, &*pair.fine);
    let dim = coarse.dim();
    let cverts = || sorted_entities(coarse_cells, |c| coarse.cell(c).to_vec());
    let cedges = || sorted_entities(coarse_cells, |c| coarse.cell_edges(c).to_vec());
    let fcells = || pair.fine_cells_of(coarse_cells);
    let idx = |list: &[usize], e: usize| list.binary_search(&e).unwrap();

    match kind {
        Coupling::GradGrad | Coupling::GradEdge | Coupling::Mean | Coupling::CurlCurl => {
            let rows = if kind == Coupling::CurlCurl { cedges() } else { cverts() };
            let cols = match kind {
                Coupling::GradGrad => rows.clone(),
                Coupling::GradEdge => cedges(),
                Coupling::Mean => vec![0],
                _ => rows.clone(),
            };
            let mut data = Mat::<f64>::zeros(rows.len(), cols.len());
            for &c in coarse_cells {
                let s = cell_simplex(coarse, c);
                let verts = coarse.cell(c);
                let edges = coarse.cell_edges(c);
                match kind {
                    Coupling::GradGrad => {
                        for (i, &z) in verts.iter().enumerate() {
                            for (j, &w) in verts.iter().enumerate() {
                                data[(idx(&rows, z), idx(&cols, w))] += s.volume * dot3(s.grads[i], s.grads[j]);
                            }
                        }
                    }
                    Coupling::GradEdge => {
                        for (i, &z) in verts.iter().enumerate() {
                            for (&e, &[a, b]) in edges.iter().zip(local_edges(dim)) {
                                data[(idx(&rows, z), idx(&cols, e))] += dot3(s.grads[i], s.whitney_mean(a, b));
                            }
                        }
                    }
                    Coupling::Mean => {
                        for &z in verts {
                            data[(idx(&rows, z), 0)] += s.volume / (dim + 1) as f64;
                        }
                    }
                    _ => {
                        let le = local_edges(dim);
                        for (i, &e) in edges.iter().enumerate() {
                            for (j, &f) in edges.iter().enumerate() {
                                let ci = s.whitney_curl(le[i][0], le[i][1]);
                                let cj = s.whitney_curl(le[j][0], le[j][1]);
                                data[(idx(&rows, e), idx(&cols, f))] += s.volume * dot3(ci, cj);
                            }
                        }
                    }
                }
            }
            LocalBlock { rows, cols, data }
        }
        Coupling::CrossGradEdge | Coupling::CrossCurlCurl | Coupling::CrossGradGrad | Coupling::FineMean => {
            let fc = fcells();
            let rows = match kind {
                Coupling::CrossCurlCurl => cedges(),
                Coupling::FineMean => sorted_entities(&fc, |c| fine.cell(c).to_vec()),
                _ => cverts(),
            };
            let cols = match kind {
                Coupling::CrossGradGrad => sorted_entities(&fc, |c| fine.cell(c).to_vec()),
                Coupling::FineMean => vec![0],
                _ => sorted_entities(&fc, |c| fine.cell_edges(c).to_vec()),
            };
            let mut data = Mat::<f64>::zeros(rows.len(), cols.len());
            let le = local_edges(dim);
            for &c in &fc {
                let k = pair.parent_of(c);
                let sc = cell_simplex(coarse, k);
                let sf = cell_simplex(fine, c);
                match kind {
                    Coupling::CrossGradEdge => {
                        for (i, &z) in coarse.cell(k).iter().enumerate() {
                            for (&e, &[a, b]) in fine.cell_edges(c).iter().zip(le) {
                                data[(idx(&rows, z), idx(&cols, e))] += dot3(sc.grads[i], sf.whitney_mean(a, b));
                            }
                        }
                    }
                    Coupling::CrossCurlCurl => {
                        for (&ce, &[a, b]) in coarse.cell_edges(k).iter().zip(le) {
                            let cc = sc.whitney_curl(a, b);
                            for (&fe, &[p, q]) in fine.cell_edges(c).iter().zip(le) {
                                data[(idx(&rows, ce), idx(&cols, fe))] += sf.volume * dot3(cc, sf.whitney_curl(p, q));
                            }
                        }
                    }
                    Coupling::CrossGradGrad => {
                        for (i, &z) in coarse.cell(k).iter().enumerate() {
                            for (j, &v) in fine.cell(c).iter().enumerate() {
                                data[(idx(&rows, z), idx(&cols, v))] += sf.volume * dot3(sc.grads[i], sf.grads[j]);
                            }
                        }
                    }
                    _ => {
                        for &v in fine.cell(c) {
                            data[(idx(&rows, v), 0)] += sf.volume / (dim + 1) as f64;
                        }
                    }
                }
            }
            LocalBlock { rows, cols, data }
        }
    }
}
