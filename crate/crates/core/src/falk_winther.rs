//! Matrix representation of the commuting projections from the fine Lagrange and Nédélec
//! spaces onto their coarse counterparts, assembled edge by edge from local patch problems.

use std::collections::BTreeMap;
use std::io::Write;

use faer::Mat;

use crate::assembly::{assemble_coupling, Coupling, LocalBlock};
use crate::error::{Error, Result};
use crate::fe_spaces::element::Simplex;
use crate::fe_spaces::{coarse_to_fine_embedding, Family, SpaceTag, SparseOperator};
use crate::linsolve::{solve_dense_kkt, SolveError};
use crate::mesh::{dot3, local_edges, EntityLocation, Mesh, NestedPair, Patch, TET_FACES};
use crate::quadrature;
use crate::sparse::CsrMatrix;

/// Relative residual required from every local solve.
pub const LOCAL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionVariant {
    Standard,
    /// Rows of coarse boundary edges set to zero, so the image has zero tangential trace.
    BoundaryZeroed,
}

/// Flux field with zero normal trace on an extended edge patch, stored by its coefficients on
/// the interior facets of the patch (faces in 3D; edges in 2D, using rotated edge functions).
#[derive(Debug, Clone)]
pub struct FluxField {
    pub edge: usize,
    pub cells: Vec<usize>,
    pub facets: Vec<usize>,
    pub coeffs: Vec<f64>,
    /// Largest cell-wise `|div z + delta z0|`.
    pub divergence_defect: f64,
}

impl FluxField {
    /// Value on coarse cell `cell` at barycentric point `lambda`; zero off the patch.
    pub fn value(&self, mesh: &Mesh, s: &Simplex, cell: usize, lambda: &[f64; 4]) -> [f64; 3] {
        let mut v = [0.0; 3];
        if self.cells.binary_search(&cell).is_err() {
            return v;
        }
        for (k, basis) in local_flux_bases(mesh, cell) {
            if let Ok(j) = self.facets.binary_search(&k) {
                let phi = basis.eval(s, lambda);
                for i in 0..3 {
                    v[i] += self.coeffs[j] * phi[i];
                }
            }
        }
        v
    }

    /// Cell-wise divergence.
    pub fn divergence(&self, mesh: &Mesh) -> Vec<(usize, f64)> {
        self.cells
            .iter()
            .map(|&c| {
                let s = Simplex::new(mesh.dim(), mesh.cell_points(c));
                let div = local_flux_bases(mesh, c)
                    .filter_map(|(k, b)| self.facets.binary_search(&k).ok().map(|j| self.coeffs[j] * b.div(&s)))
                    .sum();
                (c, div)
            })
            .collect()
    }
}

#[derive(Clone, Copy)]
enum FluxBasis {
    Face([usize; 3]),
    /// Edge function rotated by a quarter turn, `(a, b) -> (b, -a)`; its divergence is the
    /// scalar curl of the edge function.
    RotatedEdge([usize; 2]),
}

impl FluxBasis {
    fn eval(&self, s: &Simplex, l: &[f64; 4]) -> [f64; 3] {
        match *self {
            FluxBasis::Face(f) => s.rt_face(f, l),
            FluxBasis::RotatedEdge([a, b]) => {
                let w = s.whitney(a, b, l);
                [w[1], -w[0], 0.0]
            }
        }
    }

    fn div(&self, s: &Simplex) -> f64 {
        match *self {
            FluxBasis::Face(f) => s.rt_face_div(f),
            FluxBasis::RotatedEdge([a, b]) => s.whitney_curl(a, b)[2],
        }
    }
}

fn local_flux_bases(mesh: &Mesh, cell: usize) -> impl Iterator<Item = (usize, FluxBasis)> + '_ {
    let dim = mesh.dim();
    let n = if dim == 3 { 4 } else { 3 };
    (0..n).map(move |k| {
        if dim == 3 {
            (mesh.cell_faces(cell)[k], FluxBasis::Face(TET_FACES[k]))
        } else {
            (mesh.cell_edges(cell)[k], FluxBasis::RotatedEdge(local_edges(2)[k]))
        }
    })
}

/// Cell values of the normalised indicator of the nodal patch of `y`.
pub fn compute_z0(mesh: &Mesh, y: usize) -> Result<Vec<(usize, f64)>> {
    let patch = Patch::nodal(mesh, y)?;
    let area: f64 = patch.cells.iter().map(|&c| mesh.cell_volume(c)).sum();
    Ok(patch.cells.iter().map(|&c| (c, 1.0 / area)).collect())
}

/// `z0` of the head of `e` minus `z0` of its tail, on the cells of the extended patch.
pub fn delta_z0(mesh: &Mesh, e: usize) -> Result<Vec<(usize, f64)>> {
    mesh.check_edge(e)?;
    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    for (c, v) in compute_z0(mesh, mesh.edge_head(e))? {
        *acc.entry(c).or_default() += v;
    }
    for (c, v) in compute_z0(mesh, mesh.edge_tail(e))? {
        *acc.entry(c).or_default() -= v;
    }
    Ok(acc.into_iter().collect())
}

fn local_err(entity: &'static str, index: usize) -> impl Fn(SolveError) -> Error {
    move |source| Error::LocalSolve {
        entity,
        index,
        source,
    }
}

/// Flux field with `div z = -delta z0` that is orthogonal to all divergence-free fields with zero
/// normal trace on the extended patch of `e`.
///
/// Solved as the mixed Poisson problem `(z, w) + (p, div w) = 0`, `div z = -delta z0`: the first
/// equation makes `z` orthogonal to the divergence-free subspace, which on the patch is the
/// curl image of the trace-free edge (3D) or hat (2D) functions.
pub fn compute_z1(mesh: &Mesh, e: usize) -> Result<FluxField> {
    let patch = Patch::extended_edge(mesh, e)?;
    let dim = mesh.dim();
    let facets = if dim == 3 {
        patch.faces.filter(|l| l == EntityLocation::Interior)
    } else {
        patch.edges.filter(|l| l == EntityLocation::Interior)
    };
    let cells = patch.cells.clone();
    let n = facets.len();
    let nc = cells.len();
    let rule = quadrature::degree2(dim);
    let mut mass = Mat::<f64>::zeros(n, n);
    let mut div = Mat::<f64>::zeros(nc, n);
    for (ci, &c) in cells.iter().enumerate() {
        let s = Simplex::new(dim, mesh.cell_points(c));
        let local: Vec<(usize, FluxBasis)> = local_flux_bases(mesh, c)
            .filter_map(|(k, b)| facets.binary_search(&k).ok().map(|j| (j, b)))
            .collect();
        for &(i, bi) in &local {
            div[(ci, i)] = bi.div(&s);
            for &(j, bj) in &local {
                let m: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(l, w)| w * dot3(bi.eval(&s, l), bj.eval(&s, l)))
                    .sum();
                mass[(i, j)] += s.volume * m;
            }
        }
    }
    let dz: BTreeMap<usize, f64> = delta_z0(mesh, e)?.into_iter().collect();
    let target: Vec<f64> = cells.iter().map(|c| -dz.get(c).copied().unwrap_or(0.0)).collect();
    // The divergence has a one-dimensional cokernel (constants); drop the first cell's equation.
    let b = Mat::from_fn(nc - 1, n, |i, j| div[(i + 1, j)]);
    let f = Mat::<f64>::zeros(n, 1);
    let g = Mat::from_fn(nc - 1, 1, |i, _| target[i + 1]);
    let z = solve_dense_kkt(&mass, &b, &f, &g, LOCAL_TOLERANCE).map_err(local_err("edge", e))?;
    let coeffs: Vec<f64> = (0..n).map(|i| z[(i, 0)]).collect();
    let defect = (0..nc)
        .map(|ci| ((0..n).map(|j| div[(ci, j)] * coeffs[j]).sum::<f64>() - target[ci]).abs())
        .fold(0.0, f64::max);
    Ok(FluxField {
        edge: e,
        cells,
        facets,
        coeffs,
        divergence_defect: defect,
    })
}

/// `int z . psi_e` for all fine edges `e` in the patch of the field, as a sorted sparse row.
fn flux_moments(pair: &NestedPair, z: &FluxField) -> Vec<(usize, f64)> {
    let (coarse, fine) = (&*pair.coarse, &*pair.fine);
    let dim = coarse.dim();
    let rule = quadrature::degree2(dim);
    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    for c in pair.fine_cells_of(&z.cells) {
        let k = pair.parent_of(c);
        let sc = Simplex::new(dim, coarse.cell_points(k));
        let sf = Simplex::new(dim, fine.cell_points(c));
        let mut local = [0.0; 6];
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let x = sf.point(l);
            let zv = z.value(coarse, &sc, k, &sc.barycentric(&x));
            for (j, &[a, b]) in local_edges(dim).iter().enumerate() {
                local[j] += w * dot3(zv, sf.whitney(a, b, l));
            }
        }
        for (j, &fe) in fine.cell_edges(c).iter().enumerate() {
            *acc.entry(fe).or_default() += sf.volume * local[j];
        }
    }
    acc.into_iter().collect()
}

/// Flux-weighted averages of fine Nédélec functions, one row per coarse edge.
pub fn assemble_m1(pair: &NestedPair, z1: &[FluxField]) -> SparseOperator {
    let rows: Vec<Vec<(usize, f64)>> = z1.iter().map(|z| flux_moments(pair, z)).collect();
    SparseOperator::new(
        SpaceTag::new(Family::Nedelec, &pair.coarse),
        SpaceTag::new(Family::Nedelec, &pair.fine),
        CsrMatrix::from_rows(pair.fine.num_edges(), rows),
    )
}

/// Mean-free discrete Neumann problem on the nodal patch of `y` with data `coupling`.
fn neumann_block(pair: &NestedPair, y: usize, data: Coupling) -> Result<LocalBlock> {
    pair.coarse.check_vertex(y)?;
    let cells = pair.coarse.vertex_cells(y).to_vec();
    let a = assemble_coupling(pair, Coupling::GradGrad, &cells);
    let mean = assemble_coupling(pair, Coupling::Mean, &cells);
    let rhs = assemble_coupling(pair, data, &cells);
    let b = Mat::from_fn(1, a.rows.len(), |_, j| mean.data[(j, 0)]);
    let g = Mat::<f64>::zeros(1, rhs.cols.len());
    let q = solve_dense_kkt(&a.data, &b, &rhs.data, &g, LOCAL_TOLERANCE).map_err(local_err("vertex", y))?;
    Ok(LocalBlock {
        rows: a.rows,
        cols: rhs.cols,
        data: q,
    })
}

/// Local potential of fine Nédélec data on the nodal patch of `y`: rows are the coarse patch
/// vertices, columns the fine patch edges.
pub fn assemble_q1y(pair: &NestedPair, y: usize) -> Result<LocalBlock> {
    neumann_block(pair, y, Coupling::CrossGradEdge)
}

/// Local Neumann projection of fine Lagrange data on the nodal patch of `y`.
pub fn assemble_q0y(pair: &NestedPair, y: usize) -> Result<LocalBlock> {
    neumann_block(pair, y, Coupling::CrossGradGrad)
}

fn block_row(block: &LocalBlock, entity: usize) -> Vec<(usize, f64)> {
    let i = block.row_index(entity).expect("anchor vertex in its patch");
    block.cols.iter().enumerate().map(|(j, &c)| (c, block.data[(i, j)])).collect()
}

fn add_into(acc: &mut BTreeMap<usize, f64>, row: &[(usize, f64)], scale: f64) {
    for &(c, v) in row {
        *acc.entry(c).or_default() += scale * v;
    }
}

/// The commuting (but non-projecting) part, from flux moments and nodal potentials.
pub fn assemble_s1(pair: &NestedPair, z1: &[FluxField]) -> Result<SparseOperator> {
    let qrows = (0..pair.coarse.num_vertices())
        .map(|y| assemble_q1y(pair, y).map(|b| block_row(&b, y)))
        .collect::<Result<Vec<_>>>()?;
    Ok(s1_from_parts(pair, z1, &qrows))
}

fn s1_from_parts(pair: &NestedPair, z1: &[FluxField], qrows: &[Vec<(usize, f64)>]) -> SparseOperator {
    let coarse = &pair.coarse;
    let rows = (0..coarse.num_edges())
        .map(|e| {
            let mut acc: BTreeMap<usize, f64> = flux_moments(pair, &z1[e]).into_iter().collect();
            add_into(&mut acc, &qrows[coarse.edge_head(e)], 1.0);
            add_into(&mut acc, &qrows[coarse.edge_tail(e)], -1.0);
            acc.into_iter().collect()
        })
        .collect();
    SparseOperator::new(
        SpaceTag::new(Family::Nedelec, coarse),
        SpaceTag::new(Family::Nedelec, &pair.fine),
        CsrMatrix::from_rows(pair.fine.num_edges(), rows),
    )
}

/// Local quasi-inverse on the extended patch of `e`: coarse Nédélec function with the same
/// curls and gradient moments as the fine data. Rows are coarse patch edges, columns fine
/// patch edges.
pub fn assemble_q1e(pair: &NestedPair, e: usize) -> Result<LocalBlock> {
    pair.coarse.check_edge(e)?;
    let cells = Patch::extended_edge(&pair.coarse, e)?.cells;
    let a = assemble_coupling(pair, Coupling::CurlCurl, &cells);
    let grad = assemble_coupling(pair, Coupling::GradEdge, &cells);
    let c = assemble_coupling(pair, Coupling::CrossCurlCurl, &cells);
    let d = assemble_coupling(pair, Coupling::CrossGradEdge, &cells);
    // Gradient constraints sum to zero over the patch vertices; pin the first multiplier.
    let nv = grad.rows.len();
    let b = Mat::from_fn(nv - 1, grad.cols.len(), |i, j| grad.data[(i + 1, j)]);
    let g = Mat::from_fn(nv - 1, d.cols.len(), |i, j| d.data[(i + 1, j)]);
    let q = solve_dense_kkt(&a.data, &b, &c.data, &g, LOCAL_TOLERANCE).map_err(local_err("edge", e))?;
    Ok(LocalBlock {
        rows: a.rows,
        cols: c.cols,
        data: q,
    })
}

#[derive(Debug, Clone)]
pub struct ProjectionSet {
    /// Fine Nédélec to coarse Nédélec.
    pub p: SparseOperator,
    /// Fine Lagrange to coarse Lagrange.
    pub pv: SparseOperator,
    pub s1: SparseOperator,
    pub z1: Vec<FluxField>,
    /// Local quasi-inverse blocks per coarse edge, when requested.
    pub q1e: Option<Vec<LocalBlock>>,
    pub variant: ProjectionVariant,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ProjectionOptions {
    pub keep_local_blocks: bool,
}

/// Builds both projections for a nested mesh pair.
pub fn assemble_pi_e(pair: &NestedPair, opts: ProjectionOptions) -> Result<ProjectionSet> {
    let coarse = &*pair.coarse;
    let z1 = (0..coarse.num_edges())
        .map(|e| compute_z1(coarse, e))
        .collect::<Result<Vec<_>>>()?;
    let qrows = (0..coarse.num_vertices())
        .map(|y| assemble_q1y(pair, y).map(|b| block_row(&b, y)))
        .collect::<Result<Vec<_>>>()?;
    let s1 = s1_from_parts(pair, &z1, &qrows);
    let embed = coarse_to_fine_embedding(pair, Family::Nedelec)?.matrix;

    let mut rows = Vec::with_capacity(coarse.num_edges());
    let mut blocks = Vec::new();
    for e in 0..coarse.num_edges() {
        let q = assemble_q1e(pair, e)?;
        let (scols, svals) = s1.matrix.row(e);
        // Coarse coefficients of S applied to the embedded patch functions.
        let mut weights = vec![0.0; q.rows.len()];
        for (&fe, &sv) in scols.iter().zip(svals) {
            let (ecols, evals) = embed.row(fe);
            for (&ce, &ev) in ecols.iter().zip(evals) {
                if let Some(i) = q.row_index(ce) {
                    weights[i] += sv * ev;
                }
            }
        }
        let own = q.row_index(e).expect("edge in its own patch");
        let mut row: Vec<f64> = (0..q.cols.len())
            .map(|j| q.data[(own, j)] - (0..q.rows.len()).map(|i| weights[i] * q.data[(i, j)]).sum::<f64>())
            .collect();
        for (&fe, &sv) in scols.iter().zip(svals) {
            let j = q.cols.binary_search(&fe).expect("S row supported in the patch");
            row[j] += sv;
        }
        rows.push(q.cols.iter().copied().zip(row).filter(|&(_, v)| v != 0.0).collect());
        if opts.keep_local_blocks {
            blocks.push(q);
        }
    }
    let p = SparseOperator::new(
        SpaceTag::new(Family::Nedelec, coarse),
        SpaceTag::new(Family::Nedelec, &pair.fine),
        CsrMatrix::from_rows(pair.fine.num_edges(), rows),
    );
    Ok(ProjectionSet {
        p,
        pv: assemble_pi_v(pair)?,
        s1,
        z1,
        q1e: opts.keep_local_blocks.then_some(blocks),
        variant: ProjectionVariant::Standard,
    })
}

/// Nodal projection: patch averages plus the local Neumann correction at each vertex.
pub fn assemble_pi_v(pair: &NestedPair) -> Result<SparseOperator> {
    let coarse = &*pair.coarse;
    let rows = (0..coarse.num_vertices())
        .map(|y| {
            let cells = coarse.vertex_cells(y).to_vec();
            let area: f64 = cells.iter().map(|&c| coarse.cell_volume(c)).sum();
            let mean = assemble_coupling(pair, Coupling::FineMean, &cells);
            let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
            for (i, &v) in mean.rows.iter().enumerate() {
                *acc.entry(v).or_default() += mean.data[(i, 0)] / area;
            }
            add_into(&mut acc, &block_row(&assemble_q0y(pair, y)?, y), 1.0);
            Ok(acc.into_iter().collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SparseOperator::new(
        SpaceTag::new(Family::Lagrange, coarse),
        SpaceTag::new(Family::Lagrange, &pair.fine),
        CsrMatrix::from_rows(pair.fine.num_vertices(), rows),
    ))
}

/// Replaces the rows of boundary coarse edges by zero.
pub fn zero_boundary_rows(ps: &ProjectionSet, coarse: &Mesh) -> ProjectionSet {
    let m = &ps.p.matrix;
    let rows = (0..m.nrows())
        .map(|e| {
            if coarse.edge_on_boundary(e) {
                Vec::new()
            } else {
                let (c, v) = m.row(e);
                c.iter().copied().zip(v.iter().copied()).collect()
            }
        })
        .collect();
    let mut out = ps.clone();
    out.p = SparseOperator::new(ps.p.rows, ps.p.cols, CsrMatrix::from_rows(m.ncols(), rows));
    out.variant = ProjectionVariant::BoundaryZeroed;
    out
}

/// Writes `row col value` lines with 17 significant digits.
pub fn write_triplets<W: Write>(m: &CsrMatrix, mut out: W) -> std::io::Result<()> {
    for (i, j, v) in m.triplets() {
        writeln!(out, "{i} {j} {v:.16e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe_spaces::gradient_incidence;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn z0_normalisation() {
        let m = Mesh::structured(2, 4).unwrap();
        let z = compute_z0(&m, 12).unwrap();
        assert_eq!(z.len(), 6);
        let total: f64 = z.iter().map(|&(c, v)| v * m.cell_volume(c)).sum();
        assert!((total - 1.0).abs() < 1e-14);
        assert!((z[0].1 - 1.0 / (6.0 * m.cell_volume(0))).abs() < 1e-12);
        for e in 0..m.num_edges() {
            let d: f64 = delta_z0(&m, e).unwrap().iter().map(|&(c, v)| v * m.cell_volume(c)).sum();
            assert!(d.abs() < 1e-14);
        }
    }

    #[test]
    fn z1_satisfies_divergence_identity() {
        for dim in [2, 3] {
            let m = Mesh::structured(dim, 2).unwrap();
            for e in 0..m.num_edges() {
                let z = compute_z1(&m, e).unwrap();
                assert!(z.divergence_defect < 1e-10, "edge {e}: {}", z.divergence_defect);
            }
        }
    }

    #[test]
    fn q1y_reproduces_coarse_potentials() {
        let pair = NestedPair::from_levels(2, 1, 2).unwrap();
        let es = coarse_to_fine_embedding(&pair, Family::Lagrange).unwrap();
        let gh = gradient_incidence(&pair.fine);
        for y in 0..pair.coarse.num_vertices() {
            let q = assemble_q1y(&pair, y).unwrap();
            let mean = assemble_coupling(&pair, Coupling::Mean, pair.coarse.vertex_cells(y));
            for w in 0..pair.coarse.num_vertices() {
                let mut hat = vec![0.0; pair.coarse.num_vertices()];
                hat[w] = 1.0;
                let u = gh.apply(&es.apply(&hat));
                let qu: Vec<f64> = (0..q.rows.len())
                    .map(|i| q.cols.iter().enumerate().map(|(j, &e)| q.data[(i, j)] * u[e]).sum())
                    .collect();
                // lambda_w restricted to the patch minus its mean
                let area: f64 = (0..mean.rows.len()).map(|i| mean.data[(i, 0)]).sum();
                let wmean = mean.row_index(w).map_or(0.0, |i| mean.data[(i, 0)]) / area;
                for (i, &z) in q.rows.iter().enumerate() {
                    let expect = if z == w { 1.0 } else { 0.0 } - wmean;
                    assert!((qu[i] - expect).abs() < 1e-11, "y {y} w {w} z {z}");
                }
            }
        }
    }

    fn projection_checks(dim: usize, coarse: u32, fine: u32) {
        let pair = NestedPair::from_levels(dim, coarse, fine).unwrap();
        let ps = assemble_pi_e(&pair, ProjectionOptions::default()).unwrap();
        let en = coarse_to_fine_embedding(&pair, Family::Nedelec).unwrap();
        let es = coarse_to_fine_embedding(&pair, Family::Lagrange).unwrap();
        let pe = ps.p.compose(&en).unwrap().matrix;
        let id = CsrMatrix::identity(pair.coarse.num_edges());
        assert!(pe.max_abs_diff(&id) < 1e-9, "P E - I = {}", pe.max_abs_diff(&id));
        assert!(ps.pv.compose(&es).unwrap().matrix.max_abs_diff(&CsrMatrix::identity(pair.coarse.num_vertices())) < 1e-9);
        let lhs = ps.p.compose(&gradient_incidence(&pair.fine)).unwrap();
        let rhs = gradient_incidence(&pair.coarse).compose(&ps.pv).unwrap();
        assert!(lhs.matrix.max_abs_diff(&rhs.matrix) < 1e-9);
        for e in 0..pair.coarse.num_edges() {
            let cells = Patch::extended_edge(&pair.coarse, e).unwrap().cells;
            let support = pair.fine_edges_of(&pair.fine_cells_of(&cells));
            let (cols, vals) = ps.p.matrix.row(e);
            for (c, v) in cols.iter().zip(vals) {
                assert!(v.abs() <= 1e-12 || support.binary_search(c).is_ok());
            }
        }
    }

    #[test]
    fn projection_identities_2d() {
        projection_checks(2, 1, 2);
    }

    #[test]
    fn projection_identities_3d() {
        projection_checks(3, 0, 1);
    }

    #[test]
    fn zeroed_variant_keeps_interior_rows() {
        let pair = NestedPair::from_levels(2, 1, 2).unwrap();
        let ps = assemble_pi_e(&pair, ProjectionOptions::default()).unwrap();
        let z = zero_boundary_rows(&ps, &pair.coarse);
        for e in 0..pair.coarse.num_edges() {
            let n = z.p.matrix.row(e).0.len();
            if pair.coarse.edge_on_boundary(e) {
                assert_eq!(n, 0);
            } else {
                assert_eq!(z.p.matrix.row(e), ps.p.matrix.row(e));
            }
        }
    }

    /// Integrates `f(cell, simplex, lambda)` over the coarse patch cells with an independent rule.
    fn patch_integral(mesh: &Mesh, cells: &[usize], f: impl Fn(usize, &Simplex, &[f64; 4]) -> f64) -> f64 {
        let rule = quadrature::collapsed_gauss(mesh.dim(), 4);
        cells
            .iter()
            .map(|&c| {
                let s = Simplex::new(mesh.dim(), mesh.cell_points(c));
                s.volume * rule.points.iter().zip(&rule.weights).map(|(l, w)| w * f(c, &s, l)).sum::<f64>()
            })
            .sum()
    }

    #[test]
    fn z1_integrates_by_parts_against_random_potentials() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dim in [2, 3] {
            let m = Mesh::structured(dim, 3).unwrap();
            for e in [0, m.num_edges() / 2, m.num_edges() - 1] {
                let z = compute_z1(&m, e).unwrap();
                let dz: BTreeMap<usize, f64> = delta_z0(&m, e).unwrap().into_iter().collect();
                for _ in 0..10 {
                    let v: Vec<f64> = (0..m.num_vertices()).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let lhs = patch_integral(&m, &z.cells, |c, s, l| {
                        let zv = z.value(&m, s, c, l);
                        m.cell(c).iter().enumerate().map(|(k, &g)| v[g] * dot3(zv, s.grads[k])).sum()
                    });
                    let rhs = patch_integral(&m, &z.cells, |c, _, l| {
                        let vl: f64 = m.cell(c).iter().enumerate().map(|(k, &g)| v[g] * l[k]).sum();
                        dz.get(&c).copied().unwrap_or(0.0) * vl
                    });
                    assert!((lhs - rhs).abs() < 1e-10, "{dim}D edge {e}: {lhs} vs {rhs}");
                }
            }
        }
    }

    #[test]
    fn z1_is_orthogonal_to_trace_free_curls() {
        for dim in [2, 3] {
            let m = Mesh::structured(dim, 3).unwrap();
            let e = m.num_edges() / 2;
            let z = compute_z1(&m, e).unwrap();
            let patch = Patch::extended_edge(&m, e).unwrap();
            // 2D: rotated gradients of interior hats; 3D: curls of interior edge functions.
            let tests = if dim == 2 { patch.vertices.interior() } else { patch.edges.interior() };
            assert!(!tests.is_empty());
            for t in tests {
                let r = patch_integral(&m, &z.cells, |c, s, l| {
                    let zv = z.value(&m, s, c, l);
                    let w = if dim == 2 {
                        match m.cell(c).iter().position(|&g| g == t) {
                            Some(k) => [s.grads[k][1], -s.grads[k][0], 0.0],
                            None => [0.0; 3],
                        }
                    } else {
                        match m.cell_edges(c).iter().position(|&g| g == t) {
                            Some(k) => {
                                let [a, b] = local_edges(3)[k];
                                s.whitney_curl(a, b)
                            }
                            None => [0.0; 3],
                        }
                    };
                    dot3(zv, w)
                });
                assert!(r.abs() < 1e-10, "{dim}D test function {t}: {r}");
            }
        }
    }

    #[test]
    fn m1_rows_match_direct_quadrature() {
        for (dim, cl, fl) in [(2, 1, 3), (3, 0, 1)] {
            let pair = NestedPair::from_levels(dim, cl, fl).unwrap();
            let z1: Vec<FluxField> = (0..pair.coarse.num_edges()).map(|e| compute_z1(&pair.coarse, e).unwrap()).collect();
            let m1 = assemble_m1(&pair, &z1).matrix.to_dense();
            let rule = quadrature::collapsed_gauss(dim, 3);
            let mut direct = Mat::<f64>::zeros(pair.coarse.num_edges(), pair.fine.num_edges());
            for (e, z) in z1.iter().enumerate() {
                for c in pair.fine_cells_of(&z.cells) {
                    let k = pair.parent_of(c);
                    let sc = Simplex::new(dim, pair.coarse.cell_points(k));
                    let sf = Simplex::new(dim, pair.fine.cell_points(c));
                    for (j, &fe) in pair.fine.cell_edges(c).iter().enumerate() {
                        let [a, b] = local_edges(dim)[j];
                        let val: f64 = rule
                            .points
                            .iter()
                            .zip(&rule.weights)
                            .map(|(l, w)| {
                                let zv = z.value(&pair.coarse, &sc, k, &sc.barycentric(&sf.point(l)));
                                let psi: Vec<f64> = (0..3).map(|i| l[a] * sf.grads[b][i] - l[b] * sf.grads[a][i]).collect();
                                w * (zv[0] * psi[0] + zv[1] * psi[1] + zv[2] * psi[2])
                            })
                            .sum();
                        direct[(e, fe)] += sf.volume * val;
                    }
                }
            }
            let diff = (0..direct.nrows())
                .flat_map(|i| (0..direct.ncols()).map(move |j| (i, j)))
                .map(|(i, j)| (direct[(i, j)] - m1[(i, j)]).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-13, "{dim}D: {diff}");
        }
    }

    #[test]
    fn q1e_reproduces_embedded_coarse_functions() {
        for (dim, cl, fl) in [(2, 2, 3), (3, 1, 2)] {
            let pair = NestedPair::from_levels(dim, cl, fl).unwrap();
            let en = coarse_to_fine_embedding(&pair, Family::Nedelec).unwrap().matrix.to_dense();
            for e in [0, pair.coarse.num_edges() / 2] {
                let q = assemble_q1e(&pair, e).unwrap();
                for (r, &hat) in q.rows.iter().enumerate() {
                    for (i, _) in q.rows.iter().enumerate() {
                        let v: f64 = q.cols.iter().enumerate().map(|(j, &f)| q.data[(i, j)] * en[(f, hat)]).sum();
                        let expect = if i == r { 1.0 } else { 0.0 };
                        assert!((v - expect).abs() < 1e-9, "{dim}D edge {e}: row {i} for {hat} = {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn q1e_solution_is_curl_orthogonal() {
        let pair = NestedPair::from_levels(2, 1, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = pair.coarse.num_edges() / 2;
        let q = assemble_q1e(&pair, e).unwrap();
        let cells = Patch::extended_edge(&pair.coarse, e).unwrap().cells;
        let a = assemble_coupling(&pair, Coupling::CurlCurl, &cells);
        let c = assemble_coupling(&pair, Coupling::CrossCurlCurl, &cells);
        let u = Mat::from_fn(q.cols.len(), 1, |_, _| rng.random_range(-1.0..1.0));
        let qu = &q.data * &u;
        // (curl (Q u - u), curl v) for coarse v may only be balanced by gradient-moment multipliers.
        let res = &a.data * &qu - &c.data * &u;
        let grad = assemble_coupling(&pair, Coupling::GradEdge, &cells);
        let g = Mat::from_fn(grad.cols.len(), grad.rows.len(), |i, j| grad.data[(j, i)]);
        let gtg = g.transpose() * &g;
        let coef = faer::linalg::solvers::Solve::solve(&gtg.full_piv_lu(), g.transpose() * &res);
        let orth = &res - &g * &coef;
        let worst = (0..orth.nrows()).map(|i| orth[(i, 0)].abs()).fold(0.0, f64::max);
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn vertex_projection_preserves_constants() {
        let pair = NestedPair::from_levels(2, 1, 3).unwrap();
        let pv = assemble_pi_v(&pair).unwrap();
        let ones = vec![1.0; pair.fine.num_vertices()];
        for v in pv.matrix.mul_vec(&ones) {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn triplets_roundtrip_exactly() {
        let pair = NestedPair::from_levels(2, 1, 2).unwrap();
        let pv = assemble_pi_v(&pair).unwrap();
        let mut buf = Vec::new();
        write_triplets(&pv.matrix, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let parsed: Vec<(usize, usize, f64)> = text
            .lines()
            .map(|l| {
                let f: Vec<&str> = l.split_whitespace().collect();
                (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
            })
            .collect();
        assert_eq!(parsed, pv.matrix.triplets().collect::<Vec<_>>());
    }
}
