//! Localized orthogonal decomposition: patch correctors constrained to the kernel of the
//! projection, and the corrected coarse Galerkin systems built from them.

use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use crate::assembly::{assemble_load_on_cells, element_matrix, LoadSpec, Materials};
use crate::error::{Error, Result};
use crate::fe_spaces::element::Simplex;
use crate::linsolve::{Redundancy, SaddleFactor, SolveError};
use crate::mesh::{layer_cells, EntityLocation, Mesh, NestedPair, Patch, PatchKind};
use crate::sparse::{max_abs, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryCondition {
    /// Zero curl flux, imposed weakly.
    Natural,
    /// Zero tangential trace, imposed in the space.
    Essential,
}

impl fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryCondition::Natural => "natural",
            BoundaryCondition::Essential => "essential",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Localization {
    /// Patches of `m` cell layers around each coarse cell.
    Layers(usize),
    /// Every patch is the whole domain.
    Global,
}

impl fmt::Display for Localization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Localization::Layers(m) => write!(f, "m{m}"),
            Localization::Global => f.write_str("global"),
        }
    }
}

/// Which coarse cells receive a source corrector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SourceSelection {
    #[default]
    None,
    /// Cells whose closure meets the domain boundary.
    Boundary,
    /// Cells whose corrector patch meets the domain boundary.
    PatchBoundary,
    All,
}

impl FromStr for SourceSelection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "boundary" => Ok(Self::Boundary),
            "patch-boundary" => Ok(Self::PatchBoundary),
            "all" => Ok(Self::All),
            _ => Err(Error::Config(format!("unknown source correction '{s}'"))),
        }
    }
}

impl fmt::Display for SourceSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Boundary => "boundary",
            Self::PatchBoundary => "patch-boundary",
            Self::All => "all",
        })
    }
}

/// Everything the corrector problems need about the discretisation.
#[derive(Clone, Copy)]
pub struct LodSetup<'a> {
    pub pair: &'a NestedPair,
    pub mats: &'a Materials,
    /// Fine curl-curl matrix.
    pub b: &'a CsrMatrix,
    /// Coarse-from-fine Nédélec embedding (fine rows, coarse columns).
    pub embed: &'a CsrMatrix,
    /// Projection matrix (coarse rows, fine columns).
    pub projection: &'a CsrMatrix,
    pub bc: BoundaryCondition,
    pub localization: Localization,
}

impl LodSetup<'_> {
    /// Coarse edges spanning the coarse trial space.
    pub fn coarse_space(&self) -> Vec<usize> {
        let coarse = &*self.pair.coarse;
        (0..coarse.num_edges())
            .filter(|&e| self.bc == BoundaryCondition::Natural || !coarse.edge_on_boundary(e))
            .collect()
    }

    /// Coarse cells of the corrector patch of `t`.
    pub fn patch_cells(&self, t: usize) -> Result<Vec<usize>> {
        let coarse = &*self.pair.coarse;
        match self.localization {
            Localization::Layers(m) => layer_cells(coarse, t, m),
            Localization::Global => Ok((0..coarse.num_cells()).collect()),
        }
    }
}

/// Free fine dofs of a patch together with the projection rows acting on them.
#[derive(Debug, Clone)]
pub struct DetailConstraints {
    pub free: Vec<usize>,
    /// Coarse edges whose projection rows survive the restriction.
    pub rows: Vec<usize>,
    /// Restricted rows, columns indexed like `free`.
    pub matrix: CsrMatrix,
}

/// Restricts the projection to the fine dofs of `patch` that a corrector may use: interior
/// dofs, plus dofs on the domain boundary when the boundary condition is natural.
pub fn detail_constraints(
    fine: &Mesh,
    patch: &Patch,
    projection: &CsrMatrix,
    projection_t: &CsrMatrix,
    bc: BoundaryCondition,
) -> Result<DetailConstraints> {
    let free = patch.edges.filter(|l| match l {
        EntityLocation::Interior => true,
        EntityLocation::DomainBoundary => bc == BoundaryCondition::Natural,
        EntityLocation::InteriorBoundary => false,
    });
    if free.is_empty() {
        return Err(Error::EmptyPatch { cell: patch.anchor });
    }
    let mut map = vec![usize::MAX; fine.num_edges()];
    let mut rows = Vec::new();
    for (k, &f) in free.iter().enumerate() {
        map[f] = k;
        rows.extend_from_slice(projection_t.row(f).0);
    }
    rows.sort_unstable();
    rows.dedup();
    let all = projection.select(&rows, &map, free.len());
    let keep: Vec<usize> = (0..rows.len()).filter(|&i| all.row(i).1.iter().any(|&v| v != 0.0)).collect();
    let rows: Vec<usize> = keep.iter().map(|&i| rows[i]).collect();
    let matrix = projection.select(&rows, &map, free.len());
    Ok(DetailConstraints { free, rows, matrix })
}

/// Fine vector `B_T x` for `x` the embedding of coarse edge function `e`, with `B_T` the
/// curl-curl form restricted to coarse cell `t`. Sorted by fine edge.
fn cell_response(setup: &LodSetup, t: usize, e: usize) -> Vec<(usize, f64)> {
    let fine = &*setup.pair.fine;
    let mut acc: Vec<(usize, f64)> = Vec::new();
    for &c in setup.pair.children(t) {
        let s = Simplex::new(fine.dim(), fine.cell_points(c));
        let m = element_matrix(&s, setup.mats.mu[c], setup.mats.kappa[c]);
        let dofs = fine.cell_edges(c);
        let x: Vec<f64> = dofs.iter().map(|&d| setup.embed.get(d, e)).collect();
        for (i, &d) in dofs.iter().enumerate() {
            let y: f64 = (0..dofs.len()).map(|j| m[i][j] * x[j]).sum();
            acc.push((d, y));
        }
    }
    acc.sort_by_key(|p| p.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(acc.len());
    for (d, v) in acc {
        match out.last_mut() {
            Some(last) if last.0 == d => last.1 += v,
            _ => out.push((d, v)),
        }
    }
    out
}

/// Factorised corrector problem of one patch.
struct PatchProblem {
    cells: Vec<usize>,
    constraints: DetailConstraints,
    factor: SaddleFactor,
}

/// Accumulates sparse fine columns in cell order; switches to dense storage once the triplet
/// list would outgrow it. Both representations sum in the same order.
struct ColumnAccumulator {
    nrows: usize,
    ncols: usize,
    triplets: Vec<(usize, usize, f64)>,
    dense: Option<Mat<f64>>,
}

impl ColumnAccumulator {
    fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            triplets: Vec::new(),
            dense: None,
        }
    }

    fn add(&mut self, row: usize, col: usize, v: f64) {
        if let Some(d) = &mut self.dense {
            d[(row, col)] += v;
            return;
        }
        self.triplets.push((row, col, v));
        if self.triplets.len() > self.nrows * self.ncols / 4 {
            let mut d = Mat::<f64>::zeros(self.nrows, self.ncols);
            for (i, j, v) in self.triplets.drain(..) {
                d[(i, j)] += v;
            }
            self.dense = Some(d);
        }
    }

    fn finish(self) -> CsrMatrix {
        match self.dense {
            Some(d) => CsrMatrix::from_dense(&d),
            None => CsrMatrix::from_triplets(self.nrows, self.ncols, &self.triplets),
        }
    }
}

/// Correctors for every coarse cell, summed into the global corrector.
#[derive(Debug, Clone)]
pub struct CorrectorBasis {
    /// Fine rows, one column per coarse edge (columns outside the coarse space are empty).
    pub correctors: CsrMatrix,
    pub bc: BoundaryCondition,
    pub localization: Localization,
    /// Largest `|C w|` over all local corrector solves.
    pub constraint_residual: f64,
    /// Number of distinct patch factorisations.
    pub factorizations: usize,
}

/// Per-cell source correctors and their sum.
#[derive(Debug, Clone, Default)]
pub struct SourceCorrectorSet {
    pub selection: SourceSelection,
    pub cells: Vec<usize>,
    pub vectors: Vec<Vec<(usize, f64)>>,
    pub total: Vec<f64>,
}

fn selected(setup: &LodSetup, selection: SourceSelection, t: usize, patch: &[usize]) -> bool {
    let coarse = &*setup.pair.coarse;
    match selection {
        SourceSelection::None => false,
        SourceSelection::Boundary => coarse.cell_touches_boundary(t),
        SourceSelection::PatchBoundary => patch.iter().any(|&c| coarse.cell_touches_boundary(c)),
        SourceSelection::All => true,
    }
}

/// Solves all element corrector problems and, for the selected cells, the source corrector
/// problems on the same patches.
pub fn compute_correctors(
    setup: &LodSetup,
    source: Option<(&LoadSpec, SourceSelection)>,
) -> Result<(CorrectorBasis, SourceCorrectorSet)> {
    let (coarse, fine) = (&*setup.pair.coarse, &*setup.pair.fine);
    let nf = fine.num_edges();
    let projection_t = setup.projection.transpose();
    let in_space = {
        let mut v = vec![false; coarse.num_edges()];
        for e in setup.coarse_space() {
            v[e] = true;
        }
        v
    };
    let mut acc = ColumnAccumulator::new(nf, coarse.num_edges());
    let mut sources = SourceCorrectorSet {
        selection: source.map_or(SourceSelection::None, |s| s.1),
        total: vec![0.0; if source.is_some() { nf } else { 0 }],
        ..Default::default()
    };
    let mut current: Option<PatchProblem> = None;
    let mut factorizations = 0;
    let mut constraint_residual: f64 = 0.0;

    for t in 0..coarse.num_cells() {
        let cells = setup.patch_cells(t)?;
        if current.as_ref().is_none_or(|p| p.cells != cells) {
            let fine_patch = Patch::from_cells(fine, setup.pair.fine_cells_of(&cells), PatchKind::Cells, t);
            let constraints = detail_constraints(fine, &fine_patch, setup.projection, &projection_t, setup.bc)?;
            let a = setup.b.principal(&constraints.free);
            let factor = SaddleFactor::new(&a, &constraints.matrix, Redundancy::Drop).map_err(|source| {
                Error::LocalSolve {
                    entity: "cell",
                    index: t,
                    source,
                }
            })?;
            factorizations += 1;
            current = Some(PatchProblem {
                cells,
                constraints,
                factor,
            });
        }
        let problem = current.as_ref().expect("patch problem set above");
        let free = &problem.constraints.free;

        let edges: Vec<usize> = coarse.cell_edges(t).iter().copied().filter(|&e| in_space[e]).collect();
        let with_source = match source {
            Some((_, sel)) => selected(setup, sel, t, &problem.cells),
            None => false,
        };
        let ncols = edges.len() + usize::from(with_source);
        if ncols == 0 {
            continue;
        }
        let mut rhs = Mat::<f64>::zeros(free.len(), ncols);
        for (k, &e) in edges.iter().enumerate() {
            for (d, v) in cell_response(setup, t, e) {
                if let Ok(i) = free.binary_search(&d) {
                    rhs[(i, k)] = -v;
                }
            }
        }
        if with_source {
            let f = source.expect("source present").0;
            let load = assemble_load_on_cells(fine, f, setup.pair.children(t).iter().copied());
            for (i, &d) in free.iter().enumerate() {
                rhs[(i, edges.len())] = load[d];
            }
        }
        let w = problem.factor.solve_homogeneous(&rhs);
        for k in 0..ncols {
            let col: Vec<f64> = (0..free.len()).map(|i| w[(i, k)]).collect();
            constraint_residual = constraint_residual.max(max_abs(&problem.constraints.matrix.mul_vec(&col)));
        }
        for (k, &e) in edges.iter().enumerate() {
            for (i, &d) in free.iter().enumerate() {
                acc.add(d, e, w[(i, k)]);
            }
        }
        if with_source {
            let k = edges.len();
            let v: Vec<(usize, f64)> = free.iter().enumerate().map(|(i, &d)| (d, w[(i, k)])).collect();
            for &(d, x) in &v {
                sources.total[d] += x;
            }
            sources.cells.push(t);
            sources.vectors.push(v);
        }
    }
    Ok((
        CorrectorBasis {
            correctors: acc.finish(),
            bc: setup.bc,
            localization: setup.localization,
            constraint_residual,
            factorizations,
        },
        sources,
    ))
}

/// Element correctors only.
pub fn assemble_global_corrector(setup: &LodSetup) -> Result<CorrectorBasis> {
    compute_correctors(setup, None).map(|r| r.0)
}

/// `max |P K|` over all corrector columns.
pub fn kernel_residual(projection: &CsrMatrix, correctors: &CsrMatrix) -> f64 {
    projection.matmul(correctors).max_abs()
}

#[derive(Debug, Clone)]
pub struct LodStats {
    /// `max |A - A^T| / max |A|` of the coarse matrix before symmetrisation.
    pub coarse_asymmetry: f64,
    pub coarse_dofs: usize,
}

#[derive(Debug, Clone)]
pub struct MultiscaleSolution {
    /// Coefficients on all coarse edges (zero outside the coarse space).
    pub coarse: Vec<f64>,
    pub fine: Vec<f64>,
    pub bc: BoundaryCondition,
    pub localization: Localization,
    pub sources: SourceSelection,
    pub stats: LodStats,
}

/// Corrected coarse basis `Embed + K`, restricted to the coarse space columns.
pub fn corrected_basis(setup: &LodSetup, basis: Option<&CorrectorBasis>) -> CsrMatrix {
    let space = setup.coarse_space();
    let mut map = vec![usize::MAX; setup.embed.ncols()];
    for (k, &e) in space.iter().enumerate() {
        map[e] = k;
    }
    let all: Vec<usize> = (0..setup.embed.nrows()).collect();
    let embed = setup.embed.select(&all, &map, space.len());
    match basis {
        Some(b) => embed.add_scaled(1.0, &b.correctors.select(&all, &map, space.len()), 1.0),
        None => embed,
    }
}

/// Dense Galerkin matrix `Phi^T B Phi`.
pub fn galerkin_matrix(b: &CsrMatrix, phi: &CsrMatrix) -> Mat<f64> {
    let n = phi.ncols();
    let y = b.matmul(phi);
    if phi.nnz() * 4 > phi.nrows() * n {
        let pd = phi.to_dense();
        let yd = y.to_dense();
        return pd.transpose() * &yd;
    }
    let mut a = Mat::<f64>::zeros(n, n);
    for k in 0..phi.nrows() {
        let (pc, pv) = phi.row(k);
        let (yc, yv) = y.row(k);
        for (&i, &p) in pc.iter().zip(pv) {
            for (&j, &q) in yc.iter().zip(yv) {
                a[(i, j)] += p * q;
            }
        }
    }
    a
}

/// Solves `Phi^T B Phi u = Phi^T (load - B g)` and returns the coarse coefficients, the
/// reconstruction `Phi u + g`, and statistics.
pub fn solve_galerkin(b: &CsrMatrix, phi: &CsrMatrix, load: &[f64], g: Option<&[f64]>) -> Result<(Vec<f64>, Vec<f64>, LodStats)> {
    let n = phi.ncols();
    let mut a = galerkin_matrix(b, phi);
    let scale = a.norm_max().max(f64::MIN_POSITIVE);
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((a[(i, j)] - a[(j, i)]).abs());
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
    let mut rhs_fine = load.to_vec();
    if let Some(g) = g {
        for (r, bg) in rhs_fine.iter_mut().zip(b.mul_vec(g)) {
            *r -= bg;
        }
    }
    let rhs = phi.tr_mul_vec(&rhs_fine);
    let llt = a.llt(Side::Lower).map_err(|e| match e {
        faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index } => {
            SolveError::NotPositiveDefinite { pivot: index }
        }
    })?;
    let u = llt.solve(Mat::from_fn(n, 1, |i, _| rhs[i]));
    let u: Vec<f64> = (0..n).map(|i| u[(i, 0)]).collect();
    let mut fine = phi.mul_vec(&u);
    if let Some(g) = g {
        for (x, y) in fine.iter_mut().zip(g) {
            *x += y;
        }
    }
    Ok((
        u,
        fine,
        LodStats {
            coarse_asymmetry: asym / scale,
            coarse_dofs: n,
        },
    ))
}

/// The multiscale approximation for a fine load vector `load`, with precomputed correctors.
pub fn solve_lod(
    setup: &LodSetup,
    basis: &CorrectorBasis,
    load: &[f64],
    sources: Option<&SourceCorrectorSet>,
) -> Result<MultiscaleSolution> {
    let phi = corrected_basis(setup, Some(basis));
    let g = sources.filter(|s| !s.cells.is_empty()).map(|s| s.total.as_slice());
    let (u, fine, stats) = solve_galerkin(setup.b, &phi, load, g)?;
    let space = setup.coarse_space();
    let mut coarse = vec![0.0; setup.embed.ncols()];
    for (k, &e) in space.iter().enumerate() {
        coarse[e] = u[k];
    }
    Ok(MultiscaleSolution {
        coarse,
        fine,
        bc: setup.bc,
        localization: setup.localization,
        sources: sources.map_or(SourceSelection::None, |s| s.selection),
        stats,
    })
}

/// `Embed u + K u + sum of source correctors`, for coarse coefficients on all coarse edges.
pub fn reconstruct(
    embed: &CsrMatrix,
    correctors: Option<&CsrMatrix>,
    coarse: &[f64],
    sources: Option<&SourceCorrectorSet>,
) -> Vec<f64> {
    let mut u = embed.mul_vec(coarse);
    if let Some(k) = correctors {
        for (x, y) in u.iter_mut().zip(k.mul_vec(coarse)) {
            *x += y;
        }
    }
    if let Some(s) = sources {
        for v in &s.vectors {
            for &(d, x) in v {
                u[d] += x;
            }
        }
    }
    u
}

/// Binary cache of global correctors keyed by a caller-provided string.
#[derive(Debug, Clone)]
pub struct CorrectorCache {
    dir: PathBuf,
}

const CACHE_MAGIC: &[u8; 8] = b"CCLODK01";

impl CorrectorCache {
    pub fn new(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn path(&self, key: &str) -> PathBuf {
        let safe: String = key
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
            .collect();
        self.dir.join(format!("{safe}.bin"))
    }

    pub fn load(&self, key: &str) -> io::Result<Option<CsrMatrix>> {
        let path = self.path(key);
        if !path.exists() {
            return Ok(None);
        }
        read_matrix(&path).map(Some)
    }

    pub fn store(&self, key: &str, m: &CsrMatrix) -> io::Result<()> {
        let path = self.path(key);
        let tmp = path.with_extension("tmp");
        write_matrix(&tmp, m)?;
        fs::rename(tmp, path)
    }
}

fn write_matrix(path: &Path, m: &CsrMatrix) -> io::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    out.write_all(CACHE_MAGIC)?;
    for n in [m.nrows(), m.ncols(), m.nnz()] {
        out.write_all(&(n as u64).to_le_bytes())?;
    }
    for (i, j, v) in m.triplets() {
        out.write_all(&(i as u64).to_le_bytes())?;
        out.write_all(&(j as u64).to_le_bytes())?;
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()
}

fn read_matrix(path: &Path) -> io::Result<CsrMatrix> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let bad = || io::Error::new(io::ErrorKind::InvalidData, "corrupt corrector cache");
    if buf.len() < 32 || &buf[..8] != CACHE_MAGIC {
        return Err(bad());
    }
    let word = |k: usize| u64::from_le_bytes(buf[k..k + 8].try_into().unwrap());
    let (nrows, ncols, nnz) = (word(8) as usize, word(16) as usize, word(24) as usize);
    if buf.len() != 32 + 24 * nnz {
        return Err(bad());
    }
    let trip: Vec<(usize, usize, f64)> = (0..nnz)
        .map(|k| {
            let o = 32 + 24 * k;
            (word(o) as usize, word(o + 8) as usize, f64::from_bits(word(o + 16)))
        })
        .collect();
    if trip.iter().any(|&(i, j, _)| i >= nrows || j >= ncols) {
        return Err(bad());
    }
    Ok(CsrMatrix::from_triplets(nrows, ncols, &trip))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_b, assemble_load, Checkerboard, Constant};
    use crate::falk_winther::{assemble_pi_e, ProjectionOptions};
    use crate::fe_spaces::{coarse_to_fine_embedding, Family};
    use crate::linsolve::solve_spd;

    struct Fixture {
        pair: NestedPair,
        mats: Materials,
        b: CsrMatrix,
        embed: CsrMatrix,
        p: CsrMatrix,
        load: LoadSpec,
        rhs: Vec<f64>,
    }

    fn fixture(coarse: u32, fine: u32, checker: bool) -> Fixture {
        let pair = NestedPair::from_levels(2, coarse, fine).unwrap();
        let mats = if checker {
            let cb = Checkerboard::new(pair.fine.subdivisions() / 2);
            Materials::new(&pair.fine, &cb, &Constant(1.0)).unwrap()
        } else {
            Materials::uniform(&pair.fine, 1.0, 1.0)
        };
        let b = assemble_b(&pair.fine, &mats).matrix;
        let embed = coarse_to_fine_embedding(&pair, Family::Nedelec).unwrap().matrix;
        let p = assemble_pi_e(&pair, ProjectionOptions::default()).unwrap().p.matrix;
        let load = LoadSpec::new("sin", |x| {
            [(2.0 * std::f64::consts::PI * x[0]).sin(), (2.0 * std::f64::consts::PI * x[1]).sin(), 0.0]
        });
        let rhs = assemble_load(&pair.fine, &load);
        Fixture {
            pair,
            mats,
            b,
            embed,
            p,
            load,
            rhs,
        }
    }

    impl Fixture {
        fn setup(&self, bc: BoundaryCondition, localization: Localization) -> LodSetup<'_> {
            LodSetup {
                pair: &self.pair,
                mats: &self.mats,
                b: &self.b,
                embed: &self.embed,
                projection: &self.p,
                bc,
                localization,
            }
        }

        fn energy(&self, x: &[f64]) -> f64 {
            crate::sparse::dot(x, &self.b.mul_vec(x))
        }

        fn relative_error(&self, u: &[f64], reference: &[f64]) -> f64 {
            let e: Vec<f64> = u.iter().zip(reference).map(|(a, b)| a - b).collect();
            (self.energy(&e) / self.energy(reference)).sqrt()
        }
    }

    #[test]
    fn global_with_all_sources_is_exact() {
        let fx = fixture(1, 3, true);
        let setup = fx.setup(BoundaryCondition::Natural, Localization::Global);
        let (basis, sources) = compute_correctors(&setup, Some((&fx.load, SourceSelection::All))).unwrap();
        assert_eq!(basis.factorizations, 1);
        let sol = solve_lod(&setup, &basis, &fx.rhs, Some(&sources)).unwrap();
        let (reference, _) = solve_spd(&fx.b, &fx.rhs).unwrap();
        assert!(fx.relative_error(&sol.fine, &reference) < 1e-8);
        let kr = kernel_residual(&fx.p, &basis.correctors);
        assert!(kr < 1e-8, "kernel {kr} local {} max {}", basis.constraint_residual, basis.correctors.max_abs());
        assert!(basis.constraint_residual < 1e-8);
    }

    #[test]
    fn saturated_layers_match_global_bitwise() {
        let fx = fixture(1, 2, true);
        let global = assemble_global_corrector(&fx.setup(BoundaryCondition::Natural, Localization::Global)).unwrap();
        let layers = assemble_global_corrector(&fx.setup(BoundaryCondition::Natural, Localization::Layers(10))).unwrap();
        assert_eq!(global.correctors.triplets().collect::<Vec<_>>(), layers.correctors.triplets().collect::<Vec<_>>());
    }

    #[test]
    fn correctors_vanish_outside_patches_and_lie_in_kernel() {
        let fx = fixture(2, 3, true);
        let setup = fx.setup(BoundaryCondition::Natural, Localization::Layers(1));
        let basis = assemble_global_corrector(&setup).unwrap();
        let kr = kernel_residual(&fx.p, &basis.correctors);
        assert!(kr < 1e-8, "kernel {kr} local {} max {}", basis.constraint_residual, basis.correctors.max_abs());
        // column of a coarse edge: support inside the union of the patches of cells sharing it
        let coarse = &*fx.pair.coarse;
        let kt = basis.correctors.transpose();
        for e in 0..coarse.num_edges() {
            let mut cells: Vec<usize> = Vec::new();
            for t in (0..coarse.num_cells()).filter(|&t| coarse.cell_edges(t).contains(&e)) {
                cells.extend(setup.patch_cells(t).unwrap());
            }
            cells.sort_unstable();
            cells.dedup();
            let support = fx.pair.fine_edges_of(&fx.pair.fine_cells_of(&cells));
            assert!(kt.row(e).0.iter().all(|d| support.binary_search(d).is_ok()));
        }
    }

    #[test]
    fn essential_solution_has_zero_boundary_trace() {
        let fx = fixture(1, 3, true);
        let setup = fx.setup(BoundaryCondition::Essential, Localization::Layers(1));
        let basis = assemble_global_corrector(&setup).unwrap();
        let sol = solve_lod(&setup, &basis, &fx.rhs, None).unwrap();
        for e in 0..fx.pair.fine.num_edges() {
            if fx.pair.fine.edge_on_boundary(e) {
                assert!(sol.fine[e].abs() <= 1e-12);
            }
        }
        assert!(sol.stats.coarse_asymmetry < 1e-10);
    }

    #[test]
    fn lod_beats_plain_coarse_galerkin_for_smooth_coefficients() {
        let fx = fixture(1, 3, false);
        let (reference, _) = solve_spd(&fx.b, &fx.rhs).unwrap();
        let setup = fx.setup(BoundaryCondition::Natural, Localization::Layers(1));
        let basis = assemble_global_corrector(&setup).unwrap();
        let lod = solve_lod(&setup, &basis, &fx.rhs, None).unwrap();
        let (_, fem, _) = solve_galerkin(&fx.b, &corrected_basis(&setup, None), &fx.rhs, None).unwrap();
        let (el, ef) = (fx.relative_error(&lod.fine, &reference), fx.relative_error(&fem, &reference));
        assert!(el <= ef + 1e-12, "lod {el} fem {ef}");
    }

    #[test]
    fn reconstruction_is_the_stated_combination() {
        let fx = fixture(1, 2, true);
        let setup = fx.setup(BoundaryCondition::Natural, Localization::Layers(1));
        let (basis, sources) = compute_correctors(&setup, Some((&fx.load, SourceSelection::Boundary))).unwrap();
        let sol = solve_lod(&setup, &basis, &fx.rhs, Some(&sources)).unwrap();
        let again = reconstruct(&fx.embed, Some(&basis.correctors), &sol.coarse, Some(&sources));
        assert!(sol.fine.iter().zip(&again).all(|(a, b)| (a - b).abs() < 1e-12));
        let plain = reconstruct(&fx.embed, None, &sol.coarse, None);
        assert_eq!(plain, fx.embed.mul_vec(&sol.coarse));
        // Galerkin consistency: the coarse residual of the reconstruction vanishes
        let phi = corrected_basis(&setup, Some(&basis));
        let r: Vec<f64> = fx.b.mul_vec(&sol.fine).iter().zip(&fx.rhs).map(|(a, b)| a - b).collect();
        let coarse_res = phi.tr_mul_vec(&r);
        assert!(max_abs(&coarse_res) < 1e-9 * max_abs(&phi.tr_mul_vec(&fx.rhs)));
    }

    #[test]
    fn cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = CorrectorCache::new(dir.path()).unwrap();
        let m = CsrMatrix::from_triplets(3, 2, &[(0, 1, 0.1), (2, 0, -1.0 / 3.0)]);
        assert!(cache.load("k 2d/1").unwrap().is_none());
        cache.store("k 2d/1", &m).unwrap();
        let back = cache.load("k 2d/1").unwrap().unwrap();
        assert_eq!(back.triplets().collect::<Vec<_>>(), m.triplets().collect::<Vec<_>>());
        std::fs::write(cache.path("bad"), b"nonsense").unwrap();
        assert!(cache.load("bad").is_err());
    }
}
