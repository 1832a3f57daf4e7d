//! Experiment driver: reference solves, energy errors, convergence studies, CSV output and the
//! invariant validation suite.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use crate::assembly::{assemble_b, assemble_load, Checkerboard, Coefficient, Constant, LoadSpec, Materials};
use crate::error::{Error, Result};
use crate::falk_winther::{assemble_pi_e, compute_z1, zero_boundary_rows, ProjectionOptions, ProjectionSet, ProjectionVariant};
use crate::fe_spaces::{coarse_to_fine_embedding, curl_incidence, divergence_incidence, gradient_incidence, Family};
use crate::linsolve::solve_spd;
use crate::lod::{
    compute_correctors, corrected_basis, kernel_residual, solve_galerkin, solve_lod, BoundaryCondition, CorrectorCache,
    LodSetup, Localization, SourceSelection,
};
use crate::mesh::{Mesh, NestedPair, Patch};
use crate::sparse::{dot, CsrMatrix};

/// Layers per coarse level `j` when none are given.
pub const DEFAULT_LAYERS: [usize; 6] = [1, 1, 2, 2, 3, 4];

/// Coefficient pair of the fine problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Medium {
    /// `mu` and `kappa` share one 1/0.001 checkerboard.
    #[default]
    Checkerboard,
    /// Checkerboard `mu`, `kappa = 1`.
    UnitKappa,
}

impl fmt::Display for Medium {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Medium::Checkerboard => "checkerboard",
            Medium::UnitKappa => "unit-kappa",
        })
    }
}

impl FromStr for Medium {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "checkerboard" => Ok(Medium::Checkerboard),
            "unit-kappa" => Ok(Medium::UnitKappa),
            _ => Err(Error::Config(format!("invalid medium '{s}'"))),
        }
    }
}

/// The four benchmark problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Example {
    /// Natural boundary condition, source tangential to the boundary.
    One,
    /// Natural boundary condition, constant source.
    Two,
    /// Like [`Example::One`] with essential boundary condition.
    Three,
    /// Like [`Example::Two`] with essential boundary condition.
    Four,
}

impl Example {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            3 => Ok(Self::Three),
            4 => Ok(Self::Four),
            _ => Err(Error::Config(format!("example must be 1..4, got {n}"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Self::One => 1,
            Self::Two => 2,
            Self::Three => 3,
            Self::Four => 4,
        }
    }

    pub fn boundary_condition(self) -> BoundaryCondition {
        match self {
            Self::One | Self::Two => BoundaryCondition::Natural,
            Self::Three | Self::Four => BoundaryCondition::Essential,
        }
    }

    pub fn source(self, dim: usize) -> LoadSpec {
        use std::f64::consts::PI;
        match (self, dim) {
            (Self::One | Self::Three, 2) => LoadSpec::new("sin2pi", |x| [(2.0 * PI * x[0]).sin(), (2.0 * PI * x[1]).sin(), 0.0]),
            (Self::One | Self::Three, _) => LoadSpec::new("poly3d", |x| {
                [-x[0] * (x[0] - 1.0) * (2.0 * x[2] - 1.0), 0.0, x[2] * (x[2] - 1.0) * (2.0 * x[0] - 1.0)]
            }),
            (_, 2) => LoadSpec::new("ones", |_| [1.0, 1.0, 0.0]),
            (_, _) => LoadSpec::new("ones", |_| [1.0, 1.0, 1.0]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub example: Example,
    pub dim: usize,
    /// Coarse levels `j`, with `H = sqrt(dim) 2^-j`.
    pub levels: Vec<u32>,
    /// Layers per level; ignored when `ideal`.
    pub layers: Vec<usize>,
    pub ref_level: u32,
    pub source_correction: SourceSelection,
    pub pi_variant: ProjectionVariant,
    pub medium: Medium,
    /// No localization: every corrector patch is the whole domain.
    pub ideal: bool,
    pub out: Option<PathBuf>,
    /// Record wall time per row; disable for reproducible output.
    pub timing: bool,
    pub cache_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Levels `1..=5` in 2D with reference level 6, `0..=2` in 3D with reference level 3.
    pub fn new(example: Example, dim: usize) -> Self {
        let (levels, ref_level) = if dim == 3 { ((0..=2).collect(), 3) } else { ((1..=5).collect(), 6) };
        let mut cfg = Self {
            example,
            dim,
            levels,
            layers: Vec::new(),
            ref_level,
            source_correction: SourceSelection::None,
            pi_variant: ProjectionVariant::Standard,
            medium: Medium::Checkerboard,
            ideal: false,
            out: None,
            timing: true,
            cache_dir: None,
        };
        cfg.layers = default_layers(&cfg.levels);
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::InvalidDimension(self.dim));
        }
        if self.levels.is_empty() {
            return Err(Error::Config("no coarse levels".into()));
        }
        if let Some(&j) = self.levels.iter().find(|&&j| j >= self.ref_level) {
            return Err(Error::Config(format!(
                "coarse level {j} not below reference level {}",
                self.ref_level
            )));
        }
        if !self.ideal && self.layers.len() != self.levels.len() {
            return Err(Error::Config(format!(
                "{} layer counts for {} levels",
                self.layers.len(),
                self.levels.len()
            )));
        }
        if self.ref_level == 0 {
            return Err(Error::Config("reference level must be at least 1".into()));
        }
        Ok(())
    }

    /// Applies one `key=value` setting. Keys mirror the command line flags.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("invalid {what} '{value}'"));
        match key {
            "example" => self.example = Example::from_number(value.parse().map_err(|_| bad("example"))?)?,
            "dim" => self.dim = value.parse().map_err(|_| bad("dimension"))?,
            "levels" => {
                self.levels = parse_levels(value)?;
                self.layers = default_layers(&self.levels);
            }
            "m" => {
                self.layers = value
                    .split(',')
                    .map(|s| s.trim().parse().map_err(|_| bad("layer list")))
                    .collect::<Result<_>>()?
            }
            "ref-level" => self.ref_level = value.parse().map_err(|_| bad("reference level"))?,
            "source-correction" => self.source_correction = value.parse()?,
            "pi-variant" => {
                self.pi_variant = match value {
                    "standard" => ProjectionVariant::Standard,
                    "zeroed" => ProjectionVariant::BoundaryZeroed,
                    _ => return Err(bad("projection variant")),
                }
            }
            "medium" => self.medium = value.parse()?,
            "ideal" => self.ideal = parse_bool(value).ok_or_else(|| bad("flag"))?,
            "timing" => self.timing = parse_bool(value).ok_or_else(|| bad("flag"))?,
            "out" => self.out = Some(PathBuf::from(value)),
            "cache-dir" => self.cache_dir = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Applies a `key=value` file; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            self.apply(k.trim(), v.trim())?;
        }
        Ok(())
    }

    fn localization(&self, k: usize) -> Localization {
        if self.ideal {
            Localization::Global
        } else {
            Localization::Layers(self.layers[k])
        }
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

/// Parses `j0:j1` (inclusive) or a single level.
pub fn parse_levels(s: &str) -> Result<Vec<u32>> {
    let bad = || Error::Config(format!("invalid level range '{s}'"));
    let (a, b) = match s.split_once(':') {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
        None => {
            let j = s.trim().parse().map_err(|_| bad())?;
            (j, j)
        }
    };
    if a > b {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

pub fn default_layers(levels: &[u32]) -> Vec<usize> {
    levels
        .iter()
        .map(|&j| DEFAULT_LAYERS[(j as usize).min(DEFAULT_LAYERS.len() - 1)])
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub example: u8,
    pub dim: usize,
    pub level: u32,
    pub h: f64,
    pub localization: Localization,
    pub dof_coarse: usize,
    pub dof_fine: usize,
    pub err_lod: f64,
    pub err_fem: f64,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub lod_slope: Option<f64>,
    pub fem_slope: Option<f64>,
    /// Largest `|P K|` over all rows.
    pub kernel_residual: f64,
}

impl ExperimentReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "example,dim,j,H,m,dof_coarse,dof_fine,err_lod,err_fem,seconds")?;
        for r in &self.rows {
            let m = match r.localization {
                Localization::Layers(m) => m.to_string(),
                Localization::Global => "inf".into(),
            };
            let secs = r.seconds.map(|s| format!("{s:.3}")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{:e},{},{},{},{:e},{:e},{}",
                r.example, r.dim, r.level, r.h, m, r.dof_coarse, r.dof_fine, r.err_lod, r.err_fem, secs
            )?;
        }
        Ok(())
    }
}

/// Fine Galerkin solution, on the interior edges for the essential condition.
pub fn reference_solve(mesh: &Mesh, b: &CsrMatrix, rhs: &[f64], bc: BoundaryCondition) -> Result<Vec<f64>> {
    match bc {
        BoundaryCondition::Natural => Ok(solve_spd(b, rhs)?.0),
        BoundaryCondition::Essential => {
            let keep: Vec<usize> = (0..mesh.num_edges()).filter(|&e| !mesh.edge_on_boundary(e)).collect();
            let r: Vec<f64> = keep.iter().map(|&e| rhs[e]).collect();
            let (x, _) = solve_spd(&b.principal(&keep), &r)?;
            let mut u = vec![0.0; mesh.num_edges()];
            for (k, &e) in keep.iter().enumerate() {
                u[e] = x[k];
            }
            Ok(u)
        }
    }
}

/// `sqrt(e^T B e / u_ref^T B u_ref)` with `e = u - u_ref`.
pub fn energy_error(u: &[f64], reference: &[f64], b: &CsrMatrix) -> Result<f64> {
    let denom = dot(reference, &b.mul_vec(reference));
    if denom <= 0.0 {
        return Err(Error::ZeroReferenceEnergy);
    }
    let e: Vec<f64> = u.iter().zip(reference).map(|(a, r)| a - r).collect();
    Ok((dot(&e, &b.mul_vec(&e)).max(0.0) / denom).sqrt())
}

/// Least-squares slope of `log(error)` against `log(h)`.
pub fn fit_rate(hs: &[f64], errors: &[f64]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = hs
        .iter()
        .zip(errors)
        .filter(|(h, e)| **h > 0.0 && **e > 0.0)
        .map(|(h, e)| (h.ln(), e.ln()))
        .collect();
    let n = pts.len();
    if n < 2 || n != hs.len() || hs.len() != errors.len() {
        return Err(Error::DegenerateFit(n));
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit(n));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(sxy / sxx)
}

/// Fine problem shared by all rows of an experiment.
pub struct FineProblem {
    pub mesh: Arc<Mesh>,
    pub mats: Materials,
    pub coefficient: String,
    pub b: CsrMatrix,
    pub source: LoadSpec,
    pub rhs: Vec<f64>,
    pub reference: Vec<f64>,
    pub bc: BoundaryCondition,
}

impl FineProblem {
    /// Checkerboard coefficients with blocks twice the fine mesh size.
    pub fn new(example: Example, dim: usize, ref_level: u32, medium: Medium) -> Result<Self> {
        let mesh = Arc::new(Mesh::structured(dim, 1 << ref_level)?);
        let checker = Checkerboard::new((mesh.subdivisions() / 2).max(1));
        let mats = match medium {
            Medium::Checkerboard => Materials::new(&mesh, &checker, &checker)?,
            Medium::UnitKappa => Materials::new(&mesh, &checker, &Constant(1.0))?,
        };
        let b = assemble_b(&mesh, &mats).matrix;
        let source = example.source(dim);
        let rhs = assemble_load(&mesh, &source);
        let bc = example.boundary_condition();
        let reference = reference_solve(&mesh, &b, &rhs, bc)?;
        Ok(Self {
            mesh,
            mats,
            coefficient: format!("{}_{medium}", checker.describe()),
            b,
            source,
            rhs,
            reference,
            bc,
        })
    }
}

/// Errors of one coarse level against the shared reference.
pub struct RowResult {
    pub row: ReportRow,
    pub kernel_residual: f64,
}

/// Runs one coarse level.
#[allow(clippy::too_many_arguments)]
pub fn run_level(
    cfg: &ExperimentConfig,
    fine: &FineProblem,
    level: u32,
    localization: Localization,
    projection: Option<&ProjectionSet>,
    cache: Option<&CorrectorCache>,
) -> Result<RowResult> {
    let start = Instant::now();
    let coarse = Arc::new(Mesh::structured(cfg.dim, 1 << level)?);
    let pair = NestedPair::new(coarse, fine.mesh.clone())?;
    let owned;
    let ps = match projection {
        Some(p) => p,
        None => {
            let ps = assemble_pi_e(&pair, ProjectionOptions::default())?;
            owned = match cfg.pi_variant {
                ProjectionVariant::Standard => ps,
                ProjectionVariant::BoundaryZeroed => zero_boundary_rows(&ps, &pair.coarse),
            };
            &owned
        }
    };
    let embed = coarse_to_fine_embedding(&pair, Family::Nedelec)?.matrix;
    let setup = LodSetup {
        pair: &pair,
        mats: &fine.mats,
        b: &fine.b,
        embed: &embed,
        projection: &ps.p.matrix,
        bc: fine.bc,
        localization,
    };
    let key = format!(
        "k_{}d_H{}_h{}_{}_{}_{:?}_{}",
        cfg.dim, level, cfg.ref_level, localization, fine.bc, ps.variant, fine.coefficient
    );
    let cached = match (cache, cfg.source_correction) {
        (Some(c), SourceSelection::None) => c.load(&key)?,
        _ => None,
    };
    let (correctors, sources) = match cached {
        Some(k) => (k, None),
        None => {
            let src = (cfg.source_correction != SourceSelection::None).then_some((&fine.source, cfg.source_correction));
            let (basis, sources) = compute_correctors(&setup, src)?;
            if let Some(c) = cache {
                c.store(&key, &basis.correctors)?;
            }
            (basis.correctors, src.map(|_| sources))
        }
    };
    let basis = crate::lod::CorrectorBasis {
        correctors,
        bc: fine.bc,
        localization,
        constraint_residual: 0.0,
        factorizations: 0,
    };
    let sol = solve_lod(&setup, &basis, &fine.rhs, sources.as_ref())?;
    let (_, fem, _) = solve_galerkin(&fine.b, &corrected_basis(&setup, None), &fine.rhs, None)?;
    let err_lod = energy_error(&sol.fine, &fine.reference, &fine.b)?;
    let err_fem = energy_error(&fem, &fine.reference, &fine.b)?;
    let kr = kernel_residual(&ps.p.matrix, &basis.correctors);
    Ok(RowResult {
        row: ReportRow {
            example: cfg.example.number(),
            dim: cfg.dim,
            level,
            h: pair.coarse.mesh_size(),
            localization,
            dof_coarse: sol.stats.coarse_dofs,
            dof_fine: match fine.bc {
                BoundaryCondition::Natural => fine.mesh.num_edges(),
                BoundaryCondition::Essential => (0..fine.mesh.num_edges()).filter(|&e| !fine.mesh.edge_on_boundary(e)).count(),
            },
            err_lod,
            err_fem,
            seconds: cfg.timing.then(|| start.elapsed().as_secs_f64()),
        },
        kernel_residual: kr,
    })
}

/// Runs every configured level against one shared reference solution.
pub fn run_example(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let fine = FineProblem::new(cfg.example, cfg.dim, cfg.ref_level, cfg.medium)?;
    run_with_reference(cfg, &fine)
}

/// As [`run_example`], with a precomputed fine problem.
pub fn run_with_reference(cfg: &ExperimentConfig, fine: &FineProblem) -> Result<ExperimentReport> {
    cfg.validate()?;
    let cache = cfg.cache_dir.as_ref().map(CorrectorCache::new).transpose()?;
    let mut rows = Vec::new();
    let mut kr: f64 = 0.0;
    for (k, &level) in cfg.levels.iter().enumerate() {
        let loc = cfg.localization(k);
        let r = run_level(cfg, fine, level, loc, None, cache.as_ref()).map_err(|e| Error::Experiment {
            level,
            layers: loc.to_string(),
            source: Box::new(e),
        })?;
        kr = kr.max(r.kernel_residual);
        rows.push(r.row);
    }
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let lod: Vec<f64> = rows.iter().map(|r| r.err_lod).collect();
    let fem: Vec<f64> = rows.iter().map(|r| r.err_fem).collect();
    Ok(ExperimentReport {
        lod_slope: fit_rate(&hs, &lod).ok(),
        fem_slope: fit_rate(&hs, &fem).ok(),
        rows,
        kernel_residual: kr,
    })
}

/// Python script that plots a results CSV on log-log axes with an `H^rate` guide line.
pub fn plot_script(csv: &str, rate: f64) -> String {
    format!(
        r#"import csv
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open({csv:?})))
H = [float(r["H"]) for r in rows]
lod = [float(r["err_lod"]) for r in rows]
fem = [float(r["err_fem"]) for r in rows]
plt.loglog(H, lod, "b*-", label="LOD")
plt.loglog(H, fem, "ro-", label="FEM")
ref = [lod[-1] * (h / H[-1]) ** {rate} for h in H]
plt.loglog(H, ref, "k--", label="H^{rate}")
plt.xlabel("H")
plt.ylabel("relative energy error")
plt.legend()
plt.savefig({png:?})
"#,
        png = format!("{}.png", csv.trim_end_matches(".csv")),
    )
}

/// One invariant check of the validation suite.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: {:.3e} (tolerance {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance
        )
    }
}

/// `max |C G|`, and `max |D C|` in 3D.
pub fn complex_defects(mesh: &Mesh) -> Result<(f64, Option<f64>)> {
    let g = gradient_incidence(mesh);
    let c = curl_incidence(mesh);
    let cg = c.compose(&g)?.matrix.max_abs();
    let dc = if mesh.dim() == 3 {
        Some(divergence_incidence(mesh)?.compose(&c)?.matrix.max_abs())
    } else {
        None
    };
    Ok((cg, dc))
}

/// `max |P E - I|` for the Nédélec embedding `E`.
pub fn projection_defect(pair: &NestedPair, ps: &ProjectionSet) -> Result<f64> {
    let en = coarse_to_fine_embedding(pair, Family::Nedelec)?;
    Ok(ps.p.compose(&en)?.matrix.max_abs_diff(&CsrMatrix::identity(pair.coarse.num_edges())))
}

/// `max |P G_h - G_H PV|`.
pub fn commuting_defect(pair: &NestedPair, ps: &ProjectionSet) -> Result<f64> {
    let lhs = ps.p.compose(&gradient_incidence(&pair.fine))?;
    let rhs = gradient_incidence(&pair.coarse).compose(&ps.pv)?;
    Ok(lhs.matrix.max_abs_diff(&rhs.matrix))
}

/// Largest entry of `P` outside the extended patch of its row, over entries above `threshold`.
pub fn locality_defect(pair: &NestedPair, ps: &ProjectionSet, threshold: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for e in 0..pair.coarse.num_edges() {
        let cells = Patch::extended_edge(&pair.coarse, e)?.cells;
        let support = pair.fine_edges_of(&pair.fine_cells_of(&cells));
        let (cols, vals) = ps.p.matrix.row(e);
        for (c, v) in cols.iter().zip(vals) {
            if v.abs() > threshold && support.binary_search(c).is_err() {
                worst = worst.max(v.abs());
            }
        }
    }
    Ok(worst)
}

/// Runs the invariant suite on fixed small meshes.
pub fn validate() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (dim, sizes) in [(2usize, &[1usize, 4, 8][..]), (3, &[1, 2][..])] {
        for &n in sizes {
            let m = Mesh::structured(dim, n)?;
            checks.push(Check::new(format!("{dim}D n={n} Euler characteristic - 1"), (m.euler_characteristic() - 1).abs() as f64, 0.0));
            let (cg, dc) = complex_defects(&m)?;
            checks.push(Check::new(format!("{dim}D n={n} curl*grad"), cg, 0.0));
            if let Some(dc) = dc {
                checks.push(Check::new(format!("{dim}D n={n} div*curl"), dc, 0.0));
            }
        }
    }
    for (dim, cl, fl) in [(2usize, 2u32, 4u32), (3, 1, 2)] {
        let pair = NestedPair::from_levels(dim, cl, fl)?;
        let tag = format!("{dim}D levels {cl}/{fl}");
        let ps = assemble_pi_e(&pair, ProjectionOptions::default())?;
        checks.push(Check::new(format!("{tag} projection |P E - I|"), projection_defect(&pair, &ps)?, 1e-9));
        checks.push(Check::new(format!("{tag} commuting |P G - G PV|"), commuting_defect(&pair, &ps)?, 1e-9));
        checks.push(Check::new(format!("{tag} locality of P"), locality_defect(&pair, &ps, 1e-12)?, 0.0));
        let z1 = (0..pair.coarse.num_edges())
            .map(|e| compute_z1(&pair.coarse, e).map(|z| z.divergence_defect))
            .collect::<Result<Vec<_>>>()?;
        checks.push(Check::new(format!("{tag} flux divergence identity"), z1.into_iter().fold(0.0, f64::max), 1e-10));
    }
    let cfg = {
        let mut c = ExperimentConfig::new(Example::One, 2);
        c.levels = vec![1];
        c.layers = vec![1];
        c.ref_level = 3;
        c.timing = false;
        c
    };
    let fine = FineProblem::new(cfg.example, 2, cfg.ref_level, cfg.medium)?;
    let r = run_level(&cfg, &fine, 1, Localization::Layers(1), None, None)?;
    checks.push(Check::new("2D levels 1/3 corrector kernel |P K|", r.kernel_residual, 1e-8));
    Ok(checks)
}

impl FromStr for Example {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Example::from_number(s.parse().map_err(|_| Error::Config(format!("invalid example '{s}'")))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_fits() {
        let hs = [0.5, 0.25, 0.125, 0.0625];
        let lin: Vec<f64> = hs.iter().map(|h| 3.0 * h).collect();
        let half: Vec<f64> = hs.iter().map(|h: &f64| 0.7 * h.sqrt()).collect();
        assert!((fit_rate(&hs, &lin).unwrap() - 1.0).abs() < 1e-12);
        assert!((fit_rate(&hs, &half).unwrap() - 0.5).abs() < 1e-12);
        let two = fit_rate(&[0.5, 0.2], &[0.3, 0.1]).unwrap();
        assert!((two - (0.3f64 / 0.1).ln() / (0.5f64 / 0.2).ln()).abs() < 1e-12);
        assert!(fit_rate(&[0.5], &[0.1]).is_err());
        assert!(fit_rate(&[0.5, 0.5], &[0.1, 0.2]).is_err());
        assert!(fit_rate(&[0.5, 0.25], &[0.0, 0.2]).is_err());
    }

    #[test]
    fn energy_error_normalisation() {
        let b = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (1, 1, 3.0), (0, 1, 0.5), (1, 0, 0.5)]);
        let r = [1.0, -2.0];
        assert_eq!(energy_error(&r, &r, &b).unwrap(), 0.0);
        assert!((energy_error(&[0.0, 0.0], &r, &b).unwrap() - 1.0).abs() < 1e-15);
        let w = [0.3, 0.1];
        let t = 1e-3;
        let u: Vec<f64> = r.iter().zip(&w).map(|(a, b)| a + t * b).collect();
        let expect = t * (dot(&w, &b.mul_vec(&w)) / dot(&r, &b.mul_vec(&r))).sqrt();
        assert!((energy_error(&u, &r, &b).unwrap() - expect).abs() < 1e-12);
        assert!(matches!(energy_error(&r, &[0.0, 0.0], &b), Err(Error::ZeroReferenceEnergy)));
    }

    #[test]
    fn config_text_and_validation() {
        let mut cfg = ExperimentConfig::new(Example::One, 2);
        assert_eq!(cfg.layers, vec![1, 2, 2, 3, 4]);
        cfg.apply_text("example = 4\nlevels=2:3 # two rows\n\nm=2,3\nsource-correction=boundary\npi-variant=zeroed\nideal=true\nmedium=unit-kappa\n")
            .unwrap();
        assert_eq!(cfg.medium, Medium::UnitKappa);
        assert_eq!(cfg.example, Example::Four);
        assert_eq!(cfg.levels, vec![2, 3]);
        assert_eq!(cfg.layers, vec![2, 3]);
        assert_eq!(cfg.source_correction, SourceSelection::Boundary);
        assert_eq!(cfg.pi_variant, ProjectionVariant::BoundaryZeroed);
        assert!(cfg.ideal);
        cfg.validate().unwrap();
        assert!(cfg.apply("colour", "red").is_err());
        assert!(cfg.apply_text("levels").is_err());
        cfg.ref_level = 3;
        assert!(cfg.validate().is_err());
        cfg.ref_level = 6;
        cfg.ideal = false;
        cfg.layers = vec![1];
        assert!(cfg.validate().is_err());
        assert!(parse_levels("3:1").is_err());
        assert_eq!(parse_levels("4").unwrap(), vec![4]);
    }

    #[test]
    fn zero_source_gives_zero_reference() {
        let mesh = Mesh::structured(2, 4).unwrap();
        let mats = Materials::uniform(&mesh, 1.0, 1.0);
        let b = assemble_b(&mesh, &mats).matrix;
        let zero = vec![0.0; mesh.num_edges()];
        for bc in [BoundaryCondition::Natural, BoundaryCondition::Essential] {
            assert!(reference_solve(&mesh, &b, &zero, bc).unwrap().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn perturbed_projection_fails_commuting_check() {
        let pair = NestedPair::from_levels(2, 2, 4).unwrap();
        let ps = assemble_pi_e(&pair, ProjectionOptions::default()).unwrap();
        assert!(commuting_defect(&pair, &ps).unwrap() <= 1e-9);
        let mut bad = ps.clone();
        let e = pair.coarse.num_edges() / 2;
        bad.p.matrix.row_mut_values(e)[0] += 1e-3;
        assert!(commuting_defect(&pair, &bad).unwrap() > 1e-9);
    }

    #[test]
    fn projection_is_locally_stable() {
        use rand::{Rng, SeedableRng};
        let pair = NestedPair::from_levels(2, 2, 4).unwrap();
        let ps = assemble_pi_e(&pair, ProjectionOptions::default()).unwrap();
        let en = coarse_to_fine_embedding(&pair, Family::Nedelec).unwrap().matrix;
        let mats = Materials::uniform(&pair.fine, 1.0, 1.0);
        let b = assemble_b(&pair.fine, &mats).matrix;
        let energy = |v: &[f64]| dot(v, &b.mul_vec(v)).sqrt();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let v: Vec<f64> = (0..pair.fine.num_edges()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let pv = en.mul_vec(&ps.p.matrix.mul_vec(&v));
            assert!(energy(&pv) < 100.0 * energy(&v));
        }
    }

    #[test]
    fn csv_is_reproducible_without_timing() {
        let mut cfg = ExperimentConfig::new(Example::Two, 2);
        cfg.levels = vec![0, 1];
        cfg.layers = vec![1, 1];
        cfg.ref_level = 2;
        cfg.timing = false;
        let write = |cfg: &ExperimentConfig| {
            let mut buf = Vec::new();
            run_example(cfg).unwrap().write_csv(&mut buf).unwrap();
            String::from_utf8(buf).unwrap()
        };
        let a = write(&cfg);
        assert_eq!(a, write(&cfg));
        assert_eq!(a.lines().count(), 3);
        assert!(a.lines().nth(1).unwrap().starts_with("2,2,0,"));
        assert!(a.lines().nth(1).unwrap().ends_with(','));
    }
}
