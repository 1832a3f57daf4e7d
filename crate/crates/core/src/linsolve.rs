//! Direct solvers: sparse Cholesky for SPD systems, Schur-complement and dense KKT solvers for
//! saddle-point systems with constraint rows.

use faer::prelude::*;
use faer::sparse::linalg::LltError as SparseLltError;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::{Mat, Side};
use thiserror::Error;

use crate::sparse::{norm2, CsrMatrix};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("constraint rows {rows:?} are linearly dependent on the others")]
    RedundantConstraints { rows: Vec<usize> },

    #[error("system is singular: {0}")]
    Singular(String),

    #[error("relative residual {relative:.3e} exceeds {tolerance:.1e}")]
    Residual { relative: f64, tolerance: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("factorization failed: {0}")]
    Backend(String),
}

pub type SolveResult<T> = std::result::Result<T, SolveError>;

/// Default relative residual bound for SPD solves.
pub const SPD_TOLERANCE: f64 = 1e-10;
/// Default relative residual bound for saddle solves.
pub const SADDLE_TOLERANCE: f64 = 1e-9;

fn relative(res: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        res / scale
    } else {
        res
    }
}

/// Sparse Cholesky factorization of a symmetric positive definite matrix.
pub struct SpdFactor {
    matrix: CsrMatrix,
    llt: Llt<usize, f64>,
}

impl SpdFactor {
    pub fn new(matrix: &CsrMatrix) -> SolveResult<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(SolveError::Dimension(format!(
                "{}x{} matrix is not square",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let a = matrix.to_faer();
        let map = |e: SparseLltError| match e {
            SparseLltError::Numeric(faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index }) => {
                SolveError::NotPositiveDefinite { pivot: index }
            }
            SparseLltError::Generic(g) => SolveError::Backend(format!("{g:?}")),
        };
        let symbolic = SymbolicLlt::try_new(a.symbolic(), Side::Lower).map_err(|e| SolveError::Backend(format!("{e:?}")))?;
        let llt = Llt::try_new_with_symbolic(symbolic, a.as_ref(), Side::Lower).map_err(map)?;
        Ok(Self {
            matrix: matrix.clone(),
            llt,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Solves in place for every column of `rhs`, with one step of iterative refinement.
    pub fn solve_mat(&self, rhs: &Mat<f64>) -> Mat<f64> {
        let mut x = rhs.clone();
        self.llt.solve_in_place(&mut x);
        // One refinement step: x += A^{-1} (b - A x).
        let mut r = Mat::<f64>::zeros(rhs.nrows(), rhs.ncols());
        for j in 0..rhs.ncols() {
            let col: Vec<f64> = (0..x.nrows()).map(|i| x[(i, j)]).collect();
            let ax = self.matrix.mul_vec(&col);
            for i in 0..rhs.nrows() {
                r[(i, j)] = rhs[(i, j)] - ax[i];
            }
        }
        self.llt.solve_in_place(&mut r);
        x + r
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        let x = self.solve_mat(&rhs);
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }

    /// Solves and checks the relative residual against `tolerance`.
    pub fn solve_checked(&self, b: &[f64], tolerance: f64) -> SolveResult<(Vec<f64>, f64)> {
        let x = self.solve(b);
        let ax = self.matrix.mul_vec(&x);
        let r: Vec<f64> = ax.iter().zip(b).map(|(a, b)| a - b).collect();
        let rel = relative(norm2(&r), norm2(b));
        if rel > tolerance {
            return Err(SolveError::Residual {
                relative: rel,
                tolerance,
            });
        }
        Ok((x, rel))
    }
}

/// Solves `A x = b` for SPD `A`, returning the solution and its relative residual.
pub fn solve_spd(a: &CsrMatrix, b: &[f64]) -> SolveResult<(Vec<f64>, f64)> {
    if b.len() != a.nrows() {
        return Err(SolveError::Dimension(format!("rhs length {} vs {} rows", b.len(), a.nrows())));
    }
    SpdFactor::new(a)?.solve_checked(b, SPD_TOLERANCE)
}

/// Cholesky factorization with diagonal pivoting. Pivots below `tol * max_diag` are treated
/// as zero and their indices reported as dependent.
pub struct PivotedCholesky {
    /// Lower factor of the independent rows/cols, in pivot order.
    l: Mat<f64>,
    /// Original indices of the independent rows, in pivot order.
    pub kept: Vec<usize>,
    pub dependent: Vec<usize>,
}

impl PivotedCholesky {
    pub fn new(s: &Mat<f64>, tol: f64) -> Self {
        let n = s.nrows();
        let mut a = s.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let max_diag = (0..n).map(|i| s[(i, i)]).fold(0.0f64, f64::max);
        let mut rank = 0;
        while rank < n {
            // Largest remaining diagonal; the lowest index wins ties so the order is reproducible.
            let mut p = rank;
            for k in rank + 1..n {
                if a[(k, k)] > a[(p, p)] {
                    p = k;
                }
            }
            if a[(p, p)] <= tol * max_diag || a[(p, p)] <= 0.0 {
                break;
            }
            if p != rank {
                perm.swap(p, rank);
                for k in 0..n {
                    let t = a[(k, p)];
                    a[(k, p)] = a[(k, rank)];
                    a[(k, rank)] = t;
                }
                for k in 0..n {
                    let t = a[(p, k)];
                    a[(p, k)] = a[(rank, k)];
                    a[(rank, k)] = t;
                }
            }
            let d = a[(rank, rank)].sqrt();
            a[(rank, rank)] = d;
            for i in rank + 1..n {
                a[(i, rank)] /= d;
            }
            // Full symmetric trailing update: later pivot swaps read both triangles.
            for j in rank + 1..n {
                let ljr = a[(j, rank)];
                for i in rank + 1..n {
                    a[(i, j)] -= a[(i, rank)] * ljr;
                }
            }
            rank += 1;
        }
        let l = Mat::from_fn(rank, rank, |i, j| if i >= j { a[(i, j)] } else { 0.0 });
        let mut dependent: Vec<usize> = perm[rank..].to_vec();
        dependent.sort_unstable();
        Self {
            l,
            kept: perm[..rank].to_vec(),
            dependent,
        }
    }

    pub fn rank(&self) -> usize {
        self.kept.len()
    }

    /// Solves with the independent block; `rhs` rows are in `kept` order.
    pub fn solve_in_place(&self, rhs: &mut Mat<f64>) {
        let n = self.rank();
        for j in 0..rhs.ncols() {
            for i in 0..n {
                let mut v = rhs[(i, j)];
                for k in 0..i {
                    v -= self.l[(i, k)] * rhs[(k, j)];
                }
                rhs[(i, j)] = v / self.l[(i, i)];
            }
            for i in (0..n).rev() {
                let mut v = rhs[(i, j)];
                for k in i + 1..n {
                    v -= self.l[(k, i)] * rhs[(k, j)];
                }
                rhs[(i, j)] = v / self.l[(i, i)];
            }
        }
    }
}

/// What to do with constraint rows that depend linearly on the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Redundancy {
    Reject,
    /// Drop them; consistent right-hand sides are still satisfied exactly.
    Drop,
}

/// `[A C^T; C 0] [x; l] = [f; g]` with `A` symmetric positive definite.
#[derive(Debug, Clone)]
pub struct SaddleSystem {
    pub a: CsrMatrix,
    pub c: CsrMatrix,
    pub rhs_primal: Vec<f64>,
    pub rhs_multiplier: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SaddleSolution {
    pub x: Vec<f64>,
    /// One multiplier per constraint row; dropped rows get zero.
    pub multipliers: Vec<f64>,
    pub residual_primal: f64,
    pub residual_constraint: f64,
}

/// Relative pivot threshold on the Gram matrix `C C^T`: a row whose distance to the span of the
/// others is below about `1e-7` of the largest row norm counts as dependent.
pub const RANK_TOLERANCE: f64 = 1e-14;

/// Reusable factorization of a saddle system's matrix via the Schur complement `C A^-1 C^T`.
///
/// Redundancy is decided on `C` alone; the Schur complement inherits the conditioning of `A`,
/// which would otherwise hide independent rows behind small pivots.
pub struct SaddleFactor {
    a: SpdFactor,
    c: CsrMatrix,
    /// Constraint rows in Schur pivot order.
    kept: Vec<usize>,
    dropped: Vec<usize>,
    /// `A^-1 C_kept^T`, one column per kept constraint.
    a_inv_ct: Mat<f64>,
    schur: PivotedCholesky,
}

fn gram(c: &CsrMatrix) -> Mat<f64> {
    let r = c.nrows();
    let mut g = Mat::<f64>::zeros(r, r);
    let ct = c.transpose();
    for i in 0..r {
        let (cols, vals) = c.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            let (rows, ws) = ct.row(j);
            for (&k, &w) in rows.iter().zip(ws) {
                g[(i, k)] += v * w;
            }
        }
    }
    g
}

impl SaddleFactor {
    pub fn new(a: &CsrMatrix, c: &CsrMatrix, policy: Redundancy) -> SolveResult<Self> {
        if c.ncols() != a.ncols() {
            return Err(SolveError::Dimension(format!(
                "constraint block has {} columns, leading block {}",
                c.ncols(),
                a.ncols()
            )));
        }
        let a_fac = SpdFactor::new(a)?;
        let n = a.nrows();
        let independent = PivotedCholesky::new(&gram(c), RANK_TOLERANCE);
        let mut rows = independent.kept.clone();
        rows.sort_unstable();
        let mut ct = Mat::<f64>::zeros(n, rows.len());
        for (k, &i) in rows.iter().enumerate() {
            let (cols, vals) = c.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                ct[(j, k)] = v;
            }
        }
        let y = a_fac.solve_mat(&ct);
        let r = rows.len();
        // S = C Y
        let mut s = Mat::<f64>::zeros(r, r);
        for (i, &row) in rows.iter().enumerate() {
            let (cols, vals) = c.row(row);
            for k in 0..r {
                s[(i, k)] = cols.iter().zip(vals).map(|(&j, &v)| v * y[(j, k)]).sum();
            }
        }
        // symmetrise against round-off
        for i in 0..r {
            for k in 0..i {
                let m = 0.5 * (s[(i, k)] + s[(k, i)]);
                s[(i, k)] = m;
                s[(k, i)] = m;
            }
        }
        let schur = PivotedCholesky::new(&s, RANK_TOLERANCE);
        let mut dropped = independent.dependent;
        dropped.extend(schur.dependent.iter().map(|&q| rows[q]));
        dropped.sort_unstable();
        if !dropped.is_empty() && policy == Redundancy::Reject {
            return Err(SolveError::RedundantConstraints { rows: dropped });
        }
        let kept = schur.kept.iter().map(|&q| rows[q]).collect();
        let a_inv_ct = Mat::from_fn(n, schur.rank(), |i, k| y[(i, schur.kept[k])]);
        Ok(Self {
            a: a_fac,
            c: c.clone(),
            kept,
            dropped,
            a_inv_ct,
            schur,
        })
    }

    pub fn dropped_rows(&self) -> &[usize] {
        &self.dropped
    }

    pub fn num_primal(&self) -> usize {
        self.a.dim()
    }

    /// Solves for every column of `f` with homogeneous constraints `C x = 0`.
    pub fn solve_homogeneous(&self, f: &Mat<f64>) -> Mat<f64> {
        let mut x = self.a.solve_mat(f);
        // Second pass refines: ill-conditioned Schur blocks leave a visible constraint defect.
        for _ in 0..2 {
            let mut lam = self.kept_constraint_values(&x);
            self.schur.solve_in_place(&mut lam);
            x -= &self.a_inv_ct * &lam;
        }
        x
    }

    fn kept_constraint_values(&self, x: &Mat<f64>) -> Mat<f64> {
        let mut out = Mat::<f64>::zeros(self.kept.len(), x.ncols());
        for (q, &row) in self.kept.iter().enumerate() {
            let (cols, vals) = self.c.row(row);
            for j in 0..x.ncols() {
                out[(q, j)] = cols.iter().zip(vals).map(|(&c, &v)| v * x[(c, j)]).sum();
            }
        }
        out
    }

    pub fn solve(&self, f: &[f64], g: &[f64]) -> SaddleSolution {
        let fm = Mat::from_fn(f.len(), 1, |i, _| f[i]);
        let x0 = self.a.solve_mat(&fm);
        let mut lam = Mat::<f64>::zeros(self.kept.len(), 1);
        for (q, &row) in self.kept.iter().enumerate() {
            let (cols, vals) = self.c.row(row);
            let cx: f64 = cols.iter().zip(vals).map(|(&c, &v)| v * x0[(c, 0)]).sum();
            lam[(q, 0)] = cx - g[row];
        }
        self.schur.solve_in_place(&mut lam);
        let x = x0 - &self.a_inv_ct * &lam;
        let x: Vec<f64> = (0..f.len()).map(|i| x[(i, 0)]).collect();
        let mut multipliers = vec![0.0; self.c.nrows()];
        for (q, &row) in self.kept.iter().enumerate() {
            multipliers[row] = lam[(q, 0)];
        }
        let (rp, rc) = saddle_residuals(self.a.matrix(), &self.c, &x, &multipliers, f, g);
        SaddleSolution {
            x,
            multipliers,
            residual_primal: rp,
            residual_constraint: rc,
        }
    }
}

/// Relative residuals of both block rows.
pub fn saddle_residuals(a: &CsrMatrix, c: &CsrMatrix, x: &[f64], l: &[f64], f: &[f64], g: &[f64]) -> (f64, f64) {
    let ax = a.mul_vec(x);
    let ctl = c.tr_mul_vec(l);
    let r1: Vec<f64> = (0..x.len()).map(|i| ax[i] + ctl[i] - f[i]).collect();
    let cx = c.mul_vec(x);
    let r2: Vec<f64> = (0..cx.len()).map(|i| cx[i] - g[i]).collect();
    let s1 = norm2(f).max(norm2(&ax));
    let s2 = norm2(g).max(c.max_abs() * norm2(x));
    (relative(norm2(&r1), s1), relative(norm2(&r2), s2))
}

/// Solves a saddle system once, checking both residuals against [`SADDLE_TOLERANCE`].
pub fn solve_saddle(sys: &SaddleSystem, policy: Redundancy) -> SolveResult<SaddleSolution> {
    if sys.c.nrows() == 0 {
        let (x, rel) = solve_spd(&sys.a, &sys.rhs_primal)?;
        return Ok(SaddleSolution {
            x,
            multipliers: Vec::new(),
            residual_primal: rel,
            residual_constraint: 0.0,
        });
    }
    let fac = SaddleFactor::new(&sys.a, &sys.c, policy)?;
    let sol = fac.solve(&sys.rhs_primal, &sys.rhs_multiplier);
    let worst = sol.residual_primal.max(sol.residual_constraint);
    if worst > SADDLE_TOLERANCE {
        return Err(SolveError::Residual {
            relative: worst,
            tolerance: SADDLE_TOLERANCE,
        });
    }
    Ok(sol)
}

/// Dense KKT solve `[A B^T; B 0] [X; Y] = [F; G]` by full-pivot LU, for small local systems
/// whose leading block may be singular. Returns `X` and checks the residual.
pub fn solve_dense_kkt(a: &Mat<f64>, b: &Mat<f64>, f: &Mat<f64>, g: &Mat<f64>, tolerance: f64) -> SolveResult<Mat<f64>> {
    let n = a.nrows();
    let r = b.nrows();
    if a.ncols() != n || b.ncols() != n || f.nrows() != n || g.nrows() != r || f.ncols() != g.ncols() {
        return Err(SolveError::Dimension("inconsistent KKT blocks".into()));
    }
    let k = Mat::from_fn(n + r, n + r, |i, j| match (i < n, j < n) {
        (true, true) => a[(i, j)],
        (true, false) => b[(j - n, i)],
        (false, true) => b[(i - n, j)],
        (false, false) => 0.0,
    });
    let rhs = Mat::from_fn(n + r, f.ncols(), |i, j| if i < n { f[(i, j)] } else { g[(i - n, j)] });
    let lu = k.full_piv_lu();
    let mut sol = rhs.clone();
    lu.solve_in_place(&mut sol);
    let res = &k * &sol - &rhs;
    let scale = rhs.norm_max().max(1e-300);
    let rel = res.norm_max() / scale;
    if !rel.is_finite() || rel > tolerance {
        return Err(SolveError::Residual {
            relative: rel,
            tolerance,
        });
    }
    Ok(Mat::from_fn(n, f.ncols(), |i, j| sol[(i, j)]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pivoted_cholesky_factors_the_kept_block() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        // rank-5 Gram matrix of size 9
        let g = Mat::from_fn(9, 5, |_, _| rng.random_range(-1.0..1.0));
        let s = &g * g.transpose();
        let pc = PivotedCholesky::new(&s, RANK_TOLERANCE);
        assert_eq!(pc.rank(), 5);
        assert_eq!(pc.dependent.len(), 4);
        let llt = &pc.l * pc.l.transpose();
        for (a, &i) in pc.kept.iter().enumerate() {
            for (b, &j) in pc.kept.iter().enumerate() {
                assert!((llt[(a, b)] - s[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_and_two_by_two() {
        let i = CsrMatrix::identity(4);
        let b = vec![1.0, -2.0, 3.0, 0.5];
        assert_eq!(solve_spd(&i, &b).unwrap().0, b);
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)]);
        let (x, _) = solve_spd(&a, &[3.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn indefinite_is_reported() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, -1.0)]);
        assert!(matches!(solve_spd(&a, &[1.0, 1.0]), Err(SolveError::NotPositiveDefinite { .. })));
    }

    #[test]
    fn three_dof_saddle_by_hand() {
        // min 1/2 |x|^2 - f.x subject to x0 + x1 + x2 = 3 with f = (1, 2, 3):
        // x = f - l (1,1,1), sum = 6 - 3 l = 3 -> l = 1, x = (0, 1, 2)
        let sys = SaddleSystem {
            a: CsrMatrix::identity(3),
            c: CsrMatrix::from_triplets(1, 3, &[(0, 0, 1.0), (0, 1, 1.0), (0, 2, 1.0)]),
            rhs_primal: vec![1.0, 2.0, 3.0],
            rhs_multiplier: vec![3.0],
        };
        let s = solve_saddle(&sys, Redundancy::Reject).unwrap();
        for (x, e) in s.x.iter().zip([0.0, 1.0, 2.0]) {
            assert!((x - e).abs() < 1e-14);
        }
        assert!((s.multipliers[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn empty_constraints_reduce_to_spd() {
        let sys = SaddleSystem {
            a: CsrMatrix::identity(2),
            c: CsrMatrix::zeros(0, 2),
            rhs_primal: vec![4.0, 5.0],
            rhs_multiplier: vec![],
        };
        assert_eq!(solve_saddle(&sys, Redundancy::Reject).unwrap().x, vec![4.0, 5.0]);
    }

    #[test]
    fn redundant_rows_are_named_or_dropped() {
        let c = CsrMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 1.0), (1, 1, 1.0), (2, 0, 1.0), (2, 1, 1.0)],
        );
        let sys = SaddleSystem {
            a: CsrMatrix::identity(3),
            c,
            rhs_primal: vec![1.0, 1.0, 1.0],
            rhs_multiplier: vec![0.0, 0.0, 0.0],
        };
        match solve_saddle(&sys, Redundancy::Reject) {
            Err(SolveError::RedundantConstraints { rows }) => assert_eq!(rows.len(), 1),
            other => panic!("expected redundancy error, got {other:?}"),
        }
        let s = solve_saddle(&sys, Redundancy::Drop).unwrap();
        assert!(s.x[0].abs() < 1e-14 && s.x[1].abs() < 1e-14);
        assert!((s.x[2] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn dense_kkt_with_singular_leading_block() {
        // A = 0 on span, constraint fixes x: [0 0; 0 0] with B = I
        let a = Mat::<f64>::zeros(2, 2);
        let b = Mat::<f64>::identity(2, 2);
        let f = Mat::from_fn(2, 1, |i, _| [1.0, 2.0][i]);
        let g = Mat::from_fn(2, 1, |i, _| [3.0, 4.0][i]);
        let x = solve_dense_kkt(&a, &b, &f, &g, 1e-12).unwrap();
        assert_eq!((x[(0, 0)], x[(1, 0)]), (3.0, 4.0));
    }
}
