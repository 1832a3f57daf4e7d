//! Quadrature rules on simplices in barycentric coordinates, weights normalised to sum to 1
//! (multiply by the cell volume).

#[derive(Debug, Clone)]
pub struct Rule {
    /// Barycentric coordinates; the entries past `dim + 1` are zero.
    pub points: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        // Newton iteration on P_n from the Chebyshev-like initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes.push(0.5 * (1.0 - x));
        weights.push(0.5 * w);
    }
    (nodes, weights)
}

/// Collapsed tensor Gauss rule with `n` points per direction, exact for polynomials of degree
/// `2n - dim` on the simplex.
pub fn collapsed_gauss(dim: usize, n: usize) -> Rule {
    let (x, w) = gauss_legendre(n);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    if dim == 2 {
        for i in 0..n {
            for j in 0..n {
                let (u, v) = (x[i], x[j]);
                let px = u;
                let py = v * (1.0 - u);
                points.push([1.0 - px - py, px, py, 0.0]);
                weights.push(2.0 * w[i] * w[j] * (1.0 - u));
            }
        }
    } else {
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let (u, v, s) = (x[i], x[j], x[k]);
                    let px = u;
                    let py = v * (1.0 - u);
                    let pz = s * (1.0 - u) * (1.0 - v);
                    points.push([1.0 - px - py - pz, px, py, pz]);
                    weights.push(6.0 * w[i] * w[j] * w[k] * (1.0 - u) * (1.0 - u) * (1.0 - v));
                }
            }
        }
    }
    Rule { points, weights }
}

/// Degree-4 rule used for load vectors.
pub fn degree4(dim: usize) -> Rule {
    collapsed_gauss(dim, if dim == 2 { 3 } else { 4 })
}

/// Degree-2 rule: edge midpoints on triangles, the symmetric 4-point rule on tetrahedra.
pub fn degree2(dim: usize) -> Rule {
    if dim == 2 {
        Rule {
            points: vec![[0.5, 0.5, 0.0, 0.0], [0.5, 0.0, 0.5, 0.0], [0.0, 0.5, 0.5, 0.0]],
            weights: vec![1.0 / 3.0; 3],
        }
    } else {
        let a = 0.585_410_196_624_968_5;
        let b = 0.138_196_601_125_010_5;
        Rule {
            points: vec![[a, b, b, b], [b, a, b, b], [b, b, a, b], [b, b, b, a]],
            weights: vec![0.25; 4],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Exact simplex moments: int lambda^alpha = alpha! d! / (|alpha| + d)! times volume.
    fn moment(alpha: &[u32], dim: usize) -> f64 {
        let fact = |k: u32| (1..=k).map(f64::from).product::<f64>();
        let num: f64 = alpha.iter().map(|&a| fact(a)).product::<f64>() * fact(dim as u32);
        let total: u32 = alpha.iter().sum::<u32>() + dim as u32;
        num / fact(total)
    }

    fn check(rule: &Rule, dim: usize, degree: u32) {
        let total: f64 = rule.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
        for a0 in 0..=degree {
            for a1 in 0..=degree - a0 {
                for a2 in 0..=degree - a0 - a1 {
                    let a3_max = if dim == 3 { degree - a0 - a1 - a2 } else { 0 };
                    for a3 in 0..=a3_max {
                        let alpha = [a0, a1, a2, a3];
                        let q: f64 = rule
                            .points
                            .iter()
                            .zip(&rule.weights)
                            .map(|(p, w)| w * (0..=dim).map(|i| p[i].powi(alpha[i] as i32)).product::<f64>())
                            .sum();
                        assert!(
                            (q - moment(&alpha[..=dim], dim)).abs() < 1e-14,
                            "dim {dim} alpha {alpha:?}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn rules_reach_their_degree() {
        check(&degree2(2), 2, 2);
        check(&degree2(3), 3, 2);
        check(&degree4(2), 2, 4);
        check(&degree4(3), 3, 4);
    }

    #[test]
    fn gauss_weights() {
        let (x, w) = gauss_legendre(3);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((x[1] - 0.5).abs() < 1e-15);
    }
}
