//! Geometry and lowest-order basis functions on a single simplex.
//!
//! Vectors are stored with three components in both dimensions (zero third component in 2D), so
//! the 2D scalar curl is the third component of the 3D formula.

use crate::mesh::{cross, dot3, sub};

#[derive(Debug, Clone, Copy)]
pub struct Simplex {
    pub dim: usize,
    pub points: [[f64; 3]; 4],
    pub volume: f64,
    /// Gradients of the barycentric coordinates.
    pub grads: [[f64; 3]; 4],
}

impl Simplex {
    pub fn new(dim: usize, points: [[f64; 3]; 4]) -> Simplex {
        let mut grads = [[0.0; 3]; 4];
        let volume;
        if dim == 2 {
            let a = sub(points[1], points[0]);
            let b = sub(points[2], points[0]);
            let det = a[0] * b[1] - a[1] * b[0];
            volume = 0.5 * det.abs();
            // Rows of the inverse Jacobian.
            grads[1] = [b[1] / det, -b[0] / det, 0.0];
            grads[2] = [-a[1] / det, a[0] / det, 0.0];
        } else {
            let a = sub(points[1], points[0]);
            let b = sub(points[2], points[0]);
            let c = sub(points[3], points[0]);
            let det = dot3(a, cross(b, c));
            volume = det.abs() / 6.0;
            let bc = cross(b, c);
            let ca = cross(c, a);
            let ab = cross(a, b);
            grads[1] = [bc[0] / det, bc[1] / det, bc[2] / det];
            grads[2] = [ca[0] / det, ca[1] / det, ca[2] / det];
            grads[3] = [ab[0] / det, ab[1] / det, ab[2] / det];
        }
        for i in 0..3 {
            grads[0][i] = -(1..=dim).map(|k| grads[k][i]).sum::<f64>();
        }
        Simplex {
            dim,
            points,
            volume,
            grads,
        }
    }

    pub fn barycentric(&self, x: &[f64; 3]) -> [f64; 4] {
        let d = sub(*x, self.points[0]);
        let mut l = [0.0; 4];
        for k in 1..=self.dim {
            l[k] = dot3(self.grads[k], d);
        }
        l[0] = 1.0 - (1..=self.dim).map(|k| l[k]).sum::<f64>();
        l
    }

    pub fn point(&self, lambda: &[f64; 4]) -> [f64; 3] {
        let mut x = [0.0; 3];
        for k in 0..=self.dim {
            for i in 0..3 {
                x[i] += lambda[k] * self.points[k][i];
            }
        }
        x
    }

    /// Whitney edge function of local edge `(a, b)` at barycentric point `lambda`.
    pub fn whitney(&self, a: usize, b: usize, lambda: &[f64; 4]) -> [f64; 3] {
        let (ga, gb) = (self.grads[a], self.grads[b]);
        [
            lambda[a] * gb[0] - lambda[b] * ga[0],
            lambda[a] * gb[1] - lambda[b] * ga[1],
            lambda[a] * gb[2] - lambda[b] * ga[2],
        ]
    }

    /// Curl of the Whitney edge function (constant); in 2D only the third component is nonzero.
    pub fn whitney_curl(&self, a: usize, b: usize) -> [f64; 3] {
        let c = cross(self.grads[a], self.grads[b]);
        [2.0 * c[0], 2.0 * c[1], 2.0 * c[2]]
    }

    /// Integral of the Whitney edge function over the cell.
    pub fn whitney_mean(&self, a: usize, b: usize) -> [f64; 3] {
        let s = self.volume / (self.dim + 1) as f64;
        let d = sub(self.grads[b], self.grads[a]);
        [s * d[0], s * d[1], s * d[2]]
    }

    /// Exact P1 mass entry `int lambda_i lambda_j`.
    pub fn p1_mass(&self, i: usize, j: usize) -> f64 {
        let d = self.dim as f64;
        self.volume * if i == j { 2.0 } else { 1.0 } / ((d + 1.0) * (d + 2.0))
    }

    /// Exact `int psi_(a,b) . psi_(c,d)`.
    pub fn whitney_mass(&self, [a, b]: [usize; 2], [c, d]: [usize; 2]) -> f64 {
        let g = &self.grads;
        self.p1_mass(a, c) * dot3(g[b], g[d]) - self.p1_mass(a, d) * dot3(g[b], g[c])
            - self.p1_mass(b, c) * dot3(g[a], g[d])
            + self.p1_mass(b, d) * dot3(g[a], g[c])
    }

    /// Raviart–Thomas face function of local face `(a, b, c)` with unit flux along
    /// `(x_b - x_a) x (x_c - x_a)` (3D only).
    pub fn rt_face(&self, [a, b, c]: [usize; 3], lambda: &[f64; 4]) -> [f64; 3] {
        let g = &self.grads;
        let t1 = cross(g[b], g[c]);
        let t2 = cross(g[c], g[a]);
        let t3 = cross(g[a], g[b]);
        let mut v = [0.0; 3];
        for i in 0..3 {
            v[i] = 2.0 * (lambda[a] * t1[i] + lambda[b] * t2[i] + lambda[c] * t3[i]);
        }
        v
    }

    /// Divergence of `rt_face` (constant).
    pub fn rt_face_div(&self, [a, b, c]: [usize; 3]) -> f64 {
        let g = &self.grads;
        6.0 * dot3(g[a], cross(g[b], g[c]))
    }
}
