//! Matern 5/2 kernel with per-dimension (ARD) lengthscales.
//!
//! `k(a, b) = s2 * (1 + sqrt(5) r + 5/3 r^2) * exp(-sqrt(5) r)` where
//! `r^2 = sum_g ((a_g - b_g) / ls_g)^2`.

use nalgebra::DMatrix;

const SQRT5: f64 = 2.23606797749978969;

/// Lightweight view of the kernel hyperparameters used by the model code.
#[derive(Clone, Copy)]
pub(crate) struct Matern52<'a> {
    pub ls: &'a [f64],
    pub s2: f64,
}

impl Matern52<'_> {
    #[inline]
    fn r2(&self, a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
        let mut r2 = 0.0;
        for (g, ls) in self.ls.iter().enumerate() {
            let d = (a[(i, g)] - b[(j, g)]) / ls;
            r2 += d * d;
        }
        r2
    }

    #[inline]
    pub fn of_r2(&self, r2: f64) -> f64 {
        let r = r2.sqrt();
        self.s2 * (1.0 + SQRT5 * r + 5.0 / 3.0 * r2) * (-SQRT5 * r).exp()
    }

    /// Kernel between row `i` of `a` and row `j` of `b` (rows are points).
    #[inline]
    pub fn eval(&self, a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
        self.of_r2(self.r2(a, i, b, j))
    }

    /// Cross-covariance matrix: entry `(i, j) = k(a_i, b_j)`.
    pub fn cross(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| self.eval(a, i, b, j))
    }

    /// Symmetric covariance matrix of one point set.
    pub fn symmetric(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = self.s2;
            for j in 0..i {
                let v = self.eval(a, i, a, j);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// Writes `dk(a_i, b_j) / d a_g` for every coordinate `g` into `out`.
    ///
    /// The radial derivative is `-(5/3) s2 r (1 + sqrt(5) r) exp(-sqrt(5) r)`,
    /// which combined with `dr/da_g = (a_g - b_g) / (ls_g^2 r)` stays smooth
    /// at `r = 0`.
    pub fn grad(&self, a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.ls.len());
        let r2 = self.r2(a, i, b, j);
        let r = r2.sqrt();
        let common = -(5.0 / 3.0) * self.s2 * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp();
        for (g, ls) in self.ls.iter().enumerate() {
            out[g] = common * (a[(i, g)] - b[(j, g)]) / (ls * ls);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_distance_value() {
        // One dimension, lengthscale 1, |a - b| = 1 => r = 1. Reference value
        // computed with 30-digit arithmetic.
        let k = Matern52 { ls: &[1.0], s2: 1.0 };
        let a = DMatrix::from_row_slice(1, 1, &[0.25]);
        let b = DMatrix::from_row_slice(1, 1, &[1.25]);
        let v = k.eval(&a, 0, &b, 0);
        assert!((v - 0.523994108831820310592713250761).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn diagonal_is_outputscale() {
        let k = Matern52 { ls: &[0.3, 0.7], s2: 2.5 };
        let a = DMatrix::from_row_slice(1, 2, &[0.1, 0.9]);
        assert_eq!(k.eval(&a, 0, &a, 0), 2.5);
    }

    #[test]
    fn ard_lengthscales_scale_distances() {
        let k1 = Matern52 { ls: &[2.0, 0.5], s2: 1.0 };
        let k2 = Matern52 { ls: &[1.0, 1.0], s2: 1.0 };
        let a = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let b = DMatrix::from_row_slice(1, 2, &[2.0, 0.5]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        // Scaled distances agree, so the kernels agree.
        assert!((k1.eval(&a, 0, &b, 0) - k2.eval(&a, 0, &c, 0)).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ls = [0.4, 1.3, 0.8];
        let k = Matern52 { ls: &ls, s2: 1.7 };
        let a = DMatrix::from_row_slice(1, 3, &[0.2, 0.5, 0.9]);
        let b = DMatrix::from_row_slice(1, 3, &[0.6, 0.1, 0.8]);
        let mut g = [0.0; 3];
        k.grad(&a, 0, &b, 0, &mut g);
        let h = 1e-6;
        for d in 0..3 {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap[(0, d)] += h;
            am[(0, d)] -= h;
            let fd = (k.eval(&ap, 0, &b, 0) - k.eval(&am, 0, &b, 0)) / (2.0 * h);
            assert!((g[d] - fd).abs() < 1e-8, "dim {d}: {} vs {}", g[d], fd);
        }
    }

    #[test]
    fn gradient_vanishes_at_zero_distance() {
        let k = Matern52 { ls: &[0.5], s2: 1.0 };
        let a = DMatrix::from_row_slice(1, 1, &[0.3]);
        let mut g = [1.0];
        k.grad(&a, 0, &a, 0, &mut g);
        assert_eq!(g[0], 0.0);
    }
}
