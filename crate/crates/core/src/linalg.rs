//! Dense Cholesky factorization for the small symmetric systems that come up in IRLS and
//! Mahalanobis distances.

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix, row-major.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    l: Vec<f64>,
}

/// The factorization failed at this column: its pivot was not positive relative to the
/// column's own scale, i.e. it is (numerically) a combination of earlier columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PivotFailure {
    pub column: usize,
}

impl Cholesky {
    /// Factor a `dim x dim` row-major matrix. `rel_tol` is compared against each pivot
    /// divided by the original diagonal entry.
    pub fn factor(a: &[f64], dim: usize, rel_tol: f64) -> Result<Self, PivotFailure> {
        assert_eq!(a.len(), dim * dim);
        let mut l = vec![0.0; dim * dim];
        for j in 0..dim {
            let mut d = a[j * dim + j];
            for k in 0..j {
                d -= l[j * dim + k] * l[j * dim + k];
            }
            let scale = a[j * dim + j].abs();
            if !(d > rel_tol * scale) || !d.is_finite() || scale == 0.0 {
                return Err(PivotFailure { column: j });
            }
            let djj = d.sqrt();
            l[j * dim + j] = djj;
            for i in (j + 1)..dim {
                let mut s = a[i * dim + j];
                for k in 0..j {
                    s -= l[i * dim + k] * l[j * dim + k];
                }
                l[i * dim + j] = s / djj;
            }
        }
        Ok(Cholesky { dim, l })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solve `L z = b` in place.
    pub fn forward(&self, b: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    /// Solve `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.dim;
        self.forward(b);
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }
}
