//! Dense Cholesky factorization for the small symmetric systems that appear
//! in fitting and in the information-criterion penalties.

use ndarray::{Array1, Array2, ArrayView1};

/// Pivot tolerance relative to the original diagonal entry.
pub const PIVOT_TOLERANCE: f64 = 1e-10;

/// Failure of the factorization: the `pivot`-th leading minor lost all but
/// `ratio` of its diagonal mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub pivot: usize,
    pub ratio: f64,
}

/// Lower-triangular factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    /// Factors a symmetric matrix. Only the lower triangle of `a` is read.
    ///
    /// A pivot `d_k` is rejected when `d_k <= tol * a_kk`, which makes the test
    /// invariant to rescaling of the variables.
    pub fn factor(a: &Array2<f64>, tol: f64) -> Result<Self, NotPositiveDefinite> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "Cholesky needs a square matrix");
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let ajj = a[[j, j]];
            let mut d = ajj;
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            let ratio = if ajj > 0.0 { d / ajj } else { 0.0 };
            if !(d > 0.0) || !d.is_finite() || ratio <= tol {
                return Err(NotPositiveDefinite { pivot: j, ratio });
            }
            let ljj = d.sqrt();
            l[[j, j]] = ljj;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / ljj;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.l
    }

    pub fn solve_vec(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut z = b.to_owned();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= self.l[[i, k]] * z[k];
            }
            z[i] = s / self.l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (i + 1)..n {
                s -= self.l[[k, i]] * z[k];
            }
            z[i] = s / self.l[[i, i]];
        }
        z
    }

    /// Solves `A Z = B` column by column.
    pub fn solve_mat(&self, b: &Array2<f64>) -> Array2<f64> {
        assert_eq!(b.nrows(), self.dim());
        let mut z = Array2::<f64>::zeros(b.raw_dim());
        for (j, col) in b.columns().into_iter().enumerate() {
            z.column_mut(j).assign(&self.solve_vec(col));
        }
        z
    }
}

/// `trace(A⁻¹ B)` through a Cholesky solve of `A Z = B`; no inverse is formed.
pub fn trace_solve(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64, NotPositiveDefinite> {
    let chol = Cholesky::factor(a, PIVOT_TOLERANCE)?;
    let z = chol.solve_mat(b);
    Ok(z.diag().sum())
}

/// Copies the upper triangle onto the lower one.
pub(crate) fn symmetrize_from_upper(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            a[[i, j]] = a[[j, i]];
        }
    }
}
