//! Dense symmetric linear algebra for Kronecker-factored preconditioning.
//!
//! Everything here operates on small matrices (layer widths, so tens of
//! rows), which keeps a hand-rolled Cholesky both adequate and dependency
//! free. All functions are pure; no shared state.

use ndarray::Array2;

use crate::error::LinalgError;

/// Absolute tolerance used when validating symmetry of inputs.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// A dense symmetric matrix with dim >= 1.
///
/// Construction validates symmetry to [`SYMMETRY_TOL`] and squares away the
/// residual asymmetry (averaging with the transpose) so downstream consumers
/// can rely on exact symmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: Array2<f64>,
}

impl SymMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self, LinalgError> {
        let (r, c) = data.dim();
        if r == 0 || c == 0 {
            return Err(LinalgError::EmptyMatrix);
        }
        if r != c {
            return Err(LinalgError::DimensionMismatch {
                context: "SymMatrix::new",
                expected: r,
                got: c,
            });
        }
        let mut max_dev = 0.0f64;
        for i in 0..r {
            for j in (i + 1)..r {
                let dev = (data[[i, j]] - data[[j, i]]).abs();
                if dev > max_dev {
                    max_dev = dev;
                }
            }
        }
        if max_dev > SYMMETRY_TOL {
            return Err(LinalgError::NotSymmetric { max_dev });
        }
        Ok(Self::symmetrized(data))
    }

    /// Builds from data assumed symmetric up to rounding, forcing exact
    /// symmetry without the tolerance check.
    pub(crate) fn symmetrized(data: Array2<f64>) -> Self {
        let mut m = data;
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (m[[i, j]] + m[[j, i]]);
                m[[i, j]] = avg;
                m[[j, i]] = avg;
            }
        }
        Self { data: m }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            data: Array2::eye(dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            data: Array2::zeros((dim, dim)),
        }
    }

    /// dim x dim matrix xᵀx / rows, i.e. the second-moment matrix of the
    /// rows of `x`. This is how K-FAC factor statistics enter.
    pub fn second_moment(x: &Array2<f64>) -> Self {
        let rows = x.nrows().max(1) as f64;
        let m = x.t().dot(x) / rows;
        Self::symmetrized(m)
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    /// In-place exponential moving average: self <- decay*self + (1-decay)*fresh.
    pub fn ema_update(&mut self, fresh: &SymMatrix, decay: f64) {
        debug_assert_eq!(self.dim(), fresh.dim());
        self.data
            .zip_mut_with(&fresh.data, |a, &b| *a = decay * *a + (1.0 - decay) * b);
    }

    /// Multiplies every entry by `s` (used for EMA debiasing).
    pub fn scaled(&self, s: f64) -> SymMatrix {
        SymMatrix {
            data: &self.data * s,
        }
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// Fails with `NotPositiveDefinite` on the first non-positive pivot.
fn cholesky(m: &Array2<f64>) -> Result<Array2<f64>, LinalgError> {
    let n = m.nrows();
    let mut l: Array2<f64> = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if !sum.is_finite() || sum <= 0.0 {
                    return Err(LinalgError::NotPositiveDefinite { dim: n, pivot: i });
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Returns (m + damping*I)^{-1}.
///
/// The inverse is computed through a Cholesky factorization; a failed
/// factorization is surfaced as `NotPositiveDefinite` rather than papered
/// over with extra jitter, so callers can tell their damping was too small.
pub fn damped_inverse(m: &SymMatrix, damping: f64) -> Result<SymMatrix, LinalgError> {
    let n = m.dim();
    let mut damped = m.as_array().clone();
    for i in 0..n {
        damped[[i, i]] += damping;
    }
    let l = cholesky(&damped)?;
    // Solve L Lᵀ X = I column by column.
    let mut inv: Array2<f64> = Array2::zeros((n, n));
    let mut y = vec![0.0f64; n];
    for col in 0..n {
        // Forward substitution: L y = e_col.
        for i in 0..n {
            let mut sum = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                sum -= l[[i, k]] * y[k];
            }
            y[i] = sum / l[[i, i]];
        }
        // Backward substitution: Lᵀ x = y.
        for i in (0..n).rev() {
            let mut sum = y[i];
            for k in (i + 1)..n {
                sum -= l[[k, i]] * inv[[k, col]];
            }
            inv[[i, col]] = sum / l[[i, i]];
        }
    }
    Ok(SymMatrix::symmetrized(inv))
}

/// Applies the Kronecker-factored preconditioner to a per-layer gradient:
/// returns g_inv · grad · a_inv, which equals (A ⊗ G)^{-1} vec(grad)
/// reshaped, without materializing the Kronecker product.
///
/// `grad` is laid out output-rows x input-columns (the input side including
/// the homogeneous bias coordinate when the factors were estimated that way).
pub fn kron_precondition(
    grad: &Array2<f64>,
    a_inv: &SymMatrix,
    g_inv: &SymMatrix,
) -> Result<Array2<f64>, LinalgError> {
    let (out_dim, in_dim) = grad.dim();
    if g_inv.dim() != out_dim {
        return Err(LinalgError::DimensionMismatch {
            context: "kron_precondition output side",
            expected: out_dim,
            got: g_inv.dim(),
        });
    }
    if a_inv.dim() != in_dim {
        return Err(LinalgError::DimensionMismatch {
            context: "kron_precondition input side",
            expected: in_dim,
            got: a_inv.dim(),
        });
    }
    Ok(g_inv.as_array().dot(grad).dot(a_inv.as_array()))
}
