//! Dense linear-algebra helpers shared by every module: sorted and
//! sign-normalised eigen/singular decompositions, floored SPD inverses,
//! and row orthonormalisation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, ScsError};

/// Relative eigenvalue floor applied before any inversion or determinant.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Flip each column so that its first non-negligible entry is positive.
pub fn normalize_column_signs(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        let col = m.column(j);
        let scale = col.amax();
        if scale == 0.0 {
            continue;
        }
        let first = col.iter().copied().find(|v| v.abs() > 1e-12 * scale);
        if matches!(first, Some(v) if v < 0.0) {
            m.column_mut(j).neg_mut();
        }
    }
}

/// `‖A − Aᵀ‖_F / (1 + ‖A‖_F)`.
pub fn symmetry_residual(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).norm() / (1.0 + a.norm())
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigendecomposition of a symmetric matrix with eigenvalues in descending
/// order (stable for ties) and eigenvector signs normalised.
pub fn sym_eigen_desc(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = a.nrows();
    let eig = symmetrize(a).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut basis = DMatrix::zeros(n, n);
    let mut values = DVector::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        basis.set_column(dst, &eig.eigenvectors.column(src));
        values[dst] = eig.eigenvalues[src];
    }
    normalize_column_signs(&mut basis);
    (basis, values)
}

/// Thin SVD `A = U diag(s) Vᵀ` with descending singular values; each left
/// vector's first non-negligible entry is positive and the matching right
/// vector is flipped with it.
pub fn sorted_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested Vᵀ").transpose();
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut us = DMatrix::zeros(u.nrows(), k);
    let mut vs = DMatrix::zeros(v.nrows(), k);
    let mut s = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        let mut uc = u.column(src).into_owned();
        let mut vc = v.column(src).into_owned();
        let scale = uc.amax();
        if let Some(first) = uc.iter().copied().find(|x| x.abs() > 1e-12 * scale) {
            if first < 0.0 {
                uc.neg_mut();
                vc.neg_mut();
            }
        }
        us.set_column(dst, &uc);
        vs.set_column(dst, &vc);
        s[dst] = svd.singular_values[src];
    }
    (us, s, vs)
}

/// Symmetric PSD matrix held in eigen form with eigenvalues floored at
/// `EIGEN_FLOOR · λ_max`.
#[derive(Debug, Clone)]
pub struct FlooredSpd {
    vectors: DMatrix<f64>,
    values: DVector<f64>,
}

impl FlooredSpd {
    pub fn new(a: &DMatrix<f64>, context: &'static str) -> Result<Self> {
        let eig = symmetrize(a).symmetric_eigen();
        let largest = eig.eigenvalues.max();
        if largest.is_nan() || largest <= 0.0 || !largest.is_finite() {
            return Err(ScsError::Singular(context));
        }
        let floor = EIGEN_FLOOR * largest;
        let values = eig.eigenvalues.map(|v| v.max(floor));
        Ok(Self {
            vectors: eig.eigenvectors,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn log_det(&self) -> f64 {
        self.values.iter().map(|v| v.ln()).sum()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            self.vectors[(i, j)] / self.values[j]
        });
        &scaled * self.vectors.transpose()
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut c = self.vectors.tr_mul(b);
        c.component_div_assign(&self.values);
        &self.vectors * c
    }

    /// `bᵀ A⁻¹ b`.
    pub fn quad_inv(&self, b: &DVector<f64>) -> f64 {
        let c = self.vectors.tr_mul(b);
        c.iter()
            .zip(self.values.iter())
            .map(|(ci, v)| ci * ci / v)
            .sum()
    }
}

/// Log-determinant through Cholesky; `None` when the matrix is not
/// numerically positive definite.
pub fn log_det_pd(a: &DMatrix<f64>) -> Option<f64> {
    let chol = symmetrize(a).cholesky()?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        let d = l[(i, i)];
        if d.is_nan() || d <= 0.0 {
            return None;
        }
        acc += d.ln();
    }
    Some(2.0 * acc)
}

/// Orthonormalise the rows of `m` while preserving their span
/// (Gram–Schmidt order, positive diagonal in the triangular factor).
pub fn orthonormalize_rows(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    if rows > cols {
        return Err(ScsError::InvalidParameter(format!(
            "cannot orthonormalise {rows} rows in dimension {cols}"
        )));
    }
    let qr = m.transpose().qr();
    let mut q = qr.q();
    let r = qr.r();
    let scale = m.norm().max(f64::MIN_POSITIVE);
    for j in 0..rows {
        let d = r[(j, j)];
        if d.abs() <= 1e-12 * scale {
            return Err(ScsError::Singular("rank-deficient rows"));
        }
        if d < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q.transpose())
}

/// Stack row blocks vertically.
pub fn vstack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    if top.nrows() == 0 {
        return bottom.clone();
    }
    let cols = top.ncols();
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), cols);
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.amax()
}

/// `‖Φ Φᵀ − I‖_max`.
pub fn row_orthonormality_error(phi: &DMatrix<f64>) -> f64 {
    let g = phi * phi.transpose();
    let id = DMatrix::<f64>::identity(g.nrows(), g.ncols());
    (g - id).amax()
}

/// Largest principal-angle sine between the row spaces of two
/// row-orthonormal matrices of equal rank.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let proj = b.transpose() * b;
    let residual = a - a * proj;
    let s = residual.singular_values();
    s.max()
}
