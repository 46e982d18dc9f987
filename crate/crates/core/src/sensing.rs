//! Non-adaptive sensing matrices: random orthonormal, per-component
//! eigen sensing, and the averaged-basis Procrustes design (RIP-AB).

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result, ScsError};
use crate::linalg;
use crate::model::{GaussianComponent, GmmModel};
use crate::rng::stream_rng;

/// `M × N` matrix with orthonormal rows, grouped into blocks of
/// `block_size` rows for adaptive protocols.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    rows: DMatrix<f64>,
    block_size: usize,
}

impl SensingMatrix {
    pub const ORTHONORMAL_TOL: f64 = 1e-8;

    pub fn new(rows: DMatrix<f64>, block_size: usize) -> Result<Self> {
        if rows.nrows() > rows.ncols() {
            return Err(invalid(format!(
                "{} rows exceed dimension {}",
                rows.nrows(),
                rows.ncols()
            )));
        }
        if block_size == 0 {
            return Err(invalid("block size must be at least 1"));
        }
        let err = linalg::row_orthonormality_error(&rows);
        if err > Self::ORTHONORMAL_TOL {
            return Err(invalid(format!(
                "rows are not orthonormal (error {err:.3e})"
            )));
        }
        Ok(Self { rows, block_size })
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }
    pub fn into_rows(self) -> DMatrix<f64> {
        self.rows
    }
    pub fn m(&self) -> usize {
        self.rows.nrows()
    }
    pub fn n(&self) -> usize {
        self.rows.ncols()
    }
    pub fn block_size(&self) -> usize {
        self.block_size
    }
    pub fn with_block_size(mut self, b: usize) -> Result<Self> {
        if b == 0 {
            return Err(invalid("block size must be at least 1"));
        }
        self.block_size = b;
        Ok(self)
    }
}

/// Orthonormalised rows of a seeded `M × N` standard-Gaussian draw.
pub fn random_orthonormal(m: usize, n: usize, seed: u64) -> Result<SensingMatrix> {
    if m == 0 || m > n {
        return Err(invalid(format!("need 1 <= M <= N, got M={m}, N={n}")));
    }
    let mut rng = stream_rng(seed, 0);
    let g = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    SensingMatrix::new(linalg::orthonormalize_rows(&g)?, 1)
}

/// First `m` eigenvectors of the component covariance, as rows.
pub fn eigen_sensing(component: &GaussianComponent, m: usize) -> Result<SensingMatrix> {
    let n = component.dim();
    if m == 0 || m > n {
        return Err(invalid(format!("need 1 <= m <= N, got m={m}, N={n}")));
    }
    let rows = component.basis().columns(0, m).transpose();
    SensingMatrix::new(rows, 1)
}

/// Prior-weighted average of the component bases, `E = Σ_g p(g) V_g`.
pub fn average_basis(model: &GmmModel) -> DMatrix<f64> {
    let n = model.dimension();
    let mut e = DMatrix::zeros(n, n);
    for c in model.components() {
        e += c.basis() * c.prior();
    }
    e
}

/// Orthogonal Procrustes: `argmin_X ‖A X − C‖_F` subject to `X Xᵀ = I`,
/// solved by `X = U Wᵀ` where `Aᵀ C = U Δ Wᵀ`.
pub fn orthogonal_procrustes(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != c.nrows() {
        return Err(ScsError::DimensionMismatch {
            expected: a.nrows(),
            found: c.nrows(),
        });
    }
    let m = a.transpose() * c;
    if m.nrows() != m.ncols() {
        return Err(invalid("Procrustes cross-product must be square"));
    }
    let (u, _, w) = linalg::sorted_svd(&m);
    Ok(u * w.transpose())
}

/// RIP-AB: the orthogonal `B` minimising `‖B E − I‖_F` is `W Uᵀ` for
/// `E = U Δ Wᵀ`; the sensing matrix is its first `M` rows.
pub fn rip_ab(model: &GmmModel, m: usize) -> Result<SensingMatrix> {
    let n = model.dimension();
    if m == 0 || m > n {
        return Err(invalid(format!("need 1 <= M <= N, got M={m}, N={n}")));
    }
    let e = average_basis(model);
    // ‖B E − I‖ = ‖Eᵀ Bᵀ − I‖, a Procrustes problem in Bᵀ with A = Eᵀ, C = I.
    let bt = orthogonal_procrustes(&e.transpose(), &DMatrix::identity(n, n))?;
    let b = bt.transpose();
    SensingMatrix::new(b.rows(0, m).into_owned(), 1)
}

/// `‖B E − I_N‖_F`, the objective RIP-AB minimises.
pub fn rip_objective(b: &DMatrix<f64>, e: &DMatrix<f64>) -> f64 {
    (b * e - DMatrix::identity(e.nrows(), e.ncols())).norm()
}
