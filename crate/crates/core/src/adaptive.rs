//! Information-driven sensing design.
//!
//! Classification rows maximise the μ-measure
//!
//! ```text
//! μ(Φ_k) = ½ ( log|Φ_k P̄ Φ_kᵀ| − Σ_g p(g) log|Φ_k P_g Φ_kᵀ| )
//! ```
//!
//! where `P_g` (and `P̄` for the prior-averaged covariance) is the residual
//! covariance after conditioning on the rows already acquired, inflated by
//! `σ² I_N`. With no history this is non-adaptive IDA. Reconstruction rows
//! for a known class `γ` are the leading eigenvectors of `P_γ`.
//!
//! Blocks are orthonormal within themselves; successive blocks are not
//! orthogonalised against each other.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, ScsError};
use crate::linalg::{self, FlooredSpd};
use crate::model::{GaussianComponent, GmmModel};
use crate::sensing::{random_orthonormal, SensingMatrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `Φ Σ Φᵀ + σ² I`.
pub fn measurement_covariance(
    rows: &DMatrix<f64>,
    covariance: &DMatrix<f64>,
    sigma2: f64,
) -> DMatrix<f64> {
    let mut c = rows * covariance * rows.transpose();
    for i in 0..c.nrows() {
        c[(i, i)] += sigma2;
    }
    linalg::symmetrize(&c)
}

/// Joint Gaussian log-density `log p(y | g)` of all measurements taken with
/// `rows`, using the floored inverse of the measurement covariance.
pub fn log_likelihood(
    rows: &DMatrix<f64>,
    y: &DVector<f64>,
    component: &GaussianComponent,
    sigma2: f64,
) -> Result<f64> {
    if rows.nrows() == 0 {
        return Ok(0.0);
    }
    let c = FlooredSpd::new(
        &measurement_covariance(rows, component.covariance(), sigma2),
        "measurement covariance",
    )?;
    let centred = y - rows * component.mean();
    Ok(-0.5 * (c.quad_inv(&centred) + c.log_det() + rows.nrows() as f64 * LN_2PI))
}

/// Per-signal acquisition record: stacked rows and measurements so far,
/// noise level, running joint log-likelihoods and Bayes-updated class
/// probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionState {
    rows: DMatrix<f64>,
    measurements: DVector<f64>,
    sigma2: f64,
    block_size: usize,
    budget: usize,
    initial_priors: Vec<f64>,
    class_log_likelihoods: Vec<f64>,
    class_priors: Vec<f64>,
}

impl AcquisitionState {
    /// Empty history with the model's priors.
    pub fn new(model: &GmmModel, sigma2: f64, block_size: usize, budget: usize) -> Result<Self> {
        if sigma2.is_nan() || sigma2 < 0.0 {
            return Err(invalid("noise variance must be non-negative"));
        }
        if block_size == 0 {
            return Err(invalid("block size must be at least 1"));
        }
        let n = model.dimension();
        if budget > n {
            return Err(invalid(format!("budget {budget} exceeds dimension {n}")));
        }
        let priors = model.priors();
        Ok(Self {
            rows: DMatrix::zeros(0, n),
            measurements: DVector::zeros(0),
            sigma2,
            block_size,
            budget,
            class_log_likelihoods: vec![0.0; priors.len()],
            class_priors: priors.clone(),
            initial_priors: priors,
        })
    }

    /// Append a block of orthonormal rows with its measurements, then
    /// refresh joint log-likelihoods and class probabilities.
    pub fn push_block(
        &mut self,
        model: &GmmModel,
        rows: &DMatrix<f64>,
        y: &DVector<f64>,
    ) -> Result<()> {
        let n = model.dimension();
        if rows.ncols() != n {
            return Err(ScsError::DimensionMismatch {
                expected: n,
                found: rows.ncols(),
            });
        }
        if rows.nrows() != y.len() {
            return Err(ScsError::DimensionMismatch {
                expected: rows.nrows(),
                found: y.len(),
            });
        }
        if rows.nrows() > self.remaining() {
            return Err(ScsError::BudgetExhausted {
                remaining: self.remaining(),
                block: rows.nrows(),
            });
        }
        let err = linalg::row_orthonormality_error(rows);
        if err > SensingMatrix::ORTHONORMAL_TOL {
            return Err(invalid(format!(
                "block rows are not orthonormal (error {err:.3e})"
            )));
        }
        self.rows = linalg::vstack(&self.rows, rows);
        let mut m = DVector::zeros(self.measurements.len() + y.len());
        m.rows_mut(0, self.measurements.len())
            .copy_from(&self.measurements);
        m.rows_mut(self.measurements.len(), y.len()).copy_from(y);
        self.measurements = m;
        self.refresh(model)
    }

    fn refresh(&mut self, model: &GmmModel) -> Result<()> {
        for (g, c) in model.components().iter().enumerate() {
            self.class_log_likelihoods[g] =
                log_likelihood(&self.rows, &self.measurements, c, self.sigma2)?;
        }
        let log_post: Vec<f64> = self
            .class_log_likelihoods
            .iter()
            .zip(&self.initial_priors)
            .map(|(l, p)| {
                if *p > 0.0 {
                    l + p.ln()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let top = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = log_post.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        self.class_priors = weights.iter().map(|w| w / total).collect();
        Ok(())
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }
    pub fn measurements(&self) -> &DVector<f64> {
        &self.measurements
    }
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
    pub fn block_size(&self) -> usize {
        self.block_size
    }
    pub fn budget(&self) -> usize {
        self.budget
    }
    pub fn acquired(&self) -> usize {
        self.rows.nrows()
    }
    pub fn remaining(&self) -> usize {
        self.budget - self.rows.nrows()
    }
    pub fn initial_priors(&self) -> &[f64] {
        &self.initial_priors
    }
    pub fn class_priors(&self) -> &[f64] {
        &self.class_priors
    }
    pub fn class_log_likelihoods(&self) -> &[f64] {
        &self.class_log_likelihoods
    }
}

/// Residual covariances `P_g` and their prior-averaged counterpart `P̄`.
#[derive(Debug, Clone)]
pub struct PosteriorMatrices {
    pub per_class: Vec<DMatrix<f64>>,
    pub average: DMatrix<f64>,
    /// Class weights `p(g)` used for `P̄` and the μ-measure.
    pub weights: Vec<f64>,
}

/// `Σ − Σ Φᵀ (Φ Σ Φᵀ + σ² I)⁻¹ Φ Σ + σ² I_N` for the history `Φ`.
pub fn residual_covariance(
    covariance: &DMatrix<f64>,
    history: &DMatrix<f64>,
    sigma2: f64,
) -> Result<DMatrix<f64>> {
    let n = covariance.nrows();
    let mut p = if history.nrows() == 0 {
        covariance.clone()
    } else {
        let inner = FlooredSpd::new(
            &measurement_covariance(history, covariance, sigma2),
            "history measurement covariance",
        )?;
        let cross = history * covariance;
        covariance - cross.transpose() * inner.inverse() * &cross
    };
    for i in 0..n {
        p[(i, i)] += sigma2;
    }
    Ok(linalg::symmetrize(&p))
}

pub fn posterior_matrices(state: &AcquisitionState, model: &GmmModel) -> Result<PosteriorMatrices> {
    posterior_matrices_with_weights(state, model, state.class_priors())
}

/// As [`posterior_matrices`] but with caller-supplied class weights.
pub fn posterior_matrices_with_weights(
    state: &AcquisitionState,
    model: &GmmModel,
    weights: &[f64],
) -> Result<PosteriorMatrices> {
    if weights.len() != model.len() {
        return Err(ScsError::DimensionMismatch {
            expected: model.len(),
            found: weights.len(),
        });
    }
    let per_class = model
        .components()
        .iter()
        .map(|c| residual_covariance(c.covariance(), state.rows(), state.sigma2()))
        .collect::<Result<Vec<_>>>()?;
    let average = residual_covariance(
        &model.weighted_covariance(weights),
        state.rows(),
        state.sigma2(),
    )?;
    Ok(PosteriorMatrices {
        per_class,
        average,
        weights: weights.to_vec(),
    })
}

fn projected_log_det(
    block: &DMatrix<f64>,
    p: &DMatrix<f64>,
    label: impl FnOnce() -> String,
) -> Result<f64> {
    linalg::log_det_pd(&(block * p * block.transpose()))
        .ok_or_else(|| ScsError::NotPositiveDefinite(label()))
}

/// μ-measure of a candidate block against precomputed residual covariances
/// (history-only terms dropped).
pub fn mu_from_posteriors(block: &DMatrix<f64>, pm: &PosteriorMatrices) -> Result<f64> {
    let mut mu = projected_log_det(block, &pm.average, || "the class average".into())?;
    for (g, (p, &w)) in pm.per_class.iter().zip(&pm.weights).enumerate() {
        if w > 0.0 {
            mu -= w * projected_log_det(block, p, || format!("class {g}"))?;
        }
    }
    Ok(0.5 * mu)
}

/// `(Φ P Φᵀ)⁻¹ Φ P`, the gradient of `½ log|Φ P Φᵀ|` with respect to `Φ`.
pub fn log_det_gradient(block: &DMatrix<f64>, p: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let bp = block * p;
    let inner = linalg::symmetrize(&(&bp * block.transpose()));
    let chol = inner.cholesky()?;
    Some(chol.solve(&bp))
}

/// Gradient of the μ-measure:
/// `(Φ P̄ Φᵀ)⁻¹ Φ P̄ − Σ_g p(g) (Φ P_g Φᵀ)⁻¹ Φ P_g`.
///
/// This is the exact derivative of `μ` (the ½ in `μ` cancels the factor two
/// from differentiating a log-determinant of a symmetric form).
pub fn mu_gradient_from_posteriors(
    block: &DMatrix<f64>,
    pm: &PosteriorMatrices,
) -> Result<DMatrix<f64>> {
    let mut grad = log_det_gradient(block, &pm.average)
        .ok_or_else(|| ScsError::NotPositiveDefinite("the class average".into()))?;
    for (g, (p, &w)) in pm.per_class.iter().zip(&pm.weights).enumerate() {
        if w > 0.0 {
            let term = log_det_gradient(block, p)
                .ok_or_else(|| ScsError::NotPositiveDefinite(format!("class {g}")))?;
            grad -= term * w;
        }
    }
    Ok(grad)
}

pub fn mu_measure(block: &DMatrix<f64>, state: &AcquisitionState, model: &GmmModel) -> Result<f64> {
    mu_from_posteriors(block, &posterior_matrices(state, model)?)
}

pub fn mu_gradient(
    block: &DMatrix<f64>,
    state: &AcquisitionState,
    model: &GmmModel,
) -> Result<DMatrix<f64>> {
    mu_gradient_from_posteriors(block, &posterior_matrices(state, model)?)
}

/// Steepest-ascent settings for block design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AscentOptions {
    /// Initial step length. Rejected steps are halved; after an accepted
    /// step the next trial doubles it.
    pub step: f64,
    /// Stop once the relative μ improvement of an accepted step drops below this.
    pub tol: f64,
    /// Iteration cap.
    pub max_iter: usize,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            step: 0.1,
            tol: 1e-6,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DesignedBlock {
    pub rows: DMatrix<f64>,
    pub mu: f64,
    pub initial_mu: f64,
    pub iterations: usize,
}

/// Maximise μ over `b × N` orthonormal blocks by steepest ascent from a
/// seeded random orthonormal start, re-orthonormalising after every step.
/// Accepted iterates never decrease μ.
pub fn design_classification_block(
    state: &AcquisitionState,
    model: &GmmModel,
    b: usize,
    seed: u64,
    opts: &AscentOptions,
) -> Result<DesignedBlock> {
    design_block_with_weights(state, model, state.class_priors(), b, seed, opts)
}

/// As [`design_classification_block`] with caller-supplied class weights;
/// passing the initial priors gives a design that ignores measured values.
pub fn design_block_with_weights(
    state: &AcquisitionState,
    model: &GmmModel,
    weights: &[f64],
    b: usize,
    seed: u64,
    opts: &AscentOptions,
) -> Result<DesignedBlock> {
    if b == 0 {
        return Err(invalid("block size must be at least 1"));
    }
    if state.remaining() < b {
        return Err(ScsError::BudgetExhausted {
            remaining: state.remaining(),
            block: b,
        });
    }
    let pm = posterior_matrices_with_weights(state, model, weights)?;
    let start = random_orthonormal(b, model.dimension(), seed)?.into_rows();
    ascend(start, &pm, opts)
}

/// Steepest ascent of μ from a given orthonormal block.
pub fn ascend(
    start: DMatrix<f64>,
    pm: &PosteriorMatrices,
    opts: &AscentOptions,
) -> Result<DesignedBlock> {
    let initial_mu = mu_from_posteriors(&start, pm)?;
    let mut rows = start;
    let mut mu = initial_mu;
    let mut iterations = 0;
    let min_step = opts.step * 2f64.powi(-40);
    let max_step = opts.step * 2f64.powi(20);
    let mut step = opts.step;
    while iterations < opts.max_iter {
        let grad = mu_gradient_from_posteriors(&rows, pm)?;
        if grad.norm() <= 1e-12 {
            break;
        }
        let mut accepted = None;
        while step >= min_step {
            let trial = linalg::orthonormalize_rows(&(&rows + &grad * step));
            if let Ok(trial) = trial {
                if let Ok(m) = mu_from_posteriors(&trial, pm) {
                    if m > mu {
                        accepted = Some((trial, m));
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        let Some((next, next_mu)) = accepted else {
            break;
        };
        iterations += 1;
        let gain = next_mu - mu;
        rows = next;
        mu = next_mu;
        if gain < opts.tol * mu.abs().max(1e-12) {
            break;
        }
        // Try a longer step next time; backtracking undoes it if needed.
        step = (2.0 * step).min(max_step);
    }
    Ok(DesignedBlock {
        rows,
        mu,
        initial_mu,
        iterations,
    })
}

/// Reconstruction rows for a known class `γ`: the leading `m` eigenvectors
/// of its residual covariance `P_γ`.
pub fn mi_optimal_step2(
    state: &AcquisitionState,
    model: &GmmModel,
    gamma: usize,
    m: usize,
) -> Result<SensingMatrix> {
    let n = model.dimension();
    if gamma >= model.len() {
        return Err(invalid(format!("class {gamma} outside 0..{}", model.len())));
    }
    if m == 0 || m > n {
        return Err(invalid(format!("need 1 <= m <= N, got m={m}, N={n}")));
    }
    let p = residual_covariance(
        model.component(gamma).covariance(),
        state.rows(),
        state.sigma2(),
    )?;
    let (basis, _) = linalg::sym_eigen_desc(&p);
    SensingMatrix::new(basis.columns(0, m).transpose(), m)
}
