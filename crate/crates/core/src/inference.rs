//! Reconstruction, classification and model learning from measurements.
//!
//! Reconstruction selects one Gaussian per signal and applies its Wiener
//! filter in the PCA coefficient domain:
//!
//! ```text
//! α̂_g = Λ_g V_gᵀ Φᵀ (Φ Σ_g Φᵀ + σ² I)⁻¹ (y − Φ μ_g),   x̂ = V_g α̂_g + μ_g
//! ```
//!
//! which is the exact minimiser of `‖y − Φμ_g − ΦV_gα‖² + σ² αᵀΛ_g⁻¹α`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{self, AcquisitionState, AscentOptions};
use crate::error::{invalid, Result, ScsError};
use crate::linalg::{FlooredSpd, EIGEN_FLOOR};
use crate::model::{m_step_update, GaussianComponent, GmmModel};
use crate::rng::{derive_seed, stream_rng, Rng};
use crate::sensing::random_orthonormal;

/// Wiener estimate of the PCA coefficients of `x − μ` from `y = Φx + η`.
pub fn wiener_coefficients(
    y: &DVector<f64>,
    rows: &DMatrix<f64>,
    component: &GaussianComponent,
    sigma2: f64,
) -> Result<DVector<f64>> {
    let op = ClassOperator::new(rows, component, sigma2)?;
    Ok(op.coefficients(y))
}

/// Data-fit objective `‖y − Φμ − ΦVα‖² + σ² αᵀΛ⁻¹α` of coefficients `α`
/// under one component.
pub fn map_objective(
    y: &DVector<f64>,
    rows: &DMatrix<f64>,
    component: &GaussianComponent,
    sigma2: f64,
    alpha: &DVector<f64>,
) -> Result<f64> {
    if rows.ncols() != component.dim() || alpha.len() != component.dim() || y.len() != rows.nrows()
    {
        return Err(invalid("objective operands have inconsistent sizes"));
    }
    let resid = y - rows * (component.mean() + component.basis() * alpha);
    let lambda = component.eigenvalues();
    let top = lambda.max();
    let reg: f64 = alpha
        .iter()
        .zip(lambda.iter())
        .filter(|(_, &l)| l > EIGEN_FLOOR * top)
        .map(|(a, l)| a * a / l)
        .sum();
    Ok(resid.norm_squared() + sigma2 * reg)
}

/// Per-class quantities that depend only on `Φ` and the component, so a
/// batch sharing one `Φ` pays for them once.
#[derive(Debug, Clone)]
struct ClassOperator {
    projected_mean: DVector<f64>,
    inv_cov: DMatrix<f64>,
    log_det: f64,
    gain: DMatrix<f64>,
    phi_v: DMatrix<f64>,
    inv_lambda: DVector<f64>,
    basis: DMatrix<f64>,
    mean: DVector<f64>,
}

impl ClassOperator {
    fn new(rows: &DMatrix<f64>, c: &GaussianComponent, sigma2: f64) -> Result<Self> {
        if rows.ncols() != c.dim() {
            return Err(ScsError::DimensionMismatch {
                expected: c.dim(),
                found: rows.ncols(),
            });
        }
        let cov = adaptive::measurement_covariance(rows, c.covariance(), sigma2);
        let floored = FlooredSpd::new(&cov, "measurement covariance")?;
        let inv_cov = floored.inverse();
        let phi_v = rows * c.basis();
        let lambda = c.eigenvalues();
        // Λ Vᵀ Φᵀ = Λ (ΦV)ᵀ
        let mut lt = phi_v.transpose();
        for (i, mut row) in lt.row_iter_mut().enumerate() {
            row *= lambda[i];
        }
        let gain = lt * &inv_cov;
        let top = lambda.max();
        let inv_lambda = lambda.map(|l| if l > EIGEN_FLOOR * top { 1.0 / l } else { 0.0 });
        Ok(Self {
            projected_mean: rows * c.mean(),
            inv_cov,
            log_det: floored.log_det(),
            gain,
            phi_v,
            inv_lambda,
            basis: c.basis().clone(),
            mean: c.mean().clone(),
        })
    }

    fn coefficients(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.gain * (y - &self.projected_mean)
    }

    /// Coefficients, the data-fit objective at them, and the negative
    /// log-evidence `cᵀ C⁻¹ c + log|C|` (up to a constant).
    fn evaluate(&self, y: &DVector<f64>, sigma2: f64) -> (DVector<f64>, f64, f64) {
        let c = y - &self.projected_mean;
        let alpha = &self.gain * &c;
        let resid = &c - &self.phi_v * &alpha;
        let reg: f64 = alpha
            .iter()
            .zip(self.inv_lambda.iter())
            .map(|(a, il)| a * a * il)
            .sum();
        let objective = resid.norm_squared() + sigma2 * reg;
        let evidence = c.dot(&(&self.inv_cov * &c)) + self.log_det;
        (alpha, objective, evidence)
    }
}

/// Outcome of MAP model selection and Wiener reconstruction for one signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub selected_class: usize,
    pub coefficients: DVector<f64>,
    pub signal_estimate: DVector<f64>,
    /// Data-fit objective `‖y − ΦV_gα̂_g‖² + σ²α̂_gᵀΛ_g⁻¹α̂_g` per class.
    pub objective_values: Vec<f64>,
    /// Scores actually ranked for selection (lowest wins). Equal to the
    /// objectives when `σ² > 0`. At `σ² = 0` every objective vanishes
    /// whenever `ΦΣ_gΦᵀ` is invertible, so classes are ranked by
    /// `yᵀ(ΦΣ_gΦᵀ)⁻¹y + log|ΦΣ_gΦᵀ|` instead.
    pub selection_scores: Vec<f64>,
}

/// MAP reconstruction for many signals sharing one `Φ`.
#[derive(Debug, Clone)]
pub struct MapReconstructor {
    sigma2: f64,
    classes: Vec<ClassOperator>,
}

impl MapReconstructor {
    pub fn new(rows: &DMatrix<f64>, model: &GmmModel, sigma2: f64) -> Result<Self> {
        if sigma2.is_nan() || sigma2 < 0.0 {
            return Err(invalid("noise variance must be non-negative"));
        }
        let classes = model
            .components()
            .iter()
            .map(|c| ClassOperator::new(rows, c, sigma2))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { sigma2, classes })
    }

    pub fn reconstruct(&self, y: &DVector<f64>) -> Result<ReconstructionResult> {
        let m = self.classes[0].projected_mean.len();
        if y.len() != m {
            return Err(ScsError::DimensionMismatch {
                expected: m,
                found: y.len(),
            });
        }
        let mut objective_values = Vec::with_capacity(self.classes.len());
        let mut selection_scores = Vec::with_capacity(self.classes.len());
        let mut best: Option<(usize, DVector<f64>)> = None;
        let mut best_score = f64::INFINITY;
        for (g, op) in self.classes.iter().enumerate() {
            let (alpha, objective, evidence) = op.evaluate(y, self.sigma2);
            let score = if self.sigma2 > 0.0 {
                objective
            } else {
                evidence
            };
            objective_values.push(objective);
            selection_scores.push(score);
            if best.is_none() || score < best_score {
                best_score = score;
                best = Some((g, alpha));
            }
        }
        let (g, coefficients) = best.expect("model has at least one class");
        let op = &self.classes[g];
        let signal_estimate = &op.basis * &coefficients + &op.mean;
        Ok(ReconstructionResult {
            selected_class: g,
            coefficients,
            signal_estimate,
            objective_values,
            selection_scores,
        })
    }

    /// Wiener reconstruction with a known class, skipping model selection.
    pub fn reconstruct_as(&self, y: &DVector<f64>, g: usize) -> Result<DVector<f64>> {
        let op = self
            .classes
            .get(g)
            .ok_or_else(|| invalid(format!("class {g} outside 0..{}", self.classes.len())))?;
        Ok(&op.basis * op.coefficients(y) + &op.mean)
    }
}

pub fn map_reconstruct(
    y: &DVector<f64>,
    rows: &DMatrix<f64>,
    model: &GmmModel,
    sigma2: f64,
) -> Result<ReconstructionResult> {
    MapReconstructor::new(rows, model, sigma2)?.reconstruct(y)
}

/// Class minimising `yᵀ Σ_{y|g}⁻¹ y + log|Σ_{y|g}|` over all measurements
/// in `state` (no prior term). Ties go to the lowest index.
pub fn map_classify(state: &AcquisitionState, model: &GmmModel) -> Result<usize> {
    classify_measurements(state.rows(), state.measurements(), model, state.sigma2())
}

pub fn classify_measurements(
    rows: &DMatrix<f64>,
    y: &DVector<f64>,
    model: &GmmModel,
    sigma2: f64,
) -> Result<usize> {
    if rows.nrows() == 0 {
        return Err(invalid("classification needs at least one measurement"));
    }
    let mut best = 0;
    let mut best_score = f64::INFINITY;
    for (g, c) in model.components().iter().enumerate() {
        let cov = FlooredSpd::new(
            &adaptive::measurement_covariance(rows, c.covariance(), sigma2),
            "measurement covariance",
        )?;
        let centred = y - rows * c.mean();
        let score = cov.quad_inv(&centred) + cov.log_det();
        if score < best_score {
            best_score = score;
            best = g;
        }
    }
    Ok(best)
}

/// Model and diagnostics returned by [`map_em`].
#[derive(Debug, Clone)]
pub struct MapEmResult {
    pub model: GmmModel,
    /// Summed objective of the assigned classes, one entry per E-step.
    pub objectives: Vec<f64>,
    /// Class assignments from the last E-step.
    pub assignments: Vec<usize>,
}

/// Learn a model from measurements `y_i = Φx_i + η_i` sharing one `Φ`:
/// alternate MAP reconstruction of every signal with the M-step on the
/// reconstructions, `kappa` times.
pub fn map_em(
    measurements: &[DVector<f64>],
    rows: &DMatrix<f64>,
    init: &GmmModel,
    sigma2: f64,
    kappa: usize,
) -> Result<MapEmResult> {
    if measurements.is_empty() {
        return Err(ScsError::EmptyAssignment);
    }
    let mut model = init.clone();
    let mut objectives = Vec::with_capacity(kappa);
    let mut assignments = Vec::new();
    for _ in 0..kappa {
        let step = e_step(measurements, rows, &model, sigma2)?;
        objectives.push(step.objective);
        model = m_step_update(&model, &step.estimates, &step.assignments)?;
        assignments = step.assignments;
    }
    Ok(MapEmResult {
        model,
        objectives,
        assignments,
    })
}

/// Reconstructions and assignments of one E-step.
#[derive(Debug, Clone)]
pub struct EStep {
    pub estimates: Vec<DVector<f64>>,
    pub assignments: Vec<usize>,
    pub objective: f64,
}

pub fn e_step(
    measurements: &[DVector<f64>],
    rows: &DMatrix<f64>,
    model: &GmmModel,
    sigma2: f64,
) -> Result<EStep> {
    let rec = MapReconstructor::new(rows, model, sigma2)?;
    let results = measurements
        .par_iter()
        .map(|y| rec.reconstruct(y))
        .collect::<Result<Vec<_>>>()?;
    let mut estimates = Vec::with_capacity(results.len());
    let mut assignments = Vec::with_capacity(results.len());
    let mut objective = 0.0;
    for r in results {
        objective += r.objective_values[r.selected_class];
        assignments.push(r.selected_class);
        estimates.push(r.signal_estimate);
    }
    Ok(EStep {
        estimates,
        assignments,
        objective,
    })
}

/// Source of measurements for one signal during sequential acquisition.
pub trait SignalOracle {
    fn measure(&mut self, rows: &DMatrix<f64>) -> DVector<f64>;
}

/// A known signal observed through `y = Φx + η`, `η ~ N(0, σ²I)`.
#[derive(Debug, Clone)]
pub struct NoisySignal {
    x: DVector<f64>,
    sigma: f64,
    rng: Rng,
}

impl NoisySignal {
    pub fn new(x: DVector<f64>, sigma2: f64, seed: u64, stream: u64) -> Self {
        Self {
            x,
            sigma: sigma2.sqrt(),
            rng: stream_rng(seed, stream),
        }
    }

    pub fn signal(&self) -> &DVector<f64> {
        &self.x
    }
}

impl SignalOracle for NoisySignal {
    fn measure(&mut self, rows: &DMatrix<f64>) -> DVector<f64> {
        use rand::Rng as _;
        let mut y = rows * &self.x;
        if self.sigma > 0.0 {
            for v in y.iter_mut() {
                *v += self.sigma * self.rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
        }
        y
    }
}

/// How blocks after the first are chosen during sequential testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Designer {
    /// μ-measure ascent on the residual covariances with Bayes-updated priors.
    Aida,
    /// The same ascent with the initial priors, so the design never looks at
    /// measured values.
    IdaRepeated,
    /// Fresh random orthonormal block.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShtOptions {
    pub block_size: usize,
    pub budget: usize,
    pub error_target: f64,
    pub designer: Designer,
    pub ascent: AscentOptions,
    /// Number of blocks acquired before the first test. The last block that
    /// fits in the budget is always tested.
    pub first_test_block: usize,
}

impl ShtOptions {
    pub fn new(block_size: usize, budget: usize, error_target: f64, designer: Designer) -> Self {
        Self {
            block_size,
            budget,
            error_target,
            designer,
            ascent: AscentOptions::default(),
            first_test_block: 2,
        }
    }

    /// `η = (1 − P_e) / P_e`.
    pub fn threshold(&self) -> f64 {
        (1.0 - self.error_target) / self.error_target
    }
}

/// State after one acquired block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShtStep {
    pub block: usize,
    pub measurements: usize,
    pub class_priors: Vec<f64>,
    /// `log L_ij`: joint log-likelihood ratio plus initial log-prior ratio.
    pub log_ratios: Vec<Vec<f64>>,
    pub tested: bool,
}

#[derive(Debug, Clone)]
pub struct ShtOutcome {
    /// Class accepted by the threshold test, if any.
    pub decided_class: Option<usize>,
    /// Decided class, or the MAP classification once the budget ran out.
    pub class: usize,
    pub measurements_used: usize,
    pub final_priors: Vec<f64>,
    pub trace: Vec<ShtStep>,
    pub state: AcquisitionState,
}

fn log_ratio_matrix(state: &AcquisitionState) -> Vec<Vec<f64>> {
    let post: Vec<f64> = state
        .class_log_likelihoods()
        .iter()
        .zip(state.initial_priors())
        .map(|(l, p)| l + p.ln())
        .collect();
    post.iter()
        .enumerate()
        .map(|(i, a)| {
            post.iter()
                .enumerate()
                .map(|(j, b)| if i == j { 0.0 } else { a - b })
                .collect()
        })
        .collect()
}

/// Class `i` whose every ratio `log L_ij`, `j ≠ i`, exceeds `log η`.
fn threshold_decision(ratios: &[Vec<f64>], log_eta: f64) -> Option<usize> {
    (0..ratios.len()).find(|&i| {
        (0..ratios.len())
            .filter(|&j| j != i)
            .all(|j| ratios[i][j] > log_eta)
    })
}

/// Sequential hypothesis testing with adaptively designed blocks.
///
/// The first block maximises the μ-measure with no history; later blocks
/// come from `opts.designer`. After each tested block the class `i` is
/// accepted when `min_{j≠i} log L_ij > log η`. Single-class models are
/// decided immediately after the first block.
pub fn sht_run<O: SignalOracle>(
    oracle: &mut O,
    model: &GmmModel,
    sigma2: f64,
    opts: &ShtOptions,
    seed: u64,
) -> Result<ShtOutcome> {
    let b = opts.block_size;
    if !(opts.error_target > 0.0 && opts.error_target < 0.5) {
        return Err(invalid("error target must lie in (0, 0.5)"));
    }
    if b == 0 || opts.budget < b {
        return Err(ScsError::BudgetExhausted {
            remaining: opts.budget,
            block: b,
        });
    }
    let log_eta = opts.threshold().ln();
    let mut state = AcquisitionState::new(model, sigma2, b, opts.budget)?;
    let initial = state.initial_priors().to_vec();
    let mut trace = Vec::new();
    let mut decided = None;
    let mut k = 0;
    while state.remaining() >= b {
        let block_seed = derive_seed(seed, k as u64);
        let rows = if k == 0 {
            adaptive::design_block_with_weights(
                &state,
                model,
                &initial,
                b,
                block_seed,
                &opts.ascent,
            )?
            .rows
        } else {
            match opts.designer {
                Designer::Aida => {
                    adaptive::design_classification_block(
                        &state,
                        model,
                        b,
                        block_seed,
                        &opts.ascent,
                    )?
                    .rows
                }
                Designer::IdaRepeated => {
                    adaptive::design_block_with_weights(
                        &state,
                        model,
                        &initial,
                        b,
                        block_seed,
                        &opts.ascent,
                    )?
                    .rows
                }
                Designer::Random => {
                    random_orthonormal(b, model.dimension(), block_seed)?.into_rows()
                }
            }
        };
        let y = oracle.measure(&rows);
        state.push_block(model, &rows, &y)?;
        k += 1;
        let ratios = log_ratio_matrix(&state);
        let tested = model.len() == 1 || k >= opts.first_test_block || state.remaining() < b;
        trace.push(ShtStep {
            block: k,
            measurements: state.acquired(),
            class_priors: state.class_priors().to_vec(),
            log_ratios: ratios.clone(),
            tested,
        });
        if tested {
            decided = if model.len() == 1 {
                Some(0)
            } else {
                threshold_decision(&ratios, log_eta)
            };
            if decided.is_some() {
                break;
            }
        }
    }
    let class = match decided {
        Some(g) => g,
        None => map_classify(&state, model)?,
    };
    Ok(ShtOutcome {
        decided_class: decided,
        class,
        measurements_used: state.acquired(),
        final_priors: state.class_priors().to_vec(),
        trace,
        state,
    })
}
