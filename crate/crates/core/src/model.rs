//! Gaussian mixture signal model, its PCA dictionary, synthetic benchmark
//! generation and class-separability metrics.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, ScsError};
use crate::linalg::{self, FlooredSpd};
use crate::rng::{derive_seed, stream_rng};

/// One mixture component. The basis columns are the covariance
/// eigenvectors in descending eigenvalue order; together the bases of all
/// components form the structured dictionary of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    basis: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    prior: f64,
}

impl GaussianComponent {
    pub fn from_covariance(
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
        prior: f64,
    ) -> Result<Self> {
        let n = covariance.nrows();
        if covariance.ncols() != n {
            return Err(ScsError::DimensionMismatch {
                expected: n,
                found: covariance.ncols(),
            });
        }
        if mean.len() != n {
            return Err(ScsError::DimensionMismatch {
                expected: n,
                found: mean.len(),
            });
        }
        check_prior(prior)?;
        let (basis, eigenvalues) = spd_eigendecompose(&covariance)?;
        Ok(Self {
            mean,
            covariance: linalg::symmetrize(&covariance),
            basis,
            eigenvalues,
            prior,
        })
    }

    /// Build from an orthonormal basis and its (descending, non-negative)
    /// eigenvalues; the covariance is assembled as `V Λ Vᵀ`.
    pub fn from_spectrum(
        mean: DVector<f64>,
        basis: DMatrix<f64>,
        eigenvalues: DVector<f64>,
        prior: f64,
    ) -> Result<Self> {
        let n = basis.nrows();
        if basis.ncols() != n || eigenvalues.len() != n || mean.len() != n {
            return Err(ScsError::DimensionMismatch {
                expected: n,
                found: eigenvalues.len(),
            });
        }
        check_prior(prior)?;
        if eigenvalues.iter().any(|&v| v < 0.0)
            || eigenvalues.as_slice().windows(2).any(|w| w[0] < w[1])
        {
            return Err(invalid(
                "eigenvalues must be non-negative and non-increasing",
            ));
        }
        let scaled = DMatrix::from_fn(n, n, |i, j| basis[(i, j)] * eigenvalues[j]);
        let covariance = linalg::symmetrize(&(&scaled * basis.transpose()));
        Ok(Self {
            mean,
            covariance,
            basis,
            eigenvalues,
            prior,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }
    pub fn prior(&self) -> f64 {
        self.prior
    }

    pub fn with_prior(mut self, prior: f64) -> Result<Self> {
        check_prior(prior)?;
        self.prior = prior;
        Ok(self)
    }
}

fn check_prior(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("prior {p} outside [0, 1]")));
    }
    Ok(())
}

/// Ordered set of components sharing one dimension; priors sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    components: Vec<GaussianComponent>,
}

impl GmmModel {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| invalid("a mixture needs at least one component"))?;
        let n = first.dim();
        if let Some(bad) = components.iter().find(|c| c.dim() != n) {
            return Err(ScsError::DimensionMismatch {
                expected: n,
                found: bad.dim(),
            });
        }
        let total: f64 = components.iter().map(|c| c.prior).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("priors sum to {total}, expected 1")));
        }
        Ok(Self { components })
    }

    pub fn dimension(&self) -> usize {
        self.components[0].dim()
    }
    pub fn len(&self) -> usize {
        self.components.len()
    }
    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }
    pub fn component(&self, g: usize) -> &GaussianComponent {
        &self.components[g]
    }
    pub fn priors(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.prior).collect()
    }

    /// `Σ_g w_g Σ_g` for the given weights.
    pub fn weighted_covariance(&self, weights: &[f64]) -> DMatrix<f64> {
        let n = self.dimension();
        let mut acc = DMatrix::zeros(n, n);
        for (c, &w) in self.components.iter().zip(weights) {
            acc += c.covariance() * w;
        }
        acc
    }

    /// Horizontal concatenation `[V_1 … V_G]`.
    pub fn dictionary(&self) -> DMatrix<f64> {
        let n = self.dimension();
        let mut d = DMatrix::zeros(n, n * self.len());
        for (g, c) in self.components.iter().enumerate() {
            d.columns_mut(g * n, n).copy_from(c.basis());
        }
        d
    }
}

/// Where a batch of signals came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic {
        seed: u64,
    },
    ImagePatches {
        source: String,
        width: usize,
        height: usize,
        patch: usize,
        overlap: bool,
        /// Top-left (row, col) of every patch.
        origins: Vec<(usize, usize)>,
    },
    Table {
        source: String,
    },
}

/// A set of signals with optional ground-truth labels and per-signal DC
/// offsets removed at ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBatch {
    pub signals: Vec<DVector<f64>>,
    pub labels: Option<Vec<usize>>,
    pub provenance: Provenance,
    pub dc_offsets: Option<Vec<f64>>,
}

impl SignalBatch {
    pub fn new(
        signals: Vec<DVector<f64>>,
        labels: Option<Vec<usize>>,
        provenance: Provenance,
    ) -> Result<Self> {
        if signals.is_empty() {
            return Err(invalid("a signal batch needs at least one signal"));
        }
        let n = signals[0].len();
        if let Some(bad) = signals.iter().find(|s| s.len() != n) {
            return Err(ScsError::DimensionMismatch {
                expected: n,
                found: bad.len(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != signals.len() {
                return Err(ScsError::DimensionMismatch {
                    expected: signals.len(),
                    found: l.len(),
                });
            }
        }
        Ok(Self {
            signals,
            labels,
            provenance,
            dc_offsets: None,
        })
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }
    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }
    pub fn dimension(&self) -> usize {
        self.signals[0].len()
    }

    /// Signals stacked as rows of an `S × N` matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.dimension(), |i, j| self.signals[i][j])
    }

    /// Check every label is a valid index into a model with `g` components.
    pub fn validate_labels(&self, g: usize) -> Result<()> {
        if let Some(l) = &self.labels {
            if let Some(&bad) = l.iter().find(|&&v| v >= g) {
                return Err(invalid(format!("label {bad} outside 0..{g}")));
            }
        }
        Ok(())
    }
}

/// PCA of a symmetric PSD matrix: eigenvectors as columns (descending
/// eigenvalues, first non-zero entry positive). Negative eigenvalues down to
/// `−1e-8·λ_max` are clamped to zero.
pub fn spd_eigendecompose(covariance: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = covariance.nrows();
    if n == 0 || covariance.ncols() != n {
        return Err(invalid("covariance must be a non-empty square matrix"));
    }
    let residual =
        (covariance - covariance.transpose()).norm() / covariance.norm().max(f64::MIN_POSITIVE);
    if residual > 1e-10 {
        return Err(ScsError::NotSymmetric { residual });
    }
    let (basis, mut values) = linalg::sym_eigen_desc(covariance);
    let largest = values[0].max(0.0);
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-8 * largest || largest == 0.0 && *v < -1e-300 {
                return Err(ScsError::NotPsd {
                    eigenvalue: *v,
                    largest,
                });
            }
            *v = 0.0;
        }
    }
    Ok((basis, values))
}

/// Zero-mean Bhattacharyya distance
/// `½ ln( |(Σ₀+Σ₁)/2| / √(|Σ₀||Σ₁|) )`, with each spectrum floored at
/// `1e-10·λ_max` before taking determinants.
pub fn bhattacharyya_distance(c0: &GaussianComponent, c1: &GaussianComponent) -> Result<f64> {
    if c0.dim() != c1.dim() {
        return Err(ScsError::DimensionMismatch {
            expected: c0.dim(),
            found: c1.dim(),
        });
    }
    let avg = (c0.covariance() + c1.covariance()) * 0.5;
    let ld_avg = FlooredSpd::new(&avg, "average covariance")?.log_det();
    let ld0 = FlooredSpd::new(c0.covariance(), "first covariance")?.log_det();
    let ld1 = FlooredSpd::new(c1.covariance(), "second covariance")?.log_det();
    Ok((0.5 * (ld_avg - 0.5 * (ld0 + ld1))).max(0.0))
}

/// Parameters of the decaying synthetic spectrum `λ_i = r·10^β·i^{−ω}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumParams {
    pub r: f64,
    pub beta: f64,
    pub omega: u32,
}

impl SpectrumParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(invalid(format!("r = {} outside (0, 1]", self.r)));
        }
        if !(4.0..=8.0).contains(&self.beta) {
            return Err(invalid(format!("beta = {} outside [4, 8]", self.beta)));
        }
        if !(self.omega == 3 || self.omega == 4) {
            return Err(invalid(format!("omega = {} not in {{3, 4}}", self.omega)));
        }
        Ok(())
    }

    /// Eigenvalue `i` (1-based).
    pub fn eigenvalue(&self, i: usize) -> f64 {
        self.r * 10f64.powf(self.beta) * (i as f64).powi(-(self.omega as i32))
    }
}

/// Zero-mean synthetic component `U Λ Uᵀ`, `U` the left singular basis of a
/// standard-Gaussian `N × N` matrix drawn from `seed`.
pub fn synth_covariance(n: usize, params: SpectrumParams, seed: u64) -> Result<GaussianComponent> {
    if n < 2 {
        return Err(invalid("synthetic covariances need N >= 2"));
    }
    params.validate()?;
    let mut rng = stream_rng(seed, 0);
    let r = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut u = r.svd(true, false).u.expect("requested U");
    linalg::normalize_column_signs(&mut u);
    let eigenvalues = DVector::from_fn(n, |i, _| params.eigenvalue(i + 1));
    GaussianComponent::from_spectrum(DVector::zeros(n), u, eigenvalues, 1.0)
}

/// Two-class synthetic benchmark whose Bhattacharyya distance falls in a
/// requested range.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub model: GmmModel,
    pub distance: f64,
    pub params: [SpectrumParams; 2],
    pub attempts: usize,
}

/// Rejection-sample spectrum parameters and rotations until the pair's
/// Bhattacharyya distance lies in `[lo, hi)`; equal priors.
pub fn synth_pair_in_range(
    n: usize,
    lo: f64,
    hi: f64,
    seed: u64,
    max_attempts: usize,
) -> Result<SyntheticPair> {
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(invalid("empty distance range"));
    }
    let mut rng = stream_rng(seed, u64::MAX);
    for attempt in 1..=max_attempts {
        let draw = |rng: &mut crate::rng::Rng| SpectrumParams {
            r: 1.0 - rng.random::<f64>(),
            beta: rng.random_range(4.0..=8.0),
            omega: if rng.random::<bool>() { 3 } else { 4 },
        };
        let p0 = draw(&mut rng);
        let p1 = draw(&mut rng);
        let c0 = synth_covariance(n, p0, derive_seed(seed, 2 * attempt as u64))?;
        let c1 = synth_covariance(n, p1, derive_seed(seed, 2 * attempt as u64 + 1))?;
        let d = bhattacharyya_distance(&c0, &c1)?;
        if d >= lo && d < hi {
            let model = GmmModel::new(vec![c0.with_prior(0.5)?, c1.with_prior(0.5)?])?;
            return Ok(SyntheticPair {
                model,
                distance: d,
                params: [p0, p1],
                attempts: attempt,
            });
        }
    }
    Err(invalid(format!(
        "no pair with distance in [{lo}, {hi}) after {max_attempts} attempts"
    )))
}

/// Draw `s` clean signals: pick `g` with probability `prior_g`, then
/// `x ~ N(μ_g, Σ_g)`. Signal `i` uses its own random stream.
pub fn sample_signals(model: &GmmModel, s: usize, seed: u64) -> Result<SignalBatch> {
    if s == 0 {
        return Err(invalid("sample count must be positive"));
    }
    let n = model.dimension();
    let factors: Vec<DMatrix<f64>> = model
        .components()
        .iter()
        .map(|c| DMatrix::from_fn(n, n, |i, j| c.basis()[(i, j)] * c.eigenvalues()[j].sqrt()))
        .collect();
    let priors = model.priors();
    let mut signals = Vec::with_capacity(s);
    let mut labels = Vec::with_capacity(s);
    for i in 0..s {
        let mut rng = stream_rng(seed, i as u64);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut g = priors.len() - 1;
        for (k, p) in priors.iter().enumerate() {
            acc += p;
            if u < acc {
                g = k;
                break;
            }
        }
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        signals.push(model.component(g).mean() + &factors[g] * z);
        labels.push(g);
    }
    SignalBatch::new(signals, Some(labels), Provenance::Synthetic { seed })
}

/// Hard-assignment M-step: per-class empirical mean and (biased) covariance,
/// priors `|S_g|/S`, dictionaries refreshed by eigendecomposition. Classes
/// with fewer than two members keep their previous mean and covariance.
pub fn m_step_update(
    prev: &GmmModel,
    signals: &[DVector<f64>],
    assignments: &[usize],
) -> Result<GmmModel> {
    if signals.len() != assignments.len() {
        return Err(ScsError::DimensionMismatch {
            expected: signals.len(),
            found: assignments.len(),
        });
    }
    if signals.is_empty() {
        return Err(ScsError::EmptyAssignment);
    }
    let g_count = prev.len();
    let n = prev.dimension();
    let total = signals.len() as f64;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); g_count];
    for (i, &g) in assignments.iter().enumerate() {
        if g >= g_count {
            return Err(invalid(format!("assignment {g} outside 0..{g_count}")));
        }
        members[g].push(i);
    }
    let mut components = Vec::with_capacity(g_count);
    for (g, idx) in members.iter().enumerate() {
        let prior = idx.len() as f64 / total;
        if idx.len() < 2 {
            components.push(prev.component(g).clone().with_prior(prior)?);
            continue;
        }
        let count = idx.len() as f64;
        let mut mean = DVector::zeros(n);
        for &i in idx {
            mean += &signals[i];
        }
        mean /= count;
        let mut cov = DMatrix::zeros(n, n);
        for &i in idx {
            let d = &signals[i] - &mean;
            cov.ger(1.0, &d, &d, 1.0);
        }
        cov /= count;
        components.push(GaussianComponent::from_covariance(mean, cov, prior)?);
    }
    // Renormalise against rounding in |S_g|/S.
    GmmModel::new(components)
}
