//! Model learning for image patches: orientation-based initialisation,
//! MAP-EM on clean patches, and co-adaptation of the model with a sensing
//! matrix re-designed from it at every iteration.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::psnr_from_mse;
use crate::error::{invalid, Result};
use crate::inference::{self, MapEmResult, MapReconstructor};
use crate::model::{m_step_update, GaussianComponent, GmmModel};
use crate::sensing::{random_orthonormal, rip_ab};

/// Dominant gradient orientation of a square patch as a bin in
/// `0..bins`, or `bins` for patches in the lowest-energy fraction
/// `flat_fraction` of the set.
pub fn orientation_labels(
    patches: &[DVector<f64>],
    patch: usize,
    bins: usize,
    flat_fraction: f64,
) -> Result<Vec<usize>> {
    if bins == 0 || patch < 2 {
        return Err(invalid(
            "need at least one orientation bin and patches of side >= 2",
        ));
    }
    if let Some(p) = patches.iter().find(|p| p.len() != patch * patch) {
        return Err(invalid(format!(
            "patch of length {} is not {patch}x{patch}",
            p.len()
        )));
    }
    let stats: Vec<(f64, f64)> = patches
        .iter()
        .map(|p| {
            let at = |r: usize, c: usize| p[r * patch + c];
            let (mut jxx, mut jyy, mut jxy) = (0.0, 0.0, 0.0);
            for r in 0..patch - 1 {
                for c in 0..patch - 1 {
                    let gx = 0.5 * (at(r, c + 1) - at(r, c) + at(r + 1, c + 1) - at(r + 1, c));
                    let gy = 0.5 * (at(r + 1, c) - at(r, c) + at(r + 1, c + 1) - at(r, c + 1));
                    jxx += gx * gx;
                    jyy += gy * gy;
                    jxy += gx * gy;
                }
            }
            // Orientation of the dominant gradient direction, in (−π/2, π/2].
            let theta = 0.5 * (2.0 * jxy).atan2(jxx - jyy);
            (jxx + jyy, theta)
        })
        .collect();
    let mut energies: Vec<f64> = stats.iter().map(|s| s.0).collect();
    energies.sort_by(f64::total_cmp);
    let cut =
        ((flat_fraction.clamp(0.0, 1.0) * energies.len() as f64) as usize).min(energies.len());
    let threshold = if cut == 0 {
        f64::NEG_INFINITY
    } else {
        energies[cut - 1]
    };
    Ok(stats
        .iter()
        .map(|&(e, theta)| {
            if e <= threshold {
                bins
            } else {
                let u = (theta + std::f64::consts::FRAC_PI_2) / std::f64::consts::PI;
                ((u * bins as f64) as usize).min(bins - 1)
            }
        })
        .collect())
}

/// Model from hard labels. Each class gets its empirical mean and
/// covariance plus `ridge · I`; classes with fewer than two members borrow
/// the pooled statistics. Every class keeps a positive prior.
pub fn model_from_labels(
    signals: &[DVector<f64>],
    labels: &[usize],
    classes: usize,
    ridge: f64,
) -> Result<GmmModel> {
    if signals.is_empty() || signals.len() != labels.len() {
        return Err(invalid("need one label per signal"));
    }
    let n = signals[0].len();
    let moments = |idx: &[usize]| {
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
        for i in 0..n {
            cov[(i, i)] += ridge;
        }
        (mean, cov)
    };
    let all: Vec<usize> = (0..signals.len()).collect();
    let pooled = moments(&all);
    let mut members = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(invalid(format!("label {l} outside 0..{classes}")));
        }
        members[l].push(i);
    }
    let total = signals.len() as f64 + classes as f64;
    let mut comps = Vec::with_capacity(classes);
    for idx in &members {
        let (mean, cov) = if idx.len() < 2 {
            pooled.clone()
        } else {
            moments(idx)
        };
        comps.push(GaussianComponent::from_covariance(
            mean,
            cov,
            (idx.len() as f64 + 1.0) / total,
        )?);
    }
    GmmModel::new(comps)
}

/// Orientation-initialised model: `bins` gradient-orientation classes plus
/// one flat class holding the lowest-energy `1 / (bins + 1)` of patches.
pub fn orientation_init(patches: &[DVector<f64>], patch: usize, bins: usize) -> Result<GmmModel> {
    let labels = orientation_labels(patches, patch, bins, 1.0 / (bins as f64 + 1.0))?;
    let scale = patches.iter().map(|p| p.norm_squared()).sum::<f64>()
        / (patches.len() * patch * patch) as f64;
    model_from_labels(patches, &labels, bins + 1, 1e-3 * scale.max(1e-12))
}

/// MAP-EM on fully observed noiseless signals.
pub fn train_clean(signals: &[DVector<f64>], init: &GmmModel, kappa: usize) -> Result<MapEmResult> {
    let n = init.dimension();
    inference::map_em(signals, &DMatrix::identity(n, n), init, 0.0, kappa)
}

/// How the sensing matrix follows the model during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSensing {
    /// One seeded random orthonormal matrix, never re-designed.
    Random { seed: u64 },
    /// RIP-AB of the current model.
    RipAb,
}

impl BatchSensing {
    pub fn design(&self, model: &GmmModel, m: usize) -> Result<DMatrix<f64>> {
        Ok(match *self {
            BatchSensing::Random { seed } => {
                random_orthonormal(m, model.dimension(), seed)?.into_rows()
            }
            BatchSensing::RipAb => rip_ab(model, m)?.into_rows(),
        })
    }
}

/// Learned model and the sensing matrix designed for it.
#[derive(Debug, Clone)]
pub struct Coadapted {
    pub model: GmmModel,
    pub rows: DMatrix<f64>,
    pub objectives: Vec<f64>,
}

/// `kappa` co-adaptation iterations over offline training signals. Each
/// iteration re-designs `Φ` from the current model, selects a class for
/// every signal by MAP from `y_i = Φ x_i`, and refreshes each class from
/// the training signals assigned to it.
pub fn coadapt(
    signals: &[DVector<f64>],
    init: &GmmModel,
    sensing: BatchSensing,
    m: usize,
    sigma2: f64,
    kappa: usize,
) -> Result<Coadapted> {
    let mut model = init.clone();
    let mut objectives = Vec::with_capacity(kappa);
    for _ in 0..kappa {
        let rows = sensing.design(&model, m)?;
        let ys: Vec<DVector<f64>> = signals.par_iter().map(|x| &rows * x).collect();
        let step = inference::e_step(&ys, &rows, &model, sigma2)?;
        objectives.push(step.objective);
        // Wiener estimates from a shared Φ all lie in an M-dimensional
        // family, so refitting on them collapses the classes onto it.
        model = m_step_update(&model, signals, &step.assignments)?;
    }
    let rows = sensing.design(&model, m)?;
    Ok(Coadapted {
        model,
        rows,
        objectives,
    })
}

/// Noiseless batch reconstruction of `signals` through `rows`; returns
/// the mean per-entry squared error.
pub fn batch_mse(signals: &[DVector<f64>], rows: &DMatrix<f64>, model: &GmmModel) -> Result<f64> {
    let rec = MapReconstructor::new(rows, model, 0.0)?;
    let errs = signals
        .par_iter()
        .map(|x| {
            let r = rec.reconstruct(&(rows * x))?;
            Ok((x - r.signal_estimate).norm_squared() / x.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// PSNR of noiseless batch reconstruction for 8-bit image patches.
pub fn batch_psnr(signals: &[DVector<f64>], rows: &DMatrix<f64>, model: &GmmModel) -> Result<f64> {
    Ok(psnr_from_mse(
        batch_mse(signals, rows, model)?,
        super::images::I_MAX,
    ))
}
