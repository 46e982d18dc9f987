use nalgebra::DVector;

use crate::error::{invalid, Result, ScsError};

/// `10 log₁₀(I²_max / MSE)`; identical inputs give `+∞`.
pub fn psnr_from_mse(mse: f64, i_max: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (i_max * i_max / mse).log10()
    }
}

/// Mean squared error per entry.
pub fn mse(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(ScsError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok((a - b).norm_squared() / a.len() as f64)
}

/// PSNR between two signals; a DC offset, when given, is added to both
/// before comparison.
pub fn psnr(
    original: &DVector<f64>,
    reconstructed: &DVector<f64>,
    i_max: f64,
    dc: Option<f64>,
) -> Result<f64> {
    let shift = dc.unwrap_or(0.0);
    let a = original.add_scalar(shift);
    let b = reconstructed.add_scalar(shift);
    Ok(psnr_from_mse(mse(&a, &b)?, i_max))
}

/// Expected measurement count when only signals of a class of interest
/// (probability `p_gamma`) proceed past the `K`-measurement first step:
/// `S (K (1 − p) + M p)`.
pub fn avg_measurements(s: usize, m: usize, k: usize, p_gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_gamma) {
        return Err(invalid("class probability must lie in [0, 1]"));
    }
    if k > m {
        return Err(invalid(format!("K={k} exceeds M={m}")));
    }
    Ok(s as f64 * (k as f64 * (1.0 - p_gamma) + m as f64 * p_gamma))
}

/// Noise variance for a signal-to-noise ratio in dB relative to the mean
/// per-entry signal energy.
pub fn sigma2_from_snr(signals: &[DVector<f64>], snr_db: f64) -> Result<f64> {
    if signals.is_empty() {
        return Err(invalid("no signals"));
    }
    let n = signals[0].len() as f64;
    let energy = signals.iter().map(|x| x.norm_squared()).sum::<f64>() / signals.len() as f64 / n;
    Ok(energy * 10f64.powf(-snr_db / 10.0))
}
