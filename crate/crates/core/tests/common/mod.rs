#![allow(dead_code)]

use gmm_sensing::harness::images::{patch_extract, patch_extract_strided, read_pgm, GrayImage};
use gmm_sensing::rng::{stream_rng, Rng};
use gmm_sensing::{GaussianComponent, GmmModel, Provenance, SignalBatch};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

pub const IMAGES: [&str; 6] = [
    "camera",
    "astronaut",
    "coffee",
    "chelsea",
    "coins",
    "rocket",
];

pub fn image(name: &str) -> GrayImage {
    read_pgm(format!(
        "{}/tests/data/images/{name}.pgm",
        env!("CARGO_MANIFEST_DIR")
    ))
    .unwrap()
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(n: usize, rng: &mut Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Well-conditioned random SPD matrix with a spread spectrum.
pub fn random_spd(n: usize, rng: &mut Rng) -> DMatrix<f64> {
    let a = gaussian_matrix(n, n, rng);
    let scale = 10f64.powf(rng.random_range(-1.0..1.0));
    (&a * a.transpose()) * (scale / n as f64) + DMatrix::identity(n, n) * 0.05 * scale
}

/// Random mixture with `g` classes, random means of size `mean_scale` and
/// random priors.
pub fn random_model(n: usize, g: usize, mean_scale: f64, seed: u64) -> GmmModel {
    let mut rng = stream_rng(seed, 0);
    let weights: Vec<f64> = (0..g).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut comps = Vec::with_capacity(g);
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        let cov = random_spd(n, &mut rng);
        let mean = gaussian_vector(n, &mut rng) * mean_scale;
        let prior = if k + 1 == g { 1.0 - acc } else { w / total };
        acc += prior;
        comps.push(GaussianComponent::from_covariance(mean, cov, prior).unwrap());
    }
    GmmModel::new(comps).unwrap()
}

/// Overlapping training patches (given stride) and non-overlapping test
/// patches pooled over the sample images.
pub fn patch_corpus(patch: usize, stride: usize) -> (Vec<DVector<f64>>, SignalBatch) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut origins = Vec::new();
    let mut dc = Vec::new();
    for name in IMAGES {
        let img = image(name);
        train.extend(
            patch_extract_strided(&img, patch, stride, name)
                .unwrap()
                .signals,
        );
        let t = patch_extract(&img, patch, false, name).unwrap();
        if let Provenance::ImagePatches { origins: o, .. } = &t.provenance {
            origins.extend(o.iter().copied());
        }
        dc.extend(t.dc_offsets.clone().unwrap_or_default());
        test.extend(t.signals);
    }
    let mut batch = SignalBatch::new(
        test,
        None,
        Provenance::ImagePatches {
            source: IMAGES.join(","),
            width: 256,
            height: 256,
            patch,
            overlap: false,
            origins,
        },
    )
    .unwrap();
    batch.dc_offsets = Some(dc);
    (train, batch)
}

/// Every `len / count`-th element, `count` in total.
pub fn evenly_spaced(batch: &SignalBatch, count: usize) -> SignalBatch {
    let step = (batch.len() / count).max(1);
    let idx: Vec<usize> = (0..batch.len()).step_by(step).take(count).collect();
    let mut out = batch.clone();
    out.signals = idx.iter().map(|&i| batch.signals[i].clone()).collect();
    out.labels = batch
        .labels
        .as_ref()
        .map(|l| idx.iter().map(|&i| l[i]).collect());
    out.dc_offsets = batch
        .dc_offsets
        .as_ref()
        .map(|d| idx.iter().map(|&i| d[i]).collect());
    if let Provenance::ImagePatches { origins, .. } = &mut out.provenance {
        *origins = idx.iter().map(|&i| origins[i]).collect();
    }
    out
}
