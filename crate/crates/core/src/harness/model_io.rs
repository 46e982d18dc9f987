//! Model directories: one SCSM file per mean and covariance plus a JSON
//! manifest.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScsError};
use crate::matrix_io::{read_scsm, write_scsm};
use crate::model::{GaussianComponent, GmmModel};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub dimension: usize,
    pub components: usize,
    pub priors: Vec<f64>,
    /// Noise variance the model was trained with.
    pub sigma2: f64,
    pub means: Vec<String>,
    pub covariances: Vec<String>,
}

pub fn save_model(dir: impl AsRef<Path>, model: &GmmModel, sigma2: f64) -> Result<ModelManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut means = Vec::new();
    let mut covariances = Vec::new();
    for (g, c) in model.components().iter().enumerate() {
        let mean = format!("mean_{g}.scsm");
        let cov = format!("cov_{g}.scsm");
        write_scsm(
            dir.join(&mean),
            &DMatrix::from_column_slice(c.dim(), 1, c.mean().as_slice()),
        )?;
        write_scsm(dir.join(&cov), c.covariance())?;
        means.push(mean);
        covariances.push(cov);
    }
    let manifest = ModelManifest {
        dimension: model.dimension(),
        components: model.len(),
        priors: model.priors(),
        sigma2,
        means,
        covariances,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<(GmmModel, ModelManifest)> {
    let dir = dir.as_ref();
    let manifest: ModelManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    let g = manifest.components;
    if manifest.priors.len() != g || manifest.means.len() != g || manifest.covariances.len() != g {
        return Err(ScsError::Format(
            "manifest lists inconsistent component counts".into(),
        ));
    }
    let mut comps = Vec::with_capacity(g);
    for k in 0..g {
        let mean = read_scsm(dir.join(&manifest.means[k]))?;
        let cov = read_scsm(dir.join(&manifest.covariances[k]))?;
        if mean.ncols() != 1 || mean.nrows() != manifest.dimension {
            return Err(ScsError::Format(format!(
                "mean {k} has shape {:?}",
                mean.shape()
            )));
        }
        comps.push(GaussianComponent::from_covariance(
            mean.column(0).into_owned(),
            cov,
            manifest.priors[k],
        )?);
    }
    Ok((GmmModel::new(comps)?, manifest))
}
