//! Temporal-concatenation group ICA: masking, per-voxel variance
//! normalisation, PCA whitening to a fixed model order and symmetric FastICA
//! producing z-scored spatial maps.

mod fastica;
mod io;
mod mask;
mod pca;

pub use fastica::{fastica, sym_decorrelate, Contrast, FastIcaSettings};
pub use io::{read_ica, write_ica, IcaMetadata, MAPS_FILE, META_FILE, MIXING_FILE};
pub use mask::{build_mask, concat_normalize, BrainMask, DataMatrix};
pub use pca::{pca_reduce, PcaResult};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nifti::NiftiError;

#[derive(Debug, Error)]
pub enum IcaError {
    #[error("mask is empty")]
    EmptyMask,
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("rank deficient: requested {requested} components, only {available} available")]
    RankDeficient { requested: usize, available: usize },
    #[error("input rows are not whitened (max |cov - I| = {0:e})")]
    NotWhitened(f64),
    #[error("map is constant")]
    ConstantMap,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Nifti(#[from] NiftiError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, IcaError>;

#[derive(Debug, Clone, PartialEq)]
pub struct IcaResult {
    pub model_order: usize,
    /// `K × V`, each row z-scored.
    pub spatial_maps: DMatrix<f64>,
    /// `rows × K`. In whitened space when produced by [`fastica`] alone,
    /// in data space after [`group_ica`].
    pub mixing: DMatrix<f64>,
    /// Orthonormal `K × K` unmixing matrix acting on whitened data.
    pub unmixing: DMatrix<f64>,
    pub seed: u64,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Mean 0, standard deviation 1 (population).
pub fn zscore_map(map: &[f64]) -> Result<Vec<f64>> {
    let n = map.len() as f64;
    if map.is_empty() {
        return Err(IcaError::ConstantMap);
    }
    let mean = map.iter().sum::<f64>() / n;
    let var = map.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 1e-15 * (1.0 + mean.abs())) {
        return Err(IcaError::ConstantMap);
    }
    Ok(map.iter().map(|v| (v - mean) / sd).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupIcaSettings {
    pub model_order: usize,
    pub mask_threshold: f64,
    #[serde(flatten)]
    pub fastica: FastIcaSettings,
}

impl Default for GroupIcaSettings {
    fn default() -> Self {
        Self {
            model_order: 100,
            mask_threshold: 0.5,
            fastica: FastIcaSettings::default(),
        }
    }
}

/// PCA whitening to `model_order` followed by FastICA. Components are
/// ordered by the energy of their data-space mixing columns.
pub fn group_ica(data: &DataMatrix, model_order: usize, settings: &FastIcaSettings) -> Result<(IcaResult, PcaResult)> {
    let pca = pca_reduce(&data.values, model_order)?;
    let mut ica = fastica(&pca.reduced, settings)?;
    ica.mixing = &pca.basis * &ica.mixing;

    let k = ica.model_order;
    let energy: Vec<f64> = (0..k).map(|c| ica.mixing.column(c).norm_squared()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| energy[b].total_cmp(&energy[a]).then(a.cmp(&b)));
    let maps = DMatrix::from_fn(k, ica.spatial_maps.ncols(), |r, c| ica.spatial_maps[(order[r], c)]);
    let mixing = DMatrix::from_fn(ica.mixing.nrows(), k, |r, c| ica.mixing[(r, order[c])]);
    let unmixing = DMatrix::from_fn(k, k, |r, c| ica.unmixing[(order[r], c)]);
    ica.spatial_maps = maps;
    ica.mixing = mixing;
    ica.unmixing = unmixing;
    Ok((ica, pca))
}
