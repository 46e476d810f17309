use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{BrainMask, IcaResult, Result};
use crate::nifti::{read_nifti, write_nifti};
use crate::table::{read_matrix, write_matrix};

/// Sidecar JSON written next to the maps and mixing matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaMetadata {
    pub model_order: usize,
    pub seed: u64,
    pub converged: bool,
    pub iterations_used: usize,
    /// Row-major `K × K`.
    pub unmixing: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub explained_variance: f64,
}

pub const MAPS_FILE: &str = "group_maps.nii.gz";
pub const MIXING_FILE: &str = "mixing.txt";
pub const META_FILE: &str = "ica.json";

/// Writes maps (K-frame NIfTI), mixing table and metadata into `dir`.
pub fn write_ica(dir: &Path, ica: &IcaResult, mask: &BrainMask, eigenvalues: &[f64], explained_variance: f64) -> Result<Vec<PathBuf>> {
    let maps = dir.join(MAPS_FILE);
    write_nifti(&mask.maps_to_volume(&ica.spatial_maps), &maps, true)?;
    let mixing = dir.join(MIXING_FILE);
    write_matrix(&mixing, &ica.mixing)?;
    let meta = IcaMetadata {
        model_order: ica.model_order,
        seed: ica.seed,
        converged: ica.converged,
        iterations_used: ica.iterations_used,
        unmixing: ica.unmixing.transpose().iter().copied().collect(),
        eigenvalues: eigenvalues.to_vec(),
        explained_variance,
    };
    let meta_path = dir.join(META_FILE);
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)?;
    Ok(vec![maps, mixing, meta_path])
}

/// Reads what [`write_ica`] wrote. Maps come back at float32 precision.
pub fn read_ica(dir: &Path, mask: &BrainMask) -> Result<(IcaResult, IcaMetadata)> {
    let vol = read_nifti(dir.join(MAPS_FILE))?;
    let spatial_maps = mask.volume_to_maps(&vol)?;
    let mixing = read_matrix(dir.join(MIXING_FILE))?;
    let meta: IcaMetadata = serde_json::from_str(&std::fs::read_to_string(dir.join(META_FILE))?)?;
    let k = meta.model_order;
    let unmixing = DMatrix::from_row_slice(k, k, &meta.unmixing);
    Ok((
        IcaResult {
            model_order: k,
            spatial_maps,
            mixing,
            unmixing,
            seed: meta.seed,
            iterations_used: meta.iterations_used,
            converged: meta.converged,
        },
        meta,
    ))
}
