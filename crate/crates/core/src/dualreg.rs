//! Dual regression: group spatial maps are regressed into a subject's data to
//! obtain subject time courses (stage 1), which are regressed back into the
//! same data to obtain subject-specific spatial maps (stage 2).

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ica::{BrainMask, IcaResult};
use crate::nifti::{write_nifti, NiftiError, NiftiHeader, Volume4D};
use crate::table::write_matrix;

/// Largest accepted condition number of `S Sᵀ` for the stage-1 design.
pub const MAX_CONDITION: f64 = 1e8;

#[derive(Debug, Error)]
pub enum DualRegError {
    #[error("group maps are rank deficient (condition number {0:e})")]
    RankDeficientMaps(f64),
    #[error("time courses are rank deficient")]
    RankDeficientTimecourses,
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Nifti(#[from] NiftiError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DualRegError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualRegSettings {
    /// Scale stage-1 time courses to unit variance before stage 2.
    pub variance_normalize: bool,
}

impl Default for DualRegSettings {
    fn default() -> Self {
        Self {
            variance_normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectComponents {
    pub subject_id: String,
    /// `T × K`
    pub timecourses: DMatrix<f64>,
    /// `K × V` over the mask columns.
    pub maps: DMatrix<f64>,
    pub grid: NiftiHeader,
}

impl SubjectComponents {
    pub fn n_components(&self) -> usize {
        self.maps.nrows()
    }
}

/// Householder-QR least squares: `argmin_B ‖design·B − rhs‖` column by column.
pub fn lstsq_qr(design: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let (n, p) = design.shape();
    if n < p {
        return None;
    }
    let qr = design.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().abs().max();
    if !(scale > 0.0) || r.diagonal().iter().any(|d| d.abs() <= 1e-10 * scale) {
        return None;
    }
    let qtb = qr.q().transpose() * rhs;
    r.solve_upper_triangular(&qtb)
}

fn demean_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    out
}

fn demean_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

/// Stage 1. `group_maps` is `K × V`, `y` is `T × V`; returns `T × K`.
pub fn stage1_spatial_regress(group_maps: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if group_maps.ncols() != y.ncols() {
        return Err(DualRegError::Shape(format!(
            "maps have {} voxels, data has {}",
            group_maps.ncols(),
            y.ncols()
        )));
    }
    let maps = demean_rows(group_maps);
    let eig = SymmetricEigen::new(&maps * maps.transpose());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(cond < MAX_CONDITION) {
        return Err(DualRegError::RankDeficientMaps(cond));
    }
    let design = maps.transpose();
    let rhs = demean_rows(y).transpose();
    let beta = lstsq_qr(&design, &rhs).ok_or(DualRegError::RankDeficientMaps(cond))?;
    Ok(beta.transpose())
}

/// Stage 2. `timecourses` is `T × K`, `y` is `T × V`; returns `K × V`.
pub fn stage2_temporal_regress(timecourses: &DMatrix<f64>, y: &DMatrix<f64>, variance_normalize: bool) -> Result<DMatrix<f64>> {
    if timecourses.nrows() != y.nrows() {
        return Err(DualRegError::Shape(format!(
            "time courses have {} rows, data has {}",
            timecourses.nrows(),
            y.nrows()
        )));
    }
    let mut design = demean_columns(timecourses);
    if variance_normalize {
        let t = design.nrows() as f64;
        for mut col in design.column_iter_mut() {
            let sd = (col.norm_squared() / t).sqrt();
            if sd > 0.0 {
                col.scale_mut(1.0 / sd);
            }
        }
    }
    let rhs = demean_columns(y);
    lstsq_qr(&design, &rhs).ok_or(DualRegError::RankDeficientTimecourses)
}

/// Subject data inside the mask as a `T × V` matrix.
pub fn subject_matrix(subject: &Volume4D, mask: &BrainMask) -> Result<DMatrix<f64>> {
    if !subject.header.same_grid(&mask.header) {
        return Err(DualRegError::GridMismatch(format!(
            "subject grid {:?} differs from mask grid {:?}",
            &subject.header.dims[..3],
            &mask.header.dims[..3]
        )));
    }
    let nt = subject.n_frames();
    let nvox = subject.header.n_voxels();
    Ok(DMatrix::from_fn(nt, mask.len(), |t, c| subject.data[mask.voxels[c] + t * nvox]))
}

pub fn dual_regress(
    group: &IcaResult,
    subject: &Volume4D,
    mask: &BrainMask,
    subject_id: &str,
    settings: &DualRegSettings,
) -> Result<SubjectComponents> {
    let y = subject_matrix(subject, mask)?;
    let timecourses = stage1_spatial_regress(&group.spatial_maps, &y)?;
    let maps = stage2_temporal_regress(&timecourses, &y, settings.variance_normalize)?;
    Ok(SubjectComponents {
        subject_id: subject_id.to_string(),
        timecourses,
        maps,
        grid: mask.header.clone(),
    })
}

pub fn stage1_file(subject_id: &str) -> String {
    format!("dr_stage1_{subject_id}.txt")
}

pub fn stage2_file(subject_id: &str) -> String {
    format!("dr_stage2_{subject_id}.nii.gz")
}

/// Writes the K-frame stage-2 map volume and the `T × K` time-course table.
pub fn write_subject_components(dir: &Path, sc: &SubjectComponents, mask: &BrainMask) -> Result<Vec<PathBuf>> {
    let maps = dir.join(stage2_file(&sc.subject_id));
    write_nifti(&mask.maps_to_volume(&sc.maps), &maps, true)?;
    let tc = dir.join(stage1_file(&sc.subject_id));
    write_matrix(&tc, &sc.timecourses)?;
    Ok(vec![maps, tc])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_data_gives_zero_outputs() {
        let maps = DMatrix::from_fn(2, 10, |r, c| ((r + 1) * c) as f64 + if c == r { 5.0 } else { 0.0 });
        let y = DMatrix::zeros(7, 10);
        let tc = stage1_spatial_regress(&maps, &y).unwrap();
        assert!(tc.iter().all(|&v| v == 0.0));
        let tcs = DMatrix::from_fn(7, 2, |r, c| ((r * (c + 2)) as f64).sin());
        let m = stage2_temporal_regress(&tcs, &y, true).unwrap();
        assert!(m.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn collinear_maps_rejected() {
        let row: Vec<f64> = (0..20).map(|i| (i as f64).cos()).collect();
        let maps = DMatrix::from_fn(2, 20, |r, c| row[c] * (r as f64 + 1.0));
        let y = DMatrix::zeros(3, 20);
        assert!(matches!(
            stage1_spatial_regress(&maps, &y),
            Err(DualRegError::RankDeficientMaps(_))
        ));
    }

    #[test]
    fn collinear_timecourses_rejected() {
        let tcs = DMatrix::from_fn(10, 2, |r, _| r as f64);
        let y = DMatrix::from_fn(10, 4, |r, c| (r * c) as f64);
        assert!(matches!(
            stage2_temporal_regress(&tcs, &y, false),
            Err(DualRegError::RankDeficientTimecourses)
        ));
    }
}
