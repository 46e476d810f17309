use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PreprocessError, Result};
use crate::nifti::Volume4D;

/// Kernel half-width in units of sigma.
pub const KERNEL_RADIUS_SIGMAS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSpec {
    pub fwhm_mm: f64,
}

impl Default for SmoothingSpec {
    fn default() -> Self {
        Self { fwhm_mm: 7.0 }
    }
}

pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

/// Sampled Gaussian with radius `ceil(4 sigma)`, normalised to sum 1.
pub fn gaussian_kernel(sigma_vox: f64) -> Vec<f64> {
    if sigma_vox <= 0.0 {
        return vec![1.0];
    }
    let radius = (KERNEL_RADIUS_SIGMAS * sigma_vox).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma_vox * sigma_vox)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Convolves `src` along one axis. Near the border only in-bounds taps are
/// used and their weights are renormalised.
fn convolve_axis(src: &[f64], dst: &mut [f64], dims: [usize; 3], axis: usize, kernel: &[f64]) {
    let [nx, ny, nz] = dims;
    let stride = match axis {
        0 => 1,
        1 => nx,
        _ => nx * ny,
    };
    let n = dims[axis];
    let radius = (kernel.len() / 2) as isize;
    let lines: Vec<usize> = match axis {
        0 => (0..ny * nz).map(|l| l * nx).collect(),
        1 => (0..nz)
            .flat_map(|z| (0..nx).map(move |x| x + z * nx * ny))
            .collect(),
        _ => (0..nx * ny).collect(),
    };
    for start in lines {
        for i in 0..n as isize {
            let lo = (i - radius).max(0);
            let hi = (i + radius).min(n as isize - 1);
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for j in lo..=hi {
                let w = kernel[(j - i + radius) as usize];
                acc += w * src[start + j as usize * stride];
                wsum += w;
            }
            dst[start + i as usize * stride] = acc / wsum;
        }
    }
}

fn smooth_frame(frame: &mut [f64], dims: [usize; 3], kernels: &[Vec<f64>; 3]) {
    let mut tmp = vec![0.0; frame.len()];
    for axis in 0..3 {
        if kernels[axis].len() == 1 || dims[axis] == 1 {
            continue;
        }
        convolve_axis(frame, &mut tmp, dims, axis, &kernels[axis]);
        frame.copy_from_slice(&tmp);
    }
}

/// Separable Gaussian smoothing of every frame.
pub fn gaussian_smooth(vol: &Volume4D, spec: &SmoothingSpec) -> Result<Volume4D> {
    if !(spec.fwhm_mm >= 0.0) || !spec.fwhm_mm.is_finite() {
        return Err(PreprocessError::InvalidParameter(format!(
            "fwhm_mm must be >= 0, got {}",
            spec.fwhm_mm
        )));
    }
    let mut out = vol.clone();
    if spec.fwhm_mm == 0.0 {
        return Ok(out);
    }
    let sigma_mm = fwhm_to_sigma(spec.fwhm_mm);
    let vs = vol.header.voxel_size_mm;
    let kernels = [
        gaussian_kernel(sigma_mm / vs[0]),
        gaussian_kernel(sigma_mm / vs[1]),
        gaussian_kernel(sigma_mm / vs[2]),
    ];
    let [nx, ny, nz, _] = vol.header.dims;
    let nvox = nx * ny * nz;
    out.data
        .par_chunks_mut(nvox)
        .for_each(|frame| smooth_frame(frame, [nx, ny, nz], &kernels));
    Ok(out)
}
