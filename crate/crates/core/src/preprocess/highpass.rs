use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PreprocessError, Result};
use crate::nifti::Volume4D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HighpassSpec {
    pub cutoff_s: f64,
    pub tr_s: f64,
}

impl HighpassSpec {
    pub fn new(cutoff_s: f64, tr_s: f64) -> Self {
        Self { cutoff_s, tr_s }
    }

    /// Gaussian width of the running-line window, in frames.
    pub fn sigma_frames(&self) -> f64 {
        self.cutoff_s / 2.0 / self.tr_s
    }

    fn check(&self) -> Result<()> {
        if !(self.tr_s > 0.0) {
            return Err(PreprocessError::InvalidParameter(format!(
                "tr_s must be > 0, got {}",
                self.tr_s
            )));
        }
        if !(self.cutoff_s > 2.0 * self.tr_s) {
            return Err(PreprocessError::CutoffTooLow {
                cutoff_s: self.cutoff_s,
                tr_s: self.tr_s,
            });
        }
        Ok(())
    }
}

/// Row-major `nt x nt` operator mapping a series to its Gaussian-weighted
/// running-line trend. Row `t` holds the weights of a weighted linear fit
/// centred on `t`, evaluated at `t`.
pub fn running_line_smoother(nt: usize, sigma_frames: f64) -> Vec<f64> {
    let mut h = vec![0.0; nt * nt];
    let two_s2 = 2.0 * sigma_frames * sigma_frames;
    for t in 0..nt {
        let w: Vec<f64> = (0..nt)
            .map(|tau| {
                let d = tau as f64 - t as f64;
                (-d * d / two_s2).exp()
            })
            .collect();
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for (tau, wi) in w.iter().enumerate() {
            let d = tau as f64 - t as f64;
            s0 += wi;
            s1 += wi * d;
            s2 += wi * d * d;
        }
        let det = s0 * s2 - s1 * s1;
        for (tau, wi) in w.iter().enumerate() {
            let d = tau as f64 - t as f64;
            h[t * nt + tau] = wi * (s2 - s1 * d) / det;
        }
    }
    h
}

/// Removes the running-line trend from every voxel series and adds back the
/// voxel's temporal mean.
pub fn highpass_temporal(vol: &Volume4D, spec: &HighpassSpec) -> Result<Volume4D> {
    spec.check()?;
    let nt = vol.n_frames();
    if nt < 3 {
        return Err(PreprocessError::TooFewTimepoints { needed: 3, found: nt });
    }
    let nvox = vol.header.n_voxels();
    let h = running_line_smoother(nt, spec.sigma_frames());

    let mut mean = vec![0.0; nvox];
    for t in 0..nt {
        for (m, x) in mean.iter_mut().zip(vol.frame(t)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nt as f64);

    let mut out = vol.clone();
    out.data
        .par_chunks_mut(nvox)
        .enumerate()
        .for_each(|(t, frame)| {
            let mut trend = vec![0.0; nvox];
            for tau in 0..nt {
                let w = h[t * nt + tau];
                for (acc, x) in trend.iter_mut().zip(vol.frame(tau)) {
                    *acc += w * x;
                }
            }
            for ((y, tr), m) in frame.iter_mut().zip(&trend).zip(&mean) {
                *y = *y - tr + m;
            }
        });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nifti::NiftiHeader;

    fn series(values: &[f64], tr: f64) -> Volume4D {
        let h = NiftiHeader::new([1, 1, 1, values.len()], [2.0; 3], tr);
        Volume4D::new(h, values.to_vec()).unwrap()
    }

    #[test]
    fn constant_series_unchanged() {
        let v = series(&[4.25; 40], 2.0);
        let out = highpass_temporal(&v, &HighpassSpec::new(100.0, 2.0)).unwrap();
        assert!(out.data.iter().all(|x| (x - 4.25).abs() < 1e-9));
    }

    #[test]
    fn ramp_collapses_to_mean() {
        let (a, b) = (3.0, 0.7);
        let vals: Vec<f64> = (0..60).map(|t| a + b * t as f64).collect();
        let mean = vals.iter().sum::<f64>() / 60.0;
        let out = highpass_temporal(&series(&vals, 2.0), &HighpassSpec::new(100.0, 2.0)).unwrap();
        for y in &out.data {
            assert!((y - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn cutoff_must_exceed_two_tr() {
        let v = series(&[1.0, 2.0, 3.0, 4.0], 2.0);
        assert!(matches!(
            highpass_temporal(&v, &HighpassSpec::new(4.0, 2.0)),
            Err(PreprocessError::CutoffTooLow { .. })
        ));
        assert!(highpass_temporal(&v, &HighpassSpec::new(4.01, 2.0)).is_ok());
    }

    #[test]
    fn needs_three_frames() {
        let v = series(&[1.0, 2.0], 2.0);
        assert!(matches!(
            highpass_temporal(&v, &HighpassSpec::new(100.0, 2.0)),
            Err(PreprocessError::TooFewTimepoints { .. })
        ));
    }

    #[test]
    fn smoother_reproduces_lines() {
        let h = running_line_smoother(30, 7.0);
        for t in 0..30 {
            let row = &h[t * 30..(t + 1) * 30];
            let s: f64 = row.iter().sum();
            let m: f64 = row.iter().enumerate().map(|(i, w)| w * i as f64).sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!((m - t as f64).abs() < 1e-10);
        }
    }
}
