//! Volume preprocessing: rigid motion correction, Gaussian spatial smoothing,
//! temporal high-pass filtering and affine registration/resampling.

mod highpass;
mod register;
mod smooth;

pub use highpass::{highpass_temporal, running_line_smoother, HighpassSpec};
pub use register::{
    downsample2, motion_correct, ncc, register, register_affine, resample_to_grid,
    write_motion_params, AffineTransform, Dof, OptimizerSettings, Registration, RigidTransform,
};
pub use smooth::{fwhm_to_sigma, gaussian_kernel, gaussian_smooth, SmoothingSpec, KERNEL_RADIUS_SIGMAS};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("high-pass cutoff {cutoff_s} s must exceed twice the TR ({tr_s} s)")]
    CutoffTooLow { cutoff_s: f64, tr_s: f64 },
    #[error("need at least {needed} timepoints, found {found}")]
    TooFewTimepoints { needed: usize, found: usize },
    #[error("reference index {index} out of range for {nt} frames")]
    BadReference { index: usize, nt: usize },
    #[error("optimizer diverged: {0}")]
    OptimizerDiverged(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("singular transform")]
    SingularTransform,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, PreprocessError>;
