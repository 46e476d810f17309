pub mod dualreg;
pub mod eval;
pub mod ica;
pub mod nifti;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod represent;
pub mod synth;
pub mod table;
