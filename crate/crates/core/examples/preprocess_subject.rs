//! Motion correction, spatial smoothing and temporal high-pass on one
//! synthetic subject with a known head shift.
//!
//!     cargo run --release --example preprocess_subject

use rsnlab::nifti::Volume4D;
use rsnlab::preprocess::{
    gaussian_smooth, highpass_temporal, motion_correct, resample_to_grid, AffineTransform, HighpassSpec, SmoothingSpec,
};
use rsnlab::synth::{render_subject, synth_truth, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SynthSpec {
        n_subjects: 1,
        dims: [28, 32, 28],
        n_timepoints: 12,
        n_networks: 3,
        ..SynthSpec::default()
    };
    let truth = synth_truth(&spec)?;
    let mut vol = render_subject(&truth, 0);

    // move the last half of the run by 1.5 voxels (6 mm) along y
    let moved = resample_to_grid(&vol, &AffineTransform::translation([0.0, 6.0, 0.0]), &vol.header)?;
    let nt = vol.n_frames();
    let frames: Vec<_> = (0..nt)
        .map(|t| if t < nt / 2 { vol.frame_volume(t) } else { moved.frame_volume(t) })
        .collect();
    vol = Volume4D::from_frames(&frames)?;

    let (corrected, params) = motion_correct(&vol, 0)?;
    for (t, p) in params.iter().enumerate() {
        let [x, y, z] = p.translations_mm;
        println!("frame {t:>2}: translation ({x:+.2}, {y:+.2}, {z:+.2}) mm");
    }
    let smoothed = gaussian_smooth(&corrected, &SmoothingSpec { fwhm_mm: 7.0 })?;
    let filtered = highpass_temporal(&smoothed, &HighpassSpec::new(100.0, spec.tr_s))?;
    println!("output dims {:?}, {} frames", filtered.dims(), filtered.n_frames());
    Ok(())
}
