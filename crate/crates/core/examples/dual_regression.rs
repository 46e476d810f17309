//! Back-project group components onto each subject with dual regression and
//! check subject maps against the known networks.
//!
//!     cargo run --release --example dual_regression

use nalgebra::DMatrix;
use rsnlab::dualreg::{dual_regress, DualRegSettings};
use rsnlab::ica::{build_mask, concat_normalize, group_ica, FastIcaSettings};
use rsnlab::synth::{match_components, render_subject, subject_id, synth_truth, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SynthSpec {
        n_subjects: 5,
        dims: [28, 32, 28],
        n_timepoints: 50,
        n_networks: 4,
        seed: 2,
        ..SynthSpec::default()
    };
    let truth = synth_truth(&spec)?;
    let subjects: Vec<_> = (0..spec.n_subjects).map(|s| render_subject(&truth, s)).collect();
    let refs: Vec<_> = subjects.iter().collect();
    let mask = build_mask(&refs, 0.5)?;
    let (ica, _) = group_ica(&concat_normalize(&refs, &mask)?, 6, &FastIcaSettings::default())?;

    let masked = DMatrix::from_fn(truth.maps.nrows(), mask.len(), |g, c| truth.maps[(g, mask.voxels[c])]);
    for (s, vol) in subjects.iter().enumerate() {
        let sc = dual_regress(&ica, vol, &mask, &subject_id(s), &DualRegSettings::default())?;
        let m = match_components(&sc.maps, &masked);
        let corrs: Vec<String> = m.pairs.iter().map(|p| format!("{:.3}", p.corr.abs())).collect();
        println!(
            "{}: time courses {}x{}, maps {}x{}, |corr| per network [{}]",
            sc.subject_id,
            sc.timecourses.nrows(),
            sc.timecourses.ncols(),
            sc.maps.nrows(),
            sc.maps.ncols(),
            corrs.join(", ")
        );
    }
    Ok(())
}
