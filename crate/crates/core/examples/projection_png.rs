//! Render each synthetic network map as a 2.5D RGB image (axial, sagittal
//! and coronal sum projections in R, G, B) and save it as PNG.
//!
//!     cargo run --example projection_png [out_dir]

use rsnlab::nifti::{NiftiHeader, Volume3D};
use rsnlab::represent::{export_png, import_png, project_2p5d};
use rsnlab::synth::{synth_truth, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "png_out".into());
    std::fs::create_dir_all(&out)?;
    let spec = SynthSpec {
        n_subjects: 1,
        n_networks: 3,
        ..SynthSpec::default()
    };
    let truth = synth_truth(&spec)?;
    let [nx, ny, nz] = spec.dims;
    let header = NiftiHeader::new([nx, ny, nz, 1], [spec.voxel_size_mm; 3], spec.tr_s);
    for (g, label) in truth.labels.iter().enumerate() {
        let map = Volume3D::new(header.clone(), truth.maps.row(g).iter().copied().collect())?;
        let img = project_2p5d(&map)?;
        let path = std::path::Path::new(&out).join(format!("{}.png", label.raw().to_lowercase()));
        export_png(&img, &path)?;
        let back = import_png(&path)?;
        println!(
            "{} ({}x{}), reload identical: {}",
            path.display(),
            img.side,
            img.side,
            back.channels == img.channels
        );
    }
    Ok(())
}
