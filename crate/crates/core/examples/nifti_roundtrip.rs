//! Write a 4D volume as .nii and .nii.gz, read both back and compare.
//!
//!     cargo run --example nifti_roundtrip

use rsnlab::nifti::{read_nifti, write_nifti, NiftiHeader, Volume4D};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let header = NiftiHeader::new([45, 54, 45, 2], [4.0, 4.0, 4.0], 2.0);
    let data: Vec<f64> = (0..header.len()).map(|i| ((i % 97) as f32 * 0.25) as f64).collect();
    let vol = Volume4D::new(header, data)?;

    for (name, gzip) in [("vol.nii", false), ("vol.nii.gz", true)] {
        let path = dir.path().join(name);
        write_nifti(&vol, &path, gzip)?;
        let back = read_nifti(&path)?;
        let same = back.data.iter().zip(&vol.data).all(|(a, b)| a.to_bits() == b.to_bits());
        println!(
            "{name:<11} {:>8} bytes  dims {:?}  TR {} s  bitwise equal: {same}",
            std::fs::metadata(&path)?.len(),
            back.dims(),
            back.header.tr_s
        );
    }
    Ok(())
}
