use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RepresentError, Result};
use crate::nifti::Volume3D;

/// Three orthogonal sum projections packed into one square RGB image.
///
/// Pixel `(i, j)` of a channel is stored at `j * side + i`; `i` runs along the
/// first axis of the projected plane and `j` along the second, so the red
/// channel holds `(x, y)`, green `(y, z)` and blue `(x, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rgb2p5 {
    pub side: usize,
    pub channels: [Vec<u8>; 3],
    /// `(min, max)` of each raw projection before scaling.
    pub scale_record: [(f64, f64); 3],
}

impl Rgb2p5 {
    pub fn pixel(&self, channel: usize, i: usize, j: usize) -> u8 {
        self.channels[channel][j * self.side + i]
    }

    /// Interleaved `RGBRGB...` bytes, row `j` after row `j-1`.
    pub fn interleaved(&self) -> Vec<u8> {
        let n = self.side * self.side;
        let mut out = Vec::with_capacity(3 * n);
        for p in 0..n {
            for c in &self.channels {
                out.push(c[p]);
            }
        }
        out
    }

    /// Interleaved pixels scaled to `[0, 1]`.
    pub fn to_features(&self) -> Vec<f64> {
        self.interleaved().into_iter().map(|b| b as f64 / 255.0).collect()
    }
}

/// Raw projection: `w × h` values, `(i, j)` at `j * w + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// Axial (sum over z), sagittal (sum over x) and coronal (sum over y).
pub fn projections(map: &Volume3D) -> [Projection; 3] {
    let [nx, ny, nz, _] = map.dims();
    let mut axial = vec![0.0; nx * ny];
    let mut sagittal = vec![0.0; ny * nz];
    let mut coronal = vec![0.0; nx * nz];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let v = map.at(x, y, z);
                axial[y * nx + x] += v;
                sagittal[z * ny + y] += v;
                coronal[z * nx + x] += v;
            }
        }
    }
    [
        Projection { width: nx, height: ny, values: axial },
        Projection { width: ny, height: nz, values: sagittal },
        Projection { width: nx, height: nz, values: coronal },
    ]
}

fn scale_and_pad(p: &Projection, side: usize) -> (Vec<u8>, (f64, f64)) {
    let min = p.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = p.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let ox = (side - p.width) / 2;
    let oy = (side - p.height) / 2;
    let mut out = vec![0u8; side * side];
    if range > 0.0 {
        for j in 0..p.height {
            for i in 0..p.width {
                let v = (p.values[j * p.width + i] - min) / range * 255.0;
                out[(j + oy) * side + i + ox] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    (out, (min, max))
}

/// Min-max scales each projection to `0..=255` and centres it on a zero
/// square of side `max(nx, ny, nz)`. A constant projection gives an all-zero
/// channel.
pub fn project_2p5d(map: &Volume3D) -> Result<Rgb2p5> {
    if let Some(i) = map.data.iter().position(|v| !v.is_finite()) {
        return Err(RepresentError::NonFinite(i));
    }
    let [nx, ny, nz, _] = map.dims();
    let side = nx.max(ny).max(nz);
    let [r, g, b] = projections(map).map(|p| scale_and_pad(&p, side));
    Ok(Rgb2p5 {
        side,
        scale_record: [r.1, g.1, b.1],
        channels: [r.0, g.0, b.0],
    })
}

/// 8-bit RGB PNG, `side × side`, no alpha.
pub fn export_png(img: &Rgb2p5, path: &Path) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(w, img.side as u32, img.side as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| RepresentError::Png(e.to_string()))?;
    writer
        .write_image_data(&img.interleaved())
        .map_err(|e| RepresentError::Png(e.to_string()))?;
    writer.finish().map_err(|e| RepresentError::Png(e.to_string()))?;
    Ok(())
}

/// Decoded PNG: `(width, height, interleaved RGB bytes)`.
pub fn read_png_rgb(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let dec = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = dec.read_info().map_err(|e| RepresentError::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RepresentError::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| RepresentError::Png(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(RepresentError::Png(format!(
            "expected 8-bit RGB, found {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width, info.height, buf))
}

/// Inverse of [`export_png`]; the scale record is not stored and comes back
/// as NaN.
pub fn import_png(path: &Path) -> Result<Rgb2p5> {
    let (w, h, buf) = read_png_rgb(path)?;
    if w != h {
        return Err(RepresentError::Png(format!("image is {w}x{h}, expected square")));
    }
    let side = w as usize;
    let mut channels = [vec![0; side * side], vec![0; side * side], vec![0; side * side]];
    for (p, px) in buf.chunks_exact(3).enumerate() {
        for c in 0..3 {
            channels[c][p] = px[c];
        }
    }
    Ok(Rgb2p5 {
        side,
        channels,
        scale_record: [(f64::NAN, f64::NAN); 3],
    })
}
