//! NIfTI-1 single-file (`.nii` / `.nii.gz`) reading and writing.
//!
//! Volumes are held in memory as `f64` with `scl_slope`/`scl_inter` already
//! applied. The data buffer is ordered x-fastest: the value at `(x, y, z, t)`
//! lives at `x + nx*(y + ny*(z + nz*t))`, which is also the on-disk order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::{Compression, GzBuilder};
use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HEADER_SIZE: usize = 348;
/// Data offset for single-file NIfTI-1: header plus the 4-byte extension flag.
pub const VOX_OFFSET: usize = 352;

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("truncated data: expected {expected} bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("non-finite voxel value at index {0}")]
    NonFinite(usize),
    #[error("invalid header: {}", .0.join("; "))]
    InvalidHeader(Vec<String>),
    #[error("buffer length {found} does not match dims (expected {expected})")]
    ShapeMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NiftiError>;

/// Voxel storage types understood by the reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Datatype {
    Uint8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Int32 => 8,
            Datatype::Float32 => 16,
            Datatype::Float64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => Datatype::Uint8,
            4 => Datatype::Int16,
            8 => Datatype::Int32,
            16 => Datatype::Float32,
            64 => Datatype::Float64,
            _ => return None,
        })
    }

    pub fn bytes_per_voxel(self) -> usize {
        match self {
            Datatype::Uint8 => 1,
            Datatype::Int16 => 2,
            Datatype::Int32 | Datatype::Float32 => 4,
            Datatype::Float64 => 8,
        }
    }
}

/// Which header field produced [`NiftiHeader::affine`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AffineSource {
    Sform,
    Qform,
    Pixdim,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    /// `(nx, ny, nz, nt)`
    pub dims: [usize; 4],
    pub voxel_size_mm: [f64; 3],
    pub tr_s: f64,
    pub datatype: Datatype,
    pub scl_slope: f64,
    pub scl_inter: f64,
    /// Voxel index to world millimetres.
    pub affine: Matrix4<f64>,
    pub affine_source: AffineSource,
}

impl NiftiHeader {
    /// Header for a float32 grid with a diagonal affine built from the voxel sizes.
    pub fn new(dims: [usize; 4], voxel_size_mm: [f64; 3], tr_s: f64) -> Self {
        let mut affine = Matrix4::identity();
        for (i, v) in voxel_size_mm.iter().enumerate() {
            affine[(i, i)] = *v;
        }
        Self {
            dims,
            voxel_size_mm,
            tr_s,
            datatype: Datatype::Float32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            affine,
            affine_source: AffineSource::Pixdim,
        }
    }

    pub fn n_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn len(&self) -> usize {
        self.n_voxels() * self.dims[3]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy of this header describing a different number of frames.
    pub fn with_frames(&self, nt: usize) -> Self {
        let mut h = self.clone();
        h.dims[3] = nt;
        h
    }

    /// True when the spatial grid (dims and affine) matches `other`.
    pub fn same_grid(&self, other: &NiftiHeader) -> bool {
        self.dims[..3] == other.dims[..3]
            && (self.affine - other.affine).abs().max() <= 1e-6 * (1.0 + self.affine.abs().max())
    }
}

/// Field-level invariant check. Empty iff the header is usable.
pub fn validate_header(h: &NiftiHeader) -> Vec<String> {
    let mut out = Vec::new();
    if h.dims.iter().any(|&d| d < 1) {
        out.push(format!("dims: every dimension must be >= 1, got {:?}", h.dims));
    }
    if h.voxel_size_mm.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        out.push(format!(
            "voxel_size_mm: must be finite and > 0, got {:?}",
            h.voxel_size_mm
        ));
    }
    if !h.tr_s.is_finite() || h.tr_s < 0.0 {
        out.push(format!("tr_s: must be finite and >= 0, got {}", h.tr_s));
    }
    if !h.scl_slope.is_finite() || !h.scl_inter.is_finite() {
        out.push("scl_slope/scl_inter: must be finite".to_string());
    }
    let last = h.affine.row(3);
    if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
        out.push(format!(
            "affine: last row must be (0,0,0,1), got ({},{},{},{})",
            last[0], last[1], last[2], last[3]
        ));
    } else if h.affine.iter().any(|v| !v.is_finite()) {
        out.push("affine: entries must be finite".to_string());
    } else if h.affine.fixed_view::<3, 3>(0, 0).determinant().abs() < 1e-12 {
        out.push("affine: 3x3 block is singular".to_string());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume4D {
    pub header: NiftiHeader,
    pub data: Vec<f64>,
}

impl Volume4D {
    pub fn new(header: NiftiHeader, data: Vec<f64>) -> Result<Self> {
        if data.len() != header.len() {
            return Err(NiftiError::ShapeMismatch {
                expected: header.len(),
                found: data.len(),
            });
        }
        Ok(Self { header, data })
    }

    pub fn zeros(header: NiftiHeader) -> Self {
        let n = header.len();
        Self {
            header,
            data: vec![0.0; n],
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.header.dims
    }

    pub fn n_frames(&self) -> usize {
        self.header.dims[3]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize, t: usize) -> usize {
        let [nx, ny, nz, _] = self.header.dims;
        x + nx * (y + ny * (z + nz * t))
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.header.n_voxels();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.header.n_voxels();
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn frame_volume(&self, t: usize) -> Volume3D {
        Volume3D(Volume4D {
            header: self.header.with_frames(1),
            data: self.frame(t).to_vec(),
        })
    }

    /// Stacks 3D volumes sharing one grid into a 4D series.
    pub fn from_frames(frames: &[Volume3D]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| NiftiError::MalformedHeader("no frames to stack".into()))?;
        let header = first.header.with_frames(frames.len());
        let mut data = Vec::with_capacity(header.len());
        for f in frames {
            if !f.header.same_grid(&first.header) {
                return Err(NiftiError::MalformedHeader(
                    "frames do not share a grid".into(),
                ));
            }
            data.extend_from_slice(&f.data);
        }
        Ok(Self { header, data })
    }
}

/// A single-frame volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D(pub Volume4D);

impl Volume3D {
    pub fn new(mut header: NiftiHeader, data: Vec<f64>) -> Result<Self> {
        header.dims[3] = 1;
        Volume4D::new(header, data).map(Volume3D)
    }

    pub fn into_inner(self) -> Volume4D {
        self.0
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.0.data[self.0.index(x, y, z, 0)]
    }
}

impl std::ops::Deref for Volume3D {
    type Target = Volume4D;
    fn deref(&self) -> &Volume4D {
        &self.0
    }
}

impl std::ops::DerefMut for Volume3D {
    fn deref_mut(&mut self) -> &mut Volume4D {
        &mut self.0
    }
}

impl TryFrom<Volume4D> for Volume3D {
    type Error = NiftiError;
    fn try_from(v: Volume4D) -> Result<Self> {
        if v.header.dims[3] != 1 {
            return Err(NiftiError::MalformedHeader(format!(
                "expected a single frame, found {}",
                v.header.dims[3]
            )));
        }
        Ok(Volume3D(v))
    }
}

struct Fields<'a> {
    buf: &'a [u8],
    big_endian: bool,
}

impl Fields<'_> {
    fn bytes<const N: usize>(&self, off: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[off..off + N]);
        if self.big_endian {
            b.reverse();
        }
        b
    }
    fn i16(&self, off: usize) -> i16 {
        i16::from_le_bytes(self.bytes(off))
    }
    fn i32(&self, off: usize) -> i32 {
        i32::from_le_bytes(self.bytes(off))
    }
    fn f32(&self, off: usize) -> f64 {
        f32::from_le_bytes(self.bytes(off)) as f64
    }
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

/// Builds the qform affine from quaternion parameters.
fn qform_affine(b: f64, c: f64, d: f64, qfac: f64, pix: [f64; 3], offset: [f64; 3]) -> Matrix4<f64> {
    let a2 = 1.0 - (b * b + c * c + d * d);
    let (a, b, c, d) = if a2 < 1e-7 {
        let n = (b * b + c * c + d * d).sqrt();
        (0.0, b / n, c / n, d / n)
    } else {
        (a2.sqrt(), b, c, d)
    };
    let rot = UnitQuaternion::from_quaternion(Quaternion::new(a, b, c, d)).to_rotation_matrix();
    let scale = Matrix3::from_diagonal(&Vector3::new(pix[0], pix[1], pix[2] * qfac));
    let m = rot.matrix() * scale;
    let mut out = Matrix4::identity();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&m);
    for i in 0..3 {
        out[(i, 3)] = offset[i];
    }
    out
}

/// Parses the 348-byte header. Returns the header and the data offset.
pub fn parse_header(buf: &[u8]) -> Result<(NiftiHeader, usize)> {
    if buf.len() < HEADER_SIZE {
        return Err(NiftiError::MalformedHeader(format!(
            "file is {} bytes, header needs {HEADER_SIZE}",
            buf.len()
        )));
    }
    let sizeof_le = i32::from_le_bytes(buf[0..4].try_into().unwrap());
    let big_endian = match sizeof_le {
        348 => false,
        _ if i32::from_be_bytes(buf[0..4].try_into().unwrap()) == 348 => true,
        other => {
            return Err(NiftiError::MalformedHeader(format!(
                "sizeof_hdr is {other}, expected 348"
            )))
        }
    };
    if &buf[344..348] != b"n+1\0" {
        return Err(NiftiError::MalformedHeader(format!(
            "magic is {:?}, expected \"n+1\\0\"",
            &buf[344..348]
        )));
    }
    let f = Fields { buf, big_endian };

    let ndim = f.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(NiftiError::MalformedHeader(format!("dim[0] = {ndim}")));
    }
    let mut dims = [1usize; 4];
    for i in 1..=7usize {
        let d = f.i16(40 + 2 * i);
        if i as i16 > ndim {
            continue;
        }
        if d < 1 {
            return Err(NiftiError::MalformedHeader(format!("dim[{i}] = {d}")));
        }
        if i <= 4 {
            dims[i - 1] = d as usize;
        } else if d != 1 {
            return Err(NiftiError::MalformedHeader(format!(
                "dim[{i}] = {d}; only up to four dimensions are supported"
            )));
        }
    }
    let code = f.i16(70);
    let datatype = Datatype::from_code(code).ok_or(NiftiError::UnsupportedDatatype(code))?;
    let bitpix = f.i16(72);
    if bitpix as usize != datatype.bytes_per_voxel() * 8 {
        return Err(NiftiError::MalformedHeader(format!(
            "bitpix {bitpix} inconsistent with datatype {code}"
        )));
    }
    let mut pixdim = [0f64; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = f.f32(76 + 4 * i);
    }
    let vox_offset = f.f32(108);
    if !vox_offset.is_finite() || vox_offset < HEADER_SIZE as f64 || vox_offset > 1e9 {
        return Err(NiftiError::MalformedHeader(format!("vox_offset = {vox_offset}")));
    }
    let mut scl_slope = f.f32(112);
    let scl_inter = f.f32(116);
    if scl_slope == 0.0 {
        scl_slope = 1.0;
    }
    let xyzt_units = buf[123];
    let tr_raw = pixdim[4];
    let tr_s = match xyzt_units & 0x38 {
        16 => tr_raw / 1000.0,
        24 => tr_raw / 1e6,
        _ => tr_raw,
    };
    let voxel_size_mm = [pixdim[1].abs(), pixdim[2].abs(), pixdim[3].abs()];

    let qform_code = f.i16(252);
    let sform_code = f.i16(254);
    let (affine, affine_source) = if sform_code > 0 {
        let mut m = Matrix4::identity();
        for r in 0..3 {
            for c in 0..4 {
                m[(r, c)] = f.f32(280 + 16 * r + 4 * c);
            }
        }
        (m, AffineSource::Sform)
    } else if qform_code > 0 {
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let m = qform_affine(
            f.f32(256),
            f.f32(260),
            f.f32(264),
            qfac,
            voxel_size_mm,
            [f.f32(268), f.f32(272), f.f32(276)],
        );
        (m, AffineSource::Qform)
    } else {
        let mut m = Matrix4::identity();
        for i in 0..3 {
            m[(i, i)] = voxel_size_mm[i];
        }
        (m, AffineSource::Pixdim)
    };

    let header = NiftiHeader {
        dims,
        voxel_size_mm,
        tr_s,
        datatype,
        scl_slope,
        scl_inter,
        affine,
        affine_source,
    };
    let violations = validate_header(&header);
    if !violations.is_empty() {
        return Err(NiftiError::MalformedHeader(violations.join("; ")));
    }
    Ok((header, vox_offset as usize))
}

/// Decodes a complete NIfTI-1 image from bytes (gzip detected by magic).
pub fn decode_nifti(bytes: &[u8]) -> Result<Volume4D> {
    let owned;
    let buf = if is_gzip(bytes) {
        let mut out = Vec::new();
        GzDecoder::new(bytes).read_to_end(&mut out)?;
        owned = out;
        &owned[..]
    } else {
        bytes
    };
    let (header, offset) = parse_header(buf)?;
    let big_endian = i32::from_le_bytes(buf[0..4].try_into().unwrap()) != 348;
    let bpv = header.datatype.bytes_per_voxel();
    let expected = header
        .dims
        .iter()
        .try_fold(bpv, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| NiftiError::MalformedHeader("dims overflow".into()))?;
    let available = buf.len().saturating_sub(offset);
    if available < expected {
        return Err(NiftiError::TruncatedData {
            expected,
            found: available,
        });
    }
    let raw = &buf[offset..offset + expected];
    let fields = Fields {
        buf: raw,
        big_endian,
    };
    let n = expected / bpv;
    let (slope, inter) = (header.scl_slope, header.scl_inter);
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let v = match header.datatype {
            Datatype::Uint8 => raw[i] as f64,
            Datatype::Int16 => fields.i16(2 * i) as f64,
            Datatype::Int32 => fields.i32(4 * i) as f64,
            Datatype::Float32 => fields.f32(4 * i),
            Datatype::Float64 => f64::from_le_bytes(fields.bytes(8 * i)),
        };
        let v = v * slope + inter;
        if !v.is_finite() {
            return Err(NiftiError::NonFinite(i));
        }
        data.push(v);
    }
    Ok(Volume4D { header, data })
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume4D> {
    let bytes = fs::read(path)?;
    decode_nifti(&bytes)
}

/// Little-endian header bytes for `h`, with the given storage type.
pub fn encode_header(h: &NiftiHeader, datatype: Datatype) -> Result<[u8; HEADER_SIZE]> {
    let violations = validate_header(h);
    if !violations.is_empty() {
        return Err(NiftiError::InvalidHeader(violations));
    }
    if h.dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(NiftiError::InvalidHeader(vec![format!(
            "dims: {:?} exceed the NIfTI-1 limit of 32767",
            h.dims
        )]));
    }
    let mut b = [0u8; HEADER_SIZE];
    let put = |b: &mut [u8; HEADER_SIZE], off: usize, bytes: &[u8]| {
        b[off..off + bytes.len()].copy_from_slice(bytes)
    };
    put(&mut b, 0, &348i32.to_le_bytes());
    b[38] = b'r'; // regular
    let ndim: i16 = if h.dims[3] > 1 { 4 } else { 3 };
    put(&mut b, 40, &ndim.to_le_bytes());
    for i in 0..4 {
        put(&mut b, 42 + 2 * i, &(h.dims[i] as i16).to_le_bytes());
    }
    for i in 4..7 {
        put(&mut b, 42 + 2 * i, &1i16.to_le_bytes());
    }
    put(&mut b, 70, &datatype.code().to_le_bytes());
    put(&mut b, 72, &((datatype.bytes_per_voxel() * 8) as i16).to_le_bytes());
    let qfac = if h.affine.fixed_view::<3, 3>(0, 0).determinant() < 0.0 {
        -1.0f32
    } else {
        1.0
    };
    let pixdim = [
        qfac,
        h.voxel_size_mm[0] as f32,
        h.voxel_size_mm[1] as f32,
        h.voxel_size_mm[2] as f32,
        h.tr_s as f32,
        1.0,
        1.0,
        1.0,
    ];
    for (i, p) in pixdim.iter().enumerate() {
        put(&mut b, 76 + 4 * i, &p.to_le_bytes());
    }
    put(&mut b, 108, &(VOX_OFFSET as f32).to_le_bytes());
    put(&mut b, 112, &1f32.to_le_bytes());
    put(&mut b, 116, &0f32.to_le_bytes());
    b[123] = 2 | 8; // mm, seconds
    put(&mut b, 252, &0i16.to_le_bytes());
    put(&mut b, 254, &1i16.to_le_bytes()); // sform: scanner anatomical
    for r in 0..3 {
        for c in 0..4 {
            put(&mut b, 280 + 16 * r + 4 * c, &(h.affine[(r, c)] as f32).to_le_bytes());
        }
    }
    put(&mut b, 344, b"n+1\0");
    Ok(b)
}

/// Encodes `vol` as little-endian NIfTI-1 with `scl_slope = 1`, `scl_inter = 0`.
pub fn encode_nifti(vol: &Volume4D, datatype: Datatype) -> Result<Vec<u8>> {
    if vol.data.len() != vol.header.len() {
        return Err(NiftiError::ShapeMismatch {
            expected: vol.header.len(),
            found: vol.data.len(),
        });
    }
    let header = encode_header(&vol.header, datatype)?;
    let mut out = Vec::with_capacity(VOX_OFFSET + vol.data.len() * datatype.bytes_per_voxel());
    out.extend_from_slice(&header);
    out.extend_from_slice(&[0u8; 4]);
    for &v in &vol.data {
        match datatype {
            Datatype::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Datatype::Float64 => out.extend_from_slice(&v.to_le_bytes()),
            Datatype::Uint8 => out.push(v.round().clamp(0.0, 255.0) as u8),
            Datatype::Int16 => out.extend_from_slice(
                &(v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16).to_le_bytes(),
            ),
            Datatype::Int32 => out.extend_from_slice(
                &(v.round().clamp(i32::MIN as f64, i32::MAX as f64) as i32).to_le_bytes(),
            ),
        }
    }
    Ok(out)
}

/// Writes `vol` as float32, gzip-compressed when `gzip` is set.
pub fn write_nifti(vol: &Volume4D, path: impl AsRef<Path>, gzip: bool) -> Result<()> {
    write_nifti_as(vol, path, gzip, Datatype::Float32)
}

pub fn write_nifti_as(
    vol: &Volume4D,
    path: impl AsRef<Path>,
    gzip: bool,
    datatype: Datatype,
) -> Result<()> {
    let bytes = encode_nifti(vol, datatype)?;
    let bytes = if gzip { gzip_bytes(&bytes)? } else { bytes };
    fs::write(path, bytes)?;
    Ok(())
}

/// Deterministic gzip container (zero mtime, no file name).
pub(crate) fn gzip_bytes(bytes: &[u8]) -> std::io::Result<Vec<u8>> {
    let mut enc: GzEncoder<Vec<u8>> = GzBuilder::new()
        .mtime(0)
        .write(Vec::new(), Compression::new(6));
    enc.write_all(bytes)?;
    enc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(dims: [usize; 4]) -> NiftiHeader {
        NiftiHeader::new(dims, [3.0, 3.0, 3.0], 2.0)
    }

    #[test]
    fn paper_grid_dims_survive_encoding() {
        let vol = Volume4D::zeros(header([45, 54, 45, 1]));
        let bytes = encode_nifti(&vol, Datatype::Float32).unwrap();
        // dim[1..4] as a header dump would show them
        let dim: Vec<i16> = (1..=4)
            .map(|i| i16::from_le_bytes([bytes[40 + 2 * i], bytes[41 + 2 * i]]))
            .collect();
        assert_eq!(dim, vec![45, 54, 45, 1]);
        let back = decode_nifti(&bytes).unwrap();
        assert_eq!(back.dims(), [45, 54, 45, 1]);
        assert!(back.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_voxel_volume() {
        let vol = Volume4D::new(header([1, 1, 1, 1]), vec![0.0]).unwrap();
        let back = decode_nifti(&encode_nifti(&vol, Datatype::Float32).unwrap()).unwrap();
        assert_eq!(back.data, vec![0.0]);
    }

    #[test]
    fn validate_reports_each_field() {
        assert!(validate_header(&header([2, 2, 2, 1])).is_empty());

        let mut h = header([2, 2, 2, 1]);
        h.voxel_size_mm = [0.0, 3.0, 3.0];
        let v = validate_header(&h);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("voxel_size"));

        let mut h = header([2, 2, 2, 1]);
        h.affine[(3, 3)] = 2.0;
        let v = validate_header(&h);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("affine"));
    }

    #[test]
    fn rejects_bad_magic_and_datatype() {
        let vol = Volume4D::zeros(header([2, 2, 2, 1]));
        let good = encode_nifti(&vol, Datatype::Float32).unwrap();

        let mut bad = good.clone();
        bad[345] = b'i';
        assert!(matches!(decode_nifti(&bad), Err(NiftiError::MalformedHeader(_))));

        let mut bad = good.clone();
        bad[70..72].copy_from_slice(&32i16.to_le_bytes()); // complex64
        assert!(matches!(
            decode_nifti(&bad),
            Err(NiftiError::UnsupportedDatatype(32))
        ));

        let short = &good[..good.len() - 3];
        assert!(matches!(
            decode_nifti(short),
            Err(NiftiError::TruncatedData { .. })
        ));
    }

    #[test]
    fn integer_storage_applies_rescale() {
        let vol = Volume4D::new(header([2, 1, 1, 1]), vec![3.0, -7.0]).unwrap();
        let mut bytes = encode_nifti(&vol, Datatype::Int16).unwrap();
        bytes[112..116].copy_from_slice(&2f32.to_le_bytes());
        bytes[116..120].copy_from_slice(&1f32.to_le_bytes());
        let back = decode_nifti(&bytes).unwrap();
        assert_eq!(back.data, vec![7.0, -13.0]);
    }

    #[test]
    fn zero_slope_means_identity() {
        let vol = Volume4D::new(header([2, 1, 1, 1]), vec![4.0, 5.0]).unwrap();
        let mut bytes = encode_nifti(&vol, Datatype::Uint8).unwrap();
        bytes[112..116].copy_from_slice(&0f32.to_le_bytes());
        assert_eq!(decode_nifti(&bytes).unwrap().data, vec![4.0, 5.0]);
    }

    #[test]
    fn reads_big_endian_files() {
        // hand-assemble a big-endian int32 file
        let vol = Volume4D::new(header([2, 2, 1, 1]), vec![1.0, -2.0, 300.0, 4.0]).unwrap();
        let le = encode_nifti(&vol, Datatype::Int32).unwrap();
        let mut be = le.clone();
        let swap = |b: &mut Vec<u8>, off: usize, n: usize| b[off..off + n].reverse();
        swap(&mut be, 0, 4);
        for i in 0..8 {
            swap(&mut be, 40 + 2 * i, 2);
        }
        swap(&mut be, 70, 2);
        swap(&mut be, 72, 2);
        for i in 0..8 {
            swap(&mut be, 76 + 4 * i, 4);
        }
        for off in [108, 112, 116] {
            swap(&mut be, off, 4);
        }
        swap(&mut be, 252, 2);
        swap(&mut be, 254, 2);
        for i in 0..12 {
            swap(&mut be, 280 + 4 * i, 4);
        }
        for i in 0..4 {
            swap(&mut be, VOX_OFFSET + 4 * i, 4);
        }
        let back = decode_nifti(&be).unwrap();
        assert_eq!(back.data, vol.data);
        assert_eq!(back.header.affine, vol.header.affine);
    }

    #[test]
    fn qform_used_when_sform_absent() {
        let mut h = header([2, 2, 2, 1]);
        h.affine[(0, 3)] = -10.0;
        let mut bytes = encode_nifti(&Volume4D::zeros(h), Datatype::Float32).unwrap();
        bytes[254..256].copy_from_slice(&0i16.to_le_bytes());
        bytes[252..254].copy_from_slice(&1i16.to_le_bytes());
        // identity quaternion, offset (-10, 0, 0)
        bytes[268..272].copy_from_slice(&(-10f32).to_le_bytes());
        let back = decode_nifti(&bytes).unwrap();
        assert_eq!(back.header.affine_source, AffineSource::Qform);
        assert_eq!(back.header.affine[(0, 0)], 3.0);
        assert_eq!(back.header.affine[(0, 3)], -10.0);

        bytes[252..254].copy_from_slice(&0i16.to_le_bytes());
        let back = decode_nifti(&bytes).unwrap();
        assert_eq!(back.header.affine_source, AffineSource::Pixdim);
        assert_eq!(back.header.affine[(0, 3)], 0.0);
    }
}
