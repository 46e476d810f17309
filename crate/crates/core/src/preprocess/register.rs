//! Trilinear resampling and NCC-driven coordinate-descent registration.
//!
//! A registration searches for the *sampling map* `Q` (fixed world mm to
//! moving world mm) that maximises the normalised cross-correlation between
//! the fixed image and the moving image sampled at `Q(p)`. The transform
//! handed to [`resample_to_grid`] is `Q⁻¹`, i.e. it maps moving world space
//! onto fixed world space.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PreprocessError, Result};
use crate::nifti::{NiftiHeader, Volume3D, Volume4D};

/// Rotations are applied about the grid centre, x then y then z.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotations_rad: [f64; 3],
    pub translations_mm: [f64; 3],
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rotation(self.rotations_rad)
    }

    /// `x -> R (x - c) + c + t`
    pub fn matrix_about(&self, center: Vector3<f64>) -> Matrix4<f64> {
        let mut p = [0.0; 12];
        p[..3].copy_from_slice(&self.rotations_rad);
        p[3..6].copy_from_slice(&self.translations_mm);
        p[6..9].copy_from_slice(&[1.0; 3]);
        params_matrix(&p, center)
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        self.matrix_about(Vector3::zeros())
    }

    pub fn is_valid(&self) -> bool {
        self.rotations_rad
            .iter()
            .all(|r| r.is_finite() && r.abs() < std::f64::consts::PI)
            && self.translations_mm.iter().all(|t| t.is_finite())
    }
}

/// World-to-world affine map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub matrix: Matrix4<f64>,
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix4::identity(),
        }
    }

    pub fn new(matrix: Matrix4<f64>) -> Result<Self> {
        let last = matrix.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return Err(PreprocessError::InvalidParameter(
                "affine last row must be (0,0,0,1)".into(),
            ));
        }
        if matrix.fixed_view::<3, 3>(0, 0).determinant().abs() < 1e-12 {
            return Err(PreprocessError::SingularTransform);
        }
        Ok(Self { matrix })
    }

    pub fn inverse(&self) -> Result<Self> {
        self.matrix
            .try_inverse()
            .map(|matrix| Self { matrix })
            .ok_or(PreprocessError::SingularTransform)
    }

    /// Per-axis scaling about `center`.
    pub fn scaling_about(scale: [f64; 3], center: Vector3<f64>) -> Self {
        let mut p = [0.0; 12];
        p[6..9].copy_from_slice(&scale);
        Self {
            matrix: params_matrix(&p, center),
        }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        let mut m = Matrix4::identity();
        for i in 0..3 {
            m[(i, 3)] = t[i];
        }
        Self { matrix: m }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dof {
    Rigid6,
    Affine12,
}

impl TryFrom<u32> for Dof {
    type Error = PreprocessError;
    fn try_from(v: u32) -> Result<Self> {
        match v {
            6 => Ok(Dof::Rigid6),
            12 => Ok(Dof::Affine12),
            other => Err(PreprocessError::InvalidParameter(format!(
                "dof must be 6 or 12, got {other}"
            ))),
        }
    }
}

impl Dof {
    fn active(self) -> &'static [usize] {
        match self {
            Dof::Rigid6 => &[0, 1, 2, 3, 4, 5],
            Dof::Affine12 => &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub rotation_step_rad: f64,
    pub translation_step_mm: f64,
    pub scale_step: f64,
    pub shear_step: f64,
    pub max_sweeps: usize,
    /// Step halvings per pyramid level before the level is considered converged.
    pub halvings: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            rotation_step_rad: 2f64.to_radians(),
            translation_step_mm: 2.0,
            scale_step: 0.05,
            shear_step: 0.05,
            max_sweeps: 200,
            halvings: 7,
        }
    }
}

impl OptimizerSettings {
    fn steps(&self) -> [f64; 12] {
        let mut s = [0.0; 12];
        s[..3].fill(self.rotation_step_rad);
        s[3..6].fill(self.translation_step_mm);
        s[6..9].fill(self.scale_step);
        s[9..].fill(self.shear_step);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    /// Moving world to fixed world; feed to [`resample_to_grid`].
    pub transform: AffineTransform,
    /// Fixed world to moving world.
    pub sampling: Matrix4<f64>,
    /// rotations(3), translations(3), scales(3), shears(3)
    pub params: [f64; 12],
    pub ncc: f64,
}

impl Registration {
    pub fn rigid(&self) -> RigidTransform {
        RigidTransform {
            rotations_rad: [self.params[0], self.params[1], self.params[2]],
            translations_mm: [self.params[3], self.params[4], self.params[5]],
        }
    }
}

fn rotation(r: [f64; 3]) -> Matrix3<f64> {
    let (sx, cx) = r[0].sin_cos();
    let (sy, cy) = r[1].sin_cos();
    let (sz, cz) = r[2].sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
    let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    let rz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

/// `T(c + t) · R · S · Sh · T(-c)`
fn params_matrix(p: &[f64; 12], center: Vector3<f64>) -> Matrix4<f64> {
    let r = rotation([p[0], p[1], p[2]]);
    let s = Matrix3::from_diagonal(&Vector3::new(p[6], p[7], p[8]));
    let sh = Matrix3::new(1.0, p[9], p[10], 0.0, 1.0, p[11], 0.0, 0.0, 1.0);
    let a = r * s * sh;
    let t = Vector3::new(p[3], p[4], p[5]);
    let offset = center + t - a * center;
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&a);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&offset);
    m
}

fn identity_params() -> [f64; 12] {
    let mut p = [0.0; 12];
    p[6..9].fill(1.0);
    p
}

fn grid_center(h: &NiftiHeader) -> Vector3<f64> {
    let c = Vector4::new(
        (h.dims[0] as f64 - 1.0) / 2.0,
        (h.dims[1] as f64 - 1.0) / 2.0,
        (h.dims[2] as f64 - 1.0) / 2.0,
        1.0,
    );
    (h.affine * c).xyz()
}

#[inline]
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Trilinear interpolation with zero extension outside the grid.
#[inline]
fn sample(data: &[f64], dims: [usize; 3], x: f64, y: f64, z: f64) -> f64 {
    let (x, y, z) = (snap(x), snap(y), snap(z));
    let [nx, ny, nz] = dims;
    if !(x > -1.0 && y > -1.0 && z > -1.0)
        || x >= nx as f64
        || y >= ny as f64
        || z >= nz as f64
    {
        return 0.0;
    }
    let (fx, fy, fz) = (x.floor(), y.floor(), z.floor());
    let (ix, iy, iz) = (fx as isize, fy as isize, fz as isize);
    let (dx, dy, dz) = (x - fx, y - fy, z - fz);
    let mut acc = 0.0;
    for (oz, wz) in [(0isize, 1.0 - dz), (1, dz)] {
        let zz = iz + oz;
        if wz == 0.0 || zz < 0 || zz >= nz as isize {
            continue;
        }
        for (oy, wy) in [(0isize, 1.0 - dy), (1, dy)] {
            let yy = iy + oy;
            if wy == 0.0 || yy < 0 || yy >= ny as isize {
                continue;
            }
            let row = (yy as usize + ny * zz as usize) * nx;
            for (ox, wx) in [(0isize, 1.0 - dx), (1, dx)] {
                let xx = ix + ox;
                if wx == 0.0 || xx < 0 || xx >= nx as isize {
                    continue;
                }
                acc += wx * wy * wz * data[row + xx as usize];
            }
        }
    }
    acc
}

fn spatial_dims(h: &NiftiHeader) -> [usize; 3] {
    [h.dims[0], h.dims[1], h.dims[2]]
}

/// Samples one frame on a target grid through a voxel-to-voxel map.
fn resample_frame(src: &[f64], src_dims: [usize; 3], target_dims: [usize; 3], vox: &Matrix4<f64>, out: &mut [f64]) {
    let [nx, ny, nz] = target_dims;
    let col_x = vox.fixed_view::<3, 1>(0, 0).into_owned();
    let mut i = 0;
    for z in 0..nz {
        for y in 0..ny {
            let base = (vox * Vector4::new(0.0, y as f64, z as f64, 1.0)).xyz();
            for x in 0..nx {
                let p = base + col_x * x as f64;
                out[i] = sample(src, src_dims, p.x, p.y, p.z);
                i += 1;
            }
        }
    }
}

/// Pearson correlation of two equally sized buffers. `NaN` when either is constant.
pub fn ncc(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt()
}

/// Halves the grid by averaging 2×2×2 blocks (partial blocks at odd edges).
pub fn downsample2(vol: &Volume3D) -> Volume3D {
    let [nx, ny, nz] = spatial_dims(&vol.header);
    let (mx, my, mz) = (nx.div_ceil(2), ny.div_ceil(2), nz.div_ceil(2));
    let mut data = vec![0.0; mx * my * mz];
    let mut count = vec![0u32; mx * my * mz];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let j = x / 2 + mx * (y / 2 + my * (z / 2));
                data[j] += vol.at(x, y, z);
                count[j] += 1;
            }
        }
    }
    for (d, c) in data.iter_mut().zip(&count) {
        *d /= *c as f64;
    }
    let mut header = vol.header.clone();
    header.dims = [mx, my, mz, 1];
    header.voxel_size_mm = vol.header.voxel_size_mm.map(|v| v * 2.0);
    let mut d = Matrix4::from_diagonal(&Vector4::new(2.0, 2.0, 2.0, 1.0));
    for i in 0..3 {
        d[(i, 3)] = 0.5;
    }
    header.affine = vol.header.affine * d;
    Volume3D(Volume4D { header, data })
}

struct Level {
    fixed: Volume3D,
    fixed_centered: Vec<f64>,
    fixed_ss: f64,
    moving: Volume3D,
    moving_inv: Matrix4<f64>,
}

impl Level {
    fn new(fixed: Volume3D, moving: Volume3D) -> Result<Self> {
        let n = fixed.data.len() as f64;
        let mean = fixed.data.iter().sum::<f64>() / n;
        let fixed_centered: Vec<f64> = fixed.data.iter().map(|v| v - mean).collect();
        let fixed_ss = fixed_centered.iter().map(|v| v * v).sum();
        let moving_inv = moving
            .header
            .affine
            .try_inverse()
            .ok_or(PreprocessError::SingularTransform)?;
        Ok(Self {
            fixed,
            fixed_centered,
            fixed_ss,
            moving,
            moving_inv,
        })
    }

    /// `1 - NCC`; `+inf` when the sampled image is constant.
    fn cost(&self, sampling: &Matrix4<f64>) -> f64 {
        let vox = self.moving_inv * sampling * self.fixed.header.affine;
        let [nx, ny, nz] = spatial_dims(&self.fixed.header);
        let mdims = spatial_dims(&self.moving.header);
        let col_x = vox.fixed_view::<3, 1>(0, 0).into_owned();
        let (mut sm, mut smm, mut sfm) = (0.0, 0.0, 0.0);
        let mut i = 0;
        for z in 0..nz {
            for y in 0..ny {
                let base = (vox * Vector4::new(0.0, y as f64, z as f64, 1.0)).xyz();
                for x in 0..nx {
                    let p = base + col_x * x as f64;
                    let m = sample(&self.moving.data, mdims, p.x, p.y, p.z);
                    sm += m;
                    smm += m * m;
                    sfm += self.fixed_centered[i] * m;
                    i += 1;
                }
            }
        }
        let n = i as f64;
        let var_m = smm - sm * sm / n;
        let ncc = sfm / (self.fixed_ss * var_m).sqrt();
        if ncc.is_finite() {
            1.0 - ncc
        } else {
            f64::INFINITY
        }
    }
}

fn coordinate_descent(
    level: &Level,
    center: Vector3<f64>,
    params: &mut [f64; 12],
    active: &[usize],
    mut steps: [f64; 12],
    settings: &OptimizerSettings,
) -> Result<f64> {
    let mut best = level.cost(&params_matrix(params, center));
    let mut halvings = 0;
    for _ in 0..settings.max_sweeps {
        let mut improved = false;
        for &i in active {
            for dir in [1.0, -1.0] {
                let mut trial = *params;
                trial[i] += dir * steps[i];
                let c = level.cost(&params_matrix(&trial, center));
                if c < best {
                    best = c;
                    *params = trial;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            halvings += 1;
            if halvings > settings.halvings {
                break;
            }
            steps.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(PreprocessError::OptimizerDiverged(
            "non-finite parameters".into(),
        ));
    }
    Ok(best)
}

fn check_not_constant(v: &Volume3D, what: &str) -> Result<()> {
    let first = v.data[0];
    if v.data.iter().all(|&x| x == first) {
        return Err(PreprocessError::DegenerateInput(format!("{what} image is constant")));
    }
    Ok(())
}

struct Pyramid {
    coarse: Volume3D,
    fine: Volume3D,
}

impl Pyramid {
    fn new(v: Volume3D) -> Self {
        Self {
            coarse: downsample2(&v),
            fine: v,
        }
    }
}

fn register_pyramids(
    moving: &Pyramid,
    fixed: &Pyramid,
    dof: Dof,
    settings: &OptimizerSettings,
) -> Result<Registration> {
    let center = grid_center(&fixed.fine.header);
    let mut params = identity_params();
    let coarse = Level::new(fixed.coarse.clone(), moving.coarse.clone())?;
    let fine = Level::new(fixed.fine.clone(), moving.fine.clone())?;
    if !fine.cost(&Matrix4::identity()).is_finite() && !coarse.cost(&Matrix4::identity()).is_finite() {
        return Err(PreprocessError::OptimizerDiverged(
            "objective undefined at the starting point".into(),
        ));
    }
    let steps = settings.steps();
    coordinate_descent(&coarse, center, &mut params, dof.active(), steps, settings)?;
    let cost = coordinate_descent(
        &fine,
        center,
        &mut params,
        dof.active(),
        steps.map(|s| s / 4.0),
        settings,
    )?;
    if !cost.is_finite() {
        return Err(PreprocessError::OptimizerDiverged(
            "objective is undefined at the final estimate".into(),
        ));
    }
    let sampling = params_matrix(&params, center);
    let transform = AffineTransform {
        matrix: sampling.try_inverse().ok_or(PreprocessError::SingularTransform)?,
    };
    Ok(Registration {
        transform,
        sampling,
        params,
        ncc: 1.0 - cost,
    })
}

/// Full registration result, including the final NCC.
pub fn register(
    moving: &Volume3D,
    fixed: &Volume3D,
    dof: Dof,
    settings: &OptimizerSettings,
) -> Result<Registration> {
    check_not_constant(moving, "moving")?;
    check_not_constant(fixed, "fixed")?;
    register_pyramids(
        &Pyramid::new(moving.clone()),
        &Pyramid::new(fixed.clone()),
        dof,
        settings,
    )
}

/// Affine (6 or 12 dof) transform taking `moving` onto `fixed`.
pub fn register_affine(moving: &Volume3D, fixed: &Volume3D, dof: Dof) -> Result<AffineTransform> {
    register(moving, fixed, dof, &OptimizerSettings::default()).map(|r| r.transform)
}

/// Rigidly aligns every frame to frame `ref_index`. The returned parameters
/// describe each frame's displacement relative to the reference.
pub fn motion_correct(vol: &Volume4D, ref_index: usize) -> Result<(Volume4D, Vec<RigidTransform>)> {
    let nt = vol.n_frames();
    if ref_index >= nt {
        return Err(PreprocessError::BadReference { index: ref_index, nt });
    }
    if nt == 1 {
        return Ok((vol.clone(), vec![RigidTransform::identity()]));
    }
    let settings = OptimizerSettings::default();
    let reference = vol.frame_volume(ref_index);
    let ref_constant = reference.data.iter().all(|&x| x == reference.data[0]);
    let ref_pyr = Pyramid::new(reference);
    let dims = spatial_dims(&vol.header);
    let affine = vol.header.affine;
    let affine_inv = affine.try_inverse().ok_or(PreprocessError::SingularTransform)?;

    let results: Vec<Result<(Vec<f64>, RigidTransform)>> = (0..nt)
        .into_par_iter()
        .map(|t| {
            let frame = vol.frame(t);
            if t == ref_index || ref_constant || frame.iter().all(|&x| x == frame[0]) {
                return Ok((frame.to_vec(), RigidTransform::identity()));
            }
            let moving = Pyramid::new(vol.frame_volume(t));
            let reg = register_pyramids(&moving, &ref_pyr, Dof::Rigid6, &settings)?;
            let vox = affine_inv * reg.sampling * affine;
            let mut out = vec![0.0; frame.len()];
            resample_frame(frame, dims, dims, &vox, &mut out);
            Ok((out, reg.rigid()))
        })
        .collect();

    let mut out = Volume4D::zeros(vol.header.clone());
    let mut params = Vec::with_capacity(nt);
    for (t, r) in results.into_iter().enumerate() {
        let (data, p) = r?;
        out.frame_mut(t).copy_from_slice(&data);
        params.push(p);
    }
    Ok((out, params))
}

/// Resamples every frame onto `target`'s grid through `xfm` (moving world to
/// target world). Samples falling outside the source are zero.
pub fn resample_to_grid(vol: &Volume4D, xfm: &AffineTransform, target: &NiftiHeader) -> Result<Volume4D> {
    let src_inv = vol
        .header
        .affine
        .try_inverse()
        .ok_or(PreprocessError::SingularTransform)?;
    let xfm_inv = xfm.inverse()?;
    let vox = src_inv * xfm_inv.matrix * target.affine;
    let src_dims = spatial_dims(&vol.header);
    let tdims = spatial_dims(target);
    let mut header = target.clone();
    header.dims[3] = vol.n_frames();
    header.tr_s = vol.header.tr_s;
    let mut out = Volume4D::zeros(header);
    let n = out.header.n_voxels();
    out.data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(t, dst)| resample_frame(vol.frame(t), src_dims, tdims, &vox, dst));
    Ok(out)
}

/// One row per frame: three rotations (rad) then three translations (mm).
pub fn write_motion_params(path: impl AsRef<Path>, params: &[RigidTransform]) -> std::io::Result<()> {
    let mut s = String::new();
    for p in params {
        let cols: Vec<String> = p
            .rotations_rad
            .iter()
            .chain(&p.translations_mm)
            .map(|v| format!("{v:.10e}"))
            .collect();
        writeln!(s, "{}", cols.join(" ")).unwrap();
    }
    std::fs::write(path, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rigid_matrix_is_proper_rotation() {
        let r = RigidTransform {
            rotations_rad: [0.3, -1.1, 2.5],
            translations_mm: [1.0, 2.0, 3.0],
        };
        let m = r.matrix_about(Vector3::new(5.0, -2.0, 7.0));
        let a = m.fixed_view::<3, 3>(0, 0).into_owned();
        assert!(((a * a.transpose()) - Matrix3::identity()).abs().max() < 1e-12);
        assert!((a.determinant() - 1.0).abs() < 1e-9);
        assert_eq!(m.row(3), nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn sampling_on_lattice_is_exact() {
        let data: Vec<f64> = (0..24).map(|i| i as f64 * 1.5).collect();
        for z in 0..2 {
            for y in 0..3 {
                for x in 0..4 {
                    let v = sample(&data, [4, 3, 2], x as f64, y as f64, z as f64);
                    assert_eq!(v, data[x + 4 * (y + 3 * z)]);
                }
            }
        }
        assert_eq!(sample(&data, [4, 3, 2], -1.0, 0.0, 0.0), 0.0);
        assert_eq!(sample(&data, [4, 3, 2], 0.5, 0.0, 0.0), 0.75);
        // half-way out of the grid blends with zero
        assert_eq!(sample(&data, [4, 3, 2], -0.5, 0.0, 0.0), 0.0);
        assert_eq!(sample(&data, [4, 3, 2], 3.5, 0.0, 0.0), 0.5 * 4.5);
    }

    #[test]
    fn dof_parsing() {
        assert_eq!(Dof::try_from(6).unwrap(), Dof::Rigid6);
        assert_eq!(Dof::try_from(12).unwrap(), Dof::Affine12);
        assert!(Dof::try_from(7).is_err());
    }

    #[test]
    fn singular_affine_rejected() {
        let mut m = Matrix4::identity();
        m[(2, 2)] = 0.0;
        assert!(matches!(
            AffineTransform::new(m),
            Err(PreprocessError::SingularTransform)
        ));
    }
}
