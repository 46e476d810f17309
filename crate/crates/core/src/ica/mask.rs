use nalgebra::DMatrix;

use super::{IcaError, Result};
use crate::nifti::{NiftiHeader, Volume3D, Volume4D};

const OUTSIDE: u32 = u32::MAX;

/// In-brain voxel selection and its mapping to data-matrix columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BrainMask {
    /// Single-frame grid the mask lives on.
    pub header: NiftiHeader,
    /// Grid index of each column, ascending.
    pub voxels: Vec<usize>,
    column: Vec<u32>,
}

impl BrainMask {
    pub fn from_flags(header: &NiftiHeader, inside: &[bool]) -> Result<Self> {
        let header = header.with_frames(1);
        if inside.len() != header.n_voxels() {
            return Err(IcaError::GridMismatch(format!(
                "mask has {} entries, grid has {} voxels",
                inside.len(),
                header.n_voxels()
            )));
        }
        let mut column = vec![OUTSIDE; inside.len()];
        let mut voxels = Vec::new();
        for (i, &f) in inside.iter().enumerate() {
            if f {
                column[i] = voxels.len() as u32;
                voxels.push(i);
            }
        }
        if voxels.is_empty() {
            return Err(IcaError::EmptyMask);
        }
        Ok(Self {
            header,
            voxels,
            column,
        })
    }

    /// Nonzero voxels of `vol` are inside.
    pub fn from_volume(vol: &Volume3D) -> Result<Self> {
        let flags: Vec<bool> = vol.data.iter().map(|&v| v != 0.0).collect();
        Self::from_flags(&vol.header, &flags)
    }

    pub fn to_volume(&self) -> Volume3D {
        let mut data = vec![0.0; self.header.n_voxels()];
        for &v in &self.voxels {
            data[v] = 1.0;
        }
        Volume3D(Volume4D {
            header: self.header.clone(),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn column_of(&self, grid_index: usize) -> Option<usize> {
        match self.column.get(grid_index) {
            Some(&c) if c != OUTSIDE => Some(c as usize),
            _ => None,
        }
    }

    pub fn contains(&self, grid_index: usize) -> bool {
        self.column_of(grid_index).is_some()
    }

    /// In-mask values of one frame.
    pub fn extract(&self, frame: &[f64]) -> Vec<f64> {
        self.voxels.iter().map(|&v| frame[v]).collect()
    }

    /// Scatters in-mask values into a zero-filled grid.
    pub fn embed(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.header.n_voxels()];
        for (&v, &x) in self.voxels.iter().zip(values) {
            out[v] = x;
        }
        out
    }

    /// Rows of `maps` (`K × V`) as a `K`-frame volume on the mask grid.
    pub fn maps_to_volume(&self, maps: &DMatrix<f64>) -> Volume4D {
        let k = maps.nrows();
        let n = self.header.n_voxels();
        let mut out = Volume4D::zeros(self.header.with_frames(k));
        for r in 0..k {
            let frame = &mut out.data[r * n..(r + 1) * n];
            for (c, &v) in self.voxels.iter().enumerate() {
                frame[v] = maps[(r, c)];
            }
        }
        out
    }

    /// Inverse of [`maps_to_volume`](Self::maps_to_volume).
    pub fn volume_to_maps(&self, vol: &Volume4D) -> Result<DMatrix<f64>> {
        if !vol.header.same_grid(&self.header) {
            return Err(IcaError::GridMismatch("maps volume is not on the mask grid".into()));
        }
        let k = vol.n_frames();
        Ok(DMatrix::from_fn(k, self.len(), |r, c| vol.frame(r)[self.voxels[c]]))
    }
}

fn check_grids(vols: &[&Volume4D]) -> Result<()> {
    let first = vols
        .first()
        .ok_or_else(|| IcaError::InvalidInput("no volumes given".into()))?;
    for (i, v) in vols.iter().enumerate().skip(1) {
        if !v.header.same_grid(&first.header) {
            return Err(IcaError::GridMismatch(format!(
                "volume {i} has dims {:?}, expected {:?}",
                &v.header.dims[..3],
                &first.header.dims[..3]
            )));
        }
    }
    Ok(())
}

/// Voxels whose mean intensity over all subjects and frames is nonzero and at
/// least `threshold_fraction` times the global mean (magnitudes).
pub fn build_mask(vols: &[&Volume4D], threshold_fraction: f64) -> Result<BrainMask> {
    check_grids(vols)?;
    let header = &vols[0].header;
    let n = header.n_voxels();
    let mut mean = vec![0.0; n];
    let mut frames = 0usize;
    for v in vols {
        for t in 0..v.n_frames() {
            for (m, x) in mean.iter_mut().zip(v.frame(t)) {
                *m += x;
            }
            frames += 1;
        }
    }
    mean.iter_mut().for_each(|m| *m = (*m / frames as f64).abs());
    let global = mean.iter().sum::<f64>() / n as f64;
    let cut = threshold_fraction * global;
    let flags: Vec<bool> = mean.iter().map(|&m| m > 0.0 && m >= cut).collect();
    BrainMask::from_flags(header, &flags)
}

/// Temporally concatenated, per-subject variance-normalised data.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    /// `Σ T_s × V`
    pub values: DMatrix<f64>,
    /// Subject index of each row.
    pub row_subject: Vec<usize>,
}

impl DataMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }
}

/// Per subject and voxel: remove the temporal mean and divide by the temporal
/// standard deviation (columns with sd < 1e-12 become zero); subjects are
/// stacked in order.
pub fn concat_normalize(vols: &[&Volume4D], mask: &BrainMask) -> Result<DataMatrix> {
    check_grids(vols)?;
    if !vols[0].header.same_grid(&mask.header) {
        return Err(IcaError::GridMismatch("mask grid differs from data grid".into()));
    }
    for (i, v) in vols.iter().enumerate() {
        if v.n_frames() < 2 {
            return Err(IcaError::InvalidInput(format!(
                "subject {i} has {} frames, need at least 2",
                v.n_frames()
            )));
        }
    }
    let rows: usize = vols.iter().map(|v| v.n_frames()).sum();
    let cols = mask.len();
    let mut values = DMatrix::zeros(rows, cols);
    let mut row_subject = Vec::with_capacity(rows);
    let mut offset = 0;
    for (s, v) in vols.iter().enumerate() {
        let nt = v.n_frames();
        let nvox = v.header.n_voxels();
        for (c, &vox) in mask.voxels.iter().enumerate() {
            let series: Vec<f64> = (0..nt).map(|t| v.data[vox + t * nvox]).collect();
            let mean = series.iter().sum::<f64>() / nt as f64;
            let var = series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / nt as f64;
            let sd = var.sqrt();
            let mut col = values.column_mut(c);
            for (t, x) in series.iter().enumerate() {
                col[offset + t] = if sd < 1e-12 { 0.0 } else { (x - mean) / sd };
            }
        }
        row_subject.extend(std::iter::repeat_n(s, nt));
        offset += nt;
    }
    Ok(DataMatrix { values, row_subject })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(dims: [usize; 4], f: impl Fn(usize, usize) -> f64) -> Volume4D {
        let h = NiftiHeader::new(dims, [3.0; 3], 2.0);
        let n = h.n_voxels();
        let data = (0..h.len()).map(|i| f(i % n, i / n)).collect();
        Volume4D::new(h, data).unwrap()
    }

    #[test]
    fn zero_threshold_keeps_nonzero_voxels() {
        let v = vol([4, 1, 1, 3], |x, _| if x == 2 { 0.0 } else { 1.0 + x as f64 });
        let m = build_mask(&[&v], 0.0).unwrap();
        assert_eq!(m.voxels, vec![0, 1, 3]);
        assert_eq!(m.column_of(3), Some(2));
        assert_eq!(m.column_of(2), None);
    }

    #[test]
    fn uniform_volumes_fill_grid() {
        let v = vol([3, 3, 3, 2], |_, _| 7.0);
        let m = build_mask(&[&v, &v], 0.5).unwrap();
        assert_eq!(m.len(), 27);
    }

    #[test]
    fn empty_mask_and_grid_mismatch() {
        let z = vol([2, 2, 2, 2], |_, _| 0.0);
        assert!(matches!(build_mask(&[&z], 0.5), Err(IcaError::EmptyMask)));
        let a = vol([2, 2, 2, 2], |_, _| 1.0);
        let b = vol([2, 2, 3, 2], |_, _| 1.0);
        assert!(matches!(build_mask(&[&a, &b], 0.5), Err(IcaError::GridMismatch(_))));
    }

    #[test]
    fn stacked_rows_and_constant_columns() {
        let subjects: Vec<Volume4D> = (0..12)
            .map(|s| vol([3, 2, 1, 60], move |x, t| if x == 0 { 5.0 } else { ((s + x * t) as f64).sin() }))
            .collect();
        let refs: Vec<&Volume4D> = subjects.iter().collect();
        let mask = build_mask(&refs, 0.0).unwrap();
        let dm = concat_normalize(&refs, &mask).unwrap();
        assert_eq!(dm.rows(), 720);
        assert_eq!(dm.row_subject[59], 0);
        assert_eq!(dm.row_subject[60], 1);
        assert!(dm.values.column(0).iter().all(|&v| v == 0.0));
        // unit variance per subject block
        let block: Vec<f64> = (60..120).map(|r| dm.values[(r, 3)]).collect();
        let var = block.iter().map(|v| v * v).sum::<f64>() / 60.0;
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn embed_extract_roundtrip() {
        let v = vol([3, 3, 1, 1], |x, _| if x % 2 == 0 { 1.0 } else { 0.0 });
        let m = build_mask(&[&v], 0.0).unwrap();
        let vals: Vec<f64> = (0..m.len()).map(|i| i as f64 + 0.5).collect();
        assert_eq!(m.extract(&m.embed(&vals)), vals);
    }
}
