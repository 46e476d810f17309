use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::labels::{ComponentLabels, LabelSet};
use super::project::{project_2p5d, Rgb2p5};
use super::{RepresentError, Result};
use crate::dualreg::SubjectComponents;
use crate::ica::BrainMask;
use crate::nifti::{Volume3D, Volume4D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Full-grid map, z-scored per example.
    #[default]
    Flat,
    /// 2.5D RGB projection.
    Rgb,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Vector(Vec<f64>),
    Rgb(Rgb2p5),
}

impl Features {
    pub fn to_vector(&self) -> Vec<f64> {
        match self {
            Features::Vector(v) => v.clone(),
            Features::Rgb(img) => img.to_features(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Features::Vector(v) => v.len(),
            Features::Rgb(img) => 3 * img.side * img.side,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub subject_id: String,
    pub component_index: usize,
    pub features: Features,
    pub class_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let sum = self.train + self.val + self.test;
        if !(self.train > 0.0 && self.val > 0.0 && self.test > 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(RepresentError::BadSplit(format!(
                "ratios {}/{}/{} must be positive and sum to 1",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

fn floor_count(ratio: f64, n: usize) -> usize {
    // guard against 0.7 * 10 = 6.999...
    (ratio * n as f64 + 1e-9).floor() as usize
}

/// Seeded subject-level split: `⌊train·N⌋`, `⌊val·N⌋`, remainder.
pub fn split_subjects(subject_ids: &[String], spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let n = subject_ids.len();
    if n < 3 {
        return Err(RepresentError::TooFewSubjects(n));
    }
    let mut ids = subject_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != n {
        return Err(RepresentError::BadSplit("duplicate subject ids".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    ids.shuffle(&mut rng);
    let n_train = floor_count(spec.train, n);
    let n_val = floor_count(spec.val, n);
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Ok(Split { train: ids, val, test })
}

/// Z-scored copy; a constant vector becomes all zeros.
pub fn zscore_features(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    if !(sd > 0.0) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - mean) / sd).collect()
}

/// One example per `(subject, component)`, subjects in input order.
pub fn build_dataset(
    subjects: &[SubjectComponents],
    mask: &BrainMask,
    labels: &ComponentLabels,
    set: &LabelSet,
    mode: FeatureMode,
) -> Result<Vec<Example>> {
    let Some(first) = subjects.first() else {
        return Ok(Vec::new());
    };
    let k = first.n_components();
    for s in subjects {
        if s.n_components() != k {
            return Err(RepresentError::ComponentCount {
                subject: s.subject_id.clone(),
                found: s.n_components(),
                expected: k,
            });
        }
        if !s.grid.same_grid(&mask.header) || s.maps.ncols() != mask.len() {
            return Err(RepresentError::GridMismatch(s.subject_id.clone()));
        }
    }
    let mut classes = Vec::with_capacity(k);
    for c in 0..k {
        let label = labels.get(&c).ok_or(RepresentError::MissingLabel(c))?;
        let idx = set
            .index_of(label)
            .ok_or_else(|| RepresentError::UnknownClass(label.raw()))?;
        classes.push(idx);
    }
    let jobs: Vec<(usize, usize)> = (0..subjects.len())
        .flat_map(|s| (0..k).map(move |c| (s, c)))
        .collect();
    jobs.par_iter()
        .map(|&(s, c)| {
            let sc = &subjects[s];
            let row: Vec<f64> = sc.maps.row(c).iter().copied().collect();
            let full = mask.embed(&row);
            let features = match mode {
                FeatureMode::Flat => Features::Vector(zscore_features(&full)),
                FeatureMode::Rgb => {
                    let vol = Volume3D(Volume4D {
                        header: mask.header.clone(),
                        data: full,
                    });
                    Features::Rgb(project_2p5d(&vol)?)
                }
            };
            Ok(Example {
                subject_id: sc.subject_id.clone(),
                component_index: c,
                features,
                class_index: classes[c],
            })
        })
        .collect()
}

/// Examples whose subject is in `ids`, in dataset order.
pub fn select<'a>(examples: &'a [Example], ids: &[String]) -> Vec<&'a Example> {
    examples.iter().filter(|e| ids.contains(&e.subject_id)).collect()
}

pub fn class_counts<'a, I: IntoIterator<Item = &'a Example>>(examples: I, n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for e in examples {
        counts[e.class_index] += 1;
    }
    counts
}

const DATASET_MAGIC: &[u8; 8] = b"RSNDSET1";

/// Binary dataset: magic, `n`, `dim` (u64 LE), then per example
/// `class`, `component` (u64 LE), subject id (u64 length + UTF-8) and `dim`
/// little-endian f64 features.
pub fn write_dataset(path: &Path, examples: &[Example]) -> Result<()> {
    let dim = examples.first().map_or(0, |e| e.features.len());
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&(examples.len() as u64).to_le_bytes())?;
    w.write_all(&(dim as u64).to_le_bytes())?;
    for e in examples {
        let v = e.features.to_vector();
        if v.len() != dim {
            return Err(RepresentError::Dataset(format!(
                "feature length {} differs from {dim}",
                v.len()
            )));
        }
        w.write_all(&(e.class_index as u64).to_le_bytes())?;
        w.write_all(&(e.component_index as u64).to_le_bytes())?;
        w.write_all(&(e.subject_id.len() as u64).to_le_bytes())?;
        w.write_all(e.subject_id.as_bytes())?;
        for x in v {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Features come back as [`Features::Vector`].
pub fn read_dataset(path: &Path) -> Result<Vec<Example>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(RepresentError::Dataset("bad magic".into()));
    }
    let mut u = || -> Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    };
    let n = u()? as usize;
    let dim = u()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    let mut b8 = [0u8; 8];
    for _ in 0..n {
        let mut next = || -> Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let class_index = next()? as usize;
        let component_index = next()? as usize;
        let len = next()? as usize;
        if len > 4096 {
            return Err(RepresentError::Dataset("subject id too long".into()));
        }
        let mut id = vec![0u8; len];
        r.read_exact(&mut id)?;
        let subject_id = String::from_utf8(id).map_err(|_| RepresentError::Dataset("subject id is not UTF-8".into()))?;
        let mut raw = vec![0u8; dim * 8];
        r.read_exact(&mut raw)?;
        let v = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(Example {
            subject_id,
            component_index,
            features: Features::Vector(v),
            class_index,
        });
    }
    Ok(out)
}
