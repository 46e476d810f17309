//! Synthetic multi-subject 4D data with known spatial networks, time courses
//! and labels, plus matching of estimated components to the ground truth.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nifti::{write_nifti, NiftiError, NiftiHeader, Volume4D};
use crate::represent::{parse_label, RsnLabel};

/// Largest allowed pairwise |correlation| between generated source maps.
pub const MAX_SOURCE_CORR: f64 = 0.3;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("blob centre {0:?} lies outside the grid")]
    BlobOutOfBounds([f64; 3]),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("could not place {0} networks with pairwise |corr| < 0.3")]
    Placement(usize),
    #[error(transparent)]
    Nifti(#[from] NiftiError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    /// Voxel coordinates.
    pub center: [f64; 3],
    /// Gaussian sigma in voxels.
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub dims: [usize; 3],
    pub voxel_size_mm: f64,
    pub n_timepoints: usize,
    pub tr_s: f64,
    pub n_networks: usize,
    /// Explicit blobs per network; auto-placed when empty.
    pub networks: Vec<Vec<Blob>>,
    pub blobs_per_network: usize,
    pub blob_radius: f64,
    /// Relative sd of per-subject network amplitudes.
    pub amplitude_jitter: f64,
    /// Sd of per-subject blob displacement, voxels.
    pub shift_jitter: f64,
    /// Noise sd as a fraction of the network signal amplitude.
    pub noise_frac: f64,
    pub signal_amplitude: f64,
    pub baseline: f64,
    /// Moving-average length used to band-limit time courses.
    pub smooth_window: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_subjects: 12,
            dims: [40, 48, 40],
            voxel_size_mm: 4.0,
            n_timepoints: 60,
            tr_s: 2.0,
            n_networks: 6,
            networks: Vec::new(),
            blobs_per_network: 2,
            blob_radius: 2.0,
            amplitude_jitter: 0.1,
            shift_jitter: 0.0,
            noise_frac: 0.05,
            signal_amplitude: 1.0,
            baseline: 100.0,
            smooth_window: 3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.n_networks == 0 {
            return bad("n_networks must be >= 1");
        }
        if self.n_subjects == 0 || self.n_timepoints < 2 {
            return bad("need at least one subject and two timepoints");
        }
        if self.dims.iter().any(|&d| d < 4) {
            return bad("grid too small");
        }
        if !(self.noise_frac >= 0.0) || !(self.amplitude_jitter >= 0.0) || !(self.shift_jitter >= 0.0) {
            return bad("noise and jitter must be >= 0");
        }
        if !(self.tr_s > 0.0 && self.voxel_size_mm > 0.0 && self.blob_radius > 0.0) {
            return bad("tr_s, voxel_size_mm and blob_radius must be > 0");
        }
        if self.smooth_window == 0 {
            return bad("smooth_window must be >= 1");
        }
        if !self.networks.is_empty() && self.networks.len() != self.n_networks {
            return bad("networks list length differs from n_networks");
        }
        for net in &self.networks {
            if net.is_empty() {
                return bad("network without blobs");
            }
            for b in net {
                let inside = b.center.iter().zip(self.dims).all(|(&c, d)| c >= 0.0 && c <= (d - 1) as f64);
                if !inside {
                    return Err(SynthError::BlobOutOfBounds(b.center));
                }
            }
        }
        Ok(())
    }

    pub fn header(&self) -> NiftiHeader {
        let [nx, ny, nz] = self.dims;
        NiftiHeader::new([nx, ny, nz, self.n_timepoints], [self.voxel_size_mm; 3], self.tr_s)
    }

    pub fn n_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_frac * self.signal_amplitude
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub subject_id: String,
    /// `T × G`, rows are time.
    pub timecourses: Vec<Vec<f64>>,
    pub amplitudes: Vec<f64>,
    /// Per-network displacement in voxels.
    pub shifts: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    pub labels: Vec<RsnLabel>,
    pub networks: Vec<Vec<Blob>>,
    pub subjects: Vec<SubjectTruth>,
    /// `G × V` over the full grid; stored separately as a NIfTI volume.
    #[serde(skip)]
    pub maps: DMatrix<f64>,
}

impl GroundTruth {
    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.subject_id.clone()).collect()
    }

    pub fn timecourses(&self, subject: usize) -> DMatrix<f64> {
        let tc = &self.subjects[subject].timecourses;
        DMatrix::from_fn(tc.len(), self.labels.len(), |t, g| tc[t][g])
    }
}

pub const TRUTH_FILE: &str = "truth.json";
pub const TRUTH_MAPS_FILE: &str = "truth_maps.nii.gz";

pub fn subject_id(index: usize) -> String {
    format!("sub-{:02}", index + 1)
}

pub fn subject_file(index: usize) -> String {
    format!("{}.nii", subject_id(index))
}

pub fn network_label(g: usize) -> RsnLabel {
    parse_label(&format!("SYNTH-NET-{:02}", g + 1)).expect("valid label")
}

fn head_inside(spec: &SynthSpec, p: [f64; 3], margin: f64) -> bool {
    let mut r = 0.0;
    for a in 0..3 {
        let c = (spec.dims[a] as f64 - 1.0) / 2.0;
        let semi = 0.45 * spec.dims[a] as f64 - margin;
        if semi <= 0.0 {
            return false;
        }
        r += ((p[a] - c) / semi).powi(2);
    }
    r <= 1.0
}

/// Ellipsoidal head support.
pub fn head_mask(spec: &SynthSpec) -> Vec<bool> {
    let [nx, ny, nz] = spec.dims;
    let mut out = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                out.push(head_inside(spec, [x as f64, y as f64, z as f64], 0.0));
            }
        }
    }
    out
}

/// Sum of Gaussian blobs displaced by `shift`, scaled to peak 1.
pub fn render_network(spec: &SynthSpec, blobs: &[Blob], shift: [f64; 3]) -> Vec<f64> {
    let [nx, ny, nz] = spec.dims;
    let mut out = vec![0.0; nx * ny * nz];
    for b in blobs {
        let c = [b.center[0] + shift[0], b.center[1] + shift[1], b.center[2] + shift[2]];
        let reach = (4.0 * b.radius).ceil() as isize;
        let range = |a: usize, n: usize| {
            let lo = (c[a].round() as isize - reach).max(0);
            let hi = (c[a].round() as isize + reach + 1).min(n as isize);
            lo as usize..hi.max(lo) as usize
        };
        let s2 = 2.0 * b.radius * b.radius;
        for z in range(2, nz) {
            for y in range(1, ny) {
                for x in range(0, nx) {
                    let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (z as f64 - c[2]).powi(2);
                    out[x + nx * (y + ny * z)] += (-d2 / s2).exp();
                }
            }
        }
    }
    let peak = out.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v /= peak);
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        da += (x - ma) * (x - ma);
        db += (y - mb) * (y - mb);
    }
    if da == 0.0 || db == 0.0 {
        return 0.0;
    }
    num / (da * db).sqrt()
}

fn place_networks(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<Blob>>> {
    if !spec.networks.is_empty() {
        return Ok(spec.networks.clone());
    }
    let margin = 2.0 * spec.blob_radius;
    let mut nets: Vec<Vec<Blob>> = Vec::new();
    let mut maps: Vec<Vec<f64>> = Vec::new();
    let mut attempts = 0;
    while nets.len() < spec.n_networks {
        attempts += 1;
        if attempts > 200 * spec.n_networks {
            return Err(SynthError::Placement(spec.n_networks));
        }
        let mut blobs = Vec::new();
        while blobs.len() < spec.blobs_per_network.max(1) {
            let p = [0, 1, 2].map(|a| rng.random_range(0.0..(spec.dims[a] - 1) as f64));
            if head_inside(spec, p, margin) {
                blobs.push(Blob {
                    center: p,
                    radius: spec.blob_radius,
                });
            }
        }
        let map = render_network(spec, &blobs, [0.0; 3]);
        if maps.iter().all(|m| pearson(m, &map).abs() < MAX_SOURCE_CORR) {
            maps.push(map);
            nets.push(blobs);
        }
    }
    Ok(nets)
}

/// Unit-variance, zero-mean moving average of white noise.
fn band_limited(rng: &mut ChaCha8Rng, t: usize, window: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..t + window - 1).map(|_| StandardNormal.sample(&mut *rng)).collect();
    let mut out: Vec<f64> = raw.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect();
    let mean = out.iter().sum::<f64>() / t as f64;
    out.iter_mut().for_each(|v| *v -= mean);
    let sd = (out.iter().map(|v| v * v).sum::<f64>() / t as f64).sqrt();
    if sd > 0.0 {
        out.iter_mut().for_each(|v| *v /= sd);
    }
    out
}

enum Stream {
    Params,
    Noise,
}

/// Stream 0 places networks; each subject owns two further streams.
fn subject_rng(seed: u64, subject: usize, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = match stream {
        Stream::Params => 1,
        Stream::Noise => 2,
    };
    rng.set_stream(2 * subject as u64 + offset);
    rng
}

/// Network placement and per-subject parameters, without rendering data.
pub fn synth_truth(spec: &SynthSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let networks = place_networks(spec, &mut rng)?;
    let g = networks.len();
    let v = spec.n_voxels();
    let rendered: Vec<Vec<f64>> = networks.iter().map(|n| render_network(spec, n, [0.0; 3])).collect();
    for a in 0..g {
        for b in 0..a {
            let c = pearson(&rendered[a], &rendered[b]).abs();
            if c >= MAX_SOURCE_CORR {
                return Err(SynthError::InvalidSpec(format!(
                    "networks {b} and {a} overlap (|corr| = {c:.3})"
                )));
            }
        }
    }
    let maps = DMatrix::from_fn(g, v, |r, c| rendered[r][c]);
    let subjects = (0..spec.n_subjects)
        .map(|s| {
            let mut rng = subject_rng(spec.seed, s, Stream::Params);
            let cols: Vec<Vec<f64>> = (0..g)
                .map(|_| band_limited(&mut rng, spec.n_timepoints, spec.smooth_window))
                .collect();
            let amplitudes = (0..g)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    spec.signal_amplitude * (1.0 + spec.amplitude_jitter * z)
                })
                .collect();
            let shifts = (0..g)
                .map(|_| {
                    [0, 1, 2].map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        spec.shift_jitter * z
                    })
                })
                .collect();
            SubjectTruth {
                subject_id: subject_id(s),
                timecourses: (0..spec.n_timepoints).map(|t| cols.iter().map(|c| c[t]).collect()).collect(),
                amplitudes,
                shifts,
            }
        })
        .collect();
    Ok(GroundTruth {
        spec: spec.clone(),
        labels: (0..g).map(network_label).collect(),
        networks,
        subjects,
        maps,
    })
}

/// `Y = baseline·head + A_s·S_s + ε` for one subject, in memory.
pub fn render_subject(truth: &GroundTruth, s: usize) -> Volume4D {
    let spec = &truth.spec;
    let st = &truth.subjects[s];
    let head = head_mask(spec);
    let v = spec.n_voxels();
    let t_len = spec.n_timepoints;
    let maps: Vec<Vec<f64>> = truth
        .networks
        .iter()
        .zip(&st.shifts)
        .map(|(n, &sh)| render_network(spec, n, sh))
        .collect();
    let mut rng = subject_rng(spec.seed, s, Stream::Noise);
    let sd = spec.noise_sd();
    let mut data = vec![0.0; v * t_len];
    for t in 0..t_len {
        let frame = &mut data[t * v..(t + 1) * v];
        for (g, m) in maps.iter().enumerate() {
            let a = st.amplitudes[g] * st.timecourses[t][g];
            for (f, &mv) in frame.iter_mut().zip(m) {
                *f += a * mv;
            }
        }
        for (i, f) in frame.iter_mut().enumerate() {
            if head[i] {
                *f += spec.baseline;
                if sd > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *f += sd * z;
                }
            } else {
                *f = 0.0;
            }
        }
    }
    Volume4D {
        header: spec.header(),
        data,
    }
}

/// Writes every subject plus `truth.json` and `truth_maps.nii.gz` to `dir`.
pub fn synth_generate(spec: &SynthSpec, dir: &Path) -> Result<(Vec<PathBuf>, GroundTruth)> {
    let truth = synth_truth(spec)?;
    std::fs::create_dir_all(dir)?;
    let mut files: Vec<PathBuf> = (0..spec.n_subjects)
        .into_par_iter()
        .map(|s| {
            let p = dir.join(subject_file(s));
            write_nifti(&render_subject(&truth, s), &p, false)?;
            Ok(p)
        })
        .collect::<Result<_>>()?;
    files.extend(write_truth(&truth, dir)?);
    Ok((files, truth))
}

pub fn write_truth(truth: &GroundTruth, dir: &Path) -> Result<Vec<PathBuf>> {
    let json = dir.join(TRUTH_FILE);
    std::fs::write(&json, serde_json::to_string_pretty(truth)? + "\n")?;
    let maps = dir.join(TRUTH_MAPS_FILE);
    let g = truth.maps.nrows();
    let h = truth.spec.header().with_frames(g);
    let v = truth.spec.n_voxels();
    let data = (0..g * v).map(|i| truth.maps[(i / v, i % v)]).collect();
    write_nifti(&Volume4D { header: h, data }, &maps, true)?;
    Ok(vec![json, maps])
}

pub fn read_truth(dir: &Path) -> Result<GroundTruth> {
    let mut truth: GroundTruth = serde_json::from_str(&std::fs::read_to_string(dir.join(TRUTH_FILE))?)?;
    let maps = crate::nifti::read_nifti(dir.join(TRUTH_MAPS_FILE))?;
    let v = maps.header.n_voxels();
    truth.maps = DMatrix::from_fn(maps.n_frames(), v, |r, c| maps.data[r * v + c]);
    Ok(truth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub truth: usize,
    pub estimate: usize,
    /// Signed Pearson correlation.
    pub corr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// One entry per truth row, in truth order.
    pub pairs: Vec<MatchPair>,
}

impl Matching {
    pub fn min_abs_corr(&self) -> f64 {
        self.pairs.iter().map(|p| p.corr.abs()).fold(f64::INFINITY, f64::min)
    }

    /// Truth index matched to estimate `k`, if any.
    pub fn truth_of(&self, k: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.estimate == k).map(|p| p.truth)
    }
}

/// Greedy assignment by descending |correlation|, without replacement.
pub fn match_components(estimated: &DMatrix<f64>, truth: &DMatrix<f64>) -> Matching {
    let (k, g) = (estimated.nrows(), truth.nrows());
    let rows = |m: &DMatrix<f64>, r: usize| -> Vec<f64> { m.row(r).iter().copied().collect() };
    let est: Vec<Vec<f64>> = (0..k).map(|r| rows(estimated, r)).collect();
    let tru: Vec<Vec<f64>> = (0..g).map(|r| rows(truth, r)).collect();
    let mut cands: Vec<(f64, usize, usize, f64)> = Vec::with_capacity(k * g);
    for (ti, t) in tru.iter().enumerate() {
        for (ei, e) in est.iter().enumerate() {
            let c = pearson(e, t);
            cands.push((c.abs(), ti, ei, c));
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_t = vec![false; g];
    let mut used_e = vec![false; k];
    let mut pairs = Vec::new();
    for (_, ti, ei, c) in cands {
        if !used_t[ti] && !used_e[ei] {
            used_t[ti] = true;
            used_e[ei] = true;
            pairs.push(MatchPair {
                truth: ti,
                estimate: ei,
                corr: c,
            });
        }
    }
    pairs.sort_by_key(|p| p.truth);
    Matching { pairs }
}
