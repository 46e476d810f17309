use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::loss::{masked_cross_entropy, softmax, ClassWeights};
use super::{NnError, Result};

/// Width of each hidden layer.
pub const HIDDEN: usize = 200;

/// Dropout follows this hidden layer (1-based).
const DROPOUT_AFTER: usize = 2;

const MAGIC: &[u8; 8] = b"RSNMLP\0\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layer_dims: Vec<usize>,
    /// `out × in` per layer.
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub init_seed: u64,
    /// Classes that may be predicted; classes absent from training are off.
    pub active: Vec<bool>,
}

impl MlpModel {
    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, d: usize) -> Result<()> {
        if d != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                found: d,
            });
        }
        Ok(())
    }
}

/// `[d, 200, 200, 200, c]`
pub fn mlp_init(d: usize, c: usize, seed: u64) -> MlpModel {
    mlp_init_with(&[d, HIDDEN, HIDDEN, HIDDEN, c], seed)
}

/// He initialisation: `N(0, 2 / fan_in)` weights, zero biases.
pub fn mlp_init_with(layer_dims: &[usize], seed: u64) -> MlpModel {
    assert!(layer_dims.len() >= 2 && layer_dims.iter().all(|&d| d > 0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in layer_dims.windows(2) {
        let scale = (2.0 / w[0] as f64).sqrt();
        let mut m = DMatrix::zeros(w[1], w[0]);
        // row-major fill so the layout of the stream matches the file format
        for r in 0..w[1] {
            for c in 0..w[0] {
                let g: f64 = StandardNormal.sample(&mut rng);
                m[(r, c)] = g * scale;
            }
        }
        weights.push(m);
        biases.push(DVector::zeros(w[1]));
    }
    MlpModel {
        layer_dims: layer_dims.to_vec(),
        weights,
        biases,
        init_seed: seed,
        active: vec![true; *layer_dims.last().unwrap()],
    }
}

pub enum Mode<'a> {
    Eval,
    /// Inverted dropout with drop probability `p` after hidden layer 2.
    Train { p: f64, rng: &'a mut ChaCha8Rng },
}

/// Activations kept for backpropagation; column `b` is example `b`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (`acts[0]` is the batch itself).
    pub acts: Vec<DMatrix<f64>>,
    /// Pre-activations of the hidden layers.
    pub pre: Vec<DMatrix<f64>>,
    /// Scaled keep mask applied after the dropout layer.
    pub dropout: Option<DMatrix<f64>>,
}

/// `x` is `D × B`; returns `C × B` logits.
pub fn forward_batch(model: &MlpModel, x: &DMatrix<f64>, mode: Mode<'_>) -> Result<(DMatrix<f64>, ForwardCache)> {
    model.check_input(x.nrows())?;
    let n_layers = model.weights.len();
    let mut acts = vec![x.clone()];
    let mut pre = Vec::new();
    let mut dropout = None;
    let mut mode = mode;
    for l in 0..n_layers {
        let mut z = &model.weights[l] * &acts[l];
        for mut col in z.column_iter_mut() {
            col += &model.biases[l];
        }
        if l + 1 == n_layers {
            return Ok((z, ForwardCache { acts, pre, dropout }));
        }
        let mut a = z.map(|v| v.max(0.0));
        pre.push(z);
        if l + 1 == DROPOUT_AFTER && n_layers > DROPOUT_AFTER {
            if let Mode::Train { p, ref mut rng } = mode {
                if p > 0.0 {
                    let keep = 1.0 / (1.0 - p);
                    let mask = DMatrix::from_fn(a.nrows(), a.ncols(), |_, _| {
                        if rng.random::<f64>() >= p {
                            keep
                        } else {
                            0.0
                        }
                    });
                    a.component_mul_assign(&mask);
                    dropout = Some(mask);
                }
            }
        }
        acts.push(a);
    }
    unreachable!()
}

/// Single-example forward pass.
pub fn mlp_forward(model: &MlpModel, x: &[f64], mode: Mode<'_>) -> Result<(Vec<f64>, ForwardCache)> {
    model.check_input(x.len())?;
    let xm = DMatrix::from_column_slice(x.len(), 1, x);
    let (logits, cache) = forward_batch(model, &xm, mode)?;
    Ok((logits.iter().copied().collect(), cache))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

/// Parameter gradients from `dlogits` (`C × B`, already scaled for the batch
/// reduction).
pub fn backward(model: &MlpModel, cache: &ForwardCache, dlogits: &DMatrix<f64>) -> Gradients {
    let n_layers = model.weights.len();
    let mut gw = vec![DMatrix::zeros(0, 0); n_layers];
    let mut gb = vec![DVector::zeros(0); n_layers];
    let mut delta = dlogits.clone();
    for l in (0..n_layers).rev() {
        gw[l] = &delta * cache.acts[l].transpose();
        gb[l] = DVector::from_iterator(delta.nrows(), delta.row_iter().map(|r| r.sum()));
        if l == 0 {
            break;
        }
        let mut da = model.weights[l].transpose() * &delta;
        if l == DROPOUT_AFTER {
            if let Some(mask) = &cache.dropout {
                da.component_mul_assign(mask);
            }
        }
        let z = &cache.pre[l - 1];
        da.zip_apply(z, |d, zv| {
            if zv <= 0.0 {
                *d = 0.0
            }
        });
        delta = da;
    }
    Gradients { weights: gw, biases: gb }
}

/// Loss and gradients of the mean weighted cross-entropy over the columns of
/// `x`.
pub(crate) fn batch_loss_grad(
    model: &MlpModel,
    x: &DMatrix<f64>,
    targets: &[usize],
    w: &ClassWeights,
    mode: Mode<'_>,
) -> Result<(f64, Gradients, DMatrix<f64>)> {
    let (logits, cache) = forward_batch(model, x, mode)?;
    let b = targets.len() as f64;
    let mut dlogits = DMatrix::zeros(logits.nrows(), logits.ncols());
    let mut loss = 0.0;
    for (j, &t) in targets.iter().enumerate() {
        let col: Vec<f64> = logits.column(j).iter().copied().collect();
        let (l, g) = masked_cross_entropy(&col, t, w, &model.active)?;
        loss += l;
        for (i, gi) in g.into_iter().enumerate() {
            dlogits[(i, j)] = gi / b;
        }
    }
    Ok((loss / b, backward(model, &cache, &dlogits), logits))
}

/// Gradients of the weighted loss on a single example in eval mode.
pub fn gradients(model: &MlpModel, x: &[f64], target: usize, w: &ClassWeights) -> Result<(f64, Gradients)> {
    model.check_input(x.len())?;
    let xm = DMatrix::from_column_slice(x.len(), 1, x);
    let (loss, g, _) = batch_loss_grad(model, &xm, &[target], w, Mode::Eval)?;
    Ok((loss, g))
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode class (lowest index on ties) and softmax probabilities.
pub fn mlp_predict(model: &MlpModel, x: &[f64]) -> Result<(usize, Vec<f64>)> {
    let (logits, _) = mlp_forward(model, x, Mode::Eval)?;
    let p = softmax(&logits, &model.active);
    Ok((argmax(&p), p))
}

/// [`mlp_predict`] over the columns of `x`.
pub fn predict_batch(model: &MlpModel, x: &DMatrix<f64>) -> Result<Vec<(usize, Vec<f64>)>> {
    let (logits, _) = forward_batch(model, x, Mode::Eval)?;
    Ok(logits
        .column_iter()
        .map(|c| {
            let l: Vec<f64> = c.iter().copied().collect();
            let p = softmax(&l, &model.active);
            (argmax(&p), p)
        })
        .collect())
}

/// Largest relative difference between analytic gradients and central
/// differences with step `1e-5` over every parameter. The relative error of
/// each parameter is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check(model: &MlpModel, x: &[f64], target: usize, w: &ClassWeights) -> Result<f64> {
    const H: f64 = 1e-5;
    let (_, analytic) = gradients(model, x, target, w)?;
    let loss = |m: &MlpModel| gradients(m, x, target, w).map(|r| r.0);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let mut rel = |a: f64, n: f64| {
        let e = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        worst = worst.max(e);
    };
    for l in 0..model.weights.len() {
        for i in 0..model.weights[l].len() {
            let orig = probe.weights[l][i];
            probe.weights[l][i] = orig + H;
            let up = loss(&probe)?;
            probe.weights[l][i] = orig - H;
            let down = loss(&probe)?;
            probe.weights[l][i] = orig;
            rel(analytic.weights[l][i], (up - down) / (2.0 * H));
        }
        for i in 0..model.biases[l].len() {
            let orig = probe.biases[l][i];
            probe.biases[l][i] = orig + H;
            let up = loss(&probe)?;
            probe.biases[l][i] = orig - H;
            let down = loss(&probe)?;
            probe.biases[l][i] = orig;
            rel(analytic.biases[l][i], (up - down) / (2.0 * H));
        }
    }
    Ok(worst)
}

/// Binary layout, little-endian: magic `RSNMLP\0\0`, version (u32), layer
/// count (u32), each layer dim (u64), init seed (u64), one active flag byte
/// per class, then for each layer its weights row by row followed by its
/// biases, all as f64.
pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(model.layer_dims.len() as u32).to_le_bytes())?;
    for &d in &model.layer_dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    w.write_all(&model.init_seed.to_le_bytes())?;
    w.write_all(&model.active.iter().map(|&a| a as u8).collect::<Vec<_>>())?;
    for (wm, b) in model.weights.iter().zip(&model.biases) {
        for r in 0..wm.nrows() {
            for c in 0..wm.ncols() {
                w.write_all(&wm[(r, c)].to_le_bytes())?;
            }
        }
        for v in b.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let bad = |m: &str| NnError::ModelFormat(m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != VERSION {
        return Err(bad("unsupported version"));
    }
    r.read_exact(&mut b4)?;
    let n = u32::from_le_bytes(b4) as usize;
    if !(2..=64).contains(&n) {
        return Err(bad("implausible layer count"));
    }
    let mut b8 = [0u8; 8];
    let mut dims = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        let d = u64::from_le_bytes(b8) as usize;
        if d == 0 || d > 1 << 28 {
            return Err(bad("implausible layer size"));
        }
        dims.push(d);
    }
    r.read_exact(&mut b8)?;
    let init_seed = u64::from_le_bytes(b8);
    let mut active = vec![0u8; dims[n - 1]];
    r.read_exact(&mut active)?;
    let mut read_f64 = |r: &mut dyn Read| -> Result<f64> {
        r.read_exact(&mut b8)?;
        Ok(f64::from_le_bytes(b8))
    };
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in dims.windows(2) {
        let mut m = DMatrix::zeros(w[1], w[0]);
        for row in 0..w[1] {
            for col in 0..w[0] {
                m[(row, col)] = read_f64(&mut r)?;
            }
        }
        let mut b = DVector::zeros(w[1]);
        for i in 0..w[1] {
            b[i] = read_f64(&mut r)?;
        }
        weights.push(m);
        biases.push(b);
    }
    let model = MlpModel {
        layer_dims: dims,
        weights,
        biases,
        init_seed,
        active: active.into_iter().map(|a| a != 0).collect(),
    };
    if !model.is_finite() {
        return Err(bad("non-finite parameters"));
    }
    Ok(model)
}
