use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{zscore_map, IcaError, IcaResult, Result};

/// Non-quadratic contrast used in the fixed-point update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contrast {
    /// `G(u) = log cosh(u)`, `g = tanh`
    #[default]
    Tanh,
    /// `G(u) = u⁴/4`, `g = u³`
    Pow3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FastIcaSettings {
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub contrast: Contrast,
}

impl Default for FastIcaSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            tol: 1e-4,
            max_iter: 200,
            contrast: Contrast::Tanh,
        }
    }
}

/// `(W Wᵀ)^{-1/2} W`
pub fn sym_decorrelate(w: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(w * w.transpose());
    let d = eig.eigenvalues.map(|e| 1.0 / e.max(f64::MIN_POSITIVE).sqrt());
    let e = &eig.eigenvectors;
    e * DMatrix::from_diagonal(&d) * e.transpose() * w
}

fn random_orthonormal(k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(k, k, |_, _| StandardNormal.sample(&mut rng));
    g.qr().q()
}

fn check_whitened(z: &DMatrix<f64>) -> Result<()> {
    let v = z.ncols() as f64;
    let cov = z * z.transpose() / v;
    let dev = (cov - DMatrix::identity(z.nrows(), z.nrows())).abs().max();
    if dev > 1e-6 {
        return Err(IcaError::NotWhitened(dev));
    }
    Ok(())
}

/// Symmetric FastICA on whitened rows (`K × V`, sources along columns).
///
/// Returns z-scored spatial maps signed to have non-negative skew. The
/// `mixing` field is `K × K` in whitened space so that
/// `whitened ≈ mixing · spatial_maps`. Failure to converge within
/// `max_iter` is reported via `converged = false`.
pub fn fastica(whitened: &DMatrix<f64>, settings: &FastIcaSettings) -> Result<IcaResult> {
    let (k, v) = whitened.shape();
    if k == 0 || v < 2 {
        return Err(IcaError::InvalidInput(format!("cannot unmix a {k}x{v} matrix")));
    }
    check_whitened(whitened)?;
    let vf = v as f64;
    let zt = whitened.transpose();

    let mut w = random_orthonormal(k, settings.seed);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=settings.max_iter {
        iterations = it;
        let y = &w * whitened;
        let mut gy = y.clone();
        let mut mean_dg = vec![0.0; k];
        match settings.contrast {
            Contrast::Tanh => {
                for r in 0..k {
                    let mut acc = 0.0;
                    for c in 0..v {
                        let t = y[(r, c)].tanh();
                        gy[(r, c)] = t;
                        acc += 1.0 - t * t;
                    }
                    mean_dg[r] = acc / vf;
                }
            }
            Contrast::Pow3 => {
                for r in 0..k {
                    let mut acc = 0.0;
                    for c in 0..v {
                        let u = y[(r, c)];
                        gy[(r, c)] = u * u * u;
                        acc += 3.0 * u * u;
                    }
                    mean_dg[r] = acc / vf;
                }
            }
        }
        let mut w_new = &gy * &zt / vf;
        for r in 0..k {
            let wr = w.row(r).clone_owned() * mean_dg[r];
            let mut row = w_new.row_mut(r);
            row -= wr;
        }
        let w_new = sym_decorrelate(&w_new);
        let lim = (&w_new * w.transpose())
            .diagonal()
            .iter()
            .map(|d| (1.0 - d.abs()).abs())
            .fold(0.0, f64::max);
        w = w_new;
        if lim < settings.tol {
            converged = true;
            break;
        }
    }

    let raw = &w * whitened;
    let mut maps = DMatrix::zeros(k, v);
    let mut mixing = w.transpose();
    for r in 0..k {
        let row: Vec<f64> = raw.row(r).iter().copied().collect();
        let mut z = zscore_map(&row)?;
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let sd = (row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        let skew: f64 = z.iter().map(|x| x * x * x).sum();
        let sign = if skew < 0.0 { -1.0 } else { 1.0 };
        if sign < 0.0 {
            z.iter_mut().for_each(|x| *x = -*x);
            w.row_mut(r).neg_mut();
        }
        for (c, x) in z.into_iter().enumerate() {
            maps[(r, c)] = x;
        }
        mixing.column_mut(r).scale_mut(sign * sd);
    }

    Ok(IcaResult {
        model_order: k,
        spatial_maps: maps,
        mixing,
        unmixing: w,
        seed: settings.seed,
        iterations_used: iterations,
        converged,
    })
}
