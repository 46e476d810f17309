use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{IcaError, Result};

/// Eigenvalues at or below this are treated as zero.
const EIGEN_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    /// `K × V` whitened data: zero-mean rows with unit variance.
    pub reduced: DMatrix<f64>,
    /// `rows × K`; `basis · reduced` reconstructs the row-centred data.
    pub basis: DMatrix<f64>,
    /// Top-K eigenvalues of the row covariance, descending.
    pub eigenvalues: Vec<f64>,
    /// Mean of each input row over columns.
    pub row_means: Vec<f64>,
    /// Trace of the row covariance.
    pub total_variance: f64,
}

impl PcaResult {
    pub fn explained_variance_fraction(&self) -> f64 {
        self.eigenvalues.iter().sum::<f64>() / self.total_variance
    }

    /// `basis · reduced + row_means`
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut x = &self.basis * &self.reduced;
        for (r, m) in self.row_means.iter().enumerate() {
            x.row_mut(r).add_scalar_mut(*m);
        }
        x
    }
}

/// Reduces `x` (`rows × V`, observations along columns) to its top `k`
/// principal directions. The covariance is the `rows × rows` matrix
/// `Xc·Xcᵀ / V` of the row-centred data.
pub fn pca_reduce(x: &DMatrix<f64>, k: usize) -> Result<PcaResult> {
    let (rows, v) = x.shape();
    if k == 0 {
        return Err(IcaError::InvalidInput("model order must be >= 1".into()));
    }
    if k > rows.min(v) {
        return Err(IcaError::RankDeficient {
            requested: k,
            available: rows.min(v),
        });
    }
    let vf = v as f64;
    let means = DVector::from_iterator(rows, x.row_iter().map(|r| r.sum() / vf));
    let gram = x * x.transpose();
    let cov = (gram - &means * means.transpose() * vf) / vf;
    let cov = (&cov + cov.transpose()) * 0.5;
    let total_variance = cov.trace();

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let available = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > EIGEN_FLOOR)
        .count();
    if available < k {
        return Err(IcaError::RankDeficient {
            requested: k,
            available,
        });
    }

    let eigenvalues: Vec<f64> = order[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(rows, k);
    for (c, &i) in order[..k].iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        // sign convention: largest-magnitude entry positive
        let (imax, _) = col
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (j, &e)| if e.abs() > acc.1 { (j, e.abs()) } else { acc });
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(c, &col);
    }

    // reduced = Λ^{-1/2} Uᵀ (X - m 1ᵀ)
    let mut proj = vectors.transpose();
    for (r, lam) in eigenvalues.iter().enumerate() {
        proj.row_mut(r).scale_mut(1.0 / lam.sqrt());
    }
    let shift = &proj * &means;
    let mut reduced = &proj * x;
    for (r, s) in shift.iter().enumerate() {
        reduced.row_mut(r).add_scalar_mut(-s);
    }
    let mut basis = vectors;
    for (c, lam) in eigenvalues.iter().enumerate() {
        basis.column_mut(c).scale_mut(lam.sqrt());
    }
    Ok(PcaResult {
        reduced,
        basis,
        eigenvalues,
        row_means: means.iter().copied().collect(),
        total_variance,
    })
}
