//! Closed-form linear encoders: PCA, TICA with kinetic-map scaling, and
//! TCCA via the rank-d SVD of the half-weighted Koopman matrix.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, sqrt_pair, sym_eig};
use crate::stats::{covariances, lagged_pairs_multi, CovarianceSet, LaggedPairs, TimeSeries};

/// Which closed-form estimator produced a [`LinearEncoderDecoder`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearMethod {
    Pca,
    Tica,
    Tcca,
}

impl std::fmt::Display for LinearMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LinearMethod::Pca => write!(f, "pca"),
            LinearMethod::Tica => write!(f, "tica"),
            LinearMethod::Tcca => write!(f, "tcca"),
        }
    }
}

/// A fitted linear encoder/decoder pair.
///
/// `encode` applies `E (z - mean_in)`; `predict` applies
/// `D E (z - mean_in) + mean_out`, which is the lag forecast for TICA/TCCA
/// and the reconstruction for PCA. `singular_values` are canonical
/// correlations for TICA/TCCA (clipped to be nonnegative for reporting)
/// and standard deviations for PCA.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearEncoderDecoder {
    pub method: LinearMethod,
    pub lag: usize,
    #[serde(with = "crate::io::serde_mat")]
    pub encoder: Array2<f64>,
    #[serde(with = "crate::io::serde_mat")]
    pub decoder: Array2<f64>,
    pub singular_values: Vec<f64>,
    #[serde(with = "crate::io::serde_vec")]
    pub mean_in: Array1<f64>,
    #[serde(with = "crate::io::serde_vec")]
    pub mean_out: Array1<f64>,
}

impl LinearEncoderDecoder {
    pub fn latent_dim(&self) -> usize {
        self.encoder.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.ncols()
    }

    fn check_width(&self, data: ArrayView2<'_, f64>) -> Result<()> {
        if data.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} columns, data has {}",
                self.input_dim(),
                data.ncols()
            )));
        }
        Ok(())
    }

    /// Project data into the latent space: `E (z - mean_in)` per row.
    pub fn encode(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_width(data)?;
        let centered = &data - &self.mean_in;
        Ok(centered.dot(&self.encoder.t()))
    }

    /// Forecast (TICA/TCCA) or reconstruct (PCA) in the input space.
    pub fn predict(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let latent = self.encode(data)?;
        Ok(latent.dot(&self.decoder.t()) + &self.mean_out)
    }
}

/// Full-rank Koopman matrix `K^T = C00^+ C0t` with the pseudo-inverse
/// restricted to the retained rank.
pub fn koopman_matrix(covs: &CovarianceSet, rel_tol: f64) -> Result<Array2<f64>> {
    let (w00, _) = numerics::inv_sqrt_truncated(covs.c00.view(), rel_tol)?;
    Ok(w00.dot(&w00).dot(&covs.c0t))
}

/// Half-weighted Koopman matrix `C00^{-1/2} C0t Ctt^{-1/2}` with truncated
/// inverse square roots.
pub fn half_weighted_koopman(covs: &CovarianceSet, rel_tol: f64) -> Result<Array2<f64>> {
    let (w00, _) = numerics::inv_sqrt_truncated(covs.c00.view(), rel_tol)?;
    let (wtt, _) = numerics::inv_sqrt_truncated(covs.ctt.view(), rel_tol)?;
    Ok(w00.dot(&covs.c0t).dot(&wtt))
}

/// TCCA on a single trajectory.
pub fn fit_tcca(
    series: &TimeSeries,
    lag: usize,
    dim: usize,
    rel_tol: f64,
) -> Result<LinearEncoderDecoder> {
    fit_tcca_pairs(&lagged_pairs_multi(std::slice::from_ref(series), lag)?, dim, rel_tol)
}

/// TCCA from prepared mean-free pairs.
///
/// The encoder/decoder come from the rank-d SVD of the half-weighted
/// Koopman matrix; with `d` equal to the retained rank the composed map
/// `D E` reproduces the full-rank Koopman forecast.
pub fn fit_tcca_pairs(
    pairs: &LaggedPairs,
    dim: usize,
    rel_tol: f64,
) -> Result<LinearEncoderDecoder> {
    let covs = covariances(pairs);
    let (w00, _, r00) = sqrt_pair(covs.c00.view(), rel_tol)?;
    let (wtt, stt, rtt) = sqrt_pair(covs.ctt.view(), rel_tol)?;
    let rank = r00.min(rtt);
    check_dim(dim, rank)?;

    let k_half = w00.dot(&covs.c0t).dot(&wtt);
    let svd = numerics::svd(k_half.view())?;

    // Left singular vectors live on the instantaneous (C00) side, right
    // singular vectors on the lagged (Ctt) side.
    let u_d = svd.u.slice(ndarray::s![.., ..dim]);
    let vt_d = svd.vt.slice(ndarray::s![..dim, ..]);
    let sigma: Vec<f64> = svd.singular_values.iter().take(dim).copied().collect();

    let mut encoder = u_d.t().dot(&w00);
    for (i, &s) in sigma.iter().enumerate() {
        encoder.row_mut(i).mapv_inplace(|v| v * s);
    }
    let decoder = stt.dot(&vt_d.t());

    Ok(LinearEncoderDecoder {
        method: LinearMethod::Tcca,
        lag: pairs.lag,
        encoder,
        decoder,
        singular_values: sigma,
        mean_in: pairs.mean_x.clone(),
        mean_out: pairs.mean_y.clone(),
    })
}

/// TICA on a single trajectory with symmetrized covariance estimation.
pub fn fit_tica(
    series: &TimeSeries,
    lag: usize,
    dim: usize,
    kinetic_map: bool,
    rel_tol: f64,
) -> Result<LinearEncoderDecoder> {
    fit_tica_pairs(
        &lagged_pairs_multi(std::slice::from_ref(series), lag)?,
        dim,
        kinetic_map,
        rel_tol,
    )
}

/// TICA from prepared mean-free pairs.
///
/// Covariances are symmetrized (`(C00 + Ctt)/2`, `(C0t + C0t^T)/2`) so the
/// whitened matrix has a real eigendecomposition. With `kinetic_map` the
/// eigenvalue scaling sits in the encoder, otherwise in the decoder; the
/// composed forecast map is identical either way.
pub fn fit_tica_pairs(
    pairs: &LaggedPairs,
    dim: usize,
    kinetic_map: bool,
    rel_tol: f64,
) -> Result<LinearEncoderDecoder> {
    let covs = covariances(pairs);
    let c00_bar = 0.5 * (&covs.c00 + &covs.ctt);
    let c0t_bar = 0.5 * (&covs.c0t + &covs.c0t.t());
    let (w, s, rank) = sqrt_pair(c00_bar.view(), rel_tol)?;
    check_dim(dim, rank)?;

    let mut m = w.dot(&c0t_bar).dot(&w);
    // The triple product is symmetric only up to round-off.
    let mt = m.t().to_owned();
    m = 0.5 * (&m + &mt);
    let eig = sym_eig(m.view())?;

    let u_d = eig.eigenvectors.slice(ndarray::s![.., ..dim]);
    let lambdas: Vec<f64> = eig.eigenvalues.iter().take(dim).copied().collect();

    let base = u_d.t().dot(&w);
    let (encoder, decoder) = if kinetic_map {
        let mut enc = base;
        for (i, &l) in lambdas.iter().enumerate() {
            enc.row_mut(i).mapv_inplace(|v| v * l);
        }
        (enc, s.dot(&u_d))
    } else {
        let mut dec = s.dot(&u_d);
        for (j, &l) in lambdas.iter().enumerate() {
            dec.column_mut(j).mapv_inplace(|v| v * l);
        }
        (base, dec)
    };

    // Eigenvalues are clipped for reporting only; the raw values stay in
    // the encoder/decoder scaling above.
    let singular_values = lambdas.iter().map(|&l| l.max(0.0)).collect();

    Ok(LinearEncoderDecoder {
        method: LinearMethod::Tica,
        lag: pairs.lag,
        encoder,
        decoder,
        singular_values,
        mean_in: pairs.mean_x.clone(),
        mean_out: pairs.mean_y.clone(),
    })
}

/// PCA of a whole series: top-d eigenvectors of the lag-0 covariance.
pub fn fit_pca(series: &TimeSeries, dim: usize) -> Result<LinearEncoderDecoder> {
    fit_pca_rows(series.data(), dim)
}

/// PCA from raw data rows (centered internally).
pub fn fit_pca_rows(data: ArrayView2<'_, f64>, dim: usize) -> Result<LinearEncoderDecoder> {
    let pairs = LaggedPairs::from_raw(data, data, 0)?;
    let covs = covariances(&pairs);
    let n = covs.c00.nrows();
    check_dim(dim, n)?;
    let eig = sym_eig(covs.c00.view())?;

    let v_d = eig.eigenvectors.slice(ndarray::s![.., ..dim]);
    let encoder = v_d.t().to_owned();
    let decoder = v_d.to_owned();
    let singular_values = eig
        .eigenvalues
        .iter()
        .take(dim)
        .map(|&l| l.max(0.0).sqrt())
        .collect();

    Ok(LinearEncoderDecoder {
        method: LinearMethod::Pca,
        lag: 0,
        encoder,
        decoder,
        singular_values,
        mean_in: pairs.mean_x.clone(),
        mean_out: pairs.mean_x,
    })
}

fn check_dim(dim: usize, rank: usize) -> Result<()> {
    if dim == 0 || dim > rank {
        return Err(Error::RankExceeded {
            requested: dim,
            rank,
        });
    }
    Ok(())
}
