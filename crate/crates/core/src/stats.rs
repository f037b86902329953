//! Mean-free time-lagged data pairs, covariance estimation, and whitening.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics;

/// Default relative eigenvalue cutoff used for rank truncation everywhere.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

/// A uniformly sampled multivariate time series (`T` frames by `N`
/// dimensions).
#[derive(Debug, Clone)]
pub struct TimeSeries {
    data: Array2<f64>,
    dt: f64,
}

impl TimeSeries {
    /// Wrap a `T x N` matrix with a unit time step.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        Self::with_dt(data, 1.0)
    }

    pub fn with_dt(data: Array2<f64>, dt: f64) -> Result<Self> {
        if data.nrows() < 2 || data.ncols() < 1 {
            return Err(Error::ShapeMismatch(format!(
                "time series needs T >= 2 and N >= 1, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("time series".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "time step must be positive and finite, got {dt}"
            )));
        }
        Ok(Self { data, dt })
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }
}

/// Mean-free instantaneous/lagged data blocks at a fixed lag.
///
/// `x` rows are `z_t - mean(z_1..z_{T-lag})` and `y` rows are
/// `z_{t+lag} - mean(z_{1+lag}..z_T)`; the two empirical means are kept.
#[derive(Debug, Clone)]
pub struct LaggedPairs {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub mean_x: Array1<f64>,
    pub mean_y: Array1<f64>,
    pub lag: usize,
}

impl LaggedPairs {
    /// Center raw instantaneous/lagged blocks with their own means.
    pub fn from_raw(x_raw: ArrayView2<'_, f64>, y_raw: ArrayView2<'_, f64>, lag: usize) -> Result<Self> {
        if x_raw.dim() != y_raw.dim() {
            return Err(Error::ShapeMismatch(format!(
                "paired blocks disagree: {:?} vs {:?}",
                x_raw.dim(),
                y_raw.dim()
            )));
        }
        if x_raw.nrows() == 0 || x_raw.ncols() == 0 {
            return Err(Error::ShapeMismatch("empty pair block".into()));
        }
        let mean_x = x_raw.mean_axis(Axis(0)).unwrap();
        let mean_y = y_raw.mean_axis(Axis(0)).unwrap();
        let x = &x_raw - &mean_x;
        let y = &y_raw - &mean_y;
        Ok(Self {
            x,
            y,
            mean_x,
            mean_y,
            lag,
        })
    }

    pub fn n_pairs(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}

/// The three covariance matrices at a fixed lag, normalized by the pair
/// count `T - lag`.
#[derive(Debug, Clone)]
pub struct CovarianceSet {
    pub c00: Array2<f64>,
    pub c0t: Array2<f64>,
    pub ctt: Array2<f64>,
    pub lag: usize,
    pub n_pairs: usize,
}

/// Whitening transform: `w` maps mean-free data to identity covariance on
/// the retained rank, `w_inv` undoes it up to the rank projection.
#[derive(Debug, Clone)]
pub struct Whitener {
    pub mean: Array1<f64>,
    pub w: Array2<f64>,
    pub w_inv: Array2<f64>,
    pub rank: usize,
}

/// Raw (uncentered) instantaneous and lagged blocks, pooled over
/// trajectories; pairs never cross a trajectory boundary.
pub fn raw_lagged_blocks(
    series: &[TimeSeries],
    lag: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if series.is_empty() {
        return Err(Error::ShapeMismatch("no trajectories given".into()));
    }
    let dim = series[0].dim();
    let mut n_pairs = 0usize;
    for s in series {
        if s.dim() != dim {
            return Err(Error::ShapeMismatch(format!(
                "trajectory dimensions disagree: {} vs {}",
                s.dim(),
                dim
            )));
        }
        if lag >= s.len() {
            return Err(Error::LagOutOfRange { lag, len: s.len() });
        }
        n_pairs += s.len() - lag;
    }
    let mut x = Array2::<f64>::zeros((n_pairs, dim));
    let mut y = Array2::<f64>::zeros((n_pairs, dim));
    let mut row = 0;
    for s in series {
        let t = s.len();
        let k = t - lag;
        x.slice_mut(ndarray::s![row..row + k, ..])
            .assign(&s.data().slice(ndarray::s![..k, ..]));
        y.slice_mut(ndarray::s![row..row + k, ..])
            .assign(&s.data().slice(ndarray::s![lag.., ..]));
        row += k;
    }
    Ok((x, y))
}

/// Mean-free lagged pairs for a single trajectory.
pub fn lagged_pairs(series: &TimeSeries, lag: usize) -> Result<LaggedPairs> {
    lagged_pairs_multi(std::slice::from_ref(series), lag)
}

/// Mean-free lagged pairs pooled over several trajectories.
pub fn lagged_pairs_multi(series: &[TimeSeries], lag: usize) -> Result<LaggedPairs> {
    let (x_raw, y_raw) = raw_lagged_blocks(series, lag)?;
    LaggedPairs::from_raw(x_raw.view(), y_raw.view(), lag)
}

/// Estimate `C00`, `C0t`, `Ctt` from mean-free pairs with `1/(T - lag)`
/// normalization. `C00` and `Ctt` are symmetrized exactly.
pub fn covariances(pairs: &LaggedPairs) -> CovarianceSet {
    let n = pairs.n_pairs() as f64;
    let c00 = pairs.x.t().dot(&pairs.x) / n;
    let c0t = pairs.x.t().dot(&pairs.y) / n;
    let ctt = pairs.y.t().dot(&pairs.y) / n;
    CovarianceSet {
        c00: symmetrize(c00),
        c0t,
        ctt: symmetrize(ctt),
        lag: pairs.lag,
        n_pairs: pairs.n_pairs(),
    }
}

fn symmetrize(mut a: Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
    a
}

/// Build a whitener from a covariance matrix and the matching mean.
///
/// `w` and `w_inv` come from a single eigendecomposition so both sides use
/// the identical truncation set.
pub fn make_whitener(c: ArrayView2<'_, f64>, mean: Array1<f64>, rel_tol: f64) -> Result<Whitener> {
    if c.nrows() != mean.len() {
        return Err(Error::ShapeMismatch(format!(
            "covariance is {}x{} but mean has length {}",
            c.nrows(),
            c.ncols(),
            mean.len()
        )));
    }
    let (w, w_inv, rank) = numerics::sqrt_pair(c, rel_tol)?;
    Ok(Whitener {
        mean,
        w,
        w_inv,
        rank,
    })
}

/// Apply the whitening transform row-wise: `W (z - mean)`.
pub fn apply_whitener(wh: &Whitener, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_width(wh, data)?;
    let centered = &data - &wh.mean;
    // w is symmetric, so right-multiplying rows by w equals W (z - mean).
    Ok(centered.dot(&wh.w))
}

/// Invert the whitening transform: `W^{1/2}-side inverse plus the mean`.
pub fn unapply_whitener(wh: &Whitener, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_width(wh, data)?;
    Ok(data.dot(&wh.w_inv) + &wh.mean)
}

fn check_width(wh: &Whitener, data: ArrayView2<'_, f64>) -> Result<()> {
    if data.ncols() != wh.mean.len() {
        return Err(Error::ShapeMismatch(format!(
            "whitener is {}-dimensional but data has {} columns",
            wh.mean.len(),
            data.ncols()
        )));
    }
    Ok(())
}

/// Split `n` pair indices into train/validation sets by contiguous blocks
/// with shuffled block order. Both sides are returned sorted ascending;
/// the validation side is empty only when `n` is too small to split.
pub fn contiguous_block_split(
    n: usize,
    train_fraction: f64,
    n_blocks: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if n == 0 || n_blocks == 0 {
        return Err(Error::InvalidParameter(
            "cannot split an empty pair set".into(),
        ));
    }
    let nb = n_blocks.min(n);
    let mut order: Vec<usize> = (0..nb).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let target = (train_fraction * n as f64).round().max(1.0) as usize;
    let mut train = Vec::with_capacity(n);
    let mut val = Vec::with_capacity(n);
    let mut train_len = 0usize;
    let mut taken = Vec::new();
    for &b in &order {
        let start = b * n / nb;
        let end = (b + 1) * n / nb;
        if train_len < target {
            train.extend(start..end);
            train_len += end - start;
            taken.push(b);
        } else {
            val.extend(start..end);
        }
    }
    if val.is_empty() && taken.len() > 1 {
        // Move the last taken block over so validation is never empty.
        let b = *taken.last().unwrap();
        let start = b * n / nb;
        let end = (b + 1) * n / nb;
        train.retain(|&i| i < start || i >= end);
        val.extend(start..end);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Gather the given rows of a matrix into a new owned matrix.
pub fn select_rows(data: ArrayView2<'_, f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((idx.len(), data.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&data.row(i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::Rng;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn series_1d(values: &[f64]) -> TimeSeries {
        let data = Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap();
        TimeSeries::new(data).unwrap()
    }

    #[test]
    fn rejects_too_short_or_non_finite() {
        assert!(TimeSeries::new(Array2::zeros((1, 2))).is_err());
        let mut bad = Array2::<f64>::zeros((3, 1));
        bad[[0, 0]] = f64::INFINITY;
        assert!(matches!(
            TimeSeries::new(bad),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn lagged_pairs_constant_series() {
        let s = series_1d(&[2.5, 2.5, 2.5, 2.5]);
        let p = lagged_pairs(&s, 2).unwrap();
        assert!(p.x.iter().all(|&v| v == 0.0));
        assert!(p.y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lagged_pairs_arithmetic_sequence() {
        let s = series_1d(&[1.0, 2.0, 3.0, 4.0]);
        let p = lagged_pairs(&s, 1).unwrap();
        assert_eq!(p.n_pairs(), 3);
        assert!((p.mean_x[0] - 2.0).abs() < 1e-15);
        assert!((p.mean_y[0] - 3.0).abs() < 1e-15);
        for (i, want) in [-1.0, 0.0, 1.0].iter().enumerate() {
            assert!((p.x[[i, 0]] - want).abs() < 1e-15);
            assert!((p.y[[i, 0]] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn lagged_pairs_zero_lag_is_identity() {
        let s = series_1d(&[0.3, -1.2, 4.0, 2.2, 0.9]);
        let p = lagged_pairs(&s, 0).unwrap();
        assert_eq!(p.x, p.y);
        assert_eq!(p.mean_x, p.mean_y);
    }

    #[test]
    fn lagged_pairs_rejects_large_lag() {
        let s = series_1d(&[1.0, 2.0]);
        assert!(matches!(
            lagged_pairs(&s, 2),
            Err(Error::LagOutOfRange { .. })
        ));
    }

    #[test]
    fn pairs_never_cross_trajectory_boundaries() {
        let a = series_1d(&[0.0, 1.0, 2.0]);
        let b = series_1d(&[10.0, 11.0]);
        let (x, y) = raw_lagged_blocks(&[a, b], 1).unwrap();
        assert_eq!(x.nrows(), 3);
        assert_eq!(x[[2, 0]], 10.0);
        assert_eq!(y[[2, 0]], 11.0);
    }

    #[test]
    fn covariances_hand_summation() {
        // 1D series (1,2,3,4) at lag 1: all three covariances are 2/3.
        let s = series_1d(&[1.0, 2.0, 3.0, 4.0]);
        let covs = covariances(&lagged_pairs(&s, 1).unwrap());
        assert!((covs.c00[[0, 0]] - 2.0 / 3.0).abs() < 1e-14);
        assert!((covs.c0t[[0, 0]] - 2.0 / 3.0).abs() < 1e-14);
        assert!((covs.ctt[[0, 0]] - 2.0 / 3.0).abs() < 1e-14);
        assert_eq!(covs.n_pairs, 3);
    }

    #[test]
    fn covariances_zero_input() {
        let s = series_1d(&[0.0, 0.0, 0.0]);
        let covs = covariances(&lagged_pairs(&s, 1).unwrap());
        assert!(covs.c00.iter().all(|&v| v == 0.0));
        assert!(covs.c0t.iter().all(|&v| v == 0.0));
        assert!(covs.ctt.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn covariances_iid_noise_law_of_large_numbers() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let t = 100_000;
        let data = Array2::from_shape_fn((t, 2), |_| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let s = TimeSeries::new(data).unwrap();
        let covs = covariances(&lagged_pairs(&s, 1).unwrap());
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((covs.c00[[i, j]] - want).abs() < 0.05);
                assert!(covs.c0t[[i, j]].abs() < 0.05);
            }
        }
    }

    #[test]
    fn covariances_zero_lag_identities() {
        let s = series_1d(&[0.5, -0.7, 1.4, 0.1, -2.0]);
        let covs = covariances(&lagged_pairs(&s, 0).unwrap());
        assert_eq!(covs.c00, covs.c0t);
        assert_eq!(covs.c00, covs.ctt);
    }

    #[test]
    fn covariances_invariant_under_pair_reordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((40, 3), |_| rng.gen_range(-1.0..1.0));
        let y = Array2::from_shape_fn((40, 3), |_| rng.gen_range(-1.0..1.0));
        let pairs = LaggedPairs::from_raw(x.view(), y.view(), 1).unwrap();
        let covs = covariances(&pairs);

        let mut perm: Vec<usize> = (0..40).collect();
        perm.shuffle(&mut rng);
        let xp = select_rows(x.view(), &perm);
        let yp = select_rows(y.view(), &perm);
        let covs_p = covariances(&LaggedPairs::from_raw(xp.view(), yp.view(), 1).unwrap());
        for (a, b) in covs.c0t.iter().zip(covs_p.c0t.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn whitener_identity_covariance() {
        let wh = make_whitener(
            Array2::<f64>::eye(3).view(),
            Array1::zeros(3),
            DEFAULT_REL_TOL,
        )
        .unwrap();
        assert_eq!(wh.rank, 3);
        assert!((&wh.w - &Array2::<f64>::eye(3)).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn whitener_scalar() {
        let c = array![[4.0]];
        let wh = make_whitener(c.view(), array![0.0], DEFAULT_REL_TOL).unwrap();
        assert!((wh.w[[0, 0]] - 0.5).abs() < 1e-12);
        assert!((wh.w_inv[[0, 0]] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn whitened_data_has_identity_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let raw = Array2::from_shape_fn((5000, 3), |_| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        // Correlate the columns through a fixed mixing matrix.
        let mix = array![[1.0, 0.4, 0.0], [0.0, 0.5, 0.2], [0.3, 0.0, 2.0]];
        let data = raw.dot(&mix);
        let pairs = LaggedPairs::from_raw(data.view(), data.view(), 0).unwrap();
        let covs = covariances(&pairs);
        let wh = make_whitener(covs.c00.view(), pairs.mean_x.clone(), DEFAULT_REL_TOL).unwrap();
        let white = apply_whitener(&wh, data.view()).unwrap();
        let cov_w = white.t().dot(&white) / white.nrows() as f64;
        let proj = wh.w.dot(&wh.w_inv);
        for i in 0..3 {
            for j in 0..3 {
                assert!((cov_w[[i, j]] - proj[[i, j]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn whitener_round_trip_and_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = Array2::from_shape_fn((500, 2), |_| rng.gen_range(-2.0..2.0));
        let mean = data.mean_axis(ndarray::Axis(0)).unwrap();
        let centered = &data - &mean;
        let cov = symmetrize(centered.t().dot(&centered) / 500.0);
        let wh = make_whitener(cov.view(), mean, DEFAULT_REL_TOL).unwrap();
        let round = unapply_whitener(&wh, apply_whitener(&wh, data.view()).unwrap().view()).unwrap();
        for (a, b) in round.iter().zip(data.iter()) {
            assert!((a - b).abs() < 1e-9);
        }

        // Rank-deficient case: the round trip projects onto the retained
        // subspace of the centered data.
        let mut defic = Array2::<f64>::zeros((100, 2));
        for i in 0..100 {
            let v = i as f64 / 50.0 - 1.0;
            defic[[i, 0]] = v;
            defic[[i, 1]] = 2.0 * v;
        }
        let cov_d = symmetrize(defic.t().dot(&defic) / 100.0);
        let wh_d = make_whitener(cov_d.view(), Array1::zeros(2), DEFAULT_REL_TOL).unwrap();
        assert_eq!(wh_d.rank, 1);
        let round_d =
            unapply_whitener(&wh_d, apply_whitener(&wh_d, defic.view()).unwrap().view()).unwrap();
        let proj = wh_d.w_inv.dot(&wh_d.w);
        let expect = defic.dot(&proj);
        for (a, b) in round_d.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn whitener_zero_input_maps_to_minus_w_mean() {
        let c = array![[4.0]];
        let wh = make_whitener(c.view(), array![3.0], DEFAULT_REL_TOL).unwrap();
        let z = Array2::<f64>::zeros((1, 1));
        let out = apply_whitener(&wh, z.view()).unwrap();
        assert!((out[[0, 0]] + 0.5 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn block_split_is_deterministic_and_partitions() {
        let (tr, va) = contiguous_block_split(100, 2.0 / 3.0, 12, 7).unwrap();
        let (tr2, va2) = contiguous_block_split(100, 2.0 / 3.0, 12, 7).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(va, va2);
        let mut all: Vec<usize> = tr.iter().chain(va.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let frac = tr.len() as f64 / 100.0;
        assert!((frac - 2.0 / 3.0).abs() < 0.1, "train fraction {frac}");
    }

    #[test]
    fn block_split_small_inputs_keep_validation_nonempty() {
        let (tr, va) = contiguous_block_split(3, 2.0 / 3.0, 12, 0).unwrap();
        assert!(!tr.is_empty());
        assert!(!va.is_empty());
        assert_eq!(tr.len() + va.len(), 3);
    }
}
