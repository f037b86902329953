//! Method comparison: whitened reconstruction error, canonical correlation
//! against reference signals, and the repeated train/validate/MSM protocol
//! with median and 68% percentile aggregation.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{reference_timescales, sample_hmm, HmmSpec};
use crate::error::{Error, Result};
use crate::linear::{fit_pca_rows, fit_tcca_pairs, fit_tica_pairs};
use crate::model::Model;
use crate::msm::{its_curve, kmeans, ItsRow};
use crate::neural::{train_tae, MlpSpec, TrainConfig};
use crate::numerics::{inv_sqrt_truncated, svd};
use crate::seeds::{derive_seed, repetition_seed};
use crate::stats::{
    contiguous_block_split, covariances, make_whitener, raw_lagged_blocks, select_rows,
    LaggedPairs, TimeSeries, Whitener, DEFAULT_REL_TOL,
};

const SALT_DATA: u64 = 0x11;
const SALT_SPLIT: u64 = 0x22;
const SALT_TAE: u64 = 0x33;
const SALT_KMEANS: u64 = 0x44;

/// Canonical correlations between two multivariate signals.
#[derive(Debug, Clone)]
pub struct CcaResult {
    /// Descending, one per retained rank pair.
    pub correlations: Vec<f64>,
    pub d_left: usize,
    pub d_right: usize,
}

/// CCA via truncated whitening of both signals and an SVD of the
/// cross-covariance in whitened coordinates.
pub fn cca(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, rel_tol: f64) -> Result<CcaResult> {
    if a.nrows() != b.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "signals have different lengths: {} vs {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let t = a.nrows();
    if t <= a.ncols() + b.ncols() {
        return Err(Error::InvalidParameter(format!(
            "need more than {} samples for CCA on {}+{} dimensions, got {t}",
            a.ncols() + b.ncols(),
            a.ncols(),
            b.ncols()
        )));
    }
    let am = a.mean_axis(Axis(0)).unwrap();
    let bm = b.mean_axis(Axis(0)).unwrap();
    let ac = &a - &am;
    let bc = &b - &bm;
    let n = t as f64;
    let caa = ac.t().dot(&ac) / n;
    let cbb = bc.t().dot(&bc) / n;
    let cab = ac.t().dot(&bc) / n;
    let (wa, ra) = inv_sqrt_truncated(caa.view(), rel_tol)?;
    let (wb, rb) = inv_sqrt_truncated(cbb.view(), rel_tol)?;
    let k = wa.dot(&cab).dot(&wb);
    let s = svd(k.view())?;
    let keep = ra.min(rb);
    Ok(CcaResult {
        correlations: s.singular_values.iter().take(keep).copied().collect(),
        d_left: a.ncols(),
        d_right: b.ncols(),
    })
}

/// One-hot encoding of discrete states with the last column dropped to
/// remove the constant-sum degeneracy.
pub fn hidden_to_indicators(hidden: &[usize], n_states: usize) -> Result<Array2<f64>> {
    if n_states < 2 {
        return Err(Error::InvalidParameter(
            "indicator encoding needs at least 2 states".into(),
        ));
    }
    let mut out = Array2::<f64>::zeros((hidden.len(), n_states - 1));
    for (t, &s) in hidden.iter().enumerate() {
        if s >= n_states {
            return Err(Error::StateOutOfRange {
                state: s,
                n_states,
            });
        }
        if s < n_states - 1 {
            out[[t, s]] = 1.0;
        }
    }
    Ok(out)
}

/// Scalar CCA score: mean canonical correlation between an encoding and the
/// indicator representation of the hidden states.
pub fn cca_score(
    encoded: ArrayView2<'_, f64>,
    hidden: &[usize],
    n_states: usize,
    rel_tol: f64,
) -> Result<f64> {
    let indicators = hidden_to_indicators(hidden, n_states)?;
    let result = cca(encoded, indicators.view(), rel_tol)?;
    let n = result.correlations.len();
    if n == 0 {
        return Err(Error::RankExceeded {
            requested: 1,
            rank: 0,
        });
    }
    Ok(result.correlations.iter().sum::<f64>() / n as f64)
}

/// Mean squared forecast error in whitened coordinates over validation
/// pairs. The whitener must come from the training-set lagged covariance.
///
/// Lag-0 models (PCA or zero-lag autoencoders) reconstruct their input and
/// are accepted as forecasters at any evaluation lag.
pub fn reconstruction_error(
    model: &dyn Model,
    x_val: ArrayView2<'_, f64>,
    y_val: ArrayView2<'_, f64>,
    whitener: &Whitener,
    lag: usize,
) -> Result<f64> {
    if model.lag() != lag && model.lag() != 0 {
        return Err(Error::LagMismatch {
            model_lag: model.lag(),
            requested_lag: lag,
        });
    }
    if x_val.dim() != y_val.dim() {
        return Err(Error::ShapeMismatch("validation blocks disagree".into()));
    }
    let pred = model.predict(x_val)?;
    let diff = &pred - &y_val;
    let white = diff.dot(&whitener.w);
    Ok(white.iter().map(|v| v * v).sum::<f64>() / x_val.nrows() as f64)
}

/// Linearly interpolated percentile of pre-sorted values, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    }
}

/// Median and 68% band over repetition values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryStats {
    pub median: f64,
    pub p16: f64,
    pub p84: f64,
    pub values: Vec<f64>,
    /// Repetitions that produced no usable value for this cell.
    pub n_missing: usize,
}

impl SummaryStats {
    fn from_values(mut values: Vec<f64>, n_missing: usize) -> Option<Self> {
        values.retain(|v| v.is_finite());
        if values.is_empty() {
            return None;
        }
        let raw = values.clone();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Some(Self {
            median: percentile(&values, 0.5),
            p16: percentile(&values, 0.16),
            p84: percentile(&values, 0.84),
            values: raw,
            n_missing,
        })
    }
}

/// Per-timescale-index aggregate for ITS curves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItsStats {
    /// 1-based index of the timescale (1 = slowest beyond stationary).
    pub index: usize,
    pub median: f64,
    pub p16: f64,
    pub p84: f64,
    pub values: Vec<f64>,
    /// Values flagged invalid or missing across repetitions.
    pub n_invalid: usize,
}

/// Data source for the protocol.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Sample a fresh trajectory from the HMM in every repetition.
    Hmm { spec: HmmSpec, length: usize },
    /// Fixed user-provided trajectories; repetitions reshuffle only the
    /// train/validation split and training randomness.
    Series {
        series: Vec<TimeSeries>,
        hidden: Option<(Vec<Vec<usize>>, usize)>,
    },
}

/// One method entry in a protocol run.
#[derive(Debug, Clone)]
pub struct MethodConfig {
    pub label: String,
    pub kind: MethodKind,
}

#[derive(Debug, Clone)]
pub enum MethodKind {
    Pca {
        dim: usize,
    },
    Tica {
        dim: usize,
        kinetic_map: bool,
    },
    Tcca {
        dim: usize,
    },
    Tae {
        dim: usize,
        hidden: Vec<usize>,
        train: TrainConfig,
    },
}

impl MethodKind {
    pub fn default_label(&self) -> &'static str {
        match self {
            MethodKind::Pca { .. } => "pca",
            MethodKind::Tica { .. } => "tica",
            MethodKind::Tcca { .. } => "tcca",
            MethodKind::Tae { .. } => "tae",
        }
    }
}

/// MSM settings inside the protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MsmProtocolConfig {
    pub k: usize,
    pub lags: Vec<usize>,
    pub n_timescales: usize,
    pub reversible: bool,
    /// Transformation lag whose encodings feed the MSMs; defaults to the
    /// first entry of the protocol lag list.
    pub transform_lag: Option<usize>,
    pub kmeans_max_iter: usize,
}

impl Default for MsmProtocolConfig {
    fn default() -> Self {
        Self {
            k: 50,
            lags: (1..=10).collect(),
            n_timescales: 1,
            reversible: true,
            transform_lag: None,
            kmeans_max_iter: crate::msm::DEFAULT_KMEANS_MAX_ITER,
        }
    }
}

/// Full protocol configuration.
#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub data: DataSource,
    pub methods: Vec<MethodConfig>,
    pub lags: Vec<usize>,
    pub repetitions: usize,
    pub base_seed: u64,
    pub train_fraction: f64,
    pub split_blocks: usize,
    pub rel_tol: f64,
    pub msm: MsmProtocolConfig,
}

impl ProtocolConfig {
    pub fn new(data: DataSource, methods: Vec<MethodConfig>, lags: Vec<usize>) -> Self {
        Self {
            data,
            methods,
            lags,
            repetitions: 20,
            base_seed: 42,
            train_fraction: 2.0 / 3.0,
            split_blocks: 12,
            rel_tol: DEFAULT_REL_TOL,
            msm: MsmProtocolConfig::default(),
        }
    }

    fn transform_lag(&self) -> usize {
        self.msm.transform_lag.unwrap_or(self.lags[0])
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::InvalidParameter("repetitions must be >= 1".into()));
        }
        if self.lags.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidParameter(
                "need at least one lag and one method".into(),
            ));
        }
        if !self.lags.contains(&self.transform_lag()) {
            return Err(Error::InvalidParameter(format!(
                "msm transform lag {} is not in the lag list",
                self.transform_lag()
            )));
        }
        if self.msm.n_timescales == 0 || self.msm.k < 2 {
            return Err(Error::InvalidParameter(
                "msm needs k >= 2 and n_timescales >= 1".into(),
            ));
        }
        if let DataSource::Series { series, hidden } = &self.data {
            if series.is_empty() {
                return Err(Error::InvalidParameter("no input series".into()));
            }
            if let Some((labels, n_states)) = hidden {
                if labels.len() != series.len() {
                    return Err(Error::ShapeMismatch(
                        "one hidden label track per trajectory required".into(),
                    ));
                }
                for (l, s) in labels.iter().zip(series.iter()) {
                    if l.len() != s.len() {
                        return Err(Error::ShapeMismatch(
                            "hidden labels must match trajectory length".into(),
                        ));
                    }
                    if let Some(&bad) = l.iter().find(|&&x| x >= *n_states) {
                        return Err(Error::StateOutOfRange {
                            state: bad,
                            n_states: *n_states,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// A failed cell inside a protocol run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellFailure {
    pub repetition: usize,
    pub method: String,
    pub lag: Option<usize>,
    pub message: String,
}

/// Aggregated protocol results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub methods: Vec<String>,
    pub lags: Vec<usize>,
    pub repetitions: usize,
    pub msm_lags: Vec<usize>,
    pub n_timescales: usize,
    pub transform_lag: usize,
    /// Analytic hidden-chain timescales when the data comes from a
    /// generator; omitted for file-based runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_timescales: Option<Vec<f64>>,
    /// method -> lag -> stats
    pub reconstruction_error: BTreeMap<String, BTreeMap<usize, SummaryStats>>,
    /// method -> lag -> stats
    pub cca_score: BTreeMap<String, BTreeMap<usize, SummaryStats>>,
    /// method -> msm lag -> per-index stats
    pub implied_timescales: BTreeMap<String, BTreeMap<usize, Vec<ItsStats>>>,
    pub failures: Vec<CellFailure>,
}

impl EnsembleSummary {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct CellMetrics {
    recon: f64,
    cca: Option<f64>,
}

struct RepOutcome {
    rep: usize,
    /// (method label, lag) -> metrics
    cells: Vec<(String, usize, Result<CellMetrics>)>,
    /// method label -> ITS rows at the transform lag
    its: Vec<(String, Result<Vec<ItsRow>>)>,
}

/// Run the full evaluation protocol and aggregate across repetitions.
///
/// Every repetition draws (or reuses) data, splits lagged pairs into
/// contiguous blocks shared by all methods, fits each method on the
/// training side, scores the whitened forecast error on validation,
/// whitens the full-series encodings, compares them to the hidden
/// reference by CCA, and builds MSMs on the encoded space.
pub fn run_protocol(cfg: &ProtocolConfig) -> Result<EnsembleSummary> {
    cfg.validate()?;

    let reference = match &cfg.data {
        DataSource::Hmm { spec, .. } => {
            Some(reference_timescales(spec.transition.view())?)
        }
        DataSource::Series { .. } => None,
    };

    let outcomes: Vec<RepOutcome> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| run_repetition(cfg, rep))
        .collect();

    Ok(aggregate(cfg, outcomes, reference))
}

fn run_repetition(cfg: &ProtocolConfig, rep: usize) -> RepOutcome {
    let rep_seed = repetition_seed(cfg.base_seed, rep);
    let mut cells = Vec::new();
    let mut its = Vec::new();

    // Step 1: gather data and reference labels.
    let (series_list, hidden): (Vec<TimeSeries>, Option<(Vec<Vec<usize>>, usize)>) =
        match &cfg.data {
            DataSource::Hmm { spec, length } => {
                match sample_hmm(spec, *length, derive_seed(rep_seed, SALT_DATA)) {
                    Ok(traj) => (
                        vec![traj.observations],
                        Some((vec![traj.hidden], spec.n_states())),
                    ),
                    Err(e) => {
                        for m in &cfg.methods {
                            for &lag in &cfg.lags {
                                cells.push((
                                    m.label.clone(),
                                    lag,
                                    Err(Error::Data(format!("data generation failed: {e}"))),
                                ));
                            }
                        }
                        return RepOutcome { rep, cells, its };
                    }
                }
            }
            DataSource::Series { series, hidden } => (series.clone(), hidden.clone()),
        };

    let split_seed = derive_seed(rep_seed, SALT_SPLIT);
    let transform_lag = cfg.transform_lag();

    for &lag in &cfg.lags {
        let prepared = prepare_lag(cfg, &series_list, lag, split_seed);
        let (train_pairs, x_val, y_val, whitener) = match prepared {
            Ok(p) => p,
            Err(e) => {
                for m in &cfg.methods {
                    cells.push((m.label.clone(), lag, Err(e_clone(&e))));
                }
                continue;
            }
        };

        for (mi, method) in cfg.methods.iter().enumerate() {
            let fitted = fit_method(cfg, method, mi, &series_list, &train_pairs, lag, rep_seed, split_seed);
            let model = match fitted {
                Ok(m) => m,
                Err(e) => {
                    cells.push((method.label.clone(), lag, Err(e)));
                    continue;
                }
            };

            let metrics = evaluate_model(
                cfg,
                model.as_ref(),
                &series_list,
                &hidden,
                x_val.view(),
                y_val.view(),
                &whitener,
                lag,
            );

            // Step 6: MSMs on the encoded space at the transform lag.
            if lag == transform_lag {
                let its_result = msm_on_encoding(
                    cfg,
                    model.as_ref(),
                    &series_list,
                    derive_seed(rep_seed, SALT_KMEANS.wrapping_add(mi as u64)),
                );
                its.push((method.label.clone(), its_result));
            }

            cells.push((method.label.clone(), lag, metrics));
        }
    }

    RepOutcome { rep, cells, its }
}

type PreparedLag = (LaggedPairs, Array2<f64>, Array2<f64>, Whitener);

/// Step 2 groundwork: shared split, training pairs, and the training-set
/// whitener for the lagged block.
fn prepare_lag(
    cfg: &ProtocolConfig,
    series_list: &[TimeSeries],
    lag: usize,
    split_seed: u64,
) -> Result<PreparedLag> {
    let (x_raw, y_raw) = raw_lagged_blocks(series_list, lag)?;
    let (train_idx, val_idx) =
        contiguous_block_split(x_raw.nrows(), cfg.train_fraction, cfg.split_blocks, split_seed)?;
    if val_idx.is_empty() {
        return Err(Error::InvalidParameter(
            "too few pairs for a validation split".into(),
        ));
    }
    let x_train = select_rows(x_raw.view(), &train_idx);
    let y_train = select_rows(y_raw.view(), &train_idx);
    let x_val = select_rows(x_raw.view(), &val_idx);
    let y_val = select_rows(y_raw.view(), &val_idx);
    let train_pairs = LaggedPairs::from_raw(x_train.view(), y_train.view(), lag)?;
    let covs = covariances(&train_pairs);
    let whitener = make_whitener(covs.ctt.view(), train_pairs.mean_y.clone(), cfg.rel_tol)?;
    Ok((train_pairs, x_val, y_val, whitener))
}

#[allow(clippy::too_many_arguments)]
fn fit_method(
    cfg: &ProtocolConfig,
    method: &MethodConfig,
    method_idx: usize,
    series_list: &[TimeSeries],
    train_pairs: &LaggedPairs,
    lag: usize,
    rep_seed: u64,
    split_seed: u64,
) -> Result<Box<dyn Model>> {
    match &method.kind {
        MethodKind::Pca { dim } => {
            // PCA ignores the lag; fit on the training-side frames.
            let mut raw = train_pairs.x.clone();
            raw += &train_pairs.mean_x;
            Ok(Box::new(fit_pca_rows(raw.view(), *dim)?))
        }
        MethodKind::Tica { dim, kinetic_map } => Ok(Box::new(fit_tica_pairs(
            train_pairs,
            *dim,
            *kinetic_map,
            cfg.rel_tol,
        )?)),
        MethodKind::Tcca { dim } => {
            Ok(Box::new(fit_tcca_pairs(train_pairs, *dim, cfg.rel_tol)?))
        }
        MethodKind::Tae { dim, hidden, train } => {
            let input_dim = series_list[0].dim();
            let spec = MlpSpec::new(input_dim, hidden.clone(), *dim)?;
            let mut tae_cfg = train.clone();
            // Share the protocol split so all methods see the same pairs.
            tae_cfg.shuffle_seed = Some(split_seed);
            tae_cfg.train_fraction = cfg.train_fraction;
            tae_cfg.split_blocks = cfg.split_blocks;
            let seed = derive_seed(rep_seed, SALT_TAE.wrapping_add(method_idx as u64));
            Ok(Box::new(train_tae(series_list, lag, &spec, &tae_cfg, seed)?))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate_model(
    cfg: &ProtocolConfig,
    model: &dyn Model,
    series_list: &[TimeSeries],
    hidden: &Option<(Vec<Vec<usize>>, usize)>,
    x_val: ArrayView2<'_, f64>,
    y_val: ArrayView2<'_, f64>,
    whitener: &Whitener,
    lag: usize,
) -> Result<CellMetrics> {
    // Step 3: validation forecast error in whitened coordinates.
    let recon = reconstruction_error(model, x_val, y_val, whitener, lag)?;

    // Steps 4-5: encode everything, whiten, compare to the reference.
    let cca = match hidden {
        None => None,
        Some((labels, n_states)) => {
            let encoded = encode_whitened(model, series_list, cfg.rel_tol)?;
            let pooled_labels: Vec<usize> =
                labels.iter().flat_map(|l| l.iter().copied()).collect();
            let pooled = pool(&encoded);
            Some(cca_score(pooled.view(), &pooled_labels, *n_states, cfg.rel_tol)?)
        }
    };

    Ok(CellMetrics { recon, cca })
}

/// Encode each trajectory and whiten with the pooled lag-0 statistics.
fn encode_whitened(
    model: &dyn Model,
    series_list: &[TimeSeries],
    rel_tol: f64,
) -> Result<Vec<Array2<f64>>> {
    let encoded: Vec<Array2<f64>> = series_list
        .iter()
        .map(|s| model.encode(s.data()))
        .collect::<Result<_>>()?;
    let pooled = pool(&encoded);
    let pairs = LaggedPairs::from_raw(pooled.view(), pooled.view(), 0)?;
    let covs = covariances(&pairs);
    let wh = make_whitener(covs.c00.view(), pairs.mean_x.clone(), rel_tol)?;
    encoded
        .iter()
        .map(|e| crate::stats::apply_whitener(&wh, e.view()))
        .collect()
}

fn pool(blocks: &[Array2<f64>]) -> Array2<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks[0].ncols();
    let mut out = Array2::<f64>::zeros((rows, cols));
    let mut at = 0;
    for b in blocks {
        out.slice_mut(ndarray::s![at..at + b.nrows(), ..]).assign(b);
        at += b.nrows();
    }
    out
}

fn msm_on_encoding(
    cfg: &ProtocolConfig,
    model: &dyn Model,
    series_list: &[TimeSeries],
    seed: u64,
) -> Result<Vec<ItsRow>> {
    let encoded = encode_whitened(model, series_list, cfg.rel_tol)?;
    let pooled = pool(&encoded);
    let disc = kmeans(pooled.view(), cfg.msm.k, seed, cfg.msm.kmeans_max_iter)?;

    // Split assignments back per trajectory so counting never crosses
    // boundaries.
    let mut dtrajs: Vec<Vec<usize>> = Vec::with_capacity(encoded.len());
    let mut at = 0usize;
    for e in &encoded {
        dtrajs.push(disc.assignments[at..at + e.nrows()].to_vec());
        at += e.nrows();
    }
    let refs: Vec<&[usize]> = dtrajs.iter().map(|d| d.as_slice()).collect();
    Ok(its_curve(
        &refs,
        cfg.msm.k,
        &cfg.msm.lags,
        cfg.msm.n_timescales,
        cfg.msm.reversible,
    ))
}

fn e_clone(e: &Error) -> Error {
    Error::Data(e.to_string())
}

fn aggregate(
    cfg: &ProtocolConfig,
    outcomes: Vec<RepOutcome>,
    reference: Option<Vec<f64>>,
) -> EnsembleSummary {
    let mut recon: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    let mut cca: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    let mut missing: BTreeMap<(String, usize), usize> = BTreeMap::new();
    let mut its_values: BTreeMap<String, BTreeMap<usize, Vec<Vec<f64>>>> = BTreeMap::new();
    let mut its_invalid: BTreeMap<String, BTreeMap<usize, Vec<usize>>> = BTreeMap::new();
    let mut failures = Vec::new();

    let n_ts = cfg.msm.n_timescales;
    for outcome in &outcomes {
        for (method, lag, result) in &outcome.cells {
            match result {
                Ok(metrics) => {
                    recon
                        .entry(method.clone())
                        .or_default()
                        .entry(*lag)
                        .or_default()
                        .push(metrics.recon);
                    if let Some(score) = metrics.cca {
                        cca.entry(method.clone())
                            .or_default()
                            .entry(*lag)
                            .or_default()
                            .push(score);
                    }
                }
                Err(e) => {
                    *missing.entry((method.clone(), *lag)).or_default() += 1;
                    failures.push(CellFailure {
                        repetition: outcome.rep,
                        method: method.clone(),
                        lag: Some(*lag),
                        message: e.to_string(),
                    });
                }
            }
        }
        for (method, result) in &outcome.its {
            match result {
                Ok(rows) => {
                    for row in rows {
                        let values = its_values
                            .entry(method.clone())
                            .or_default()
                            .entry(row.lag)
                            .or_insert_with(|| vec![Vec::new(); n_ts]);
                        let invalid = its_invalid
                            .entry(method.clone())
                            .or_default()
                            .entry(row.lag)
                            .or_insert_with(|| vec![0usize; n_ts]);
                        match &row.timescales {
                            Some(points) => {
                                for (i, p) in points.iter().enumerate() {
                                    if p.valid && p.timescale.is_finite() {
                                        values[i].push(p.timescale);
                                    } else {
                                        invalid[i] += 1;
                                    }
                                }
                            }
                            None => {
                                for i in 0..n_ts {
                                    invalid[i] += 1;
                                }
                            }
                        }
                    }
                }
                Err(e) => {
                    failures.push(CellFailure {
                        repetition: outcome.rep,
                        method: method.clone(),
                        lag: None,
                        message: format!("msm: {e}"),
                    });
                }
            }
        }
    }

    let stats_of = |m: BTreeMap<String, BTreeMap<usize, Vec<f64>>>| {
        let mut out: BTreeMap<String, BTreeMap<usize, SummaryStats>> = BTreeMap::new();
        for (method, lags) in m {
            for (lag, values) in lags {
                let n_missing = missing.get(&(method.clone(), lag)).copied().unwrap_or(0);
                if let Some(stats) = SummaryStats::from_values(values, n_missing) {
                    out.entry(method.clone()).or_default().insert(lag, stats);
                }
            }
        }
        out
    };

    let mut its_stats: BTreeMap<String, BTreeMap<usize, Vec<ItsStats>>> = BTreeMap::new();
    for (method, lags) in its_values {
        for (lag, per_index) in lags {
            let invalid = &its_invalid[&method][&lag];
            let stats: Vec<ItsStats> = per_index
                .into_iter()
                .enumerate()
                .map(|(i, mut values)| {
                    values.retain(|v| v.is_finite());
                    let raw = values.clone();
                    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let (median, p16, p84) = if values.is_empty() {
                        (f64::NAN, f64::NAN, f64::NAN)
                    } else {
                        (
                            percentile(&values, 0.5),
                            percentile(&values, 0.16),
                            percentile(&values, 0.84),
                        )
                    };
                    ItsStats {
                        index: i + 1,
                        median,
                        p16,
                        p84,
                        values: raw,
                        n_invalid: invalid[i],
                    }
                })
                .collect();
            its_stats.entry(method.clone()).or_default().insert(lag, stats);
        }
    }

    EnsembleSummary {
        methods: cfg.methods.iter().map(|m| m.label.clone()).collect(),
        lags: cfg.lags.clone(),
        repetitions: cfg.repetitions,
        msm_lags: cfg.msm.lags.clone(),
        n_timescales: n_ts,
        transform_lag: cfg.transform_lag(),
        reference_timescales: reference,
        reconstruction_error: stats_of(recon),
        cca_score: stats_of(cca),
        implied_timescales: its_stats,
        failures,
    }
}
