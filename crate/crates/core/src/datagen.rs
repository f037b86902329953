//! Hidden Markov model trajectory generators with nonlinear observation
//! warps, plus exact relaxation timescales of the hidden chain.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::eigenvalues_general;
use crate::stats::TimeSeries;

/// Observation warp applied after Gaussian emission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Warp {
    None,
    Sqrt,
    Swissroll,
}

/// A hidden Markov chain with 2D Gaussian emissions and an optional warp.
#[derive(Debug, Clone)]
pub struct HmmSpec {
    pub transition: Array2<f64>,
    /// One 2D emission mean per state.
    pub emission_means: Array2<f64>,
    /// One 2x2 PSD emission covariance per state.
    pub emission_covs: Vec<Array2<f64>>,
    pub initial: Array1<f64>,
    pub warp: Warp,
}

/// Sampled chain: warped observations plus the hidden state labels.
#[derive(Debug, Clone)]
pub struct LabeledTrajectory {
    pub observations: TimeSeries,
    pub hidden: Vec<usize>,
}

impl HmmSpec {
    pub fn new(
        transition: Array2<f64>,
        emission_means: Array2<f64>,
        emission_covs: Vec<Array2<f64>>,
        initial: Array1<f64>,
        warp: Warp,
    ) -> Result<Self> {
        let s = transition.nrows();
        validate_stochastic(transition.view())?;
        if emission_means.nrows() != s || emission_means.ncols() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "emission means must be {s}x2, got {}x{}",
                emission_means.nrows(),
                emission_means.ncols()
            )));
        }
        if emission_covs.len() != s {
            return Err(Error::ShapeMismatch(format!(
                "need {s} emission covariances, got {}",
                emission_covs.len()
            )));
        }
        for (i, c) in emission_covs.iter().enumerate() {
            if c.dim() != (2, 2) {
                return Err(Error::ShapeMismatch(format!(
                    "emission covariance {i} must be 2x2"
                )));
            }
            let det = c[[0, 0]] * c[[1, 1]] - c[[0, 1]] * c[[1, 0]];
            let asym = (c[[0, 1]] - c[[1, 0]]).abs();
            if c[[0, 0]] < 0.0 || c[[1, 1]] < 0.0 || det < -1e-12 || asym > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "emission covariance {i} is not symmetric PSD"
                )));
            }
        }
        if initial.len() != s {
            return Err(Error::ShapeMismatch(format!(
                "initial distribution must have length {s}"
            )));
        }
        let sum: f64 = initial.iter().sum();
        if initial.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(
                "initial distribution must be nonnegative and sum to 1".into(),
            ));
        }
        Ok(Self {
            transition,
            emission_means,
            emission_covs,
            initial,
            warp,
        })
    }

    pub fn n_states(&self) -> usize {
        self.transition.nrows()
    }

    /// Observation dimension after the warp.
    pub fn observation_dim(&self) -> usize {
        match self.warp {
            Warp::Swissroll => 3,
            _ => 2,
        }
    }
}

fn validate_stochastic(t: ArrayView2<'_, f64>) -> Result<()> {
    let s = t.nrows();
    if s == 0 || t.ncols() != s {
        return Err(Error::NotStochastic(format!(
            "expected a nonempty square matrix, got {}x{}",
            s,
            t.ncols()
        )));
    }
    for i in 0..s {
        let mut sum = 0.0;
        for j in 0..s {
            let p = t[[i, j]];
            if !(p >= 0.0) {
                return Err(Error::NotStochastic(format!(
                    "entry ({i},{j}) = {p} is negative or NaN"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::NotStochastic(format!(
                "row {i} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Sample a discrete Markov chain of the given length.
pub fn sample_chain(
    transition: ArrayView2<'_, f64>,
    initial: &Array1<f64>,
    length: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    validate_stochastic(transition)?;
    if length == 0 {
        return Err(Error::InvalidParameter("chain length must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(length);
    let mut s = sample_categorical(initial.as_slice().unwrap(), &mut rng);
    states.push(s);
    for _ in 1..length {
        s = sample_categorical(transition.row(s).to_slice().unwrap(), &mut rng);
        states.push(s);
    }
    Ok(states)
}

/// Sample hidden states and warped Gaussian emissions, deterministically
/// for a given seed.
pub fn sample_hmm(spec: &HmmSpec, length: usize, seed: u64) -> Result<LabeledTrajectory> {
    if length < 2 {
        return Err(Error::InvalidParameter(
            "trajectory length must be >= 2".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s_count = spec.n_states();

    // Lower Cholesky-like factors, tolerant of semidefinite covariances.
    let mut factors = Vec::with_capacity(s_count);
    for c in &spec.emission_covs {
        let l11 = c[[0, 0]].max(0.0).sqrt();
        let l21 = if l11 > 0.0 { c[[1, 0]] / l11 } else { 0.0 };
        let l22 = (c[[1, 1]] - l21 * l21).max(0.0).sqrt();
        factors.push((l11, l21, l22));
    }

    let mut hidden = Vec::with_capacity(length);
    let mut xy = Array2::<f64>::zeros((length, 2));
    let mut state = sample_categorical(spec.initial.as_slice().unwrap(), &mut rng);
    for t in 0..length {
        if t > 0 {
            state = sample_categorical(spec.transition.row(state).to_slice().unwrap(), &mut rng);
        }
        hidden.push(state);
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        let (l11, l21, l22) = factors[state];
        xy[[t, 0]] = spec.emission_means[[state, 0]] + l11 * e1;
        xy[[t, 1]] = spec.emission_means[[state, 1]] + l21 * e1 + l22 * e2;
    }

    let observations = match spec.warp {
        Warp::None => xy,
        Warp::Sqrt => warp_sqrt(xy.view())?,
        Warp::Swissroll => warp_swissroll(xy.view())?,
    };
    Ok(LabeledTrajectory {
        observations: TimeSeries::new(observations)?,
        hidden,
    })
}

/// Rowwise `(x, y) -> (x, y + sqrt(max(x, 0)))`; negative `x` is clamped
/// before the square root.
pub fn warp_sqrt(xy: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_width(xy, 2, "warp_sqrt")?;
    let mut out = xy.to_owned();
    for mut row in out.rows_mut() {
        row[1] += row[0].max(0.0).sqrt();
    }
    Ok(out)
}

/// Rowwise `(x, y) -> (x cos x, y, x sin x)`.
pub fn warp_swissroll(xy: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_width(xy, 2, "warp_swissroll")?;
    let mut out = Array2::<f64>::zeros((xy.nrows(), 3));
    for (i, row) in xy.rows().into_iter().enumerate() {
        let (x, y) = (row[0], row[1]);
        out[[i, 0]] = x * x.cos();
        out[[i, 1]] = y;
        out[[i, 2]] = x * x.sin();
    }
    Ok(out)
}

fn check_width(a: ArrayView2<'_, f64>, want: usize, what: &str) -> Result<()> {
    if a.ncols() != want {
        return Err(Error::ShapeMismatch(format!(
            "{what} expects {want} columns, got {}",
            a.ncols()
        )));
    }
    Ok(())
}

/// Relaxation timescales `t_i = -1 / ln |lambda_i|` of a row-stochastic
/// matrix at unit lag, skipping the stationary eigenvalue. Eigenvalues on
/// or outside the unit circle map to infinity.
pub fn reference_timescales(transition: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    validate_stochastic(transition)?;
    let eigs = eigenvalues_general(transition)?;
    Ok(eigs
        .iter()
        .skip(1)
        .map(|l| {
            let m = l.norm();
            if m >= 1.0 {
                f64::INFINITY
            } else if m <= 0.0 {
                0.0
            } else {
                -1.0 / m.ln()
            }
        })
        .collect())
}

/// Default two-state benchmark: a slow two-state chain whose states differ
/// along `y`, contaminated through the square-root warp by a wide shared
/// `x` coordinate. The slow process is not linearly recoverable from the
/// warped observations.
pub fn two_state_spec() -> HmmSpec {
    let transition = ndarray::array![[0.99, 0.01], [0.01, 0.99]];
    let emission_means = ndarray::array![[1.0, 1.0], [1.0, -1.0]];
    let cov = ndarray::array![[4.0, 0.0], [0.0, 0.015]];
    HmmSpec::new(
        transition,
        emission_means,
        vec![cov.clone(), cov],
        ndarray::array![0.5, 0.5],
        Warp::Sqrt,
    )
    .expect("default two-state spec is valid")
}

/// Default four-state benchmark: a linear exchange chain embedded on a
/// swissroll spanning nearly a full turn.
///
/// The two chain halves share the same pair of spiral arcs and differ only
/// along `y`, so the slowest exchange is invisible to any projection that
/// discards the low-variance `y` direction.
pub fn four_state_spec() -> HmmSpec {
    let transition = ndarray::array![
        [0.97, 0.03, 0.00, 0.00],
        [0.03, 0.94, 0.03, 0.00],
        [0.00, 0.03, 0.94, 0.03],
        [0.00, 0.00, 0.03, 0.97]
    ];
    let emission_means = ndarray::array![[2.0, 0.0], [8.0, 0.0], [8.0, 2.0], [2.0, 2.0]];
    let var = 0.40 * 0.40;
    let cov = ndarray::array![[var, 0.0], [0.0, var]];
    HmmSpec::new(
        transition,
        emission_means,
        vec![cov.clone(), cov.clone(), cov.clone(), cov],
        ndarray::array![0.25, 0.25, 0.25, 0.25],
        Warp::Swissroll,
    )
    .expect("default four-state spec is valid")
}
