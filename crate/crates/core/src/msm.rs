//! Markov state models on encoded coordinates: k-means discretization,
//! count and transition matrices, and implied timescale curves.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView2};
use petgraph::graph::DiGraph;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::eigenvalues_general;

pub const DEFAULT_KMEANS_MAX_ITER: usize = 200;

/// k-means clustering result.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub centers: Array2<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

/// A transition matrix estimated on the largest strongly connected state
/// set of the count graph.
#[derive(Debug, Clone)]
pub struct MsmModel {
    /// Row-stochastic over the active states.
    pub transition: Array2<f64>,
    pub lag: usize,
    /// Active state indices, ascending, mapping rows back to cluster ids.
    pub active_states: Vec<usize>,
    /// Raw (unrestricted) count matrix.
    pub counts: Array2<f64>,
}

/// One implied timescale; `valid` is false in the unresolvable regimes
/// (`t < lag`, or an eigenvalue on/outside the unit circle).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ItsPoint {
    pub timescale: f64,
    pub valid: bool,
}

/// Lloyd iterations with k-means++ seeding.
///
/// Empty clusters are re-seeded from the point farthest from its center;
/// convergence is declared when no center moves more than 1e-8.
pub fn kmeans(
    points: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<Discretization> {
    let n = points.nrows();
    let d = points.ncols();
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if k > n || k > count_distinct(points) {
        return Err(Error::TooManyClusters {
            k,
            distinct: count_distinct(points),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_init(points, k, &mut rng);
    let mut assignments = vec![0usize; n];
    let mut dist2 = vec![0.0f64; n];

    for _ in 0..max_iter {
        assign_nearest(points, centers.view(), &mut assignments, &mut dist2);

        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for j in 0..d {
                sums[[a, j]] += points[[i, j]];
            }
        }
        // Re-seed empty clusters from the globally farthest point.
        for c in 0..k {
            if counts[c] == 0 {
                let far = dist2
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                for j in 0..d {
                    sums[[c, j]] = points[[far, j]];
                }
                counts[c] = 1;
                dist2[far] = 0.0;
            }
        }

        let mut moved = 0.0f64;
        for c in 0..k {
            let inv = 1.0 / counts[c] as f64;
            let mut delta = 0.0;
            for j in 0..d {
                let new = sums[[c, j]] * inv;
                let diff = new - centers[[c, j]];
                delta += diff * diff;
                centers[[c, j]] = new;
            }
            moved = moved.max(delta.sqrt());
        }
        if moved < 1e-8 {
            break;
        }
    }

    assign_nearest(points, centers.view(), &mut assignments, &mut dist2);
    let inertia = dist2.iter().sum();
    Ok(Discretization {
        centers,
        assignments,
        inertia,
    })
}

fn count_distinct(points: ArrayView2<'_, f64>) -> usize {
    let mut seen: HashSet<Vec<u64>> = HashSet::with_capacity(points.nrows());
    for row in points.rows() {
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        seen.insert(key);
    }
    seen.len()
}

fn plus_plus_init<R: Rng>(points: ArrayView2<'_, f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = points.nrows();
    let d = points.ncols();
    let mut centers = Array2::<f64>::zeros((k, d));
    let first = rng.gen_range(0..n);
    centers.row_mut(0).assign(&points.row(first));

    let mut best = vec![f64::INFINITY; n];
    for c in 1..k {
        let prev = centers.row(c - 1);
        let mut total = 0.0;
        for i in 0..n {
            let mut dd = 0.0;
            for j in 0..d {
                let diff = points[[i, j]] - prev[j];
                dd += diff * diff;
            }
            if dd < best[i] {
                best[i] = dd;
            }
            total += best[i];
        }
        let chosen = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for i in 0..n {
                acc += best[i];
                if acc >= target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // All mass sits on existing centers; take the first point that
            // is not one of them yet.
            (0..n)
                .find(|&i| best[i] > 0.0)
                .unwrap_or(rng.gen_range(0..n))
        };
        centers.row_mut(c).assign(&points.row(chosen));
    }
    centers
}

fn assign_nearest(
    points: ArrayView2<'_, f64>,
    centers: ArrayView2<'_, f64>,
    assignments: &mut [usize],
    dist2: &mut [f64],
) {
    let d = points.ncols();
    for (i, row) in points.rows().into_iter().enumerate() {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (c, center) in centers.rows().into_iter().enumerate() {
            let mut dd = 0.0;
            for j in 0..d {
                let diff = row[j] - center[j];
                dd += diff * diff;
            }
            if dd < best_d {
                best_d = dd;
                best = c;
            }
        }
        assignments[i] = best;
        dist2[i] = best_d;
    }
}

/// Sliding-window transition counts at the given lag, never crossing a
/// trajectory boundary.
pub fn count_matrix(dtrajs: &[&[usize]], k: usize, lag: usize) -> Result<Array2<f64>> {
    if lag == 0 {
        return Err(Error::InvalidParameter("MSM lag must be >= 1".into()));
    }
    let mut counts = Array2::<f64>::zeros((k, k));
    let mut any = false;
    for traj in dtrajs {
        for &s in traj.iter() {
            if s >= k {
                return Err(Error::StateOutOfRange { state: s, n_states: k });
            }
        }
        if traj.len() > lag {
            any = true;
            for t in 0..traj.len() - lag {
                counts[[traj[t], traj[t + lag]]] += 1.0;
            }
        }
    }
    if !any {
        return Err(Error::LagOutOfRange {
            lag,
            len: dtrajs.iter().map(|t| t.len()).max().unwrap_or(0),
        });
    }
    Ok(counts)
}

/// Estimate a transition matrix on the largest strongly connected component
/// of the count graph. Reversible mode symmetrizes the counts
/// (`(C + C^T)/2`) before row normalization.
pub fn transition_matrix(counts: &Array2<f64>, lag: usize, reversible: bool) -> Result<MsmModel> {
    let k = counts.nrows();
    if counts.ncols() != k || k == 0 {
        return Err(Error::ShapeMismatch(format!(
            "count matrix must be square and nonempty, got {}x{}",
            k,
            counts.ncols()
        )));
    }
    if counts.iter().any(|&c| c < 0.0 || !c.is_finite()) {
        return Err(Error::Data("counts must be finite and nonnegative".into()));
    }

    let mut graph = DiGraph::<(), ()>::new();
    let nodes: Vec<_> = (0..k).map(|_| graph.add_node(())).collect();
    for i in 0..k {
        for j in 0..k {
            if counts[[i, j]] > 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let sccs = petgraph::algo::tarjan_scc(&graph);

    // Largest usable component: every restricted row must have outgoing
    // counts. Ties break toward larger total counts, then lower indices.
    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    for scc in sccs {
        let mut states: Vec<usize> = scc.iter().map(|n| n.index()).collect();
        states.sort_unstable();
        let total: f64 = states
            .iter()
            .flat_map(|&i| states.iter().map(move |&j| counts[[i, j]]))
            .sum();
        let rows_ok = states
            .iter()
            .all(|&i| states.iter().any(|&j| counts[[i, j]] > 0.0));
        if !rows_ok {
            continue;
        }
        let candidate = (states.len(), total, states);
        let better = match &best {
            None => true,
            Some((n, t, s)) => {
                candidate.0 > *n
                    || (candidate.0 == *n && candidate.1 > *t)
                    || (candidate.0 == *n && candidate.1 == *t && candidate.2 < *s)
            }
        };
        if better {
            best = Some(candidate);
        }
    }
    let (_, _, active_states) = best.ok_or(Error::EmptyComponent)?;

    let m = active_states.len();
    let mut sub = Array2::<f64>::zeros((m, m));
    for (a, &i) in active_states.iter().enumerate() {
        for (b, &j) in active_states.iter().enumerate() {
            sub[[a, b]] = counts[[i, j]];
        }
    }
    if reversible {
        let subt = sub.t().to_owned();
        sub = 0.5 * (&sub + &subt);
    }
    let mut transition = sub;
    for mut row in transition.rows_mut() {
        let total: f64 = row.iter().sum();
        row.mapv_inplace(|v| v / total);
    }

    Ok(MsmModel {
        transition,
        lag,
        active_states,
        counts: counts.clone(),
    })
}

impl MsmModel {
    /// Stationary distribution of the reversible estimate (normalized row
    /// sums of the symmetrized counts restricted to the active set).
    pub fn stationary(&self) -> Vec<f64> {
        let m = self.active_states.len();
        let mut pi = vec![0.0f64; m];
        for (a, &i) in self.active_states.iter().enumerate() {
            for &j in &self.active_states {
                pi[a] += 0.5 * (self.counts[[i, j]] + self.counts[[j, i]]);
            }
        }
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|v| *v /= total);
        pi
    }
}

/// Implied timescales `t_i = -lag / ln |lambda_{i+1}|` for the `n` slowest
/// processes beyond the stationary one.
pub fn implied_timescales(model: &MsmModel, n: usize) -> Result<Vec<ItsPoint>> {
    let m = model.active_states.len();
    if n >= m {
        return Err(Error::InvalidParameter(format!(
            "requested {n} timescales from an MSM with {m} active states"
        )));
    }
    let eigs = eigenvalues_general(model.transition.view())?;
    let tau = model.lag as f64;
    Ok(eigs
        .iter()
        .skip(1)
        .take(n)
        .map(|l| {
            let modulus = l.norm();
            // Eigenvalues within round-off of the unit circle carry no
            // finite timescale information.
            if modulus >= 1.0 - 1e-12 {
                ItsPoint {
                    timescale: f64::INFINITY,
                    valid: false,
                }
            } else if modulus <= 0.0 {
                ItsPoint {
                    timescale: 0.0,
                    valid: false,
                }
            } else {
                let t = -tau / modulus.ln();
                ItsPoint {
                    timescale: t,
                    valid: t >= tau,
                }
            }
        })
        .collect())
}

/// One row of an implied-timescale table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItsRow {
    pub lag: usize,
    pub timescales: Option<Vec<ItsPoint>>,
    pub error: Option<String>,
}

/// Implied timescales as a function of the MSM lag; failures at single
/// lags leave a partial table.
pub fn its_curve(
    dtrajs: &[&[usize]],
    k: usize,
    lags: &[usize],
    n: usize,
    reversible: bool,
) -> Vec<ItsRow> {
    lags.iter()
        .map(|&lag| {
            let result = count_matrix(dtrajs, k, lag)
                .and_then(|c| transition_matrix(&c, lag, reversible))
                .and_then(|m| implied_timescales(&m, n));
            match result {
                Ok(ts) => ItsRow {
                    lag,
                    timescales: Some(ts),
                    error: None,
                },
                Err(e) => ItsRow {
                    lag,
                    timescales: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}
