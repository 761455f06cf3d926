//! Dynamic time warping between observation sequences.
//!
//! The query is the policy rollout and the reference is a demonstration.
//! Distances are raw accumulated L2 costs along the best admissible path; the
//! per-query-step value is reported alongside as `normalized`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepPattern {
    /// Steps (1,0), (0,1), (1,1), unit weights.
    Symmetric1,
    /// Slope-constrained asymmetric steps, as `(query, reference)` offsets:
    /// (1,1); (1,2); and the compound (1,1) then (1,0). Each visited cell costs
    /// its local distance once and every query element is visited exactly
    /// once, so the reference advances between 1/2 and 2 per query step.
    MoriAsymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DtwConfig {
    pub step_pattern: StepPattern,
    /// Let the path end at any reference index instead of the last one.
    pub open_end: bool,
}

impl Default for DtwConfig {
    fn default() -> Self {
        Self {
            step_pattern: StepPattern::MoriAsymmetric,
            open_end: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtwResult {
    pub distance: f64,
    /// `distance` divided by the query length.
    pub normalized: f64,
    /// `(query_index, reference_index)` pairs from start to end.
    pub alignment: Vec<(usize, usize)>,
    pub local_costs: Vec<f64>,
}

impl DtwResult {
    /// CSV with columns `query_index,reference_index,local_cost`.
    pub fn alignment_csv(&self) -> String {
        let mut s = String::from("query_index,reference_index,local_cost\n");
        for (&(i, j), c) in self.alignment.iter().zip(&self.local_costs) {
            s.push_str(&format!("{i},{j},{c}\n"));
        }
        s
    }
}

pub fn observation_rows(obs: &[Observation]) -> Vec<[f64; 6]> {
    obs.iter().map(|o| o.to_array()).collect()
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_inputs<Q: AsRef<[f64]>, R: AsRef<[f64]>>(query: &[Q], reference: &[R]) -> Result<()> {
    if query.is_empty() || reference.is_empty() {
        return Err(Error::InvalidArgument("DTW sequences must be non-empty".into()));
    }
    let d = query[0].as_ref().len();
    if query.iter().any(|q| q.as_ref().len() != d) || reference.iter().any(|r| r.as_ref().len() != d) {
        return Err(Error::Shape("DTW sequences have mismatched feature dimensions".into()));
    }
    Ok(())
}

/// A step into `(i, j)`: the cell it starts from plus any intermediate cell.
#[derive(Debug, Clone, Copy)]
struct Step {
    from: (usize, usize),
    via: Option<(usize, usize)>,
}

fn steps_into(pattern: StepPattern, i: usize, j: usize) -> Vec<Step> {
    let mut out = Vec::with_capacity(3);
    let mut add = |di: usize, dj: usize, via: Option<(usize, usize)>| {
        if di <= i && dj <= j {
            out.push(Step { from: (i - di, j - dj), via });
        }
    };
    match pattern {
        StepPattern::Symmetric1 => {
            add(1, 0, None);
            add(0, 1, None);
            add(1, 1, None);
        }
        StepPattern::MoriAsymmetric => {
            add(1, 1, None);
            add(1, 2, None);
            if i >= 2 && j >= 1 {
                add(2, 1, Some((i - 1, j)));
            }
        }
    }
    out
}

/// Minimum accumulated cost alignment under `cfg`.
///
/// Fails with [`Error::SequenceTooShort`] when no admissible path exists, e.g.
/// an asymmetric query more than twice as long as the reference.
pub fn dtw_distance<Q: AsRef<[f64]>, R: AsRef<[f64]>>(query: &[Q], reference: &[R], cfg: &DtwConfig) -> Result<DtwResult> {
    check_inputs(query, reference)?;
    let (n, m) = (query.len(), reference.len());
    let cost: Vec<f64> = (0..n * m)
        .map(|k| l2(query[k / m].as_ref(), reference[k % m].as_ref()))
        .collect();
    let mut acc = vec![f64::INFINITY; n * m];
    let mut choice: Vec<Option<Step>> = vec![None; n * m];
    acc[0] = cost[0];
    for i in 0..n {
        for j in 0..m {
            if i == 0 && j == 0 {
                continue;
            }
            let mut best = f64::INFINITY;
            let mut arg = None;
            for s in steps_into(cfg.step_pattern, i, j) {
                let mut c = acc[s.from.0 * m + s.from.1];
                if let Some((vi, vj)) = s.via {
                    c += cost[vi * m + vj];
                }
                if c < best {
                    best = c;
                    arg = Some(s);
                }
            }
            acc[i * m + j] = cost[i * m + j] + best;
            choice[i * m + j] = arg;
        }
    }

    let end_j = if cfg.open_end {
        // first minimum keeps the result independent of float ties elsewhere
        (0..m).fold(0, |b, j| if acc[(n - 1) * m + j] < acc[(n - 1) * m + b] { j } else { b })
    } else {
        m - 1
    };
    let distance = acc[(n - 1) * m + end_j];
    if !distance.is_finite() {
        return Err(Error::SequenceTooShort(format!(
            "no admissible warping path between a query of length {n} and a reference of length {m}"
        )));
    }

    let mut path = vec![(n - 1, end_j)];
    let (mut i, mut j) = (n - 1, end_j);
    while (i, j) != (0, 0) {
        let s = choice[i * m + j].expect("reachable cell has a recorded step");
        if let Some(v) = s.via {
            path.push(v);
        }
        path.push(s.from);
        (i, j) = s.from;
    }
    path.reverse();
    let local_costs = path.iter().map(|&(i, j)| cost[i * m + j]).collect();
    Ok(DtwResult {
        distance,
        normalized: distance / n as f64,
        alignment: path,
        local_costs,
    })
}

/// Longest sequence accepted by [`dtw_brute_force`].
pub const BRUTE_FORCE_MAX_LEN: usize = 8;

/// Exhaustive minimum over every admissible path. Exponential; test oracle only.
///
/// Paths are enumerated forward from `(0, 0)` as explicit cell lists, without
/// sharing any state with [`dtw_distance`].
pub fn dtw_brute_force<Q: AsRef<[f64]>, R: AsRef<[f64]>>(query: &[Q], reference: &[R], cfg: &DtwConfig) -> Result<f64> {
    if query.len() > BRUTE_FORCE_MAX_LEN || reference.len() > BRUTE_FORCE_MAX_LEN {
        return Err(Error::SequenceTooLong(query.len().max(reference.len()), BRUTE_FORCE_MAX_LEN));
    }
    check_inputs(query, reference)?;
    // each move is the list of cell offsets it visits, last one is the landing cell
    let moves: &[&[(usize, usize)]] = match cfg.step_pattern {
        StepPattern::Symmetric1 => &[&[(1, 0)], &[(0, 1)], &[(1, 1)]],
        StepPattern::MoriAsymmetric => &[&[(1, 1)], &[(1, 2)], &[(1, 1), (2, 1)]],
    };
    let (n, m) = (query.len(), reference.len());
    let c = |i: usize, j: usize| l2(query[i].as_ref(), reference[j].as_ref());

    fn walk(
        at: (usize, usize),
        sum: f64,
        dims: (usize, usize),
        open_end: bool,
        moves: &[&[(usize, usize)]],
        c: &dyn Fn(usize, usize) -> f64,
        best: &mut f64,
    ) {
        let (n, m) = dims;
        if at.0 == n - 1 && (open_end || at.1 == m - 1) {
            *best = best.min(sum);
        }
        for mv in moves {
            let cells: Vec<(usize, usize)> = mv.iter().map(|&(di, dj)| (at.0 + di, at.1 + dj)).collect();
            if cells.iter().all(|&(i, j)| i < n && j < m) {
                let added: f64 = cells.iter().map(|&(i, j)| c(i, j)).sum();
                walk(*cells.last().unwrap(), sum + added, dims, open_end, moves, c, best);
            }
        }
    }

    let mut best = f64::INFINITY;
    walk((0, 0), c(0, 0), (n, m), cfg.open_end, moves, &c, &mut best);
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::SequenceTooShort("no admissible warping path".into()))
    }
}

/// Sum in a fixed binary-tree order, independent of how the values were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => pairwise_sum(&values[..n / 2]) + pairwise_sum(&values[n / 2..]),
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    (mean, (pairwise_sum(&sq) / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtwReport {
    /// `distances[r][k]`: rollout `r` against reference `k`.
    pub distances: Vec<Vec<f64>>,
    pub mean: f64,
    pub std: f64,
    pub config: DtwConfig,
}

/// Scores every query against every reference trajectory.
pub fn dtw_report(queries: &[Vec<Observation>], references: &[Vec<Observation>], cfg: &DtwConfig) -> Result<DtwReport> {
    let refs: Vec<Vec<[f64; 6]>> = references.iter().map(|r| observation_rows(r)).collect();
    let mut distances = Vec::with_capacity(queries.len());
    for q in queries {
        let q = observation_rows(q);
        let row = refs
            .iter()
            .map(|r| dtw_distance(&q, r, cfg).map(|d| d.distance))
            .collect::<Result<Vec<_>>>()?;
        distances.push(row);
    }
    let flat: Vec<f64> = distances.iter().flatten().copied().collect();
    let (mean, std) = mean_std(&flat);
    Ok(DtwReport {
        distances,
        mean,
        std,
        config: *cfg,
    })
}

/// Motionless observation sequence at `height`, the stand-still baseline query.
pub fn stand_still_sequence(height: f64, len: usize) -> Vec<Observation> {
    vec![Observation::standing(height); len]
}


/// Rollouts of a policy scored against a reference dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDtwEval {
    pub report: DtwReport,
    pub episodes: Vec<crate::rl::EvalEpisode>,
}

/// Deterministic (mean-action) rollouts of `len` frames each, every one scored
/// against every reference trajectory. Rollout `k` resets from seed `seed + k`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy_dtw(
    policy: &crate::rl::GaussianPolicy,
    params: &crate::sim::SimParams,
    env: &crate::rl::EnvConfig,
    dataset: &crate::dataset::ReferenceDataset,
    n_rollouts: usize,
    len: usize,
    seed: u64,
    cfg: &DtwConfig,
    handcrafted: &crate::reward::HandcraftedWeights,
) -> Result<PolicyDtwEval> {
    if n_rollouts == 0 {
        return Err(Error::InvalidArgument("n_rollouts must be >= 1".into()));
    }
    let episodes = (0..n_rollouts as u64)
        .map(|k| crate::rl::evaluate_episode(policy, params, env, len, seed + k, handcrafted))
        .collect::<Result<Vec<_>>>()?;
    let queries: Vec<Vec<Observation>> = episodes.iter().map(|e| e.observations.clone()).collect();
    let refs: Vec<Vec<Observation>> = dataset.trajectories.iter().map(|t| t.observations.clone()).collect();
    Ok(PolicyDtwEval {
        report: dtw_report(&queries, &refs, cfg)?,
        episodes,
    })
}

/// Stand-still baseline: `n_rollouts` copies of a motionless sequence at the standing height.
pub fn stand_still_baseline(
    dataset: &crate::dataset::ReferenceDataset,
    height: f64,
    len: usize,
    cfg: &DtwConfig,
) -> Result<DtwReport> {
    let refs: Vec<Vec<Observation>> = dataset.trajectories.iter().map(|t| t.observations.clone()).collect();
    dtw_report(&[stand_still_sequence(height, len)], &refs, cfg)
}
