//! Diagnostics for imagined data: one-step prediction error, bidirectional
//! model disagreement along imagined trajectories, and RiskWorld region
//! fractions.
//!
//! All model predictions here use the deterministic elite-average mean.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::augment::{DynamicsPredictor, RolloutPolicy};
use crate::data::Transition;
use crate::dynamics::Direction;
use crate::env::{self, Region};
use crate::error::{CabiError, Result};
use crate::nn::rows_to_matrix;
use crate::rng::SeededRng;

fn sq_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Mean of `‖target − ŝ‖² + (r − r̂)²` over `transitions`, where `(ŝ, r̂)`
/// is `model`'s mean prediction in `direction`.
pub fn prediction_error(transitions: &[Transition], model: &dyn DynamicsPredictor, direction: Direction) -> Result<f64> {
    if transitions.is_empty() {
        return Err(CabiError::InvalidArgument("prediction error of an empty set".into()));
    }
    let sd = model.state_dim();
    let conds: Vec<Vec<f64>> = transitions.iter().map(|t| direction.condition(t).to_vec()).collect();
    let actions: Vec<Vec<f64>> = transitions.iter().map(|t| t.action.clone()).collect();
    let ad = actions[0].len();
    let (pred, rew) = model.mean(rows_to_matrix(&conds, sd)?.view(), rows_to_matrix(&actions, ad)?.view())?;
    let total: f64 = transitions
        .iter()
        .enumerate()
        .map(|(i, t)| sq_err(direction.target(t), pred.row(i).as_slice().expect("row")) + (t.reward - rew[i]).powi(2))
        .sum();
    Ok(total / transitions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionErrorReport {
    pub forward: f64,
    pub backward: f64,
}

pub fn prediction_errors(
    transitions: &[Transition],
    forward: &dyn DynamicsPredictor,
    backward: &dyn DynamicsPredictor,
) -> Result<PredictionErrorReport> {
    Ok(PredictionErrorReport {
        forward: prediction_error(transitions, forward, Direction::Forward)?,
        backward: prediction_error(transitions, backward, Direction::Backward)?,
    })
}

/// `forward[i-1]` and `backward[i-1]` hold the disagreement at horizon `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementReport {
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
}

impl DisagreementReport {
    pub fn horizon(&self) -> usize {
        self.forward.len()
    }

    /// All `2H` entries, forward first.
    pub fn entries(&self) -> Vec<f64> {
        self.forward.iter().chain(&self.backward).copied().collect()
    }
}

fn mean_rows(m: &Array2<f64>, reference: &Array2<f64>, r: &Array1<f64>, r_ref: &Array1<f64>) -> f64 {
    let n = m.nrows();
    let total: f64 = (0..n)
        .map(|i| {
            m.row(i)
                .iter()
                .zip(reference.row(i).iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                + (r[i] - r_ref[i]).powi(2)
        })
        .sum();
    total / n as f64
}

/// Bidirectional disagreement along `horizon`-step imagined trajectories
/// started from `anchors`.
///
/// Forward: from anchor `(s, r)`, roll `ŝ_i` with the forward mean, backtrack
/// each `ŝ_i` with the backward mean to `s̃_{i-1}`, and score
/// `‖s̃_{i-1} − ŝ_{i-1}‖² + (r̃_{i-1} − r_{i-1})²` with `ŝ_0 = s`. The
/// reference reward is the anchor's reward at `i = 1` and the forward
/// model's reward for the same transition afterwards. Backward mirrors this
/// from `(s', r)`.
pub fn model_disagreement(
    anchors: &[Transition],
    forward: &dyn DynamicsPredictor,
    backward: &dyn DynamicsPredictor,
    forward_policy: &dyn RolloutPolicy,
    backward_policy: &dyn RolloutPolicy,
    horizon: usize,
    rng: &mut SeededRng,
) -> Result<DisagreementReport> {
    if horizon < 1 {
        return Err(CabiError::InvalidArgument("disagreement horizon must be at least 1".into()));
    }
    if anchors.is_empty() {
        return Err(CabiError::InvalidArgument("disagreement over an empty anchor set".into()));
    }
    let sd = forward.state_dim();
    let rewards = Array1::from_iter(anchors.iter().map(|t| t.reward));

    let mut fwd = Vec::with_capacity(horizon);
    let mut s = rows_to_matrix(&anchors.iter().map(|t| t.state.clone()).collect::<Vec<_>>(), sd)?;
    let mut r_ref = rewards.clone();
    for i in 0..horizon {
        let a = forward_policy.sample_actions(s.view(), rng)?;
        let (next, r_hat) = forward.mean(s.view(), a.view())?;
        let (back, r_tilde) = backward.mean(next.view(), a.view())?;
        if i > 0 {
            r_ref = r_hat;
        }
        fwd.push(mean_rows(&back, &s, &r_tilde, &r_ref));
        s = next;
    }

    let mut bwd = Vec::with_capacity(horizon);
    let mut s = rows_to_matrix(&anchors.iter().map(|t| t.next_state.clone()).collect::<Vec<_>>(), sd)?;
    let mut r_ref = rewards;
    for i in 0..horizon {
        let a = backward_policy.sample_actions(s.view(), rng)?;
        let (prev, r_tilde) = backward.mean(s.view(), a.view())?;
        let (again, r_hat) = forward.mean(prev.view(), a.view())?;
        if i > 0 {
            r_ref = r_tilde;
        }
        bwd.push(mean_rows(&again, &s, &r_hat, &r_ref));
        s = prev;
    }
    Ok(DisagreementReport {
        forward: fwd,
        backward: bwd,
    })
}

/// Uniform draw (with replacement) of `n` anchors from `pool`.
pub fn sample_anchors(pool: &[Transition], n: usize, rng: &mut SeededRng) -> Result<Vec<Transition>> {
    if pool.is_empty() {
        return Err(CabiError::InvalidArgument("no transitions to draw anchors from".into()));
    }
    Ok((0..n).map(|_| pool[rng.index(pool.len())].clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleQualityReport {
    pub danger_fraction: f64,
    pub outside_fraction: f64,
    pub goal_fraction: f64,
    pub size: usize,
}

/// Region fractions of the given 2-d states. An empty set reports zeros.
pub fn state_region_fractions<'a>(states: impl IntoIterator<Item = &'a [f64]>) -> Result<SampleQualityReport> {
    let (mut danger, mut outside, mut goal, mut n) = (0usize, 0usize, 0usize, 0usize);
    for s in states {
        if s.len() != env::STATE_DIM {
            return Err(CabiError::Dimension {
                expected: env::STATE_DIM,
                actual: s.len(),
            });
        }
        n += 1;
        match env::region(s[0], s[1]) {
            Region::Danger => danger += 1,
            Region::Outside => outside += 1,
            Region::Goal => goal += 1,
            Region::Neutral => {}
        }
    }
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    Ok(SampleQualityReport {
        danger_fraction: frac(danger),
        outside_fraction: frac(outside),
        goal_fraction: frac(goal),
        size: n,
    })
}

/// Region fractions over the next states of a RiskWorld buffer.
pub fn region_fractions(buffer: &[Transition]) -> Result<SampleQualityReport> {
    state_region_fractions(buffer.iter().map(|t| t.next_state.as_slice()))
}

/// One long-format CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub strategy: String,
    pub k: f64,
    pub horizon: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    pub const HEADER: &'static str = "strategy,k,horizon,seed,metric,value";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.strategy, self.k, self.horizon, self.seed, self.metric, self.value
        )
    }
}

pub fn disagreement_rows(report: &DisagreementReport, strategy: &str, k: f64, seed: u64) -> Vec<MetricRow> {
    let mut rows = Vec::with_capacity(2 * report.horizon());
    for (name, values) in [("disagreement_fwd", &report.forward), ("disagreement_bwd", &report.backward)] {
        for (i, &v) in values.iter().enumerate() {
            rows.push(MetricRow {
                strategy: strategy.to_string(),
                k,
                horizon: i + 1,
                seed,
                metric: name.to_string(),
                value: v,
            });
        }
    }
    rows
}

pub fn to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(MetricRow::HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}
