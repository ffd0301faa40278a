//! Bidirectional imagination with the double check.
//!
//! Every generation iteration samples a batch of anchor states `s_t` and an
//! independent batch of anchor next states `s_{t+1}` from the dataset, then
//! rolls `fwd_horizon` forward steps and `bwd_horizon` backward steps. Each
//! step produces one candidate per row:
//!
//! * forward: `a ~ G_fwd(s)`, `(ŝ', r̂)` sampled from the forward ensemble,
//!   `s̃` = backward-ensemble mean at `(ŝ', a)`, deviation `‖s − s̃‖₂`.
//! * backward: `a ~ G_bwd(s')`, `(s̃, r̃)` sampled from the backward
//!   ensemble, `ŝ'` = forward-ensemble mean at `(s̃, a)`, deviation
//!   `‖s' − ŝ'‖₂`.
//!
//! Rollouts chain from the imagined states whether or not they were kept.
//! The strategy decides which candidates of each step batch enter the model
//! buffer; selection never mixes directions or batches.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cvae::{ActionBounds, CvaeModel};
use crate::data::{self, Dataset, Transition};
use crate::dynamics::{Direction, Ensemble, PredictMode};
use crate::error::{CabiError, Result};
use crate::par::{self, Exec};
use crate::rng::SeededRng;

/// What the augmentation engine needs from a dynamics model.
pub trait DynamicsPredictor: Sync {
    fn state_dim(&self) -> usize;

    /// Sample from one uniformly chosen elite per row.
    fn sample(&self, conds: ArrayView2<f64>, actions: ArrayView2<f64>, rng: &mut SeededRng)
        -> Result<(Array2<f64>, Array1<f64>)>;

    /// Mean of one uniformly chosen elite per row.
    fn elite_mean(
        &self,
        conds: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        rng: &mut SeededRng,
    ) -> Result<(Array2<f64>, Array1<f64>)>;

    /// Deterministic mean prediction (average over elites).
    fn mean(&self, conds: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)>;

    /// Spread of the elites' mean predictions per row.
    fn member_variance(&self, conds: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>>;
}

impl DynamicsPredictor for Ensemble {
    fn state_dim(&self) -> usize {
        Ensemble::state_dim(self)
    }

    fn sample(
        &self,
        conds: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        rng: &mut SeededRng,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        self.predict_batch(conds, actions, PredictMode::Sample, rng)
    }

    fn elite_mean(
        &self,
        conds: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        rng: &mut SeededRng,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        self.predict_batch(conds, actions, PredictMode::Mean, rng)
    }

    fn mean(&self, conds: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.predict_mean(conds, actions)
    }

    fn member_variance(&self, conds: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ensemble::member_variance(self, conds, actions)
    }
}

/// Proposes actions conditioned on a state (forward) or next state (backward).
pub trait RolloutPolicy: Sync {
    fn sample_actions(&self, conds: ArrayView2<f64>, rng: &mut SeededRng) -> Result<Array2<f64>>;
}

impl RolloutPolicy for CvaeModel {
    fn sample_actions(&self, conds: ArrayView2<f64>, rng: &mut SeededRng) -> Result<Array2<f64>> {
        CvaeModel::sample_actions(self, conds, rng)
    }
}

/// Uniform actions over the action box, ignoring the condition.
#[derive(Debug, Clone)]
pub struct UniformPolicy {
    pub bounds: ActionBounds,
}

impl RolloutPolicy for UniformPolicy {
    fn sample_actions(&self, conds: ArrayView2<f64>, rng: &mut SeededRng) -> Result<Array2<f64>> {
        let b = &self.bounds;
        Ok(Array2::from_shape_fn((conds.nrows(), b.dim()), |(_, d)| rng.uniform_range(b.low[d], b.high[d])))
    }
}

/// The trained models one generation run uses.
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub forward: &'a dyn DynamicsPredictor,
    pub backward: &'a dyn DynamicsPredictor,
    pub forward_policy: &'a dyn RolloutPolicy,
    pub backward_policy: &'a dyn RolloutPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Cabi,
    Bomi,
    ForwardOnly,
    BackwardOnly,
    RandomK,
    EnsembleVarianceK,
    CabiRandomPolicy,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Cabi,
        Strategy::Bomi,
        Strategy::ForwardOnly,
        Strategy::BackwardOnly,
        Strategy::RandomK,
        Strategy::EnsembleVarianceK,
        Strategy::CabiRandomPolicy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Cabi => "cabi",
            Strategy::Bomi => "bomi",
            Strategy::ForwardOnly => "forward",
            Strategy::BackwardOnly => "backward",
            Strategy::RandomK => "random-k",
            Strategy::EnsembleVarianceK => "ev-k",
            Strategy::CabiRandomPolicy => "cabi-random-policy",
        }
    }

    fn uses_forward(self) -> bool {
        self != Strategy::BackwardOnly
    }

    fn uses_backward(self) -> bool {
        self != Strategy::ForwardOnly
    }

    /// Whether `k` limits what is kept.
    pub fn uses_k(self) -> bool {
        matches!(
            self,
            Strategy::Cabi | Strategy::RandomK | Strategy::EnsembleVarianceK | Strategy::CabiRandomPolicy
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = CabiError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == norm)
            .or(match norm.as_str() {
                "forward-only" => Some(Strategy::ForwardOnly),
                "backward-only" => Some(Strategy::BackwardOnly),
                "random" | "r-k" => Some(Strategy::RandomK),
                "ensemble-variance" | "ensemble-variance-k" | "ev" => Some(Strategy::EnsembleVarianceK),
                _ => None,
            })
            .ok_or_else(|| CabiError::InvalidArgument(format!("unknown strategy {s:?}")))
    }
}

/// How the opposite-direction model reconstructs the anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckMode {
    /// Mean of one uniformly chosen elite.
    EliteMean,
    /// A sample from one uniformly chosen elite.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub fwd_horizon: usize,
    pub bwd_horizon: usize,
    /// Percentage of each step batch to keep, in `[0, 100]`.
    pub k: f64,
    pub batch_size: usize,
    pub total: usize,
    pub check: CheckMode,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            fwd_horizon: 3,
            bwd_horizon: 3,
            k: 20.0,
            batch_size: 1000,
            total: 10_000,
            check: CheckMode::EliteMean,
            exec: Exec::default(),
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self, strategy: Strategy) -> Result<()> {
        if !(0.0..=100.0).contains(&self.k) {
            return Err(CabiError::Config(format!("k = {} outside [0, 100]", self.k)));
        }
        if self.batch_size == 0 {
            return Err(CabiError::Config("generation batch size must be positive".into()));
        }
        let horizon = if strategy.uses_forward() { self.fwd_horizon } else { 0 }
            + if strategy.uses_backward() { self.bwd_horizon } else { 0 };
        if horizon == 0 && self.total > 0 {
            return Err(CabiError::Config(format!(
                "strategy {strategy} has zero rollout horizon but {} transitions were requested",
                self.total
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTransition {
    pub transition: Transition,
    pub deviation: f64,
    pub direction: Direction,
    pub depth: usize,
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

fn l2_rows(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Vec<f64> {
    a.outer_iter()
        .zip(b.outer_iter())
        .map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt())
        .collect()
}

fn check(
    model: &dyn DynamicsPredictor,
    mode: CheckMode,
    conds: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    rng: &mut SeededRng,
) -> Result<Array2<f64>> {
    Ok(match mode {
        CheckMode::EliteMean => model.elite_mean(conds, actions, rng)?.0,
        CheckMode::Sample => model.sample(conds, actions, rng)?.0,
    })
}

/// Candidates plus the actions used, for callers that need them.
pub struct StepOutput {
    pub candidates: Vec<CandidateTransition>,
    pub actions: Array2<f64>,
}

fn empty_batch(states: ArrayView2<f64>) -> Result<()> {
    if states.nrows() == 0 {
        Err(CabiError::InvalidArgument("empty state batch".into()))
    } else {
        Ok(())
    }
}

fn forward_step_inner(
    states: ArrayView2<f64>,
    models: &Models<'_>,
    mode: CheckMode,
    depth: usize,
    rng: &mut SeededRng,
) -> Result<StepOutput> {
    empty_batch(states)?;
    let actions = models.forward_policy.sample_actions(states, rng)?;
    let (next, rewards) = models.forward.sample(states, actions.view(), rng)?;
    let back = check(models.backward, mode, next.view(), actions.view(), rng)?;
    let dev = l2_rows(states, back.view());
    let (s, a, s2) = (rows(&states.to_owned()), rows(&actions), rows(&next));
    let candidates = (0..states.nrows())
        .map(|i| CandidateTransition {
            transition: Transition {
                state: s[i].clone(),
                action: a[i].clone(),
                reward: rewards[i],
                next_state: s2[i].clone(),
                done: false,
            },
            deviation: dev[i],
            direction: Direction::Forward,
            depth,
        })
        .collect();
    Ok(StepOutput { candidates, actions })
}

fn backward_step_inner(
    next_states: ArrayView2<f64>,
    models: &Models<'_>,
    mode: CheckMode,
    depth: usize,
    rng: &mut SeededRng,
) -> Result<StepOutput> {
    empty_batch(next_states)?;
    let actions = models.backward_policy.sample_actions(next_states, rng)?;
    let (prev, rewards) = models.backward.sample(next_states, actions.view(), rng)?;
    let fwd = check(models.forward, mode, prev.view(), actions.view(), rng)?;
    let dev = l2_rows(next_states, fwd.view());
    let (s, a, s2) = (rows(&prev), rows(&actions), rows(&next_states.to_owned()));
    let candidates = (0..next_states.nrows())
        .map(|i| CandidateTransition {
            transition: Transition {
                state: s[i].clone(),
                action: a[i].clone(),
                reward: rewards[i],
                next_state: s2[i].clone(),
                done: false,
            },
            deviation: dev[i],
            direction: Direction::Backward,
            depth,
        })
        .collect();
    Ok(StepOutput { candidates, actions })
}

/// One forward imagination step with double check (elite-mean check).
pub fn forward_step(
    states: ArrayView2<f64>,
    models: &Models<'_>,
    rng: &mut SeededRng,
) -> Result<Vec<CandidateTransition>> {
    Ok(forward_step_inner(states, models, CheckMode::EliteMean, 0, rng)?.candidates)
}

/// One backward imagination step with double check (elite-mean check).
pub fn backward_step(
    next_states: ArrayView2<f64>,
    models: &Models<'_>,
    rng: &mut SeededRng,
) -> Result<Vec<CandidateTransition>> {
    Ok(backward_step_inner(next_states, models, CheckMode::EliteMean, 0, rng)?.candidates)
}

/// Number of candidates kept out of `n` at percentage `k`.
pub fn kept_count(n: usize, k: f64) -> usize {
    if k <= 0.0 || n == 0 {
        0
    } else if k >= 100.0 {
        n
    } else {
        ((k * n as f64 / 100.0 + 1e-9).floor() as usize).max(1)
    }
}

/// Indices (ascending) of the `kept_count` smallest keys; ties go to the
/// lower index.
pub fn smallest_k_indices(keys: &[f64], k: f64) -> Vec<usize> {
    let count = kept_count(keys.len(), k);
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    idx.truncate(count);
    idx.sort_unstable();
    idx
}

/// Keeps the `k`% of candidates with the smallest deviation, in their
/// original order.
pub fn select_top_k(candidates: &[CandidateTransition], k: f64) -> Vec<CandidateTransition> {
    let keys: Vec<f64> = candidates.iter().map(|c| c.deviation).collect();
    smallest_k_indices(&keys, k)
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect()
}

/// One step batch and which of its candidates were accepted.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub iteration: usize,
    pub direction: Direction,
    pub depth: usize,
    pub candidates: Vec<CandidateTransition>,
    pub kept: Vec<usize>,
}

fn accept(
    strategy: Strategy,
    k: f64,
    out: &StepOutput,
    generator: &dyn DynamicsPredictor,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    let n = out.candidates.len();
    Ok(match strategy {
        Strategy::Bomi | Strategy::ForwardOnly | Strategy::BackwardOnly => (0..n).collect(),
        Strategy::Cabi | Strategy::CabiRandomPolicy => {
            let keys: Vec<f64> = out.candidates.iter().map(|c| c.deviation).collect();
            smallest_k_indices(&keys, k)
        }
        Strategy::RandomK => {
            let mut idx: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut idx);
            idx.truncate(kept_count(n, k));
            idx.sort_unstable();
            idx
        }
        Strategy::EnsembleVarianceK => {
            let conds: Vec<Vec<f64>> = out
                .candidates
                .iter()
                .map(|c| match c.direction {
                    Direction::Forward => c.transition.state.clone(),
                    Direction::Backward => c.transition.next_state.clone(),
                })
                .collect();
            let sd = generator.state_dim();
            let conds = crate::nn::rows_to_matrix(&conds, sd)?;
            let var = generator.member_variance(conds.view(), out.actions.view())?;
            smallest_k_indices(var.as_slice().expect("contiguous"), k)
        }
    })
}

fn sample_states(ds: &Dataset, n: usize, next: bool, rng: &mut SeededRng) -> Array2<f64> {
    let sd = ds.state_dim();
    let mut m = Array2::zeros((n, sd));
    for i in 0..n {
        let t = &ds.transitions()[rng.index(ds.len())];
        let src = if next { &t.next_state } else { &t.state };
        for d in 0..sd {
            m[[i, d]] = src[d];
        }
    }
    m
}

fn run_iteration(
    iteration: usize,
    dataset: &Dataset,
    models: &Models<'_>,
    config: &RolloutConfig,
    strategy: Strategy,
    mut rng: SeededRng,
) -> Result<Vec<StepRecord>> {
    let b = config.batch_size;
    let mut models = *models;
    let policy_bounds = random_policy_bounds(dataset);
    let random_policy = UniformPolicy { bounds: policy_bounds };
    if strategy == Strategy::CabiRandomPolicy {
        models.forward_policy = &random_policy;
        models.backward_policy = &random_policy;
    }
    let mut fwd_states = sample_states(dataset, b, false, &mut rng);
    let mut bwd_states = sample_states(dataset, b, true, &mut rng);
    let fwd_h = if strategy.uses_forward() { config.fwd_horizon } else { 0 };
    let bwd_h = if strategy.uses_backward() { config.bwd_horizon } else { 0 };
    let mut records = Vec::with_capacity(fwd_h + bwd_h);
    for depth in 0..fwd_h.max(bwd_h) {
        if depth < fwd_h {
            let out = forward_step_inner(fwd_states.view(), &models, config.check, depth, &mut rng)?;
            let kept = accept(strategy, config.k, &out, models.forward, &mut rng)?;
            fwd_states = crate::nn::rows_to_matrix(
                &out.candidates.iter().map(|c| c.transition.next_state.clone()).collect::<Vec<_>>(),
                dataset.state_dim(),
            )?;
            records.push(StepRecord {
                iteration,
                direction: Direction::Forward,
                depth,
                candidates: out.candidates,
                kept,
            });
        }
        if depth < bwd_h {
            let out = backward_step_inner(bwd_states.view(), &models, config.check, depth, &mut rng)?;
            let kept = accept(strategy, config.k, &out, models.backward, &mut rng)?;
            bwd_states = crate::nn::rows_to_matrix(
                &out.candidates.iter().map(|c| c.transition.state.clone()).collect::<Vec<_>>(),
                dataset.state_dim(),
            )?;
            records.push(StepRecord {
                iteration,
                direction: Direction::Backward,
                depth,
                candidates: out.candidates,
                kept,
            });
        }
    }
    Ok(records)
}

/// Action box of the dataset's behavior actions, used by the random-policy
/// ablation.
fn random_policy_bounds(dataset: &Dataset) -> ActionBounds {
    let ad = dataset.action_dim();
    let mut low = vec![f64::INFINITY; ad];
    let mut high = vec![f64::NEG_INFINITY; ad];
    for t in dataset.transitions() {
        for d in 0..ad {
            low[d] = low[d].min(t.action[d]);
            high[d] = high[d].max(t.action[d]);
        }
    }
    ActionBounds { low, high }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub strategy: Strategy,
    pub k: f64,
    pub fwd_horizon: usize,
    pub bwd_horizon: usize,
    pub batch_size: usize,
    pub count: usize,
    pub seed: u64,
    pub iterations: usize,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

/// Accepted synthetic transitions and how they were produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBuffer {
    pub transitions: Vec<Transition>,
    pub provenance: Provenance,
}

impl ModelBuffer {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn to_dataset(&self, template: &Dataset) -> Result<Dataset> {
        template.with_transitions(self.transitions.clone())
    }

    pub fn provenance_path(base: &Path) -> std::path::PathBuf {
        let mut s = base.as_os_str().to_owned();
        s.push(".provenance.json");
        s.into()
    }

    /// Saves records as CABI-DS v1 at `base` plus `<base>.provenance.json`.
    pub fn save(&self, base: &Path, template: &Dataset) -> Result<()> {
        let ds = self.to_dataset(template)?.with_seed(self.provenance.seed);
        data::save(&ds, base)?;
        std::fs::write(Self::provenance_path(base), serde_json::to_string_pretty(&self.provenance)?)?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<Self> {
        let ds = data::load(base)?;
        let path = Self::provenance_path(base);
        let text = std::fs::read_to_string(&path).map_err(|e| CabiError::load(&path, e.to_string()))?;
        let provenance = serde_json::from_str(&text).map_err(|e| CabiError::load(&path, e.to_string()))?;
        Ok(Self {
            transitions: ds.into_transitions(),
            provenance,
        })
    }
}

/// Every step batch of a generation run, in generation order.
#[derive(Debug, Clone, Default)]
pub struct GenerationTrace {
    pub steps: Vec<StepRecord>,
}

impl GenerationTrace {
    pub fn all_candidates(&self) -> Vec<&CandidateTransition> {
        self.steps.iter().flat_map(|s| s.candidates.iter()).collect()
    }

    pub fn kept_candidates(&self) -> Vec<&CandidateTransition> {
        self.steps
            .iter()
            .flat_map(|s| s.kept.iter().map(move |&i| &s.candidates[i]))
            .collect()
    }
}

/// Runs generation until `config.total` transitions are accepted.
pub fn generate(
    dataset: &Dataset,
    models: &Models<'_>,
    config: &RolloutConfig,
    strategy: Strategy,
    rng: &mut SeededRng,
) -> Result<ModelBuffer> {
    generate_traced(dataset, models, config, strategy, rng).map(|(b, _)| b)
}

/// [`generate`] that also returns every candidate batch it consumed.
pub fn generate_traced(
    dataset: &Dataset,
    models: &Models<'_>,
    config: &RolloutConfig,
    strategy: Strategy,
    rng: &mut SeededRng,
) -> Result<(ModelBuffer, GenerationTrace)> {
    config.validate(strategy)?;
    if dataset.is_empty() {
        return Err(CabiError::InvalidArgument("generation needs a non-empty dataset".into()));
    }
    let seed = rng.seed();
    let base = rng.fork();
    let mut provenance = Provenance {
        strategy,
        k: config.k,
        fwd_horizon: config.fwd_horizon,
        bwd_horizon: config.bwd_horizon,
        batch_size: config.batch_size,
        count: 0,
        seed,
        iterations: 0,
        extra: BTreeMap::new(),
    };
    let mut transitions = Vec::with_capacity(config.total);
    let mut trace = GenerationTrace::default();
    let keeps_nothing = strategy.uses_k() && kept_count(config.batch_size, config.k) == 0;
    if config.total == 0 || keeps_nothing {
        return Ok((ModelBuffer { transitions, provenance }, trace));
    }
    let wave = par::width(config.exec);
    let mut next_iter = 0;
    'outer: loop {
        let ids: Vec<usize> = (next_iter..next_iter + wave).collect();
        next_iter += wave;
        let results = par::map_slice(config.exec, &ids, |&it| {
            run_iteration(it, dataset, models, config, strategy, base.stream(it as u64))
        });
        for records in results {
            let records = records?;
            provenance.iterations += 1;
            for rec in records {
                for &i in &rec.kept {
                    if transitions.len() < config.total {
                        transitions.push(rec.candidates[i].transition.clone());
                    }
                }
                trace.steps.push(rec);
            }
            if transitions.len() >= config.total {
                break 'outer;
            }
        }
    }
    provenance.count = transitions.len();
    Ok((ModelBuffer { transitions, provenance }, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// next = scale·s + shift (+ unit noise when sampling); reward 0.
    struct Affine {
        scale: f64,
        shift: f64,
        noise: f64,
    }

    impl DynamicsPredictor for Affine {
        fn state_dim(&self) -> usize {
            1
        }
        fn sample(
            &self,
            c: ArrayView2<f64>,
            _a: ArrayView2<f64>,
            rng: &mut SeededRng,
        ) -> Result<(Array2<f64>, Array1<f64>)> {
            let s = c.mapv(|v| self.scale * v + self.shift) + Array2::from_shape_fn(c.raw_dim(), |_| self.noise * rng.normal());
            Ok((s, Array1::zeros(c.nrows())))
        }
        fn elite_mean(
            &self,
            c: ArrayView2<f64>,
            a: ArrayView2<f64>,
            _rng: &mut SeededRng,
        ) -> Result<(Array2<f64>, Array1<f64>)> {
            self.mean(c, a)
        }
        fn mean(&self, c: ArrayView2<f64>, _a: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
            Ok((c.mapv(|v| self.scale * v + self.shift), Array1::zeros(c.nrows())))
        }
        fn member_variance(&self, c: ArrayView2<f64>, _a: ArrayView2<f64>) -> Result<Array1<f64>> {
            Ok(c.column(0).mapv(f64::abs))
        }
    }

    struct Zero;
    impl RolloutPolicy for Zero {
        fn sample_actions(&self, c: ArrayView2<f64>, _rng: &mut SeededRng) -> Result<Array2<f64>> {
            Ok(Array2::zeros((c.nrows(), 1)))
        }
    }

    fn affine_pair<'a>(f: &'a Affine, g: &'a Affine) -> Models<'a> {
        Models {
            forward: f,
            backward: g,
            forward_policy: &Zero,
            backward_policy: &Zero,
        }
    }

    #[test]
    fn affine_forward_deviation() {
        let f = Affine { scale: 2.0, shift: 0.0, noise: 0.0 };
        let g = Affine { scale: 0.5, shift: 0.1, noise: 0.0 };
        let c = forward_step(array![[1.0]].view(), &affine_pair(&f, &g), &mut SeededRng::new(0)).unwrap();
        assert_eq!(c[0].transition.next_state, vec![2.0]);
        assert!((c[0].deviation - 0.1).abs() < 1e-12);
        assert!(!c[0].transition.done);
    }

    #[test]
    fn affine_backward_deviation() {
        let f = Affine { scale: 2.0, shift: 0.0, noise: 0.0 };
        let g = Affine { scale: 0.5, shift: 0.1, noise: 0.0 };
        let c = backward_step(array![[2.0]].view(), &affine_pair(&f, &g), &mut SeededRng::new(0)).unwrap();
        assert!((c[0].transition.state[0] - 1.1).abs() < 1e-12);
        assert_eq!(c[0].transition.next_state, vec![2.0]);
        assert!((c[0].deviation - 0.2).abs() < 1e-12);
    }

    #[test]
    fn inverse_pair_has_zero_deviation() {
        let f = Affine { scale: 2.0, shift: 0.3, noise: 0.0 };
        let g = Affine { scale: 0.5, shift: -0.15, noise: 0.0 };
        let states = Array2::from_shape_fn((50, 1), |(i, _)| i as f64 * 0.1 - 2.0);
        let models = affine_pair(&f, &g);
        for c in forward_step(states.view(), &models, &mut SeededRng::new(1)).unwrap() {
            assert!(c.deviation < 1e-12);
        }
        for c in backward_step(states.view(), &models, &mut SeededRng::new(2)).unwrap() {
            assert!(c.deviation < 1e-12);
            assert!(states.column(0).iter().any(|&s| s == c.transition.next_state[0]));
        }
    }

    fn cand(dev: f64) -> CandidateTransition {
        CandidateTransition {
            transition: Transition {
                state: vec![dev],
                action: vec![0.0],
                reward: 0.0,
                next_state: vec![dev],
                done: false,
            },
            deviation: dev,
            direction: Direction::Forward,
            depth: 0,
        }
    }

    #[test]
    fn top_k_examples() {
        let cs: Vec<_> = [0.5, 0.1, 0.9, 0.3, 0.2].into_iter().map(cand).collect();
        let kept: Vec<f64> = select_top_k(&cs, 40.0).iter().map(|c| c.deviation).collect();
        assert_eq!(kept, vec![0.1, 0.2]);
        assert!(select_top_k(&cs, 0.0).is_empty());
        assert_eq!(select_top_k(&cs, 100.0), cs);
        // tiny batches keep at least one
        assert_eq!(select_top_k(&cs, 1.0).len(), 1);
        // ties resolved by index
        let tied: Vec<_> = [0.2, 0.1, 0.1, 0.1].into_iter().map(cand).collect();
        assert_eq!(smallest_k_indices(&[0.2, 0.1, 0.1, 0.1], 50.0), vec![1, 2]);
        assert_eq!(select_top_k(&tied, 50.0).len(), 2);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("nonsense".parse::<Strategy>().is_err());
    }

    fn line_dataset() -> Dataset {
        let ts = (0..100)
            .map(|i| {
                let s = i as f64 / 50.0 - 1.0;
                Transition {
                    state: vec![s],
                    action: vec![0.0],
                    reward: 0.0,
                    next_state: vec![2.0 * s],
                    done: false,
                }
            })
            .collect();
        Dataset::new("line", 1, 1, ts).unwrap()
    }

    #[test]
    fn zero_horizon_is_a_config_error() {
        let ds = line_dataset();
        let f = Affine { scale: 2.0, shift: 0.0, noise: 0.1 };
        let g = Affine { scale: 0.5, shift: 0.0, noise: 0.1 };
        let config = RolloutConfig {
            fwd_horizon: 0,
            bwd_horizon: 0,
            batch_size: 10,
            total: 5,
            ..RolloutConfig::default()
        };
        let r = generate(&ds, &affine_pair(&f, &g), &config, Strategy::Cabi, &mut SeededRng::new(0));
        assert!(matches!(r, Err(CabiError::Config(_))));
        let fwd_only = RolloutConfig { fwd_horizon: 2, ..config };
        let r = generate(&ds, &affine_pair(&f, &g), &fwd_only, Strategy::BackwardOnly, &mut SeededRng::new(0));
        assert!(matches!(r, Err(CabiError::Config(_))));
    }

    #[test]
    fn generation_counts_chaining_and_endpoints() {
        let ds = line_dataset();
        let f = Affine { scale: 1.0, shift: 0.1, noise: 0.05 };
        let g = Affine { scale: 1.0, shift: -0.1, noise: 0.05 };
        let models = affine_pair(&f, &g);
        let config = RolloutConfig {
            fwd_horizon: 3,
            bwd_horizon: 2,
            k: 20.0,
            batch_size: 50,
            total: 120,
            ..RolloutConfig::default()
        };
        let (buf, trace) = generate_traced(&ds, &models, &config, Strategy::Cabi, &mut SeededRng::new(4)).unwrap();
        assert_eq!(buf.len(), 120);
        // chaining: the depth-j anchors are the depth-(j-1) imagined states
        let it0: Vec<&StepRecord> = trace.steps.iter().filter(|s| s.iteration == 0).collect();
        let f0 = it0.iter().find(|s| s.direction == Direction::Forward && s.depth == 0).unwrap();
        let f1 = it0.iter().find(|s| s.direction == Direction::Forward && s.depth == 1).unwrap();
        for (a, b) in f0.candidates.iter().zip(&f1.candidates) {
            assert_eq!(a.transition.next_state, b.transition.state);
        }
        let b0 = it0.iter().find(|s| s.direction == Direction::Backward && s.depth == 0).unwrap();
        let b1 = it0.iter().find(|s| s.direction == Direction::Backward && s.depth == 1).unwrap();
        for (a, b) in b0.candidates.iter().zip(&b1.candidates) {
            assert_eq!(a.transition.state, b.transition.next_state);
        }
        // every kept deviation ≤ every rejected deviation in its batch
        for step in &trace.steps {
            let max_kept = step.kept.iter().map(|&i| step.candidates[i].deviation).fold(f64::MIN, f64::max);
            for (i, c) in step.candidates.iter().enumerate() {
                if !step.kept.contains(&i) {
                    assert!(max_kept <= c.deviation);
                }
            }
            assert_eq!(step.kept.len(), 10);
        }

        // k = 100 equals BOMI record for record
        let all = RolloutConfig { k: 100.0, ..config.clone() };
        let a = generate(&ds, &models, &all, Strategy::Cabi, &mut SeededRng::new(4)).unwrap();
        let b = generate(&ds, &models, &all, Strategy::Bomi, &mut SeededRng::new(4)).unwrap();
        assert_eq!(a.transitions, b.transitions);
        // k = 0 generates nothing
        let none = RolloutConfig { k: 0.0, ..config.clone() };
        assert!(generate(&ds, &models, &none, Strategy::Cabi, &mut SeededRng::new(4)).unwrap().is_empty());

        // CABI ⊂ BOMI over the same iterations
        let bomi_total = RolloutConfig {
            total: buf.provenance.iterations * 250,
            ..config.clone()
        };
        let bomi = generate(&ds, &models, &bomi_total, Strategy::Bomi, &mut SeededRng::new(4)).unwrap();
        for t in &buf.transitions {
            assert!(bomi.transitions.contains(t));
        }
    }

    #[test]
    fn generation_is_deterministic_across_exec_modes() {
        let ds = line_dataset();
        let f = Affine { scale: 1.0, shift: 0.1, noise: 0.05 };
        let g = Affine { scale: 1.0, shift: -0.1, noise: 0.05 };
        let models = affine_pair(&f, &g);
        for strategy in Strategy::ALL {
            let seq = RolloutConfig {
                batch_size: 20,
                total: 45,
                exec: Exec::Sequential,
                ..RolloutConfig::default()
            };
            let par_cfg = RolloutConfig { exec: Exec::Parallel, ..seq.clone() };
            let a = generate(&ds, &models, &seq, strategy, &mut SeededRng::new(9)).unwrap();
            let b = generate(&ds, &models, &par_cfg, strategy, &mut SeededRng::new(9)).unwrap();
            assert_eq!(a, b, "{strategy}");
            assert_eq!(a.len(), 45);
        }
    }

    #[test]
    fn ensemble_variance_strategy_prefers_low_variance() {
        let ds = line_dataset();
        let f = Affine { scale: 1.0, shift: 0.0, noise: 0.05 };
        let g = Affine { scale: 1.0, shift: 0.0, noise: 0.05 };
        let models = affine_pair(&f, &g);
        let config = RolloutConfig {
            fwd_horizon: 1,
            bwd_horizon: 0,
            batch_size: 100,
            total: 20,
            ..RolloutConfig::default()
        };
        let (_, trace) =
            generate_traced(&ds, &models, &config, Strategy::EnsembleVarianceK, &mut SeededRng::new(1)).unwrap();
        let step = &trace.steps[0];
        let kept_max = step.kept.iter().map(|&i| step.candidates[i].transition.state[0].abs()).fold(0.0, f64::max);
        for (i, c) in step.candidates.iter().enumerate() {
            if !step.kept.contains(&i) {
                assert!(c.transition.state[0].abs() >= kept_max);
            }
        }
    }
}
