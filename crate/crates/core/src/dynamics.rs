//! Probabilistic forward and backward dynamics ensembles.
//!
//! Each member is a dense network emitting a diagonal Gaussian over the
//! concatenated `(state, reward)` target. The forward model conditions on
//! `(s, a)` and predicts `(s', r)`; the backward model conditions on
//! `(s', a)` and predicts `(s, r)`. Members are trained by Gaussian NLL on
//! bootstrap resamples of the training split and ranked by holdout NLL; the
//! best `elites` of them serve predictions.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, NetSpec};
use crate::data::{norm_stats, DataStats, Dataset, Transition};
use crate::error::{ensure_dim, CabiError, Result};
use crate::nn::{bound_logvar, gaussian_nll_batch, Activation, AdamConfig, AdamState, DenseNet, Gradients};
use crate::par::{self, Exec};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }

    /// The state a model of this direction conditions on.
    pub fn condition(self, t: &Transition) -> &[f64] {
        match self {
            Direction::Forward => &t.state,
            Direction::Backward => &t.next_state,
        }
    }

    /// The state a model of this direction predicts.
    pub fn target(self, t: &Transition) -> &[f64] {
        match self {
            Direction::Forward => &t.next_state,
            Direction::Backward => &t.state,
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub members: usize,
    pub elites: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub holdout: usize,
    pub normalize: bool,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![400; 4],
            members: 7,
            elites: 5,
            epochs: 100,
            batch_size: 256,
            lr: 1e-3,
            holdout: 1000,
            normalize: true,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    Sample,
    Mean,
}

/// One Gaussian network: output is `[mean | raw logvar]` over `state_dim + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDynamicsModel {
    pub net: DenseNet,
    target_dim: usize,
}

impl GaussianDynamicsModel {
    pub fn new(input_dim: usize, target_dim: usize, hidden: &[usize], rng: &mut SeededRng) -> Self {
        Self {
            net: DenseNet::new(input_dim, hidden, 2 * target_dim, Activation::Swish, rng),
            target_dim,
        }
    }

    pub fn from_net(net: DenseNet) -> Result<Self> {
        if net.output_dim() % 2 != 0 {
            return Err(CabiError::InvalidArgument("gaussian head needs an even output width".into()));
        }
        let target_dim = net.output_dim() / 2;
        Ok(Self { net, target_dim })
    }

    /// Mean and bounded log-variance in normalized units.
    pub fn predict(&self, inputs: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let out = self.net.forward_batch(inputs)?;
        let mean = out.slice(s![.., ..self.target_dim]).to_owned();
        let logvar = out.slice(s![.., self.target_dim..]).mapv(|v| bound_logvar(v).0);
        Ok((mean, logvar))
    }

    /// Mean NLL over rows and its parameter gradient.
    pub fn loss_and_grad(&self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<(f64, Gradients)> {
        let cache = self.net.forward_train(inputs)?;
        let out = cache.output();
        let td = self.target_dim;
        let mean = out.slice(s![.., ..td]);
        let raw = out.slice(s![.., td..]);
        let bounded: Vec<(f64, f64)> = raw.iter().map(|&v| bound_logvar(v)).collect();
        let logvar = Array2::from_shape_fn(raw.raw_dim(), |(i, j)| bounded[i * td + j].0);
        let (loss, d_mean, mut d_logvar) = gaussian_nll_batch(mean, logvar.view(), targets)?;
        for ((i, j), d) in d_logvar.indexed_iter_mut() {
            *d *= bounded[i * td + j].1;
        }
        let d_out = concatenate![Axis(1), d_mean, d_logvar];
        let (grads, _) = self.net.backward(&cache, d_out.view());
        Ok((loss, grads))
    }

    pub fn nll(&self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64> {
        let mut total = 0.0;
        let n = inputs.nrows();
        let chunk = 2048;
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let (mean, logvar) = self.predict(inputs.slice(s![start..end, ..]))?;
            let (l, _, _) = gaussian_nll_batch(mean.view(), logvar.view(), targets.slice(s![start..end, ..]))?;
            total += l * (end - start) as f64;
            start = end;
        }
        Ok(total / n.max(1) as f64)
    }
}

/// Indices of the `k` smallest losses, ascending by loss then index.
pub fn select_elites(losses: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..losses.len()).collect();
    idx.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub direction: Direction,
    pub state_dim: usize,
    pub action_dim: usize,
    pub stats: DataStats,
    pub elites: Vec<usize>,
    pub holdout_losses: Vec<f64>,
    pub initial_holdout_losses: Vec<f64>,
    pub nets: Vec<NetSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    direction: Direction,
    state_dim: usize,
    action_dim: usize,
    stats: DataStats,
    members: Vec<GaussianDynamicsModel>,
    elites: Vec<usize>,
    holdout_losses: Vec<f64>,
    initial_holdout_losses: Vec<f64>,
}

/// Normalized `[cond | action]` inputs and `[state | reward]` targets.
fn design(ds: &Dataset, direction: Direction, stats: &DataStats) -> (Array2<f64>, Array2<f64>) {
    let (sd, ad) = (ds.state_dim(), ds.action_dim());
    let n = ds.len();
    let mut x = Array2::zeros((n, sd + ad));
    let mut y = Array2::zeros((n, sd + 1));
    for (i, t) in ds.transitions().iter().enumerate() {
        let c = stats.state.normalize(direction.condition(t));
        let a = stats.action.normalize(&t.action);
        let tg = stats.state.normalize(direction.target(t));
        let r = stats.reward.normalize(&[t.reward]);
        for d in 0..sd {
            x[[i, d]] = c[d];
            y[[i, d]] = tg[d];
        }
        for d in 0..ad {
            x[[i, sd + d]] = a[d];
        }
        y[[i, sd]] = r[0];
    }
    (x, y)
}

struct MemberResult {
    model: GaussianDynamicsModel,
    initial: f64,
    holdout: f64,
}

fn train_member(
    index: usize,
    direction: Direction,
    x: &Array2<f64>,
    y: &Array2<f64>,
    hx: &Array2<f64>,
    hy: &Array2<f64>,
    config: &ModelConfig,
    mut rng: SeededRng,
) -> Result<MemberResult> {
    let what = || format!("{direction} ensemble member {index}");
    let model_init = GaussianDynamicsModel::new(x.ncols(), y.ncols(), &config.hidden, &mut rng);
    let mut model = model_init;
    let initial = model.nll(hx.view(), hy.view())?;
    let mut adam = AdamState::for_net(&model.net, AdamConfig::with_lr(config.lr));
    let n = x.nrows();
    let mut boot: Vec<usize> = (0..n).map(|_| rng.index(n)).collect();
    let mut step = 0;
    for _ in 0..config.epochs {
        rng.shuffle(&mut boot);
        for chunk in boot.chunks(config.batch_size.max(1)) {
            let bx = x.select(Axis(0), chunk);
            let by = y.select(Axis(0), chunk);
            let (loss, grads) = model
                .loss_and_grad(bx.view(), by.view())
                .map_err(|_| CabiError::Diverged { what: what(), step })?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(CabiError::Diverged { what: what(), step });
            }
            adam.step(&mut model.net, &grads)?;
            step += 1;
        }
    }
    let holdout = model.nll(hx.view(), hy.view())?;
    if !holdout.is_finite() {
        return Err(CabiError::Diverged { what: what(), step });
    }
    Ok(MemberResult { model, initial, holdout })
}

/// Trains a bootstrapped ensemble and ranks members on `holdout`.
pub fn train_ensemble(
    train: &Dataset,
    holdout: &Dataset,
    direction: Direction,
    config: &ModelConfig,
    rng: &mut SeededRng,
) -> Result<Ensemble> {
    if train.is_empty() || holdout.is_empty() {
        return Err(CabiError::InvalidArgument("ensemble training needs non-empty train and holdout sets".into()));
    }
    if config.epochs == 0 || config.members == 0 || config.elites == 0 || config.elites > config.members {
        return Err(CabiError::Config(format!(
            "epochs {} members {} elites {}",
            config.epochs, config.members, config.elites
        )));
    }
    ensure_dim(train.state_dim(), holdout.state_dim())?;
    ensure_dim(train.action_dim(), holdout.action_dim())?;
    let stats = if config.normalize {
        norm_stats(train)?
    } else {
        DataStats::identity(train.state_dim(), train.action_dim())
    };
    let (x, y) = design(train, direction, &stats);
    let (hx, hy) = design(holdout, direction, &stats);
    let base = rng.fork();
    let results = par::map_indexed(config.exec, config.members, |i| {
        train_member(i, direction, &x, &y, &hx, &hy, config, base.stream(i as u64))
    });
    let mut members = Vec::with_capacity(config.members);
    let mut losses = Vec::with_capacity(config.members);
    let mut initial = Vec::with_capacity(config.members);
    for r in results {
        let r = r?;
        members.push(r.model);
        losses.push(r.holdout);
        initial.push(r.initial);
    }
    let elites = select_elites(&losses, config.elites);
    Ok(Ensemble {
        direction,
        state_dim: train.state_dim(),
        action_dim: train.action_dim(),
        stats,
        members,
        elites,
        holdout_losses: losses,
        initial_holdout_losses: initial,
    })
}

impl Ensemble {
    /// Assembles an ensemble from already-built members (elite ranking by
    /// the given losses).
    pub fn from_members(
        direction: Direction,
        state_dim: usize,
        action_dim: usize,
        stats: DataStats,
        members: Vec<GaussianDynamicsModel>,
        holdout_losses: Vec<f64>,
        elites: usize,
    ) -> Result<Self> {
        ensure_dim(members.len(), holdout_losses.len())?;
        for m in &members {
            ensure_dim(state_dim + action_dim, m.net.input_dim())?;
            ensure_dim(2 * (state_dim + 1), m.net.output_dim())?;
        }
        let elites = select_elites(&holdout_losses, elites);
        Ok(Self {
            direction,
            state_dim,
            action_dim,
            stats,
            members,
            elites,
            initial_holdout_losses: holdout_losses.clone(),
            holdout_losses,
        })
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn stats(&self) -> &DataStats {
        &self.stats
    }

    pub fn members(&self) -> &[GaussianDynamicsModel] {
        &self.members
    }

    pub fn elites(&self) -> &[usize] {
        &self.elites
    }

    pub fn holdout_losses(&self) -> &[f64] {
        &self.holdout_losses
    }

    pub fn initial_holdout_losses(&self) -> &[f64] {
        &self.initial_holdout_losses
    }

    fn ensure_trained(&self) -> Result<()> {
        if self.elites.is_empty() || self.members.is_empty() {
            Err(CabiError::Untrained(format!("{} ensemble has no elites", self.direction)))
        } else {
            Ok(())
        }
    }

    fn inputs(&self, conds: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
        ensure_dim(self.state_dim, conds.ncols())?;
        ensure_dim(self.action_dim, actions.ncols())?;
        ensure_dim(conds.nrows(), actions.nrows())?;
        let mut x = concatenate![Axis(1), conds, actions];
        self.stats.state.normalize_cols(&mut x, 0);
        self.stats.action.normalize_cols(&mut x, self.state_dim);
        Ok(x)
    }

    fn denormalize(&self, mut y: Array2<f64>) -> (Array2<f64>, Array1<f64>) {
        self.stats.state.denormalize_cols(&mut y, 0);
        self.stats.reward.denormalize_cols(&mut y, self.state_dim);
        let rewards = y.column(self.state_dim).to_owned();
        let states = y.slice(s![.., ..self.state_dim]).to_owned();
        (states, rewards)
    }

    /// Prediction where row `i` uses elite position `choice[i]`.
    fn predict_with_choices(
        &self,
        x: &Array2<f64>,
        choice: &[usize],
        noise: Option<&Array2<f64>>,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        let td = self.state_dim + 1;
        let mut y = Array2::zeros((x.nrows(), td));
        for (pos, &member) in self.elites.iter().enumerate() {
            let rows: Vec<usize> = (0..x.nrows()).filter(|&i| choice[i] == pos).collect();
            if rows.is_empty() {
                continue;
            }
            let (mean, logvar) = self.members[member].predict(x.select(Axis(0), &rows).view())?;
            for (k, &i) in rows.iter().enumerate() {
                for d in 0..td {
                    let mut v = mean[[k, d]];
                    if let Some(eps) = noise {
                        v += (0.5 * logvar[[k, d]]).exp() * eps[[i, d]];
                    }
                    y[[i, d]] = v;
                }
            }
        }
        Ok(self.denormalize(y))
    }

    /// One uniformly chosen elite per row; `Sample` draws from its Gaussian,
    /// `Mean` returns its mean. Outputs are in data units.
    pub fn predict_batch(
        &self,
        conds: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        mode: PredictMode,
        rng: &mut SeededRng,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        self.ensure_trained()?;
        let x = self.inputs(conds, actions)?;
        let choice: Vec<usize> = (0..x.nrows()).map(|_| rng.index(self.elites.len())).collect();
        let noise = match mode {
            PredictMode::Sample => Some(Array2::from_shape_fn((x.nrows(), self.state_dim + 1), |_| rng.normal())),
            PredictMode::Mean => None,
        };
        self.predict_with_choices(&x, &choice, noise.as_ref())
    }

    /// Single-input convenience wrapper around [`Ensemble::predict_batch`].
    pub fn predict(
        &self,
        cond: &[f64],
        action: &[f64],
        mode: PredictMode,
        rng: &mut SeededRng,
    ) -> Result<(Vec<f64>, f64)> {
        let c = ArrayView2::from_shape((1, cond.len()), cond).map_err(|e| CabiError::InvalidArgument(e.to_string()))?;
        let a = ArrayView2::from_shape((1, action.len()), action)
            .map_err(|e| CabiError::InvalidArgument(e.to_string()))?;
        let (s, r) = self.predict_batch(c, a, mode, rng)?;
        Ok((s.row(0).to_vec(), r[0]))
    }

    /// Mean prediction of the elite at position `pos` for every row.
    pub fn predict_elite_mean(
        &self,
        pos: usize,
        conds: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        self.ensure_trained()?;
        if pos >= self.elites.len() {
            return Err(CabiError::InvalidArgument(format!("elite position {pos}")));
        }
        let x = self.inputs(conds, actions)?;
        self.predict_with_choices(&x, &vec![pos; x.nrows()], None)
    }

    /// Average of the elite means, deterministic.
    pub fn predict_mean(&self, conds: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.ensure_trained()?;
        let x = self.inputs(conds, actions)?;
        let mut acc = Array2::<f64>::zeros((x.nrows(), self.state_dim + 1));
        for &m in &self.elites {
            acc += &self.members[m].predict(x.view())?.0;
        }
        acc /= self.elites.len() as f64;
        Ok(self.denormalize(acc))
    }

    /// Per row: variance across elites of their mean next-state predictions,
    /// averaged over state dimensions (data units).
    pub fn member_variance(&self, conds: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.ensure_trained()?;
        let x = self.inputs(conds, actions)?;
        let preds: Vec<Array2<f64>> = self
            .elites
            .iter()
            .map(|&m| self.members[m].predict(x.view()).map(|(mean, _)| self.denormalize(mean).0))
            .collect::<Result<_>>()?;
        let k = preds.len() as f64;
        let mut out = Array1::zeros(x.nrows());
        for i in 0..x.nrows() {
            let mut total = 0.0;
            for d in 0..self.state_dim {
                let mu = preds.iter().map(|p| p[[i, d]]).sum::<f64>() / k;
                total += preds.iter().map(|p| (p[[i, d]] - mu).powi(2)).sum::<f64>() / k;
            }
            out[i] = total / self.state_dim as f64;
        }
        Ok(out)
    }

    pub fn meta(&self) -> EnsembleMeta {
        EnsembleMeta {
            direction: self.direction,
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            stats: self.stats.clone(),
            elites: self.elites.clone(),
            holdout_losses: self.holdout_losses.clone(),
            initial_holdout_losses: self.initial_holdout_losses.clone(),
            nets: self.members.iter().map(|m| NetSpec::of(&m.net)).collect(),
        }
    }

    pub fn save(&self, base: &std::path::Path) -> Result<()> {
        let nets: Vec<&DenseNet> = self.members.iter().map(|m| &m.net).collect();
        checkpoint::save(base, &self.meta(), &checkpoint::pack(&nets))
    }

    pub fn load(base: &std::path::Path) -> Result<Self> {
        let (meta, blob): (EnsembleMeta, Vec<f64>) = checkpoint::load(base)?;
        let members = checkpoint::unpack(&meta.nets, &blob)?
            .into_iter()
            .map(GaussianDynamicsModel::from_net)
            .collect::<Result<Vec<_>>>()?;
        if meta.elites.iter().any(|&e| e >= members.len()) {
            return Err(CabiError::InvalidArgument("elite index out of range".into()));
        }
        Ok(Self {
            direction: meta.direction,
            state_dim: meta.state_dim,
            action_dim: meta.action_dim,
            stats: meta.stats,
            members,
            elites: meta.elites,
            holdout_losses: meta.holdout_losses,
            initial_holdout_losses: meta.initial_holdout_losses,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elites_are_the_five_smallest() {
        let losses = [1.2, 0.5, 0.9, 2.0, 0.7, 1.5, 0.3];
        assert_eq!(select_elites(&losses, 5), vec![6, 1, 4, 2, 0]);
    }

    #[test]
    fn elite_losses_invariant_under_permutation() {
        let losses = [1.2, 0.5, 0.9, 2.0, 0.7, 1.5, 0.3];
        let perm = [3, 0, 6, 2, 5, 1, 4];
        let shuffled: Vec<f64> = perm.iter().map(|&i| losses[i]).collect();
        let mut a: Vec<f64> = select_elites(&losses, 5).iter().map(|&i| losses[i]).collect();
        let mut b: Vec<f64> = select_elites(&shuffled, 5).iter().map(|&i| shuffled[i]).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_model_finite_difference() {
        let mut rng = SeededRng::new(21);
        let model = GaussianDynamicsModel::new(4, 3, &[6, 5], &mut rng);
        let x = Array2::from_shape_fn((5, 4), |_| rng.normal());
        let y = Array2::from_shape_fn((5, 3), |_| rng.normal());
        let (_, grads) = model.loss_and_grad(x.view(), y.view()).unwrap();
        let analytic = grads.flat();
        let params = model.net.params_flat();
        let h = 1e-6;
        let loss_at = |p: &[f64]| {
            let mut m = model.clone();
            m.net.set_params_flat(p).unwrap();
            m.loss_and_grad(x.view(), y.view()).unwrap().0
        };
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let lp = loss_at(&p);
            p[i] -= 2.0 * h;
            let lm = loss_at(&p);
            let num = (lp - lm) / (2.0 * h);
            let denom = num.abs().max(analytic[i].abs()).max(1e-7);
            assert!((num - analytic[i]).abs() / denom < 1e-4, "param {i}: {num} vs {}", analytic[i]);
        }
    }

    fn identical_ensemble() -> Ensemble {
        let mut rng = SeededRng::new(0);
        let m = GaussianDynamicsModel::new(4, 3, &[8], &mut rng);
        Ensemble::from_members(
            Direction::Forward,
            2,
            2,
            DataStats::identity(2, 2),
            vec![m; 7],
            vec![0.0; 7],
            5,
        )
        .unwrap()
    }

    #[test]
    fn identical_members_have_zero_variance() {
        let ens = identical_ensemble();
        let mut rng = SeededRng::new(1);
        let c = Array2::from_shape_fn((10, 2), |_| rng.normal());
        let a = Array2::from_shape_fn((10, 2), |_| rng.normal());
        let v = ens.member_variance(c.view(), a.view()).unwrap();
        assert!(v.iter().all(|&x| x.abs() < 1e-20));
    }

    #[test]
    fn mean_prediction_with_single_elite_is_deterministic() {
        let mut rng = SeededRng::new(0);
        let members: Vec<_> = (0..3).map(|_| GaussianDynamicsModel::new(4, 3, &[8], &mut rng)).collect();
        let ens =
            Ensemble::from_members(Direction::Forward, 2, 2, DataStats::identity(2, 2), members, vec![0.1, 0.2, 0.3], 1)
                .unwrap();
        let a = ens.predict(&[0.1, 0.2], &[0.0, 0.1], PredictMode::Mean, &mut SeededRng::new(1)).unwrap();
        let b = ens.predict(&[0.1, 0.2], &[0.0, 0.1], PredictMode::Mean, &mut SeededRng::new(2)).unwrap();
        assert_eq!(a, b);
        let s1 = ens.predict(&[0.1, 0.2], &[0.0, 0.1], PredictMode::Sample, &mut SeededRng::new(5)).unwrap();
        let s2 = ens.predict(&[0.1, 0.2], &[0.0, 0.1], PredictMode::Sample, &mut SeededRng::new(5)).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn empty_ensemble_is_untrained() {
        let ens = Ensemble::from_members(Direction::Backward, 2, 2, DataStats::identity(2, 2), vec![], vec![], 5)
            .unwrap();
        let r = ens.predict(&[0.0, 0.0], &[0.0, 0.0], PredictMode::Mean, &mut SeededRng::new(0));
        assert!(matches!(r, Err(CabiError::Untrained(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let ens = identical_ensemble();
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("fwd");
        ens.save(&base).unwrap();
        assert_eq!(Ensemble::load(&base).unwrap(), ens);
    }
}
