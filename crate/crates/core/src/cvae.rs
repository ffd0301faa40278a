//! Conditional VAE rollout policies.
//!
//! The encoder maps `(condition, action)` to a diagonal Gaussian over a
//! latent `z`; the decoder maps `(condition, z)` back to an action squashed
//! into the action box with a scaled `tanh`. The forward policy conditions
//! on `s`, the backward policy on `s'`. Training minimizes reconstruction
//! error (in normalized action units) plus `kl_weight` times
//! `KL(q(z | c, a) || N(0, I))`. Generation decodes `z ~ N(0, I)` truncated
//! to `±latent_clip`.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, NetSpec};
use crate::data::{norm_stats, Dataset, NormStats};
use crate::dynamics::Direction;
use crate::error::{ensure_dim, CabiError, Result};
use crate::nn::{bound_logvar, diag_gauss_kl_grad, Activation, AdamConfig, AdamState, DenseNet, Gradients};
use crate::rng::SeededRng;

pub const LATENT_CLIP: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ActionBounds {
    pub fn symmetric(dim: usize, bound: f64) -> Self {
        Self {
            low: vec![-bound; dim],
            high: vec![bound; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        a.iter().zip(self.low.iter().zip(&self.high)).all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn center(&self, d: usize) -> f64 {
        0.5 * (self.low[d] + self.high[d])
    }

    pub fn half(&self, d: usize) -> f64 {
        0.5 * (self.high[d] - self.low[d])
    }

    /// `center + half·t` for `t ∈ [-1, 1]`; the clamp absorbs rounding when
    /// `tanh` saturates.
    pub fn squash(&self, d: usize, t: f64) -> f64 {
        (self.center(d) + self.half(d) * t).clamp(self.low[d], self.high[d])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvaeConfig {
    pub hidden: Vec<usize>,
    /// `None` means twice the action dimension.
    pub latent_dim: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub kl_weight: f64,
}

impl Default for CvaeConfig {
    fn default() -> Self {
        Self {
            hidden: vec![750, 750],
            latent_dim: None,
            epochs: 100,
            batch_size: 256,
            lr: 1e-3,
            kl_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvaeMeta {
    pub direction: Direction,
    pub latent_dim: usize,
    pub bounds: ActionBounds,
    pub cond_stats: NormStats,
    pub action_stats: NormStats,
    pub kl_weight: f64,
    pub nets: Vec<NetSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvaeModel {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    latent_dim: usize,
    bounds: ActionBounds,
    direction: Direction,
    cond_stats: NormStats,
    action_stats: NormStats,
    kl_weight: f64,
}

/// Loss terms and gradients for one batch.
#[derive(Debug, Clone)]
pub struct CvaeLoss {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub encoder: Gradients,
    pub decoder: Gradients,
}

impl CvaeModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cond_dim: usize,
        bounds: ActionBounds,
        latent_dim: usize,
        hidden: &[usize],
        direction: Direction,
        cond_stats: NormStats,
        action_stats: NormStats,
        kl_weight: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let ad = bounds.dim();
        ensure_dim(cond_dim, cond_stats.dim())?;
        ensure_dim(ad, action_stats.dim())?;
        let encoder = DenseNet::new(cond_dim + ad, hidden, 2 * latent_dim, Activation::Relu, rng);
        let decoder = DenseNet::new(cond_dim + latent_dim, hidden, ad, Activation::Relu, rng);
        Ok(Self {
            encoder,
            decoder,
            latent_dim,
            bounds,
            direction,
            cond_stats,
            action_stats,
            kl_weight,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_stats.dim()
    }

    pub fn action_dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn bounds(&self) -> &ActionBounds {
        &self.bounds
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    fn norm_conds(&self, conds: ArrayView2<f64>) -> Result<Array2<f64>> {
        ensure_dim(self.cond_dim(), conds.ncols())?;
        let mut c = conds.to_owned();
        self.cond_stats.normalize_cols(&mut c, 0);
        Ok(c)
    }

    fn squash(&self, raw: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn(raw.raw_dim(), |(i, d)| self.bounds.squash(d, raw[[i, d]].tanh()))
    }

    /// Decodes latent rows `z` for raw (unnormalized) conditions.
    pub fn decode(&self, conds: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        ensure_dim(self.latent_dim, z.ncols())?;
        let c = self.norm_conds(conds)?;
        let x = concatenate![Axis(1), c, z];
        Ok(self.squash(&self.decoder.forward_batch(x.view())?))
    }

    /// Encoder mean and bounded log-variance for raw conditions and actions.
    pub fn encode(&self, conds: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        ensure_dim(self.action_dim(), actions.ncols())?;
        let c = self.norm_conds(conds)?;
        let mut a = actions.to_owned();
        self.action_stats.normalize_cols(&mut a, 0);
        let out = self.encoder.forward_batch(concatenate![Axis(1), c, a].view())?;
        let mu = out.slice(s![.., ..self.latent_dim]).to_owned();
        let lv = out.slice(s![.., self.latent_dim..]).mapv(|v| bound_logvar(v).0);
        Ok((mu, lv))
    }

    /// Batch loss with explicit reparameterization noise `eps`
    /// (`rows × latent_dim`), averaged over rows.
    pub fn loss_and_grad(
        &self,
        conds: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        eps: ArrayView2<f64>,
    ) -> Result<CvaeLoss> {
        let (ld, ad) = (self.latent_dim, self.action_dim());
        ensure_dim(ad, actions.ncols())?;
        ensure_dim(ld, eps.ncols())?;
        let b = conds.nrows().max(1) as f64;
        let c = self.norm_conds(conds)?;
        let mut a_norm = actions.to_owned();
        self.action_stats.normalize_cols(&mut a_norm, 0);

        let enc_cache = self.encoder.forward_train(concatenate![Axis(1), c, a_norm].view())?;
        let enc_out = enc_cache.output();
        let mu = enc_out.slice(s![.., ..ld]);
        let raw_lv = enc_out.slice(s![.., ld..]);
        let lv_pairs: Vec<(f64, f64)> = raw_lv.iter().map(|&v| bound_logvar(v)).collect();
        let lv = Array2::from_shape_fn(raw_lv.raw_dim(), |(i, j)| lv_pairs[i * ld + j].0);
        let sigma = lv.mapv(|v| (0.5 * v).exp());
        let z = &mu + &(&sigma * &eps);

        let dec_cache = self.decoder.forward_train(concatenate![Axis(1), c, z].view())?;
        let raw_a = dec_cache.output();
        let tanh = raw_a.mapv(f64::tanh);

        let mut recon = 0.0;
        let mut d_raw_a = Array2::zeros(raw_a.raw_dim());
        for i in 0..raw_a.nrows() {
            for d in 0..ad {
                let a_hat = self.bounds.center(d) + self.bounds.half(d) * tanh[[i, d]];
                let std = self.action_stats.std[d];
                let diff = (a_hat - actions[[i, d]]) / std;
                recon += diff * diff;
                d_raw_a[[i, d]] = 2.0 * diff / std * self.bounds.half(d) * (1.0 - tanh[[i, d]].powi(2)) / b;
            }
        }
        let (dec_grads, d_dec_in) = self.decoder.backward(&dec_cache, d_raw_a.view());
        let d_z = d_dec_in.slice(s![.., self.cond_dim()..]);

        let mut kl = 0.0;
        let mut d_enc = Array2::zeros(enc_out.raw_dim());
        for i in 0..mu.nrows() {
            for j in 0..ld {
                let (m, l) = (mu[[i, j]], lv[[i, j]]);
                kl += 0.5 * (m * m + l.exp() - l - 1.0);
                let (kmu, klv) = diag_gauss_kl_grad(m, l);
                let dz = d_z[[i, j]];
                d_enc[[i, j]] = dz + self.kl_weight * kmu / b;
                let d_lv = dz * 0.5 * sigma[[i, j]] * eps[[i, j]] + self.kl_weight * klv / b;
                d_enc[[i, ld + j]] = d_lv * lv_pairs[i * ld + j].1;
            }
        }
        let (enc_grads, _) = self.encoder.backward(&enc_cache, d_enc.view());
        let reconstruction = recon / b;
        let kl = kl / b;
        let total = reconstruction + self.kl_weight * kl;
        if !total.is_finite() {
            return Err(CabiError::NonFinite("cvae loss".into()));
        }
        Ok(CvaeLoss {
            total,
            reconstruction,
            kl,
            encoder: enc_grads,
            decoder: dec_grads,
        })
    }

    /// Draws one action per condition row with truncated-normal latents.
    pub fn sample_actions(&self, conds: ArrayView2<f64>, rng: &mut SeededRng) -> Result<Array2<f64>> {
        let z = Array2::from_shape_fn((conds.nrows(), self.latent_dim), |_| rng.truncated_normal(LATENT_CLIP));
        self.decode(conds, z.view())
    }

    pub fn sample_action(&self, cond: &[f64], rng: &mut SeededRng) -> Result<Vec<f64>> {
        let c = ArrayView2::from_shape((1, cond.len()), cond).map_err(|e| CabiError::InvalidArgument(e.to_string()))?;
        Ok(self.sample_actions(c, rng)?.row(0).to_vec())
    }

    pub fn meta(&self) -> CvaeMeta {
        CvaeMeta {
            direction: self.direction,
            latent_dim: self.latent_dim,
            bounds: self.bounds.clone(),
            cond_stats: self.cond_stats.clone(),
            action_stats: self.action_stats.clone(),
            kl_weight: self.kl_weight,
            nets: vec![NetSpec::of(&self.encoder), NetSpec::of(&self.decoder)],
        }
    }

    pub fn save(&self, base: &std::path::Path) -> Result<()> {
        checkpoint::save(base, &self.meta(), &checkpoint::pack(&[&self.encoder, &self.decoder]))
    }

    pub fn load(base: &std::path::Path) -> Result<Self> {
        let (meta, blob): (CvaeMeta, Vec<f64>) = checkpoint::load(base)?;
        let mut nets = checkpoint::unpack(&meta.nets, &blob)?;
        if nets.len() != 2 {
            return Err(CabiError::InvalidArgument("cvae checkpoint needs two networks".into()));
        }
        let decoder = nets.pop().expect("two nets");
        let encoder = nets.pop().expect("two nets");
        Ok(Self {
            encoder,
            decoder,
            latent_dim: meta.latent_dim,
            bounds: meta.bounds,
            direction: meta.direction,
            cond_stats: meta.cond_stats,
            action_stats: meta.action_stats,
            kl_weight: meta.kl_weight,
        })
    }
}

/// Mean loss per epoch, in training order.
#[derive(Debug, Clone, PartialEq)]
pub struct CvaeTrainReport {
    pub epoch_losses: Vec<f64>,
}

pub fn train_cvae(
    dataset: &Dataset,
    direction: Direction,
    bounds: ActionBounds,
    config: &CvaeConfig,
    rng: &mut SeededRng,
) -> Result<(CvaeModel, CvaeTrainReport)> {
    if dataset.is_empty() {
        return Err(CabiError::InvalidArgument("cvae training needs a non-empty dataset".into()));
    }
    ensure_dim(dataset.action_dim(), bounds.dim())?;
    let stats = norm_stats(dataset)?;
    let latent = config.latent_dim.unwrap_or(2 * dataset.action_dim());
    let mut model = CvaeModel::new(
        dataset.state_dim(),
        bounds,
        latent,
        &config.hidden,
        direction,
        stats.state.clone(),
        stats.action.clone(),
        config.kl_weight,
        rng,
    )?;
    let n = dataset.len();
    let sd = dataset.state_dim();
    let conds = Array2::from_shape_fn((n, sd), |(i, d)| direction.condition(&dataset.transitions()[i])[d]);
    let batch = dataset.to_batch();
    let actions = batch.actions;
    let mut enc_adam = AdamState::for_net(&model.encoder, AdamConfig::with_lr(config.lr));
    let mut dec_adam = AdamState::for_net(&model.decoder, AdamConfig::with_lr(config.lr));
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let c = conds.select(Axis(0), chunk);
            let a = actions.select(Axis(0), chunk);
            let eps = Array2::from_shape_fn((chunk.len(), latent), |_| rng.normal());
            let loss = model.loss_and_grad(c.view(), a.view(), eps.view()).map_err(|_| CabiError::Diverged {
                what: format!("{direction} cvae"),
                step,
            })?;
            if !loss.encoder.is_finite() || !loss.decoder.is_finite() {
                return Err(CabiError::Diverged {
                    what: format!("{direction} cvae"),
                    step,
                });
            }
            enc_adam.step(&mut model.encoder, &loss.encoder)?;
            dec_adam.step(&mut model.decoder, &loss.decoder)?;
            sum += loss.total * chunk.len() as f64;
            step += 1;
        }
        epoch_losses.push(sum / n as f64);
    }
    Ok((model, CvaeTrainReport { epoch_losses }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Transition;

    fn toy_model(rng: &mut SeededRng) -> CvaeModel {
        CvaeModel::new(
            2,
            ActionBounds::symmetric(2, 0.5),
            4,
            &[7, 6],
            Direction::Forward,
            NormStats {
                mean: vec![0.1, -0.2],
                std: vec![0.9, 1.3],
            },
            NormStats {
                mean: vec![0.0, 0.05],
                std: vec![0.3, 0.25],
            },
            1.0,
            rng,
        )
        .unwrap()
    }

    #[test]
    fn finite_difference_both_networks() {
        let mut rng = SeededRng::new(8);
        let model = toy_model(&mut rng);
        let c = Array2::from_shape_fn((4, 2), |_| rng.normal());
        let a = Array2::from_shape_fn((4, 2), |_| rng.uniform_range(-0.5, 0.5));
        let eps = Array2::from_shape_fn((4, 4), |_| rng.normal());
        let base = model.loss_and_grad(c.view(), a.view(), eps.view()).unwrap();
        let h = 1e-6;
        for which in 0..2 {
            let net = if which == 0 { &model.encoder } else { &model.decoder };
            let analytic = if which == 0 { base.encoder.flat() } else { base.decoder.flat() };
            let params = net.params_flat();
            for i in 0..params.len() {
                let eval = |delta: f64| {
                    let mut m = model.clone();
                    let mut p = params.clone();
                    p[i] += delta;
                    if which == 0 {
                        m.encoder.set_params_flat(&p).unwrap();
                    } else {
                        m.decoder.set_params_flat(&p).unwrap();
                    }
                    m.loss_and_grad(c.view(), a.view(), eps.view()).unwrap().total
                };
                let num = (eval(h) - eval(-h)) / (2.0 * h);
                let denom = num.abs().max(analytic[i].abs()).max(1e-7);
                assert!((num - analytic[i]).abs() / denom < 1e-4, "net {which} param {i}: {num} vs {}", analytic[i]);
            }
        }
    }

    #[test]
    fn kl_term_nonnegative_and_actions_in_bounds() {
        let mut rng = SeededRng::new(2);
        let model = toy_model(&mut rng);
        let c = Array2::from_shape_fn((16, 2), |_| 3.0 * rng.normal());
        let a = Array2::from_shape_fn((16, 2), |_| rng.uniform_range(-0.5, 0.5));
        let eps = Array2::from_shape_fn((16, 4), |_| rng.normal());
        assert!(model.loss_and_grad(c.view(), a.view(), eps.view()).unwrap().kl >= 0.0);
        let z = Array2::from_shape_fn((16, 4), |_| 50.0 * rng.normal());
        let acts = model.decode(c.view(), z.view()).unwrap();
        for row in acts.outer_iter() {
            assert!(model.bounds().contains(row.as_slice().unwrap()));
        }
    }

    #[test]
    fn zero_latent_decoding_is_deterministic_and_sampling_reproducible() {
        let mut rng = SeededRng::new(3);
        let model = toy_model(&mut rng);
        let c = ndarray::array![[0.3, -0.4]];
        let z = Array2::zeros((1, 4));
        assert_eq!(model.decode(c.view(), z.view()).unwrap(), model.decode(c.view(), z.view()).unwrap());
        let a1 = model.sample_action(&[0.3, -0.4], &mut SeededRng::new(10)).unwrap();
        let a2 = model.sample_action(&[0.3, -0.4], &mut SeededRng::new(10)).unwrap();
        assert_eq!(a1, a2);
    }

    #[test]
    fn repeated_pair_is_reconstructed() {
        // A single (s, a) pair repeated: the decoder should learn to emit a.
        let t = Transition {
            state: vec![0.4, -0.7],
            action: vec![0.3, -0.2],
            reward: 0.0,
            next_state: vec![0.7, -0.9],
            done: false,
        };
        // a sprinkle of jitter so the normalization has non-degenerate scale
        let mut rng = SeededRng::new(0);
        let mut ts = vec![t.clone(); 256];
        for x in ts.iter_mut().skip(200) {
            x.state = vec![rng.uniform_range(-1.5, 1.5), rng.uniform_range(-1.5, 1.5)];
        }
        let ds = Dataset::new("toy", 2, 2, ts).unwrap();
        let config = CvaeConfig {
            hidden: vec![32, 32],
            epochs: 150,
            batch_size: 64,
            ..CvaeConfig::default()
        };
        let (model, report) =
            train_cvae(&ds, Direction::Forward, ActionBounds::symmetric(2, 0.5), &config, &mut SeededRng::new(1))
                .unwrap();
        assert!(report.epoch_losses.last().unwrap() < &report.epoch_losses[0]);
        let c = ndarray::array![[0.4, -0.7]];
        let a = model.decode(c.view(), Array2::zeros((1, 4)).view()).unwrap();
        assert!((a[[0, 0]] - 0.3).abs() < 0.05 && (a[[0, 1]] + 0.2).abs() < 0.05, "{a:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = SeededRng::new(4);
        let model = toy_model(&mut rng);
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("cvae");
        model.save(&base).unwrap();
        assert_eq!(CvaeModel::load(&base).unwrap(), model);
    }
}
