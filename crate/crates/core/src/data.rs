//! Transitions, datasets, persistence, normalization and real/synthetic
//! batch mixing.
//!
//! # CABI-DS v1
//!
//! A dataset at base path `p` is two files:
//!
//! * `p.json`: `{"format": "CABI-DS v1", "env", "state_dim", "action_dim",
//!   "count", "seed"}`
//! * `p.bin`: `count` records of little-endian `f32`, each laid out as
//!   `[s | a | r | s' | done]` with `done` stored as `0.0` or `1.0`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, CabiError, Result};
use crate::rng::SeededRng;

pub const FORMAT_TAG: &str = "CABI-DS v1";
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: String,
    pub env: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub count: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    env: String,
    state_dim: usize,
    action_dim: usize,
    seed: Option<u64>,
    transitions: Vec<Transition>,
}

impl Dataset {
    pub fn new(
        env: impl Into<String>,
        state_dim: usize,
        action_dim: usize,
        transitions: Vec<Transition>,
    ) -> Result<Self> {
        for t in &transitions {
            ensure_dim(state_dim, t.state.len())?;
            ensure_dim(state_dim, t.next_state.len())?;
            ensure_dim(action_dim, t.action.len())?;
            if !t.reward.is_finite() {
                return Err(CabiError::NonFinite("transition reward".into()));
            }
        }
        Ok(Self {
            env: env.into(),
            state_dim,
            action_dim,
            seed: None,
            transitions,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn env(&self) -> &str {
        &self.env
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn into_transitions(self) -> Vec<Transition> {
        self.transitions
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            format: FORMAT_TAG.to_string(),
            env: self.env.clone(),
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            count: self.len(),
            seed: self.seed,
        }
    }

    /// A dataset with the same metadata holding `transitions`.
    pub fn with_transitions(&self, transitions: Vec<Transition>) -> Result<Self> {
        let mut ds = Dataset::new(self.env.clone(), self.state_dim, self.action_dim, transitions)?;
        ds.seed = self.seed;
        Ok(ds)
    }

    fn record_width(&self) -> usize {
        2 * self.state_dim + self.action_dim + 2
    }

    pub fn to_batch(&self) -> Batch {
        Batch::from_transitions(self.transitions.iter(), self.state_dim, self.action_dim, self.len())
    }
}

/// Sidecar and record paths for a dataset stored at `base`.
pub fn dataset_paths(base: &Path) -> (PathBuf, PathBuf) {
    (append_ext(base, "json"), append_ext(base, "bin"))
}

fn append_ext(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn save(dataset: &Dataset, base: &Path) -> Result<()> {
    let (meta_path, bin_path) = dataset_paths(base);
    if let Some(dir) = base.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut bytes = Vec::with_capacity(dataset.len() * dataset.record_width() * 4);
    let mut push = |v: f64| bytes.extend_from_slice(&(v as f32).to_le_bytes());
    for t in &dataset.transitions {
        t.state.iter().for_each(|&v| push(v));
        t.action.iter().for_each(|&v| push(v));
        push(t.reward);
        t.next_state.iter().for_each(|&v| push(v));
        push(if t.done { 1.0 } else { 0.0 });
    }
    fs::write(&bin_path, bytes)?;
    fs::write(&meta_path, serde_json::to_string_pretty(&dataset.meta())?)?;
    Ok(())
}

pub fn load(base: &Path) -> Result<Dataset> {
    let (meta_path, bin_path) = dataset_paths(base);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| CabiError::load(&meta_path, e.to_string()))?;
    let meta: DatasetMeta =
        serde_json::from_str(&meta_text).map_err(|e| CabiError::load(&meta_path, format!("malformed header: {e}")))?;
    if meta.format != FORMAT_TAG {
        return Err(CabiError::load(&meta_path, format!("unknown format {:?}", meta.format)));
    }
    if meta.state_dim == 0 || meta.action_dim == 0 {
        return Err(CabiError::load(&meta_path, "zero state or action dimension"));
    }
    let bytes = fs::read(&bin_path).map_err(|e| CabiError::load(&bin_path, e.to_string()))?;
    let width = 2 * meta.state_dim + meta.action_dim + 2;
    let expected = meta.count * width * 4;
    if bytes.len() != expected {
        return Err(CabiError::load(
            &bin_path,
            format!("expected {expected} bytes for {} records, found {}", meta.count, bytes.len()),
        ));
    }
    let floats: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let (sd, ad) = (meta.state_dim, meta.action_dim);
    let mut transitions = Vec::with_capacity(meta.count);
    for (i, rec) in floats.chunks_exact(width).enumerate() {
        let done = rec[width - 1];
        if done != 0.0 && done != 1.0 {
            return Err(CabiError::load(&bin_path, format!("record {i}: done flag {done}")));
        }
        transitions.push(Transition {
            state: rec[..sd].to_vec(),
            action: rec[sd..sd + ad].to_vec(),
            reward: rec[sd + ad],
            next_state: rec[sd + ad + 1..2 * sd + ad + 1].to_vec(),
            done: done == 1.0,
        });
    }
    let mut ds =
        Dataset::new(meta.env, sd, ad, transitions).map_err(|e| CabiError::load(&bin_path, e.to_string()))?;
    ds.seed = meta.seed;
    Ok(ds)
}

/// Holdout size actually used for a request of `n` on `count` records:
/// `n` itself, or 10% (at least one) when the data has fewer than `10·n`.
pub fn holdout_size(count: usize, n: usize) -> usize {
    if count < 10 * n {
        (count / 10).max(1)
    } else {
        n
    }
}

/// Seeded disjoint split into `(train, holdout)`.
pub fn split_holdout(dataset: &Dataset, n: usize, rng: &mut SeededRng) -> Result<(Dataset, Dataset)> {
    if n >= dataset.len() {
        return Err(CabiError::InvalidArgument(format!(
            "holdout of {n} from a dataset of {}",
            dataset.len()
        )));
    }
    let n = holdout_size(dataset.len(), n);
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    rng.shuffle(&mut idx);
    let mut hold: Vec<usize> = idx[..n].to_vec();
    let mut train: Vec<usize> = idx[n..].to_vec();
    hold.sort_unstable();
    train.sort_unstable();
    let pick = |ids: &[usize]| ids.iter().map(|&i| dataset.transitions[i].clone()).collect();
    Ok((dataset.with_transitions(pick(&train))?, dataset.with_transitions(pick(&hold))?))
}

/// Per-dimension mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        for r in &rows {
            ensure_dim(dim, r.len())?;
            n += 1;
            for d in 0..dim {
                sum[d] += r[d];
            }
        }
        if n == 0 {
            return Err(CabiError::InvalidArgument("normalization stats of an empty set".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        for r in &rows {
            for d in 0..dim {
                sq[d] += (r[d] - mean[d]).powi(2);
            }
        }
        let std = sq.iter().map(|s| (s / n as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    /// Normalizes columns `offset..offset+dim` of `m` in place.
    pub fn normalize_cols(&self, m: &mut Array2<f64>, offset: usize) {
        for mut row in m.rows_mut() {
            for d in 0..self.dim() {
                row[offset + d] = (row[offset + d] - self.mean[d]) / self.std[d];
            }
        }
    }

    pub fn denormalize_cols(&self, m: &mut Array2<f64>, offset: usize) {
        for mut row in m.rows_mut() {
            for d in 0..self.dim() {
                row[offset + d] = row[offset + d] * self.std[d] + self.mean[d];
            }
        }
    }
}

/// Statistics for every field a model consumes or predicts. State statistics
/// pool `s` and `s'` so that forward and backward models share one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataStats {
    pub state: NormStats,
    pub action: NormStats,
    pub reward: NormStats,
}

impl DataStats {
    pub fn identity(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state: NormStats::identity(state_dim),
            action: NormStats::identity(action_dim),
            reward: NormStats::identity(1),
        }
    }
}

pub fn norm_stats(dataset: &Dataset) -> Result<DataStats> {
    let ts = dataset.transitions();
    let states = ts.iter().flat_map(|t| [t.state.as_slice(), t.next_state.as_slice()]);
    let rewards: Vec<[f64; 1]> = ts.iter().map(|t| [t.reward]).collect();
    Ok(DataStats {
        state: NormStats::from_rows(states, dataset.state_dim())?,
        action: NormStats::from_rows(ts.iter().map(|t| t.action.as_slice()), dataset.action_dim())?,
        reward: NormStats::from_rows(rewards.iter().map(|r| r.as_slice()), 1)?,
    })
}

/// Column-major view of a set of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub dones: Array1<f64>,
}

impl Batch {
    pub fn from_transitions<'a>(
        ts: impl Iterator<Item = &'a Transition>,
        state_dim: usize,
        action_dim: usize,
        capacity: usize,
    ) -> Self {
        let mut s = Vec::with_capacity(capacity * state_dim);
        let mut a = Vec::with_capacity(capacity * action_dim);
        let mut r = Vec::with_capacity(capacity);
        let mut s2 = Vec::with_capacity(capacity * state_dim);
        let mut d = Vec::with_capacity(capacity);
        for t in ts {
            s.extend_from_slice(&t.state);
            a.extend_from_slice(&t.action);
            r.push(t.reward);
            s2.extend_from_slice(&t.next_state);
            d.push(if t.done { 1.0 } else { 0.0 });
        }
        let n = r.len();
        Self {
            states: Array2::from_shape_vec((n, state_dim), s).expect("state rows"),
            actions: Array2::from_shape_vec((n, action_dim), a).expect("action rows"),
            rewards: Array1::from(r),
            next_states: Array2::from_shape_vec((n, state_dim), s2).expect("next state rows"),
            dones: Array1::from(d),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Draws training batches with a fixed share `eta` of real transitions.
#[derive(Debug, Clone, Copy)]
pub struct MixedSampler<'a> {
    real: &'a Dataset,
    synthetic: &'a [Transition],
    eta: f64,
}

/// Real-record count in a batch of `n`: `floor(eta·n)`.
pub fn real_count(eta: f64, n: usize) -> usize {
    // tolerance absorbs representation error such as 0.7·10 = 7.000000000000001
    ((eta * n as f64) + 1e-9).floor() as usize
}

impl<'a> MixedSampler<'a> {
    pub fn new(real: &'a Dataset, synthetic: &'a [Transition], eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(CabiError::InvalidArgument(format!("real-data ratio {eta} outside [0, 1]")));
        }
        Ok(Self { real, synthetic, eta })
    }

    /// Sampler that falls back to real data only when `synthetic` is empty.
    pub fn with_fallback(real: &'a Dataset, synthetic: &'a [Transition], eta: f64) -> Result<Self> {
        let eta = if synthetic.is_empty() { 1.0 } else { eta };
        Self::new(real, synthetic, eta)
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn real(&self) -> &'a Dataset {
        self.real
    }

    pub fn synthetic(&self) -> &'a [Transition] {
        self.synthetic
    }

    /// Indices of a mixed batch: `(from_real, index)` pairs, shuffled.
    pub fn draw(&self, n: usize, rng: &mut SeededRng) -> Result<Vec<(bool, usize)>> {
        let n_real = real_count(self.eta, n);
        let n_syn = n - n_real;
        if n_real > 0 && self.real.is_empty() {
            return Err(CabiError::Sampling("real dataset is empty".into()));
        }
        if n_syn > 0 && self.synthetic.is_empty() {
            return Err(CabiError::Sampling("model buffer is empty".into()));
        }
        let mut picks = Vec::with_capacity(n);
        for _ in 0..n_real {
            picks.push((true, rng.index(self.real.len())));
        }
        for _ in 0..n_syn {
            picks.push((false, rng.index(self.synthetic.len())));
        }
        rng.shuffle(&mut picks);
        Ok(picks)
    }

    pub fn mixed_batch(&self, n: usize, rng: &mut SeededRng) -> Result<Batch> {
        let picks = self.draw(n, rng)?;
        let real = self.real.transitions();
        let it = picks
            .iter()
            .map(|&(is_real, i)| if is_real { &real[i] } else { &self.synthetic[i] });
        Ok(Batch::from_transitions(it, self.real.state_dim(), self.real.action_dim(), n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env;

    fn tiny(n: usize) -> Dataset {
        let ts = (0..n)
            .map(|i| Transition {
                state: vec![i as f64, 0.5],
                action: vec![0.125],
                reward: i as f64 * 0.25,
                next_state: vec![i as f64 + 1.0, -0.5],
                done: i % 3 == 0,
            })
            .collect();
        Dataset::new("tiny", 2, 1, ts).unwrap().with_seed(11)
    }

    #[test]
    fn save_load_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("ds");
        let ds = env::collect_random(500, &mut SeededRng::new(1));
        save(&ds, &base).unwrap();
        let first = fs::read(dataset_paths(&base).1).unwrap();
        let loaded = load(&base).unwrap();
        assert_eq!(loaded.len(), 500);
        save(&loaded, &base).unwrap();
        assert_eq!(first, fs::read(dataset_paths(&base).1).unwrap());
        let small = tiny(4);
        save(&small, &base).unwrap();
        assert_eq!(load(&base).unwrap(), small);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("ds");
        save(&tiny(5), &base).unwrap();
        let bin = dataset_paths(&base).1;
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load(&base), Err(CabiError::Load { .. })));
    }

    #[test]
    fn malformed_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("ds");
        save(&tiny(2), &base).unwrap();
        fs::write(dataset_paths(&base).0, "{\"env\": 3}").unwrap();
        assert!(matches!(load(&base), Err(CabiError::Load { .. })));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("ds");
        save(&tiny(3), &base).unwrap();
        let mut meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(dataset_paths(&base).0).unwrap()).unwrap();
        meta.state_dim = 3;
        fs::write(dataset_paths(&base).0, serde_json::to_string(&meta).unwrap()).unwrap();
        assert!(load(&base).is_err());
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("empty");
        let ds = Dataset::new("riskworld", 2, 2, vec![]).unwrap();
        save(&ds, &base).unwrap();
        let loaded = load(&base).unwrap();
        assert!(loaded.is_empty());
        assert_eq!(loaded.state_dim(), 2);
    }

    #[test]
    fn holdout_split_sizes() {
        let ds = env::collect_random(10_000, &mut SeededRng::new(3));
        let (train, hold) = split_holdout(&ds, 1000, &mut SeededRng::new(4)).unwrap();
        assert_eq!((train.len(), hold.len()), (9000, 1000));
        let (t2, h2) = split_holdout(&ds, 1000, &mut SeededRng::new(4)).unwrap();
        assert_eq!((train, hold), (t2, h2));

        let small = tiny(50);
        let (train, hold) = split_holdout(&small, 10, &mut SeededRng::new(0)).unwrap();
        assert_eq!((train.len(), hold.len()), (45, 5));
        assert!(split_holdout(&small, 50, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn holdout_is_disjoint() {
        let small = tiny(40);
        let (train, hold) = split_holdout(&small, 4, &mut SeededRng::new(8)).unwrap();
        for h in hold.transitions() {
            assert!(!train.transitions().contains(h));
        }
        assert_eq!(train.len() + hold.len(), 40);
    }

    #[test]
    fn mixed_batch_counts() {
        let real = tiny(30);
        let syn: Vec<Transition> = tiny(7).into_transitions();
        let sampler = MixedSampler::new(&real, &syn, 0.7).unwrap();
        let picks = sampler.draw(256, &mut SeededRng::new(0)).unwrap();
        assert_eq!(picks.iter().filter(|p| p.0).count(), 179);
        assert_eq!(picks.iter().filter(|p| !p.0).count(), 77);

        let empty: Vec<Transition> = vec![];
        let all_real = MixedSampler::new(&real, &empty, 1.0).unwrap();
        assert!(all_real.draw(64, &mut SeededRng::new(0)).unwrap().iter().all(|p| p.0));
        let needs_syn = MixedSampler::new(&real, &empty, 0.5).unwrap();
        assert!(matches!(needs_syn.draw(8, &mut SeededRng::new(0)), Err(CabiError::Sampling(_))));
        assert_eq!(MixedSampler::with_fallback(&real, &empty, 0.5).unwrap().eta(), 1.0);
        assert!(MixedSampler::new(&real, &syn, 1.5).is_err());
    }

    #[test]
    fn norm_stats_floor_and_inverse() {
        let ds = tiny(20);
        let stats = norm_stats(&ds).unwrap();
        // the action column is constant
        assert_eq!(stats.action.std[0], STD_FLOOR);
        assert_eq!(stats.action.normalize(&[0.125]), vec![0.0]);
        let x = vec![3.7, -0.2];
        let back = stats.state.denormalize(&stats.state.normalize(&x));
        assert!(x.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn riskworld_inputs_normalize_to_moderate_values() {
        let ds = env::collect_random(10_000, &mut SeededRng::new(7));
        let stats = norm_stats(&ds).unwrap();
        for t in ds.transitions() {
            for v in stats.state.normalize(&t.state).into_iter().chain(stats.state.normalize(&t.next_state)) {
                assert!(v.abs() < 10.0);
            }
            for v in stats.action.normalize(&t.action) {
                assert!(v.abs() < 10.0);
            }
        }
    }
}
