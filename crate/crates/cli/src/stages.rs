//! Pipeline stages. Each stage checks its prerequisites, skips itself when
//! the manifest shows its outputs are current, and records what it writes.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use cabi_core::augment::{generate, ModelBuffer, Models, RolloutConfig, Strategy};
use cabi_core::checkpoint::checkpoint_paths;
use cabi_core::cvae::{train_cvae, ActionBounds, CvaeModel};
use cabi_core::data::{self, dataset_paths, holdout_size, split_holdout, Dataset, MixedSampler};
use cabi_core::dynamics::{train_ensemble, Direction, Ensemble};
use cabi_core::env;
use cabi_core::learner::{evaluate, train_policy, PolicyArtifact};
use cabi_core::metrics::{prediction_errors, region_fractions};
use cabi_core::{CabiError, SeededRng};

use crate::config::ExperimentConfig;
use crate::manifest::{hash_file, sha256_hex, RunManifest};
use crate::svg;

#[derive(Debug, thiserror::Error)]
pub enum StageErrorKind {
    #[error("missing prerequisite {} ({hint})", path.display())]
    Missing { path: PathBuf, hint: String },
    #[error(transparent)]
    Core(#[from] CabiError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, thiserror::Error)]
#[error("stage {stage}: {kind}")]
pub struct StageError {
    pub stage: &'static str,
    pub kind: StageErrorKind,
}

pub type StageResult<T> = std::result::Result<T, StageError>;

trait At<T> {
    fn at(self, stage: &'static str) -> StageResult<T>;
}

impl<T, E: Into<StageErrorKind>> At<T> for std::result::Result<T, E> {
    fn at(self, stage: &'static str) -> StageResult<T> {
        self.map_err(|e| StageError { stage, kind: e.into() })
    }
}

/// Where a policy's training data comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Source {
    Raw,
    Buffer(Strategy, f64),
}

impl Source {
    pub fn tag(&self) -> String {
        match self {
            Source::Raw => "raw".into(),
            Source::Buffer(s, k) => buffer_name(*s, *k),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

pub fn buffer_name(strategy: Strategy, k: f64) -> String {
    format!("{}-k{}", strategy.name(), k)
}

// stage-specific RNG streams derived from the run seed
const STREAM_COLLECT: u64 = 1;
const STREAM_MODELS: u64 = 2;
const STREAM_AUGMENT: u64 = 3;
const STREAM_POLICY: u64 = 4;
const STREAM_EVAL: u64 = 5;

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub force: bool,
    pub manifest: RunManifest,
    pub config_hash: String,
}

impl Ctx {
    pub fn new(cfg: ExperimentConfig, out: PathBuf, force: bool) -> io::Result<Self> {
        let config_hash = sha256_hex(serde_json::to_string(&cfg).map_err(io::Error::other)?.as_bytes());
        fs::create_dir_all(&out)?;
        let manifest = RunManifest::load_or_new(&out, &config_hash)?;
        Ok(Self {
            cfg,
            out,
            force,
            manifest,
            config_hash,
        })
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed-{seed}"))
    }

    pub fn dataset_base(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("dataset")
    }

    pub fn model_base(&self, seed: u64, name: &str) -> PathBuf {
        self.seed_dir(seed).join("models").join(name)
    }

    pub fn buffer_base(&self, seed: u64, strategy: Strategy, k: f64) -> PathBuf {
        self.seed_dir(seed).join("buffers").join(buffer_name(strategy, k))
    }

    pub fn policy_base(&self, seed: u64, source: Source) -> PathBuf {
        self.seed_dir(seed).join("policies").join(source.tag())
    }

    pub fn eval_path(&self, seed: u64, source: Source) -> PathBuf {
        self.seed_dir(seed).join("eval").join(format!("{}.csv", source.tag()))
    }

    fn record(&mut self, paths: &[PathBuf], stage: &'static str, seed: Option<u64>, inputs: &str) -> StageResult<()> {
        for p in paths {
            self.manifest.record(&self.out, p, stage, seed, inputs).at(stage)?;
        }
        self.manifest.save(&self.out).at(stage)
    }

    fn current(&self, paths: &[PathBuf], inputs: &str) -> bool {
        !self.force && self.manifest.up_to_date(&self.out, paths, inputs)
    }
}

const MODEL_NAMES: [&str; 4] = ["forward_ensemble", "backward_ensemble", "forward_cvae", "backward_cvae"];

fn require(stage: &'static str, path: &Path, hint: &str) -> StageResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(StageError {
            stage,
            kind: StageErrorKind::Missing {
                path: path.to_path_buf(),
                hint: hint.to_string(),
            },
        })
    }
}

fn pair(p: (PathBuf, PathBuf)) -> [PathBuf; 2] {
    [p.0, p.1]
}

fn require_dataset(ctx: &Ctx, stage: &'static str, seed: u64) -> StageResult<(Dataset, String)> {
    let [meta, bin] = pair(dataset_paths(&ctx.dataset_base(seed)));
    let hint = format!("run `cabi collect --seed {seed}` first");
    require(stage, &meta, &hint)?;
    require(stage, &bin, &hint)?;
    let ds = data::load(&ctx.dataset_base(seed)).at(stage)?;
    Ok((ds, hash_file(&bin).at(stage)?))
}

fn model_files(ctx: &Ctx, seed: u64) -> Vec<PathBuf> {
    MODEL_NAMES
        .iter()
        .flat_map(|n| pair(checkpoint_paths(&ctx.model_base(seed, n))))
        .collect()
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).unwrap_or_default()
}

fn bounds() -> ActionBounds {
    ActionBounds::symmetric(env::ACTION_DIM, env::ACTION_BOUND)
}

pub fn collect(ctx: &mut Ctx, seed: u64, steps: usize) -> StageResult<PathBuf> {
    const STAGE: &str = "collect";
    if ctx.cfg.env != env::ENV_NAME {
        return Err(StageError {
            stage: STAGE,
            kind: StageErrorKind::Invalid(format!("unsupported environment {:?}", ctx.cfg.env)),
        });
    }
    let base = ctx.dataset_base(seed);
    let outputs = pair(dataset_paths(&base)).to_vec();
    let inputs = format!("env={} steps={steps} seed={seed}", ctx.cfg.env);
    if ctx.current(&outputs, &inputs) {
        eprintln!("collect: seed {seed} up to date");
        return Ok(base);
    }
    let mut rng = SeededRng::new(seed).stream(STREAM_COLLECT);
    let ds = env::collect_random(steps, &mut rng).with_seed(seed);
    data::save(&ds, &base).at(STAGE)?;
    ctx.record(&outputs, STAGE, Some(seed), &inputs)?;
    eprintln!("collect: seed {seed}: {} transitions -> {}", ds.len(), base.display());
    Ok(base)
}

pub fn train_models(ctx: &mut Ctx, seed: u64) -> StageResult<()> {
    const STAGE: &str = "train-models";
    let (ds, ds_hash) = require_dataset(ctx, STAGE, seed)?;
    let outputs = model_files(ctx, seed);
    let inputs = format!(
        "dataset={ds_hash} model={} cvae={} seed={seed}",
        json(&ctx.cfg.model),
        json(&ctx.cfg.cvae)
    );
    if ctx.current(&outputs, &inputs) {
        eprintln!("train-models: seed {seed} up to date");
        return Ok(());
    }
    let mut rng = SeededRng::new(seed).stream(STREAM_MODELS);
    let (train, holdout) = split_holdout(&ds, holdout_size(ds.len(), ctx.cfg.model.holdout), &mut rng).at(STAGE)?;
    for dir in [Direction::Forward, Direction::Backward] {
        let ens = train_ensemble(&train, &holdout, dir, &ctx.cfg.model, &mut rng).at(STAGE)?;
        eprintln!("train-models: seed {seed}: {dir} ensemble elites {:?}", ens.elites());
        ens.save(&ctx.model_base(seed, &format!("{dir}_ensemble"))).at(STAGE)?;
    }
    for dir in [Direction::Forward, Direction::Backward] {
        let (cvae, report) = train_cvae(&ds, dir, bounds(), &ctx.cfg.cvae, &mut rng).at(STAGE)?;
        eprintln!(
            "train-models: seed {seed}: {dir} cvae final loss {:.4}",
            report.epoch_losses.last().copied().unwrap_or(f64::NAN)
        );
        cvae.save(&ctx.model_base(seed, &format!("{dir}_cvae"))).at(STAGE)?;
    }
    ctx.record(&outputs, STAGE, Some(seed), &inputs)
}

struct Loaded {
    forward: Ensemble,
    backward: Ensemble,
    forward_cvae: CvaeModel,
    backward_cvae: CvaeModel,
    hashes: Vec<(String, String)>,
}

fn load_models(ctx: &Ctx, stage: &'static str, seed: u64) -> StageResult<Loaded> {
    let hint = format!("run `cabi train-models --seed {seed}` first");
    let mut hashes = Vec::new();
    for name in MODEL_NAMES {
        for p in pair(checkpoint_paths(&ctx.model_base(seed, name))) {
            require(stage, &p, &hint)?;
            let rel = p.strip_prefix(&ctx.out).unwrap_or(&p).to_string_lossy().to_string();
            hashes.push((rel, hash_file(&p).at(stage)?));
        }
    }
    Ok(Loaded {
        forward: Ensemble::load(&ctx.model_base(seed, MODEL_NAMES[0])).at(stage)?,
        backward: Ensemble::load(&ctx.model_base(seed, MODEL_NAMES[1])).at(stage)?,
        forward_cvae: CvaeModel::load(&ctx.model_base(seed, MODEL_NAMES[2])).at(stage)?,
        backward_cvae: CvaeModel::load(&ctx.model_base(seed, MODEL_NAMES[3])).at(stage)?,
        hashes,
    })
}

pub fn augment(ctx: &mut Ctx, seed: u64, strategy: Strategy, rollout: &RolloutConfig) -> StageResult<PathBuf> {
    const STAGE: &str = "augment";
    let (ds, ds_hash) = require_dataset(ctx, STAGE, seed)?;
    let models = load_models(ctx, STAGE, seed)?;
    let base = ctx.buffer_base(seed, strategy, rollout.k);
    let (meta, bin) = dataset_paths(&base);
    let outputs = vec![meta, bin, ModelBuffer::provenance_path(&base)];
    let inputs = format!(
        "dataset={ds_hash} models={} strategy={strategy} rollout={} seed={seed}",
        json(&models.hashes),
        json(rollout)
    );
    if ctx.current(&outputs, &inputs) {
        eprintln!("augment: seed {seed} {} up to date", base.display());
        return Ok(base);
    }
    let m = Models {
        forward: &models.forward,
        backward: &models.backward,
        forward_policy: &models.forward_cvae,
        backward_policy: &models.backward_cvae,
    };
    let mut rng = SeededRng::new(seed).stream(STREAM_AUGMENT);
    let mut buffer = generate(&ds, &m, rollout, strategy, &mut rng).at(STAGE)?;
    buffer.provenance.extra.insert("dataset".into(), ds_hash);
    buffer.provenance.extra.insert("config".into(), ctx.config_hash.clone());
    for (path, hash) in &models.hashes {
        buffer.provenance.extra.insert(path.clone(), hash.clone());
    }
    buffer.save(&base, &ds).at(STAGE)?;
    ctx.record(&outputs, STAGE, Some(seed), &inputs)?;
    eprintln!(
        "augment: seed {seed}: {strategy} kept {} transitions over {} iterations -> {}",
        buffer.len(),
        buffer.provenance.iterations,
        base.display()
    );
    Ok(base)
}

fn require_buffer(ctx: &Ctx, stage: &'static str, seed: u64, strategy: Strategy, k: f64) -> StageResult<(PathBuf, String)> {
    let base = ctx.buffer_base(seed, strategy, k);
    let (meta, bin) = dataset_paths(&base);
    let hint = format!("run `cabi augment --seed {seed} --strategy {strategy} --k {k}` first");
    require(stage, &meta, &hint)?;
    require(stage, &bin, &hint)?;
    require(stage, &ModelBuffer::provenance_path(&base), &hint)?;
    let hash = hash_file(&bin).at(stage)?;
    Ok((base, hash))
}

pub fn train_policy_stage(ctx: &mut Ctx, seed: u64, source: Source) -> StageResult<PathBuf> {
    const STAGE: &str = "train-policy";
    let (ds, ds_hash) = require_dataset(ctx, STAGE, seed)?;
    let (synthetic, buf_hash) = match source {
        Source::Raw => (Vec::new(), String::from("none")),
        Source::Buffer(strategy, k) => {
            let (base, hash) = require_buffer(ctx, STAGE, seed, strategy, k)?;
            (ModelBuffer::load(&base).at(STAGE)?.transitions, hash)
        }
    };
    let base = ctx.policy_base(seed, source);
    let outputs = pair(checkpoint_paths(&base)).to_vec();
    let inputs = format!("dataset={ds_hash} buffer={buf_hash} learner={} seed={seed}", json(&ctx.cfg.learner));
    if ctx.current(&outputs, &inputs) {
        eprintln!("train-policy: seed {seed} {source} up to date");
        return Ok(base);
    }
    let eta = if source == Source::Raw { 1.0 } else { ctx.cfg.learner.eta };
    let sampler = MixedSampler::with_fallback(&ds, &synthetic, eta).at(STAGE)?;
    let mut rng = SeededRng::new(seed).stream(STREAM_POLICY);
    let (mut artifact, report) = train_policy(&sampler, &bounds(), &ctx.cfg.learner, &mut rng).at(STAGE)?;
    artifact.manifest.insert("dataset".into(), ds_hash);
    artifact.manifest.insert("buffer".into(), buf_hash);
    artifact.manifest.insert("config".into(), ctx.config_hash.clone());
    artifact.manifest.insert("effective_eta".into(), sampler.eta().to_string());
    artifact.save(&base).at(STAGE)?;
    ctx.record(&outputs, STAGE, Some(seed), &inputs)?;
    eprintln!(
        "train-policy: seed {seed} {source}: {} steps, final critic loss {:.5}",
        report.critic_losses.len(),
        report.critic_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(base)
}

/// Mean and std of evaluation returns.
pub fn eval(ctx: &mut Ctx, seed: u64, source: Source, episodes: usize) -> StageResult<(f64, f64)> {
    const STAGE: &str = "eval";
    let base = ctx.policy_base(seed, source);
    let hint = format!("run `cabi train-policy --seed {seed}` for {source} first");
    for p in pair(checkpoint_paths(&base)) {
        require(STAGE, &p, &hint)?;
    }
    let policy = PolicyArtifact::load(&base).at(STAGE)?;
    let mut rng = SeededRng::new(seed).stream(STREAM_EVAL);
    let stats = evaluate(&policy, episodes, &mut rng).at(STAGE)?;
    let path = ctx.eval_path(seed, source);
    fs::create_dir_all(path.parent().expect("eval dir")).at(STAGE)?;
    let mut csv = String::from("seed,policy,episode,return\n");
    for (i, r) in stats.returns.iter().enumerate() {
        csv.push_str(&format!("{seed},{source},{i},{r}\n"));
    }
    fs::write(&path, csv).at(STAGE)?;
    let policy_hash = hash_file(&checkpoint_paths(&base).1).at(STAGE)?;
    ctx.record(&[path], STAGE, Some(seed), &format!("policy={policy_hash} episodes={episodes}"))?;
    eprintln!("eval: seed {seed} {source}: return {:.3} ± {:.3}", stats.mean, stats.std);
    Ok((stats.mean, stats.std))
}

pub fn report(ctx: &mut Ctx, seeds: &[u64], strategies: &[Strategy], k: f64) -> StageResult<PathBuf> {
    const STAGE: &str = "report";
    let dir = ctx.out.join("report");
    fs::create_dir_all(&dir).at(STAGE)?;
    let mut csv = String::from("seed,source,size,danger_fraction,outside_fraction,goal_fraction\n");
    let mut written = Vec::new();
    for &seed in seeds {
        let mut sources: Vec<(String, Vec<cabi_core::data::Transition>)> = Vec::new();
        let (ds, _) = require_dataset(ctx, STAGE, seed)?;
        sources.push(("dataset".into(), ds.into_transitions()));
        for &strategy in strategies {
            let (base, _) = require_buffer(ctx, STAGE, seed, strategy, k)?;
            let (_, bin) = dataset_paths(&base);
            if ctx.manifest.hash_of(&ctx.out, &bin).is_none() {
                return Err(StageError {
                    stage: STAGE,
                    kind: StageErrorKind::Invalid(format!("{} is not recorded in the run manifest", bin.display())),
                });
            }
            sources.push((buffer_name(strategy, k), ModelBuffer::load(&base).at(STAGE)?.transitions));
        }
        for (name, ts) in sources {
            let q = region_fractions(&ts).at(STAGE)?;
            csv.push_str(&format!(
                "{seed},{name},{},{},{},{}\n",
                q.size, q.danger_fraction, q.outside_fraction, q.goal_fraction
            ));
            let points: Vec<[f64; 2]> = ts.iter().map(|t| [t.next_state[0], t.next_state[1]]).collect();
            let path = dir.join(format!("seed-{seed}-{name}.svg"));
            fs::write(&path, svg::scatter(&format!("{name} (seed {seed}): next states"), &points)).at(STAGE)?;
            written.push(path);
        }
    }
    let csv_path = dir.join("region_fractions.csv");
    fs::write(&csv_path, csv).at(STAGE)?;
    written.push(csv_path.clone());
    ctx.record(&written, STAGE, None, &format!("seeds={seeds:?} strategies={strategies:?} k={k}"))?;
    eprintln!("report: wrote {} files under {}", written.len(), dir.display());
    Ok(csv_path)
}

/// One ablation cell outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub strategy: Strategy,
    pub k: f64,
    pub seed: u64,
    pub outcome: std::result::Result<CellMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellMetrics {
    pub mean_return: f64,
    pub std_return: f64,
    pub buffer_size: usize,
    pub danger_fraction: f64,
    pub outside_fraction: f64,
    pub eps_fwd: f64,
    pub eps_bwd: f64,
}

pub const ABLATION_HEADER: &str =
    "strategy,k,seed,mean_return,std_return,buffer_size,danger_fraction,outside_fraction,eps_fwd,eps_bwd,status";

impl CellResult {
    pub fn csv(&self) -> String {
        match &self.outcome {
            Ok(m) => format!(
                "{},{},{},{},{},{},{},{},{},{},ok",
                self.strategy,
                self.k,
                self.seed,
                m.mean_return,
                m.std_return,
                m.buffer_size,
                m.danger_fraction,
                m.outside_fraction,
                m.eps_fwd,
                m.eps_bwd
            ),
            Err(e) => format!(
                "{},{},{},,,,,,,,\"error: {}\"",
                self.strategy,
                self.k,
                self.seed,
                e.replace('"', "'")
            ),
        }
    }
}

fn run_cell(ctx: &mut Ctx, seed: u64, strategy: Strategy, k: f64) -> StageResult<CellMetrics> {
    let rollout = RolloutConfig { k, ..ctx.cfg.rollout.clone() };
    let base = augment(ctx, seed, strategy, &rollout)?;
    let source = Source::Buffer(strategy, k);
    train_policy_stage(ctx, seed, source)?;
    let episodes = ctx.cfg.eval_episodes;
    let (mean_return, std_return) = eval(ctx, seed, source, episodes)?;
    let buffer = ModelBuffer::load(&base).at("ablation")?;
    let q = region_fractions(&buffer.transitions).at("ablation")?;
    let (eps_fwd, eps_bwd) = if buffer.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let models = load_models(ctx, "ablation", seed)?;
        let e = prediction_errors(&buffer.transitions, &models.forward, &models.backward).at("ablation")?;
        (e.forward, e.backward)
    };
    Ok(CellMetrics {
        mean_return,
        std_return,
        buffer_size: buffer.len(),
        danger_fraction: q.danger_fraction,
        outside_fraction: q.outside_fraction,
        eps_fwd,
        eps_bwd,
    })
}

/// Runs every (strategy, k, seed) cell; failures are recorded per cell.
pub fn ablation(ctx: &mut Ctx, strategies: &[Strategy], ks: &[f64], seeds: &[u64]) -> StageResult<Vec<CellResult>> {
    const STAGE: &str = "ablation";
    if strategies.is_empty() || ks.is_empty() || seeds.is_empty() {
        return Err(StageError {
            stage: STAGE,
            kind: StageErrorKind::Invalid("ablation grid is empty".into()),
        });
    }
    let mut results = Vec::with_capacity(strategies.len() * ks.len() * seeds.len());
    for &seed in seeds {
        let steps = ctx.cfg.collect_steps;
        let prep = collect(ctx, seed, steps).and_then(|_| train_models(ctx, seed));
        for &strategy in strategies {
            for &k in ks {
                let outcome = match &prep {
                    Err(e) => Err(e.to_string()),
                    Ok(()) => run_cell(ctx, seed, strategy, k).map_err(|e| e.to_string()),
                };
                if let Err(e) = &outcome {
                    eprintln!("ablation: cell ({strategy}, {k}, {seed}) failed: {e}");
                }
                results.push(CellResult { strategy, k, seed, outcome });
            }
        }
    }
    let mut csv = String::from(ABLATION_HEADER);
    csv.push('\n');
    for r in &results {
        csv.push_str(&r.csv());
        csv.push('\n');
    }
    let path = ctx.out.join("ablation.csv");
    fs::write(&path, csv).at(STAGE)?;
    ctx.record(&[path], STAGE, None, &format!("strategies={strategies:?} ks={ks:?} seeds={seeds:?}"))?;
    Ok(results)
}
