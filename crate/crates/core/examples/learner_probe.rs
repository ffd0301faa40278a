//! Trains the offline learner on raw RiskWorld data and reports returns.
//!
//! `cargo run --release -p cabi-core --example learner_probe -- [seed] [steps] [width]`

use cabi_core::cvae::ActionBounds;
use cabi_core::data::MixedSampler;
use cabi_core::env;
use cabi_core::learner::{evaluate, train_policy, LearnerConfig};
use cabi_core::SeededRng;

fn main() -> cabi_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(0);
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let width: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(64);
    let mut rng = SeededRng::new(seed);
    let data = env::collect_random(10_000, &mut rng);
    let goal = data.transitions().iter().filter(|t| t.reward > 0.0).count();
    let danger = data.transitions().iter().filter(|t| t.reward < 0.0).count();
    println!("dataset: {goal} goal rewards, {danger} danger rewards");
    let cfg = LearnerConfig {
        steps,
        hidden: vec![width, width],
        ..LearnerConfig::default()
    };
    let sampler = MixedSampler::new(&data, &[], 1.0)?;
    let bounds = ActionBounds::symmetric(2, env::ACTION_BOUND);
    let (art, report) = train_policy(&sampler, &bounds, &cfg, &mut rng.stream(1))?;
    let tail = |v: &[f64]| v[v.len().saturating_sub(100)..].iter().sum::<f64>() / 100.0;
    println!("critic loss tail {:.4} actor loss tail {:.4}", tail(&report.critic_losses), tail(&report.actor_losses));
    let stats = evaluate(&art.actor, 10, &mut rng.stream(2))?;
    println!("return mean {:.3} std {:.3} {:?}", stats.mean, stats.std, stats.returns);
    for s in [[-1.2, -1.2], [0.0, -1.0], [1.0, 0.0], [1.0, 1.0]] {
        println!("action at {s:?}: {:?}", cabi_core::learner::Policy::act(&art.actor, &s));
    }
    Ok(())
}
