//! Generates synthetic RiskWorld data with every strategy and prints region
//! fractions of the resulting buffers.
//!
//! `cargo run --release -p cabi-core --example riskworld_study -- [seed] [width] [epochs]`

use std::time::Instant;

use cabi_core::augment::{generate, Models, RolloutConfig, Strategy};
use cabi_core::cvae::{train_cvae, ActionBounds, CvaeConfig};
use cabi_core::data::{holdout_size, split_holdout};
use cabi_core::dynamics::{train_ensemble, Direction, ModelConfig};
use cabi_core::env;
use cabi_core::metrics::{region_fractions, state_region_fractions};
use cabi_core::SeededRng;

fn main() -> cabi_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(0);
    let width: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100);
    let mut rng = SeededRng::new(seed);
    let t0 = Instant::now();
    let data = env::collect_random(10_000, &mut rng);
    let (train, holdout) = split_holdout(&data, holdout_size(data.len(), 1000), &mut rng)?;
    let cfg = ModelConfig {
        hidden: vec![width; 4],
        epochs,
        ..ModelConfig::default()
    };
    let fwd = train_ensemble(&train, &holdout, Direction::Forward, &cfg, &mut rng)?;
    let bwd = train_ensemble(&train, &holdout, Direction::Backward, &cfg, &mut rng)?;
    println!("ensembles {:.1}s fwd {:?} bwd {:?}", t0.elapsed().as_secs_f64(), fwd.holdout_losses(), bwd.holdout_losses());
    let bounds = ActionBounds::symmetric(2, env::ACTION_BOUND);
    let ccfg = CvaeConfig {
        hidden: vec![width, width],
        epochs: epochs.min(50),
        ..CvaeConfig::default()
    };
    let (gf, _) = train_cvae(&data, Direction::Forward, bounds.clone(), &ccfg, &mut rng)?;
    let (gb, _) = train_cvae(&data, Direction::Backward, bounds, &ccfg, &mut rng)?;
    println!("cvaes {:.1}s", t0.elapsed().as_secs_f64());
    let models = Models {
        forward: &fwd,
        backward: &bwd,
        forward_policy: &gf,
        backward_policy: &gb,
    };
    let rc = RolloutConfig::default();
    for strategy in Strategy::ALL {
        let buf = generate(&data, &models, &rc, strategy, &mut rng.stream(1))?;
        let q = region_fractions(&buf.transitions)?;
        let p = state_region_fractions(buf.transitions.iter().map(|t| t.state.as_slice()))?;
        println!(
            "{:<20} n={} next: d2={:.4} out={:.4}  state: d2={:.4} out={:.4} iters={} ({:.1}s)",
            strategy.name(),
            q.size,
            q.danger_fraction,
            q.outside_fraction,
            p.danger_fraction,
            p.outside_fraction,
            buf.provenance.iterations,
            t0.elapsed().as_secs_f64()
        );
    }
    let q = region_fractions(data.transitions())?;
    let p = state_region_fractions(data.transitions().iter().map(|t| t.state.as_slice()))?;
    println!(
        "{:<20} next: d2={:.4} out={:.4}  state: d2={:.4} out={:.4}",
        "dataset", q.danger_fraction, q.outside_fraction, p.danger_fraction, p.outside_fraction
    );
    Ok(())
}
