//! Checks that need genuinely trained (if small) RiskWorld models.

use cabi_core::augment::{generate, Models, RolloutConfig, Strategy};
use cabi_core::cvae::{train_cvae, ActionBounds, CvaeConfig, CvaeModel};
use cabi_core::data::{holdout_size, split_holdout, Dataset};
use cabi_core::dynamics::{train_ensemble, Direction, Ensemble, ModelConfig};
use cabi_core::env;
use cabi_core::metrics::{model_disagreement, prediction_error, region_fractions};
use cabi_core::SeededRng;

struct Fixture {
    data: Dataset,
    fwd: Ensemble,
    bwd: Ensemble,
    gf: CvaeModel,
    gb: CvaeModel,
}

fn fixture() -> Fixture {
    let mut rng = SeededRng::new(11);
    let data = env::collect_random(2_000, &mut rng);
    let (train, holdout) = split_holdout(&data, holdout_size(data.len(), 200), &mut rng).unwrap();
    let mc = ModelConfig {
        hidden: vec![16; 4],
        epochs: 5,
        ..ModelConfig::default()
    };
    let fwd = train_ensemble(&train, &holdout, Direction::Forward, &mc, &mut rng).unwrap();
    let bwd = train_ensemble(&train, &holdout, Direction::Backward, &mc, &mut rng).unwrap();
    let cc = CvaeConfig {
        hidden: vec![16, 16],
        epochs: 3,
        ..CvaeConfig::default()
    };
    let bounds = ActionBounds::symmetric(2, env::ACTION_BOUND);
    let (gf, _) = train_cvae(&data, Direction::Forward, bounds.clone(), &cc, &mut rng).unwrap();
    let (gb, _) = train_cvae(&data, Direction::Backward, bounds, &cc, &mut rng).unwrap();
    Fixture { data, fwd, bwd, gf, gb }
}

#[test]
fn trained_models_behave() {
    let f = fixture();
    let anchors = &f.data.transitions()[..500];

    // one-step disagreement is a different quantity from prediction error
    let eps_fwd = prediction_error(anchors, &f.fwd, Direction::Forward).unwrap();
    let eps_bwd = prediction_error(anchors, &f.bwd, Direction::Backward).unwrap();
    let dis = model_disagreement(anchors, &f.fwd, &f.bwd, &f.gf, &f.gb, 1, &mut SeededRng::new(0)).unwrap();
    assert_eq!(dis.entries().len(), 2);
    assert!((dis.forward[0] - eps_fwd).abs() > 1e-6 * eps_fwd, "{} vs {eps_fwd}", dis.forward[0]);
    assert!((dis.backward[0] - eps_bwd).abs() > 1e-6 * eps_bwd, "{} vs {eps_bwd}", dis.backward[0]);

    // generation is a pure function of seed, config, strategy and models
    let models = Models {
        forward: &f.fwd,
        backward: &f.bwd,
        forward_policy: &f.gf,
        backward_policy: &f.gb,
    };
    let rc = RolloutConfig {
        total: 1_000,
        batch_size: 200,
        ..RolloutConfig::default()
    };
    for strategy in Strategy::ALL {
        let a = generate(&f.data, &models, &rc, strategy, &mut SeededRng::new(5)).unwrap();
        let b = generate(&f.data, &models, &rc, strategy, &mut SeededRng::new(5)).unwrap();
        assert_eq!(a.transitions, b.transitions, "{strategy}");
        assert_eq!(a.len(), 1_000);
        assert!(a.transitions.iter().all(|t| !t.done));
        let q = region_fractions(&a.transitions).unwrap();
        assert_eq!(q.size, 1_000);
    }
}
