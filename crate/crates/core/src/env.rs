//! RiskWorld: a 2-D continuous navigation task with a terminal danger zone.
//!
//! * legal region `D = [-1.5, 1.5]²`
//! * start region `D1`: quarter disc of radius 1 at the `(-1.5, -1.5)` corner
//! * danger zone `D2`: disc of radius 0.5 at the origin, reward −3 and done
//! * goal region `D3`: quarter disc of radius 0.8 at the `(1.5, 1.5)` corner,
//!   reward +1, strict `x < 1.5`, `y < 1.5`
//!
//! Motion is `s' = clamp(s + a, D)` with `a ∈ [-0.5, 0.5]²`, and the reward
//! is a function of the region of `s'`.

use crate::data::{Dataset, Transition};
use crate::rng::SeededRng;

pub const BOUND: f64 = 1.5;
pub const ACTION_BOUND: f64 = 0.5;
pub const EPISODE_LEN: usize = 300;
pub const STATE_DIM: usize = 2;
pub const ACTION_DIM: usize = 2;
pub const ENV_NAME: &str = "riskworld";

const DANGER_RADIUS: f64 = 0.5;
const GOAL_RADIUS: f64 = 0.8;
const START_RADIUS: f64 = 1.0;

pub const REWARD_DANGER: f64 = -3.0;
pub const REWARD_GOAL: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskWorldState {
    pub x: f64,
    pub y: f64,
}

impl RiskWorldState {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.x, self.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub next: RiskWorldState,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Danger,
    Goal,
    Neutral,
    Outside,
}

pub fn in_legal(x: f64, y: f64) -> bool {
    x.abs() <= BOUND && y.abs() <= BOUND
}

pub fn in_start(x: f64, y: f64) -> bool {
    (x + BOUND).powi(2) + (y + BOUND).powi(2) <= START_RADIUS * START_RADIUS && x < 0.0 && y < 0.0
}

pub fn in_danger(x: f64, y: f64) -> bool {
    x * x + y * y <= DANGER_RADIUS * DANGER_RADIUS
}

pub fn in_goal(x: f64, y: f64) -> bool {
    (x - BOUND).powi(2) + (y - BOUND).powi(2) <= GOAL_RADIUS * GOAL_RADIUS && x < BOUND && y < BOUND
}

/// Region of a point; the danger test takes precedence.
pub fn region(x: f64, y: f64) -> Region {
    if !in_legal(x, y) {
        Region::Outside
    } else if in_danger(x, y) {
        Region::Danger
    } else if in_goal(x, y) {
        Region::Goal
    } else {
        Region::Neutral
    }
}

pub fn reward_at(x: f64, y: f64) -> f64 {
    match region(x, y) {
        Region::Danger => REWARD_DANGER,
        Region::Goal => REWARD_GOAL,
        Region::Neutral | Region::Outside => 0.0,
    }
}

/// Uniform start inside `D1` by rejection from its bounding square.
pub fn reset(rng: &mut SeededRng) -> RiskWorldState {
    loop {
        let x = rng.uniform_range(-BOUND, -BOUND + START_RADIUS);
        let y = rng.uniform_range(-BOUND, -BOUND + START_RADIUS);
        if in_start(x, y) {
            return RiskWorldState { x, y };
        }
    }
}

pub fn step(s: RiskWorldState, action: [f64; 2]) -> StepResult {
    let ax = action[0].clamp(-ACTION_BOUND, ACTION_BOUND);
    let ay = action[1].clamp(-ACTION_BOUND, ACTION_BOUND);
    let next = RiskWorldState {
        x: (s.x + ax).clamp(-BOUND, BOUND),
        y: (s.y + ay).clamp(-BOUND, BOUND),
    };
    let done = in_danger(next.x, next.y);
    StepResult {
        next,
        reward: reward_at(next.x, next.y),
        done,
    }
}

/// Runs a uniform-random policy for exactly `steps` transitions, resetting
/// on termination and after `EPISODE_LEN` steps.
pub fn collect_random(steps: usize, rng: &mut SeededRng) -> Dataset {
    let mut transitions = Vec::with_capacity(steps);
    let mut state = reset(rng);
    let mut t = 0;
    while transitions.len() < steps {
        let a = [
            rng.uniform_range(-ACTION_BOUND, ACTION_BOUND),
            rng.uniform_range(-ACTION_BOUND, ACTION_BOUND),
        ];
        let res = step(state, a);
        transitions.push(Transition {
            state: state.to_vec(),
            action: a.to_vec(),
            reward: res.reward,
            next_state: res.next.to_vec(),
            done: res.done,
        });
        t += 1;
        if res.done || t >= EPISODE_LEN {
            state = reset(rng);
            t = 0;
        } else {
            state = res.next;
        }
    }
    Dataset::new(ENV_NAME, STATE_DIM, ACTION_DIM, transitions).expect("riskworld dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_regions() {
        let r = step(RiskWorldState::new(-0.2, 0.1), [0.2, -0.1]);
        assert_eq!(r.reward, -3.0);
        assert!(r.done);
        let r = step(RiskWorldState::new(1.0, 1.0), [0.2, 0.2]);
        assert_eq!(r.reward, 1.0);
        assert!(!r.done);
        assert!((r.next.x - 1.2).abs() < 1e-12);
    }

    #[test]
    fn clamps_to_boundary_which_is_not_goal() {
        let r = step(RiskWorldState::new(1.4, 0.0), [0.5, 0.0]);
        assert_eq!(r.next, RiskWorldState::new(1.5, 0.0));
        assert_eq!(r.reward, 0.0);
        assert!(!r.done);
        // the goal corner itself fails the strict inequalities
        assert!(!in_goal(1.5, 1.5));
        assert!(in_goal(1.49, 1.49));
    }

    #[test]
    fn actions_are_clamped() {
        let r = step(RiskWorldState::new(-1.0, -1.0), [3.0, -3.0]);
        assert_eq!(r.next, RiskWorldState::new(-0.5, -1.5));
    }

    #[test]
    fn reset_lands_in_start_region() {
        let mut rng = SeededRng::new(1);
        for _ in 0..1000 {
            let s = reset(&mut rng);
            assert!(in_start(s.x, s.y));
        }
        assert_eq!(reset(&mut SeededRng::new(5)), reset(&mut SeededRng::new(5)));
    }

    #[test]
    fn reset_mean_matches_rejection_oracle() {
        // Independent oracle: dense grid over D1's bounding box.
        let n = 800;
        let (mut sx, mut sy, mut count) = (0.0, 0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let x = -1.5 + (i as f64 + 0.5) / n as f64;
                let y = -1.5 + (j as f64 + 0.5) / n as f64;
                if (x + 1.5).powi(2) + (y + 1.5).powi(2) <= 1.0 {
                    sx += x;
                    sy += y;
                    count += 1.0;
                }
            }
        }
        let (cx, cy) = (sx / count, sy / count);
        let mut rng = SeededRng::new(2);
        let m = 10_000;
        let (mut mx, mut my) = (0.0, 0.0);
        for _ in 0..m {
            let s = reset(&mut rng);
            assert!(in_start(s.x, s.y));
            mx += s.x;
            my += s.y;
        }
        assert!((mx / m as f64 - cx).abs() < 0.02);
        assert!((my / m as f64 - cy).abs() < 0.02);
    }

    #[test]
    fn collection_respects_invariants() {
        let mut rng = SeededRng::new(7);
        let ds = collect_random(10_000, &mut rng);
        assert_eq!(ds.len(), 10_000);
        let mut episode_steps = 0;
        for t in ds.transitions() {
            assert!(in_legal(t.state[0], t.state[1]));
            assert!(in_legal(t.next_state[0], t.next_state[1]));
            assert!(!in_danger(t.state[0], t.state[1]));
            assert!(t.action.iter().all(|a| a.abs() <= ACTION_BOUND));
            assert_eq!(t.done, in_danger(t.next_state[0], t.next_state[1]));
            assert_eq!(t.reward, reward_at(t.next_state[0], t.next_state[1]));
            episode_steps += 1;
            assert!(episode_steps <= EPISODE_LEN);
            if t.done || episode_steps == EPISODE_LEN {
                episode_steps = 0;
            }
        }
        assert_eq!(collect_random(10_000, &mut SeededRng::new(7)), ds);
    }

    #[test]
    fn single_step_collection() {
        let ds = collect_random(1, &mut SeededRng::new(0));
        assert_eq!(ds.len(), 1);
        let t = &ds.transitions()[0];
        assert_eq!(t.done, in_danger(t.next_state[0], t.next_state[1]));
    }
}
