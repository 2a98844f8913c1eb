mod common;

use common::{scalar_q_trace, tabular_hyper, ScriptedEnv};
use qdsom::harness::run_loop;
use qdsom::policy::AgentMind;
use qdsom::topo_maps::MapGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scripted_run(dynamic: bool, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (alpha, gamma) = (0.3, 0.85);
    let rewards: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
    let observations: Vec<Vec<f64>> = (0..7).map(|_| vec![rng.random(), rng.random(), rng.random()]).collect();
    let mut env = ScriptedEnv::new(observations, rewards.clone());
    let hyper = tabular_hyper(dynamic, alpha, gamma);
    let state = MapGrid::new(1, 1, 3, vec![vec![0.5; 3]]).unwrap();
    let action = MapGrid::new(1, 1, 2, vec![vec![0.5; 2]]).unwrap();
    let mut minds = vec![AgentMind::with_maps(hyper, state, action, ChaCha8Rng::seed_from_u64(seed + 1)).unwrap()];

    let mut recorded = Vec::new();
    struct Recorder<'a>(&'a mut Vec<f64>);
    impl qdsom::harness::StepObserver for Recorder<'_> {
        fn after_step(&mut self, _: u64, _: &qdsom::harness::StepRewards, minds: &[AgentMind]) -> qdsom::Result<()> {
            self.0.push(minds[0].qtable().get(0, 0));
            Ok(())
        }
    }
    run_loop(&mut env, &mut minds, 50, &mut Recorder(&mut recorded)).unwrap();
    (recorded, scalar_q_trace(alpha, gamma, &rewards))
}

#[test]
fn qsom_with_single_neurons_is_scalar_q_learning() {
    for seed in 0..5 {
        let (got, want) = scripted_run(false, seed);
        assert_eq!(got.len(), 50);
        for (t, (g, w)) in got.iter().zip(&want).enumerate() {
            assert!((g - w).abs() <= 1e-12, "seed {seed} step {t}: {g} vs {w}");
        }
    }
}

#[test]
fn qdsom_with_single_neurons_is_scalar_q_learning() {
    for seed in 0..5 {
        let (got, want) = scripted_run(true, seed);
        for (t, (g, w)) in got.iter().zip(&want).enumerate() {
            assert!((g - w).abs() <= 1e-12, "seed {seed} step {t}: {g} vs {w}");
        }
    }
}

#[test]
fn scripted_actions_stay_in_unit_box() {
    let mut env = ScriptedEnv::new(vec![vec![0.1, 0.2, 0.3]], vec![0.5; 20]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let state = MapGrid::random(1, 1, 3, &mut rng).unwrap();
    let action = MapGrid::random(1, 1, 2, &mut rng).unwrap();
    let mut minds = vec![AgentMind::with_maps(tabular_hyper(false, 0.5, 0.9), state, action, rng).unwrap()];
    run_loop(&mut env, &mut minds, 20, &mut ()).unwrap();
    assert!(env.received.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
}
