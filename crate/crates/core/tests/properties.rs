use fan_core::env::{expert, make_ood_variant, q_oracle_one_step};
use fan_core::eval::{evaluate_expert, expert_visited_states, fan_from_q};
use fan_core::rft::{normalize_advantages, PpoSample};
use fan_core::seeding::stream_rng;
use fan_core::sft::{
    collect_expert_demos, load_demonstrations, sft_loss, write_demonstrations, Sample,
};
use fan_core::{
    ActionGrid, Env, EnvConfig, OodAxis, PolicyModel, RewardMode, SftObjective, TargetSpec,
};
use proptest::prelude::*;

fn actions(len: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec([-1.5f64..1.5, -1.5f64..1.5, -1.0f64..1.0], len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dynamics_are_deterministic_and_bounded(seed in 0u64..10_000, acts in actions(20)) {
        let cfg = EnvConfig::default();
        assert_eq!(cfg.reward, RewardMode::Sparse);
        let mut a = Env::new(cfg.clone()).unwrap();
        let mut b = Env::new(cfg.clone()).unwrap();
        a.reset(&mut stream_rng(seed, 0)).unwrap();
        b.reset(&mut stream_rng(seed, 0)).unwrap();
        let mut total = 0.0;
        for act in &acts {
            if a.state().done {
                break;
            }
            let (ra, da) = a.step_state(act).unwrap();
            let (rb, db) = b.step_state(act).unwrap();
            prop_assert_eq!((ra, da), (rb, db));
            prop_assert_eq!(a.state(), b.state());
            prop_assert!(ra == 0.0 || ra == 1.0);
            total += ra;
            let s = a.state();
            prop_assert!(s.step <= cfg.horizon);
            for p in std::iter::once(&s.gripper).chain(&s.objects) {
                prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)), "{:?}", p);
            }
        }
        prop_assert!(total == 0.0 || total == 1.0);
    }

    #[test]
    fn normalization_keeps_the_preferred_action(adv in prop::collection::vec(-50.0f64..50.0, 2..40)) {
        let mut samples: Vec<PpoSample> = adv
            .iter()
            .enumerate()
            .map(|(i, &a)| PpoSample {
                obs: vec![],
                instruction: 0,
                bins: vec![i],
                behavior_log_prob: 0.0,
                advantage: a,
                ret: 0.0,
                target: None,
            })
            .collect();
        let best = |s: &[PpoSample]| {
            s.iter()
                .enumerate()
                .fold(0, |b, (i, x)| if x.advantage > s[b].advantage { i } else { b })
        };
        let before = best(&samples);
        normalize_advantages(&mut samples);
        prop_assert_eq!(best(&samples), before);
    }

    #[test]
    fn shaped_sft_loss_is_nonnegative(seed in 0u64..1000, alpha in 0.0f64..2.0, obs in prop::collection::vec(-1.0f64..1.0, 3)) {
        let grid = ActionGrid::uniform(3, -1.0, 1.0, 5).unwrap();
        let model = PolicyModel::new(3, 2, 2, vec![6], &grid, seed).unwrap();
        let batch = vec![Sample { obs, instruction: (seed % 2) as usize, bins: vec![(seed % 5) as usize, 2, 4] }];
        for target in [TargetSpec::adaptive_default(&grid), TargetSpec::FixedGaussian { sigma: 0.3 }] {
            let (parts, _) = sft_loss(&model, &grid, &batch, SftObjective::Shaped { alpha, target }).unwrap();
            prop_assert!(parts.loss >= 0.0 && parts.kl >= 0.0, "{:?}", parts);
        }
    }
}

#[test]
fn reposition_hurts_the_expert() {
    let base = EnvConfig::default();
    let moved = make_ood_variant(&base, OodAxis::ExecutionReposition).unwrap();
    let canonical = evaluate_expert(&base, 100, 5).unwrap().success;
    let perturbed = evaluate_expert(&moved, 100, 5).unwrap().success;
    assert!(perturbed < canonical, "{perturbed} !< {canonical}");
}

#[test]
fn two_hundred_expert_episodes_load_back() {
    let cfg = EnvConfig::default();
    let grid = cfg.action_grid(9).unwrap();
    let raw = collect_expert_demos(&cfg, 200, 17).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("demos.txt");
    write_demonstrations(&path, &raw).unwrap();
    let demos = load_demonstrations(&path, &grid).unwrap();
    assert_eq!(demos.len(), 200);
    for d in &demos {
        assert!(!d.is_empty());
        assert!(d.actions.iter().flatten().all(|&j| j < grid.bins()));
    }
}

#[test]
fn release_states_have_a_nontrivial_fan() {
    let cfg = EnvConfig::default();
    let grid = cfg.action_grid(9).unwrap();
    let mut checked = 0;
    for env in expert_visited_states(&cfg, 400, 23).unwrap() {
        let s = env.state();
        if s.holding.is_none() || expert(&cfg, s)[2] > 0.0 {
            continue;
        }
        let fan = fan_from_q(&q_oracle_one_step(&env, &grid, 0.99).unwrap(), 0.05).unwrap();
        let w = fan.widths();
        assert!(w[0] >= 2 || w[1] >= 2, "widths {w:?} at {s:?}");
        checked += 1;
    }
    assert!(checked >= 10, "only {checked} release states visited");
}
