use std::collections::HashSet;
use std::sync::Arc;

use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
use proptest::sample::select;
use crate::classifier::{self, ClassifierParams};
use crate::episode::AdHocEpisode;
use crate::harness::{normalize, run_trial, AgentKind, ExperimentConfig, Resources};
use crate::policies::{mixture_action, random_policy, scripted_best_response, tabular_policy, QTable};
use crate::trajectories::{collect, Behavior};
use crate::{DomainKind, ExperimentSet, GridConfig, TaskSpec};

const SETS: [ExperimentSet; 3] = [ExperimentSet::TeamId, ExperimentSet::TaskId, ExperimentSet::TaskAndTeamId];

#[test]
fn team_tasks_are_unique_and_densely_numbered() {
    for set in SETS {
        let tts = set.team_tasks();
        let pairs: HashSet<_> = tts.iter().map(|t| (t.strategy, t.task.token())).collect();
        assert_eq!(pairs.len(), tts.len());
        for (i, t) in tts.iter().enumerate() {
            assert_eq!(t.k, i + 1);
        }
    }
}

#[test]
fn assigned_tasks_are_bijections() {
    for r in 0..4 {
        let TaskSpec::Assigned(dirs) = TaskSpec::rotation(r) else { panic!("rotation {r} is free") };
        let distinct: HashSet<_> = dirs.iter().collect();
        assert_eq!(distinct.len(), 4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mixture_of_best_responses_is_a_simplex(
        seed in any::<u64>(),
        kind in select(vec![DomainKind::Lbf, DomainKind::Pp]),
        weights in proptest::collection::vec(0.0f64..1.0, 3),
        steps in 0usize..12,
    ) {
        let grid = GridConfig::standard(kind, 7);
        let tts = ExperimentSet::TeamId.team_tasks();
        let slot = AdHocEpisode::random_slot(&grid, seed);
        let mut ep = AdHocEpisode::new(&grid, tts[0], slot, seed).unwrap();
        let mut lib: Vec<_> = tts.iter().map(|&tt| scripted_best_response(tt, kind, grid.n_agents)).collect();
        lib.push(random_policy());
        lib.push(tabular_policy(Arc::new(QTable::default())));
        lib.iter_mut().for_each(|p| p.begin(slot, ep.observation()));
        let total: f64 = weights.iter().sum::<f64>() + 1.0;
        let w: Vec<f64> = weights.iter().chain([0.5, 0.5].iter()).map(|x| x / total).collect();
        for _ in 0..steps {
            let d = mixture_action(&lib, &w).unwrap();
            prop_assert!(d.0.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!((d.0.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let a = d.argmax();
            let tr = ep.step(a).unwrap();
            lib.iter_mut().for_each(|p| p.advance(a, tr.obs));
            if tr.done {
                break;
            }
        }
    }

    #[test]
    fn classifier_posteriors_are_simplex_vectors(seed in any::<u64>(), k in 1usize..6) {
        let grid = GridConfig::standard(DomainKind::Lbf, 7);
        let tt = ExperimentSet::TeamId.team_tasks()[0];
        let p = ClassifierParams::init(k, seed);
        let buf = collect(&grid, tt, Behavior::Mixture(0.2), 1, 24, seed).unwrap();
        let traj = &buf.trajectories[0];
        prop_assert!((1..=24).contains(&traj.len()));
        let trace = classifier::posteriors(&p, traj);
        prop_assert_eq!(trace.len(), traj.len());
        for post in std::iter::once(classifier::prior(&p)).chain(trace) {
            prop_assert_eq!(post.0.len(), k);
            prop_assert!(post.0.iter().all(|x| (0.0..=1.0).contains(x)));
            prop_assert!((post.0.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn trials_respect_step_and_trace_invariants(
        seed in any::<u64>(),
        trial in 0usize..1000,
        kind in select(vec![DomainKind::Lbf, DomainKind::Pp]),
        set in select(SETS.to_vec()),
        agent in select(vec![AgentKind::OriginalTeammate, AgentKind::ScriptedOracle, AgentKind::RecBayes]),
    ) {
        let cfg = ExperimentConfig { seed, ..ExperimentConfig::new(kind, 7, set, agent) };
        let res = Resources::with_classifier(&cfg, ClassifierParams::init(set.team_tasks().len(), seed)).unwrap();
        let tt = res.team_tasks[trial % res.team_tasks.len()];
        let t = run_trial(&cfg, &res, tt, trial).unwrap();
        prop_assert!(t.steps >= 1 && t.steps <= crate::env::EPISODE_CAP);
        prop_assert!(t.slot < cfg.n_agents);
        if agent.identifies() {
            prop_assert_eq!(t.trace.len(), t.steps as usize);
        } else {
            prop_assert!(t.trace.is_empty());
        }
        prop_assert_eq!(&t, &run_trial(&cfg, &res, tt, trial).unwrap());
    }

    #[test]
    fn normalization_anchors_and_monotonicity(original in 1.0f64..100.0, gap in 1.0f64..400.0, a in 0.0f64..600.0, b in 0.0f64..600.0) {
        let random = original + gap;
        prop_assert!((normalize(original, original, random).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!(normalize(random, original, random).unwrap().abs() < 1e-12);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(normalize(lo, original, random).unwrap() >= normalize(hi, original, random).unwrap());
    }
}
