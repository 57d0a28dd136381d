use temple::analysis::{switch_consistency_error, trace_episode};
use temple::env::EnvConfig;
use temple::policy::PolicyKind;
use temple::trainer::{evaluate, load_policy, read_metrics, train, EvalOptions, ExperimentConfig};
use temple::{Policy32, Policy64};

fn tiny(kind: PolicyKind) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.env = EnvConfig {
        max_episode_steps: 40,
        ..EnvConfig::with_keys(1)
    };
    c.policy.kind = kind;
    c.policy.hidden = 16;
    c.policy.flat_hidden = 16;
    c.train.rollout_steps = 64;
    c.train.num_envs = 2;
    c.train.minibatch_size = 4;
    c.train.max_updates = Some(3);
    c.train.checkpoint_every = 0;
    c.logging.wall_time = false;
    c
}

#[test]
fn every_policy_kind_trains_checkpoints_and_evaluates() {
    for kind in [PolicyKind::Temple, PolicyKind::TempleFix, PolicyKind::Flat] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(kind);
        let run = train::<f64>(&cfg, Some(dir.path())).unwrap();
        assert_eq!(run.metrics.len(), 3);
        let on_disk = read_metrics(&dir.path().join("metrics.csv")).unwrap();
        assert_eq!(on_disk.len(), 3);
        assert_eq!(on_disk.last().unwrap().env_steps, run.env_steps);

        let (stored, arch, params) = load_policy::<f64>(&dir.path().join("final.json"), Some(&cfg.policy)).unwrap();
        assert_eq!(stored, cfg);
        assert_eq!(params, run.params);
        let opts = EvalOptions {
            episodes: 3,
            ..EvalOptions::default()
        };
        let a = evaluate(&arch, &params, &cfg.env, &opts).unwrap();
        let b = evaluate(&Policy64::new(cfg.policy), &run.params, &cfg.env, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.returns.iter().all(|&r| (0.0..=12.0).contains(&r)));

        if kind != PolicyKind::Flat {
            let trace = trace_episode(&arch, &params, &cfg.env, 1).unwrap();
            assert_eq!(switch_consistency_error(&trace), 0.0);
        }
    }
}

#[test]
fn single_precision_instantiation_trains() {
    let cfg = tiny(PolicyKind::Temple);
    let run = train::<f32>(&cfg, None).unwrap();
    assert!(run.params.as_slice().iter().all(|v| v.is_finite()));
    let eval = evaluate(
        &Policy32::new(cfg.policy),
        &run.params,
        &cfg.env,
        &EvalOptions {
            episodes: 2,
            ..EvalOptions::default()
        },
    )
    .unwrap();
    assert_eq!(eval.returns.len(), 2);
}
