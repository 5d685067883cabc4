use decolle::trainer::{load_checkpoint, DataConfig, Task, TrainConfig, Trainer};
use proptest::prelude::*;

const POISSON: &str = r#"
[network]
input = [20]
layers = [
  { kind = "dense", units = 12, readout = 1 },
  { kind = "dense", units = 10, readout = 1 },
  { kind = "dense", units = 8, readout = 1 },
]

[optimizer]
lr = 1e-3

[schedule]
divisor = 5.0
interval = 2

[training]
burn_in_ms = 10.0
iterations = 5
eval_every = 2

[data]
source = "poisson"
n_in = 20
rate_hz = 50.0
duration_ms = 60.0
"#;

const GESTURES: &str = r#"
[network]
input = [2, 16, 16]
layers = [
  { kind = "conv", channels = 3, kernel = 3, padding = 1, pool = 2, readout = 11, dropout = 0.5 },
  { kind = "dense", units = 12, readout = 11, dropout = 0.3 },
]

[optimizer]
lr = 1e-3

[training]
batch_size = 3
burn_in_ms = 5.0
train_slice_ms = 20.0
test_slice_ms = 30.0
iterations = 4
eval_every = 2

[data]
source = "synthetic"
kind = "gestures"
train_per_class = 1
test_per_class = 1
duration_ms = 60
preprocess = { downsample = 8 }
"#;

fn cfg(text: &str, overrides: &[&str]) -> TrainConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    TrainConfig::from_toml_with_overrides(text, &o).unwrap()
}

fn weights(t: &Trainer) -> Vec<Vec<u32>> {
    t.network
        .layers
        .iter()
        .map(|l| {
            l.params
                .weight
                .iter()
                .chain(&l.params.bias)
                .map(|v| v.to_bits())
                .collect()
        })
        .collect()
}

#[test]
fn zero_learning_rate_leaves_parameters_bit_identical() {
    for text in [POISSON, GESTURES] {
        let mut t = Trainer::new(cfg(text, &["optimizer.lr=0.0"])).unwrap();
        let before = weights(&t);
        for _ in 0..3 {
            t.train_minibatch().unwrap();
        }
        assert_eq!(weights(&t), before);
        assert!(t.updates > 0);
    }
}

#[test]
fn training_changes_parameters() {
    let mut t = Trainer::new(cfg(GESTURES, &[])).unwrap();
    let before = weights(&t);
    t.train_minibatch().unwrap();
    assert_ne!(weights(&t), before);
}

#[test]
fn readout_and_feedback_matrices_never_change() {
    let mut t = Trainer::new(cfg(GESTURES, &[])).unwrap();
    let fixed = |t: &Trainer| -> Vec<Vec<u32>> {
        t.network
            .layers
            .iter()
            .map(|l| {
                l.params
                    .readout()
                    .iter()
                    .chain(l.params.feedback().iter())
                    .map(|v| v.to_bits())
                    .collect()
            })
            .collect()
    };
    let before = fixed(&t);
    let w0 = weights(&t);
    for _ in 0..3 {
        t.train_minibatch().unwrap();
    }
    assert_ne!(weights(&t), w0);
    assert_eq!(fixed(&t), before);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    for text in [POISSON, GESTURES] {
        let mut straight = Trainer::new(cfg(text, &[])).unwrap();
        let mut lrs = Vec::new();
        for _ in 0..5 {
            lrs.push(straight.learning_rate());
            straight.train_minibatch().unwrap();
        }

        let mut first = Trainer::new(cfg(text, &[])).unwrap();
        for _ in 0..3 {
            first.train_minibatch().unwrap();
        }
        let bytes = first.checkpoint();
        let mut resumed = Trainer::resume(cfg(text, &[]), &bytes).unwrap();
        assert_eq!(resumed.iteration, 3);
        assert_eq!(resumed.updates, first.updates);
        for lr in &lrs[3..] {
            assert_eq!(resumed.learning_rate(), *lr);
            resumed.train_minibatch().unwrap();
        }
        assert_eq!(resumed.checkpoint(), straight.checkpoint());
        assert_eq!(resumed.evaluate().unwrap(), straight.evaluate().unwrap());
    }
}

#[test]
fn schedule_divides_by_iteration_count() {
    let mut t = Trainer::new(cfg(POISSON, &[])).unwrap();
    let mut seen = Vec::new();
    for _ in 0..5 {
        seen.push(t.learning_rate());
        t.train_minibatch().unwrap();
    }
    let want = [1e-3, 1e-3, 2e-4, 2e-4, 4e-5];
    for (a, b) in seen.iter().zip(want) {
        assert!((a - b).abs() < 1e-15, "{seen:?}");
    }
}

#[test]
fn resume_rejects_other_topology() {
    let t = Trainer::new(cfg(POISSON, &[])).unwrap();
    let bytes = t.checkpoint();
    let other = cfg(POISSON, &[]);
    let mut other_topo = other.network.clone();
    other_topo.layers.pop();
    assert!(load_checkpoint(&bytes, &other_topo, other.optimizer).is_err());
    assert!(Trainer::resume(cfg(GESTURES, &[]), &bytes).is_err());
}

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = cfg(GESTURES, &["training.checkpoint_every=2"]);
    c.output_dir = Some(dir.path().to_path_buf());
    let metrics = Trainer::new(c.clone()).unwrap().run().unwrap();
    for f in [
        "config.toml",
        "metrics.csv",
        "train.csv",
        "perf.csv",
        "checkpoint-000002.bin",
        "checkpoint-final.bin",
        "error.svg",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    // Evaluations at 0, 2 and 4 for each of the two layers.
    let iters: Vec<u64> = metrics.eval.iter().map(|r| r.iteration).collect();
    assert_eq!(iters, vec![0, 0, 2, 2, 4, 4]);
    assert!(metrics
        .eval
        .iter()
        .all(|r| r.error.is_some_and(|e| (0.0..=1.0).contains(&e))));
    assert_eq!(metrics.train.len(), 4 * 2);
    let read_back = decolle::trainer::metrics::read_metrics_csv(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(read_back, metrics.eval);
    let saved = TrainConfig::from_toml(&std::fs::read_to_string(dir.path().join("config.toml")).unwrap()).unwrap();
    assert_eq!(saved, c);
}

#[test]
fn regression_run_plots_readouts() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = cfg(POISSON, &["training.iterations=2"]);
    c.output_dir = Some(dir.path().to_path_buf());
    Trainer::new(c).unwrap().run().unwrap();
    let svg = std::fs::read_to_string(dir.path().join("readouts.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn regression_evaluation_returns_full_traces() {
    let mut t = Trainer::new(cfg(POISSON, &[])).unwrap();
    let e = t.evaluate().unwrap();
    let traces = e.traces.unwrap();
    assert_eq!(traces.len(), 3);
    let Task::Regression(task) = t.task() else { panic!() };
    assert!(traces.iter().all(|tr| tr.len() == task.input.nrows()));
    assert!(e.error.is_none());
}

#[test]
fn invalid_configs_fail_before_training() {
    let bad = [
        vec!["training.burn_in_ms=60.0"],
        vec!["training.burn_in_ms=70.0"],
        vec!["training.batch_size=0"],
        vec!["training.eval_every=0"],
        vec!["data.n_in=21"],
        vec!["training.burn_in_ms=10.5"],
        vec!["loss.kind=\"smooth_l1\"", "loss.delta=0.0"],
        vec!["optimizer.lr=-1.0"],
    ];
    for o in bad {
        let c = TrainConfig::from_toml_with_overrides(POISSON, &o.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        assert!(c.and_then(Trainer::new).is_err(), "{o:?} accepted");
    }
    assert!(TrainConfig::from_toml(&format!("{POISSON}\nbogus = 1\n")).is_err());
    let mut missing = cfg(GESTURES, &[]);
    missing.data = DataConfig::Events {
        dir: "/nonexistent/decolle".into(),
        preprocess: Default::default(),
    };
    assert!(Trainer::new(missing).is_err());
    let too_short = cfg(GESTURES, &["training.test_slice_ms=100.0"]);
    assert!(Trainer::new(too_short).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn updates_per_minibatch_is_slice_minus_burn_in(burn_in in 0usize..20, extra in 1usize..20) {
        let duration = burn_in + extra;
        let mut t = Trainer::new(cfg(POISSON, &[
            &format!("training.burn_in_ms={burn_in}.0"),
            &format!("data.duration_ms={duration}.0"),
        ])).unwrap();
        let stats = t.train_minibatch().unwrap();
        prop_assert_eq!(stats.updates, extra);
        prop_assert_eq!(t.updates as usize, extra);
        prop_assert_eq!(t.config().updates_per_minibatch(), extra);
    }
}
