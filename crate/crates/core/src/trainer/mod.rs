//! Training and evaluation loops.
//!
//! Each minibatch starts from zeroed states and is streamed one timestep at
//! a time. After the burn-in every layer is updated at every step from its
//! own local loss, so nothing about past timesteps is kept beyond the
//! traces themselves.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod metrics;
pub mod plot;

use std::fs;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{DataConfig, TrainConfig};
pub use data::Task;
pub use metrics::{MetricRow, PerfRow, RunMetrics, TrainRow};

use crate::dynamics::LayerState;
use crate::events::dataset::Recording;
use crate::events::random_slice;
use crate::learning::{LocalObjective, NetworkOptimizer};
use crate::network::{LayerShape, Network, NetworkStep};
use crate::Result;
use data::{minibatch_indices, one_hot, EventCursor};

const SLICE_SALT: u64 = 0x51_1CE5;
const EVAL_SALT: u64 = 0xE7A1;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-layer averages over the post-burn-in part of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    pub loss: Vec<f64>,
    pub reg: Vec<f64>,
    /// Spikes per neuron per step.
    pub firing_rate: Vec<f64>,
    /// Steps on which every layer was updated.
    pub updates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: Vec<f64>,
    /// Per-layer classification error (classification tasks only).
    pub error: Option<Vec<f64>>,
    pub firing_rate: Vec<f64>,
    /// First readout unit of every layer at every step (regression only).
    pub traces: Option<Vec<Vec<f64>>>,
}

/// Class with the largest accumulated readout per row; ties go to the
/// lowest index.
pub fn predict(accumulated: ArrayView2<f32>) -> Vec<usize> {
    accumulated
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

struct Episode<'a> {
    steps: usize,
    burn_in: usize,
    batch: usize,
    objective: &'a LocalObjective,
}

impl Episode<'_> {
    /// Streams `steps` inputs through `net`. `fill_input(t, x)` writes step
    /// `t` into the zeroed `x`, `fill_targets(t, ŷ)` updates the per-layer
    /// targets, and `observe` sees every step's outputs. With `learn`, all
    /// layers are updated after the burn-in.
    fn run(
        &self,
        net: &mut Network<f32>,
        mut learn: Option<(&mut NetworkOptimizer<f32>, f64)>,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
        mut fill_input: impl FnMut(usize, &mut Array2<f32>),
        mut fill_targets: impl FnMut(usize, &mut [Array2<f32>]),
        mut observe: impl FnMut(usize, &NetworkStep<f32>),
    ) -> Result<EpisodeStats> {
        let n_layers = net.layers.len();
        let mut states: Vec<LayerState<f32>> = net.new_states(self.batch);
        let mut input = Array2::<f32>::zeros((self.batch, net.n_input()));
        let mut targets: Vec<Array2<f32>> = net
            .layers
            .iter()
            .map(|l| Array2::zeros((self.batch, l.params.readout().nrows())))
            .collect();
        let mut stats = EpisodeStats {
            loss: vec![0.0; n_layers],
            reg: vec![0.0; n_layers],
            firing_rate: vec![0.0; n_layers],
            updates: 0,
        };
        for t in 0..self.steps {
            input.fill(0.0);
            fill_input(t, &mut input);
            let out = net.forward(&mut states, input.view(), dropout_rng.as_deref_mut())?;
            observe(t, &out);
            if t < self.burn_in {
                continue;
            }
            fill_targets(t, &mut targets);
            for l in 0..n_layers {
                stats.firing_rate[l] += states[l].s.mean().unwrap_or(0.0) as f64;
                match learn.as_mut() {
                    Some((optimizer, lr)) => {
                        let g = self.objective.layer_gradient(
                            &net.layers[l],
                            &states[l],
                            &out.caches[l],
                            &out.readouts[l],
                            out.masks[l].as_ref(),
                            targets[l].view(),
                        )?;
                        optimizer.apply(net, l, &g, *lr)?;
                        stats.loss[l] += g.loss;
                        stats.reg[l] += g.reg;
                    }
                    None => {
                        let loss = self
                            .objective
                            .loss
                            .per_sample(out.readouts[l].view(), targets[l].view())?;
                        stats.loss[l] += loss.mean().unwrap_or(0.0);
                        if !self.objective.regularizer.is_off() {
                            stats.reg[l] += self
                                .objective
                                .regularizer
                                .per_sample(states[l].u.view())
                                .mean()
                                .unwrap_or(0.0);
                        }
                    }
                }
            }
            if learn.is_some() {
                stats.updates += 1;
            }
        }
        let counted = self.steps.saturating_sub(self.burn_in).max(1) as f64;
        for v in stats
            .loss
            .iter_mut()
            .chain(&mut stats.reg)
            .chain(&mut stats.firing_rate)
        {
            *v /= counted;
        }
        Ok(stats)
    }
}

/// Classification error of `net` on `test`, accumulating every layer's
/// readout after the burn-in of each `test_slice_ms` slice taken from the
/// start of the recording.
pub fn evaluate(
    net: &mut Network<f32>,
    test: &[Recording],
    cfg: &TrainConfig,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Evaluation> {
    let objective = cfg.objective();
    let n_layers = net.layers.len();
    let classes = net.layers[0].params.readout().nrows();
    let mut wrong = vec![0usize; n_layers];
    let mut loss = vec![0.0; n_layers];
    let mut rate = vec![0.0; n_layers];
    let mut rng = dropout_rng;
    let n = test.len();
    for chunk in test.chunks(cfg.training.batch_size) {
        let episode = Episode {
            steps: cfg.steps(cfg.training.test_slice_ms),
            burn_in: cfg.burn_in_steps(),
            batch: chunk.len(),
            objective: &objective,
        };
        let mut cursors: Vec<EventCursor> = chunk
            .iter()
            .map(|r| EventCursor::new(&r.stream, r.stream.start_us(), cfg.neuron.dt_ms))
            .collect();
        let labels: Vec<usize> = chunk.iter().map(|r| r.label).collect();
        let target = one_hot(&labels, classes);
        let mut acc: Vec<Array2<f32>> = (0..n_layers).map(|_| Array2::zeros((chunk.len(), classes))).collect();
        let burn_in = episode.burn_in;
        let stats = episode.run(
            net,
            None,
            rng.as_deref_mut(),
            |_, x| {
                for (c, mut row) in cursors.iter_mut().zip(x.rows_mut()) {
                    c.fill(row.view_mut());
                }
            },
            |_, targets| {
                for t in targets.iter_mut() {
                    t.assign(&target);
                }
            },
            |t, out| {
                if t >= burn_in {
                    for (a, y) in acc.iter_mut().zip(&out.readouts) {
                        *a += y;
                    }
                }
            },
        )?;
        let w = chunk.len() as f64 / n as f64;
        for l in 0..n_layers {
            wrong[l] += predict(acc[l].view())
                .iter()
                .zip(&labels)
                .filter(|(p, y)| p != y)
                .count();
            loss[l] += w * stats.loss[l];
            rate[l] += w * stats.firing_rate[l];
        }
    }
    Ok(Evaluation {
        loss,
        error: Some(wrong.iter().map(|&k| k as f64 / n.max(1) as f64).collect()),
        firing_rate: rate,
        traces: None,
    })
}

/// Rough bytes held for learning: optimizer moments plus the largest
/// single-layer gradient and its modulator. Independent of sequence length.
pub fn learning_bytes_estimate(net: &Network<f32>, batch: usize) -> usize {
    let moments: usize = net
        .layers
        .iter()
        .map(|l| 2 * (l.params.weight.len() + l.params.bias.len()))
        .sum();
    let scratch = net
        .layers
        .iter()
        .map(|l| {
            let patches = match l.shape {
                LayerShape::Conv(g) => {
                    g.patch_len() * g.conv_positions() * batch + g.c_out * g.conv_positions() * batch
                }
                LayerShape::Dense { .. } => 0,
            };
            l.params.weight.len() + l.params.bias.len() + 2 * batch * l.shape.n_out() + patches
        })
        .max()
        .unwrap_or(0);
    (moments + scratch) * std::mem::size_of::<f32>()
}

pub struct Trainer {
    cfg: TrainConfig,
    pub network: Network<f32>,
    pub optimizer: NetworkOptimizer<f32>,
    /// Minibatches completed.
    pub iteration: u64,
    /// Timestep updates applied.
    pub updates: u64,
    task: Task,
}

impl Trainer {
    /// Validates the config and loads the data before anything is trained.
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let task = Task::load(&cfg)?;
        let network = Network::new(
            &cfg.network,
            cfg.neuron.decay()?,
            cfg.neuron.rho,
            &cfg.neuron.feedback_noise,
            cfg.seeds.params,
        )?;
        let optimizer = NetworkOptimizer::new(cfg.optimizer, &network);
        Ok(Trainer {
            cfg,
            network,
            optimizer,
            iteration: 0,
            updates: 0,
            task,
        })
    }

    /// Continues from a checkpoint taken after `step` minibatches.
    pub fn resume(cfg: TrainConfig, bytes: &[u8]) -> Result<Self> {
        let mut t = Trainer::new(cfg)?;
        let ck = load_checkpoint(bytes, &t.cfg.network, t.cfg.optimizer)?;
        t.network = ck.network;
        t.optimizer = ck.optimizer;
        t.iteration = ck.step;
        t.updates = ck.step * t.cfg.updates_per_minibatch() as u64;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn checkpoint(&self) -> Vec<u8> {
        save_checkpoint(&self.network, &self.optimizer, self.iteration)
    }

    /// Learning rate for the next minibatch.
    pub fn learning_rate(&self) -> f64 {
        self.cfg.schedule.lr_at(self.cfg.optimizer.lr, self.iteration)
    }

    /// One minibatch of online learning.
    pub fn train_minibatch(&mut self) -> Result<EpisodeStats> {
        let lr = self.learning_rate();
        let cfg = &self.cfg;
        let objective = cfg.objective();
        let mut dropout_rng = stream_rng(cfg.seeds.dropout, self.iteration);
        let steps = cfg.steps(cfg.train_slice_ms());
        let burn_in = cfg.burn_in_steps();
        let stats = match &self.task {
            Task::Regression(task) => {
                let episode = Episode {
                    steps,
                    burn_in,
                    batch: 1,
                    objective: &objective,
                };
                episode.run(
                    &mut self.network,
                    Some((&mut self.optimizer, lr)),
                    Some(&mut dropout_rng),
                    |t, x| x.row_mut(0).assign(&task.input.row(t)),
                    |t, targets| {
                        for (l, y) in targets.iter_mut().enumerate() {
                            y.fill(task.targets[l % 3][t] as f32);
                        }
                    },
                    |_, _| {},
                )?
            }
            Task::Classification { train, classes, .. } => {
                let batch = cfg.training.batch_size;
                let picks = minibatch_indices(train.len(), batch, self.iteration, cfg.seeds.data);
                let mut slice_rng = stream_rng(cfg.seeds.data ^ SLICE_SALT, self.iteration);
                let mut cursors = Vec::with_capacity(batch);
                for &i in &picks {
                    let s = &train[i].stream;
                    let offset_ms = random_slice(cfg.training.train_slice_ms, s.duration_ms(), &mut slice_rng)?;
                    cursors.push(EventCursor::new(
                        s,
                        s.start_us() + offset_ms as u32 * 1000,
                        cfg.neuron.dt_ms,
                    ));
                }
                let labels: Vec<usize> = picks.iter().map(|&i| train[i].label).collect();
                let target = one_hot(&labels, *classes);
                let episode = Episode {
                    steps,
                    burn_in,
                    batch,
                    objective: &objective,
                };
                episode.run(
                    &mut self.network,
                    Some((&mut self.optimizer, lr)),
                    Some(&mut dropout_rng),
                    |_, x| {
                        for (c, mut row) in cursors.iter_mut().zip(x.rows_mut()) {
                            c.fill(row.view_mut());
                        }
                    },
                    |_, targets| {
                        for t in targets.iter_mut() {
                            t.assign(&target);
                        }
                    },
                    |_, _| {},
                )?
            }
        };
        self.iteration += 1;
        self.updates += stats.updates as u64;
        Ok(stats)
    }

    /// Frozen evaluation at the current parameters. Regression runs the
    /// fixed task once; classification runs the test set.
    pub fn evaluate(&mut self) -> Result<Evaluation> {
        let cfg = &self.cfg;
        match &self.task {
            Task::Regression(task) => {
                let objective = cfg.objective();
                let episode = Episode {
                    steps: task.input.nrows(),
                    burn_in: cfg.burn_in_steps(),
                    batch: 1,
                    objective: &objective,
                };
                let mut traces = vec![Vec::with_capacity(episode.steps); self.network.layers.len()];
                let stats = episode.run(
                    &mut self.network,
                    None,
                    None,
                    |t, x| x.row_mut(0).assign(&task.input.row(t)),
                    |t, targets| {
                        for (l, y) in targets.iter_mut().enumerate() {
                            y.fill(task.targets[l % 3][t] as f32);
                        }
                    },
                    |_, out| {
                        for (tr, y) in traces.iter_mut().zip(&out.readouts) {
                            tr.push(y[[0, 0]] as f64);
                        }
                    },
                )?;
                Ok(Evaluation {
                    loss: stats.loss,
                    error: None,
                    firing_rate: stats.firing_rate,
                    traces: Some(traces),
                })
            }
            Task::Classification { test, .. } => {
                let n = cfg.training.max_test_samples.unwrap_or(test.len()).min(test.len());
                let mut rng = stream_rng(cfg.seeds.dropout ^ EVAL_SALT, self.iteration);
                let rng = cfg.training.test_dropout.then_some(&mut rng);
                evaluate(&mut self.network, &test[..n], cfg, rng)
            }
        }
    }

    /// Trains up to `training.iterations` minibatches, evaluating at the
    /// start, every `eval_every` minibatches and at the end. Writes all
    /// artifacts when `output_dir` is set.
    pub fn run(&mut self) -> Result<RunMetrics> {
        let mut metrics = RunMetrics::default();
        let total = self.cfg.training.iterations;
        let every = self.cfg.training.eval_every;
        let ck_every = self.cfg.training.checkpoint_every;
        let batch = match self.task {
            Task::Regression(_) => 1,
            Task::Classification { .. } => self.cfg.training.batch_size,
        };
        let learning_bytes = learning_bytes_estimate(&self.network, batch);
        let started = Instant::now();
        let mut train_time = 0.0f64;
        let mut train_steps = 0usize;
        let mut last_eval = None;
        if let Some(dir) = &self.cfg.output_dir {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.toml"), self.cfg.to_toml())?;
        }
        self.record_eval(&mut metrics, &mut last_eval)?;
        while self.iteration < total {
            let it = self.iteration;
            let t0 = Instant::now();
            let stats = self.train_minibatch()?;
            train_time += t0.elapsed().as_secs_f64();
            train_steps += self.cfg.steps(self.cfg.train_slice_ms());
            for l in 0..stats.loss.len() {
                metrics.train.push(TrainRow {
                    iteration: it,
                    layer: l,
                    loss: stats.loss[l],
                    reg: stats.reg[l],
                    firing_rate: stats.firing_rate[l],
                });
            }
            if self.iteration.is_multiple_of(every) || self.iteration == total {
                self.record_eval(&mut metrics, &mut last_eval)?;
                metrics.perf.push(PerfRow {
                    iteration: self.iteration,
                    updates: self.updates,
                    wall_ms: started.elapsed().as_secs_f64() * 1e3,
                    us_per_step: train_time * 1e6 / train_steps.max(1) as f64,
                    learning_bytes,
                });
                train_time = 0.0;
                train_steps = 0;
            }
            if let Some(dir) = &self.cfg.output_dir {
                if ck_every > 0 && self.iteration.is_multiple_of(ck_every) {
                    fs::write(
                        dir.join(format!("checkpoint-{:06}.bin", self.iteration)),
                        self.checkpoint(),
                    )?;
                }
            }
        }
        if let Some(dir) = &self.cfg.output_dir {
            fs::write(dir.join("checkpoint-final.bin"), self.checkpoint())?;
            metrics.write_dir(dir)?;
            match last_eval.and_then(|e: Evaluation| e.traces) {
                Some(traces) => {
                    let Task::Regression(task) = &self.task else {
                        unreachable!()
                    };
                    let targets: Vec<Vec<f64>> = (0..traces.len()).map(|l| task.targets[l % 3].clone()).collect();
                    plot::regression_traces(&traces, &targets, task.dt_ms, &dir.join("readouts.svg"))?;
                }
                None => plot::error_curves(&metrics, &dir.join("error.svg"))?,
            }
        }
        Ok(metrics)
    }

    fn record_eval(&mut self, metrics: &mut RunMetrics, last: &mut Option<Evaluation>) -> Result<()> {
        let e = self.evaluate()?;
        for l in 0..e.loss.len() {
            metrics.eval.push(MetricRow {
                iteration: self.iteration,
                layer: l,
                loss: e.loss[l],
                error: e.error.as_ref().map(|v| v[l]),
                firing_rate: e.firing_rate[l],
            });
        }
        *last = Some(e);
        Ok(())
    }
}

/// Builds a trainer from `cfg` and runs it to completion.
pub fn run_training(cfg: &TrainConfig) -> Result<RunMetrics> {
    Trainer::new(cfg.clone())?.run()
}
