//! Task data and streaming of event recordings into per-step input rows.

use ndarray::{Array2, ArrayViewMut1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{DataConfig, TrainConfig};
use crate::events::dataset::{load_dir, Recording, Split};
use crate::events::synth::synthetic_recordings;
use crate::events::{poisson_regression_task, Event, EventStream, RegressionTask};
use crate::{Error, Result};

pub enum Task {
    Regression(RegressionTask),
    Classification {
        train: Vec<Recording>,
        test: Vec<Recording>,
        classes: usize,
    },
}

impl Task {
    /// Loads or generates the data named by `cfg` and checks it against the
    /// network and slice lengths.
    pub fn load(cfg: &TrainConfig) -> Result<Task> {
        let n_input: usize = cfg.network.input.iter().product();
        let (recordings, preprocess) = match &cfg.data {
            DataConfig::Poisson {
                n_in,
                rate_hz,
                duration_ms,
            } => {
                let steps = cfg.steps(*duration_ms);
                let task = poisson_regression_task(*n_in, *rate_hz, steps, cfg.neuron.dt_ms, cfg.seeds.data)?;
                return Ok(Task::Regression(task));
            }
            DataConfig::Events { dir, preprocess } => (load_dir(dir)?, *preprocess),
            DataConfig::Synthetic {
                kind,
                train_per_class,
                test_per_class,
                duration_ms,
                preprocess,
            } => {
                let mut all = synthetic_recordings(*kind, *train_per_class, *duration_ms, Split::Train, cfg.seeds.data);
                all.extend(synthetic_recordings(
                    *kind,
                    *test_per_class,
                    *duration_ms,
                    Split::Test,
                    cfg.seeds.data.wrapping_add(0x5EED),
                ));
                (all, *preprocess)
            }
        };
        let mut train = Vec::new();
        let mut test = Vec::new();
        for mut r in recordings {
            r.stream = preprocess.apply(&r.stream)?;
            let n = 2 * r.stream.width as usize * r.stream.height as usize;
            if n != n_input {
                return Err(Error::Dataset(format!(
                    "{}: {}x{} sensor after preprocessing gives {n} inputs, network expects {:?}",
                    r.name, r.stream.width, r.stream.height, cfg.network.input
                )));
            }
            let needed = match r.split {
                Split::Train => cfg.training.train_slice_ms,
                Split::Test => cfg.training.test_slice_ms,
            };
            if r.stream.duration_ms() < needed {
                return Err(Error::SampleTooShort {
                    recording_ms: r.stream.duration_ms(),
                    duration_ms: needed,
                });
            }
            match r.split {
                Split::Train => train.push(r),
                Split::Test => test.push(r),
            }
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::Dataset(
                "need at least one training and one test recording".into(),
            ));
        }
        let classes = cfg.network.layers[0].readout();
        if let Some(r) = train.iter().chain(&test).find(|r| r.label >= classes) {
            return Err(Error::Dataset(format!(
                "{} has label {} but readouts have {classes} units",
                r.name, r.label
            )));
        }
        Ok(Task::Classification { train, test, classes })
    }
}

/// Indices of the training recordings used by minibatch `iteration`: a walk
/// through consecutive random permutations of the set, each seeded from
/// `(seed, epoch)`, so any iteration can be reproduced without history.
pub fn minibatch_indices(n: usize, batch: usize, iteration: u64, seed: u64) -> Vec<usize> {
    let first = iteration as usize * batch;
    let mut out = Vec::with_capacity(batch);
    let mut epoch = usize::MAX;
    let mut order: Vec<usize> = Vec::new();
    for pos in first..first + batch {
        if pos / n != epoch {
            epoch = pos / n;
            order = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
        }
        out.push(order[pos % n]);
    }
    out
}

/// Streams one recording into half-open `dt` bins without materializing
/// the frame tensor. Agrees with [`crate::events::bin_to_frames`].
pub struct EventCursor<'a> {
    events: &'a [Event],
    next: usize,
    start_us: u32,
    dt_us: f64,
    step: usize,
    plane: usize,
    width: usize,
}

impl<'a> EventCursor<'a> {
    pub fn new(stream: &'a EventStream, start_us: u32, dt_ms: f64) -> Self {
        let next = stream.events.partition_point(|e| e.t < start_us);
        EventCursor {
            events: &stream.events,
            next,
            start_us,
            dt_us: dt_ms * 1000.0,
            step: 0,
            plane: stream.width as usize * stream.height as usize,
            width: stream.width as usize,
        }
    }

    /// Adds this step's event counts to `row` (`[2·H·W]`, channel-major)
    /// and advances one step.
    pub fn fill(&mut self, mut row: ArrayViewMut1<f32>) {
        while let Some(e) = self.events.get(self.next) {
            let k = ((e.t - self.start_us) as f64 / self.dt_us).floor() as usize;
            if k > self.step {
                break;
            }
            let idx = e.polarity.channel() * self.plane + e.y as usize * self.width + e.x as usize;
            row[idx] += 1.0;
            self.next += 1;
        }
        self.step += 1;
    }
}

/// One-hot `[labels.len(), classes]` targets.
pub fn one_hot(labels: &[usize], classes: usize) -> Array2<f32> {
    let mut t = Array2::zeros((labels.len(), classes));
    for (i, &l) in labels.iter().enumerate() {
        t[[i, l]] = 1.0;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::synth::gesture_stream;
    use crate::events::{bin_to_frames, downsample_sum};

    #[test]
    fn cursor_matches_frame_binning() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stream = downsample_sum(&gesture_stream(4, 300, &mut rng), 4).unwrap();
        let start = stream.start_us() + 17_000;
        let frames = bin_to_frames(&stream, 2.0, 100, start).unwrap();
        let mut cursor = EventCursor::new(&stream, start, 2.0);
        let mut row = ndarray::Array1::<f32>::zeros(frames.flat().ncols());
        for t in 0..100 {
            row.fill(0.0);
            cursor.fill(row.view_mut());
            let expected = frames.flat().row(t).mapv(|c| c as f32);
            assert_eq!(row, expected, "step {t}");
        }
    }

    #[test]
    fn minibatches_walk_permutations() {
        let n = 7;
        let all: Vec<usize> = (0..7u64).flat_map(|i| minibatch_indices(n, 3, i, 5)).collect();
        for epoch in all.chunks(n).take(3) {
            let mut e = epoch.to_vec();
            e.sort();
            assert_eq!(e, (0..n).collect::<Vec<_>>());
        }
        assert_eq!(minibatch_indices(n, 3, 4, 5), minibatch_indices(n, 3, 4, 5));
        assert_ne!(minibatch_indices(n, 7, 0, 5), minibatch_indices(n, 7, 0, 6));
    }

    #[test]
    fn one_hot_rows() {
        let t = one_hot(&[2, 0], 3);
        assert_eq!(t, ndarray::arr2(&[[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]));
    }
}
