//! Run configuration, read from TOML.
//!
//! Every field except `network` and `data` has a default, so a minimal file
//! only names the topology and the data source. Any field can be replaced
//! from the command line with a dotted `key=value` override.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{DecayConstants, SurrogateSpec};
use crate::events::dataset::Preprocess;
use crate::events::synth::SynthKind;
use crate::learning::{AdaMaxConfig, FeedbackMode, LocalObjective, LossSpec, LrSchedule, RegularizerSpec};
use crate::network::{FeedbackNoiseSpec, NetworkTopology};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub network: NetworkTopology,
    #[serde(default)]
    pub neuron: NeuronConfig,
    #[serde(default)]
    pub loss: LossSpec,
    #[serde(default)]
    pub regularizer: RegularizerSpec,
    #[serde(default)]
    pub optimizer: AdaMaxConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub seeds: Seeds,
    pub data: DataConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuronConfig {
    pub dt_ms: f64,
    pub tau_mem_ms: f64,
    pub tau_syn_ms: f64,
    pub tau_ref_ms: f64,
    pub rho: f64,
    pub surrogate: SurrogateSpec,
    pub feedback_noise: FeedbackNoiseSpec,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        NeuronConfig {
            dt_ms: 1.0,
            tau_mem_ms: 10.0,
            tau_syn_ms: 5.0,
            tau_ref_ms: 10.0,
            rho: 1.0,
            surrogate: SurrogateSpec::default(),
            feedback_noise: FeedbackNoiseSpec::default(),
        }
    }
}

impl NeuronConfig {
    pub fn decay(&self) -> Result<DecayConstants> {
        DecayConstants::new(self.dt_ms, self.tau_mem_ms, self.tau_syn_ms, self.tau_ref_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub enabled: bool,
    pub divisor: f64,
    pub interval: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = LrSchedule::default();
        ScheduleConfig {
            enabled: true,
            divisor: s.divisor,
            interval: s.interval,
        }
    }
}

impl ScheduleConfig {
    pub fn schedule(&self) -> Option<LrSchedule> {
        self.enabled.then_some(LrSchedule {
            divisor: self.divisor,
            interval: self.interval,
        })
    }

    /// Learning rate for minibatch iteration `iteration`.
    pub fn lr_at(&self, base: f64, iteration: u64) -> f64 {
        match self.schedule() {
            Some(s) => s.lr_at(base, iteration),
            None => base,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub burn_in_ms: f64,
    pub train_slice_ms: f64,
    pub test_slice_ms: f64,
    /// Number of minibatches.
    pub iterations: u64,
    /// Evaluate every this many minibatches (and always at 0 and at the end).
    pub eval_every: u64,
    pub test_dropout: bool,
    pub feedback: FeedbackMode,
    /// Write a checkpoint every this many minibatches; 0 only at the end.
    pub checkpoint_every: u64,
    /// Cap on the number of test recordings per evaluation.
    pub max_test_samples: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 72,
            burn_in_ms: 50.0,
            train_slice_ms: 500.0,
            test_slice_ms: 1800.0,
            iterations: 1000,
            eval_every: 100,
            test_dropout: true,
            feedback: FeedbackMode::default(),
            checkpoint_every: 0,
            max_test_samples: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub params: u64,
    pub data: u64,
    pub dropout: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            params: 0,
            data: 1,
            dropout: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Fixed Poisson raster regressed onto ramp / fast / slow sinusoid
    /// targets; layer `l` gets target `l mod 3`.
    Poisson {
        n_in: usize,
        rate_hz: f64,
        duration_ms: f64,
    },
    /// A directory of event files with a manifest.
    Events {
        dir: PathBuf,
        #[serde(default)]
        preprocess: Preprocess,
    },
    /// Emulated DVS recordings generated on the fly.
    Synthetic {
        kind: SynthKind,
        train_per_class: usize,
        test_per_class: usize,
        duration_ms: u32,
        #[serde(default)]
        preprocess: Preprocess,
    },
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path` and applies `overrides` (`dotted.key=value`) before
    /// deserializing.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        doc.try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn objective(&self) -> LocalObjective {
        LocalObjective {
            loss: self.loss,
            regularizer: self.regularizer,
            surrogate: self.neuron.surrogate,
            feedback: self.training.feedback,
        }
    }

    pub fn steps(&self, slice_ms: f64) -> usize {
        (slice_ms / self.neuron.dt_ms).round() as usize
    }

    pub fn burn_in_steps(&self) -> usize {
        self.steps(self.training.burn_in_ms)
    }

    /// Length of one training slice in ms (the whole task for regression).
    pub fn train_slice_ms(&self) -> f64 {
        match self.data {
            DataConfig::Poisson { duration_ms, .. } => duration_ms,
            _ => self.training.train_slice_ms,
        }
    }

    /// Weight updates applied per minibatch: every step after burn-in.
    pub fn updates_per_minibatch(&self) -> usize {
        self.steps(self.train_slice_ms()).saturating_sub(self.burn_in_steps())
    }

    /// Checks everything that can be checked without touching the data.
    pub fn validate(&self) -> Result<()> {
        self.neuron.decay()?;
        SurrogateSpec::new(self.neuron.surrogate.half_width)?;
        self.loss.validate()?;
        self.regularizer.validate()?;
        self.optimizer.validate()?;
        if let Some(s) = self.schedule.schedule() {
            s.validate()?;
        }
        self.network.shapes()?;
        let t = &self.training;
        if t.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(t.burn_in_ms >= 0.0) {
            return Err(Error::Config("burn_in_ms must be non-negative".into()));
        }
        let slices = match self.data {
            DataConfig::Poisson { duration_ms, .. } => vec![("duration_ms", duration_ms)],
            _ => vec![("train_slice_ms", t.train_slice_ms), ("test_slice_ms", t.test_slice_ms)],
        };
        for (name, ms) in slices {
            if !(ms > t.burn_in_ms) {
                return Err(Error::Config(format!(
                    "{name} ({ms} ms) must be longer than burn_in_ms ({} ms)",
                    t.burn_in_ms
                )));
            }
        }
        for (name, ms) in [("burn_in_ms", t.burn_in_ms), ("slice", self.train_slice_ms())] {
            let steps = ms / self.neuron.dt_ms;
            if (steps - steps.round()).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "{name} ({ms} ms) is not a whole number of {} ms steps",
                    self.neuron.dt_ms
                )));
            }
        }
        if t.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        let classes = match &self.data {
            DataConfig::Poisson { n_in, rate_hz, .. } => {
                if *n_in != self.network.input.iter().product::<usize>() {
                    return Err(Error::Config(format!(
                        "poisson task has {n_in} inputs but the network expects {:?}",
                        self.network.input
                    )));
                }
                if !(*rate_hz >= 0.0) {
                    return Err(Error::Config("rate_hz must be non-negative".into()));
                }
                None
            }
            DataConfig::Synthetic {
                kind,
                train_per_class,
                test_per_class,
                ..
            } => {
                if *train_per_class == 0 || *test_per_class == 0 {
                    return Err(Error::Config(
                        "synthetic sets need at least one recording per class".into(),
                    ));
                }
                Some(kind.classes())
            }
            DataConfig::Events { .. } => None,
        };
        if let Some(c) = classes {
            for (i, l) in self.network.layers.iter().enumerate() {
                if l.readout() != c {
                    return Err(Error::Config(format!(
                        "layer {i} readout has {} units but the task has {c} classes",
                        l.readout()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sets `a.b.c = value` in a TOML document. The value is parsed as a TOML
/// literal when possible and taken as a string otherwise.
pub fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::Config(format!("empty override key in '{spec}'")))?;
    let mut node = doc;
    for p in parts {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{key}': '{p}' is not inside a table")))?;
        node = table.entry(p).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override '{key}' does not address a table field")))?;
    table.insert(last.to_string(), value);
    Ok(())
}
