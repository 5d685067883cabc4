use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use decolle::dynamics::DecayConstants;
use decolle::events::dataset::{load_dir, write_dir, Split};
use decolle::events::synth::{synthetic_recordings, SynthKind};
use decolle::oracle::{
    fd_gradient_check, memory_probe, standard_configs, trace_impulse_check, CountingAllocator, OracleReport,
};
use decolle::trainer::{metrics::METRICS_HEADER, Task, TrainConfig, Trainer};

#[global_allocator]
static ALLOC: CountingAllocator = CountingAllocator;

#[derive(Parser)]
#[command(name = "decolle", version, about = "Online local learning for spiking networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Sets the parameter, data and dropout seeds at once.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `dotted.key=value`, repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn load(&self) -> Result<TrainConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.extend([
                format!("seeds.params={s}"),
                format!("seeds.data={s}"),
                format!("seeds.dropout={s}"),
            ]);
        }
        if let Some(out) = &self.out {
            overrides.push(format!("output_dir={}", toml_string(&out.display().to_string())));
        }
        let cfg = TrainConfig::load(&self.config, &overrides)
            .with_context(|| format!("loading {}", self.config.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write metrics, plots and checkpoints.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint (or the untrained network) on the test data.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Finite-difference and impulse-response checks of the learning rule.
    Gradcheck {
        /// Write `gradcheck.csv` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a dataset directory or the data named by a config.
    InspectData {
        #[arg(long, conflicts_with = "config")]
        dir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Generate a synthetic event dataset directory.
    Synth {
        #[arg(long, value_enum, default_value = "gestures")]
        kind: KindArg,
        #[arg(long, default_value_t = 10)]
        train_per_class: usize,
        #[arg(long, default_value_t = 4)]
        test_per_class: usize,
        #[arg(long, default_value_t = 2000)]
        duration_ms: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Peak learning memory for several sequence lengths.
    Memory {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
        steps: Vec<usize>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum KindArg {
    Gestures,
    Digits,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { run, resume } => train(run.load()?, resume),
        Command::Eval { run, checkpoint } => eval(run.load()?, checkpoint),
        Command::Gradcheck { out } => gradcheck(out),
        Command::InspectData { dir, config, overrides } => inspect(dir, config, &overrides),
        Command::Synth {
            kind,
            train_per_class,
            test_per_class,
            duration_ms,
            seed,
            out,
        } => {
            let kind = match kind {
                KindArg::Gestures => SynthKind::Gestures,
                KindArg::Digits => SynthKind::Digits,
            };
            let mut recs = synthetic_recordings(kind, train_per_class, duration_ms, Split::Train, seed);
            recs.extend(synthetic_recordings(
                kind,
                test_per_class,
                duration_ms,
                Split::Test,
                seed.wrapping_add(0x5EED),
            ));
            write_dir(&out, &recs)?;
            println!("wrote {} recordings to {}", recs.len(), out.display());
            Ok(())
        }
        Command::Memory { run, steps } => {
            let cfg = run.load()?;
            let batch = cfg.training.batch_size;
            println!(
                "{:>8} {:>14} {:>14} {:>10}",
                "steps", "learning_B", "forward_B", "retained_B"
            );
            for p in memory_probe(&cfg.network, &steps, batch, cfg.seeds.params)? {
                println!(
                    "{:>8} {:>14} {:>14} {:>10}",
                    p.steps, p.learning_bytes, p.forward_bytes, p.retained_bytes
                );
            }
            Ok(())
        }
    }
}

fn train(cfg: TrainConfig, resume: Option<PathBuf>) -> Result<()> {
    let mut trainer = match resume {
        Some(path) => Trainer::resume(
            cfg,
            &fs::read(&path).with_context(|| format!("reading {}", path.display()))?,
        )?,
        None => Trainer::new(cfg)?,
    };
    let per = trainer.config().updates_per_minibatch();
    eprintln!(
        "training {} minibatches from {} ({per} updates each)",
        trainer.config().training.iterations,
        trainer.iteration
    );
    let metrics = trainer.run()?;
    println!("{}", METRICS_HEADER.join(","));
    for r in metrics.final_eval() {
        let err = r.error.map_or(String::new(), |e| e.to_string());
        println!("{},{},{},{},{}", r.iteration, r.layer, r.loss, err, r.firing_rate);
    }
    if let Some(dir) = &trainer.config().output_dir {
        eprintln!("artifacts in {}", dir.display());
    }
    Ok(())
}

fn eval(cfg: TrainConfig, checkpoint: Option<PathBuf>) -> Result<()> {
    let mut trainer = match checkpoint {
        Some(path) => Trainer::resume(
            cfg,
            &fs::read(&path).with_context(|| format!("reading {}", path.display()))?,
        )?,
        None => Trainer::new(cfg)?,
    };
    let e = trainer.evaluate()?;
    println!("layer,loss,error,firing_rate");
    for l in 0..e.loss.len() {
        let err = e.error.as_ref().map_or(String::new(), |v| v[l].to_string());
        println!("{},{},{},{}", l, e.loss[l], err, e.firing_rate[l]);
    }
    Ok(())
}

fn gradcheck(out: Option<PathBuf>) -> Result<()> {
    let mut reports: Vec<OracleReport> = Vec::new();
    for cfg in standard_configs() {
        reports.push(fd_gradient_check(&cfg)?);
    }
    for (a, b) in [(0.9, 0.8), (0.8, 0.9), (0.95, 0.6), (0.7, 0.7), (0.99, 0.99)] {
        reports.push(trace_impulse_check(&DecayConstants::from_factors(a, b, 0.5)?, 200));
    }
    for r in &reports {
        println!("{r}");
    }
    if let Some(dir) = out {
        fs::create_dir_all(&dir)?;
        let mut text = format!("{}\n", OracleReport::CSV_HEADER);
        for r in &reports {
            text.push_str(&r.csv_row());
            text.push('\n');
        }
        fs::write(dir.join("gradcheck.csv"), text)?;
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        bail!("{failed} oracle check(s) failed");
    }
    Ok(())
}

fn inspect(dir: Option<PathBuf>, config: Option<PathBuf>, overrides: &[String]) -> Result<()> {
    let recordings = match (dir, config) {
        (Some(dir), _) => load_dir(&dir)?,
        (None, Some(path)) => {
            let cfg = TrainConfig::load(&path, overrides)?;
            match Task::load(&cfg)? {
                Task::Regression(t) => {
                    let spikes = t.input.sum();
                    println!(
                        "poisson task: {} steps x {} inputs, {spikes} spikes ({:.1} Hz mean)",
                        t.input.nrows(),
                        t.input.ncols(),
                        spikes as f64 / (t.input.len() as f64 * t.dt_ms / 1000.0)
                    );
                    return Ok(());
                }
                Task::Classification { mut train, test, .. } => {
                    train.extend(test);
                    train
                }
            }
        }
        (None, None) => bail!("pass --dir or --config"),
    };
    let classes = recordings.iter().map(|r| r.label + 1).max().unwrap_or(0);
    println!("{} recordings, {classes} classes", recordings.len());
    for split in [Split::Train, Split::Test] {
        let rs: Vec<_> = recordings.iter().filter(|r| r.split == split).collect();
        if rs.is_empty() {
            continue;
        }
        let mut per_class = vec![0usize; classes];
        for r in &rs {
            per_class[r.label] += 1;
        }
        let durations: Vec<f64> = rs.iter().map(|r| r.stream.duration_ms()).collect();
        let events: usize = rs.iter().map(|r| r.stream.len()).sum();
        let total_ms: f64 = durations.iter().sum();
        println!(
            "{:<5} {:>4} recordings, sensor {}x{}, duration {:.0}-{:.0} ms, {:.1} events/ms, per class {:?}",
            split.as_str(),
            rs.len(),
            rs[0].stream.width,
            rs[0].stream.height,
            durations.iter().cloned().fold(f64::INFINITY, f64::min),
            durations.iter().cloned().fold(0.0, f64::max),
            events as f64 / total_ms.max(1.0),
            per_class
        );
    }
    Ok(())
}
