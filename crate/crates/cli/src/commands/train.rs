use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use igft_core::grpo::{train, AdamState, GrpoError, StepMetrics, TrainObserver, TrainState};
use igft_core::policy::{Checkpoint, SoftmaxPolicy};
use igft_core::vignette::save_cases;
use serde::Serialize;

use super::{create, fresh_dir, new_dir, out_err, write_file};
use crate::config::RunConfig;
use crate::runtime::{self, Components};
use crate::{CliError, ConfigArgs};

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Continue from a checkpoint. Without --config, the configuration
    /// snapshot of the checkpoint's run directory is used.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Write artifacts to this new directory instead of a timestamped one
    /// under `paths.output_dir`.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const CASES_FILE: &str = "cases.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:04}.json")
}

#[derive(Serialize)]
struct Timing {
    epoch: usize,
    step: usize,
    wall_ms: f64,
}

#[derive(Serialize)]
struct ResumeRecord<'a> {
    checkpoint: &'a Path,
    epochs_completed: usize,
}

struct RunWriter {
    metrics: BufWriter<File>,
    timings: BufWriter<File>,
    checkpoints: PathBuf,
    every: usize,
    final_epoch: usize,
    last: Instant,
    last_epoch_state: TrainState,
}

impl RunWriter {
    fn save(&self, state: &TrainState, name: &str) -> Result<PathBuf, String> {
        let path = self.checkpoints.join(name);
        Checkpoint::new(&state.policy, Some(state.optimizer.clone()), state.epochs_completed)
            .save(&path)
            .map_err(|e| e.to_string())?;
        Ok(path)
    }
}

impl TrainObserver for RunWriter {
    fn on_step(&mut self, m: &StepMetrics) -> Result<(), String> {
        let now = Instant::now();
        let wall_ms = now.duration_since(self.last).as_secs_f64() * 1e3;
        self.last = now;
        write_line(&mut self.metrics, m).map_err(|e| format!("{METRICS_FILE}: {e}"))?;
        write_line(&mut self.timings, &Timing { epoch: m.epoch, step: m.step, wall_ms })
            .map_err(|e| format!("{TIMINGS_FILE}: {e}"))
    }

    fn on_epoch_end(&mut self, state: &TrainState) -> Result<(), String> {
        let done = state.epochs_completed;
        if done.is_multiple_of(self.every) || done == self.final_epoch {
            let path = self.save(state, &checkpoint_name(done))?;
            log::info!("checkpoint {}", path.display());
        }
        self.last_epoch_state = state.clone();
        Ok(())
    }

    fn on_abort(&mut self, _state: &TrainState, error: &GrpoError) {
        let s = self.last_epoch_state.clone();
        match self.save(&s, &format!("abort-{}", checkpoint_name(s.epochs_completed))) {
            Ok(path) => log::error!("training aborted ({error}); last completed epoch saved to {}", path.display()),
            Err(e) => log::error!("training aborted ({error}); checkpoint flush failed: {e}"),
        }
    }
}

fn write_line<T: Serialize>(w: &mut BufWriter<File>, record: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")?;
    w.flush()
}

fn resolve_config(args: &TrainArgs) -> Result<RunConfig, CliError> {
    match (&args.resume, &args.config.config) {
        (Some(ckpt), None) => {
            let run_dir = ckpt.parent().and_then(Path::parent).unwrap_or(Path::new("."));
            let snapshot = run_dir.join(CONFIG_FILE);
            let mut a = args.config.clone();
            a.config = Some(snapshot);
            a.resolve()
        }
        _ => args.config.resolve(),
    }
}

pub fn run(args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = resolve_config(args)?;
    let remote = config.remote.enabled;
    let comps = Components::build(&config)?;
    let cases = runtime::cases(&config, None)?;

    let template = SoftmaxPolicy::uniform(config.registry());
    let state = match &args.resume {
        Some(path) => {
            let (policy, ckpt) = Checkpoint::load(path, &template)?;
            let optimizer = ckpt.optimizer.unwrap_or_else(|| AdamState::new(policy.params.len()));
            TrainState { policy, optimizer, epochs_completed: ckpt.epochs_completed }
        }
        None => TrainState::fresh(template),
    };

    let dir = match &args.run_dir {
        Some(d) => new_dir(d)?,
        None => fresh_dir(&config.paths.output_dir, "train")?,
    };
    write_file(&dir.join(CONFIG_FILE), &config.snapshot())?;
    save_cases(&dir.join(CASES_FILE), &cases)?;
    if let Some(path) = &args.resume {
        let record = ResumeRecord { checkpoint: path, epochs_completed: state.epochs_completed };
        write_file(&dir.join("resume.json"), &(serde_json::to_string_pretty(&record).expect("serializes") + "\n"))?;
    }
    let checkpoints = new_dir(&dir.join(CHECKPOINT_DIR))?;

    let start_epoch = state.epochs_completed;
    let mut writer = RunWriter {
        metrics: create(&dir.join(METRICS_FILE))?,
        timings: create(&dir.join(TIMINGS_FILE))?,
        checkpoints,
        every: config.train.checkpoint_every,
        final_epoch: config.grpo.epochs,
        last: Instant::now(),
        last_epoch_state: state.clone(),
    };
    writeln!(out, "run directory: {}", dir.display()).map_err(out_err)?;
    let play = comps.self_play(&config, &cases);
    let outcome = train(&play, state, &config.grpo, &mut writer).map_err(|e| CliError::pipeline(&e, remote))?;

    let epochs = super::report::epoch_summaries(&outcome.history);
    writeln!(
        out,
        "trained epochs {}..{} on {} cases ({} steps)",
        start_epoch,
        outcome.state.epochs_completed,
        cases.len(),
        outcome.history.len()
    )
    .map_err(out_err)?;
    if let Some((first, last)) = super::report::first_last(&epochs, 5) {
        writeln!(out, "mean episode IG: first {} epochs {:.4}, last {} epochs {:.4}", first.0, first.1, last.0, last.1)
            .map_err(out_err)?;
    }
    Ok(())
}
