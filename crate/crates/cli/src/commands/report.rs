use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use igft_core::grpo::StepMetrics;
use plotters::prelude::*;
use serde::Serialize;

use super::{mean, out_err, write_file};
use crate::CliError;

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Metrics file written by `train`.
    #[arg(long)]
    pub metrics: PathBuf,
    /// Output directory; defaults to `report/` next to the metrics file.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

pub const REWARD_PLOT: &str = "reward_vs_epoch.svg";
pub const IG_PLOT: &str = "ig_vs_epoch.svg";
pub const TABLE_FILE: &str = "summary.md";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub mean_reward: f64,
    pub loss: f64,
    pub mean_episode_ig: f64,
    pub mean_episode_revealed: f64,
}

/// Per-epoch means of the step records, in epoch order.
pub fn epoch_summaries(history: &[StepMetrics]) -> Vec<EpochSummary> {
    let mut epochs: Vec<usize> = history.iter().map(|m| m.epoch).collect();
    epochs.sort_unstable();
    epochs.dedup();
    epochs
        .into_iter()
        .map(|epoch| {
            let rows: Vec<&StepMetrics> = history.iter().filter(|m| m.epoch == epoch).collect();
            let col = |f: fn(&StepMetrics) -> f64| mean(&rows.iter().map(|m| f(m)).collect::<Vec<_>>());
            EpochSummary {
                epoch,
                steps: rows.len(),
                mean_reward: col(|m| m.mean_reward),
                loss: col(|m| m.loss),
                mean_episode_ig: col(|m| m.mean_episode_ig),
                mean_episode_revealed: col(|m| m.mean_episode_revealed),
            }
        })
        .collect()
}

/// Mean episode IG over the first and last `k` epochs (fewer when the run is
/// shorter), as `((count, mean), (count, mean))`.
pub fn first_last(epochs: &[EpochSummary], k: usize) -> Option<((usize, f64), (usize, f64))> {
    if epochs.is_empty() {
        return None;
    }
    let k = k.min(epochs.len());
    let ig = |s: &[EpochSummary]| mean(&s.iter().map(|e| e.mean_episode_ig).collect::<Vec<_>>());
    Some(((k, ig(&epochs[..k])), (k, ig(&epochs[epochs.len() - k..]))))
}

pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let m = serde_json::from_str(&line)
            .map_err(|e| CliError::Other(format!("{}:{}: malformed metrics record: {e}", path.display(), i + 1)))?;
        out.push(m);
    }
    Ok(out)
}

pub fn run(args: &ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let history = read_metrics(&args.metrics)?;
    if history.is_empty() {
        return Err(CliError::Other(format!("no data: {} contains no metrics records", args.metrics.display())));
    }
    let epochs = epoch_summaries(&history);
    let dir = args.out.clone().unwrap_or_else(|| args.metrics.parent().unwrap_or(Path::new(".")).join("report"));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;

    let xs: Vec<f64> = epochs.iter().map(|e| e.epoch as f64).collect();
    plot(
        &dir.join(REWARD_PLOT),
        "Mean candidate reward per epoch",
        "mean reward",
        &xs,
        &epochs.iter().map(|e| e.mean_reward).collect::<Vec<_>>(),
    )?;
    plot(
        &dir.join(IG_PLOT),
        "Mean episode IG per epoch",
        "mean episode IG",
        &xs,
        &epochs.iter().map(|e| e.mean_episode_ig).collect::<Vec<_>>(),
    )?;
    let table = table(&epochs);
    write_file(&dir.join(TABLE_FILE), &table)?;
    out.write_all(table.as_bytes()).map_err(out_err)?;
    writeln!(out, "\nreport written to {}", dir.display()).map_err(out_err)
}

fn table(epochs: &[EpochSummary]) -> String {
    let mut s = String::from("| epoch | steps | mean reward | loss | mean episode IG | revealed weight |\n");
    s.push_str("|---:|---:|---:|---:|---:|---:|\n");
    for e in epochs {
        s.push_str(&format!(
            "| {} | {} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
            e.epoch, e.steps, e.mean_reward, e.loss, e.mean_episode_ig, e.mean_episode_revealed
        ));
    }
    if let Some(((kf, first), (kl, last))) = first_last(epochs, 5) {
        let rel = if first != 0.0 { (last - first) / first.abs() * 100.0 } else { 0.0 };
        s.push_str(&format!(
            "\n| window | mean episode IG |\n|---|---:|\n| first {kf} epochs | {first:.4} |\n| last {kl} epochs | {last:.4} |\n| change | {rel:+.2}% |\n"
        ));
    }
    s
}

fn plot(path: &Path, title: &str, y_label: &str, xs: &[f64], ys: &[f64]) -> Result<(), CliError> {
    let err = |e: String| CliError::Other(format!("{}: plotting failed: {e}", path.display()));
    let (x0, x1) = (xs[0], xs[xs.len() - 1].max(xs[0] + 1.0));
    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.1).max(1e-3);
    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(64)
        .build_cartesian_2d(x0..x1, (lo - pad)..(hi + pad))
        .map_err(|e| err(e.to_string()))?;
    chart.configure_mesh().x_desc("epoch").y_desc(y_label).draw().map_err(|e| err(e.to_string()))?;
    chart
        .draw_series(LineSeries::new(xs.iter().copied().zip(ys.iter().copied()), &BLUE))
        .map_err(|e| err(e.to_string()))?;
    root.present().map_err(|e| err(e.to_string()))
}
