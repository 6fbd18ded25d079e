use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use igft_core::dialogue::Trajectory;
use igft_core::eval::evaluate_trajectory;
use serde::Serialize;

use super::{fresh_dir, mean, new_dir, out_err, sample_std, write_file, write_jsonl};
use crate::runtime::{self, BuiltinPolicy, Components};
use crate::{CliError, ConfigArgs};

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Policy checkpoint to evaluate.
    #[arg(long, conflicts_with = "policy")]
    pub checkpoint: Option<PathBuf>,
    /// Built-in policy to evaluate when no checkpoint is given.
    #[arg(long, value_enum, default_value_t = BuiltinPolicy::Uniform)]
    pub policy: BuiltinPolicy,
    /// Case file overriding the configured case source.
    #[arg(long)]
    pub cases: Option<PathBuf>,
    /// Output directory (must not exist); defaults to a timestamped
    /// directory under `paths.output_dir`.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_TABLE: &str = "summary.txt";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairText {
    pub generated: String,
    pub truth: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseRecord {
    pub seed: u64,
    pub case_id: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub episode_ig: f64,
    pub episode_reward: f64,
    pub revealed: usize,
    pub entities: usize,
    pub turns: usize,
    pub hpi: String,
    pub matched: Vec<PairText>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(xs: &[f64]) -> Self {
        Self { mean: mean(xs), std: sample_std(xs) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub cases: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub episode_ig: f64,
    pub revealed_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub policy: String,
    pub seeds: Vec<SeedSummary>,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub episode_ig: MeanStd,
    pub revealed_fraction: MeanStd,
}

impl EvalSummary {
    pub fn from_records(policy: String, seeds: &[u64], records: &[CaseRecord]) -> Self {
        let per_seed: Vec<SeedSummary> = seeds
            .iter()
            .map(|&seed| {
                let rows: Vec<&CaseRecord> = records.iter().filter(|r| r.seed == seed).collect();
                let col = |f: fn(&CaseRecord) -> f64| mean(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
                SeedSummary {
                    seed,
                    cases: rows.len(),
                    precision: col(|r| r.precision),
                    recall: col(|r| r.recall),
                    f1: col(|r| r.f1),
                    episode_ig: col(|r| r.episode_ig),
                    revealed_fraction: col(|r| r.revealed as f64 / r.entities.max(1) as f64),
                }
            })
            .collect();
        let agg = |f: fn(&SeedSummary) -> f64| MeanStd::of(&per_seed.iter().map(f).collect::<Vec<_>>());
        Self {
            policy,
            precision: agg(|s| s.precision),
            recall: agg(|s| s.recall),
            f1: agg(|s| s.f1),
            episode_ig: agg(|s| s.episode_ig),
            revealed_fraction: agg(|s| s.revealed_fraction),
            seeds: per_seed,
        }
    }

    pub fn table(&self) -> String {
        let mut s = format!("policy: {}\n\n", self.policy);
        s.push_str(&format!(
            "{:<10} {:>6} {:>17} {:>17} {:>17} {:>17} {:>17}\n",
            "seed", "cases", "precision", "recall", "f1", "episode IG", "revealed"
        ));
        for r in &self.seeds {
            s.push_str(&format!(
                "{:<10} {:>6} {:>17.4} {:>17.4} {:>17.4} {:>17.4} {:>17.4}\n",
                r.seed, r.cases, r.precision, r.recall, r.f1, r.episode_ig, r.revealed_fraction
            ));
        }
        let ms = |m: MeanStd| format!("{:.4} ± {:.4}", m.mean, m.std);
        s.push_str(&format!(
            "{:<10} {:>6} {:>17} {:>17} {:>17} {:>17} {:>17}\n",
            "mean ± std",
            "",
            ms(self.precision),
            ms(self.recall),
            ms(self.f1),
            ms(self.episode_ig),
            ms(self.revealed_fraction)
        ));
        s
    }
}

pub fn run(args: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = args.config.resolve()?;
    let remote = config.remote.enabled;
    let comps = Components::build(&config)?;
    let cases = runtime::cases(&config, args.cases.as_deref())?;
    let (interviewer, name) = runtime::interviewer(&config, args.checkpoint.as_deref(), args.policy)?;
    let play = comps.self_play(&config, &cases);

    let mut records = Vec::new();
    for &seed in &config.eval.seeds {
        let trajectories: Vec<Trajectory> =
            play.rollout(interviewer.as_ref(), seed).map_err(|e| CliError::pipeline(&e, remote))?;
        for (traj, case) in trajectories.iter().zip(&cases) {
            let ev = evaluate_trajectory(
                traj,
                case,
                comps.generator.as_ref(),
                comps.extractor.as_ref(),
                comps.provider.as_ref(),
                config.eval.match_threshold,
            )
            .map_err(|e| CliError::pipeline(&e, remote))?;
            records.push(CaseRecord {
                seed,
                case_id: case.case_id.clone(),
                precision: ev.result.precision,
                recall: ev.result.recall,
                f1: ev.result.f1,
                episode_ig: traj.cumulative_ig(),
                episode_reward: traj.total_reward,
                revealed: traj.revealed_count(),
                entities: case.entities.len(),
                turns: traj.turns.len(),
                matched: ev
                    .result
                    .matched
                    .iter()
                    .map(|p| PairText {
                        generated: ev.generated[p.generated].text.clone(),
                        truth: ev.truth[p.truth].text.clone(),
                        score: p.score,
                    })
                    .collect(),
                hpi: ev.hpi,
            });
        }
    }

    let summary = EvalSummary::from_records(name, &config.eval.seeds, &records);
    let dir = match &args.out {
        Some(d) => new_dir(d)?,
        None => fresh_dir(&config.paths.output_dir, "eval")?,
    };
    write_jsonl(&dir.join(RECORDS_FILE), &records)?;
    write_file(&dir.join(SUMMARY_JSON), &(serde_json::to_string_pretty(&summary).expect("serializes") + "\n"))?;
    let table = summary.table();
    write_file(&dir.join(SUMMARY_TABLE), &table)?;
    out.write_all(table.as_bytes()).map_err(out_err)?;
    writeln!(out, "\nevaluation written to {}", dir.display()).map_err(out_err)
}
