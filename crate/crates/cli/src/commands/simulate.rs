use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use igft_core::dialogue::{write_trajectory_log, Trajectory};

use super::{create, out_err};
use crate::runtime::{self, BuiltinPolicy, Components};
use crate::{CliError, ConfigArgs};

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, conflicts_with = "policy")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = BuiltinPolicy::Uniform)]
    pub policy: BuiltinPolicy,
    #[arg(long)]
    pub case_id: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub cases: Option<PathBuf>,
    /// Also write the per-turn trajectory log to this file.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

pub fn run(args: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = args.config.resolve()?;
    let comps = Components::build(&config)?;
    let cases = runtime::cases(&config, args.cases.as_deref())?;
    let Some(index) = cases.iter().position(|c| c.case_id == args.case_id) else {
        let ids: Vec<&str> = cases.iter().map(|c| c.case_id.as_str()).collect();
        return Err(CliError::Other(format!(
            "unknown case id {:?}; available: {}",
            args.case_id,
            if ids.is_empty() { "(none)".to_string() } else { ids.join(", ") }
        )));
    };
    let (interviewer, name) = runtime::interviewer(&config, args.checkpoint.as_deref(), args.policy)?;
    let play = comps.self_play(&config, &cases);
    let traj = play
        .play(interviewer.as_ref(), &cases[index], args.seed, &[u64::MAX, index as u64])
        .map_err(|e| CliError::pipeline(&e, config.remote.enabled))?;
    out.write_all(transcript(&traj, &name, args.seed).as_bytes()).map_err(out_err)?;
    if let Some(path) = &args.log {
        let w = create(path)?;
        write_trajectory_log(w, std::slice::from_ref(&traj)).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

pub fn transcript(traj: &Trajectory, policy: &str, seed: u64) -> String {
    let h = &traj.header;
    let mut s = String::new();
    let _ = writeln!(s, "case {} | {}-year-old {} | chief complaint: {}", h.case_id, h.age, h.sex, h.chief_complaint);
    let _ = writeln!(s, "policy: {policy} | seed: {seed} | entities: {}", traj.entities.len());
    for t in &traj.turns {
        let _ = writeln!(s, "\nturn {}", t.turn + 1);
        let _ = writeln!(s, "  doctor:  {}", t.question);
        let _ = writeln!(s, "  patient: {}", t.answer);
        if t.revealed.is_empty() {
            let _ = writeln!(s, "  revealed: none");
        }
        for m in &t.revealed {
            let surface = traj.entities.iter().find(|e| e.id == m.entity_id).map_or("", |e| e.surface.as_str());
            let _ = writeln!(s, "  revealed: {} {:?} ({:?}, {:.3})", m.entity_id, surface, m.method, m.score);
        }
        let q = &t.reward.quality;
        let _ = writeln!(
            s,
            "  quality: gathering {:.3}, specificity {:.3}, engagement {:.3}, relevance {:.3}, comprehensiveness {:.3} -> {:.4}",
            q.information_gathering, q.specificity, q.patient_engagement, q.clinical_relevance, q.comprehensiveness, q.aggregate
        );
        let _ = writeln!(
            s,
            "  reward: weighted IG {:.4} (IG {:.4}) + {:.2} x quality {:.4} = {:.4}",
            t.reward.weighted_ig, t.gain.ig, t.reward.lambda, q.aggregate, t.reward.total
        );
    }
    let _ = writeln!(
        s,
        "\ntotal: {} turns, revealed {}/{}, cumulative weighted IG {:.4}, total reward {:.4}",
        traj.turns.len(),
        traj.revealed_count(),
        traj.entities.len(),
        traj.cumulative_ig(),
        traj.total_reward
    );
    s
}
