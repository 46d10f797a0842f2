use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use demos_core::demos::{compose, ScriptedController};
use demos_core::env::{MalfunctionSpec, SwingTask};
use demos_core::training::{evaluate, EvalReport, EVAL_SEED_OFFSET};
use demos_core::{Checkpoint, EvalRecord};

use crate::report::{self, EvalRow};

#[derive(clap::Args)]
pub struct EvalArgs {
    checkpoint: PathBuf,
    /// `stuck:<motor>:<angle>` or `noise:<motor>:<std>`.
    #[arg(long, conflicts_with = "sweep")]
    malfunction: Option<String>,
    /// `kind:<motor>[:<level>,<level>,...]`, one row per level.
    #[arg(long)]
    sweep: Option<String>,
    /// Episodes (parallel envs); defaults to the run's evaluation count.
    #[arg(long)]
    episodes: Option<usize>,
    /// Defaults to the run's evaluation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Value of the `label` column.
    #[arg(long, default_value = "eval")]
    label: String,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct TransferArgs {
    checkpoint: PathBuf,
    /// Comma-separated branches kept together, e.g. `B3,B4`. Repeatable.
    #[arg(long = "fragment")]
    fragments: Vec<String>,
    /// `<branch>=hold[:angle]` or `<branch>=track[:amplitude]`. Repeatable.
    #[arg(long = "replace")]
    replacements: Vec<String>,
    /// Task of the evaluation env: `swing` or `hold[:angle]`. Defaults to the source task.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Path of the composite checkpoint.
    #[arg(long)]
    out: PathBuf,
}

fn load(path: &PathBuf) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("cannot load {}", path.display()))
}

fn run_one(ck: &Checkpoint, malfunction: Option<MalfunctionSpec>, episodes: usize, seed: u64) -> Result<EvalReport> {
    let mut env = ck.make_env(episodes)?;
    Ok(evaluate(&ck.policy, &mut env, malfunction, seed)?)
}

/// Levels used when a sweep names no levels, in rad (stuck angle or noise std).
pub const DEFAULT_SWEEP_LEVELS: [f64; 5] = [0.0, 0.05, 0.1, 0.2, 0.4];

/// Expands `kind:motor:l1,l2,...` into single-level specs. `kind:motor`
/// alone uses [`DEFAULT_SWEEP_LEVELS`].
pub fn expand_sweep(spec: &str) -> Result<Vec<String>> {
    if spec.matches(':').count() == 1 {
        return Ok(DEFAULT_SWEEP_LEVELS.iter().map(|l| format!("{spec}:{l}")).collect());
    }
    let (head, levels) = spec.rsplit_once(':').ok_or_else(|| anyhow!("sweep `{spec}` is not kind:motor[:levels]"))?;
    if levels.trim().is_empty() {
        bail!("sweep `{spec}` has no levels");
    }
    Ok(levels.split(',').map(|l| format!("{head}:{}", l.trim())).collect())
}

pub fn run_eval(args: EvalArgs) -> Result<()> {
    let ck = load(&args.checkpoint)?;
    let episodes = args.episodes.unwrap_or(ck.run.analysis.eval_episodes);
    let seed = args.seed.unwrap_or(ck.run.seed.wrapping_add(EVAL_SEED_OFFSET));
    let specs: Vec<Option<String>> = match (&args.sweep, &args.malfunction) {
        (Some(s), _) => expand_sweep(s)?.into_iter().map(Some).collect(),
        (None, m) => vec![m.clone()],
    };
    let names = &ck.policy.branches().motor_names;
    let mut rows = Vec::new();
    for spec in specs {
        let malfunction = spec.as_deref().map(|s| MalfunctionSpec::parse(s, names)).transpose()?;
        let report = run_one(&ck, malfunction, episodes, seed)?;
        if malfunction.is_none() {
            if let Some(rec) = &ck.eval {
                if rec.seed == seed && rec.episodes == episodes && rec.malfunction.is_none() {
                    let same = rec.mean_return.to_bits() == report.mean_return.to_bits();
                    eprintln!(
                        "recorded evaluation {} ({})",
                        rec.mean_return,
                        if same { "reproduced" } else { "differs" }
                    );
                }
            }
        }
        rows.push(EvalRow::new(&args.label, &report, ck.policy.branches(), seed));
    }
    report::write_rows(args.out.as_deref(), &rows)
}

pub fn parse_task(spec: &str) -> Result<SwingTask> {
    let mut parts = spec.splitn(2, ':');
    match (parts.next(), parts.next()) {
        (Some("swing"), None) => Ok(SwingTask::Swing),
        (Some("hold"), angle) => {
            let angle = angle.map(str::parse).transpose().context("bad hold angle")?.unwrap_or(0.0);
            Ok(SwingTask::Hold { angle })
        }
        _ => bail!("task `{spec}` is not `swing` or `hold[:angle]`"),
    }
}

pub fn parse_replacement(spec: &str, ck: &Checkpoint) -> Result<(usize, ScriptedController)> {
    let (branch, ctrl) =
        spec.split_once('=').ok_or_else(|| anyhow!("replacement `{spec}` is not branch=controller"))?;
    let branch = ck.policy.branches().resolve(branch)?;
    let (kind, value) = match ctrl.split_once(':') {
        Some((k, v)) => (k, Some(v.parse::<f64>().with_context(|| format!("bad number in `{spec}`"))?)),
        None => (ctrl, None),
    };
    let action_scale = ck.run.env.action_scale;
    let ctrl = match kind {
        "hold" => ScriptedController::HoldPose { angle: value.unwrap_or(0.0), action_scale },
        "track" => ScriptedController::Track { amplitude: value.unwrap_or(ck.run.env.amplitude), action_scale },
        other => bail!("unknown controller `{other}` (expected hold or track)"),
    };
    Ok((branch, ctrl))
}

pub fn run_transfer(args: TransferArgs) -> Result<()> {
    let ck = load(&args.checkpoint)?;
    let set = ck.policy.branches();
    let fragments = args
        .fragments
        .iter()
        .map(|f| f.split(',').map(|b| set.resolve(b).map_err(Into::into)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let mut replacements = BTreeMap::new();
    for r in &args.replacements {
        let (b, c) = parse_replacement(r, &ck)?;
        replacements.insert(b, c);
    }
    let policy = compose(&ck.policy, &fragments, &replacements)?;
    let mut run = ck.run.clone();
    if let Some(t) = &args.task {
        run.env.swing_task = parse_task(t)?;
    }
    let mut out = Checkpoint { policy, run, eval: None, ..ck };
    let episodes = args.episodes.unwrap_or(out.run.analysis.eval_episodes);
    let seed = args.seed.unwrap_or(out.run.seed.wrapping_add(EVAL_SEED_OFFSET));
    let report = run_one(&out, None, episodes, seed)?;
    out.eval = Some(EvalRecord::from_report(&report, seed));
    out.save(&args.out)?;
    let row = EvalRow::new("transfer", &report, out.policy.branches(), seed);
    report::write_rows(None, &[row])
}
