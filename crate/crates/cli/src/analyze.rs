use std::fs::{self, File};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use demos_core::demos::{apply_branch_decoupling, apply_motor_decoupling, connection_matrix, ConnectionMatrix};
use demos_core::training::{analysis_batch, EVAL_SEED_OFFSET};
use demos_core::{fixtures, Checkpoint};

#[derive(clap::Args)]
pub struct AnalyzeArgs {
    checkpoint: PathBuf,
    /// Transitions in the analysis batch.
    #[arg(long, default_value_t = 4096)]
    batch_size: usize,
    /// Norm order; defaults to the one used in training.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long, default_value_t = 0.04)]
    eta: f64,
    /// Robot description to check against the checkpoint (fixture name or path).
    #[arg(long)]
    robot: Option<String>,
    /// Directory for the CSV files (defaults to the checkpoint's directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct DecoupleArgs {
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0.04)]
    eta: f64,
    /// Also prune individual branch→motor edges.
    #[arg(long)]
    motor_level: bool,
    #[arg(long, default_value_t = 0.04)]
    eta_prime: f64,
    #[arg(long, default_value_t = 4096)]
    batch_size: usize,
    /// Path of the new checkpoint.
    #[arg(long)]
    out: PathBuf,
}

/// Connection matrix on a fresh deterministic batch of `batch_size` transitions.
pub fn measure(ck: &Checkpoint, batch_size: usize, p: Option<f64>) -> Result<ConnectionMatrix> {
    if batch_size == 0 {
        bail!("batch size must be positive");
    }
    let a = &ck.run.analysis;
    let envs = a.batch_envs.clamp(1, batch_size);
    let steps = batch_size.div_ceil(envs);
    let mut env = ck.make_env(envs)?;
    let seed = ck.run.seed.wrapping_add(EVAL_SEED_OFFSET);
    let obs = analysis_batch(&ck.policy, &mut env, a.warmup_steps, steps, seed)?;
    let locals = ck.policy.local_inputs(obs.view())?;
    Ok(connection_matrix(&ck.policy, &locals, p.unwrap_or(ck.run.train.norm_p))?)
}

fn format_matrix(cm: &ConnectionMatrix) -> String {
    let n = cm.branch_count();
    let mut out = String::from("      ");
    for j in 0..n {
        out.push_str(&format!("{:>9}", format!("B{}", j + 1)));
    }
    out.push('\n');
    for i in 0..n {
        out.push_str(&format!("{:<6}", format!("B{}", i + 1)));
        for j in 0..n {
            out.push_str(&format!("{:>9.4}", cm.relative[[i, j]]));
        }
        out.push('\n');
    }
    out
}

pub fn run_analyze(args: AnalyzeArgs) -> Result<()> {
    let ck =
        Checkpoint::load(&args.checkpoint).with_context(|| format!("cannot load {}", args.checkpoint.display()))?;
    if let Some(robot) = &args.robot {
        ck.check_robot(&fixtures::resolve(robot)?)?;
    }
    let cm = measure(&ck, args.batch_size, args.p)?;
    let dir = match &args.out {
        Some(d) => d.clone(),
        None => args.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&dir)?;
    let branches = ck.policy.branches();
    cm.write_branch_csv(File::create(dir.join("branch_connections.csv"))?)?;
    cm.write_motor_csv(File::create(dir.join("motor_connections.csv"))?, &branches.motor_names)?;
    println!("relative connection strength C_ij / C_jj ({} samples, p = {}):", cm.samples, cm.p);
    print!("{}", format_matrix(&cm));
    println!("pruning preview at eta = {}:", args.eta);
    let mask = ck.policy.mask();
    for (i, j) in cm.edges_below(args.eta) {
        let targets: Vec<usize> =
            branches.branches[j].motors.iter().copied().filter(|&m| !branches.branches[i].owns(m)).collect();
        let state = if targets.iter().all(|&m| !mask.get(i, m)) { "already masked" } else { "prunable" };
        println!("  B{}→B{} {:.4} {state}", i + 1, j + 1, cm.relative[[i, j]]);
    }
    Ok(())
}

pub fn run_decouple(args: DecoupleArgs) -> Result<()> {
    let mut ck =
        Checkpoint::load(&args.checkpoint).with_context(|| format!("cannot load {}", args.checkpoint.display()))?;
    let cm = measure(&ck, args.batch_size, None)?;
    let before = ck.policy.mask().clone();
    apply_branch_decoupling(&mut ck.policy, &cm, args.eta)?;
    if args.motor_level {
        apply_motor_decoupling(&mut ck.policy, &cm, args.eta_prime)?;
    }
    let branches = ck.policy.branches();
    let edits = before.diff(ck.policy.mask());
    if edits.is_empty() {
        println!("mask unchanged");
    }
    for e in &edits {
        println!("cleared B{} → {}", e.branch + 1, branches.motor_names[e.motor]);
    }
    // The recorded evaluation no longer describes the pruned policy.
    ck.eval = None;
    ck.save(&args.out)?;
    Ok(())
}
