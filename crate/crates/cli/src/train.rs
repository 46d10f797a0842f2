use std::fs::{self, File};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use demos_core::demos::PolicyKind;
use demos_core::kinematics::KinematicTree;
use demos_core::nn::AdamW;
use demos_core::training::{train, IterationMetrics, RunConfig, TrainOutcome, Trainer, EVAL_SEED_OFFSET};
use demos_core::{fixtures, Checkpoint, DemosError, EvalRecord};

use crate::report::{self, ConnectionRow, EvalRow, MetricsRow, TimingRow};

pub const ERROR_MARKER: &str = "ERROR";
pub const FINAL_CKPT: &str = "final.ckpt";
pub const UNMASKED_CKPT: &str = "unmasked.ckpt";

#[derive(clap::Args)]
pub struct TrainArgs {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<PolicyKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fixture name or URDF path; overrides the config.
    #[arg(long)]
    robot: Option<String>,
    /// Overrides `train.iterations`.
    #[arg(long)]
    iterations: Option<usize>,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
pub struct FinetuneArgs {
    checkpoint: PathBuf,
    #[arg(long)]
    iterations: usize,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
}

pub fn load_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            RunConfig::from_toml(&text).with_context(|| format!("bad config {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = &args.robot {
        cfg.robot = r.clone();
    }
    if let Some(n) = args.iterations {
        cfg.train.iterations = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(args: TrainArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    let urdf = fixtures::resolve(&cfg.robot)?;
    let tree = KinematicTree::from_urdf(&urdf).context("cannot load robot")?;
    let out = args.out;
    fs::create_dir_all(out.join("checkpoints"))?;
    let _ = fs::remove_file(out.join(ERROR_MARKER));
    // The copy is the effective configuration, so the directory can be re-run from it.
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    match execute(&out, &cfg, &urdf, &tree) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::write(out.join(ERROR_MARKER), format!("{e:#}\n"));
            Err(e)
        }
    }
}

fn execute(out: &Path, cfg: &RunConfig, urdf: &str, tree: &KinematicTree) -> Result<()> {
    let mut metrics = csv::Writer::from_path(out.join(report::METRICS_CSV))?;
    let mut timing = csv::Writer::from_path(out.join(report::TIMING_CSV))?;
    let mut connections = match cfg.mode {
        PolicyKind::Demos => Some(csv::Writer::from_path(out.join(report::CONNECTIONS_CSV))?),
        _ => None,
    };
    let total = cfg.train.iterations;
    let outcome = train(tree, cfg, |trainer, m, rec| {
        metrics.serialize(MetricsRow::from(m)).map_err(DemosError::from)?;
        metrics.flush()?;
        timing.serialize(TimingRow { iteration: m.iteration, wall_time: m.wall_time }).map_err(DemosError::from)?;
        timing.flush()?;
        if let (Some(w), Some(rec)) = (connections.as_mut(), rec) {
            for ((from, to), &relative) in rec.relative.indexed_iter() {
                w.serialize(ConnectionRow { iteration: rec.iteration, from, to, relative })?;
            }
            w.flush()?;
        }
        let done = m.iteration + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            let ck = Checkpoint {
                urdf: urdf.to_string(),
                run: cfg.clone(),
                iteration: done,
                eval: None,
                policy: trainer.policy.clone(),
                critic: Some(trainer.critic.clone()),
            };
            ck.save(out.join("checkpoints").join(format!("iter_{done:05}.ckpt")))?;
        }
        progress(m, done, total);
        Ok(())
    })?;
    write_outputs(out, cfg, urdf, &outcome)
}

fn progress(m: &IterationMetrics, done: usize, total: usize) {
    if done.is_multiple_of(10) || done == total {
        eprintln!(
            "iter {done:>4}/{total} reward {:.4} balance {:.3} penalty {:.3} lr {:.1e} ({:.0}s)",
            m.mean_reward, m.terms.balance, m.update.penalty, m.update.lr, m.wall_time
        );
    }
}

/// Continues PPO from a checkpoint with its mask held fixed, e.g. to recover
/// after pruning. The optimizer state starts fresh.
pub fn run_finetune(args: FinetuneArgs) -> Result<()> {
    let ck =
        Checkpoint::load(&args.checkpoint).with_context(|| format!("cannot load {}", args.checkpoint.display()))?;
    let critic = ck.critic.clone().context("checkpoint has no critic to resume from")?;
    let mut cfg = ck.run.clone();
    cfg.train.iterations = args.iterations;
    let tree = ck.tree()?;
    let out = args.out;
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let optimizer =
        AdamW::new(ck.policy.param_count() + critic.param_count(), cfg.train.learning_rate, cfg.train.weight_decay);
    let mut trainer = Trainer::from_parts(&tree, &cfg, ck.policy.clone(), critic, optimizer, ck.iteration)?;
    let mut metrics = csv::Writer::from_path(out.join(report::METRICS_CSV))?;
    let mut timing = csv::Writer::from_path(out.join(report::TIMING_CSV))?;
    for k in 0..args.iterations {
        let (m, _) = trainer.step()?;
        metrics.serialize(MetricsRow::from(&m))?;
        metrics.flush()?;
        timing.serialize(TimingRow { iteration: m.iteration, wall_time: m.wall_time })?;
        timing.flush()?;
        progress(&m, k + 1, args.iterations);
    }
    let report = trainer.evaluate(&trainer.policy)?;
    let seed = trainer.eval_seed();
    let done = Checkpoint {
        run: cfg,
        iteration: trainer.iteration(),
        eval: Some(EvalRecord::from_report(&report, seed)),
        policy: trainer.policy.clone(),
        critic: Some(trainer.critic.clone()),
        ..ck
    };
    done.save(out.join(FINAL_CKPT))?;
    let row = EvalRow::new("finetuned", &report, done.policy.branches(), seed);
    report::write_rows(Some(&out.join(report::EVAL_CSV)), &[row])?;
    eprintln!("final evaluation: mean return {:.2} ± {:.2}", report.mean_return, report.std_return);
    Ok(())
}

fn write_outputs(out: &Path, cfg: &RunConfig, urdf: &str, outcome: &TrainOutcome) -> Result<()> {
    let seed = cfg.seed.wrapping_add(EVAL_SEED_OFFSET);
    let branches = outcome.policy.branches();
    let final_ck = Checkpoint {
        urdf: urdf.to_string(),
        run: cfg.clone(),
        iteration: cfg.train.iterations,
        eval: Some(EvalRecord::from_report(&outcome.final_eval, seed)),
        policy: outcome.policy.clone(),
        critic: Some(outcome.critic.clone()),
    };
    final_ck.save(out.join(FINAL_CKPT))?;
    let mut rows = Vec::new();
    let mut mask_report = format!("mode: {}\n\nbranches:\n{}\n", cfg.mode, branches.report());
    if let Some(post) = &outcome.post {
        let mut unmasked = final_ck.clone();
        unmasked.policy.set_mask(post.mask_before.clone())?;
        unmasked.eval = Some(EvalRecord::from_report(&post.pre_mask, seed));
        unmasked.save(out.join(UNMASKED_CKPT))?;
        post.connection.write_branch_csv(File::create(out.join("branch_connections.csv"))?)?;
        post.connection.write_motor_csv(File::create(out.join("motor_connections.csv"))?, &branches.motor_names)?;
        rows.push(EvalRow::new("pre_mask", &post.pre_mask, branches, seed));
        mask_report.push_str(&format!("branch-level decoupling (eta = {}):\n", cfg.analysis.eta));
        mask_report.push_str(&post.branch.summary(branches));
        if let Some(motor) = &post.motor {
            mask_report.push_str(&format!("\nmotor-level decoupling (eta' = {}):\n", cfg.analysis.eta_prime));
            mask_report.push_str(&motor.summary(branches));
        }
        mask_report.push('\n');
    }
    mask_report.push_str("final mask:\n");
    mask_report.push_str(&outcome.policy.mask().report(branches));
    fs::write(out.join("mask_report.txt"), mask_report)?;
    rows.push(EvalRow::new("final", &outcome.final_eval, branches, seed));
    report::write_rows(Some(&out.join(report::EVAL_CSV)), &rows)?;
    eprintln!(
        "final evaluation: mean return {:.2} ± {:.2} over {} episodes",
        outcome.final_eval.mean_return, outcome.final_eval.std_return, outcome.final_eval.episodes
    );
    Ok(())
}
