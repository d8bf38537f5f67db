//! The outer loop, experiment configs, metrics files and run summaries.

mod config;
mod metrics;
mod trainer;

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

pub use config::{ConfigReport, ExperimentConfig, GradientEstimator, NetConfig};
pub use metrics::{metrics_header, MetricsRow, MetricsWriter, StepStatus, FLUSH_EVERY};
pub use trainer::Trainer;

use crate::actor::Branch;
use crate::envs::chain::{chain_exact_stats, policy_table};
use crate::envs::{EnvConfig, TrajectoryStep};
use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::seeded_rng;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSummary {
    pub exact_j: Vec<f64>,
    pub abs_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub iterations: u64,
    pub final_j_hat: Vec<f64>,
    /// Mean shifted batch cost over the final 10% of iterations.
    pub final_window_cost: Vec<f64>,
    /// Fraction of final-window iterations with `Ĵ_i ≤ slack` for every constraint.
    pub satisfaction_fraction: f64,
    pub fallback_iterations: usize,
    pub solver_errors: usize,
    /// Mean shifted cost of the initial policy from a separate rollout.
    pub initial_cost: Option<Vec<f64>>,
    /// `final_window_cost[0] / initial_cost[0]`.
    pub objective_ratio: Option<f64>,
    pub oracle: Option<OracleSummary>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub seeds: Vec<SeedSummary>,
    pub mean_final_j_hat: Vec<f64>,
    pub mean_satisfaction_fraction: f64,
    pub mean_objective_ratio: Option<f64>,
}

pub struct SeedRun {
    pub summary: SeedSummary,
    pub rows: Vec<MetricsRow>,
    pub policy: PolicyParams,
}

/// Rolls `policy` out in a fresh copy of the environment.
pub fn rollout(env_cfg: &EnvConfig, policy: &PolicyParams, steps: usize, seed: u64) -> Result<Vec<TrajectoryStep>> {
    let mut env = env_cfg.build()?;
    let mut rng = seeded_rng(seed);
    let mut s = env.reset(&mut rng);
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let a = policy.sample_action(&s, &mut rng)?;
        let tr = env.step(&s, &a, &mut rng)?;
        out.push(TrajectoryStep {
            t: t as u64,
            s: std::mem::replace(&mut s, tr.next_state),
            a,
            costs: tr.costs,
        });
    }
    Ok(out)
}

/// Mean shifted costs of `policy` after discarding a 20% burn-in.
pub fn policy_cost(env_cfg: &EnvConfig, policy: &PolicyParams, steps: usize, seed: u64) -> Result<Vec<f64>> {
    let burn = steps / 5;
    let traj = rollout(env_cfg, policy, steps + burn, seed)?;
    let tail = &traj[burn..];
    let n = tail.first().map_or(0, |s| s.costs.len());
    Ok((0..n)
        .map(|i| tail.iter().map(|s| s.costs[i]).sum::<f64>() / tail.len() as f64)
        .collect())
}

fn summarize(cfg: &ExperimentConfig, seed: u64, rows: &[MetricsRow], trainer: &Trainer, initial_cost: Option<Vec<f64>>, wall: f64) -> Result<SeedSummary> {
    let last = rows.last().ok_or_else(|| Error::Config("no iterations were run".into()))?;
    let n_costs = last.j_hat.len();
    let tail_len = (rows.len() / 10).max(1);
    let tail = &rows[rows.len() - tail_len..];
    let final_window_cost: Vec<f64> = (0..n_costs)
        .map(|i| tail.iter().map(|r| r.cost[i]).sum::<f64>() / tail_len as f64)
        .collect();
    let satisfied = tail
        .iter()
        .filter(|r| r.j_hat[1..].iter().all(|j| *j <= cfg.constraint_slack))
        .count();
    let objective_ratio = initial_cost
        .as_ref()
        .and_then(|c| c.first())
        .map(|c0| final_window_cost[0] / c0);
    let oracle = match cfg.env.chain() {
        Some(chain) => {
            let stats = chain_exact_stats(chain, &policy_table(&trainer.policy, chain.n_states)?)?;
            let abs_error = stats.j.iter().zip(&last.j_hat).map(|(a, b)| (a - b).abs()).collect();
            Some(OracleSummary {
                exact_j: stats.j,
                abs_error,
            })
        }
        None => None,
    };
    Ok(SeedSummary {
        seed,
        iterations: rows.len() as u64,
        final_j_hat: last.j_hat.clone(),
        final_window_cost,
        satisfaction_fraction: satisfied as f64 / tail_len as f64,
        fallback_iterations: rows.iter().filter(|r| r.branch == Some(Branch::Feasibility)).count(),
        solver_errors: rows.iter().filter(|r| r.status == StepStatus::SolverError).count(),
        initial_cost,
        objective_ratio,
        oracle,
        wall_seconds: wall,
    })
}

/// Runs one seed to completion. With `out`, writes `seed{n}.metrics.csv`,
/// `seed{n}.timing.csv` and final checkpoints under `seed{n}/`.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<SeedRun> {
    let start = Instant::now();
    let mut trainer = Trainer::new(cfg, seed)?;
    let baseline_seed = trainer::derive_seeds(seed)[3];
    let initial_cost = match cfg.baseline_steps {
        0 => None,
        n => Some(policy_cost(&cfg.env, &trainer.policy, n, baseline_seed)?),
    };
    let n_costs = trainer.critics.len();
    let mut writers = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let metrics = File::create(dir.join(format!("seed{seed}.metrics.csv")))?;
            let mut timing = csv::Writer::from_writer(BufWriter::new(File::create(
                dir.join(format!("seed{seed}.timing.csv")),
            )?));
            timing.write_record(["t", "wall_ms"])?;
            Some((MetricsWriter::new(BufWriter::new(metrics), n_costs)?, timing))
        }
        None => None,
    };
    let mut rows = Vec::with_capacity(cfg.iterations);
    let mut failure = None;
    for _ in 0..cfg.iterations {
        let row = match trainer.run_iteration() {
            Ok(row) => row,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        if let Some((m, timing)) = writers.as_mut() {
            if let Err(e) = m.write(&row) {
                failure = Some(e);
                break;
            }
            timing.write_record([row.t.to_string(), format!("{:.3}", row.wall_ms)])?;
        }
        rows.push(row);
    }
    if let Some((m, timing)) = writers.as_mut() {
        m.flush()?;
        timing.flush()?;
    }
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(dir) = out {
        let ckpt = dir.join(format!("seed{seed}"));
        trainer.policy.save_checkpoint(&ckpt, "policy", &trainer.domain)?;
        trainer.critics.save(&ckpt)?;
        let mut window = BufWriter::new(File::create(ckpt.join("window.ndjson"))?);
        trainer.storage.dump_ndjson(&mut window)?;
    }
    let summary = summarize(cfg, seed, &rows, &trainer, initial_cost, start.elapsed().as_secs_f64())?;
    Ok(SeedRun {
        summary,
        rows,
        policy: trainer.policy,
    })
}

/// Runs every seed in parallel (one thread each, no shared state) and
/// writes `summary.json` when `out` is given.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let results: Vec<Result<SeedSummary>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| scope.spawn(move || run_seed(cfg, seed, out).map(|r| r.summary)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Numeric("seed worker panicked".into()))))
            .collect()
    });
    let seeds = results.into_iter().collect::<Result<Vec<_>>>()?;
    let k = seeds.len() as f64;
    let n_costs = seeds[0].final_j_hat.len();
    let mean_final_j_hat = (0..n_costs)
        .map(|i| seeds.iter().map(|s| s.final_j_hat[i]).sum::<f64>() / k)
        .collect();
    let mean_satisfaction_fraction = seeds.iter().map(|s| s.satisfaction_fraction).sum::<f64>() / k;
    let ratios: Option<Vec<f64>> = seeds.iter().map(|s| s.objective_ratio).collect();
    let summary = ExperimentSummary {
        mean_final_j_hat,
        mean_satisfaction_fraction,
        mean_objective_ratio: ratios.map(|r| r.iter().sum::<f64>() / k),
        seeds,
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let file = BufWriter::new(File::create(dir.join("summary.json"))?);
        serde_json::to_writer_pretty(file, &summary)?;
    }
    Ok(summary)
}
