//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.

use std::path::Path;
use std::time::Instant;

use serde_json::json;

mod common;

use sldac::actor::{solve_actor_step, Branch, SolverOptions, Surrogate, SurrogateState};
use sldac::diagnostics::{grad_check, oracle_check};
use sldac::envs::chain::ChainMdpConfig;
use sldac::harness::{run_seed, ExperimentConfig, Trainer};
use sldac::policy::ParamDomain;
use sldac::schedules::validate_region;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn chain_config(overrides: serde_json::Value) -> ExperimentConfig {
    common::chain_config(&ChainMdpConfig::four_state(), overrides)
}

fn chain_msbe(tr: &Trainer) -> (Vec<f64>, Vec<f64>) {
    common::chain_msbe(&ChainMdpConfig::four_state(), tr)
}

fn exact_j(tr: &Trainer) -> Vec<f64> {
    common::exact_j(&ChainMdpConfig::four_state(), tr)
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let results = grad_check(20, 0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = results.iter().map(|r| r.worst).fold(0.0, f64::max);
    let enough = results.iter().all(|r| r.instances >= 20);
    outcome(
        results.iter().all(|r| r.passed) && enough && secs < 10.0,
        format!("worst relative error {worst:.2e} over {} suites, {secs:.2} s", results.len()),
    )
}

fn subproblem_oracle() -> Outcome {
    let start = Instant::now();
    let results = oracle_check(100, 0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let lines: Vec<String> = results.iter().map(|r| format!("{}={:.1e}", r.name, r.worst)).collect();
    outcome(
        results.iter().all(|r| r.passed) && secs < 60.0,
        format!("{}; {secs:.1} s", lines.join(", ")),
    )
}

/// Frozen policy, exact `J` injected, `η = 0.1`, minibatches of 4 with one
/// TD step each, 10⁵ observations.
fn critic_soundness() -> Outcome {
    let cfg = chain_config(json!({"batch_size": 4, "inner_iters": 1, "iterations": 25_000}));
    let mut tr = Trainer::new(&cfg, 0).unwrap();
    tr.inject_j_hat(Some(exact_j(&tr)));
    for _ in 0..cfg.iterations {
        tr.run_iteration().unwrap();
    }
    let (raw, avg) = chain_msbe(&tr);
    let below = avg.iter().all(|m| *m < 1e-3);
    let ordered = avg.iter().zip(&raw).all(|(a, r)| a <= r);
    outcome(
        below && ordered,
        format!("averaged MSBE {}, raw MSBE {} after 10^5 observations", sci(&avg), sci(&raw)),
    )
}

fn value_consistency() -> Outcome {
    let cfg = chain_config(json!({"critic": {"depth": 2, "width": 8}, "iterations": 100_000}));
    let run = run_seed(&cfg, 0, None).unwrap();
    let oracle = run.summary.oracle.unwrap();
    let worst = oracle.abs_error.iter().copied().fold(0.0, f64::max);
    outcome(
        worst <= 1e-2,
        format!("|J_hat - J| = {} (exact J {:.4?}) at t = 10^5", sci(&oracle.abs_error), oracle.exact_j),
    )
}

fn constrained_control() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/lqr_reduced.json");
    let cfg = ExperimentConfig::load(&path).unwrap();
    let ok_cfg = cfg.iterations == 20_000 && cfg.batch_size == 1 && cfg.inner_iters == 1;
    let start = Instant::now();
    let mut passed = 0;
    let mut lines = Vec::new();
    for seed in [0, 1, 2] {
        let s = run_seed(&cfg, seed, None).unwrap().summary;
        let ratio = s.objective_ratio.unwrap_or(f64::INFINITY);
        let ok = ratio <= 0.7 && s.satisfaction_fraction >= 0.95;
        passed += ok as usize;
        lines.push(format!("seed {seed}: ratio {ratio:.3}, satisfied {:.3}", s.satisfaction_fraction));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        ok_cfg && passed >= 2 && secs < 900.0,
        format!("{passed}/3 seeds pass ({}); {secs:.1} s", lines.join("; ")),
    )
}

/// A run whose constraint estimate is pinned infeasible, a direct solve of a
/// constructed infeasible instance, and a frozen-surrogate fallback loop.
fn feasibility_fallback() -> Outcome {
    let cfg = chain_config(json!({"frozen_policy": false, "theta_half_width": 1e-3, "iterations": 20,
                                  "critic": {"depth": 2, "width": 8}}));
    let mut tr = Trainer::new(&cfg, 0).unwrap();
    let j = exact_j(&tr);
    tr.inject_j_hat(Some(vec![j[0], 0.5]));
    let rows: Vec<_> = (0..cfg.iterations).map(|_| tr.run_iteration().unwrap()).collect();
    let fallback_run = rows
        .iter()
        .filter(|r| r.branch == Some(Branch::Feasibility) && r.y_star.is_some_and(|y| y > 0.0))
        .count();

    let n = 3;
    let state = SurrogateState::new(
        vec![0.0; n],
        vec![
            Surrogate { j_hat: 0.0, g_hat: vec![1.0; n], zeta: 1.0 },
            Surrogate { j_hat: 0.3, g_hat: vec![0.0; n], zeta: 1.0 },
        ],
    )
    .unwrap();
    let domain = ParamDomain::around(&[0.0; 3], 0.1).unwrap();
    let direct = solve_actor_step(&state, &domain, &SolverOptions::default(), None, None).unwrap();
    let direct_ok = direct.branch == Branch::Feasibility && direct.y_star.is_some_and(|y| (y - 0.3).abs() < 1e-6);

    // J₁(θ) = ‖θ − c‖² − r² has no feasible point in the box; curvature 2
    // makes every surrogate a strict majorizer.
    let c = [1.0, 1.0];
    let r2 = 0.25;
    let domain = ParamDomain::new(vec![-0.1, -0.1], vec![0.1, 0.1]).unwrap();
    let mut theta = vec![-0.1, 0.05];
    let mut ys = Vec::new();
    let mut all_fallback = true;
    for _ in 0..30 {
        let j1 = theta.iter().zip(&c).map(|(t, c)| (t - c) * (t - c)).sum::<f64>() - r2;
        let g1 = theta.iter().zip(&c).map(|(t, c)| 2.0 * (t - c)).collect();
        let state = SurrogateState::new(
            theta.clone(),
            vec![
                Surrogate { j_hat: 0.0, g_hat: vec![0.5, -0.5], zeta: 1.0 },
                Surrogate { j_hat: j1, g_hat: g1, zeta: 2.0 },
            ],
        )
        .unwrap();
        let sol = solve_actor_step(&state, &domain, &SolverOptions::default(), None, None).unwrap();
        all_fallback &= sol.branch == Branch::Feasibility;
        ys.push(sol.y_star.unwrap_or(f64::NAN));
        theta = sldac::actor::mix_theta(&theta, &sol.theta_bar, 0.5).unwrap();
    }
    let monotone = ys.windows(2).all(|w| w[1] <= w[0] + 1e-8);
    let decreased = ys[ys.len() - 1] < ys[0];
    outcome(
        fallback_run > 0 && direct_ok && all_fallback && monotone && decreased,
        format!(
            "run took the fallback {fallback_run}/{} times; direct y* {:?}; frozen loop y* {:.5} -> {:.5}, monotone {monotone}",
            rows.len(),
            direct.y_star,
            ys[0],
            ys[ys.len() - 1]
        ),
    )
}

/// Outer iterations until the worst averaged-critic MSBE drops below
/// `threshold`, checked every 5 iterations; `cap + 1` if never.
fn iterations_to_threshold(q: usize, seed: u64, threshold: f64, cap: usize) -> usize {
    let cfg = chain_config(json!({"batch_size": 5, "inner_iters": q, "iterations": cap}));
    let mut tr = Trainer::new(&cfg, seed).unwrap();
    tr.inject_j_hat(Some(exact_j(&tr)));
    for t in 1..=cap {
        tr.run_iteration().unwrap();
        if t % 5 == 0 && chain_msbe(&tr).1.iter().all(|m| *m <= threshold) {
            return t;
        }
    }
    cap + 1
}

fn batch_tradeoff() -> Outcome {
    let (threshold, cap) = (2e-2, 2000);
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..5 {
        let fast = iterations_to_threshold(5, seed, threshold, cap);
        let slow = iterations_to_threshold(1, seed, threshold, cap);
        wins += (fast < slow) as u32;
        pairs.push(format!("{fast}/{slow}"));
    }
    // one-sided sign test: P(5 of 5 | p = 1/2) = 1/32
    let p_value = (wins..=5).map(|k| binomial(5, k)).sum::<f64>() / 32.0;
    outcome(
        p_value < 0.05,
        format!("q=5/q=1 iterations to MSBE <= {threshold:e}: {}; {wins}/5 wins, p = {p_value:.4}", pairs.join(", ")),
    )
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn determinism() -> Outcome {
    let lqr = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/lqr_reduced.json");
    let mut lqr = ExperimentConfig::load(&lqr).unwrap();
    lqr.iterations = 1000;
    lqr.baseline_steps = 200;
    let chain = chain_config(json!({"frozen_policy": false, "iterations": 1000, "window": {"kind": "fixed", "length": 20}}));
    let mut identical = true;
    let mut bytes = 0;
    for (cfg, seed) in [(&lqr, 4), (&chain, 9)] {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let files: Vec<Vec<u8>> = dirs
            .iter()
            .map(|d| {
                run_seed(cfg, seed, Some(d.path())).unwrap();
                std::fs::read(d.path().join(format!("seed{seed}.metrics.csv"))).unwrap()
            })
            .collect();
        identical &= files[0] == files[1] && !files[0].is_empty();
        bytes += files[0].len();
    }
    outcome(identical, format!("two configs, metrics byte-identical across reruns ({bytes} bytes)"))
}

fn schedule_regions() -> Outcome {
    let clean = validate_region([0.9, 0.96, 0.36, 0.59]);
    let flagged = validate_region([0.6, 0.7, 0.0, 0.3]);
    outcome(
        clean.is_empty() && !flagged.is_empty(),
        format!("(0.9, 0.96, 0.36, 0.59) -> {clean:?}; (0.6, 0.7, 0, 0.3) -> {flagged:?}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 gradient fidelity", gradient_fidelity),
        ("2 subproblem oracle equivalence", subproblem_oracle),
        ("3 critic soundness", critic_soundness),
        ("4 value-estimate consistency", value_consistency),
        ("5 constrained LQR control", constrained_control),
        ("6 feasibility fallback", feasibility_fallback),
        ("7 B/q tradeoff direction", batch_tradeoff),
        ("8 determinism", determinism),
        ("9 schedule region validator", schedule_regions),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let o = check();
        failed += !o.passed as usize;
        println!(
            "{} criterion {name}: {} [{:.1} s]",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
