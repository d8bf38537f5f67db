//! Convex subproblems over the quadratic surrogates.
//!
//! Every surrogate shares the anchor and has isotropic curvature, so for any
//! nonnegative weights `w` the minimizer of `Σ w_i J̄_i` over the box is the
//! clamp of `θ_t − Σ w_i ĝ_i / (2 Σ w_i ζ_i)`. Both subproblems are solved in
//! the dual with a projected spectral gradient ascent on the multipliers.

use serde::{Deserialize, Serialize};

use super::SurrogateState;
use crate::error::{argument, shape, Error, Result};
use crate::policy::ParamDomain;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Objective,
    Feasibility,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub theta_bar: Vec<f64>,
    /// `λ_1..λ_I`; on the feasibility branch they lie on the simplex.
    pub multipliers: Vec<f64>,
    pub branch: Branch,
    /// `max_i J̄_i(θ̄)`, reported on the feasibility branch.
    pub y_star: Option<f64>,
    pub iterations: usize,
}

const MAX_MULTIPLIER: f64 = 1e12;
const MIN_STEP: f64 = 1e-30;
const MAX_STEP: f64 = 1e30;

/// Inner minimizer and surrogate values for a weight vector over all indices.
struct Inner {
    step: Vec<f64>,
    values: Vec<f64>,
}

fn inner_minimizer(state: &SurrogateState, domain: &ParamDomain, weights: &[f64], out: &mut Inner) {
    let z: f64 = weights
        .iter()
        .zip(&state.surrogates)
        .map(|(w, s)| w * s.zeta)
        .sum();
    for k in 0..state.dim() {
        let g: f64 = weights
            .iter()
            .zip(&state.surrogates)
            .filter(|(w, _)| **w != 0.0)
            .map(|(w, s)| w * s.g_hat[k])
            .sum();
        let anchor = state.anchor[k];
        let target = (anchor - g / (2.0 * z)).clamp(domain.lower[k], domain.upper[k]);
        out.step[k] = target - anchor;
    }
    state.eval_all_at_step(&out.step, &mut out.values);
}

fn check_inputs(state: &SurrogateState, domain: &ParamDomain, opts: &SolverOptions) -> Result<()> {
    if domain.dim() != state.dim() {
        return Err(shape("parameter box and surrogates differ in dimension"));
    }
    if !domain.contains(&state.anchor) {
        return Err(argument("surrogate anchor lies outside the parameter box"));
    }
    if !(opts.tol > 0.0) || opts.max_iters == 0 {
        return Err(argument("solver needs tol > 0 and max_iters > 0"));
    }
    Ok(())
}

fn initial_step(state: &SurrogateState, domain: &ParamDomain) -> f64 {
    let zeta_max = state
        .surrogates
        .iter()
        .map(|s| s.zeta)
        .fold(0.0, f64::max);
    let s = 1.0 / (2.0 * zeta_max * domain.diameter());
    if s.is_finite() && s > 0.0 {
        s
    } else {
        1.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn theta_from(state: &SurrogateState, step: &[f64]) -> Vec<f64> {
    state.anchor.iter().zip(step).map(|(a, d)| a + d).collect()
}

/// `argmin J̄_0(θ)` over `{θ ∈ Θ : J̄_i(θ) ≤ 0, i = 1..I}`.
///
/// Terminates once `max_i J̄_i(θ̄) ≤ tol` and `max_i |λ_i J̄_i(θ̄)| ≤ tol`.
/// Returns [`Error::Infeasible`] when the dual ascent fails and the
/// min-max problem confirms there is no feasible point.
pub fn solve_objective_subproblem(
    state: &SurrogateState,
    domain: &ParamDomain,
    opts: &SolverOptions,
    warm_start: Option<&[f64]>,
) -> Result<SubproblemSolution> {
    check_inputs(state, domain, opts)?;
    let n_con = state.num_constraints();
    let mut weights = vec![0.0; n_con + 1];
    weights[0] = 1.0;
    if let Some(w) = warm_start.filter(|w| w.len() == n_con) {
        for (dst, src) in weights[1..].iter_mut().zip(w) {
            *dst = if src.is_finite() { src.max(0.0) } else { 0.0 };
        }
    }
    let mut cur = Inner {
        step: vec![0.0; state.dim()],
        values: vec![0.0; n_con + 1],
    };
    inner_minimizer(state, domain, &weights, &mut cur);
    if n_con == 0 {
        return Ok(SubproblemSolution {
            theta_bar: theta_from(state, &cur.step),
            multipliers: Vec::new(),
            branch: Branch::Objective,
            y_star: None,
            iterations: 0,
        });
    }

    let dual = |inner: &Inner, w: &[f64]| dot(w, &inner.values);
    let mut trial = Inner {
        step: vec![0.0; state.dim()],
        values: vec![0.0; n_con + 1],
    };
    let mut trial_w = weights.clone();
    let mut step = initial_step(state, domain);
    let mut d_cur = dual(&cur, &weights);
    let mut residual = f64::INFINITY;

    for it in 0..opts.max_iters {
        let (viol, comp) = kkt_residuals(&cur.values[1..], &weights[1..]);
        residual = viol.max(comp);
        if residual <= opts.tol {
            return Ok(SubproblemSolution {
                theta_bar: theta_from(state, &cur.step),
                multipliers: weights[1..].to_vec(),
                branch: Branch::Objective,
                y_star: None,
                iterations: it,
            });
        }
        if weights[1..].iter().any(|w| *w > MAX_MULTIPLIER) {
            break;
        }

        // backtracking on dual decrease
        loop {
            for i in 1..=n_con {
                trial_w[i] = (weights[i] + step * cur.values[i]).max(0.0);
            }
            inner_minimizer(state, domain, &trial_w, &mut trial);
            let d_trial = dual(&trial, &trial_w);
            if d_trial >= d_cur - 1e-14 * (1.0 + d_cur.abs()) || step <= MIN_STEP {
                break;
            }
            step *= 0.5;
        }
        let ds: Vec<f64> = (1..=n_con).map(|i| trial_w[i] - weights[i]).collect();
        let dg: Vec<f64> = (1..=n_con).map(|i| trial.values[i] - cur.values[i]).collect();
        let ss = dot(&ds, &ds);
        let sy = dot(&ds, &dg);
        step = if ss == 0.0 {
            (step * 2.0).min(MAX_STEP)
        } else if sy < 0.0 {
            (ss / -sy).clamp(MIN_STEP, MAX_STEP)
        } else {
            (step * 2.0).min(MAX_STEP)
        };
        std::mem::swap(&mut cur, &mut trial);
        weights.copy_from_slice(&trial_w);
        d_cur = dual(&cur, &weights);
    }

    let best = theta_from(state, &cur.step);
    if let Ok(feas) = solve_feasibility_subproblem(state, domain, opts, None) {
        let y = feas.y_star.unwrap_or(f64::NAN);
        if y > opts.tol {
            return Err(Error::Infeasible { y_star: y });
        }
    }
    Err(Error::Solver {
        iterations: opts.max_iters,
        residual,
        best,
    })
}

fn kkt_residuals(values: &[f64], multipliers: &[f64]) -> (f64, f64) {
    let viol = values.iter().fold(0.0f64, |m, v| m.max(*v));
    let comp = values
        .iter()
        .zip(multipliers)
        .fold(0.0f64, |m, (v, l)| m.max((v * l).abs()));
    (viol, comp)
}

/// `min_{θ ∈ Θ, y} y` s.t. `J̄_i(θ) ≤ y`, i.e. `min_θ max_i J̄_i(θ)`, solved
/// through multipliers on the probability simplex. Terminates when the
/// duality gap `max_i J̄_i(θ̄) − d(λ)` is at most `tol`.
pub fn solve_feasibility_subproblem(
    state: &SurrogateState,
    domain: &ParamDomain,
    opts: &SolverOptions,
    warm_start: Option<&[f64]>,
) -> Result<SubproblemSolution> {
    check_inputs(state, domain, opts)?;
    let n_con = state.num_constraints();
    if n_con == 0 {
        return Err(argument("feasibility problem needs at least one constraint"));
    }
    let mut lam: Vec<f64> = match warm_start.filter(|w| w.len() == n_con && w.iter().all(|x| x.is_finite())) {
        Some(w) => project_simplex(w),
        None => vec![1.0 / n_con as f64; n_con],
    };
    let mut weights = vec![0.0; n_con + 1];
    weights[1..].copy_from_slice(&lam);

    let mut cur = Inner {
        step: vec![0.0; state.dim()],
        values: vec![0.0; n_con + 1],
    };
    let mut trial = Inner {
        step: vec![0.0; state.dim()],
        values: vec![0.0; n_con + 1],
    };
    inner_minimizer(state, domain, &weights, &mut cur);
    let dual = |inner: &Inner, lam: &[f64]| dot(lam, &inner.values[1..]);
    let primal = |inner: &Inner| inner.values[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut d_cur = dual(&cur, &lam);
    let mut best = (primal(&cur), cur.step.clone(), lam.clone());
    let mut step = initial_step(state, domain);
    let mut gap = f64::INFINITY;

    for it in 0..opts.max_iters {
        let p = primal(&cur);
        if p < best.0 {
            best = (p, cur.step.clone(), lam.clone());
        }
        gap = p - d_cur;
        if gap <= opts.tol {
            return Ok(SubproblemSolution {
                theta_bar: theta_from(state, &cur.step),
                multipliers: lam,
                branch: Branch::Feasibility,
                y_star: Some(p),
                iterations: it,
            });
        }
        let mut trial_lam;
        loop {
            let raw: Vec<f64> = (0..n_con).map(|i| lam[i] + step * cur.values[i + 1]).collect();
            trial_lam = project_simplex(&raw);
            weights[1..].copy_from_slice(&trial_lam);
            inner_minimizer(state, domain, &weights, &mut trial);
            let d_trial = dual(&trial, &trial_lam);
            if d_trial >= d_cur - 1e-14 * (1.0 + d_cur.abs()) || step <= MIN_STEP {
                break;
            }
            step *= 0.5;
        }
        let ds: Vec<f64> = (0..n_con).map(|i| trial_lam[i] - lam[i]).collect();
        let dg: Vec<f64> = (0..n_con).map(|i| trial.values[i + 1] - cur.values[i + 1]).collect();
        let ss = dot(&ds, &ds);
        let sy = dot(&ds, &dg);
        step = if ss > 0.0 && sy < 0.0 {
            (ss / -sy).clamp(MIN_STEP, MAX_STEP)
        } else {
            (step * 2.0).min(MAX_STEP)
        };
        std::mem::swap(&mut cur, &mut trial);
        lam = trial_lam;
        d_cur = dual(&cur, &lam);
    }
    Err(Error::Solver {
        iterations: opts.max_iters,
        residual: gap,
        best: theta_from(state, &best.1),
    })
}

/// Euclidean projection onto `{λ ≥ 0, Σλ = 1}`.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, x) in u.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// The per-iteration actor decision: the min-max problem runs first, and when
/// its value exceeds `tol` the feasibility solution is returned instead of the
/// objective solution.
pub fn solve_actor_step(
    state: &SurrogateState,
    domain: &ParamDomain,
    opts: &SolverOptions,
    warm_objective: Option<&[f64]>,
    warm_feasibility: Option<&[f64]>,
) -> Result<SubproblemSolution> {
    if state.num_constraints() == 0 {
        return solve_objective_subproblem(state, domain, opts, warm_objective);
    }
    let feas = solve_feasibility_subproblem(state, domain, opts, warm_feasibility)?;
    if feas.y_star.is_some_and(|y| y > opts.tol) {
        return Ok(feas);
    }
    match solve_objective_subproblem(state, domain, opts, warm_objective) {
        Err(Error::Infeasible { .. }) => Ok(feas),
        other => other,
    }
}

/// `(1 − β)·θ_t + β·θ̄` with `β ∈ (0, 1]`.
pub fn mix_theta(theta_t: &[f64], theta_bar: &[f64], beta: f64) -> Result<Vec<f64>> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(argument(format!("mixing step must lie in (0, 1], got {beta}")));
    }
    if theta_t.len() != theta_bar.len() {
        return Err(shape("θ_t and θ̄ differ in dimension"));
    }
    Ok(theta_t
        .iter()
        .zip(theta_bar)
        .map(|(a, b)| (1.0 - beta) * a + beta * b)
        .collect())
}
