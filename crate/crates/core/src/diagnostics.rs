//! Self-checks behind the `grad-check` and `oracle-check` commands.
//!
//! Gradients are compared with central differences along random
//! directions, which keeps the chance of straddling a ReLU kink negligible.
//! The subproblem solvers are compared with a coarse-to-fine grid search
//! over the parameter box, and the chain oracle with its own Bellman
//! residual.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::actor::{
    solve_feasibility_subproblem, solve_objective_subproblem, SolverOptions, Surrogate, SurrogateState,
};
use crate::envs::chain::{bellman_residuals, chain_exact_stats, ChainMdpConfig};
use crate::error::Result;
use crate::nn::{FeatureMap, MlpParams, MlpSpec};
use crate::policy::{ParamDomain, PolicyParams};
use crate::{seeded_rng, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    /// Worst error seen over all instances.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: &str, errors: &[f64], tolerance: f64) -> Self {
        let worst = errors.iter().copied().fold(0.0, f64::max);
        let finite = errors.iter().all(|e| e.is_finite());
        Self {
            name: name.into(),
            instances: errors.len(),
            worst,
            tolerance,
            passed: finite && worst <= tolerance,
        }
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: {} instances, worst {:.3e} (tolerance {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.instances,
            self.worst,
            self.tolerance
        )
    }
}

const FD_STEP: f64 = 1e-6;
const FD_DIRECTIONS: usize = 4;

fn gaussian_vec(rng: &mut SimRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit_ball_point(rng: &mut SimRng, n: usize) -> Vec<f64> {
    let v = gaussian_vec(rng, n);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let r: f64 = rng.random_range(0.2..1.0);
    v.iter().map(|x| x * r / norm).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Worst directional relative error of `backward` against central
/// differences of `uᵀ f(θ; x)` for one random network.
pub fn mlp_gradient_error(seed: u64) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let spec = MlpSpec::new(
        rng.random_range(2..=4),
        rng.random_range(3..=16),
        rng.random_range(1..=5),
        rng.random_range(1..=3),
    )?;
    let params = MlpParams::init_with_rng(spec, &mut rng)?;
    let mut flat = params.flatten();
    // move away from the init scale so all layers matter
    flat.iter_mut().for_each(|w| *w *= rng.random_range(1.0..3.0));
    let params = MlpParams::from_flat(spec, &flat)?;
    let x = unit_ball_point(&mut rng, spec.input_dim);
    let u = gaussian_vec(&mut rng, spec.output_dim);
    let (_, cache) = params.forward(&x)?;
    let grad = params.backward(&cache, &u)?;
    let scalar = |theta: &[f64]| -> Result<f64> {
        let p = MlpParams::from_flat(spec, theta)?;
        Ok(dot(p.evaluate(&x)?.as_slice(), &u))
    };
    let mut worst: f64 = 0.0;
    for _ in 0..FD_DIRECTIONS {
        let v = gaussian_vec(&mut rng, flat.len());
        let plus: Vec<f64> = flat.iter().zip(&v).map(|(a, b)| a + FD_STEP * b).collect();
        let minus: Vec<f64> = flat.iter().zip(&v).map(|(a, b)| a - FD_STEP * b).collect();
        let numeric = (scalar(&plus)? - scalar(&minus)?) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(dot(&grad, &v), numeric));
    }
    Ok(worst)
}

/// Worst directional relative error of `grad_log_prob` for one random policy.
/// The log-std outputs are kept inside the clamp range.
pub fn policy_gradient_error(seed: u64) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let state_dim = rng.random_range(1..=5);
    let features = FeatureMap::uniform(state_dim, 2.0, rng.random_range(0.0..0.8))?;
    let policy = PolicyParams::init(
        rng.random_range(2..=4),
        rng.random_range(3..=12),
        features,
        rng.random_range(1..=3),
        rng.random(),
    )?;
    let s: Vec<f64> = (0..state_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let a = policy.sample_action(&s, &mut rng)?;
    let grad = policy.grad_log_prob(&s, &a)?;
    let theta = policy.flat();
    let mut probe = policy.clone();
    let mut lp = |t: &[f64]| -> Result<f64> {
        probe.set_flat(t)?;
        probe.log_prob(&s, &a)
    };
    let mut worst: f64 = 0.0;
    for _ in 0..FD_DIRECTIONS {
        let v = gaussian_vec(&mut rng, theta.len());
        let plus: Vec<f64> = theta.iter().zip(&v).map(|(a, b)| a + FD_STEP * b).collect();
        let minus: Vec<f64> = theta.iter().zip(&v).map(|(a, b)| a - FD_STEP * b).collect();
        let numeric = (lp(&plus)? - lp(&minus)?) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(dot(&grad, &v), numeric));
    }
    Ok(worst)
}

pub const GRAD_TOLERANCE: f64 = 1e-5;

pub fn grad_check(instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mlp = (0..instances as u64)
        .map(|k| mlp_gradient_error(seed.wrapping_add(k)))
        .collect::<Result<Vec<_>>>()?;
    let pol = (0..instances as u64)
        .map(|k| policy_gradient_error(seed.wrapping_add(1_000_003 + k)))
        .collect::<Result<Vec<_>>>()?;
    Ok(vec![
        CheckResult::new("network backward vs finite differences", &mlp, GRAD_TOLERANCE),
        CheckResult::new("policy score vs finite differences", &pol, GRAD_TOLERANCE),
    ])
}

/// A random surrogate instance with `n` parameters and `n_con` constraints.
/// When `feasible`, the constraint values at some interior point are
/// strictly negative.
pub fn random_instance(rng: &mut SimRng, n: usize, n_con: usize, feasible: bool) -> Result<(SurrogateState, ParamDomain)> {
    let anchor: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lower: Vec<f64> = anchor.iter().map(|a| a - rng.random_range(0.3..1.5)).collect();
    let upper: Vec<f64> = anchor.iter().map(|a| a + rng.random_range(0.3..1.5)).collect();
    let domain = ParamDomain::new(lower.clone(), upper.clone())?;
    let interior: Vec<f64> = lower
        .iter()
        .zip(&upper)
        .map(|(l, u)| l + (u - l) * rng.random_range(0.2..0.8))
        .collect();
    let mut surrogates = Vec::with_capacity(n_con + 1);
    for i in 0..=n_con {
        let g_hat: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let zeta = rng.random_range(0.2..3.0);
        let j_hat = if i == 0 {
            rng.random_range(-1.0..1.0)
        } else if feasible {
            // pin J̄_i(interior) to a negative value
            let d: Vec<f64> = interior.iter().zip(&anchor).map(|(x, a)| x - a).collect();
            let at = dot(&g_hat, &d) + zeta * dot(&d, &d);
            -at - rng.random_range(0.05..0.5)
        } else {
            rng.random_range(-0.5..1.5)
        };
        surrogates.push(Surrogate { j_hat, g_hat, zeta });
    }
    Ok((SurrogateState::new(anchor, surrogates)?, domain))
}

/// Minimizes `objective(θ)` over the box by repeated grid refinement: a
/// dense initial grid, then grids of the same density on a shrinking box
/// around the incumbent. Points where `objective` returns `None` are
/// infeasible and skipped. The result is an upper bound on the minimum; thin
/// feasible wedges can keep it a few grid cells away.
pub fn grid_minimize<F>(domain: &ParamDomain, points_per_dim: usize, levels: usize, mut objective: F) -> Option<(f64, Vec<f64>)>
where
    F: FnMut(&[f64]) -> Option<f64>,
{
    let n = domain.dim();
    let mut lo = domain.lower.clone();
    let mut hi = domain.upper.clone();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let k = points_per_dim.max(2);
    let mut idx = vec![0usize; n];
    let mut theta = vec![0.0; n];
    for _ in 0..levels {
        let total = k.pow(n as u32);
        for flat in 0..total {
            let mut r = flat;
            for d in 0..n {
                idx[d] = r % k;
                r /= k;
                theta[d] = lo[d] + (hi[d] - lo[d]) * idx[d] as f64 / (k - 1) as f64;
            }
            if let Some(v) = objective(&theta) {
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, theta.clone()));
                }
            }
        }
        let (_, centre) = best.as_ref()?;
        for d in 0..n {
            let spacing = (hi[d] - lo[d]) / (k - 1) as f64;
            lo[d] = (centre[d] - 2.0 * spacing).max(domain.lower[d]);
            hi[d] = (centre[d] + 2.0 * spacing).min(domain.upper[d]);
        }
    }
    best
}

/// Points per dimension and refinement levels for an `n`-dimensional box.
fn grid_budget(n: usize) -> (usize, usize) {
    match n {
        1 => (2001, 3),
        2 => (301, 5),
        3 => (61, 7),
        _ => (25, 9),
    }
}

/// Strictly feasible grid minimizer of the objective subproblem.
pub fn grid_objective(state: &SurrogateState, domain: &ParamDomain) -> Option<(f64, Vec<f64>)> {
    let (k, levels) = grid_budget(state.dim());
    let n_con = state.num_constraints();
    let mut vals = vec![0.0; n_con + 1];
    grid_minimize(domain, k, levels, |theta| {
        for (i, v) in vals.iter_mut().enumerate() {
            *v = state.eval(i, theta).ok()?;
        }
        vals[1..].iter().all(|v| *v < 0.0).then_some(vals[0])
    })
}

pub fn grid_feasibility(state: &SurrogateState, domain: &ParamDomain) -> Option<(f64, Vec<f64>)> {
    let (k, levels) = grid_budget(state.dim());
    grid_minimize(domain, k, levels, |theta| {
        (1..=state.num_constraints())
            .map(|i| state.eval(i, theta).ok())
            .try_fold(f64::NEG_INFINITY, |m, v| Some(m.max(v?)))
    })
}

/// Log-barrier Newton method for `min f₀` subject to `f_i ≤ 0` and the box,
/// all on a shared variable vector `x`. Each `f` returns its value, gradient
/// and Hessian. `x0` must be strictly feasible. Returns the final iterate,
/// whose duality gap is below `gap`.
fn barrier_minimize<F>(f: F, n_con: usize, lower: &[f64], upper: &[f64], x0: Vec<f64>, gap: f64) -> Option<Vec<f64>>
where
    F: Fn(usize, &[f64]) -> (f64, DVector<f64>, DMatrix<f64>),
{
    let n = x0.len();
    let m = (n_con + lower.iter().filter(|l| l.is_finite()).count() + upper.iter().filter(|u| u.is_finite()).count()) as f64;
    let barrier = |x: &[f64], t: f64| -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let (v0, g0, h0) = f(0, x);
        let mut val = t * v0;
        let mut grad = g0 * t;
        let mut hess = h0 * t;
        for i in 1..=n_con {
            let (v, g, h) = f(i, x);
            if !(v < 0.0) {
                return None;
            }
            val -= (-v).ln();
            hess += &g * g.transpose() / (v * v) - h / v;
            grad -= g / v;
        }
        for k in 0..n {
            for (slack, sign) in [(x[k] - lower[k], 1.0), (upper[k] - x[k], -1.0)] {
                if !slack.is_finite() {
                    continue;
                }
                if !(slack > 0.0) {
                    return None;
                }
                val -= slack.ln();
                grad[k] -= sign / slack;
                hess[(k, k)] += 1.0 / (slack * slack);
            }
        }
        Some((val, grad, hess))
    };
    let mut x = x0;
    let mut t = 1.0;
    barrier(&x, t)?;
    while m / t > gap {
        for _ in 0..100 {
            let (val, grad, hess) = barrier(&x, t)?;
            let step = hess.cholesky()?.solve(&(-&grad));
            let decrement = -grad.dot(&step);
            if decrement / 2.0 < 1e-14 {
                break;
            }
            let mut s = 1.0;
            loop {
                let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + s * b).collect();
                if let Some((tv, _, _)) = barrier(&trial, t) {
                    if tv <= val - 0.25 * s * decrement {
                        x = trial;
                        break;
                    }
                }
                s *= 0.5;
                if s < 1e-20 {
                    return Some(x);
                }
            }
        }
        t *= 10.0;
    }
    Some(x)
}

/// Value, gradient and Hessian of surrogate `i` at `θ`.
fn surrogate_taylor(state: &SurrogateState, i: usize, theta: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
    let s = &state.surrogates[i];
    let n = state.dim();
    let v = state.eval(i, theta).unwrap_or(f64::INFINITY);
    let g = DVector::from_fn(n, |k, _| s.g_hat[k] + 2.0 * s.zeta * (theta[k] - state.anchor[k]));
    (v, g, DMatrix::identity(n, n) * (2.0 * s.zeta))
}

/// Moves a box point a hair towards the box centre so every slack is positive.
fn interior(domain: &ParamDomain, theta: &[f64]) -> Vec<f64> {
    theta
        .iter()
        .zip(domain.lower.iter().zip(&domain.upper))
        .map(|(x, (l, u))| x + 1e-9 * (0.5 * (l + u) - x))
        .collect()
}

pub const BARRIER_GAP: f64 = 1e-10;

/// Grid search followed by a log-barrier polish of the objective subproblem.
/// Returns `(grid value, polished value)`. The barrier needs a strictly
/// feasible start, so the grid incumbent (which can sit a hair outside a
/// constraint once nudged off the box faces) is blended towards the strictly
/// feasible point found by the feasibility polish.
pub fn oracle_objective_value(state: &SurrogateState, domain: &ParamDomain) -> Option<(f64, f64)> {
    let (grid, at) = grid_objective(state, domain)?;
    let (_, y, safe) = feasibility_polish(state, domain)?;
    if y >= 0.0 {
        return None;
    }
    let strict = |x: &[f64]| (1..=state.num_constraints()).all(|i| state.eval(i, x).is_ok_and(|v| v < 0.0));
    let near = interior(domain, &at);
    let start = [0.0, 1e-9, 1e-6, 1e-3, 1e-1, 1.0].into_iter().find_map(|lam| {
        let x: Vec<f64> = near.iter().zip(&safe).map(|(a, b)| a + lam * (b - a)).collect();
        strict(&x).then_some(x)
    })?;
    let x = barrier_minimize(|i, x| surrogate_taylor(state, i, x), state.num_constraints(), &domain.lower, &domain.upper, start, BARRIER_GAP)?;
    Some((grid, state.eval(0, &x).ok()?))
}

/// Grid search followed by a log-barrier polish of `min y` subject to
/// `J̄_i ≤ y`, over `(θ, y)`. Returns `(grid value, polished value)`.
pub fn oracle_feasibility_value(state: &SurrogateState, domain: &ParamDomain) -> Option<(f64, f64)> {
    feasibility_polish(state, domain).map(|(g, y, _)| (g, y))
}

fn feasibility_polish(state: &SurrogateState, domain: &ParamDomain) -> Option<(f64, f64, Vec<f64>)> {
    let (grid, at) = grid_feasibility(state, domain)?;
    let n = state.dim();
    let mut start = interior(domain, &at);
    start.push(grid + 1.0);
    let mut lower = domain.lower.clone();
    lower.push(f64::NEG_INFINITY);
    let mut upper = domain.upper.clone();
    upper.push(f64::INFINITY);
    let lifted = |i: usize, x: &[f64]| {
        let mut g = DVector::zeros(n + 1);
        let mut h = DMatrix::zeros(n + 1, n + 1);
        if i == 0 {
            g[n] = 1.0;
            return (x[n], g, h);
        }
        let (v, gi, hi) = surrogate_taylor(state, i, &x[..n]);
        g.rows_mut(0, n).copy_from(&gi);
        g[n] = -1.0;
        h.view_mut((0, 0), (n, n)).copy_from(&hi);
        (v - x[n], g, h)
    };
    let mut x = barrier_minimize(lifted, state.num_constraints(), &lower, &upper, start, BARRIER_GAP)?;
    let y = x.pop()?;
    Some((grid, y, x))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubproblemComparison {
    /// `|solver − grid-seeded barrier optimum|` for the objective subproblem.
    pub objective_gap: f64,
    pub feasibility_gap: f64,
    /// How far the solver lands above the raw grid value (0 if below), worst
    /// of the two subproblems.
    pub grid_excess: f64,
    /// `max(primal violation, complementarity, stationarity)` at the solution.
    pub kkt_residual: f64,
}

/// Projected-gradient stationarity of the Lagrangian `Σ w_i J̄_i` over the box.
pub fn lagrangian_stationarity(state: &SurrogateState, domain: &ParamDomain, weights: &[f64], theta: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..state.dim() {
        let d = theta[k] - state.anchor[k];
        let g: f64 = weights
            .iter()
            .zip(&state.surrogates)
            .map(|(w, s)| w * (s.g_hat[k] + 2.0 * s.zeta * d))
            .sum();
        let moved = (theta[k] - g).clamp(domain.lower[k], domain.upper[k]);
        worst = worst.max((theta[k] - moved).abs());
    }
    worst
}

/// Solves both subproblems on a random feasible instance and compares the
/// optimal values with grid search.
pub fn compare_subproblems(seed: u64) -> Result<SubproblemComparison> {
    let mut rng = seeded_rng(seed);
    let n = rng.random_range(1..=4);
    let n_con = rng.random_range(1..=3);
    let (state, domain) = random_instance(&mut rng, n, n_con, true)?;
    let opts = SolverOptions::default();

    let obj = solve_objective_subproblem(&state, &domain, &opts, None)?;
    let value = state.eval(0, &obj.theta_bar)?;
    let (grid, polished) = oracle_objective_value(&state, &domain).unwrap_or((f64::NAN, f64::NAN));
    let mut weights = vec![1.0];
    weights.extend(&obj.multipliers);
    let mut kkt = lagrangian_stationarity(&state, &domain, &weights, &obj.theta_bar);
    for (i, l) in obj.multipliers.iter().enumerate() {
        let c = state.eval(i + 1, &obj.theta_bar)?;
        kkt = kkt.max(c.max(0.0)).max((l * c).abs()).max((-l).max(0.0));
    }

    let feas = solve_feasibility_subproblem(&state, &domain, &opts, None)?;
    let y = feas.y_star.unwrap_or(f64::NAN);
    let (grid_y, polished_y) = oracle_feasibility_value(&state, &domain).unwrap_or((f64::NAN, f64::NAN));
    Ok(SubproblemComparison {
        objective_gap: (value - polished).abs(),
        feasibility_gap: (y - polished_y).abs(),
        grid_excess: (value - grid).max(y - grid_y).max(0.0),
        kkt_residual: kkt,
    })
}

/// Worst Bellman residual of the exact chain oracle on a random instance.
pub fn chain_oracle_residual(seed: u64) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let n = rng.random_range(2..=8);
    let n_con = rng.random_range(0..=2);
    let cfg = ChainMdpConfig::random(n, n_con, rng.random())?;
    let p1: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
    let stats = chain_exact_stats(&cfg, &p1)?;
    let mut worst: f64 = 0.0;
    for i in 0..=n_con {
        for r in bellman_residuals(&cfg, &p1, i, &stats.q[i], stats.j[i])? {
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

pub const VALUE_TOLERANCE: f64 = 1e-4;
pub const KKT_TOLERANCE: f64 = 1e-6;
pub const BELLMAN_TOLERANCE: f64 = 1e-10;

pub fn oracle_check(instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let cmp = (0..instances as u64)
        .map(|k| compare_subproblems(seed.wrapping_add(k)))
        .collect::<Result<Vec<_>>>()?;
    let chain = (0..instances as u64)
        .map(|k| chain_oracle_residual(seed.wrapping_add(7_000_001 + k)))
        .collect::<Result<Vec<_>>>()?;
    let pick = |f: fn(&SubproblemComparison) -> f64| cmp.iter().map(f).collect::<Vec<_>>();
    Ok(vec![
        CheckResult::new("objective subproblem vs grid search", &pick(|c| c.objective_gap), VALUE_TOLERANCE),
        CheckResult::new("feasibility subproblem vs grid search", &pick(|c| c.feasibility_gap), VALUE_TOLERANCE),
        CheckResult::new("solvers never above the raw grid", &pick(|c| c.grid_excess), VALUE_TOLERANCE),
        CheckResult::new("objective subproblem KKT residual", &pick(|c| c.kkt_residual), KKT_TOLERANCE),
        CheckResult::new("chain oracle Bellman residual", &chain, BELLMAN_TOLERANCE),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_finds_a_shifted_quadratic() {
        let domain = ParamDomain::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let (v, at) = grid_minimize(&domain, 21, 8, |t| Some((t[0] - 0.3).powi(2) + (t[1] + 0.7).powi(2))).unwrap();
        assert!(v < 1e-12);
        assert!((at[0] - 0.3).abs() < 1e-6 && (at[1] + 0.7).abs() < 1e-6);
    }

    #[test]
    fn grid_respects_infeasible_points() {
        let domain = ParamDomain::new(vec![-1.0], vec![1.0]).unwrap();
        let (v, _) = grid_minimize(&domain, 201, 4, |t| (t[0] >= 0.5).then_some(t[0])).unwrap();
        assert!((v - 0.5).abs() < 1e-9);
    }

    #[test]
    fn barrier_solves_a_disc_constrained_linear_program() {
        // min x + y on the unit disc: optimum −√2 at (−1/√2, −1/√2)
        let f = |i: usize, x: &[f64]| {
            if i == 0 {
                (x[0] + x[1], DVector::from_vec(vec![1.0, 1.0]), DMatrix::zeros(2, 2))
            } else {
                (
                    x[0] * x[0] + x[1] * x[1] - 1.0,
                    DVector::from_vec(vec![2.0 * x[0], 2.0 * x[1]]),
                    DMatrix::identity(2, 2) * 2.0,
                )
            }
        };
        let x = barrier_minimize(f, 1, &[-2.0, -2.0], &[2.0, 2.0], vec![0.1, 0.2], 1e-12).unwrap();
        assert!((x[0] + x[1] + 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn small_suites_pass() {
        for r in grad_check(3, 11).unwrap() {
            assert!(r.passed, "{r}");
        }
        for r in oracle_check(3, 5).unwrap() {
            assert!(r.passed, "{r}");
        }
    }
}
