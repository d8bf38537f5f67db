//! Tabular chain MDP with an exact average-cost oracle.
//!
//! States are embedded one-hot. The policy acts with a one-dimensional
//! Gaussian `u`, and the environment applies the binary action `d = [u > 0]`,
//! so a Gaussian policy with mean `μ(s)` and std `σ(s)` induces
//! `π(d = 1 | s) = Φ(μ(s)/σ(s))`. State-action pairs are indexed `2s + d`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, Transition};
use crate::error::{argument, shape, Error, Result};
use crate::nn::{FeatureMap, MlpParams};
use crate::policy::PolicyParams;
use crate::{seeded_rng, SimRng};

pub const MAX_CHAIN_STATES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMdpConfig {
    pub n_states: usize,
    /// `costs[i][s][d]` for `i = 0..=I`.
    pub costs: Vec<Vec<[f64; 2]>>,
    /// `transitions[s][d][s']`.
    pub transitions: Vec<[Vec<f64>; 2]>,
    /// Constraint levels `c_1..c_I`.
    pub offsets: Vec<f64>,
    #[serde(default)]
    pub start_state: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainStats {
    /// Stationary state distribution.
    pub stationary: Vec<f64>,
    /// Stationary state-action distribution `σ(s, d)` at index `2s + d`.
    pub state_action: Vec<f64>,
    /// Exact `J_i` of the shifted costs.
    pub j: Vec<f64>,
    /// Differential `Q_i(s, d)` at index `2s + d`, normalized so `Σ σ Q = 0`.
    pub q: Vec<Vec<f64>>,
}

fn strongly_connected(adj: &DMatrix<f64>) -> bool {
    let n = adj.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let w = if forward { adj[(u, v)] } else { adj[(v, u)] };
                if w > 0.0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|x| x)
    };
    n > 0 && reach(true) && reach(false)
}

/// Primitive iff some power up to Wielandt's bound `(n−1)² + 1` is positive.
fn primitive(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    let pattern = m.map(|x| if x > 0.0 { 1.0 } else { 0.0 });
    let mut p = pattern.clone();
    for _ in 0..(n - 1) * (n - 1) + 1 {
        if p.iter().all(|x| *x > 0.0) {
            return true;
        }
        p = (&p * &pattern).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
    }
    false
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

impl ChainMdpConfig {
    pub fn num_constraints(&self) -> usize {
        self.offsets.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Config(format!("chain MDP {what}")));
        let n = self.n_states;
        if n == 0 || n > MAX_CHAIN_STATES {
            return bad(format!("needs 1..={MAX_CHAIN_STATES} states, got {n}"));
        }
        if self.costs.len() != self.offsets.len() + 1 {
            return bad("needs one cost table per index and one offset per constraint".into());
        }
        if self.costs.iter().any(|t| t.len() != n || t.iter().flatten().any(|c| !c.is_finite())) {
            return bad("cost tables must be n_states × 2 and finite".into());
        }
        if self.offsets.iter().any(|c| !c.is_finite()) {
            return bad("offsets must be finite".into());
        }
        if self.transitions.len() != n || self.start_state >= n {
            return bad("needs one transition row pair per state and a valid start".into());
        }
        for (s, rows) in self.transitions.iter().enumerate() {
            for (d, row) in rows.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if row.len() != n || row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                    return bad(format!("transition row ({s}, {d}) is not a distribution"));
                }
            }
        }
        let mixed = self.policy_matrix(&vec![0.5; n]);
        if !strongly_connected(&mixed) || !primitive(&mixed) {
            return bad("chain is not irreducible and aperiodic".into());
        }
        Ok(())
    }

    /// `P_π(s, s')` for `p1[s] = π(d = 1 | s)`.
    pub fn policy_matrix(&self, p1: &[f64]) -> DMatrix<f64> {
        let n = self.n_states;
        DMatrix::from_fn(n, n, |s, t| {
            (1.0 - p1[s]) * self.transitions[s][0][t] + p1[s] * self.transitions[s][1][t]
        })
    }

    /// Shifted stage cost `C'_i(s, d)`.
    pub fn shifted_cost(&self, index: usize, s: usize, d: usize) -> f64 {
        let offset = if index == 0 { 0.0 } else { self.offsets[index - 1] };
        self.costs[index][s][d] - offset
    }

    /// `Psa((s,d), (s',d')) = P(s'|s,d) π(d'|s')`.
    fn pair_matrix(&self, p1: &[f64]) -> DMatrix<f64> {
        let n = self.n_states;
        DMatrix::from_fn(2 * n, 2 * n, |r, c| {
            let (s, d, t, e) = (r / 2, r % 2, c / 2, c % 2);
            let pe = if e == 1 { p1[t] } else { 1.0 - p1[t] };
            self.transitions[s][d][t] * pe
        })
    }

    fn check_table(&self, p1: &[f64]) -> Result<()> {
        if p1.len() != self.n_states || p1.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(argument("policy table needs one probability per state"));
        }
        Ok(())
    }

    /// Two-state chain, symmetric under swapping states and actions: `d = 0`
    /// stays with probability 0.7, `d = 1` switches with probability 0.7.
    pub fn symmetric_two_state() -> Self {
        Self {
            n_states: 2,
            costs: vec![vec![[1.0, 0.0], [0.0, 1.0]], vec![[0.0, 1.0], [1.0, 0.0]]],
            transitions: vec![[vec![0.7, 0.3], vec![0.3, 0.7]], [vec![0.3, 0.7], vec![0.7, 0.3]]],
            offsets: vec![0.5],
            start_state: 0,
        }
    }

    /// Fixed four-state instance with one constraint.
    pub fn four_state() -> Self {
        Self {
            n_states: 4,
            costs: vec![
                vec![[1.0, 0.2], [0.6, 0.9], [0.1, 0.7], [0.8, 0.3]],
                vec![[0.2, 0.9], [0.5, 0.1], [0.7, 0.4], [0.0, 0.6]],
            ],
            transitions: vec![
                [vec![0.6, 0.3, 0.05, 0.05], vec![0.1, 0.2, 0.5, 0.2]],
                [vec![0.2, 0.5, 0.2, 0.1], vec![0.05, 0.05, 0.3, 0.6]],
                [vec![0.3, 0.1, 0.5, 0.1], vec![0.1, 0.6, 0.1, 0.2]],
                [vec![0.25, 0.25, 0.25, 0.25], vec![0.5, 0.1, 0.1, 0.3]],
            ],
            offsets: vec![0.4],
            start_state: 0,
        }
    }

    /// Random instance with strictly positive transition rows.
    pub fn random(n_states: usize, n_constraints: usize, seed: u64) -> Result<Self> {
        if n_states == 0 || n_states > MAX_CHAIN_STATES {
            return Err(argument(format!("chain needs 1..={MAX_CHAIN_STATES} states")));
        }
        let mut rng = seeded_rng(seed);
        let row = |rng: &mut SimRng| {
            let w: Vec<f64> = (0..n_states).map(|_| rng.random_range(0.05..1.0)).collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|x| x / z).collect::<Vec<f64>>()
        };
        let transitions = (0..n_states).map(|_| [row(&mut rng), row(&mut rng)]).collect();
        let costs = (0..=n_constraints)
            .map(|_| (0..n_states).map(|_| [rng.random(), rng.random()]).collect())
            .collect();
        let offsets = (0..n_constraints).map(|_| rng.random_range(0.3..0.7)).collect();
        let cfg = Self {
            n_states,
            costs,
            transitions,
            offsets,
            start_state: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Stationary distribution, exact `J_i` and differential `Q_i` under the
/// policy table `p1[s] = π(d = 1 | s)`.
pub fn chain_exact_stats(cfg: &ChainMdpConfig, p1: &[f64]) -> Result<ChainStats> {
    cfg.check_table(p1)?;
    let n = cfg.n_states;
    let p = cfg.policy_matrix(p1);
    if !strongly_connected(&p) {
        return Err(Error::Oracle("chain is reducible under this policy".into()));
    }
    // p (I − P + 1 1ᵀ) = 1ᵀ
    let a = (DMatrix::identity(n, n) - &p + DMatrix::from_element(n, n, 1.0)).transpose();
    let stationary = a
        .lu()
        .solve(&DVector::from_element(n, 1.0))
        .ok_or_else(|| Error::Oracle("stationary system is singular".into()))?;
    let stationary: Vec<f64> = stationary.iter().map(|x| x.max(0.0)).collect();

    let state_action: Vec<f64> = (0..2 * n)
        .map(|k| {
            let (s, d) = (k / 2, k % 2);
            stationary[s] * if d == 1 { p1[s] } else { 1.0 - p1[s] }
        })
        .collect();
    let sigma = DVector::from_column_slice(&state_action);
    // (I − Psa + 1σᵀ) q = C' − J forces σᵀq = 0 and the Bellman equation.
    let m = DMatrix::identity(2 * n, 2 * n) - cfg.pair_matrix(p1) + DVector::from_element(2 * n, 1.0) * sigma.transpose();
    let lu = m.lu();

    let mut j = Vec::new();
    let mut q = Vec::new();
    for i in 0..cfg.costs.len() {
        let c = DVector::from_fn(2 * n, |k, _| cfg.shifted_cost(i, k / 2, k % 2));
        let ji = sigma.dot(&c);
        let qi = lu
            .solve(&c.add_scalar(-ji))
            .ok_or_else(|| Error::Oracle("Bellman system is singular".into()))?;
        j.push(ji);
        q.push(qi.iter().copied().collect());
    }
    Ok(ChainStats {
        stationary,
        state_action,
        j,
        q,
    })
}

/// `(T f)(s,d) − f(s,d)` style residuals `f − (C' − ĵ + Psa f)` for every pair.
pub fn bellman_residuals(cfg: &ChainMdpConfig, p1: &[f64], index: usize, values: &[f64], j_hat: f64) -> Result<Vec<f64>> {
    cfg.check_table(p1)?;
    let n = cfg.n_states;
    if values.len() != 2 * n || index >= cfg.costs.len() {
        return Err(shape("value table needs 2·n_states entries and a valid index"));
    }
    let next = cfg.pair_matrix(p1) * DVector::from_column_slice(values);
    Ok((0..2 * n)
        .map(|k| values[k] - (cfg.shifted_cost(index, k / 2, k % 2) - j_hat + next[k]))
        .collect())
}

/// Exact mean-squared Bellman error `Σ σ(s,d) (f − C' + ĵ − E f(s',d'))²`.
pub fn exact_msbe(cfg: &ChainMdpConfig, p1: &[f64], index: usize, values: &[f64], j_hat: f64) -> Result<f64> {
    let stats = chain_exact_stats(cfg, p1)?;
    let res = bellman_residuals(cfg, p1, index, values, j_hat)?;
    Ok(res.iter().zip(&stats.state_action).map(|(r, w)| w * r * r).sum())
}

pub fn one_hot(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

/// `π(d = 1 | s) = Φ(μ(s)/σ(s))` for a one-dimensional Gaussian policy over
/// one-hot states.
pub fn policy_table(policy: &PolicyParams, n_states: usize) -> Result<Vec<f64>> {
    if policy.action_dim() != 1 || policy.state_dim() != n_states {
        return Err(shape("chain policies need one-hot states and a scalar action"));
    }
    (0..n_states)
        .map(|s| {
            let (mu, std) = policy.mean_and_std(&one_hot(n_states, s))?;
            Ok(normal_cdf(mu[0] / std[0]))
        })
        .collect()
}

/// Network values at every state-action feature `one_hot(2s + d)`.
pub fn value_table(net: &MlpParams, n_states: usize) -> Result<Vec<f64>> {
    (0..2 * n_states)
        .map(|k| Ok(net.evaluate(&one_hot(2 * n_states, k))?[0]))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ChainEnv {
    pub cfg: ChainMdpConfig,
}

impl ChainEnv {
    pub fn new(cfg: ChainMdpConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }
}

impl Environment for ChainEnv {
    fn state_dim(&self) -> usize {
        self.cfg.n_states
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn num_constraints(&self) -> usize {
        self.cfg.num_constraints()
    }

    fn constraint_offsets(&self) -> Vec<f64> {
        self.cfg.offsets.clone()
    }

    fn reset(&mut self, _rng: &mut SimRng) -> Vec<f64> {
        one_hot(self.cfg.n_states, self.cfg.start_state)
    }

    fn step(&mut self, state: &[f64], action: &[f64], rng: &mut SimRng) -> Result<Transition> {
        let n = self.cfg.n_states;
        if state.len() != n || action.len() != 1 {
            return Err(shape("chain step expects a one-hot state and a scalar action"));
        }
        let s = state
            .iter()
            .position(|x| *x > 0.5)
            .ok_or_else(|| argument("chain state is not one-hot"))?;
        let d = usize::from(action[0] > 0.0);
        let u: f64 = rng.random();
        let row = &self.cfg.transitions[s][d];
        let mut acc = 0.0;
        let mut next = n - 1;
        for (t, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = t;
                break;
            }
        }
        let costs = (0..self.cfg.costs.len()).map(|i| self.cfg.shifted_cost(i, s, d)).collect();
        Ok(Transition {
            next_state: one_hot(n, next),
            costs,
        })
    }

    fn state_features(&self) -> FeatureMap {
        FeatureMap::Normalized {
            scale: vec![1.0; self.cfg.n_states],
            bias: 0.0,
        }
    }

    fn critic_features(&self) -> FeatureMap {
        FeatureMap::ChainOneHot {
            n_states: self.cfg.n_states,
        }
    }
}
