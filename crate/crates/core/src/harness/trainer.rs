use std::time::Instant;

use rand::RngCore;

use super::config::{ExperimentConfig, GradientEstimator};
use super::metrics::{MetricsRow, StepStatus};
use crate::actor::{
    estimate_gradient_mc, estimate_gradients, estimate_values, mix_theta, recursive_average_vec, solve_actor_step,
    ReplayStorage, Surrogate, SurrogateState,
};
use crate::critic::{default_radius, CriticBank, Observation};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::nn::MlpSpec;
use crate::policy::{ParamDomain, PolicyParams};
use crate::{seeded_rng, SimRng};

/// Everything the outer loop carries from one iteration to the next.
pub struct Trainer {
    pub cfg: ExperimentConfig,
    pub env: Box<dyn Environment>,
    pub policy: PolicyParams,
    pub domain: ParamDomain,
    pub critics: CriticBank,
    pub storage: ReplayStorage,
    pub state: Vec<f64>,
    j_hat: Option<Vec<f64>>,
    g_hat: Option<Vec<Vec<f64>>>,
    injected_j: Option<Vec<f64>>,
    warm_objective: Option<Vec<f64>>,
    warm_feasibility: Option<Vec<f64>>,
    t: u64,
    rng: SimRng,
}

/// Sub-seeds for policy init, critic init and the environment stream.
pub(crate) fn derive_seeds(seed: u64) -> [u64; 4] {
    let mut root = seeded_rng(seed);
    [root.next_u64(), root.next_u64(), root.next_u64(), root.next_u64()]
}

impl Trainer {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let [policy_seed, critic_seed, env_seed, _] = derive_seeds(seed);
        let mut env = cfg.env.build()?;
        let policy = PolicyParams::init(
            cfg.policy.depth,
            cfg.policy.width,
            env.state_features(),
            env.action_dim(),
            policy_seed,
        )?;
        let domain = ParamDomain::around(&policy.flat(), cfg.theta_half_width)?;
        let features = env.critic_features();
        let spec = MlpSpec::new(cfg.critic.depth, cfg.critic.width, features.output_dim(), 1)?;
        let radius = default_radius(cfg.critic_a0, cfg.critic.width, cfg.critic.depth);
        let critics = CriticBank::new(spec, env.num_constraints() + 1, radius, features, critic_seed)?;
        let storage = ReplayStorage::new(cfg.window.capacity())?;
        let mut rng = seeded_rng(env_seed);
        let state = env.reset(&mut rng);
        Ok(Self {
            cfg: cfg.clone(),
            env,
            policy,
            domain,
            critics,
            storage,
            state,
            j_hat: None,
            g_hat: None,
            injected_j: None,
            warm_objective: None,
            warm_feasibility: None,
            t: 0,
            rng,
        })
    }

    /// Replaces the running `Ĵ` by fixed values, both inside the TD target and
    /// in the surrogates. `None` restores the estimator.
    pub fn inject_j_hat(&mut self, j: Option<Vec<f64>>) {
        self.injected_j = j;
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn j_hat(&self) -> Option<&[f64]> {
        self.j_hat.as_deref()
    }

    pub fn g_hat(&self) -> Option<&[Vec<f64>]> {
        self.g_hat.as_deref()
    }

    fn step_sizes(&self) -> Result<[f64; 4]> {
        let s = &self.cfg.schedules;
        let t = self.t;
        let first = t == 0;
        Ok([
            if first { 1.0 } else { s.alpha.value_at(t)? },
            s.beta.value_at(t.max(1))?.min(1.0),
            s.eta.value_at(t.max(1))?,
            if first { 1.0 } else { s.gamma.value_at(t)?.min(1.0) },
        ])
    }

    /// One outer iteration: sample, store, value estimates, critic steps,
    /// gradient estimates, surrogate subproblem, mixing.
    pub fn run_iteration(&mut self) -> Result<MetricsRow> {
        let start = Instant::now();
        let [alpha, beta, eta, gamma] = self.step_sizes()?;
        let n_costs = self.critics.len();
        let b = self.cfg.batch_size;

        let mut batch = Vec::with_capacity(b);
        for _ in 0..b {
            let a = self.policy.sample_action(&self.state, &mut self.rng)?;
            let tr = self.env.step(&self.state, &a, &mut self.rng)?;
            let s_next = tr.next_state;
            batch.push(Observation {
                s: std::mem::replace(&mut self.state, s_next.clone()),
                a,
                costs: tr.costs,
                s_next,
            });
        }
        for obs in &batch {
            self.storage.push(obs.clone());
        }
        self.storage.set_window(self.cfg.window.length_at(self.t as usize));

        let j_tilde = estimate_values(&self.storage, n_costs)?;
        let (j_prev, j_hat) = match (&self.injected_j, &self.j_hat) {
            (Some(j), _) => (j.clone(), j.clone()),
            (None, None) => (j_tilde.clone(), j_tilde.clone()),
            (None, Some(prev)) => {
                let mut next = prev.clone();
                recursive_average_vec(&mut next, &j_tilde, alpha)?;
                (prev.clone(), next)
            }
        };
        self.j_hat = Some(j_hat.clone());

        let next_actions = batch
            .iter()
            .map(|o| self.policy.sample_action(&o.s_next, &mut self.rng))
            .collect::<Result<Vec<_>>>()?;
        let chunk = b / self.cfg.inner_iters;
        let mut msbe = vec![0.0; n_costs];
        let CriticBank { pairs, features } = &mut self.critics;
        for (i, pair) in pairs.iter_mut().enumerate() {
            for k in 0..self.cfg.inner_iters {
                let range = k * chunk..(k + 1) * chunk;
                let stats =
                    pair.td_step_batch(features, &batch[range.clone()], &next_actions[range], i, j_prev[i], eta)?;
                msbe[i] += stats.mean_sq_td / self.cfg.inner_iters as f64;
            }
            pair.average_step(gamma)?;
        }

        let cost: Vec<f64> = (0..n_costs)
            .map(|i| batch.iter().map(|o| o.costs[i]).sum::<f64>() / b as f64)
            .collect();
        let mut row = MetricsRow {
            t: self.t,
            j_hat,
            j_tilde,
            cost,
            msbe,
            branch: None,
            y_star: None,
            step_norm: 0.0,
            status: StepStatus::Ok,
            wall_ms: 0.0,
        };
        if !self.cfg.frozen_policy {
            self.actor_step(alpha, beta, &mut row)?;
        }
        self.t += 1;
        row.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(row)
    }

    fn actor_step(&mut self, alpha: f64, beta: f64, row: &mut MetricsRow) -> Result<()> {
        let n_costs = self.critics.len();
        let g_tilde = match self.cfg.gradient_estimator {
            GradientEstimator::Critic => estimate_gradients(&self.storage, &self.critics, &self.policy)?,
            GradientEstimator::MonteCarlo { truncation_len } => {
                let len = truncation_len.min(self.storage.window_len());
                (0..n_costs)
                    .map(|i| estimate_gradient_mc(&self.storage, i, &self.policy, len))
                    .collect::<Result<_>>()?
            }
        };
        match &mut self.g_hat {
            None => self.g_hat = Some(g_tilde),
            Some(prev) => {
                for (p, f) in prev.iter_mut().zip(&g_tilde) {
                    recursive_average_vec(p, f, alpha)?;
                }
            }
        }
        let g_hat = self.g_hat.as_ref().expect("set above");
        let theta = self.policy.flat();
        let surrogates = (0..n_costs)
            .map(|i| Surrogate {
                j_hat: row.j_hat[i],
                g_hat: g_hat[i].clone(),
                zeta: self.cfg.zeta_for(i),
            })
            .collect();
        let state = SurrogateState::new(theta.clone(), surrogates)?;
        let theta_bar = match solve_actor_step(
            &state,
            &self.domain,
            &self.cfg.solver,
            self.warm_objective.as_deref(),
            self.warm_feasibility.as_deref(),
        ) {
            Ok(sol) => {
                row.branch = Some(sol.branch);
                row.y_star = sol.y_star;
                match sol.branch {
                    crate::actor::Branch::Objective => self.warm_objective = Some(sol.multipliers),
                    crate::actor::Branch::Feasibility => self.warm_feasibility = Some(sol.multipliers),
                }
                sol.theta_bar
            }
            Err(Error::Solver { best, .. }) => {
                row.status = StepStatus::SolverError;
                best
            }
            Err(e) => return Err(e),
        };
        let mut next = mix_theta(&theta, &theta_bar, beta)?;
        self.domain.project(&mut next);
        row.step_norm = next
            .iter()
            .zip(&theta)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        self.policy.set_flat(&next)
    }
}
