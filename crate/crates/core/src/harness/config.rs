use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actor::{SolverOptions, WindowPolicy};
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::schedules::{validate_region, RegionViolation, ScheduleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Number of weight matrices `L`.
    pub depth: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GradientEstimator {
    /// Averaged critic times the score, over the replay window.
    Critic,
    /// Truncated centred returns in place of the critic.
    MonteCarlo { truncation_len: usize },
}

fn default_a0() -> f64 {
    10.0
}

fn default_half_width() -> f64 {
    1.0
}

fn default_one() -> usize {
    1
}

fn default_slack() -> f64 {
    0.05
}

fn default_baseline() -> usize {
    2000
}

fn default_estimator() -> GradientEstimator {
    GradientEstimator::Critic
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub policy: NetConfig,
    pub critic: NetConfig,
    pub schedules: ScheduleSet,
    /// Surrogate curvature per cost index; a single entry applies to all.
    pub zeta: Vec<f64>,
    pub window: WindowPolicy,
    /// Critic radius constant `a₀` in `R_ω = a₀ m^{-1/2} L^{-4/9}`.
    #[serde(default = "default_a0")]
    pub critic_a0: f64,
    /// Half-width of the parameter box `Θ` around the initial θ.
    #[serde(default = "default_half_width")]
    pub theta_half_width: f64,
    /// New observations per outer iteration (`B`).
    #[serde(default = "default_one")]
    pub batch_size: usize,
    /// Critic inner iterations per outer iteration (`q`).
    #[serde(default = "default_one")]
    pub inner_iters: usize,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub solver: SolverOptions,
    /// Debug mode: the actor step is skipped and θ stays at its initial value.
    #[serde(default)]
    pub frozen_policy: bool,
    #[serde(default = "default_estimator")]
    pub gradient_estimator: GradientEstimator,
    /// Slack allowed on `Ĵ_i` when counting constraint satisfaction.
    #[serde(default = "default_slack")]
    pub constraint_slack: f64,
    /// Steps of the initial policy rolled out to measure its objective cost;
    /// 0 disables the baseline.
    #[serde(default = "default_baseline")]
    pub baseline_steps: usize,
    #[serde(default)]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigReport {
    pub errors: Vec<String>,
    pub region_violations: Vec<RegionViolation>,
}

impl ConfigReport {
    pub fn ok(&self) -> bool {
        self.errors.is_empty()
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Hard violations go to `errors`; exponents outside the convergence
    /// region are warnings only.
    pub fn check(&self) -> ConfigReport {
        let mut errors = Vec::new();
        let mut push = |r: Result<()>| {
            if let Err(e) = r {
                errors.push(e.to_string());
            }
        };
        push(self.schedules.validate());
        push(self.window.validate());
        if self.batch_size == 0 || self.inner_iters == 0 {
            push(Err(Error::Config("B and q must be at least 1".into())));
        } else if self.inner_iters > self.batch_size || self.batch_size % self.inner_iters != 0 {
            push(Err(Error::Config(format!(
                "q = {} must divide B = {}",
                self.inner_iters, self.batch_size
            ))));
        }
        if self.iterations == 0 {
            push(Err(Error::Config("iterations must be at least 1".into())));
        }
        if self.seeds.is_empty() {
            push(Err(Error::Config("at least one seed is required".into())));
        }
        if self.policy.depth < 2 || self.critic.depth < 2 || self.policy.width == 0 || self.critic.width == 0 {
            push(Err(Error::Config("networks need depth ≥ 2 and width ≥ 1".into())));
        }
        if self.zeta.is_empty() || self.zeta.iter().any(|z| !(*z > 0.0)) {
            push(Err(Error::Config("ζ entries must be positive".into())));
        }
        if !(self.critic_a0 > 0.0) || !(self.theta_half_width > 0.0) {
            push(Err(Error::Config("critic a₀ and the θ box half-width must be positive".into())));
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iters == 0 {
            push(Err(Error::Config("solver needs tol > 0 and max_iters ≥ 1".into())));
        }
        if let GradientEstimator::MonteCarlo { truncation_len } = self.gradient_estimator {
            if truncation_len == 0 || truncation_len > self.window.capacity() {
                push(Err(Error::Config("Monte-Carlo truncation must fit in the window".into())));
            }
        }
        match self.env.build() {
            Ok(env) => {
                let n = env.num_constraints() + 1;
                if self.zeta.len() != 1 && self.zeta.len() != n {
                    push(Err(Error::Config(format!("ζ needs 1 or {n} entries, got {}", self.zeta.len()))));
                }
            }
            Err(e) => push(Err(e)),
        }
        ConfigReport {
            errors,
            region_violations: validate_region(self.schedules.exponents()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let report = self.check();
        if report.ok() {
            Ok(())
        } else {
            Err(Error::Config(report.errors.join("; ")))
        }
    }

    pub fn zeta_for(&self, index: usize) -> f64 {
        if self.zeta.len() == 1 {
            self.zeta[0]
        } else {
            self.zeta[index]
        }
    }
}
