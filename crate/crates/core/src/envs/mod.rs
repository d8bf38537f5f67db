//! Constrained MDP environments.
//!
//! Every environment reports shifted per-stage costs: `costs[0] = C_0(s, a)`
//! and `costs[i] = C_i(s, a) − c_i` for the constraint indices.

pub mod chain;
pub mod lqr;
pub mod mimo;

use serde::{Deserialize, Serialize};

pub use chain::{chain_exact_stats, ChainEnv, ChainMdpConfig, ChainStats};
pub use lqr::{lqr_step, LqrConfig, LqrEnv, LqrPreset};
pub use mimo::{rzf_precode, sample_channel, MimoConfig, MimoEnv};

use std::io::Write;

use crate::error::{shape, Result};
use crate::nn::FeatureMap;
use crate::SimRng;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub next_state: Vec<f64>,
    /// Shifted costs, length `I + 1`.
    pub costs: Vec<f64>,
}

pub trait Environment: Send {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn num_constraints(&self) -> usize;
    /// Constraint levels `c_1..c_I` already subtracted from the costs.
    fn constraint_offsets(&self) -> Vec<f64>;
    fn reset(&mut self, rng: &mut SimRng) -> Vec<f64>;
    fn step(&mut self, state: &[f64], action: &[f64], rng: &mut SimRng) -> Result<Transition>;
    /// Policy input map over raw states.
    fn state_features(&self) -> FeatureMap;
    /// Critic input map over `state ‖ action`.
    fn critic_features(&self) -> FeatureMap;
}

/// Environment section of an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Lqr(LqrConfig),
    LqrPreset { preset: LqrPreset, seed: u64 },
    Mimo(MimoConfig),
    Chain(ChainMdpConfig),
}

impl EnvConfig {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            Self::Lqr(cfg) => Box::new(LqrEnv::new(cfg.clone())?),
            Self::LqrPreset { preset, seed } => Box::new(LqrEnv::new(preset.build(*seed)?)?),
            Self::Mimo(cfg) => Box::new(MimoEnv::new(cfg.clone())?),
            Self::Chain(cfg) => Box::new(ChainEnv::new(cfg.clone())?),
        })
    }

    pub fn chain(&self) -> Option<&ChainMdpConfig> {
        match self {
            Self::Chain(cfg) => Some(cfg),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub t: u64,
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub costs: Vec<f64>,
}

/// CSV with header `t, s_0.., a_0.., c_0..`; all steps must share dimensions.
pub fn write_trajectory_csv<W: Write>(steps: &[TrajectoryStep], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(first) = steps.first() {
        let dims = (first.s.len(), first.a.len(), first.costs.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..dims.0).map(|k| format!("s_{k}")));
        header.extend((0..dims.1).map(|k| format!("a_{k}")));
        header.extend((0..dims.2).map(|k| format!("c_{k}")));
        w.write_record(&header)?;
        for st in steps {
            if (st.s.len(), st.a.len(), st.costs.len()) != dims {
                return Err(shape("trajectory steps differ in dimension"));
            }
            let mut rec = vec![st.t.to_string()];
            rec.extend(st.s.iter().chain(&st.a).chain(&st.costs).map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
