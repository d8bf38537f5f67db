//! Per-cost critics: projected TD(0) on the raw network, iterate averaging on
//! the second network, and sampled Bellman-error estimates.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{argument, shape, Result};
use crate::nn::{read_mlp, write_mlp, FeatureMap, MlpParams, MlpSpec};
use crate::policy::PolicyParams;

/// One transition `(s, a, {C'_i(s, a)}, s')`. `costs[0]` is the objective
/// cost, `costs[i]` for `i ≥ 1` already has the constraint level subtracted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub costs: Vec<f64>,
    pub s_next: Vec<f64>,
}

/// `R_ω = a₀ · m^{-1/2} · L^{-4/9}`.
pub fn default_radius(a0: f64, width: usize, depth: usize) -> f64 {
    a0 / (width as f64).sqrt() * (depth as f64).powf(-4.0 / 9.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdStats {
    pub mean_td: f64,
    pub mean_sq_td: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticView {
    Raw,
    Averaged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticPair {
    pub raw: MlpParams,
    pub averaged: MlpParams,
    pub anchor: MlpParams,
    pub radius: f64,
}

impl CriticPair {
    pub fn new(anchor: MlpParams, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(argument(format!("critic radius must be positive, got {radius}")));
        }
        if anchor.spec().output_dim != 1 {
            return Err(shape("critic networks have scalar output"));
        }
        Ok(Self {
            raw: anchor.clone(),
            averaged: anchor.clone(),
            anchor,
            radius,
        })
    }

    pub fn params(&self, view: CriticView) -> &MlpParams {
        match view {
            CriticView::Raw => &self.raw,
            CriticView::Averaged => &self.averaged,
        }
    }

    /// The semi-gradient
    /// `Δ = (f(s,a) − (C'_i − Ĵ_i + f(s',a'))) · ∇_ω f(s,a)` at the raw
    /// parameters, together with the scalar TD error.
    pub fn td_direction(
        &self,
        features: &FeatureMap,
        obs: &Observation,
        index: usize,
        j_hat_prev: f64,
        a_next: &[f64],
    ) -> Result<(Vec<f64>, f64)> {
        let cost = *obs.costs.get(index).ok_or_else(|| {
            argument(format!(
                "cost index {index} out of range for {} costs",
                obs.costs.len()
            ))
        })?;
        let x = features.apply_pair(&obs.s, &obs.a)?;
        let x_next = features.apply_pair(&obs.s_next, a_next)?;
        let (out, cache) = self.raw.forward(&x)?;
        let next = self.raw.evaluate(&x_next)?[0];
        let td = out[0] - (cost - j_hat_prev + next);
        let grad = self.raw.backward(&cache, &[td])?;
        Ok((grad, td))
    }

    /// `raw ← Π(raw − η Δ)` for one observation. Returns the TD error.
    pub fn td_step(
        &mut self,
        features: &FeatureMap,
        obs: &Observation,
        index: usize,
        j_hat_prev: f64,
        a_next: &[f64],
        eta: f64,
    ) -> Result<f64> {
        let stats = self.td_step_batch(
            features,
            std::slice::from_ref(obs),
            std::slice::from_ref(&a_next.to_vec()),
            index,
            j_hat_prev,
            eta,
        )?;
        Ok(stats.mean_td)
    }

    /// One projected step along Δ averaged over `batch`. TD errors are taken
    /// at the parameters before the step.
    pub fn td_step_batch(
        &mut self,
        features: &FeatureMap,
        batch: &[Observation],
        next_actions: &[Vec<f64>],
        index: usize,
        j_hat_prev: f64,
        eta: f64,
    ) -> Result<TdStats> {
        if batch.is_empty() || batch.len() != next_actions.len() {
            return Err(argument("TD batch must be nonempty with one next action per observation"));
        }
        if !(eta > 0.0) {
            return Err(argument(format!("TD step size must be positive, got {eta}")));
        }
        let mut direction = vec![0.0; self.raw.num_params()];
        let mut td_sum = 0.0;
        let mut sq_sum = 0.0;
        for (obs, a_next) in batch.iter().zip(next_actions) {
            let (g, td) = self.td_direction(features, obs, index, j_hat_prev, a_next)?;
            direction.iter_mut().zip(&g).for_each(|(d, x)| *d += x);
            td_sum += td;
            sq_sum += td * td;
        }
        let n = batch.len() as f64;
        self.raw.axpy(-eta / n, &direction)?;
        self.raw.project_in_place(&self.anchor, self.radius)?;
        Ok(TdStats {
            mean_td: td_sum / n,
            mean_sq_td: sq_sum / n,
        })
    }

    /// `averaged ← (1 − γ)·averaged + γ·raw`.
    pub fn average_step(&mut self, gamma: f64) -> Result<()> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(argument(format!("averaging weight must lie in (0, 1], got {gamma}")));
        }
        if gamma == 1.0 {
            self.averaged = self.raw.clone();
            return Ok(());
        }
        self.averaged.lerp_towards(&self.raw, gamma)
    }

    /// Q estimate from the averaged network.
    pub fn q_value(&self, features: &FeatureMap, s: &[f64], a: &[f64]) -> Result<f64> {
        self.value(CriticView::Averaged, features, s, a)
    }

    pub fn value(&self, view: CriticView, features: &FeatureMap, s: &[f64], a: &[f64]) -> Result<f64> {
        let x = features.apply_pair(s, a)?;
        Ok(self.params(view).evaluate(&x)?[0])
    }

    /// Sample average of squared TD residuals with `a' ~ π(·|s')` drawn fresh.
    #[allow(clippy::too_many_arguments)]
    pub fn msbe_estimate<R: Rng + ?Sized>(
        &self,
        view: CriticView,
        features: &FeatureMap,
        batch: &[Observation],
        index: usize,
        j_hat: f64,
        policy: &PolicyParams,
        rng: &mut R,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(argument("MSBE needs at least one observation"));
        }
        let mut total = 0.0;
        for obs in batch {
            let a_next = policy.sample_action(&obs.s_next, rng)?;
            let r = self.residual(view, features, obs, index, j_hat, &a_next)?;
            total += r * r;
        }
        Ok(total / batch.len() as f64)
    }

    /// `f(s,a) − (C'_i − Ĵ + f(s',a'))` with the given next action.
    pub fn residual(
        &self,
        view: CriticView,
        features: &FeatureMap,
        obs: &Observation,
        index: usize,
        j_hat: f64,
        a_next: &[f64],
    ) -> Result<f64> {
        let cost = *obs
            .costs
            .get(index)
            .ok_or_else(|| argument(format!("cost index {index} out of range")))?;
        let here = self.value(view, features, &obs.s, &obs.a)?;
        let next = self.value(view, features, &obs.s_next, a_next)?;
        Ok(here - (cost - j_hat + next))
    }
}

/// One critic pair per cost index, all sharing an architecture and feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticBank {
    pub pairs: Vec<CriticPair>,
    pub features: FeatureMap,
}

impl CriticBank {
    /// Every pair starts from the same `ω₀ ~ N(0, 1/m²)`.
    pub fn new(spec: MlpSpec, n_costs: usize, radius: f64, features: FeatureMap, seed: u64) -> Result<Self> {
        if spec.input_dim != features.output_dim() {
            return Err(shape("critic input dimension must match the feature map"));
        }
        if n_costs == 0 {
            return Err(argument("at least one cost index is required"));
        }
        let anchor = MlpParams::init(spec, seed)?;
        let pair = CriticPair::new(anchor, radius)?;
        Ok(Self {
            pairs: vec![pair; n_costs],
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pair(&self, index: usize) -> Result<&CriticPair> {
        self.pairs
            .get(index)
            .ok_or_else(|| argument(format!("critic index {index} out of range")))
    }

    pub fn q_value(&self, index: usize, s: &[f64], a: &[f64]) -> Result<f64> {
        self.pair(index)?.q_value(&self.features, s, a)
    }

    /// Writes `critic{i}.{raw,averaged,anchor}.mlp` for every index.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, pair) in self.pairs.iter().enumerate() {
            for (tag, params) in [("raw", &pair.raw), ("averaged", &pair.averaged), ("anchor", &pair.anchor)] {
                let file = File::create(dir.join(format!("critic{i}.{tag}.mlp")))?;
                write_mlp(params, BufWriter::new(file))?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path, n_costs: usize, radius: f64, features: FeatureMap) -> Result<Self> {
        let read = |i: usize, tag: &str| -> Result<MlpParams> {
            read_mlp(BufReader::new(File::open(dir.join(format!("critic{i}.{tag}.mlp")))?))
        };
        let mut pairs = Vec::with_capacity(n_costs);
        for i in 0..n_costs {
            let mut pair = CriticPair::new(read(i, "anchor")?, radius)?;
            pair.raw = read(i, "raw")?;
            pair.averaged = read(i, "averaged")?;
            pairs.push(pair);
        }
        Ok(Self { pairs, features })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    /// f(ω; x) = √1 · w2 · relu(w1 · x0) with x = (s, a) and features identity-like.
    fn unit_pair() -> (CriticPair, FeatureMap) {
        let spec = MlpSpec::new(2, 1, 2, 1).unwrap();
        let anchor = MlpParams::from_weights(spec, vec![dmatrix![1.0, 0.0], dmatrix![2.0]]).unwrap();
        let features = FeatureMap::uniform(2, 1.0, 0.0).unwrap();
        (CriticPair::new(anchor, 100.0).unwrap(), features)
    }

    fn obs(cost: f64) -> Observation {
        Observation {
            s: vec![1.0],
            a: vec![0.0],
            costs: vec![cost],
            s_next: vec![1.0],
        }
    }

    #[test]
    fn zero_td_error_is_identity() {
        let (mut pair, features) = unit_pair();
        let before = pair.raw.clone();
        // f ≡ 2 at both (s,a) and (s',a'); C' − Ĵ = 0
        let td = pair.td_step(&features, &obs(1.0), 0, 1.0, &[0.0], 0.1).unwrap();
        assert_eq!(td, 0.0);
        assert_eq!(pair.raw, before);
    }

    #[test]
    fn negative_td_error_moves_along_gradient() {
        let (mut pair, features) = unit_pair();
        let (grad, td) = pair.td_direction(&features, &obs(3.0), 0, 1.0, &[0.0]).unwrap();
        assert_eq!(td, -2.0);
        let before = pair.raw.flatten();
        let (_, cache) = pair.raw.forward(&[1.0, 0.0]).unwrap();
        let feat = pair.raw.backward(&cache, &[1.0]).unwrap();
        assert_eq!(grad, feat.iter().map(|g| -2.0 * g).collect::<Vec<_>>());
        pair.td_step(&features, &obs(3.0), 0, 1.0, &[0.0], 0.05).unwrap();
        let after = pair.raw.flatten();
        for ((b, a), g) in before.iter().zip(&after).zip(&feat) {
            assert!((a - (b + 2.0 * 0.05 * g)).abs() < 1e-15);
        }
    }

    #[test]
    fn bad_arguments() {
        let (mut pair, features) = unit_pair();
        assert!(pair.td_step(&features, &obs(1.0), 3, 0.0, &[0.0], 0.1).is_err());
        assert!(pair.td_step(&features, &obs(1.0), 0, 0.0, &[0.0], 0.0).is_err());
        assert!(pair.average_step(0.0).is_err());
        assert!(pair.average_step(1.5).is_err());
        let policy = PolicyParams::init(2, 2, FeatureMap::uniform(1, 1.0, 0.0).unwrap(), 1, 0).unwrap();
        let mut rng = crate::seeded_rng(0);
        assert!(pair
            .msbe_estimate(CriticView::Raw, &features, &[], 0, 0.0, &policy, &mut rng)
            .is_err());
    }

    #[test]
    fn averaging_rules() {
        let (mut pair, _) = unit_pair();
        pair.raw.assign_flat(&[2.0, 2.0, 2.0]).unwrap();
        pair.averaged.assign_flat(&[0.0, 0.0, 0.0]).unwrap();
        pair.average_step(0.5).unwrap();
        assert_eq!(pair.averaged.flatten(), vec![1.0, 1.0, 1.0]);
        pair.average_step(1.0).unwrap();
        assert_eq!(pair.averaged, pair.raw);
    }

    #[test]
    fn averaging_converges_for_constant_raw() {
        let (mut pair, _) = unit_pair();
        pair.raw.assign_flat(&[0.3, -0.2, 0.7]).unwrap();
        pair.averaged.assign_flat(&[0.0, 0.0, 0.0]).unwrap();
        for t in 1..=20_000u32 {
            pair.average_step((t as f64).powf(-0.3).min(1.0)).unwrap();
        }
        // the first step has γ = 1, so convergence is exact long before the end
        let diff = pair.averaged.sq_distance(&pair.raw).unwrap().sqrt();
        assert!(diff < 1e-6);

        let (mut pair, _) = unit_pair();
        pair.raw.assign_flat(&[0.3, -0.2, 0.7]).unwrap();
        pair.averaged.assign_flat(&[0.0, 0.0, 0.0]).unwrap();
        for t in 2..=20_000u32 {
            pair.average_step((t as f64).powf(-0.3)).unwrap();
        }
        assert!(pair.averaged.sq_distance(&pair.raw).unwrap().sqrt() < 1e-6);
    }

    #[test]
    fn msbe_of_single_residual() {
        let (pair, features) = unit_pair();
        let policy = {
            let mut p = PolicyParams::init(2, 2, FeatureMap::uniform(1, 1.0, 0.0).unwrap(), 1, 0).unwrap();
            let n = p.num_params();
            p.set_flat(&vec![0.0; n]).unwrap();
            p.log_std_min = -20.0;
            p.log_std_max = -19.0;
            p
        };
        // f(s,a) = 2 (s = 1); f(s', a') = 2 for any a' since the first layer ignores a
        let mut rng = crate::seeded_rng(3);
        let m = pair
            .msbe_estimate(CriticView::Raw, &features, &[obs(3.0)], 0, 1.0, &policy, &mut rng)
            .unwrap();
        assert!((m - 4.0).abs() < 1e-12);
        let zero = pair
            .msbe_estimate(CriticView::Raw, &features, &[obs(1.0)], 0, 1.0, &policy, &mut rng)
            .unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn projection_holds_after_large_steps() {
        let spec = MlpSpec::new(3, 4, 3, 1).unwrap();
        let features = FeatureMap::uniform(3, 1.0, 0.0).unwrap();
        let mut bank = CriticBank::new(spec, 2, 0.05, features.clone(), 1).unwrap();
        let o = Observation {
            s: vec![0.4, 0.1],
            a: vec![0.3],
            costs: vec![50.0, -20.0],
            s_next: vec![0.2, 0.2],
        };
        for i in 0..2 {
            for _ in 0..50 {
                bank.pairs[i].td_step(&features, &o, i, 0.0, &[0.1], 5.0).unwrap();
                bank.pairs[i].average_step(0.3).unwrap();
                for d in bank.pairs[i].raw.layer_distances(&bank.pairs[i].anchor).unwrap() {
                    assert!(d <= 0.05 * (1.0 + 1e-12));
                }
                for d in bank.pairs[i].averaged.layer_distances(&bank.pairs[i].anchor).unwrap() {
                    assert!(d <= 0.05 * (1.0 + 1e-12));
                }
            }
        }
        assert_eq!(bank.pairs[0].anchor, bank.pairs[1].anchor);
    }

    #[test]
    fn bank_checkpoint_round_trip() {
        let spec = MlpSpec::new(2, 3, 2, 1).unwrap();
        let features = FeatureMap::uniform(2, 1.0, 0.0).unwrap();
        let mut bank = CriticBank::new(spec, 2, 1.0, features.clone(), 5).unwrap();
        bank.pairs[1].raw.axpy(0.1, &vec![1.0; spec.num_params()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        bank.save(dir.path()).unwrap();
        let loaded = CriticBank::load(dir.path(), 2, 1.0, features).unwrap();
        assert_eq!(loaded, bank);
    }

    #[test]
    fn zero_averaged_params_give_zero_q() {
        let spec = MlpSpec::new(3, 4, 3, 1).unwrap();
        let features = FeatureMap::uniform(3, 1.0, 0.0).unwrap();
        let mut bank = CriticBank::new(spec, 1, 1.0, features, 2).unwrap();
        bank.pairs[0].averaged = MlpParams::zeros(spec).unwrap();
        assert_eq!(bank.q_value(0, &[0.1, 0.2], &[0.3]).unwrap(), 0.0);
    }
}
