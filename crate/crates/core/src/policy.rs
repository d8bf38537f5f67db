//! Diagonal Gaussian policy with separate mean and log-std networks.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{argument, shape, Result};
use crate::nn::{read_mlp, write_mlp, FeatureMap, MlpParams, MlpSpec};

pub const DEFAULT_LOG_STD_MIN: f64 = -5.0;
pub const DEFAULT_LOG_STD_MAX: f64 = 2.0;

/// `θ = [θ_μ, θ_σ]`. The std network output is a log-std, clamped to
/// `[log_std_min, log_std_max]` before exponentiation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub mean_net: MlpParams,
    pub std_net: MlpParams,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub features: FeatureMap,
}

impl PolicyParams {
    pub fn new(
        mean_net: MlpParams,
        std_net: MlpParams,
        features: FeatureMap,
        log_std_min: f64,
        log_std_max: f64,
    ) -> Result<Self> {
        let (ms, ss) = (mean_net.spec(), std_net.spec());
        if ms.output_dim != ss.output_dim {
            return Err(shape("mean and std networks must share the action dimension"));
        }
        if ms.input_dim != features.output_dim() || ss.input_dim != features.output_dim() {
            return Err(shape("policy network inputs must match the feature map"));
        }
        if !(log_std_min < log_std_max) {
            return Err(argument("log_std_min must be below log_std_max"));
        }
        Ok(Self {
            mean_net,
            std_net,
            log_std_min,
            log_std_max,
            features,
        })
    }

    /// Both networks initialized `N(0, 1/m²)` from one seed.
    pub fn init(
        depth: usize,
        width: usize,
        features: FeatureMap,
        action_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let spec = MlpSpec::new(depth, width, features.output_dim(), action_dim)?;
        let mut rng = crate::seeded_rng(seed);
        let mean_net = MlpParams::init_with_rng(spec, &mut rng)?;
        let std_net = MlpParams::init_with_rng(spec, &mut rng)?;
        Self::new(mean_net, std_net, features, DEFAULT_LOG_STD_MIN, DEFAULT_LOG_STD_MAX)
    }

    pub fn action_dim(&self) -> usize {
        self.mean_net.spec().output_dim
    }

    pub fn state_dim(&self) -> usize {
        self.features.input_dim()
    }

    pub fn num_params(&self) -> usize {
        self.mean_net.num_params() + self.std_net.num_params()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.mean_net.flatten();
        out.extend(self.std_net.flatten());
        out
    }

    pub fn set_flat(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(shape(format!(
                "θ has length {}, policy has {} parameters",
                theta.len(),
                self.num_params()
            )));
        }
        let split = self.mean_net.num_params();
        self.mean_net.assign_flat(&theta[..split])?;
        self.std_net.assign_flat(&theta[split..])
    }

    pub fn mean_and_std(&self, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = self.features.apply(state)?;
        let mean = self.mean_net.evaluate(&x)?;
        let raw = self.std_net.evaluate(&x)?;
        let std = raw
            .iter()
            .map(|r| r.clamp(self.log_std_min, self.log_std_max).exp())
            .collect();
        Ok((mean.iter().copied().collect(), std))
    }

    /// `mean + std ⊙ z` with `z ~ N(0, I)`.
    pub fn sample_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let (mean, std) = self.mean_and_std(state)?;
        Ok(mean
            .iter()
            .zip(&std)
            .map(|(m, s)| {
                let z: f64 = rng.sample(StandardNormal);
                m + s * z
            })
            .collect())
    }

    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let (mean, std) = self.mean_and_std(state)?;
        self.check_action(action)?;
        Ok(gaussian_log_density(&mean, &std, action))
    }

    pub fn grad_log_prob(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        Ok(self.log_prob_and_grad(state, action)?.1)
    }

    /// `log π(a|s)` and its gradient with respect to the flat `θ`.
    pub fn log_prob_and_grad(&self, state: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_action(action)?;
        let x = self.features.apply(state)?;
        let (mean, mean_cache) = self.mean_net.forward(&x)?;
        let (raw, std_cache) = self.std_net.forward(&x)?;

        let n = action.len();
        let mut d_mean = vec![0.0; n];
        let mut d_raw = vec![0.0; n];
        let mut logp = 0.0;
        for j in 0..n {
            let clamped = raw[j].clamp(self.log_std_min, self.log_std_max);
            let std = clamped.exp();
            let u = (action[j] - mean[j]) / std;
            logp += -0.5 * (2.0 * PI).ln() - clamped - 0.5 * u * u;
            d_mean[j] = u / std;
            if raw[j] >= self.log_std_min && raw[j] <= self.log_std_max {
                d_raw[j] = u * u - 1.0;
            }
        }
        let mut grad = self.mean_net.backward(&mean_cache, &d_mean)?;
        grad.extend(self.std_net.backward(&std_cache, &d_raw)?);
        Ok((logp, grad))
    }

    fn check_action(&self, action: &[f64]) -> Result<()> {
        if action.len() != self.action_dim() {
            return Err(shape(format!(
                "action has dimension {}, policy emits {}",
                action.len(),
                self.action_dim()
            )));
        }
        Ok(())
    }

    /// Writes `<stem>.mean.mlp`, `<stem>.std.mlp` and `<stem>.policy.json`.
    pub fn save_checkpoint(&self, dir: &Path, stem: &str, domain: &ParamDomain) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_mlp(&self.mean_net, BufWriter::new(File::create(dir.join(format!("{stem}.mean.mlp")))?))?;
        write_mlp(&self.std_net, BufWriter::new(File::create(dir.join(format!("{stem}.std.mlp")))?))?;
        let header = CheckpointHeader {
            log_std_min: self.log_std_min,
            log_std_max: self.log_std_max,
            features: self.features.clone(),
            domain: domain.clone(),
        };
        serde_json::to_writer_pretty(
            BufWriter::new(File::create(dir.join(format!("{stem}.policy.json")))?),
            &header,
        )?;
        Ok(())
    }

    pub fn load_checkpoint(dir: &Path, stem: &str) -> Result<(Self, ParamDomain)> {
        let mean_net = read_mlp(BufReader::new(File::open(dir.join(format!("{stem}.mean.mlp")))?))?;
        let std_net = read_mlp(BufReader::new(File::open(dir.join(format!("{stem}.std.mlp")))?))?;
        let header: CheckpointHeader = serde_json::from_reader(BufReader::new(File::open(
            dir.join(format!("{stem}.policy.json")),
        )?))?;
        let policy = Self::new(
            mean_net,
            std_net,
            header.features,
            header.log_std_min,
            header.log_std_max,
        )?;
        if header.domain.dim() != policy.num_params() {
            return Err(shape("checkpoint domain does not match the policy size"));
        }
        Ok((policy, header.domain))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    log_std_min: f64,
    log_std_max: f64,
    features: FeatureMap,
    domain: ParamDomain,
}

pub fn gaussian_log_density(mean: &[f64], std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(std)
        .zip(action)
        .map(|((m, s), a)| {
            let u = (a - m) / s;
            -0.5 * (2.0 * PI).ln() - s.ln() - 0.5 * u * u
        })
        .sum()
}

/// Coordinate-wise box `Θ = [lower, upper]` for the policy parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(shape("box bounds differ in length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(argument("box requires lower <= upper in every coordinate"));
        }
        Ok(Self { lower, upper })
    }

    pub fn around(center: &[f64], half_width: f64) -> Result<Self> {
        if !(half_width >= 0.0) {
            return Err(argument("half width must be nonnegative"));
        }
        Self::new(
            center.iter().map(|c| c - half_width).collect(),
            center.iter().map(|c| c + half_width).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| l <= x && x <= u)
    }

    pub fn project(&self, theta: &mut [f64]) {
        for (x, (l, u)) in theta.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.clamp(*l, *u);
        }
    }

    /// Euclidean diameter of the box.
    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn policy(action_dim: usize, seed: u64) -> PolicyParams {
        let features = FeatureMap::uniform(3, 1.0, 0.0).unwrap();
        PolicyParams::init(3, 4, features, action_dim, seed).unwrap()
    }

    fn zeroed(action_dim: usize) -> PolicyParams {
        let mut p = policy(action_dim, 0);
        let n = p.num_params();
        p.set_flat(&vec![0.0; n]).unwrap();
        p
    }

    #[test]
    fn zero_networks_give_standard_normal() {
        let p = zeroed(2);
        let (mean, std) = p.mean_and_std(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(mean, vec![0.0, 0.0]);
        assert_eq!(std, vec![1.0, 1.0]);
        let lp0 = p.log_prob(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!((lp0 - 2.0 * -0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn standard_normal_log_density_values() {
        let lp0 = gaussian_log_density(&[0.0], &[1.0], &[0.0]);
        let lp1 = gaussian_log_density(&[0.0], &[1.0], &[1.0]);
        assert!((lp0 - -0.918_938_5).abs() < 1e-7);
        assert!((lp1 - -1.418_938_5).abs() < 1e-7);
    }

    #[test]
    fn std_clamps_at_ceiling_and_kills_gradient() {
        let mut p = zeroed(1);
        // make the std-net output large and positive at this state
        let n_mean = p.mean_net.num_params();
        let mut theta = p.flat();
        for v in theta[n_mean..].iter_mut() {
            *v = 1.0;
        }
        p.set_flat(&theta).unwrap();
        let s = [0.5, 0.5, 0.5];
        let (_, std) = p.mean_and_std(&s).unwrap();
        assert_eq!(std[0], DEFAULT_LOG_STD_MAX.exp());
        let g = p.grad_log_prob(&s, &[0.3]).unwrap();
        assert!(g[n_mean..].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn score_of_mean_block_vanishes_at_mode() {
        let p = policy(2, 5);
        let s = [0.2, -0.1, 0.4];
        let (mean, _) = p.mean_and_std(&s).unwrap();
        let g = p.grad_log_prob(&s, &mean).unwrap();
        assert!(g[..p.mean_net.num_params()].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn sampling_is_deterministic_and_respects_tiny_std() {
        let p = policy(2, 9);
        let s = [0.3, 0.3, 0.1];
        let a = p.sample_action(&s, &mut seeded_rng(4)).unwrap();
        let b = p.sample_action(&s, &mut seeded_rng(4)).unwrap();
        assert_eq!(a, b);

        let mut q = zeroed(1);
        q.log_std_max = DEFAULT_LOG_STD_MIN + 1e-9;
        let mut rng = seeded_rng(1);
        for _ in 0..100 {
            let a = q.sample_action(&s, &mut rng).unwrap();
            assert!(a[0].abs() < 6.0 * (DEFAULT_LOG_STD_MIN + 1e-9).exp());
        }
    }

    #[test]
    fn flat_view_round_trips() {
        let mut p = policy(2, 3);
        let theta: Vec<f64> = (0..p.num_params()).map(|i| i as f64 * 1e-3).collect();
        p.set_flat(&theta).unwrap();
        assert_eq!(p.flat(), theta);
        assert!(p.set_flat(&theta[1..]).is_err());
    }

    #[test]
    fn domain_box_basics() {
        let d = ParamDomain::around(&[0.0, 1.0], 0.5).unwrap();
        assert!(d.contains(&[0.5, 0.5]));
        assert!(!d.contains(&[0.6, 0.5]));
        let mut x = [2.0, -3.0];
        d.project(&mut x);
        assert_eq!(x, [0.5, 0.5]);
        assert!((d.diameter() - 2f64.sqrt()).abs() < 1e-15);
        assert!(ParamDomain::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = policy(2, 11);
        let d = ParamDomain::around(&p.flat(), 1.0).unwrap();
        p.save_checkpoint(dir.path(), "pi", &d).unwrap();
        let (q, e) = PolicyParams::load_checkpoint(dir.path(), "pi").unwrap();
        assert_eq!(p, q);
        assert_eq!(d, e);
    }
}
