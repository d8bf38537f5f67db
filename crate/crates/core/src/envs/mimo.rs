//! Delay-constrained downlink MU-MIMO power control.
//!
//! State: queue lengths `Q_k` (bits) and the channel `H` (row `k` is `h_kᴴ`).
//! Action: per-user powers and the RZF regularization `α_Z`. The raw policy
//! output is mapped into the boxes by an affine sigmoid per coordinate; the
//! map does not depend on θ, so the score function is unchanged.
//!
//! Raw state layout: `[Q_1..Q_K, Re H (row-major), Im H (row-major)]`.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Environment, Transition};
use crate::error::{argument, shape, Error, Result};
use crate::nn::FeatureMap;
use crate::SimRng;

type C64 = Complex<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MimoConfig {
    pub n_tx: usize,
    pub n_users: usize,
    pub bandwidth_hz: f64,
    pub slot_s: f64,
    pub noise_density_dbm_hz: f64,
    pub arrival_min_bps: f64,
    pub arrival_max_bps: f64,
    pub n_paths: usize,
    pub angular_spread_deg: f64,
    pub gain_db_min: f64,
    pub gain_db_max: f64,
    /// Per-user delay bounds `c_k` in slots.
    pub delay_bounds: Vec<f64>,
    pub power_min_w: f64,
    pub power_max_w: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    #[serde(default = "default_bias")]
    pub feature_bias: f64,
}

fn default_bias() -> f64 {
    0.5
}

impl Default for MimoConfig {
    fn default() -> Self {
        Self {
            n_tx: 8,
            n_users: 4,
            bandwidth_hz: 10e6,
            slot_s: 1e-3,
            noise_density_dbm_hz: -100.0,
            arrival_min_bps: 0.0,
            arrival_max_bps: 20e6,
            n_paths: 4,
            angular_spread_deg: 5.0,
            gain_db_min: -10.0,
            gain_db_max: 10.0,
            delay_bounds: vec![4.0; 4],
            power_min_w: 0.0,
            power_max_w: 1.0,
            alpha_min: 1e-3,
            alpha_max: 1e2,
            feature_bias: default_bias(),
        }
    }
}

impl MimoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("MU-MIMO {what}")));
        if self.n_users == 0 || self.n_tx < self.n_users {
            return bad("needs 1 ≤ K ≤ N_t");
        }
        if self.n_paths == 0 {
            return bad("needs at least one path");
        }
        let positive = [self.bandwidth_hz, self.slot_s, self.arrival_max_bps, self.power_max_w, self.alpha_max];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return bad("physical quantities must be positive and finite");
        }
        if !self.noise_density_dbm_hz.is_finite() || !(self.angular_spread_deg >= 0.0) {
            return bad("noise density must be finite and angular spread nonnegative");
        }
        if !(0.0 <= self.arrival_min_bps && self.arrival_min_bps <= self.arrival_max_bps) {
            return bad("arrival bounds must satisfy 0 ≤ min ≤ max");
        }
        if !(self.gain_db_min <= self.gain_db_max) {
            return bad("gain range is empty");
        }
        if !(0.0 <= self.power_min_w && self.power_min_w < self.power_max_w) {
            return bad("power box must satisfy 0 ≤ min < max");
        }
        if !(0.0 <= self.alpha_min && self.alpha_min < self.alpha_max) {
            return bad("α_Z box must satisfy 0 ≤ min < max");
        }
        if self.delay_bounds.len() != self.n_users || self.delay_bounds.iter().any(|c| !(*c > 0.0)) {
            return bad("needs one positive delay bound per user");
        }
        if !(0.0..1.0).contains(&self.feature_bias) {
            return bad("feature_bias must lie in [0, 1)");
        }
        Ok(())
    }

    /// Noise power per user in W.
    pub fn noise_power(&self) -> f64 {
        10f64.powf((self.noise_density_dbm_hz - 30.0) / 10.0) * self.bandwidth_hz
    }

    /// Mean arrivals per slot in bits.
    pub fn mean_arrival_bits(&self) -> f64 {
        0.5 * (self.arrival_min_bps + self.arrival_max_bps) * self.slot_s
    }

    pub fn state_dim(&self) -> usize {
        self.n_users + 2 * self.n_users * self.n_tx
    }
}

/// Large-scale user geometry, drawn once per episode.
#[derive(Debug, Clone, PartialEq)]
pub struct UserGeometry {
    /// Mean angle of departure per user (rad).
    pub mean_aod: Vec<f64>,
    /// Linear path gain `g_k`.
    pub gain: Vec<f64>,
}

impl UserGeometry {
    pub fn sample<R: Rng + ?Sized>(cfg: &MimoConfig, rng: &mut R) -> Self {
        let mean_aod = (0..cfg.n_users).map(|_| rng.random_range(-PI / 3.0..PI / 3.0)).collect();
        let gain = (0..cfg.n_users)
            .map(|_| {
                let db = if cfg.gain_db_max > cfg.gain_db_min {
                    rng.random_range(cfg.gain_db_min..cfg.gain_db_max)
                } else {
                    cfg.gain_db_min
                };
                10f64.powf(db / 10.0)
            })
            .collect();
        Self { mean_aod, gain }
    }
}

/// ULA steering vector `[1, e^{jπ sin ψ}, …, e^{j(N_t−1)π sin ψ}]`.
pub fn steering_vector(n_tx: usize, psi: f64) -> Vec<C64> {
    let phase = PI * psi.sin();
    (0..n_tx).map(|n| C64::from_polar(1.0, phase * n as f64)).collect()
}

fn laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let e: f64 = Exp1.sample(rng);
    if rng.random::<bool>() {
        scale * e
    } else {
        -scale * e
    }
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Geometric channel `h_k = Σ_i ᾱ_{k,i} a(ψ_{k,i})`. AoD offsets are Laplacian
/// with standard deviation `σ_AS`, path powers exponential and normalized to
/// sum to `g_k`, path gains circularly-symmetric complex Gaussian. Returns the
/// `K × N_t` matrix whose row `k` is `h_kᴴ`.
pub fn sample_channel<R: Rng + ?Sized>(cfg: &MimoConfig, geometry: &UserGeometry, rng: &mut R) -> DMatrix<C64> {
    let b = cfg.angular_spread_deg.to_radians() / std::f64::consts::SQRT_2;
    let mut h = DMatrix::from_element(cfg.n_users, cfg.n_tx, C64::new(0.0, 0.0));
    for k in 0..cfg.n_users {
        let powers: Vec<f64> = (0..cfg.n_paths).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = powers.iter().sum();
        for p in &powers {
            let psi = geometry.mean_aod[k] + laplace(b, rng);
            let amp = complex_normal(rng) * (geometry.gain[k] * p / total).sqrt();
            for (n, a) in steering_vector(cfg.n_tx, psi).into_iter().enumerate() {
                h[(k, n)] += (amp * a).conj();
            }
        }
    }
    h
}

/// Normalized RZF beamformers: columns of `Hᴴ(HHᴴ + α_Z I)⁻¹`, each scaled to
/// unit norm. `h` is `K × N_t` with rows `h_kᴴ`; the result is `N_t × K`.
pub fn rzf_precode(h: &DMatrix<C64>, alpha_z: f64) -> Result<DMatrix<C64>> {
    let (k, n_tx) = h.shape();
    if k == 0 || n_tx < k {
        return Err(shape(format!("RZF needs 1 ≤ K ≤ N_t, got K = {k}, N_t = {n_tx}")));
    }
    if !(alpha_z >= 0.0) || !alpha_z.is_finite() {
        return Err(argument(format!("α_Z must be finite and nonnegative, got {alpha_z}")));
    }
    let hh = h.adjoint();
    let gram = h * &hh + DMatrix::<C64>::identity(k, k) * C64::new(alpha_z, 0.0);
    let scale = gram.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let lu = gram.lu();
    let inv = lu
        .try_inverse()
        .ok_or_else(|| Error::Numeric("regularized Gram matrix is singular".into()))?;
    let cond_proxy = inv.iter().map(|z| z.norm()).fold(0.0, f64::max) * scale;
    if !cond_proxy.is_finite() || cond_proxy > 1e14 {
        return Err(Error::Numeric("regularized Gram matrix is numerically singular".into()));
    }
    let mut v = hh * inv;
    for mut col in v.column_iter_mut() {
        let norm = col.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Numeric("RZF beamformer has zero norm".into()));
        }
        col.unscale_mut(norm);
    }
    Ok(v)
}

/// `|h_kᴴ v_j|²` for all `(k, j)`.
pub fn beam_gains(h: &DMatrix<C64>, v: &DMatrix<C64>) -> DMatrix<f64> {
    (h * v).map(|z| z.norm_sqr())
}

/// `R_k = B log₂(1 + P_k G_kk / (Σ_{j≠k} P_j G_kj + σ²))` in bit/s.
pub fn rates(gains: &DMatrix<f64>, powers: &[f64], noise_power: f64, bandwidth_hz: f64) -> Vec<f64> {
    (0..powers.len())
        .map(|k| {
            let interference: f64 = (0..powers.len())
                .filter(|j| *j != k)
                .map(|j| powers[j] * gains[(k, j)])
                .sum();
            let sinr = powers[k] * gains[(k, k)] / (interference + noise_power);
            bandwidth_hz * sinr.ln_1p() / std::f64::consts::LN_2
        })
        .collect()
}

/// `max{A t_0 − R t_0 + Q, 0}` with arrivals and service given in bits.
pub fn queue_update(queue: f64, arrival_bits: f64, served_bits: f64) -> f64 {
    (arrival_bits - served_bits + queue).max(0.0)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MimoAction {
    pub powers: Vec<f64>,
    pub alpha_z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MimoState {
    pub queues: Vec<f64>,
    pub channel: DMatrix<C64>,
}

impl MimoState {
    pub fn to_raw(&self) -> Vec<f64> {
        let mut out = self.queues.clone();
        let (k, n) = self.channel.shape();
        for part in [0, 1] {
            for r in 0..k {
                for c in 0..n {
                    let z = self.channel[(r, c)];
                    out.push(if part == 0 { z.re } else { z.im });
                }
            }
        }
        out
    }

    pub fn from_raw(cfg: &MimoConfig, raw: &[f64]) -> Result<Self> {
        let (k, n) = (cfg.n_users, cfg.n_tx);
        if raw.len() != cfg.state_dim() {
            return Err(shape(format!("MU-MIMO state has {} entries, expected {}", raw.len(), cfg.state_dim())));
        }
        let re = &raw[k..k + k * n];
        let im = &raw[k + k * n..];
        Ok(Self {
            queues: raw[..k].to_vec(),
            channel: DMatrix::from_fn(k, n, |r, c| C64::new(re[r * n + c], im[r * n + c])),
        })
    }
}

impl MimoConfig {
    /// Affine-sigmoid map from an unbounded policy output into the boxes.
    pub fn squash(&self, raw: &[f64]) -> Result<MimoAction> {
        if raw.len() != self.n_users + 1 {
            return Err(shape(format!("MU-MIMO action has {} entries, expected {}", raw.len(), self.n_users + 1)));
        }
        let powers = raw[..self.n_users]
            .iter()
            .map(|u| self.power_min_w + (self.power_max_w - self.power_min_w) * sigmoid(*u))
            .collect();
        let alpha_z = self.alpha_min + (self.alpha_max - self.alpha_min) * sigmoid(raw[self.n_users]);
        Ok(MimoAction { powers, alpha_z })
    }
}

/// One slot. Costs are `(Σ_k P_k, Q_k'/λ_k − c_k for each k)` with `λ_k` the
/// mean arrivals per slot, so the constraint is on the queueing delay in slots.
pub fn mimo_step<R: Rng + ?Sized>(
    cfg: &MimoConfig,
    geometry: &UserGeometry,
    state: &MimoState,
    action: &MimoAction,
    rng: &mut R,
) -> Result<(MimoState, Vec<f64>)> {
    let inside = action.powers.len() == cfg.n_users
        && action.powers.iter().all(|p| (cfg.power_min_w..=cfg.power_max_w).contains(p))
        && (cfg.alpha_min..=cfg.alpha_max).contains(&action.alpha_z);
    if !inside {
        return Err(Error::Numeric("MU-MIMO action lies outside its boxes".into()));
    }
    let v = rzf_precode(&state.channel, action.alpha_z)?;
    let gains = beam_gains(&state.channel, &v);
    let r = rates(&gains, &action.powers, cfg.noise_power(), cfg.bandwidth_hz);
    let lambda = cfg.mean_arrival_bits();
    let mut queues = Vec::with_capacity(cfg.n_users);
    for k in 0..cfg.n_users {
        let a = if cfg.arrival_max_bps > cfg.arrival_min_bps {
            rng.random_range(cfg.arrival_min_bps..cfg.arrival_max_bps)
        } else {
            cfg.arrival_min_bps
        };
        queues.push(queue_update(state.queues[k], a * cfg.slot_s, r[k] * cfg.slot_s));
    }
    let mut costs = vec![action.powers.iter().sum()];
    costs.extend(queues.iter().zip(&cfg.delay_bounds).map(|(q, c)| q / lambda - c));
    let channel = sample_channel(cfg, geometry, rng);
    Ok((MimoState { queues, channel }, costs))
}

#[derive(Debug, Clone)]
pub struct MimoEnv {
    pub cfg: MimoConfig,
    pub geometry: Option<UserGeometry>,
}

impl MimoEnv {
    pub fn new(cfg: MimoConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, geometry: None })
    }

    fn state_scale(&self) -> Vec<f64> {
        let k = self.cfg.n_users;
        let n_h = 2 * k * self.cfg.n_tx;
        let queue = 10.0 * self.cfg.mean_arrival_bits().max(1.0) * (k as f64).sqrt();
        let g_max = 10f64.powf(self.cfg.gain_db_max / 10.0);
        let chan = 3.0 * (g_max * n_h as f64).sqrt();
        let mut scale = vec![queue; k];
        scale.extend(std::iter::repeat_n(chan, n_h));
        scale
    }
}

impl Environment for MimoEnv {
    fn state_dim(&self) -> usize {
        self.cfg.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.cfg.n_users + 1
    }

    fn num_constraints(&self) -> usize {
        self.cfg.n_users
    }

    fn constraint_offsets(&self) -> Vec<f64> {
        self.cfg.delay_bounds.clone()
    }

    fn reset(&mut self, rng: &mut SimRng) -> Vec<f64> {
        let geometry = UserGeometry::sample(&self.cfg, rng);
        let channel = sample_channel(&self.cfg, &geometry, rng);
        self.geometry = Some(geometry);
        MimoState {
            queues: vec![0.0; self.cfg.n_users],
            channel,
        }
        .to_raw()
    }

    fn step(&mut self, state: &[f64], action: &[f64], rng: &mut SimRng) -> Result<Transition> {
        let geometry = self
            .geometry
            .as_ref()
            .ok_or_else(|| argument("MU-MIMO environment must be reset before stepping"))?;
        let st = MimoState::from_raw(&self.cfg, state)?;
        let act = self.cfg.squash(action)?;
        let (next, costs) = mimo_step(&self.cfg, geometry, &st, &act, rng)?;
        Ok(Transition {
            next_state: next.to_raw(),
            costs,
        })
    }

    fn state_features(&self) -> FeatureMap {
        FeatureMap::Normalized {
            scale: self.state_scale(),
            bias: self.cfg.feature_bias,
        }
    }

    fn critic_features(&self) -> FeatureMap {
        let mut scale = self.state_scale();
        scale.extend(std::iter::repeat_n(3.0 * ((self.cfg.n_users + 1) as f64).sqrt(), self.cfg.n_users + 1));
        FeatureMap::Normalized {
            scale,
            bias: self.cfg.feature_bias,
        }
    }
}
