//! Constrained linear-quadratic regulator.
//!
//! `s' = X s + Y a + ε` with `ε ~ N(0, noise_std² I)`. The objective stage
//! cost is `sᵀQ_0 s + aᵀR_0 a` and the single constraint stage cost is the
//! second quadratic form `sᵀQ_1 s + aᵀR_1 a` minus the level `c_1`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Environment, Transition};
use crate::error::{shape, Error, Result};
use crate::nn::FeatureMap;
use crate::{seeded_rng, SimRng};

/// Row-major nested-list (de)serialization for dense matrices.
mod rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, ser: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        ser.collect_seq(rows)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(de)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("matrix rows have unequal lengths"));
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrConfig {
    pub n_s: usize,
    pub n_a: usize,
    #[serde(with = "rows")]
    pub q0: DMatrix<f64>,
    #[serde(with = "rows")]
    pub r0: DMatrix<f64>,
    #[serde(with = "rows")]
    pub q1: DMatrix<f64>,
    #[serde(with = "rows")]
    pub r1: DMatrix<f64>,
    #[serde(with = "rows")]
    pub x: DMatrix<f64>,
    #[serde(with = "rows")]
    pub y: DMatrix<f64>,
    pub noise_std: f64,
    pub c1: f64,
    /// Standard deviation of the initial state.
    #[serde(default)]
    pub init_state_std: f64,
    /// Per-coordinate state scale used by the policy and critic feature maps.
    pub state_scale: Vec<f64>,
    pub action_scale: f64,
    #[serde(default)]
    pub feature_bias: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LqrPreset {
    /// `n_s = 4, n_a = 2`.
    Reduced,
    /// `n_s = 15, n_a = 4`.
    Full,
}

impl LqrPreset {
    pub fn build(&self, seed: u64) -> Result<LqrConfig> {
        match self {
            Self::Reduced => LqrConfig::random(4, 2, seed),
            Self::Full => LqrConfig::random(15, 4, seed),
        }
    }
}

fn is_symmetric_psd(m: &DMatrix<f64>) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return false;
    }
    m.clone().symmetric_eigenvalues().iter().all(|e| *e >= -1e-10 * scale)
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Stationary state covariance of `s' = X s + Y a + ε` under `a ~ N(0, σ_a² I)`,
/// by fixed-point iteration on the discrete Lyapunov equation.
pub fn open_loop_covariance(x: &DMatrix<f64>, y: &DMatrix<f64>, noise_std: f64, action_std: f64) -> Result<DMatrix<f64>> {
    if spectral_radius(x) >= 1.0 {
        return Err(Error::Numeric("open-loop dynamics are unstable".into()));
    }
    let n = x.nrows();
    let drive = y * y.transpose() * action_std.powi(2) + DMatrix::identity(n, n) * noise_std.powi(2);
    let mut sigma = drive.clone();
    for _ in 0..100_000 {
        let next = x * &sigma * x.transpose() + &drive;
        let diff = (&next - &sigma).amax();
        sigma = next;
        if diff <= 1e-14 * sigma.amax().max(1e-300) {
            return Ok(sigma);
        }
    }
    Err(Error::Numeric("Lyapunov iteration did not converge".into()))
}

impl LqrConfig {
    /// Random instance: Gaussian `X` rescaled to spectral radius 0.8, Gaussian
    /// `Y/√n_s`, `Q_0 = I`, `R_0 = I`, constraint on the first half of the
    /// state with a small action weight. `c_1` sits 25% above the constraint
    /// cost of the zero-mean unit-variance Gaussian policy, so that policy is
    /// feasible.
    pub fn random(n_s: usize, n_a: usize, seed: u64) -> Result<Self> {
        if n_s == 0 || n_a == 0 {
            return Err(Error::Config("LQR dimensions must be positive".into()));
        }
        let mut rng = seeded_rng(seed);
        let mut gauss = |r: usize, c: usize, k: f64| {
            DMatrix::from_fn(r, c, |_, _| k * rng.sample::<f64, _>(StandardNormal))
        };
        let mut x = gauss(n_s, n_s, 1.0);
        let rho = spectral_radius(&x);
        if rho > 0.0 {
            x *= 0.8 / rho;
        }
        let y = gauss(n_s, n_a, 1.0 / (n_s as f64).sqrt());
        let noise_std = 0.1;
        let q1 = DMatrix::from_fn(n_s, n_s, |i, j| if i == j && 2 * i < n_s { 1.0 } else { 0.0 });
        let r1 = DMatrix::identity(n_a, n_a) * 0.1;
        let sigma = open_loop_covariance(&x, &y, noise_std, 1.0)?;
        let j1 = (&q1 * &sigma).trace() + r1.trace();
        let state_scale = sigma.diagonal().iter().map(|v| 3.0 * v.sqrt() * (n_s as f64).sqrt()).collect();
        let cfg = Self {
            n_s,
            n_a,
            q0: DMatrix::identity(n_s, n_s),
            r0: DMatrix::identity(n_a, n_a),
            q1,
            r1,
            x,
            y,
            noise_std,
            c1: 1.25 * j1,
            init_state_std: 0.0,
            state_scale,
            action_scale: 3.0 * ((n_s + n_a) as f64).sqrt(),
            feature_bias: 0.5,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks shapes and PSD cost matrices. Returns the spectral radius of
    /// `X`; values ≥ 1 are logged as a warning since stability under the
    /// learned policy is the caller's responsibility.
    pub fn validate(&self) -> Result<f64> {
        let bad = |what: &str| Err(Error::Config(format!("LQR {what}")));
        if self.n_s == 0 || self.n_a == 0 {
            return bad("dimensions must be positive");
        }
        let dims = [
            ("Q_0", &self.q0, self.n_s, self.n_s),
            ("R_0", &self.r0, self.n_a, self.n_a),
            ("Q_1", &self.q1, self.n_s, self.n_s),
            ("R_1", &self.r1, self.n_a, self.n_a),
            ("X", &self.x, self.n_s, self.n_s),
            ("Y", &self.y, self.n_s, self.n_a),
        ];
        for (name, m, r, c) in dims {
            if m.shape() != (r, c) {
                return bad(&format!("{name} must be {r}x{c}, got {}x{}", m.nrows(), m.ncols()));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return bad(&format!("{name} has non-finite entries"));
            }
        }
        for (name, m) in [("Q_0", &self.q0), ("R_0", &self.r0), ("Q_1", &self.q1), ("R_1", &self.r1)] {
            if !is_symmetric_psd(m) {
                return bad(&format!("{name} must be symmetric positive semidefinite"));
            }
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return bad("noise_std must be finite and nonnegative");
        }
        if !self.c1.is_finite() || !(self.init_state_std >= 0.0) {
            return bad("c_1 must be finite and init_state_std nonnegative");
        }
        if self.state_scale.len() != self.n_s || self.state_scale.iter().any(|s| !(*s > 0.0)) {
            return bad("state_scale needs n_s positive entries");
        }
        if !(self.action_scale > 0.0) || !(0.0..1.0).contains(&self.feature_bias) {
            return bad("action_scale must be positive and feature_bias in [0, 1)");
        }
        let rho = spectral_radius(&self.x);
        if rho >= 1.0 {
            log::warn!("LQR open-loop spectral radius {rho:.3} is not below 1");
        }
        Ok(rho)
    }

    fn quad(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
        v.dot(&(m * v))
    }
}

/// One transition; `costs = (sᵀQ_0 s + aᵀR_0 a, sᵀQ_1 s + aᵀR_1 a − c_1)`.
pub fn lqr_step<R: Rng + ?Sized>(
    cfg: &LqrConfig,
    s: &[f64],
    a: &[f64],
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if s.len() != cfg.n_s || a.len() != cfg.n_a {
        return Err(shape(format!(
            "LQR step expects state {} and action {}, got {} and {}",
            cfg.n_s,
            cfg.n_a,
            s.len(),
            a.len()
        )));
    }
    let sv = DVector::from_column_slice(s);
    let av = DVector::from_column_slice(a);
    let c0 = LqrConfig::quad(&cfg.q0, &sv) + LqrConfig::quad(&cfg.r0, &av);
    let c1 = LqrConfig::quad(&cfg.q1, &sv) + LqrConfig::quad(&cfg.r1, &av) - cfg.c1;
    let mut next = &cfg.x * &sv + &cfg.y * &av;
    if cfg.noise_std > 0.0 {
        for v in next.iter_mut() {
            *v += cfg.noise_std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let costs = vec![c0, c1];
    if next.iter().chain(&costs).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("LQR state diverged".into()));
    }
    Ok((next.as_slice().to_vec(), costs))
}

#[derive(Debug, Clone)]
pub struct LqrEnv {
    pub cfg: LqrConfig,
}

impl LqrEnv {
    pub fn new(cfg: LqrConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }
}

impl Environment for LqrEnv {
    fn state_dim(&self) -> usize {
        self.cfg.n_s
    }

    fn action_dim(&self) -> usize {
        self.cfg.n_a
    }

    fn num_constraints(&self) -> usize {
        1
    }

    fn constraint_offsets(&self) -> Vec<f64> {
        vec![self.cfg.c1]
    }

    fn reset(&mut self, rng: &mut SimRng) -> Vec<f64> {
        (0..self.cfg.n_s)
            .map(|_| self.cfg.init_state_std * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn step(&mut self, state: &[f64], action: &[f64], rng: &mut SimRng) -> Result<Transition> {
        let (next_state, costs) = lqr_step(&self.cfg, state, action, rng)?;
        Ok(Transition { next_state, costs })
    }

    fn state_features(&self) -> FeatureMap {
        FeatureMap::Normalized {
            scale: self.cfg.state_scale.clone(),
            bias: self.cfg.feature_bias,
        }
    }

    fn critic_features(&self) -> FeatureMap {
        let mut scale = self.cfg.state_scale.clone();
        scale.extend(std::iter::repeat_n(self.cfg.action_scale, self.cfg.n_a));
        FeatureMap::Normalized {
            scale,
            bias: self.cfg.feature_bias,
        }
    }
}
