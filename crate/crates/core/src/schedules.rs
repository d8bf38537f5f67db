//! Power-law step sizes and the exponent region under which the four
//! sequences satisfy the convergence conditions.
//!
//! The summability conditions are asymptotic and cannot be certified by a
//! finite computation. [`validate_region`] checks the exponent inequalities;
//! [`finite_horizon_report`] only looks at finite partial sums.

use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawSchedule {
    pub scale: f64,
    pub exponent: f64,
}

impl PowerLawSchedule {
    pub fn new(scale: f64, exponent: f64) -> Result<Self> {
        let s = Self { scale, exponent };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(scale: f64) -> Result<Self> {
        Self::new(scale, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::Config(format!("schedule scale must be positive, got {}", self.scale)));
        }
        if !(self.exponent >= 0.0) || !self.exponent.is_finite() {
            return Err(Error::Config(format!(
                "schedule exponent must be nonnegative, got {}",
                self.exponent
            )));
        }
        Ok(())
    }

    /// `scale · t^{−κ}` for `t ≥ 1`.
    pub fn value_at(&self, t: u64) -> Result<f64> {
        if t == 0 {
            return Err(argument("schedules are indexed from t = 1"));
        }
        if self.exponent == 0.0 {
            return Ok(self.scale);
        }
        Ok(self.scale * (t as f64).powf(-self.exponent))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSet {
    /// Recursive averaging of value and gradient estimates.
    pub alpha: PowerLawSchedule,
    /// Policy mixing step.
    pub beta: PowerLawSchedule,
    /// Critic TD step.
    pub eta: PowerLawSchedule,
    /// Critic iterate averaging.
    pub gamma: PowerLawSchedule,
}

impl ScheduleSet {
    pub fn validate(&self) -> Result<()> {
        for s in [&self.alpha, &self.beta, &self.eta, &self.gamma] {
            s.validate()?;
        }
        Ok(())
    }

    /// `(κ1, κ2, κ3, κ4)` for `(α, β, η, γ)`.
    pub fn exponents(&self) -> [f64; 4] {
        [
            self.alpha.exponent,
            self.beta.exponent,
            self.eta.exponent,
            self.gamma.exponent,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionViolation {
    /// `1 > 2κ2 − 1 > κ1 > 0.5`
    AlphaBetaOrdering,
    /// `min{0.5κ1 + 0.5κ2 + 0.5κ3 − 0.5, κ1 + κ3} > 0.6 > κ4 > 0`
    CriticAveraging,
    /// `κ1 + 0.5κ4 − 0.5κ3 > 1`
    TrackingBias,
    /// `κ1 + 0.5κ3 + 0.5κ4 > 1.3`
    CriticNoise,
}

impl RegionViolation {
    pub fn label(&self) -> &'static str {
        match self {
            Self::AlphaBetaOrdering => "1 > 2k2-1 > k1 > 0.5",
            Self::CriticAveraging => "min{0.5k1+0.5k2+0.5k3-0.5, k1+k3} > 0.6 > k4 > 0",
            Self::TrackingBias => "k1 + 0.5k4 - 0.5k3 > 1",
            Self::CriticNoise => "k1 + 0.5k3 + 0.5k4 > 1.3",
        }
    }
}

impl std::fmt::Display for RegionViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Inequality groups the exponents `(κ1, κ2, κ3, κ4)` fail; empty when all hold.
pub fn validate_region(kappas: [f64; 4]) -> Vec<RegionViolation> {
    let [k1, k2, k3, k4] = kappas;
    let mut out = Vec::new();
    if !(1.0 > 2.0 * k2 - 1.0 && 2.0 * k2 - 1.0 > k1 && k1 > 0.5) {
        out.push(RegionViolation::AlphaBetaOrdering);
    }
    let m = (0.5 * k1 + 0.5 * k2 + 0.5 * k3 - 0.5).min(k1 + k3);
    if !(m > 0.6 && 0.6 > k4 && k4 > 0.0) {
        out.push(RegionViolation::CriticAveraging);
    }
    if !(k1 + 0.5 * k4 - 0.5 * k3 > 1.0) {
        out.push(RegionViolation::TrackingBias);
    }
    if !(k1 + 0.5 * k3 + 0.5 * k4 > 1.3) {
        out.push(RegionViolation::CriticNoise);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteHorizonReport {
    pub horizon: u64,
    pub sum_alpha_sq: f64,
    pub sum_beta_sq: f64,
    pub sum_beta: f64,
    pub sum_eta: f64,
    pub sum_gamma: f64,
    /// All four sequences are non-increasing over `1..=horizon`.
    pub non_increasing: bool,
    /// `β_t/α_t` is non-increasing over the second half of the horizon.
    pub ratio_decreasing_tail: bool,
}

pub fn finite_horizon_report(set: &ScheduleSet, horizon: u64) -> Result<FiniteHorizonReport> {
    set.validate()?;
    if horizon < 2 {
        return Err(argument("horizon must be at least 2"));
    }
    let mut r = FiniteHorizonReport {
        horizon,
        sum_alpha_sq: 0.0,
        sum_beta_sq: 0.0,
        sum_beta: 0.0,
        sum_eta: 0.0,
        sum_gamma: 0.0,
        non_increasing: true,
        ratio_decreasing_tail: true,
    };
    let mut prev = [f64::INFINITY; 4];
    let mut prev_ratio = f64::INFINITY;
    for t in 1..=horizon {
        let v = [
            set.alpha.value_at(t)?,
            set.beta.value_at(t)?,
            set.eta.value_at(t)?,
            set.gamma.value_at(t)?,
        ];
        r.sum_alpha_sq += v[0] * v[0];
        r.sum_beta_sq += v[1] * v[1];
        r.sum_beta += v[1];
        r.sum_eta += v[2];
        r.sum_gamma += v[3];
        if v.iter().zip(&prev).any(|(a, b)| a > b) {
            r.non_increasing = false;
        }
        prev = v;
        let ratio = v[1] / v[0];
        if t > horizon / 2 && ratio > prev_ratio * (1.0 + 1e-12) {
            r.ratio_decreasing_tail = false;
        }
        prev_ratio = ratio;
    }
    Ok(r)
}
