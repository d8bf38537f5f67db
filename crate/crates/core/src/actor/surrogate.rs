use crate::error::{argument, shape, Result};

/// `J̄(θ) = Ĵ + ĝᵀ(θ − θ_t) + ζ ‖θ − θ_t‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub j_hat: f64,
    pub g_hat: Vec<f64>,
    pub zeta: f64,
}

/// Surrogates for the objective (index 0) and every constraint, sharing the
/// anchor `θ_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateState {
    pub anchor: Vec<f64>,
    pub surrogates: Vec<Surrogate>,
}

impl SurrogateState {
    pub fn new(anchor: Vec<f64>, surrogates: Vec<Surrogate>) -> Result<Self> {
        if surrogates.is_empty() {
            return Err(argument("at least the objective surrogate is required"));
        }
        for (i, s) in surrogates.iter().enumerate() {
            if s.g_hat.len() != anchor.len() {
                return Err(shape(format!("surrogate {i} gradient has the wrong dimension")));
            }
            if !(s.zeta > 0.0) {
                return Err(argument(format!("surrogate {i} needs ζ > 0, got {}", s.zeta)));
            }
        }
        Ok(Self { anchor, surrogates })
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.surrogates.len() - 1
    }

    pub fn eval(&self, index: usize, theta: &[f64]) -> Result<f64> {
        let s = self
            .surrogates
            .get(index)
            .ok_or_else(|| argument(format!("surrogate index {index} out of range")))?;
        if theta.len() != self.dim() {
            return Err(shape("θ has the wrong dimension"));
        }
        let mut lin = 0.0;
        let mut sq = 0.0;
        for ((x, a), g) in theta.iter().zip(&self.anchor).zip(&s.g_hat) {
            let d = x - a;
            lin += g * d;
            sq += d * d;
        }
        Ok(s.j_hat + lin + s.zeta * sq)
    }

    /// Values of every surrogate at `anchor + step`, given the step directly.
    pub(crate) fn eval_all_at_step(&self, step: &[f64], out: &mut [f64]) {
        let sq: f64 = step.iter().map(|d| d * d).sum();
        for (o, s) in out.iter_mut().zip(&self.surrogates) {
            let lin: f64 = s.g_hat.iter().zip(step).map(|(g, d)| g * d).sum();
            *o = s.j_hat + lin + s.zeta * sq;
        }
    }
}
