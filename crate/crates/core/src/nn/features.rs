use serde::{Deserialize, Serialize};

use crate::error::{argument, shape, Result};

/// Maps raw inputs into the closed unit ball before they reach a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    /// Coordinate-wise division by `scale`, optionally followed by a constant
    /// `bias` coordinate. The scaled part is shrunk radially to norm
    /// `√(1 − bias²)` when it falls outside, so the output norm never exceeds 1.
    Normalized { scale: Vec<f64>, bias: f64 },
    /// Tabular encoding for the chain oracle: the raw input is
    /// `one_hot(state) ‖ u` and the feature is `one_hot(2·state + [u > 0])`.
    ChainOneHot { n_states: usize },
}

impl FeatureMap {
    pub fn normalized(scale: Vec<f64>, bias: f64) -> Result<Self> {
        if scale.iter().any(|s| !(*s > 0.0)) {
            return Err(argument("feature scales must be positive"));
        }
        if !(0.0..1.0).contains(&bias) {
            return Err(argument(format!("bias feature must lie in [0, 1), got {bias}")));
        }
        Ok(Self::Normalized { scale, bias })
    }

    pub fn uniform(dim: usize, bound: f64, bias: f64) -> Result<Self> {
        Self::normalized(vec![bound; dim], bias)
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Self::Normalized { scale, .. } => scale.len(),
            Self::ChainOneHot { n_states } => n_states + 1,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Self::Normalized { scale, bias } => scale.len() + usize::from(*bias > 0.0),
            Self::ChainOneHot { n_states } => 2 * n_states,
        }
    }

    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.input_dim() {
            return Err(shape(format!(
                "feature map expects {} inputs, got {}",
                self.input_dim(),
                raw.len()
            )));
        }
        match self {
            Self::Normalized { scale, bias } => {
                let mut out: Vec<f64> = raw.iter().zip(scale).map(|(x, s)| x / s).collect();
                let limit = (1.0 - bias * bias).sqrt();
                let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > limit {
                    let k = limit / norm;
                    out.iter_mut().for_each(|x| *x *= k);
                }
                if *bias > 0.0 {
                    out.push(*bias);
                }
                Ok(out)
            }
            Self::ChainOneHot { n_states } => {
                let state = raw[..*n_states]
                    .iter()
                    .position(|x| *x > 0.5)
                    .ok_or_else(|| argument("chain state is not one-hot"))?;
                let action = usize::from(raw[*n_states] > 0.0);
                let mut out = vec![0.0; 2 * n_states];
                out[2 * state + action] = 1.0;
                Ok(out)
            }
        }
    }

    /// Applies the map to the concatenation `a ‖ b`.
    pub fn apply_pair(&self, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        let mut raw = Vec::with_capacity(a.len() + b.len());
        raw.extend_from_slice(a);
        raw.extend_from_slice(b);
        self.apply(&raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn chain_one_hot_uses_action_sign() {
        let map = FeatureMap::ChainOneHot { n_states: 3 };
        assert_eq!(map.apply(&[0.0, 1.0, 0.0, 0.7]).unwrap(), vec![0., 0., 0., 1., 0., 0.]);
        assert_eq!(map.apply(&[0.0, 1.0, 0.0, -0.7]).unwrap(), vec![0., 0., 1., 0., 0., 0.]);
        assert!(map.apply(&[0.0, 0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(FeatureMap::uniform(2, 0.0, 0.0).is_err());
        assert!(FeatureMap::uniform(2, 1.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn output_stays_in_unit_ball(
            raw in proptest::collection::vec(-1e3f64..1e3, 4),
            bias in 0.0f64..0.99,
            bound in 0.01f64..10.0,
        ) {
            let map = FeatureMap::uniform(4, bound, bias).unwrap();
            let out = map.apply(&raw).unwrap();
            let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(norm <= 1.0 + 1e-12);
            prop_assert_eq!(out.len(), map.output_dim());
        }
    }
}
