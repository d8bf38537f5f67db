//! Fully-connected ReLU networks with the √m output scaling
//!
//! `f(x) = √m · W_L σ(W_{L-1} ⋯ σ(W_1 x))`, no bias terms, σ(z) = max{z, 0}.
//! Parameters flatten to the concatenation of column-major `vec(W_l)`.

mod features;
mod io;

pub use features::FeatureMap;
pub use io::{read_mlp, write_mlp, MLP_HEADER_LEN};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{argument, shape, Error, Result};
use crate::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Number of weight matrices `L`.
    pub depth: usize,
    /// Hidden width `m`.
    pub width: usize,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl MlpSpec {
    pub fn new(depth: usize, width: usize, input_dim: usize, output_dim: usize) -> Result<Self> {
        let spec = Self {
            depth,
            width,
            input_dim,
            output_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(argument(format!("depth must be >= 2, got {}", self.depth)));
        }
        if self.width == 0 || self.input_dim == 0 || self.output_dim == 0 {
            return Err(argument("width and layer dimensions must be positive"));
        }
        Ok(())
    }

    /// `(rows, cols)` of each weight matrix in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|l| {
                let rows = if l + 1 == self.depth { self.output_dim } else { self.width };
                let cols = if l == 0 { self.input_dim } else { self.width };
                (rows, cols)
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c).sum()
    }

    pub fn output_scale(&self) -> f64 {
        (self.width as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    spec: MlpSpec,
    weights: Vec<DMatrix<f64>>,
}

/// Intermediate values of one forward pass, consumed by [`MlpParams::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: DVector<f64>,
    /// Pre-activations `z_l = W_l h_{l-1}` of the hidden layers.
    pub pre: Vec<DVector<f64>>,
    /// Post-activations `h_l = σ(z_l)` of the hidden layers.
    pub post: Vec<DVector<f64>>,
    pub output: DVector<f64>,
    fingerprint: u64,
}

impl MlpParams {
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let weights = spec
            .layer_shapes()
            .into_iter()
            .map(|(r, c)| DMatrix::zeros(r, c))
            .collect();
        Ok(Self { spec, weights })
    }

    /// Entries i.i.d. `N(0, 1/m²)`, deterministic in `seed`.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        Self::init_with_rng(spec, &mut seeded_rng(seed))
    }

    pub fn init_with_rng<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let normal = Normal::new(0.0, 1.0 / spec.width as f64).expect("positive std");
        let weights = spec
            .layer_shapes()
            .into_iter()
            .map(|(r, c)| DMatrix::from_fn(r, c, |_, _| normal.sample(rng)))
            .collect();
        Ok(Self { spec, weights })
    }

    pub fn from_weights(spec: MlpSpec, weights: Vec<DMatrix<f64>>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if weights.len() != shapes.len() {
            return Err(shape(format!(
                "expected {} weight matrices, got {}",
                shapes.len(),
                weights.len()
            )));
        }
        for (l, (w, (r, c))) in weights.iter().zip(&shapes).enumerate() {
            if w.shape() != (*r, *c) {
                return Err(shape(format!(
                    "layer {l}: expected {r}x{c}, got {}x{}",
                    w.nrows(),
                    w.ncols()
                )));
            }
        }
        Ok(Self { spec, weights })
    }

    pub fn from_flat(spec: MlpSpec, flat: &[f64]) -> Result<Self> {
        let mut params = Self::zeros(spec)?;
        params.assign_flat(flat)?;
        Ok(params)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.weights
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for w in &self.weights {
            out.extend_from_slice(w.as_slice());
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(shape(format!(
                "flat vector has length {}, network has {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for w in &mut self.weights {
            let n = w.len();
            w.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// `self += alpha * delta` on the flat view.
    pub fn axpy(&mut self, alpha: f64, delta: &[f64]) -> Result<()> {
        if delta.len() != self.num_params() {
            return Err(shape("axpy length mismatch"));
        }
        let mut offset = 0;
        for w in &mut self.weights {
            for (x, d) in w.as_mut_slice().iter_mut().zip(&delta[offset..]) {
                *x += alpha * d;
            }
            offset += w.len();
        }
        Ok(())
    }

    /// `self ← (1 − t)·self + t·other`, entry-wise.
    pub fn lerp_towards(&mut self, other: &MlpParams, t: f64) -> Result<()> {
        self.check_same_spec(other)?;
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in w.as_mut_slice().iter_mut().zip(o.as_slice()) {
                *x = (1.0 - t) * *x + t * y;
            }
        }
        Ok(())
    }

    pub fn layer_distances(&self, anchor: &MlpParams) -> Result<Vec<f64>> {
        self.check_same_spec(anchor)?;
        Ok(self
            .weights
            .iter()
            .zip(&anchor.weights)
            .map(|(w, a)| (w - a).norm())
            .collect())
    }

    /// Squared Euclidean distance of the flat views.
    pub fn sq_distance(&self, other: &MlpParams) -> Result<f64> {
        Ok(self.layer_distances(other)?.iter().map(|d| d * d).sum())
    }

    fn check_same_spec(&self, other: &MlpParams) -> Result<()> {
        if self.spec != other.spec {
            return Err(shape(format!(
                "network specs differ: {:?} vs {:?}",
                self.spec, other.spec
            )));
        }
        Ok(())
    }

    fn fingerprint(&self) -> u64 {
        // FNV-1a over the raw bits; only used to reject stale caches.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for w in &self.weights {
            for x in w.as_slice() {
                h ^= x.to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    fn check_input(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.spec.input_dim {
            return Err(shape(format!(
                "input has dimension {}, network expects {}",
                features.len(),
                self.spec.input_dim
            )));
        }
        Ok(())
    }

    /// Output only, without keeping intermediate values.
    pub fn evaluate(&self, features: &[f64]) -> Result<DVector<f64>> {
        self.check_input(features)?;
        let mut h = DVector::from_column_slice(features);
        let last = self.weights.len() - 1;
        for w in &self.weights[..last] {
            h = w * h;
            h.apply(|z| *z = z.max(0.0));
        }
        Ok(&self.weights[last] * h * self.spec.output_scale())
    }

    pub fn forward(&self, features: &[f64]) -> Result<(DVector<f64>, ForwardCache)> {
        self.check_input(features)?;
        let input = DVector::from_column_slice(features);
        let last = self.weights.len() - 1;
        let mut pre = Vec::with_capacity(last);
        let mut post = Vec::with_capacity(last);
        for (l, w) in self.weights[..last].iter().enumerate() {
            let z = if l == 0 { w * &input } else { w * &post[l - 1] };
            let h = z.map(|v| v.max(0.0));
            pre.push(z);
            post.push(h);
        }
        let output = &self.weights[last] * &post[last - 1] * self.spec.output_scale();
        let cache = ForwardCache {
            input,
            pre,
            post,
            output: output.clone(),
            fingerprint: self.fingerprint(),
        };
        Ok((output, cache))
    }

    /// Gradient of `upstreamᵀ · f(x)` with respect to the flat parameter vector.
    ///
    /// The ReLU derivative at exactly zero is taken as 0.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.spec.output_dim {
            return Err(shape(format!(
                "upstream has dimension {}, network output is {}",
                upstream.len(),
                self.spec.output_dim
            )));
        }
        if cache.fingerprint != self.fingerprint() || cache.pre.len() + 1 != self.weights.len() {
            return Err(Error::StaleCache);
        }
        let shapes = self.spec.layer_shapes();
        let offsets: Vec<usize> = shapes
            .iter()
            .scan(0, |acc, (r, c)| {
                let start = *acc;
                *acc += r * c;
                Some(start)
            })
            .collect();
        let mut grad = vec![0.0; self.num_params()];
        let scale = self.spec.output_scale();
        let last = self.weights.len() - 1;

        // delta holds ∂(upstreamᵀ f)/∂z for the layer whose weights are being visited.
        let mut delta = DVector::from_iterator(upstream.len(), upstream.iter().map(|u| u * scale));
        for l in (0..=last).rev() {
            let prev = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            let rows = shapes[l].0;
            let block = &mut grad[offsets[l]..offsets[l] + shapes[l].0 * shapes[l].1];
            for (j, hj) in prev.iter().enumerate() {
                if *hj == 0.0 {
                    continue;
                }
                let col = &mut block[j * rows..(j + 1) * rows];
                for (g, d) in col.iter_mut().zip(delta.iter()) {
                    *g = d * hj;
                }
            }
            if l > 0 {
                let mut next = self.weights[l].tr_mul(&delta);
                for (v, z) in next.iter_mut().zip(cache.pre[l - 1].iter()) {
                    if *z <= 0.0 {
                        *v = 0.0;
                    }
                }
                delta = next;
            }
        }
        Ok(grad)
    }

    /// Layer-wise Euclidean projection onto `{W : ‖W_l − A_l‖_F ≤ radius ∀l}`.
    pub fn project_per_layer_ball(&self, anchor: &MlpParams, radius: f64) -> Result<MlpParams> {
        let mut out = self.clone();
        out.project_in_place(anchor, radius)?;
        Ok(out)
    }

    pub fn project_in_place(&mut self, anchor: &MlpParams, radius: f64) -> Result<()> {
        if !(radius >= 0.0) {
            return Err(argument(format!("radius must be nonnegative, got {radius}")));
        }
        self.check_same_spec(anchor)?;
        // A projected layer can land an ulp outside the ball; the slack keeps
        // a second projection from moving it again.
        let limit = radius * (1.0 + 1e-12);
        for (w, a) in self.weights.iter_mut().zip(&anchor.weights) {
            let dist = (&*w - a).norm();
            if dist > limit {
                let shrink = radius / dist;
                for (x, y) in w.as_mut_slice().iter_mut().zip(a.as_slice()) {
                    *x = y + (*x - y) * shrink;
                }
            }
        }
        Ok(())
    }
}
