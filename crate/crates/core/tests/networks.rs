use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

use sldac::diagnostics::grad_check;
use sldac::nn::{read_mlp, write_mlp, FeatureMap, MlpParams, MlpSpec};
use sldac::policy::PolicyParams;
use sldac::seeded_rng;

/// Plain loops over the weight entries, no matrix library.
fn straight_line_forward(weights: &[DMatrix<f64>], width: usize, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (l, w) in weights.iter().enumerate() {
        let last = l + 1 == weights.len();
        let mut next = vec![0.0; w.nrows()];
        for (r, out) in next.iter_mut().enumerate() {
            let mut z = 0.0;
            for (c, hc) in h.iter().enumerate() {
                z += w[(r, c)] * hc;
            }
            *out = if last { (width as f64).sqrt() * z } else { z.max(0.0) };
        }
        h = next;
    }
    h
}

#[test]
fn forward_matches_an_independent_evaluation() {
    let mut rng = seeded_rng(11);
    for seed in 0..20 {
        let spec = MlpSpec::new(3, 4, 3, 2).unwrap();
        let params = MlpParams::init(spec, seed).unwrap();
        let mut flat = params.flatten();
        flat.iter_mut().for_each(|w| *w *= 8.0);
        let params = MlpParams::from_flat(spec, &flat).unwrap();
        let mut x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= n.max(1.0));
        let expect = straight_line_forward(params.weights(), 4, &x);
        let (got, _) = params.forward(&x).unwrap();
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() <= 1e-14 * e.abs().max(1.0), "{g} vs {e}");
        }
    }
}

#[test]
fn unit_width_init_has_unit_variance() {
    let spec = MlpSpec::new(2, 1, 1, 1).unwrap();
    let mut values = Vec::new();
    for seed in 0..50_000 {
        values.extend(MlpParams::init(spec, seed).unwrap().flatten());
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    assert!((var - 1.0).abs() < 0.02, "{var}");
}

#[test]
fn gradient_suites_pass() {
    for r in grad_check(20, 3).unwrap() {
        assert!(r.passed, "{r}");
        assert_eq!(r.instances, 20);
    }
}

#[test]
fn mlp_file_layout() {
    let spec = MlpSpec::new(2, 3, 2, 1).unwrap();
    let params = MlpParams::init(spec, 5).unwrap();
    let mut bytes = Vec::new();
    write_mlp(&params, &mut bytes).unwrap();
    assert_eq!(bytes.len(), 16 + 8 * params.num_params());
    let header: Vec<u32> = bytes[..16]
        .chunks(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    assert_eq!(header, [2, 3, 2, 1]);
    let first = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    assert_eq!(first, params.flatten()[0]);
}

fn zero_std_policy(state_dim: usize, seed: u64) -> PolicyParams {
    let features = FeatureMap::uniform(state_dim, 1.0, 0.0).unwrap();
    let mut p = PolicyParams::init(2, 6, features, 2, seed).unwrap();
    let n_mean = p.mean_net.num_params();
    let mut flat = p.flat();
    flat[..n_mean].iter_mut().for_each(|w| *w = 0.0);
    flat[n_mean..].iter_mut().for_each(|w| *w = 0.0);
    p.set_flat(&flat).unwrap();
    p
}

#[test]
fn sampled_actions_have_standard_moments() {
    let policy = zero_std_policy(2, 0);
    let mut rng = seeded_rng(42);
    let n = 100_000;
    let mut sum = [0.0; 2];
    let mut sq = [0.0; 2];
    for _ in 0..n {
        let a = policy.sample_action(&[0.3, -0.2], &mut rng).unwrap();
        for k in 0..2 {
            sum[k] += a[k];
            sq[k] += a[k] * a[k];
        }
    }
    for k in 0..2 {
        let mean = sum[k] / n as f64;
        let var = sq[k] / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }
}

#[test]
fn density_integrates_to_one() {
    for seed in 0..5 {
        let features = FeatureMap::uniform(3, 1.0, 0.5).unwrap();
        let policy = PolicyParams::init(2, 5, features, 1, seed).unwrap();
        let s = [0.4, -0.1, 0.7];
        let (mean, std) = policy.mean_and_std(&s).unwrap();
        let (lo, hi) = (mean[0] - 12.0 * std[0], mean[0] + 12.0 * std[0]);
        let k = 20_000;
        let h = (hi - lo) / k as f64;
        // composite Simpson
        let mut total = 0.0;
        for i in 0..=k {
            let w = if i == 0 || i == k { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            total += w * policy.log_prob(&s, &[lo + h * i as f64]).unwrap().exp();
        }
        total *= h / 3.0;
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_lands_in_every_ball_and_is_idempotent(seed in any::<u64>(), radius in 0.01f64..2.0, scale in 0.1f64..50.0) {
        let spec = MlpSpec::new(3, 5, 2, 1).unwrap();
        let anchor = MlpParams::init(spec, seed).unwrap();
        let mut flat = MlpParams::init(spec, seed ^ 1).unwrap().flatten();
        flat.iter_mut().for_each(|w| *w *= scale);
        let params = MlpParams::from_flat(spec, &flat).unwrap();
        let once = params.project_per_layer_ball(&anchor, radius).unwrap();
        for d in once.layer_distances(&anchor).unwrap() {
            prop_assert!(d <= radius * (1.0 + 1e-12));
        }
        let twice = once.project_per_layer_ball(&anchor, radius).unwrap();
        prop_assert_eq!(once.flatten(), twice.flatten());
    }

    #[test]
    fn mlp_files_round_trip(depth in 2usize..5, width in 1usize..9, d_in in 1usize..5, d_out in 1usize..4, seed in any::<u64>()) {
        let spec = MlpSpec::new(depth, width, d_in, d_out).unwrap();
        let params = MlpParams::init(spec, seed).unwrap();
        let mut bytes = Vec::new();
        write_mlp(&params, &mut bytes).unwrap();
        let back = read_mlp(bytes.as_slice()).unwrap();
        prop_assert_eq!(back, params);
    }

    #[test]
    fn backward_is_linear_in_the_upstream(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let spec = MlpSpec::new(3, 4, 2, 2).unwrap();
        let params = MlpParams::init(spec, seed).unwrap();
        let (_, cache) = params.forward(&[0.6, -0.3]).unwrap();
        let gu = params.backward(&cache, &[1.0, 0.0]).unwrap();
        let gv = params.backward(&cache, &[0.0, 1.0]).unwrap();
        let gc = params.backward(&cache, &[a, b]).unwrap();
        for ((u, v), c) in gu.iter().zip(&gv).zip(&gc) {
            prop_assert!((a * u + b * v - c).abs() <= 1e-12 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn features_stay_in_the_unit_ball(raw in prop::collection::vec(-1e3f64..1e3, 1..6), bias in 0.0f64..0.99) {
        let map = FeatureMap::uniform(raw.len(), 2.0, bias).unwrap();
        let x = map.apply(&raw).unwrap();
        prop_assert!(x.iter().map(|v| v * v).sum::<f64>() <= 1.0 + 1e-12);
    }

    #[test]
    fn policy_std_respects_the_clamp(seed in any::<u64>(), scale in 0.1f64..200.0, s in prop::collection::vec(-1.0f64..1.0, 3)) {
        let features = FeatureMap::uniform(3, 1.0, 0.3).unwrap();
        let mut policy = PolicyParams::init(2, 4, features, 2, seed).unwrap();
        let flat: Vec<f64> = policy.flat().iter().map(|w| w * scale).collect();
        policy.set_flat(&flat).unwrap();
        let (_, std) = policy.mean_and_std(&s).unwrap();
        for sd in std {
            prop_assert!(sd >= policy.log_std_min.exp() * (1.0 - 1e-12));
            prop_assert!(sd <= policy.log_std_max.exp() * (1.0 + 1e-12));
        }
    }
}
