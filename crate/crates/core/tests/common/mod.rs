//! Config builders shared by the integration tests.
#![allow(dead_code)]

use serde_json::{json, Value};

use sldac::envs::chain::{chain_exact_stats, exact_msbe, policy_table, value_table, ChainMdpConfig};
use sldac::critic::CriticView;
use sldac::harness::{ExperimentConfig, Trainer};

/// Frozen-policy chain run; `overrides` are merged over the defaults.
pub fn chain_config(chain: &ChainMdpConfig, overrides: Value) -> ExperimentConfig {
    let mut cfg = json!({
        "env": {"kind": "chain"},
        "policy": {"depth": 2, "width": 8},
        "critic": {"depth": 3, "width": 16},
        "schedules": {"alpha": {"scale": 1.0, "exponent": 0.9}, "beta": {"scale": 1.0, "exponent": 0.96},
                      "eta": {"scale": 0.1, "exponent": 0.0}, "gamma": {"scale": 1.0, "exponent": 0.59}},
        "zeta": [1.0],
        "window": {"kind": "fixed", "length": 1},
        "critic_a0": 10.0,
        "iterations": 1000,
        "seeds": [0],
        "frozen_policy": true,
        "baseline_steps": 0
    });
    let fields = serde_json::to_value(chain).unwrap();
    cfg["env"].as_object_mut().unwrap().extend(fields.as_object().unwrap().clone());
    merge(&mut cfg, overrides);
    serde_json::from_value(cfg).unwrap()
}

pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// Exact `J` of the trainer's current policy on `chain`.
pub fn exact_j(chain: &ChainMdpConfig, tr: &Trainer) -> Vec<f64> {
    chain_exact_stats(chain, &policy_table(&tr.policy, chain.n_states).unwrap())
        .unwrap()
        .j
}

/// Exact MSBE of every critic against the chain oracle, `(raw, averaged)`.
pub fn chain_msbe(chain: &ChainMdpConfig, tr: &Trainer) -> (Vec<f64>, Vec<f64>) {
    let p1 = policy_table(&tr.policy, chain.n_states).unwrap();
    let stats = chain_exact_stats(chain, &p1).unwrap();
    let mut raw = Vec::new();
    let mut avg = Vec::new();
    for (i, j) in stats.j.iter().enumerate() {
        let pair = tr.critics.pair(i).unwrap();
        for (view, out) in [(CriticView::Raw, &mut raw), (CriticView::Averaged, &mut avg)] {
            let v = value_table(pair.params(view), chain.n_states).unwrap();
            out.push(exact_msbe(chain, &p1, i, &v, *j).unwrap());
        }
    }
    (raw, avg)
}
