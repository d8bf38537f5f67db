"""Smoke test for the pysldac extension module.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml -o dist && pip install dist/pysldac-*.whl
"""

import json
import math
import os
import tempfile

import pysldac

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def check_network():
    net = pysldac.Mlp(3, 4, 2, 1, seed=0)
    flat = net.flatten()
    assert len(flat) == net.num_params() == 4 * 2 + 4 * 4 + 4
    y = net.evaluate([0.3, -0.4])
    grad = net.gradient([0.3, -0.4], [1.0])
    assert len(y) == 1 and len(grad) == len(flat)

    # directional finite difference
    h = 1e-6
    v = [math.sin(k + 1.0) for k in range(len(flat))]
    plus, minus = pysldac.Mlp(3, 4, 2, 1, 0), pysldac.Mlp(3, 4, 2, 1, 0)
    plus.assign_flat([w + h * d for w, d in zip(flat, v)])
    minus.assign_flat([w - h * d for w, d in zip(flat, v)])
    numeric = (plus.evaluate([0.3, -0.4])[0] - minus.evaluate([0.3, -0.4])[0]) / (2 * h)
    analytic = sum(g * d for g, d in zip(grad, v))
    assert abs(numeric - analytic) <= 1e-5 * max(abs(analytic), 1e-8), (numeric, analytic)

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "net.mlp")
        net.save(path)
        assert pysldac.Mlp.load(path).flatten() == flat


def check_policy():
    policy = pysldac.Policy(2, 8, 3, 2, seed=1)
    mean, std = policy.mean_and_std([0.1, 0.2, -0.3])
    assert len(mean) == len(std) == 2 and all(s > 0 for s in std)
    a = policy.sample([0.1, 0.2, -0.3], seed=7)
    assert a == policy.sample([0.1, 0.2, -0.3], seed=7)
    lp = policy.log_prob([0.1, 0.2, -0.3], a)
    assert math.isfinite(lp)
    assert len(policy.grad_log_prob([0.1, 0.2, -0.3], a)) == policy.num_params()


def check_solver():
    theta, lam, branch, y = pysldac.solve_subproblem(
        anchor=[0.0, 0.0], j_hat=[0.0], g_hat=[[2.0, 0.0]], zeta=[1.0],
        lower=[-0.5, -0.5], upper=[0.5, 0.5])
    assert branch == "objective" and abs(theta[0] + 0.5) < 1e-9 and abs(theta[1]) < 1e-9
    theta, lam, branch, y = pysldac.solve_subproblem(
        anchor=[0.0, 0.0], j_hat=[0.0, 1.0], g_hat=[[1.0, 1.0], [0.0, 0.0]], zeta=[1.0, 1.0],
        lower=[-1.0, -1.0], upper=[1.0, 1.0])
    assert branch == "feasibility" and abs(y - 1.0) < 1e-8


def check_oracle_and_schedules():
    j, q, stationary = pysldac.chain_oracle([0.5, 0.5, 0.5, 0.5])
    assert len(j) == 2 and abs(sum(stationary) - 1.0) < 1e-12
    assert pysldac.schedule_region_violations([0.9, 0.96, 0.36, 0.59]) == []
    assert pysldac.schedule_region_violations([0.6, 0.7, 0.0, 0.3])


def check_training():
    with open(os.path.join(ROOT, "configs", "lqr_reduced.json")) as f:
        cfg = json.load(f)
    cfg.update(iterations=100, seeds=[0], baseline_steps=100)
    text = json.dumps(cfg)
    trainer = pysldac.Trainer(text, 0)
    rows = [trainer.step() for _ in range(20)]
    assert [r["t"] for r in rows] == list(range(20))
    assert all(r["branch"] in ("objective", "feasibility") for r in rows)
    summary = json.loads(pysldac.run(text))
    assert summary["seeds"][0]["iterations"] == 100


if __name__ == "__main__":
    for check in (check_network, check_policy, check_solver, check_oracle_and_schedules, check_training):
        check()
        print(f"ok {check.__name__}")
