"""Smoke test for the eoslab extension module.

Build and expose the module first:

    cargo build --release -p eos-lab-py
    cp target/release/libeoslab.so python/eoslab.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.environ.get("EOSLAB_MODULE_DIR") or os.path.dirname(os.path.abspath(__file__)))

import eoslab  # noqa: E402


def close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    net = eoslab.DiagNet([1.0, 2.0], 2.0)
    l1 = net.l1_minimizer_set()
    sharp = net.sharpness_minimizer_set()
    assert l1["support"] == [1] and close(l1["radius_sq"], 1.0, 1e-12), l1
    assert sharp["support"] == [0] and close(sharp["objective_value"], 8.0, 1e-12), sharp
    assert close(net.sharpness([0.0, 1.0]), 16.0, 1e-12)

    gd = net.gd([0.01, 0.01], eta=0.05)
    assert gd["outcome"] == "Converged", gd["outcome"]
    w = gd["final_theta"]
    assert abs(w[0]) < 0.15 and close(w[1], 1.0, 0.01), w
    assert len(gd["path"]) == len(gd["loss"])

    s0, s_gf, eta_c, records = net.sweep([0.01, 0.01])
    assert close(s_gf, 16.0, 0.02), s_gf
    assert eta_c is not None and close(eta_c, 2.0 / s_gf, 0.2), eta_c
    assert {r["regime"] for r in records} >= {"FlowAligned", "EoS", "Diverged"}

    mlp = eoslab.Mlp([2, 8, 1])
    theta = mlp.init(1)
    assert len(theta) == mlp.param_count == 33
    loss, grad = mlp.loss_and_grad(theta)
    assert math.isfinite(loss) and len(grad) == len(theta)
    assert mlp.sharpness(theta) > 0.0

    z, b, value = eoslab.logit_min_sharpness(d=3, seed=0)
    assert close(z, 1.0, 0.01) and abs(b) <= 0.01 and close(value, 0.2773, 1e-3)
    assert close(eoslab.logit_sharpness(1.0, 0.0), value, 1e-6)

    assert eoslab.population_risk([1.0] * 5) == 0.0
    est, se = eoslab.expected_risk("l1", d=5, n=2000, seed=0)
    assert est > 0.0 and se > 0.0

    try:
        eoslab.DiagNet([1.0, 0.0], 1.0).l1_minimizer_set()
    except ValueError:
        pass
    else:
        raise AssertionError("zero feature accepted")

    with tempfile.TemporaryDirectory() as out:
        code = eoslab.cli(["risk", "--samples", "1000", "--out", out])
        assert code == 0 and os.path.exists(os.path.join(out, "risk.csv"))
        assert eoslab.cli(["gd", "--out", os.path.join(out, "x")]) == 2

    print(f"eoslab {eoslab.__version__}: smoke test passed")


if __name__ == "__main__":
    main()
