"""Smoke test for the mtekit_py extension.

Build and install first:
    pip install maturin
    maturin develop --release -m crates/python/Cargo.toml
then run:
    python python/smoke_test.py
"""

import math

import mtekit_py as mk


def main() -> None:
    assert "paper-like" in mk.preset_names()

    data, truth = mk.simulate("selection-on-gains", 4000, seed=3)
    assert len(data) == 4000
    assert set(truth) >= {"p_true", "v_true", "ate_x"}

    logit = mk.fit_logit(data)
    assert logit["converged"]
    assert all(0.0 < p < 1.0 for p in logit["propensity"])

    ols = mk.fit_ols(data)
    iv = mk.fit_2sls(data)
    assert ols["names"][1] == "s" and iv["names"][1] == "s"
    assert iv["first_stage_f"] > 10.0

    mte = mk.estimate_mte(data, replicates=50, seed=7)
    effects = mte["effects"]
    assert set(effects) == {"ate", "att", "atu", "prte", "mprte"}
    for name, e in effects.items():
        lo, hi = e["hpd"]
        assert lo <= hi, name

    # recompute the ATE from the returned curve
    curve = mte["curve"]
    again = mk.treatment_effects(
        curve["v_grid"],
        [m if s else math.nan for m, s in zip(curve["values"], curve["in_support"])],
        logit["propensity"],
    )
    assert abs(again["ate"] - effects["ate"]["estimate"]) < 1e-9

    x = mte["curve"]["eval_point"]
    true_at_half = mk.true_mte("selection-on-gains", x, 0.5)
    est_at_half = curve["values"][curve["v_grid"].index(0.5)]
    assert abs(true_at_half - est_at_half) < 0.2, (true_at_half, est_at_half)

    normal = mk.fit_normal_selection(data)
    assert any(p["name"] == "rho1" for p in normal["parameters"])

    lo, hi = mk.hpd_interval([float(i) for i in range(100)], 0.9)
    assert hi - lo == 89.0

    try:
        mk.Dataset.from_columns({"s": [0.0, 1.0]}, {"s": "bogus"})
    except ValueError:
        pass
    else:
        raise AssertionError("bad role accepted")

    print(f"ok: ATE {effects['ate']['estimate']:.4f}, curve at 0.5 {est_at_half:.4f} (true {true_at_half:.4f})")


if __name__ == "__main__":
    main()
