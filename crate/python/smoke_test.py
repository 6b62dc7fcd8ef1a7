"""Smoke test for the medtransport extension module.

Build and install with `maturin develop --release` in crates/py, or copy the
compiled library to a directory on PYTHONPATH as medtransport.so.
"""

import math

import medtransport as mt


def main():
    data = mt.simulate(2000, 2000, seed=3)
    assert len(data) == 4000
    assert data.count(s=0) == 2000
    cols = data.columns()
    assert set(cols) == {"S", "A", "W", "R", "C", "Y"}

    masked = data.with_missingness("mnar", 0.3, target_group=0, seed=4)
    assert abs(masked.missing_fraction(s=0, w=0) - 0.3) < 0.01
    assert masked.missing_fraction(s=0, w=1) == 0.0

    effects = mt.estimate(data)
    for w in (0, 1):
        sie = effects[w]["sie"]
        assert sie["ci_low"] <= sie["point"] <= sie["ci_high"]
    assert effects[0]["sie"]["point"] > 0

    rebuilt = mt.Dataset(cols["S"], cols["A"], cols["W"], cols["R"], cols["C"], cols["Y"])
    again = mt.estimate(rebuilt)
    assert again[0]["sie"]["point"] == effects[0]["sie"]["point"]

    points, crossings = mt.sensitivity_curve(masked, [0.0, 0.5, 0.9], n_bootstrap=100, seed=1)
    assert len(points) == 6
    w0 = [p for p in points if p["group_w"] == 0]
    assert w0[0]["sie_lower"] == w0[0]["sie_upper"] == w0[0]["sie_point"]
    assert all(a["sie_lower"] >= b["sie_lower"] for a, b in zip(w0, w0[1:]))
    assert crossings[1] is None

    s = mt.sensitivity_set([1.0, 2.0, 3.0], 0.75)
    assert math.isclose(s["c_max"], 2.0)

    try:
        mt.sensitivity_set([1.0, 1.0], 0.5)
    except RuntimeError as e:
        assert "degenerate" in str(e)
    else:
        raise AssertionError("expected an error for constant weights")

    truth = mt.oracle(n_mc=200_000, seed=1)
    assert abs(truth[0]["sie"] - 0.1727) < 0.01
    print("smoke test passed:", mt.__version__, data)


if __name__ == "__main__":
    main()
