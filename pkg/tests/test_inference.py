import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from separable.data import ALL_ARMS, ArmPair
from separable.estimators import EstimateReport
from separable.inference import (
    BootstrapConfig,
    BootstrapError,
    ContrastReport,
    bootstrap_ci,
    bootstrap_estimates,
    contrast_from_bootstrap,
    percentile_interval,
    resample_weights,
    separable_effect_contrast,
    table4_csv,
)
from separable.models import saturated_spec
from separable.simulation import rng_for, sample_trial


def _report(arm, curve, est="weighted_y"):
    return EstimateReport(ArmPair(*arm), est, np.asarray(curve, dtype=float))


def test_resample_weights_are_multiplicities():
    cfg = BootstrapConfig(10, seed=(3, 4))
    w = resample_weights(50, cfg, 7)
    assert w.sum() == 50 and np.all(w == np.round(w))
    assert np.array_equal(w, resample_weights(50, cfg, 7))
    assert not np.array_equal(w, resample_weights(50, cfg, 8))


def test_percentile_interval_type7_and_nan_rows():
    reps = np.arange(1.0, 11.0)[:, None]
    lo, hi = percentile_interval(reps, 0.8)
    assert lo[0] == pytest.approx(1.9) and hi[0] == pytest.approx(9.1)
    with_nan = np.vstack([reps, [[np.nan]]])
    assert percentile_interval(with_nan, 0.8)[0][0] == pytest.approx(1.9)


def test_constant_statistic_has_zero_width(dgp):
    ds = sample_trial(dgp, 100, 0)
    res = bootstrap_ci(ds, lambda d: 0.25, BootstrapConfig(50, seed=1))
    assert res.lower[0] == res.upper[0] == 0.25 and res.failures == 0


def test_gaussian_mean_interval_is_calibrated(dgp):
    ds = sample_trial(dgp, 80, 0)
    hits = 0
    experiments = 200
    for e in range(experiments):
        x = rng_for(500, e).normal(1.0, 2.0, ds.n)
        res = bootstrap_ci(ds, lambda d: np.average(x, weights=d.weights), BootstrapConfig(300, seed=(e,)))
        hits += res.lower[0] <= 1.0 <= res.upper[0]
    assert 0.89 <= hits / experiments <= 0.98


def test_failure_limit(dgp):
    ds = sample_trial(dgp, 60, 0)
    calls = {"n": 0}

    def flaky(d):
        calls["n"] += 1
        if calls["n"] > 1 and calls["n"] % 3 == 0:
            raise RuntimeError("boom")
        return 1.0

    with pytest.raises(BootstrapError, match="failed"):
        bootstrap_ci(ds, flaky, BootstrapConfig(30, seed=0))
    calls["n"] = 0
    res = bootstrap_ci(ds, flaky, BootstrapConfig(30, seed=0, max_failure_fraction=0.5))
    assert res.failures == 10 and len(res.errors) == 10


def test_contrast_arithmetic_with_reference_truths():
    a = _report((1, 1), [0.5, 0.72])
    b = _report((0, 1), [0.4, 0.62])
    c = separable_effect_contrast(a, b)
    assert c.kind == "Z_Y" and c.at == 1
    assert c.estimate == pytest.approx(0.10)


def test_identical_arms_give_zero():
    a = _report((1, 0), [0.3, 0.6])
    c = separable_effect_contrast(a, a, kind="Z_D")
    assert np.all(c.curve == 0)


@pytest.mark.parametrize(
    "arm_b, est, kind",
    [((0, 0), "weighted_y", None), ((0, 1), "one_step", None), ((0, 1), "weighted_y", "Z_D"), ((1, 1), "weighted_y", None)],
)
def test_mismatched_contrasts_rejected(arm_b, est, kind):
    a = _report((1, 1), [0.2, 0.4])
    b = _report(arm_b, [0.1, 0.3], est)
    with pytest.raises(ValueError):
        separable_effect_contrast(a, b, kind)


def test_contrast_interval_uses_paired_differences():
    a = _report((1, 1), [0.5])
    b = _report((0, 1), [0.4])
    base = np.linspace(0, 1, 101)[:, None]
    c = separable_effect_contrast(a, b, replicates_a=base + 0.1, replicates_b=base, level=0.9)
    assert c.lower[0] == pytest.approx(0.1) and c.upper[0] == pytest.approx(0.1)
    back = ContrastReport.from_dict(json.loads(c.to_json()))
    assert back.estimate == pytest.approx(c.estimate) and back.kind == "Z_Y"


def test_joint_bootstrap_is_deterministic_and_coherent(dgp, tmp_path):
    ds = sample_trial(dgp, 1000, (8,))
    cfg = BootstrapConfig(40, seed=3)
    one = bootstrap_estimates(ds, saturated_spec(), ALL_ARMS, ("plug_in", "weighted_y"), cfg)
    two = bootstrap_estimates(ds, saturated_spec(), ALL_ARMS, ("plug_in", "weighted_y"), cfg)
    for e in ("plug_in", "weighted_y"):
        for arm in ALL_ARMS:
            assert np.array_equal(one[e].replicates[arm], two[e].replicates[arm], equal_nan=True)
            rep = one[e].reports[arm]
            assert rep.lower is not None and rep.level == 0.95
    boot = one["weighted_y"]
    con = contrast_from_bootstrap(boot, "Z_Y", 1)
    diff = boot.replicates[ArmPair(1, 1)] - boot.replicates[ArmPair(0, 1)]
    assert np.allclose(con.lower, percentile_interval(diff, 0.95)[0])
    text = table4_csv(boot.reports, con, tmp_path / "t4.csv", header_comment="test")
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    assert lines[0] == "row,z_y,z_d,estimate,lower,upper"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["arm", "arm", "arm", "arm", "Causal effect"] or len(lines) == 6


@settings(max_examples=20, deadline=None)
@given(draws=st.integers(2, 60), level=st.floats(0.5, 0.99), seed=st.integers(0, 1000))
def test_intervals_are_ordered(dgp, draws, level, seed):
    ds = sample_trial(dgp, 50, 0)
    x = rng_for(seed).normal(size=ds.n)
    res = bootstrap_ci(ds, lambda d: np.average(x, weights=d.weights), BootstrapConfig(draws, level, seed))
    assert res.lower[0] <= res.upper[0]
