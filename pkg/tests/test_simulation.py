import copy

import numpy as np
import pytest

from separable.data import ALL_ARMS, validate_monotone
from separable.simulation import (
    DgpError,
    DgpSpec,
    Scenario,
    blood_pressure_trial_dgp,
    enumerate_observed,
    exact_truth,
    four_arm_risk,
    random_dgp,
    run_coverage_experiment,
    sample_trial,
)


def _within(p_hat, p, n, z=4.0):
    return abs(p_hat - p) <= z * np.sqrt(p * (1 - p) / n)


def test_sampler_marginal_frequencies(dgp):
    n = 100_000
    ds = sample_trial(dgp, n, (17,))
    c1 = ds.flag("c", 1)
    assert _within((c1 == 1).mean(), 1 / 50, n)
    uncens = c1 == 0
    assert _within((ds.flag("r", 1)[uncens] == 1).mean(), 0.8, int(uncens.sum()))
    assert _within(ds.z.mean(), 0.5, n)
    assert _within(ds.covariate("L", 0).mean(), 0.5, n)


def test_sampler_is_deterministic(dgp):
    a = sample_trial(dgp, 500, (1, 2))
    b = sample_trial(dgp, 500, (1, 2))
    c = sample_trial(dgp, 500, (1, 3))
    assert a.equals(b)
    assert not a.equals(c)


def test_four_arm_mode_keeps_both_components(dgp):
    ds = sample_trial(dgp, 2000, 5, mode="four-arm")
    zy, zd = ds.z_pair[:, 0], ds.z_pair[:, 1]
    assert np.array_equal(ds.z, zy)
    assert 0.3 < ((zy != zd).mean()) < 0.7
    with pytest.raises(ValueError):
        sample_trial(dgp, 10, 0, mode="three-arm")


def test_enumeration_is_a_probability_law(dgp):
    pop = enumerate_observed(dgp)
    assert abs(pop.weights.sum() - 1) < 1e-12
    assert np.all(pop.weights > 0)
    assert validate_monotone(pop) == []


def test_identified_risk_equals_four_arm_trial(dgp):
    for arm in ALL_ARMS:
        assert np.allclose(exact_truth(dgp, arm).values, four_arm_risk(dgp, arm).values, atol=1e-12)


def test_zero_outcome_hazard_gives_zero_risk(dgp):
    d = dgp.to_dict()
    d["laws"]["Y"] = "0"
    flat = DgpSpec.from_dict(d)
    for arm in ALL_ARMS:
        assert np.all(exact_truth(flat, arm).values == 0)
    assert np.all(sample_trial(flat, 500, 0).y[sample_trial(flat, 500, 0).y >= 0] == 0)


def test_json_round_trip(dgp):
    back = DgpSpec.from_json(dgp.to_json())
    assert back.fingerprint() == dgp.fingerprint()
    assert sample_trial(back, 200, 9).equals(sample_trial(dgp, 200, 9))


@pytest.mark.parametrize("expr", ["__import__('os')", "L.__class__", "open('x')", "[1, 2]", "1 +"])
def test_expression_sandbox(dgp, expr):
    d = copy.deepcopy(dgp.to_dict())
    d["laws"]["Y"] = expr
    with pytest.raises(DgpError):
        DgpSpec.from_dict(d)


def test_probability_out_of_range_is_reported(dgp):
    d = dgp.to_dict()
    d["laws"]["D"] = "1.5"
    with pytest.raises(DgpError):
        sample_trial(DgpSpec.from_dict(d), 10, 0)


def test_random_and_long_processes_sample_cleanly():
    for seed in range(3):
        g = random_dgp(K=2, seed=seed)
        assert validate_monotone(sample_trial(g, 400, seed)) == []
    bp = blood_pressure_trial_dgp(K=5)
    ds = sample_trial(bp, 300, 1)
    assert ds.K == 5 and validate_monotone(ds) == []
    assert np.all(np.isfinite(ds.covariate("logmap", 0)))


def test_scenario_validation(dgp):
    with pytest.raises(ValueError):
        Scenario(dgp, replications=0)
    with pytest.raises(ValueError):
        Scenario(dgp, estimators=("nope",))
    with pytest.raises(ValueError):
        Scenario(dgp, level=1.5)


def test_small_coverage_run_is_reproducible(dgp):
    sc = Scenario(dgp, "correct", ("plug_in", "weighted_y"), n=1000, replications=2, bootstraps=20, seed=5)
    a = run_coverage_experiment(sc)
    b = run_coverage_experiment(sc)
    for k in a.estimates:
        assert np.array_equal(a.estimates[k], b.estimates[k], equal_nan=True)
        assert not np.isnan(a.estimates[k]).any()
        assert np.array_equal(a.lower[k], b.lower[k], equal_nan=True)
    text = a.to_csv()
    assert text.startswith("# scenario=") and "plug_in" in text
    assert set(a.to_dict()["truth"]) == {arm.label() for arm in ALL_ARMS}
