import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import all_flat_risks, two_period_tables
from separable.data import ALL_ARMS, ArmPair
from separable.estimators import (
    ESTIMATORS,
    EstimateReport,
    estimate,
    evaluate_g_formula,
    one_step_estimate,
    weight_trajectories,
)
from separable.models import PositivityError, fit_nuisance_set, saturated_spec
from separable.simulation import DgpLaws, DgpSpec, exact_truth, misspecified_spec, sample_trial


def test_all_estimators_exact_on_the_population(population):
    flat = all_flat_risks(two_period_tables())
    out = estimate(population, saturated_spec(), ALL_ARMS, ESTIMATORS)
    for (name, arm), rep in out.items():
        assert np.allclose(rep.curve, flat[tuple(arm)], atol=1e-12), (name, arm)


def test_population_double_robustness(population, dgp):
    """A coarse covariate law biases the g-formula and weighted-D but not weighted-Y or one-step."""
    out = estimate(population, misspecified_spec(saturated_spec()), ALL_ARMS, ESTIMATORS)
    for arm in ALL_ARMS:
        truth = exact_truth(dgp, arm).terminal
        assert abs(out[("weighted_y", arm)].terminal - truth) < 1e-12
        assert abs(out[("one_step", arm)].terminal - truth) < 1e-12
        assert abs(out[("plug_in", arm)].terminal - truth) > 1e-3


def test_one_step_correction_vanishes_with_true_laws(population, dgp):
    laws = DgpLaws(dgp)
    for arm in ALL_ARMS:
        rep = one_step_estimate(population, None, arm, laws=laws)
        assert np.max(np.abs(rep.diagnostics["correction"])) < 1e-12


def test_zero_outcome_hazard_gives_zero_curve(dgp):
    d = dgp.to_dict()
    d["laws"]["Y"] = "0"
    laws = DgpLaws(DgpSpec.from_dict(d))
    for arm in ALL_ARMS:
        assert np.all(evaluate_g_formula(laws, arm).values == 0)


def test_case_weights_match_replication(dgp):
    ds = sample_trial(dgp, 1500, 21)
    w = np.random.default_rng(0).integers(0, 3, ds.n).astype(float)
    idx = np.repeat(np.arange(ds.n), w.astype(int))
    expanded = ds.take(idx)
    a = estimate(ds.reweight(w), saturated_spec(), ALL_ARMS, ESTIMATORS)
    b = estimate(expanded, saturated_spec(), ALL_ARMS, ESTIMATORS)
    for k in a:
        assert np.allclose(a[k].curve, b[k].curve, atol=1e-12)


def test_ratio_weights_vanish_on_the_diagonal_arms(population, dgp):
    laws = DgpLaws(dgp)
    for z in (0, 1):
        for route in ("Y", "D"):
            wt = weight_trajectories(population, laws, ArmPair(z, z), route)
            assert np.all(wt.log_ratio == 0)
    off = weight_trajectories(population, laws, ArmPair(1, 0), "Y")
    assert np.any(off.log_ratio != 0)
    w = off.weights()
    assert np.all(w >= 0) and np.all(np.isfinite(w))


def test_report_json_round_trip(population):
    rep = estimate(population, saturated_spec(), [ArmPair(1, 1)], ["one_step"])[("one_step", ArmPair(1, 1))]
    back = EstimateReport.from_dict(json.loads(rep.to_json()))
    assert np.array_equal(back.curve, rep.curve) and back.arm == rep.arm
    bad = rep.to_dict()
    bad["terminal"] += 0.1
    with pytest.raises(ValueError):
        EstimateReport.from_dict(bad)


def test_unknown_estimator_rejected(population):
    with pytest.raises(ValueError):
        estimate(population, saturated_spec(), ALL_ARMS, ["magic"])


def test_empty_arm_raises_positivity(dgp):
    ds = sample_trial(dgp, 400, 2)
    only_z1 = ds.reweight((ds.z == 1).astype(float))
    with pytest.raises(PositivityError):
        estimate(only_z1, saturated_spec(), ALL_ARMS, ["weighted_y"])


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_curves_are_monotone_probabilities(dgp, seed):
    ds = sample_trial(dgp, 1500, (seed,))
    try:
        out = estimate(ds, saturated_spec(), ALL_ARMS, ("plug_in", "weighted_y", "weighted_d"))
    except PositivityError:
        return
    for rep in out.values():
        c = rep.curve
        assert np.all((c >= -1e-12) & (c <= 1 + 1e-12))
        if rep.estimator == "plug_in":
            assert np.all(np.diff(c) >= -1e-12)
