"""Primary acceptance criteria, one test each.

A summary line per criterion (PASS/FAIL) is printed at the end of the pytest
run by ``conftest.py``. Run this file alone with::

    pytest tests/test_acceptance.py -v

The two coverage studies dominate the runtime (roughly 10 and 25 minutes on
one core).
"""

from __future__ import annotations

import csv
import io
import time

import numpy as np
import pytest

from oracles import all_flat_risks, random_k1_tables, tables_to_dgp, two_period_tables
from separable.cli import emit_curves, read_curves
from separable.data import ALL_ARMS, ArmPair, ingest_csv, validate_monotone, write_csv
from separable.estimators import (
    ESTIMATORS,
    build_workspace,
    estimate,
    evaluate_g_formula,
    influence_contribution,
    one_step_estimate,
    weighted_d_estimate,
    weighted_y_estimate,
)
from separable.graph import (
    Dag,
    check_dcc,
    check_partial_isolation,
    convert_to_strategy_centered,
    random_strategy_centered_dag,
    random_treatment_centered_dag,
    treatment_centered_dcc,
)
from separable.inference import BootstrapConfig, bootstrap_estimates, contrast_from_bootstrap, table4_csv
from separable.models import fit_nuisance_set, saturated_spec
from separable.simulation import (
    DgpLaws,
    Scenario,
    blood_pressure_model_spec,
    blood_pressure_trial_dgp,
    enumerate_observed,
    exact_truth,
    run_coverage_experiment,
    sample_trial,
    two_period_dag,
    two_period_dgp,
)

REFERENCE_TRUTH = {(1, 1): 0.72, (1, 0): 0.74, (0, 1): 0.62, (0, 0): 0.66}


@pytest.mark.acceptance("Exact truth for the two-period process: 0.72/0.74/0.62/0.66 within 0.005, under 1 s")
def test_truth_reproduction():
    dgp = two_period_dgp()
    start = time.perf_counter()
    truth = {a: exact_truth(dgp, a).terminal for a in ALL_ARMS}
    elapsed = time.perf_counter() - start
    print({a.label(): round(v, 8) for a, v in truth.items()}, f"{elapsed:.3f}s")
    for arm, expected in REFERENCE_TRUTH.items():
        assert abs(truth[ArmPair(*arm)] - expected) <= 0.005
    # independent flat sum over the same tables
    flat = all_flat_risks(two_period_tables())
    for arm in ALL_ARMS:
        assert abs(truth[arm] - flat[tuple(arm)][1]) < 1e-12
    assert elapsed < 1.0


@pytest.mark.acceptance("Estimator identity on 20 random K=1 laws (flat sum, g-formula, weighted-Y, weighted-D, one-step) within 1e-10")
def test_estimator_identity_random_laws():
    worst = 0.0
    for seed in range(20):
        tab = random_k1_tables(seed)
        dgp = tables_to_dgp(tab)
        laws = DgpLaws(dgp)
        pop = enumerate_observed(dgp)
        for (zy, zd), flat in all_flat_risks(tab).items():
            arm = ArmPair(zy, zd)
            os_rep = one_step_estimate(pop, None, arm, laws=laws)
            routes = {
                "g_formula": evaluate_g_formula(laws, arm).values,
                "weighted_y": weighted_y_estimate(pop, None, arm, laws=laws).curve,
                "weighted_d": weighted_d_estimate(pop, None, arm, laws=laws).curve,
                "one_step": os_rep.curve,
            }
            assert np.max(np.abs(os_rep.diagnostics["correction"])) < 1e-10
            for name, curve in routes.items():
                err = float(np.max(np.abs(np.asarray(curve) - np.asarray(flat))))
                worst = max(worst, err)
                assert err < 1e-10, (seed, arm, name, err)
    print(f"largest disagreement {worst:.2e}")


@pytest.mark.slow
@pytest.mark.acceptance("Coverage with correct models: n=1000, 200 replications x 200 bootstraps, every cell in [0.91, 0.99]")
def test_coverage_correct_models():
    sc = Scenario(two_period_dgp(), "correct", ("plug_in", "weighted_y", "one_step"), n=1000, replications=200, bootstraps=200, seed=2024)
    table = run_coverage_experiment(sc)
    print()
    print(table.to_csv())
    for e in sc.estimators:
        assert table.failures[e] == 0
        for arm in sc.arms:
            assert 0.91 <= table.coverage(e, arm) <= 0.99, (e, arm.label(), table.coverage(e, arm))


@pytest.mark.slow
@pytest.mark.acceptance("Double robustness with a coarse L_1 law at n=5000: plug-in coverage <= 0.40, one-step >= 0.90, weighted-Y unchanged")
def test_double_robustness_misspecified():
    dgp = two_period_dgp()
    mis = Scenario(dgp, "misspecified", ("plug_in", "weighted_y", "one_step"), n=5000, replications=200, bootstraps=200, seed=7)
    table = run_coverage_experiment(mis)
    print()
    print(table.to_csv())
    print({f"{e}:{a.label()}": round(table.bias(e, a), 5) for e in mis.estimators for a in mis.arms})

    # weighted-Y never touches the L law: same seeds, correct spec, same numbers
    n_check = 25
    cor = Scenario(dgp, "correct", ("weighted_y",), n=5000, replications=n_check, bootstraps=200, seed=7)
    ref = run_coverage_experiment(cor)
    for arm in mis.arms:
        k = ("weighted_y", arm)
        for store_a, store_b in ((table.estimates, ref.estimates), (table.lower, ref.lower), (table.upper, ref.upper)):
            assert np.array_equal(store_a[k][:n_check], store_b[k])

    one_step = {a.label(): table.coverage("one_step", a) for a in mis.arms}
    plug_in = {a.label(): table.coverage("plug_in", a) for a in mis.arms}
    print("one-step coverage", one_step)
    print("plug-in coverage", plug_in)
    assert all(v >= 0.90 for v in one_step.values())
    assert all(v <= 0.40 for v in plug_in.values()), plug_in


@pytest.mark.acceptance("Influence function mean zero: exact enumeration <= 1e-10, Monte Carlo n=200000 within 4 SE")
def test_influence_function_mean_zero():
    dgp = two_period_dgp()
    pop = enumerate_observed(dgp)
    fitted = fit_nuisance_set(pop, saturated_spec(), "one_step")
    w = pop.weights / pop.weights.sum()
    for arm in ALL_ARMS:
        nu = influence_contribution(pop, build_workspace(fitted, arm))
        assert abs(float(w @ nu)) <= 1e-10

    sample = sample_trial(dgp, 200_000, (99,))
    truth = DgpLaws(dgp)
    for arm in ALL_ARMS:
        nu = influence_contribution(sample, build_workspace(truth, arm))
        mean, se = nu.mean(), nu.std(ddof=1) / np.sqrt(nu.size)
        print(arm.label(), f"mean={mean:.2e} se={se:.2e}")
        assert abs(mean) <= 4 * se


@pytest.mark.acceptance("Graph suite: two-interval conversion example, encoding-equivalent conditions on 50 DAGs, reference DAG passes, isolation implication on 50 DAGs")
def test_graph_suite():
    fig_a = Dag.from_edges([("A_Y_1", "A_Y_2"), ("A_D_1", "A_D_2"), ("A_Y_2", "Y_2"), ("A_D_2", "D_2"), ("D_2", "Y_2")], K=1)
    fig_b = convert_to_strategy_centered(fig_a)
    expected = {
        ("Z_Y", "R_1"), ("Z_Y", "R_2"), ("Z_Y", "Y_2"), ("Z_D", "R_1"), ("Z_D", "R_2"), ("Z_D", "D_2"),
        ("R_1", "R_2"), ("R_2", "Y_2"), ("R_2", "D_2"), ("D_2", "Y_2"),
    }
    assert {(str(a), str(b)) for a, b in fig_b.edges} == expected

    for seed in range(50):
        g = random_treatment_centered_dag(1 + seed % 2, seed, p=0.3)
        tc = dict(treatment_centered_dcc(g))
        sc = {(e.k, e.condition): e.passed for e in check_dcc(convert_to_strategy_centered(g)).entries}
        assert tc == sc, seed

    assert check_dcc(two_period_dag(), "L_D").passed

    passing = 0
    for seed in range(50):
        g = random_strategy_centered_dag(1 + seed % 2, seed, p=0.3, p_z=0.1, covariate_role="L_D")
        if check_dcc(g, "L_D").passed:
            passing += 1
            ok, path = check_partial_isolation(g, "Z_Y")
            assert ok, (seed, path)
    print(f"{passing}/50 random graphs satisfy the conditions")
    assert passing >= 5


def _read_rows(path):
    lines = [ln for ln in open(path, encoding="utf-8") if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _write_rows(path, rows, fields):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _to_treatment_rows(rows):
    """Treatment actually taken per interval: a = z when adherent, else the other arm."""
    out = []
    for row in rows:
        row = dict(row)
        r, z = row.pop("r"), int(row.pop("z"))
        row["a"] = "" if r == "" else str(z if r == "1" else 1 - z)
        out.append(row)
    return out


def _author_strategy_rows(rows):
    """Hand-written strategy-centered version: z is the first treatment taken, r_k = [a_k == z]."""
    first = {row["id"]: row["a"] for row in rows if row["time"] == "1"}
    out = []
    for row in rows:
        row = dict(row)
        a = row.pop("a")
        row["z"] = first[row["id"]]
        row["r"] = "" if a == "" else str(int(a == row["z"]))
        out.append(row)
    return out


@pytest.mark.acceptance("Encoding invariance: treatment-centered ingest then convert equals strategy-centered ingest for every estimator (1e-12)")
def test_encoding_invariance(tmp_path):
    dgp = two_period_dgp()
    data = sample_trial(dgp, 4000, (5,))
    # the first treatment taken defines the initiated arm, so it must be observed
    data = data.take(np.flatnonzero(data.c[:, 0] == 0))
    write_csv(data, tmp_path / "sampled.csv")
    sampled = _read_rows(tmp_path / "sampled.csv")
    cov_cols = [c for c in sampled[0] if c.startswith("l")]

    treatment = _to_treatment_rows(sampled)
    _write_rows(tmp_path / "treatment.csv", treatment, ["id", "time", "a", "c", "d", "y", *cov_cols])
    _write_rows(tmp_path / "strategy.csv", _author_strategy_rows(treatment), ["id", "time", "z", "c", "r", "d", "y", *cov_cols])

    converted = ingest_csv(tmp_path / "treatment.csv", dgp.schema, encoding="treatment")
    authored = ingest_csv(tmp_path / "strategy.csv", dgp.schema)
    assert authored.equals(converted)
    a = estimate(authored, saturated_spec(), ALL_ARMS, ESTIMATORS)
    b = estimate(converted, saturated_spec(), ALL_ARMS, ESTIMATORS)
    for key in a:
        assert np.max(np.abs(a[key].curve - b[key].curve)) <= 1e-12, key


@pytest.mark.acceptance("Long follow-up pipeline (30 intervals): fit, weighted-Y on four arms, Z_Y contrast at z_D=1, bootstrap CI, table and curve artifacts")
def test_long_followup_pipeline(tmp_path):
    dgp = blood_pressure_trial_dgp(29)
    data = sample_trial(dgp, 2586, (2024,))
    assert data.horizon == 30
    assert validate_monotone(data) == []
    spec = blood_pressure_model_spec()

    laws = fit_nuisance_set(data, spec, "weighted_y")
    assert laws.converged()
    assert set(laws.models) >= {"Y", "C", "R"}

    boot = bootstrap_estimates(data, spec, ALL_ARMS, ("weighted_y",), BootstrapConfig(100, 0.95, 11))["weighted_y"]
    assert boot.error is None and boot.failures == 0
    con = contrast_from_bootstrap(boot, "Z_Y", at=1)
    assert con.estimate == boot.reports[ArmPair(1, 1)].terminal - boot.reports[ArmPair(0, 1)].terminal
    assert con.lower[-1] <= con.upper[-1]

    for rep in boot.reports.values():
        curve = rep.curve
        assert np.all(np.diff(curve) >= -1e-15) and 0 <= curve[0] and curve[-1] <= 1
        assert rep.diagnostics["positivity_warnings"] == []
        assert not rep.diagnostics["interval_excludes_point"]

    table = table4_csv(boot.reports, con, tmp_path / "table4.csv", header_comment=f"seed=11 spec={laws.fingerprint()}")
    body = [r for r in csv.reader(io.StringIO(table)) if r and not r[0].startswith("#")]
    assert body[0] == ["row", "z_y", "z_d", "estimate", "lower", "upper"]
    assert [r[0] for r in body[1:]] == ["(1,1)", "(1,0)", "(0,1)", "(0,0)", "Causal effect"]

    curves = emit_curves(boot.reports.values(), tmp_path / "curves.csv", header_comment="seed=11")
    data_rows = [ln for ln in curves.splitlines()[1:] if not ln.startswith("#") and not ln.startswith("arm,")]
    assert len(data_rows) == 4 * 30
    back = read_curves(tmp_path / "curves.csv")
    for arm, rep in boot.reports.items():
        assert np.array_equal(back[arm]["risk"], rep.curve)
    print(table)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
