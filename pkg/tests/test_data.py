import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from separable.data import (
    ABSENT,
    Covariate,
    CovariateSchema,
    DataError,
    IndividualRecord,
    RiskSetFilter,
    TrialDataset,
    TreatmentCenteredRecord,
    decode_treatment_centered,
    encode_strategy_centered,
    ingest_csv,
    risk_set,
    risk_set_mask,
    validate_monotone,
    write_csv,
)
from separable.simulation import sample_trial

SCHEMA = CovariateSchema([Covariate("L", "baseline")], [Covariate("L")])
EMPTY = CovariateSchema()


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


GOOD = """id,time,z,c,r,d,y,l0_L,l_L
1,1,1,0,1,0,0,0,1
1,2,1,0,1,0,1,0,
2,1,0,0,1,1,,1,
"""


def test_ingest_minimal_file(tmp_path):
    ds = ingest_csv(_write(tmp_path, GOOD), SCHEMA)
    assert ds.n == 2 and ds.horizon == 2 and ds.K == 1
    assert list(ds.z) == [1, 0]
    assert ds.d[1, 0] == 1 and ds.y[1, 0] == ABSENT
    assert np.isnan(ds.time_varying["L"][0, 1])


def test_ingest_monotonicity_error_names_id_and_time(tmp_path):
    text = "id,time,z,c,r,d,y\n7,1,1,0,1,0,1\n7,2,1,,,,0\n"
    with pytest.raises(DataError) as err:
        ingest_csv(_write(tmp_path, text), EMPTY)
    v = err.value.violations
    assert any(x.id == "7" and x.time == 2 and x.rule == "non-monotone" for x in v)


@pytest.mark.parametrize(
    "text, rule",
    [
        ("id,time,z,c,r,d\n1,1,1,0,1,0\n", "missing column"),
        ("id,time,z,c,r,d,y\n1,1,1,0,2,0,0\n", "non-binary flag"),
        ("id,time,z,c,r,d,y\n1,1,1,0,1,0,0\n1,1,1,0,1,0,0\n", "duplicate (id, time)"),
        ("id,time,z,c,r,d,y,l_x\n1,1,1,0,1,0,0,1\n", "schema mismatch"),
    ],
)
def test_ingest_errors(tmp_path, text, rule):
    with pytest.raises(DataError) as err:
        ingest_csv(_write(tmp_path, text), EMPTY)
    assert rule in str(err.value) or any(v.rule == rule for v in err.value.violations)


def test_ingest_level_not_in_schema(tmp_path):
    text = "id,time,z,c,r,d,y,l0_L,l_L\n1,1,1,0,1,0,0,3,1\n"
    with pytest.raises(DataError) as err:
        ingest_csv(_write(tmp_path, text), SCHEMA)
    assert any(v.rule == "schema mismatch" for v in err.value.violations)


def test_csv_round_trip_of_sampled_data(tmp_path, dgp):
    ds = sample_trial(dgp, 500, 3)
    write_csv(ds, tmp_path / "s.csv", header_comment="round trip")
    back = ingest_csv(tmp_path / "s.csv", dgp.schema)
    assert back.equals(ds)
    write_csv(ds, tmp_path / "b.csv", baseline_row=True)
    assert ingest_csv(tmp_path / "b.csv", dgp.schema, baseline_row=True).equals(ds)


def _rec(c, r, d, y, l=None, z=1):
    H = len(c)
    return IndividualRecord("a", z, {}, c, r, d, y, l or [None] * H)


def test_value_after_censoring_reported():
    ds = TrialDataset.from_records([_rec([0, 1], [1, None], [0, 0], [0, None])], EMPTY)
    rules = {v.rule for v in validate_monotone(ds)}
    assert "value after censoring" in rules


def test_competing_event_then_absent_y_is_valid():
    ds = TrialDataset.from_records([_rec([0, None], [1, None], [1, None], [None, None])], EMPTY)
    assert validate_monotone(ds) == []


def test_covariate_after_event_reported():
    schema = CovariateSchema([], [Covariate("x")])
    rec = IndividualRecord("q", 0, {}, [0, None], [1, None], [0, None], [1, None], [{"x": "1"}, None])
    rules = {v.rule for v in validate_monotone(TrialDataset.from_records([rec], schema))}
    assert "covariate after event" in rules


def test_sampled_records_pass_validation(dgp):
    assert validate_monotone(sample_trial(dgp, 10_000, 1)) == []


def test_encode_strategy_centered_examples():
    recs = [
        TreatmentCenteredRecord("p", {}, [1, 1, 1], [0, 0, 0], [0, 0, 0], [0, 0, 0]),
        TreatmentCenteredRecord("q", {}, [0, 1, None], [0, 0, None], [0, 0, None], [0, 1, None]),
    ]
    ds = encode_strategy_centered(recs, EMPTY)
    assert list(ds.z) == [1, 0]
    assert list(ds.r[0]) == [1, 1, 1]
    assert list(ds.r[1][:2]) == [1, 0]


def test_encode_rejects_treatment_after_absorption():
    rec = TreatmentCenteredRecord("p", {}, [1, 1], [1, None], [None, None], [None, None])
    with pytest.raises(DataError):
        encode_strategy_centered([rec], EMPTY)


def test_risk_set_examples(dgp):
    ds = sample_trial(dgp, 300, 2)
    assert [k for _, k in risk_set(ds, RiskSetFilter(0, 1))] == [0] * int((ds.z == 1).sum())
    recs = [
        _rec([0, 0], [1, 1], [0, 0], [0, 0]),
        _rec([0, 0], [1, 0], [0, 0], [0, 0]),
        _rec([0, 0], [1, 1], [0, 1], [0, None]),
    ]
    for i, r in enumerate(recs):
        r.id = str(i)
    toy = TrialDataset.from_records(recs, EMPTY)
    out = risk_set(toy, RiskSetFilter(2, 1, event_free_through=1))
    assert out == [("0", 2), ("2", 2)]


def test_risk_set_matches_row_scan(dgp):
    ds = sample_trial(dgp, 2000, 4)
    recs = ds.records()
    for k in range(ds.horizon + 1):
        for z in (0, 1):
            mask = risk_set_mask(ds, RiskSetFilter(k, z, event_free_through=max(k - 1, 0)))
            count = 0
            for rec in recs:
                ok = rec.z == z and all(rec.c[j] == 0 and rec.r[j] == 1 for j in range(k))
                ok = ok and all(rec.d[j] == 0 and rec.y[j] == 0 for j in range(max(k - 1, 0)))
                count += ok
            assert mask.sum() == count


def test_reweight_shares_structure(dgp):
    ds = sample_trial(dgp, 50, 0)
    w = np.arange(50.0)
    re = ds.reweight(w)
    assert np.array_equal(re.weights, w) and re.c is ds.c
    with pytest.raises(DataError):
        ds.reweight(-w - 1)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(0, 1), z=st.integers(0, 1))
def test_risk_sets_are_nested(dgp, seed, k, z):
    ds = sample_trial(dgp, 200, seed)
    outer = risk_set_mask(ds, RiskSetFilter(k, z))
    inner = risk_set_mask(ds, RiskSetFilter(k + 1, z))
    assert not np.any(inner & ~outer)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_sampled_data_is_absorption_closed(dgp, seed):
    assert validate_monotone(sample_trial(dgp, 300, seed)) == []


@settings(max_examples=40, deadline=None)
@given(a=st.lists(st.integers(0, 1), min_size=1, max_size=6))
def test_encoding_round_trip_on_adherent_prefix(a):
    H = len(a)
    rec = TreatmentCenteredRecord("p", {}, list(a), [0] * H, [0] * H, [0] * H)
    ds = encode_strategy_centered([rec], EMPTY)
    back = decode_treatment_centered(ds)[0].a
    r = ds.r[0]
    for k in range(H):
        if np.all(r[: k + 1] == 1):
            assert back[k] == a[k]
