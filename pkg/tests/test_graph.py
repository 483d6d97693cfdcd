import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_open_paths
from separable.graph import (
    Dag,
    GraphError,
    NodeLabel,
    build_swig,
    check_dcc,
    check_partial_isolation,
    convert_to_strategy_centered,
    d_separated,
    find_open_path,
    path_is_open,
    random_strategy_centered_dag,
    random_treatment_centered_dag,
)
from separable.simulation import two_period_dag


def test_node_labels_parse_and_validate():
    v = NodeLabel.parse("L_D_1[bp]")
    assert (v.role, v.t, v.name) == ("L_D", 1, "bp")
    assert str(NodeLabel.parse("R_1*")) == "R_1*"
    with pytest.raises(GraphError):
        NodeLabel("Y")
    with pytest.raises(GraphError):
        NodeLabel("Z_Y", 1)
    with pytest.raises(GraphError):
        NodeLabel.parse("bogus!")


def test_cycle_rejected():
    with pytest.raises(GraphError):
        Dag.from_edges([("D_1", "Y_1"), ("Y_1", "D_1")], K=1)


def test_classic_dseparation_patterns():
    chain = Dag.from_edges([("Z_Y", "D_1"), ("D_1", "Y_1")], K=1)
    assert not d_separated(chain, {"Z_Y"}, {"Y_1"})
    assert d_separated(chain, {"Z_Y"}, {"Y_1"}, {"D_1"})

    collider = Dag.from_edges([("Z_Y", "Y_1"), ("Z_D", "Y_1")], K=1)
    assert d_separated(collider, {"Z_Y"}, {"Z_D"})
    assert not d_separated(collider, {"Z_Y"}, {"Z_D"}, {"Y_1"})

    desc = Dag.from_edges([("Z_Y", "Y_1"), ("Z_D", "Y_1"), ("Y_1", "L_1")], K=1)
    assert not d_separated(desc, {"Z_Y"}, {"Z_D"}, {"L_1"})


def test_open_path_witness_is_open():
    g = Dag.from_edges([("Z_Y", "Y_1"), ("Z_D", "Y_1"), ("Y_1", "L_1")], K=1)
    path = find_open_path(g, {"Z_Y"}, {"Z_D"}, {"L_1"})
    assert path is not None and path_is_open(g, path, {"L_1"})
    assert find_open_path(g, {"Z_Y"}, {"Z_D"}) is None


def test_swig_splits_intervened_node():
    g = Dag.from_edges([("Z_Y", "R_1"), ("R_1", "Y_1"), ("L_0", "R_1")], K=1)
    sw = build_swig(g, {"R_1": 1})
    r, rf = NodeLabel.parse("R_1"), sw.fixed("R_1")
    assert (NodeLabel.parse("L_0"), r) in sw.graph.edges
    assert (rf, NodeLabel.parse("Y_1")) in sw.graph.edges
    assert not any(a == r for a, _ in sw.graph.edges)
    with pytest.raises(GraphError):
        build_swig(g, {"D_1": 0})


def test_reference_dag_conditions_and_isolation():
    g = two_period_dag()
    rep = check_dcc(g, "L_D")
    assert rep.passed and rep.failures() == []
    assert rep.to_dict()["passed"] is True
    assert check_partial_isolation(g, "Z_Y")[0]


def test_direct_arrow_breaks_conditions():
    g = two_period_dag()
    bad = Dag(g.nodes, set(g.edges) | {(NodeLabel("Z_D"), NodeLabel.parse("Y_2"))}, g.deterministic, g.K)
    rep = check_dcc(bad, "L_D")
    assert not rep.passed
    fail = rep.failures()[0]
    assert fail.condition == 1 and fail.path is not None


def test_isolation_failure_returns_path():
    g = Dag.from_edges([("Z_Y", "L_D_1"), ("L_D_1", "D_2")], K=1)
    ok, path = check_partial_isolation(g, "Z_Y")
    assert not ok and str(path[0]) == "Z_Y" and str(path[-1]) == "D_2"
    assert check_partial_isolation(Dag.from_edges([("Z_Y", "Y_1"), ("Y_1", "D_2")], K=1), "Z_Y")[0]


def test_partition_errors():
    g = Dag.from_edges([("Z_Y", "L_1"), ("Z_D", "D_2")], K=1)
    with pytest.raises(GraphError):
        check_dcc(g)
    with pytest.raises(GraphError):
        check_dcc(g, {"L_1": "L_X"})
    assert check_dcc(g, {"L_1": "L_Y"}).passed


def test_json_and_dot_export():
    g = two_period_dag()
    assert Dag.from_json(g.to_json()) == g
    dot = g.to_dot()
    assert dot.startswith("digraph") and "Z_Y" in dot


def test_conversion_of_random_graphs_uses_strategy_roles():
    for seed in range(10):
        sc = convert_to_strategy_centered(random_treatment_centered_dag(2, seed))
        roles = {v.role for v in sc.nodes}
        assert "A_Y" not in roles and "A_D" not in roles
        assert {"Z_Y", "Z_D"} <= roles


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 5000))
def test_dseparation_matches_path_enumeration(seed):
    g = random_strategy_centered_dag(1, seed, p=0.35)
    nodes = sorted(g.nodes)
    x, y = nodes[seed % len(nodes)], nodes[(seed * 7 + 3) % len(nodes)]
    if x == y:
        return
    given_set = {v for i, v in enumerate(nodes) if (seed >> (i % 12)) & 1 and v not in (x, y)}
    open_paths = brute_force_open_paths(g, {x}, {y}, given_set)
    assert d_separated(g, {x}, {y}, given_set) == (not open_paths)
    assert d_separated(g, {x}, {y}, given_set) == d_separated(g, {y}, {x}, given_set)
