"""Reference computations written independently of the package internals.

The K = 1 laws here are plain probability tables. `tables_to_dgp` writes
them into the process DSL so the package can sample, enumerate and fit
them, while `flat_risk` sums the identifying expression directly from the
tables with explicit loops (no recursion, no history codes).

Table layout (``m`` is 1 when the relevant treatment component equals the
adherence indicator of the interval, i.e. when treatment 1 is taken):

    p_l0                      P(L_0 = 1)
    c1[l0]                    P(C_1 = 1 | L_0)
    r1[z, l0]                 P(R_1 = 1 | C_1 = 0, Z, L_0)
    d1[m, l0], y1[m, l0]      hazards at interval 1 (m uses Z_D / Z_Y)
    l1[m, l0]                 P(L_1 = 1 | ...) (m uses the block's component)
    c2[l1], r2[z, l1]         censoring and adherence at interval 2
    d2[m, l0, l1], y2[m, l0, l1]
"""

from __future__ import annotations

import itertools

import numpy as np

from separable.data import Covariate, CovariateSchema
from separable.simulation import DgpSpec


def random_k1_tables(seed: int) -> dict:
    rng = np.random.default_rng(10_000 + seed)

    def u(*shape):
        return rng.uniform(0.05, 0.95, size=shape)

    return {
        "block": "L_D" if seed % 2 == 0 else "L_Y",
        "p_l0": float(u()),
        "c1": u(2) * 0.2,
        "r1": u(2, 2),
        "d1": u(2, 2) * 0.5,
        "y1": u(2, 2) * 0.5,
        "l1": u(2, 2),
        "c2": u(2) * 0.2,
        "r2": u(2, 2),
        "d2": u(2, 2, 2) * 0.5,
        "y2": u(2, 2, 2) * 0.5,
    }


def two_period_tables() -> dict:
    """The two-period reference process written as tables."""
    l0 = np.array([0, 1])
    rows = lambda on, off: np.array([off, on])  # index 0: m = 0
    return {
        "block": "L_D",
        "p_l0": 0.5,
        "c1": np.array([1 / 50, 1 / 50]),
        "r1": np.array([[0.8, 0.8], [0.8, 0.8]]),
        "d1": rows((1 + l0) / 20, (1 + l0) / 30),
        "y1": rows((10 + 2 * l0) / 20, (10 - 2 * l0) / 20),
        "l1": rows((2 + l0) / 4, (1 + l0) / 4),
        "c2": (1 + l0) / 20,
        "r2": np.array([(3 + l0) / 5, (3 + l0) / 5]),
        "d2": np.stack([np.tile((1 + l0) / 30, (2, 1)), np.tile((1 + l0) / 20, (2, 1))]),
        "y2": np.stack([np.tile((10 - 2 * l0) / 20, (2, 1)), np.tile((10 + 2 * l0) / 20, (2, 1))]),
    }


def _num(x) -> str:
    return repr(float(x))


def _by(var: str, table) -> str:
    return f"where({var} == 1, {_num(table[1])}, {_num(table[0])})"


def _by2(var_a: str, var_b: str, table) -> str:
    return f"where({var_a} == 1, {_by(var_b, table[1])}, {_by(var_b, table[0])})"


def tables_to_dgp(tab: dict) -> DgpSpec:
    block = tab["block"]
    comp = "ZD" if block == "L_D" else "ZY"
    schema = CovariateSchema([Covariate("L", "baseline", "binary", block=block)], [Covariate("L", "time_varying", "binary", block=block)])

    def matched(comp_name, t, on, off):
        return f"where({comp_name} == R[{t}], {on}, {off})"

    laws = {
        "baseline": {"L": _num(tab["p_l0"])},
        "C": {"1": _by("L[0]", tab["c1"]), "2": _by("L[1]", tab["c2"])},
        "R": {"1": _by2("Z", "L[0]", tab["r1"]), "2": _by2("Z", "L[1]", tab["r2"])},
        "D": {
            "1": matched("ZD", 1, _by("L[0]", tab["d1"][1]), _by("L[0]", tab["d1"][0])),
            "2": matched("ZD", 2, _by2("L[0]", "L[1]", tab["d2"][1]), _by2("L[0]", "L[1]", tab["d2"][0])),
        },
        "Y": {
            "1": matched("ZY", 1, _by("L[0]", tab["y1"][1]), _by("L[0]", tab["y1"][0])),
            "2": matched("ZY", 2, _by2("L[0]", "L[1]", tab["y2"][1]), _by2("L[0]", "L[1]", tab["y2"][0])),
        },
        "time_varying": {"L": {"1": matched(comp, 1, _by("L[0]", tab["l1"][1]), _by("L[0]", tab["l1"][0]))}},
    }
    return DgpSpec(1, schema, laws, 0.5, "tables")


def flat_risk(tab: dict, z_y: int, z_d: int) -> tuple:
    """Risk by intervals 1 and 2 from a direct sum over (j, l0, l1)."""
    z_l = z_d if tab["block"] == "L_D" else z_y
    risk1 = 0.0
    risk2 = 0.0
    for l0 in (0, 1):
        p_l0 = tab["p_l0"] if l0 else 1 - tab["p_l0"]
        surv_d1 = 1 - tab["d1"][z_d][l0]
        haz_y1 = tab["y1"][z_y][l0]
        risk1 += p_l0 * surv_d1 * haz_y1
        for l1 in (0, 1):
            p_l1 = tab["l1"][z_l][l0] if l1 else 1 - tab["l1"][z_l][l0]
            risk2 += p_l0 * surv_d1 * (1 - haz_y1) * p_l1 * (1 - tab["d2"][z_d][l0][l1]) * tab["y2"][z_y][l0][l1]
    return risk1, risk1 + risk2


def all_flat_risks(tab: dict) -> dict:
    return {(zy, zd): flat_risk(tab, zy, zd) for zy, zd in itertools.product((1, 0), repeat=2)}


def brute_force_open_paths(g, x, y, given):
    """Every simple path between ``x`` and ``y`` that is open given ``given``."""
    from separable.graph import path_is_open

    nbrs = {v: set() for v in g.nodes}
    for a, b in g.edges:
        nbrs[a].add(b)
        nbrs[b].add(a)
    out = []

    def walk(path):
        v = path[-1]
        if v in y:
            if path_is_open(g, path, given):
                out.append(list(path))
            return
        for w in sorted(nbrs[v]):
            if w not in path:
                walk(path + [w])

    for s in x:
        walk([s])
    return out
