"""Counterfactual risk under a sustained strategy ``(z_Y, z_D)``.

Four estimators share one estimand, the risk of the event of interest by
interval ``k`` had everyone stayed uncensored and adherent to the strategy
that takes the ``Y`` component of treatment ``z_Y`` and the ``D`` component of
treatment ``z_D``.

``plug_in``
    Evaluates the g-formula with fitted laws.
``weighted_y``
    Averages weighted event indicators over the ``Z = z_D`` arm. Ratios of
    ``Y`` hazards and ``L_Y`` laws move the ``Y`` branch to ``z_Y``.
``weighted_d``
    The mirror image over the ``Z = z_Y`` arm with ``D`` and ``L_D`` ratios.
``one_step``
    Adds the empirical mean of the efficient influence function to the
    plug-in value. It is consistent when the censoring/adherence model and
    either the ``{Y, L_Y}`` or the ``{D, L_D}`` models are correct.

Conditional laws are supplied by any object with the `ConditionalLawSet`
methods, so the same code evaluates fitted models and exact data-generating
laws.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .data import ALL_ARMS, ArmPair, HistoryCodec, IndividualRecord, TrialDataset
from .models import (
    CoverageError,
    NuisanceSet,
    PositivityError,
    code_context,
    data_context,
    fit_nuisance_set,
    role_rows,
    spec_fingerprint,
)

__all__ = [
    "ConditionalLawSet",
    "EstimateReport",
    "IfWorkspace",
    "LawTables",
    "RecordLaws",
    "RiskCurve",
    "WeightTrajectory",
    "ESTIMATORS",
    "estimate",
    "evaluate_g_formula",
    "ice_tables",
    "influence_contribution",
    "influence_values",
    "one_step_estimate",
    "plug_in_estimate",
    "weight_trajectories",
    "weighted_d_estimate",
    "weighted_y_estimate",
]

ESTIMATORS = ("plug_in", "weighted_y", "weighted_d", "one_step")
EPS = 1e-12


class ConditionalLawSet(Protocol):
    """Conditional laws entering the g-formula.

    Implemented by `separable.models.NuisanceSet` (fitted) and
    `separable.simulation.DgpLaws` (exact).
    """

    K: int
    codec: HistoryCodec | None

    def p_z(self, z: int) -> float: ...

    def hazard(self, role: str, z: int, t: int, ctx, missing: str = "error") -> np.ndarray: ...

    def propensity(self, z: int, t: int, ctx, missing: str = "error") -> np.ndarray: ...

    def law(self, role: str, z: int, s: int, ctx, missing: str = "error") -> np.ndarray: ...


@dataclass
class RiskCurve:
    arm: ArmPair
    values: np.ndarray  # risk by interval k = 1..K+1

    @property
    def terminal(self) -> float:
        return float(self.values[-1])


@dataclass
class EstimateReport:
    """Risk curve for one arm and one estimator, with diagnostics.

    ``lower``/``upper`` hold bootstrap percentile limits when computed.
    """

    arm: ArmPair
    estimator: str
    curve: np.ndarray
    fingerprint: str = ""
    diagnostics: dict = field(default_factory=dict)
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    level: float | None = None

    @property
    def terminal(self) -> float:
        return float(self.curve[-1])

    @property
    def horizon(self) -> int:
        return len(self.curve)

    def to_dict(self) -> dict:
        out = {
            "arm": [int(self.arm.z_y), int(self.arm.z_d)],
            "estimator": self.estimator,
            "curve": [float(v) for v in self.curve],
            "terminal": self.terminal,
            "fingerprint": self.fingerprint,
            "diagnostics": _jsonable(self.diagnostics),
        }
        if self.lower is not None:
            out["lower"] = [float(v) for v in self.lower]
            out["upper"] = [float(v) for v in self.upper]
            out["level"] = self.level
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "EstimateReport":
        rep = cls(
            ArmPair(*d["arm"]),
            d["estimator"],
            np.asarray(d["curve"], dtype=float),
            d.get("fingerprint", ""),
            d.get("diagnostics", {}),
        )
        if "lower" in d:
            rep.lower = np.asarray(d["lower"], dtype=float)
            rep.upper = np.asarray(d["upper"], dtype=float)
            rep.level = d.get("level")
        if abs(rep.terminal - d.get("terminal", rep.terminal)) > 0:
            raise ValueError("terminal risk differs from the last curve value")
        return rep

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


# ---------------------------------------------------------------------------
# Dense tables over discrete histories


class LawTables:
    """Every conditional evaluated on every discrete history, per arm value.

    ``hY(z, t)``, ``hD(z, t)`` and ``pi(z, t)`` are arrays over the codes of
    ``L̄_{t-1}``. ``PLD(z, s)`` has shape ``(N_{s-1}, n_LD)`` and ``PLY(z, s)``
    shape ``(N_{s-1}, n_LD, n_LY)``. Unseen cells of fitted tables are NaN;
    they only raise if they carry probability mass.
    """

    def __init__(self, laws: ConditionalLawSet):
        if laws.codec is None:
            raise ValueError("g-formula evaluation needs discrete covariates")
        self.laws = laws
        self.codec = laws.codec
        self.K = laws.K
        self._memo = {}

    def _get(self, key, build):
        if key not in self._memo:
            with np.errstate(all="ignore"):
                self._memo[key] = build()
        return self._memo[key]

    def hY(self, z: int, t: int) -> np.ndarray:
        return self._get(("Y", z, t), lambda: self.laws.hazard("Y", z, t, self._hctx(t), missing="nan"))

    def hD(self, z: int, t: int) -> np.ndarray:
        return self._get(("D", z, t), lambda: self.laws.hazard("D", z, t, self._hctx(t), missing="nan"))

    def pi(self, z: int, t: int) -> np.ndarray:
        return self._get(("CR", z, t), lambda: self.laws.propensity(z, t, self._hctx(t), missing="nan"))

    def PLD(self, z: int, s: int) -> np.ndarray:
        def build():
            ctx = code_context(self.codec, "L_D", s, np.arange(self.codec.n_histories(s - 1)))
            return self.laws.law("L_D", z, s, ctx, missing="nan")

        return self._get(("L_D", z, s), build)

    def PLY(self, z: int, s: int) -> np.ndarray:
        def build():
            nprev = self.codec.n_histories(s - 1)
            nld = self.codec.block_radix(s, "L_D")
            hist = np.repeat(np.arange(nprev), nld)
            ld = np.tile(np.arange(nld), nprev)
            ctx = code_context(self.codec, "L_Y", s, hist, ld)
            out = self.laws.law("L_Y", z, s, ctx, missing="nan")
            return out.reshape(nprev, nld, -1)

        return self._get(("L_Y", z, s), build)

    def _hctx(self, t: int):
        key = ("ctx", t)
        if key not in self._memo:
            self._memo[key] = code_context(self.codec, "Y", t, np.arange(self.codec.n_histories(t - 1)))
        return self._memo[key]


def _as_tables(laws) -> LawTables:
    return laws if isinstance(laws, LawTables) else LawTables(laws)


def _wprod(p, v):
    """``p * v`` with zero wherever ``p`` is zero (so undefined ``v`` is ignored)."""
    return np.where(p > 0, p * np.where(p > 0, v, 0.0), 0.0)


def _check(values, what: str):
    if np.any(np.isnan(values)):
        raise PositivityError(f"{what}: a history with positive probability has no estimate (unseen cell)")
    return values


def evaluate_g_formula(laws, arm, horizon: int | None = None) -> RiskCurve:
    """Risk curve from the identification formula by forward recursion.

    The mass ``m_s(l̄_s)`` of being event-free with history ``l̄_s`` under the
    strategy is propagated forward; at each interval the ``Y`` hazard under
    ``z_Y`` times the ``D`` survival under ``z_D`` adds to the risk.
    """
    arm = ArmPair(*arm)
    tab = _as_tables(laws)
    codec = tab.codec
    K = tab.K if horizon is None else horizon - 1
    if K > tab.K:
        raise ValueError(f"horizon {K + 1} exceeds the law set's horizon {tab.K + 1}")
    zy, zd = arm
    mass = np.ones(1)
    curve = np.zeros(K + 1)
    risk = 0.0
    with np.errstate(all="ignore"):
        for s in range(K + 1):
            pld = tab.PLD(zd, s)
            ply = tab.PLY(zy, s)
            nld, nly = codec.block_radix(s, "L_D"), codec.block_radix(s, "L_Y")
            m_ld = _wprod(mass[:, None], pld)
            m_hist = _wprod(m_ld[:, :, None], ply).reshape(-1)
            _check(m_hist, f"covariate laws at time {s}")
            hy = tab.hY(zy, s + 1)
            hd = tab.hD(zd, s + 1)
            surv_d = _wprod(m_hist, 1 - hd)
            events = _wprod(surv_d, hy)
            _check(events, f"hazards at interval {s + 1}")
            bad = (m_hist > 0) & ((hy < 0) | (hy > 1) | (hd < 0) | (hd > 1))
            if np.any(bad):
                raise ValueError("hazard outside [0, 1]")
            risk += float(events.sum())
            curve[s] = risk
            mass = _wprod(surv_d, 1 - hy)
            assert mass.shape[0] == codec.n_histories(s) and nld * nly * codec.n_histories(s - 1) == mass.shape[0]
    return RiskCurve(arm, curve)


# ---------------------------------------------------------------------------
# ICE tables


@dataclass
class IceSlice:
    """Backward recursion for the event at interval ``s + 1``.

    ``A``: ``h^D_{s+1}(h^{*Y}_{s+1}(1))`` over ``L̄_s``;
    ``B``: ``h^{L_Y}_s(A)`` over ``(L̄_{s-1}, L_{D,s})``;
    ``T[j]``: ``T^{(s+1)}_j`` over ``L̄_{j-2}`` for ``j = 1..s+1``;
    ``Ysurv[j]``, ``D[j]`` over ``L̄_{j-1}`` and ``LY[j]`` over
    ``(L̄_{j-2}, L_{D,j-1})`` are the intermediate stages for ``j = 1..s``.
    """

    s: int
    A: np.ndarray
    B: np.ndarray
    T: dict
    Ysurv: dict
    D: dict
    LY: dict

    @property
    def value(self) -> float:
        return float(self.T[1][0])


def _lsum(p, v):
    """Sum over the last axis of ``p * v``, ignoring entries with ``p = 0``."""
    return _wprod(p, v).sum(axis=-1)


def ice_tables(laws, arm, s: int) -> IceSlice:
    """Iterated conditional expectations for the event at interval ``s + 1``.

    ``T^{(s+1)}_{s+1} = h^{L_D}_s(h^{L_Y}_s(h^D_{s+1}(h^{*Y}_{s+1}(1))))`` and,
    going back, ``T^{(s+1)}_j = h^{L_D}_{j-1}(h^{L_Y}_{j-1}(h^D_j(h^Y_j(T^{(s+1)}_{j+1}))))``.
    ``Y``-type and ``L_Y`` stages use ``z_Y``, ``D``-type and ``L_D`` stages ``z_D``.
    """
    arm = ArmPair(*arm)
    tab = _as_tables(laws)
    codec = tab.codec
    zy, zd = arm
    with np.errstate(all="ignore"):
        A = (1 - tab.hD(zd, s + 1)) * tab.hY(zy, s + 1)
        nprev = codec.n_histories(s - 1)
        nld = codec.block_radix(s, "L_D")
        B = _lsum(tab.PLY(zy, s), A.reshape(nprev, nld, -1))
        T = {s + 1: _lsum(tab.PLD(zd, s), B)}
        Ysurv, D, LY = {}, {}, {}
        for j in range(s, 0, -1):
            Ysurv[j] = T[j + 1] * (1 - tab.hY(zy, j))
            D[j] = Ysurv[j] * (1 - tab.hD(zd, j))
            n2 = codec.n_histories(j - 2)
            nld_j = codec.block_radix(j - 1, "L_D")
            LY[j] = _lsum(tab.PLY(zy, j - 1), D[j].reshape(n2, nld_j, -1))
            T[j] = _lsum(tab.PLD(zd, j - 1), LY[j])
    return IceSlice(s, A, B, T, Ysurv, D, LY)


@dataclass
class IfWorkspace:
    """Everything needed to evaluate the influence function for one arm."""

    arm: ArmPair
    tables: LawTables
    slices: list  # IceSlice per s = 0..K
    p_zy: float
    p_zd: float

    @property
    def K(self) -> int:
        return self.tables.K

    @property
    def plug_in_curve(self) -> np.ndarray:
        return np.cumsum([sl.value for sl in self.slices])


def build_workspace(laws, arm) -> IfWorkspace:
    arm = ArmPair(*arm)
    tab = _as_tables(laws)
    slices = [ice_tables(tab, arm, s) for s in range(tab.K + 1)]
    return IfWorkspace(arm, tab, slices, tab.laws.p_z(arm.z_y), tab.laws.p_z(arm.z_d))


# ---------------------------------------------------------------------------
# Influence function


def _floor(x, mask, what):
    bad = mask & ~(np.abs(x) >= EPS)
    if np.any(bad):
        raise PositivityError(f"{what} below the positivity floor {EPS:g} for an observed history")
    return np.where(mask, x, 1.0)


def influence_values(data: TrialDataset, ws: IfWorkspace) -> np.ndarray:
    """Influence-function contributions, shape ``(n, K+1)``.

    Column ``s`` holds the part attributable to the event at interval
    ``s + 1``; the row sum of the first ``k`` columns corrects the risk by
    interval ``k``.
    """
    tab = ws.tables
    codec = tab.codec
    K = ws.K
    if data.K != K:
        raise ValueError("dataset horizon differs from the workspace")
    zy, zd = ws.arm
    n = data.n
    H = data.history_codes
    safe = np.where(H >= 0, H, 0)
    # zero-weight rows carry no information and may sit in unfitted cells
    pos = data.weights > 0
    isY = (data.z == zy) & pos
    isD = (data.z == zd) & pos
    phi, free = data.phi, data.free
    d = [np.zeros(n, np.int8)] + [np.where(data.flag("d", t) > 0, 1, 0) for t in range(1, K + 2)]
    y = [np.zeros(n, np.int8)] + [np.where(data.flag("y", t) > 0, 1, 0) for t in range(1, K + 2)]

    def prev_code(j):
        return safe[:, j - 1] if j >= 1 else np.zeros(n, dtype=np.int64)

    ld, ly = {}, {}
    for j in range(K + 1):
        _, ld[j], ly[j] = codec.split(safe[:, j], j)

    # risk ratios and propensities at interval j are needed for every row that
    # reached j adherent and uncensored, including rows with an event at j
    RRD = np.ones((n, K + 2))
    RRY = np.ones((n, K + 2))
    piY = np.ones((n, K + 2))
    piD = np.ones((n, K + 2))
    with np.errstate(all="ignore"):
        for j in range(1, K + 2):
            at = phi[:, j] & free[:, j - 1] & (H[:, j - 1] >= 0)
            aY, aD = at & isY, at & isD
            hp = safe[:, j - 1]
            den = _floor(1 - tab.hD(zy, j)[hp], aY, "D survival under z_Y")
            RRD[:, j] = np.where(aY, (1 - tab.hD(zd, j)[hp]) / den, 1.0)
            if j <= K:  # RRY at the last interval would weight nothing
                den = _floor(1 - tab.hY(zd, j)[hp], aD, "Y survival under z_D")
                RRY[:, j] = np.where(aD, (1 - tab.hY(zy, j)[hp]) / den, 1.0)
            piY[:, j] = _floor(tab.pi(zy, j)[hp], aY, "propensity")
            piD[:, j] = _floor(tab.pi(zd, j)[hp], aD, "propensity")

        # prefactors along each record's own history
        Omega = np.zeros((n, K + 1))
        Lam = np.zeros((n, K + 1))
        RRLY = np.ones((n, K + 1))
        logO = np.full(n, -math.log(ws.p_zy))
        logL = np.full(n, -math.log(ws.p_zd))
        for j in range(K + 1):
            valid = phi[:, j] & free[:, j] & (H[:, j] >= 0)
            hp = prev_code(j)
            if j >= 1:
                logO = logO + np.log(RRD[:, j]) - np.log(piY[:, j])
                logL = logL + np.log(RRLY[:, j - 1]) + np.log(RRY[:, j]) - np.log(piD[:, j])
            pld_n = tab.PLD(zd, j)[hp, ld[j]]
            pld_d = _floor(tab.PLD(zy, j)[hp, ld[j]], valid & isY, "L_D law under z_Y")
            logO = logO + np.log(np.where(valid & isY, pld_n / pld_d, 1.0))
            Omega[:, j] = np.where(valid & isY, np.exp(logO), 0.0)
            Lam[:, j] = np.where(valid & isD, np.exp(logL), 0.0)
            ply_n = tab.PLY(zy, j)[hp, ld[j], ly[j]]
            ply_d = _floor(tab.PLY(zd, j)[hp, ld[j], ly[j]], valid & isD, "L_Y law under z_D")
            RRLY[:, j] = np.where(valid & isD, ply_n / ply_d, 1.0)
        if not (np.all(np.isfinite(Omega)) and np.all(np.isfinite(Lam))):
            raise PositivityError("influence-function weights are not finite")

        out = np.zeros((n, K + 1))
        for s in range(K + 1):
            sl = ws.slices[s]
            hs, hp = safe[:, s], prev_code(s)
            f = free[:, s]
            A = sl.A[hs]
            B = sl.B[hp, ld[s]]
            Tss = sl.T[s + 1][hp]
            ystar = tab.hY(zy, s + 1)[hs]
            m_y = isY & phi[:, s + 1] & f & (d[s + 1] == 0)
            m_ly = isY & phi[:, s] & f
            m_d = isD & phi[:, s + 1] & f
            m_ld = isD & phi[:, s] & f
            total = np.where(m_y, Omega[:, s] * RRD[:, s + 1] / piY[:, s + 1] * (y[s + 1] - ystar), 0.0)
            total += np.where(m_ly, Omega[:, s] * (A - B), 0.0)
            total += np.where(m_d, Lam[:, s] * RRLY[:, s] / piD[:, s + 1] * (ystar * (1 - d[s + 1]) - A), 0.0)
            total += np.where(m_ld, Lam[:, s] * (B - Tss), 0.0)
            for j in range(1, s + 1):
                h1, h2 = safe[:, j - 1], prev_code(j - 1)
                fj = free[:, j - 1]
                Tn = sl.T[j + 1][h1]
                Ys = sl.Ysurv[j][h1]
                Dj = sl.D[j][h1]
                LYj = sl.LY[j][h2, ld[j - 1]]
                Tj = sl.T[j][h2]
                m_y = isY & phi[:, j] & fj & (d[j] == 0)
                m_ly = isY & phi[:, j - 1] & fj
                m_d = isD & phi[:, j] & fj
                m_ld = isD & phi[:, j - 1] & fj
                total += np.where(m_y, Omega[:, j - 1] * RRD[:, j] / piY[:, j] * (Tn * (1 - y[j]) - Ys), 0.0)
                total += np.where(m_ly, Omega[:, j - 1] * (Dj - LYj), 0.0)
                total += np.where(m_d, Lam[:, j - 1] * RRLY[:, j - 1] / piD[:, j] * (Ys * (1 - d[j]) - Dj), 0.0)
                total += np.where(m_ld, Lam[:, j - 1] * (LYj - Tj), 0.0)
            out[:, s] = total
    if np.any(np.isnan(out)):
        raise PositivityError("influence function undefined for an observed history (unseen cell)")
    return out


def influence_contribution(record, ws: IfWorkspace, schema=None) -> float | np.ndarray:
    """Influence-function value ``ν¹`` for one record or every row of a dataset.

    A `TrialDataset` returns an array of length ``n``; an `IndividualRecord`
    (with ``schema``) returns a float.
    """
    if isinstance(record, TrialDataset):
        return influence_values(record, ws).sum(axis=1)
    if isinstance(record, IndividualRecord):
        if schema is None:
            raise ValueError("schema is required for a single record")
        ds = TrialDataset.from_records([record], schema, ws.K + 1)
        return float(influence_values(ds, ws).sum())
    raise TypeError("record must be a TrialDataset or IndividualRecord")


# ---------------------------------------------------------------------------
# Record-level law evaluation


class RecordLaws:
    """Memoized evaluation of a law set at every row of a dataset."""

    def __init__(self, laws, data: TrialDataset):
        self.laws = laws
        self.data = data
        self._memo = {}

    def hazard(self, role, z, t):
        key = (role, z, t)
        if key not in self._memo:
            with np.errstate(all="ignore"):
                self._memo[key] = self.laws.hazard(role, z, t, data_context(self.data, role, t), missing="nan")
        return self._memo[key]

    def propensity(self, z, t):
        key = ("CR", z, t)
        if key not in self._memo:
            with np.errstate(all="ignore"):
                self._memo[key] = self.laws.propensity(z, t, data_context(self.data, "C", t), missing="nan")
        return self._memo[key]

    def law_at_observed(self, role, z, s):
        """Probability each row assigns to its own observed block value at ``s``."""
        key = (role, z, s)
        if key not in self._memo:
            levels = self._levels(role, s)
            if levels == 0:
                self._memo[key] = np.ones(self.data.n)
            else:
                with np.errstate(all="ignore"):
                    dist = self.laws.law(role, z, s, data_context(self.data, role, s), missing="nan")
                _, out = role_rows(self.data, role, s)
                code = np.nan_to_num(np.asarray(out, dtype=float), nan=-1).astype(np.int64)
                ok = (code >= 0) & (code < dist.shape[1])
                vals = np.full(self.data.n, np.nan)
                vals[ok] = dist[np.flatnonzero(ok), code[ok]]
                self._memo[key] = vals
        return self._memo[key]

    def _levels(self, role, s):
        group = self.data.schema.baseline if s == 0 else self.data.schema.time_varying
        return sum(1 for c in group if c.block == role)


# ---------------------------------------------------------------------------
# Weighted estimators


@dataclass
class WeightTrajectory:
    """Log-domain weights per individual of the route's arm subsample.

    ``rows`` indexes the subsample. ``log_cr`` holds ``log W_{(C,R),s}``
    (``-inf`` once the adherence/censoring indicator fails) and ``log_ratio``
    the log of the product of hazard and covariate-law ratio weights.
    Column ``s`` refers to the event at interval ``s + 1``.
    """

    arm: ArmPair
    route: str
    rows: np.ndarray
    log_cr: np.ndarray
    log_ratio: np.ndarray
    log_hazard: np.ndarray
    log_law: np.ndarray

    def weights(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_cr + self.log_ratio)


def weight_trajectories(data: TrialDataset, laws, arm, route: str, record_laws: RecordLaws | None = None) -> WeightTrajectory:
    """Weights of the ``Y`` route (over ``Z = z_D``) or ``D`` route (over ``Z = z_Y``)."""
    arm = ArmPair(*arm)
    if route not in ("Y", "D"):
        raise ValueError("route must be 'Y' or 'D'")
    rl = record_laws or RecordLaws(laws, data)
    zy, zd = arm
    K = data.K
    base_z = zd if route == "Y" else zy
    # zero-weight rows (e.g. left out of a bootstrap draw) contribute nothing
    rows = np.flatnonzero((data.z == base_z) & (data.weights > 0))
    if rows.size == 0:
        raise PositivityError(f"no individuals initiated treatment {base_z}")
    m = rows.size
    log_cr = np.zeros((m, K + 1))
    log_haz = np.zeros((m, K + 1))
    log_law = np.zeros((m, K + 1))
    phi = data.phi[rows]
    free = data.free[rows]
    cr_acc = np.zeros(m)
    surv_acc = np.zeros(m)
    law_acc = np.zeros(m)
    with np.errstate(divide="ignore", invalid="ignore"):
        for s in range(K + 1):
            at_s = phi[:, s] & free[:, s]
            lrole = "L_Y" if route == "Y" else "L_D"
            num_z, den_z = (zy, zd) if route == "Y" else (zd, zy)
            num = rl.law_at_observed(lrole, num_z, s)[rows]
            den = rl.law_at_observed(lrole, den_z, s)[rows]
            _positive(den, at_s, f"{lrole} law at time {s}")
            law_acc = law_acc + np.where(at_s, np.log(num) - np.log(den), 0.0)
            pi = rl.propensity(base_z, s + 1)[rows]
            _positive(pi, at_s, f"propensity at interval {s + 1}")
            cr_acc = cr_acc - np.where(at_s, np.log(pi), 0.0)
            ok = phi[:, s + 1] & free[:, s]
            log_cr[:, s] = np.where(ok, cr_acc, -np.inf)
            if route == "Y":
                hn = rl.hazard("Y", zy, s + 1)[rows]
                hd = rl.hazard("Y", zd, s + 1)[rows]
                # the hazard ratio only multiplies rows with a Y event at s+1
                event = (data.flag("d", s + 1)[rows] == 0) & (data.flag("y", s + 1)[rows] == 1)
                _positive(hd, ok & event, f"Y hazard at interval {s + 1}")
                ratio = np.where(hd >= EPS, np.log(hn) - np.log(hd), 0.0)
                log_haz[:, s] = np.where(ok, surv_acc + ratio, 0.0)
                if s < K:  # the survival factor only weights later intervals
                    _positive(1 - hd, ok, f"Y survival at interval {s + 1}")
                    surv_acc = surv_acc + np.where(ok, np.log1p(-hn) - np.log1p(-hd), 0.0)
            else:
                hn = rl.hazard("D", zd, s + 1)[rows]
                hd = rl.hazard("D", zy, s + 1)[rows]
                _positive(1 - hd, ok, f"D survival at interval {s + 1}")
                surv_acc = surv_acc + np.where(ok, np.log1p(-hn) - np.log1p(-hd), 0.0)
                log_haz[:, s] = np.where(ok, surv_acc, 0.0)
            log_law[:, s] = np.where(ok, law_acc, 0.0)
    log_ratio = log_haz + log_law
    return WeightTrajectory(arm, route, rows, log_cr, log_ratio, log_haz, log_law)


def _positive(x, mask, what):
    bad = mask & ~(x >= EPS)
    if np.any(bad):
        if np.any(mask & np.isnan(x)):
            raise PositivityError(f"{what}: no estimate for an observed history (unseen cell)")
        raise PositivityError(f"{what}: denominator below the positivity floor {EPS:g}")


def _weighted_curve(data: TrialDataset, wt: WeightTrajectory) -> tuple:
    rows = wt.rows
    K = data.K
    w_case = data.weights[rows]
    denom = w_case.sum()
    if denom <= 0:
        raise PositivityError("arm subsample has zero total weight")
    W = wt.weights()
    per_s = np.zeros(K + 1)
    ess = np.zeros(K + 1)
    max_w = np.zeros(K + 1)
    for s in range(K + 1):
        event = (data.flag("d", s + 1)[rows] == 0) & (data.flag("y", s + 1)[rows] == 1)
        ok = np.isfinite(wt.log_cr[:, s])
        contrib = np.where(ok & event, W[:, s], 0.0)
        per_s[s] = float(np.dot(w_case, contrib)) / denom
        if np.any(ok):
            ws_ = W[ok, s] * w_case[ok]
            tot = ws_.sum()
            ess[s] = tot**2 / np.dot(ws_, W[ok, s]) if tot > 0 else 0.0
            max_w[s] = float(W[ok, s][w_case[ok] > 0].max()) if np.any(w_case[ok] > 0) else 0.0
    diag = {"effective_sample_size": ess.tolist(), "max_weight": max_w.tolist(), "positivity_warnings": []}
    return np.cumsum(per_s), diag


# ---------------------------------------------------------------------------
# Front doors


def _nuisance(data, spec_or_laws, estimator):
    if spec_or_laws is None:
        raise CoverageError("a model specification or fitted law set is required")
    if hasattr(spec_or_laws, "hazard"):
        return spec_or_laws
    return fit_nuisance_set(data, spec_or_laws, estimator)


def _fp(laws, spec):
    if isinstance(laws, NuisanceSet):
        return laws.fingerprint()
    if hasattr(spec, "hazard"):
        return getattr(spec, "fingerprint", lambda: "")() if callable(getattr(spec, "fingerprint", None)) else ""
    return spec_fingerprint(spec)


def plug_in_estimate(data: TrialDataset, spec, arm, laws=None) -> EstimateReport:
    """Plug-in g-formula with laws fitted by ``spec`` (or given as ``laws``)."""
    arm = ArmPair(*arm)
    laws = laws or _nuisance(data, spec, "plug_in")
    curve = evaluate_g_formula(laws, arm).values
    return EstimateReport(arm, "plug_in", curve, _fp(laws, spec), {"positivity_warnings": []})


def weighted_y_estimate(data: TrialDataset, spec, arm, laws=None, record_laws=None) -> EstimateReport:
    """Weighted estimator averaging over the ``Z = z_D`` arm."""
    arm = ArmPair(*arm)
    laws = laws or _nuisance(data, spec, "weighted_y")
    wt = weight_trajectories(data, laws, arm, "Y", record_laws)
    curve, diag = _weighted_curve(data, wt)
    return EstimateReport(arm, "weighted_y", curve, _fp(laws, spec), diag)


def weighted_d_estimate(data: TrialDataset, spec, arm, laws=None, record_laws=None) -> EstimateReport:
    """Weighted estimator averaging over the ``Z = z_Y`` arm."""
    arm = ArmPair(*arm)
    laws = laws or _nuisance(data, spec, "weighted_d")
    wt = weight_trajectories(data, laws, arm, "D", record_laws)
    curve, diag = _weighted_curve(data, wt)
    return EstimateReport(arm, "weighted_d", curve, _fp(laws, spec), diag)


def one_step_estimate(data: TrialDataset, spec, arm, laws=None, tables: LawTables | None = None) -> EstimateReport:
    """Plug-in value plus the empirical mean of the influence function."""
    arm = ArmPair(*arm)
    laws = laws or _nuisance(data, spec, "one_step")
    ws = build_workspace(tables or laws, arm)
    plug = ws.plug_in_curve
    _check(plug, "plug-in value")
    iv = influence_values(data, ws)
    w = data.weights
    corr = np.cumsum((w @ iv) / w.sum())
    diag = {"plug_in": plug.tolist(), "correction": corr.tolist(), "positivity_warnings": []}
    return EstimateReport(arm, "one_step", plug + corr, _fp(laws, spec), diag)


def estimate(data: TrialDataset, spec, arms=ALL_ARMS, estimators=ESTIMATORS, laws=None) -> dict:
    """Fit once and run every requested estimator on every arm.

    Returns ``{(estimator, ArmPair): EstimateReport}``.
    """
    arms = [ArmPair(*a) for a in arms]
    for e in estimators:
        if e not in ESTIMATORS:
            raise ValueError(f"unknown estimator {e!r}")
    if laws is None:
        kinds = set(estimators)
        need = "all" if kinds & {"plug_in", "one_step"} or kinds >= {"weighted_y", "weighted_d"} else next(iter(kinds))
        laws = fit_nuisance_set(data, spec, need)
    rl = RecordLaws(laws, data)
    tab = LawTables(laws) if set(estimators) & {"plug_in", "one_step"} else None
    out = {}
    for arm in arms:
        for e in estimators:
            if e == "plug_in":
                out[(e, arm)] = EstimateReport(arm, e, evaluate_g_formula(tab, arm).values, _fp(laws, spec), {"positivity_warnings": []})
            elif e == "weighted_y":
                out[(e, arm)] = weighted_y_estimate(data, spec, arm, laws, rl)
            elif e == "weighted_d":
                out[(e, arm)] = weighted_d_estimate(data, spec, arm, laws, rl)
            else:
                out[(e, arm)] = one_step_estimate(data, spec, arm, laws, tab)
    return out
