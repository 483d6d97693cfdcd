"""Discrete data-generating processes: sampling, exact enumeration and coverage studies.

A `DgpSpec` lists one law per variable. Laws are written in a small
expression language evaluated with numpy over many individuals at once::

    "where(ZD == R[k], (1 + L[k-1]) / 20, (1 + L[k-1]) / 30)"

Names available inside an expression:

``Z``, ``ZY``, ``ZD``
    Initiated treatment and its two components. In a two-arm trial all
    three coincide.
``k`` (alias ``t``)
    The current interval (``C``, ``R``, ``D``, ``Y``) or time index (covariates).
``C``, ``R``, ``D``, ``Y`` and each covariate name
    Histories indexed by time, e.g. ``R[k]`` or ``L[k-1]``. Index 0 of a
    covariate is its baseline value. Flattened spellings such as ``L0`` and
    ``R1`` are accepted.
functions
    ``min``, ``max``, ``abs``, ``exp``, ``log``, ``expit``, ``where``.

Binary variables take an expression for the probability of 1. Categorical
covariates take a list of level probabilities (the last may be omitted).
Continuous covariates take ``{"normal": [mean, sd]}`` and can be sampled but
not enumerated. Any law may be a mapping from interval (or ``"default"``) to
one of these forms, and any law may be a Python callable receiving the
evaluation environment.
"""

from __future__ import annotations

import ast
import copy
import csv
import hashlib
import io
import json
import math
import operator
import re
import time as _time
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit

from .data import ABSENT, ALL_ARMS, ArmPair, Covariate, CovariateSchema, HistoryCodec, TrialDataset, validate_monotone
from .estimators import ESTIMATORS, RiskCurve, estimate
from .graph import Dag
from .models import NuisanceSet, code_context, fit_nuisance_set, saturated_spec

__all__ = [
    "CoverageTable",
    "DgpError",
    "DgpLaws",
    "DgpSpec",
    "Scenario",
    "blood_pressure_model_spec",
    "blood_pressure_trial_dgp",
    "enumerate_observed",
    "exact_truth",
    "four_arm_risk",
    "misspecified_nuisance_set",
    "misspecified_spec",
    "random_dgp",
    "rng_for",
    "run_coverage_experiment",
    "sample_trial",
    "two_period_dag",
    "two_period_dgp",
]

EVENT_VARS = ("C", "R", "D", "Y")


class DgpError(ValueError):
    pass


def rng_for(*stream: int) -> np.random.Generator:
    """Counter-based generator for the stream ``(seed, replication, draw, ...)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(s) for s in stream])))


# ---------------------------------------------------------------------------
# Expression language

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.Mod: operator.mod,
}
_CMPOPS = {
    ast.Eq: operator.eq,
    ast.NotEq: operator.ne,
    ast.Lt: operator.lt,
    ast.LtE: operator.le,
    ast.Gt: operator.gt,
    ast.GtE: operator.ge,
}
_FUNCS = {
    "min": np.minimum,
    "max": np.maximum,
    "abs": np.abs,
    "exp": np.exp,
    "log": np.log,
    "expit": expit,
    "where": np.where,
}
_ALIAS = re.compile(r"^([A-Za-z_][A-Za-z_]*?)(\d+)$")


class Expression:
    """A parsed law expression; evaluation walks a whitelisted AST."""

    def __init__(self, source):
        self.source = str(source)
        try:
            self.tree = ast.parse(self.source, mode="eval").body
        except SyntaxError as exc:
            raise DgpError(f"cannot parse expression {self.source!r}: {exc.msg}") from None
        self._check(self.tree)

    def _check(self, node):
        allowed = (
            ast.BinOp, ast.UnaryOp, ast.Compare, ast.BoolOp, ast.IfExp, ast.Call, ast.Name,
            ast.Constant, ast.Subscript, ast.Load, ast.USub, ast.UAdd, ast.Not, ast.And, ast.Or,
        ) + tuple(_BINOPS) + tuple(_CMPOPS)
        for sub in ast.walk(node):
            if not isinstance(sub, allowed):
                raise DgpError(f"expression {self.source!r}: {type(sub).__name__} is not allowed")
            if isinstance(sub, ast.Call) and not (isinstance(sub.func, ast.Name) and sub.func.id in _FUNCS):
                raise DgpError(f"expression {self.source!r}: only {sorted(_FUNCS)} may be called")
            if isinstance(sub, ast.Constant) and not isinstance(sub.value, (int, float)):
                raise DgpError(f"expression {self.source!r}: only numeric constants are allowed")

    def __call__(self, env):
        return self._eval(self.tree, env)

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return node.value
        if isinstance(node, ast.Name):
            return env.lookup(node.id)
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            if isinstance(node.op, ast.USub):
                return -v
            if isinstance(node.op, ast.Not):
                return np.logical_not(v)
            return v
        if isinstance(node, ast.Compare):
            left = self._eval(node.left, env)
            out = True
            for op, comp in zip(node.ops, node.comparators):
                right = self._eval(comp, env)
                out = np.logical_and(out, _CMPOPS[type(op)](left, right))
                left = right
            return out
        if isinstance(node, ast.BoolOp):
            vals = [self._eval(v, env) for v in node.values]
            fn = np.logical_and if isinstance(node.op, ast.And) else np.logical_or
            out = vals[0]
            for v in vals[1:]:
                out = fn(out, v)
            return out
        if isinstance(node, ast.IfExp):
            return np.where(self._eval(node.test, env), self._eval(node.body, env), self._eval(node.orelse, env))
        if isinstance(node, ast.Call):
            return _FUNCS[node.func.id](*[self._eval(a, env) for a in node.args])
        if isinstance(node, ast.Subscript):
            series = self._eval(node.value, env)
            idx = self._eval(node.slice, env)
            if not isinstance(series, _Series):
                raise DgpError(f"expression {self.source!r}: only histories can be indexed")
            if np.ndim(idx) != 0:
                raise DgpError(f"expression {self.source!r}: history index must be a scalar")
            return series[int(idx)]
        raise DgpError(f"expression {self.source!r}: unsupported syntax")

    def __repr__(self):
        return f"Expression({self.source!r})"


class _Series:
    """Time-indexed history view for one variable, restricted to the current rows."""

    def __init__(self, name, getter, first, last):
        self.name, self.getter, self.first, self.last = name, getter, first, last

    def __getitem__(self, j):
        if j < self.first or j > self.last:
            raise DgpError(f"{self.name}[{j}] is not available here (valid {self.first}..{self.last})")
        return self.getter(j)


class Env:
    """Evaluation environment for ``m`` rows at interval or time ``k``.

    ``hist`` maps event names to callables ``j -> array`` and covariate names
    to callables as well; ``avail`` gives the last index available per name.
    """

    def __init__(self, m, k, zy, zd, getters, avail):
        self.m = m
        self.k = k
        self.scalars = {"ZY": zy, "ZD": zd, "Z": zy, "k": k, "t": k}
        self.getters = getters
        self.avail = avail

    def lookup(self, name):
        if name in self.scalars:
            return self.scalars[name]
        if name in self.getters:
            first = 1 if name in EVENT_VARS else 0
            return _Series(name, self.getters[name], first, self.avail[name])
        m = _ALIAS.match(name)
        if m and m.group(1) in self.getters:
            return self.lookup(m.group(1))[int(m.group(2))]
        raise DgpError(f"unknown name {name!r} in expression")

    def __getitem__(self, name):
        return self.lookup(name)


def _vector(value, m, what):
    out = np.broadcast_to(np.asarray(value, dtype=np.float64), (m,)).copy()
    return out


# ---------------------------------------------------------------------------
# Specification


def _compile_law(spec, what):
    """Compile one law form (not time-keyed) into ``(kind, payload)``."""
    if callable(spec):
        return ("callable", spec)
    if isinstance(spec, (int, float, str)):
        return ("binary", Expression(spec))
    if isinstance(spec, (list, tuple)):
        return ("categorical", [Expression(s) for s in spec])
    if isinstance(spec, Mapping) and "normal" in spec:
        mu, sd = spec["normal"]
        return ("normal", (Expression(mu), Expression(sd)))
    raise DgpError(f"cannot interpret the law for {what}: {spec!r}")


def _time_keyed(spec) -> bool:
    return isinstance(spec, Mapping) and "normal" not in spec


@dataclass
class DgpSpec:
    """Executable data-generating process.

    Parameters
    ----------
    K : int
        Follow-up has ``K + 1`` intervals.
    schema : CovariateSchema
    laws : dict
        Keys ``"C"``, ``"R"``, ``"D"``, ``"Y"`` and ``"baseline"`` /
        ``"time_varying"`` (dicts by covariate name). Missing ``C`` means no
        censoring, missing ``R`` perfect adherence, missing ``D`` no
        competing event.
    p_z : float
        ``P(Z = 1)``; in four-arm mode ``Z_Y`` and ``Z_D`` are independent
        with this probability each.
    name : str
    """

    K: int
    schema: CovariateSchema
    laws: dict
    p_z: float = 0.5
    name: str = "dgp"
    _compiled: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not 0 < self.p_z < 1:
            raise DgpError("p_z must lie in (0, 1)")
        if "Y" not in self.laws:
            raise DgpError("a DGP needs a law for Y")
        for name in [c.name for c in self.schema.baseline + self.schema.time_varying]:
            if name in EVENT_VARS or name in ("Z", "ZY", "ZD", "k", "t") or name in _FUNCS:
                raise DgpError(f"covariate name {name!r} clashes with a reserved name")
        for cov in self.schema.time_varying:
            if cov.name not in self.laws.get("time_varying", {}):
                raise DgpError(f"no law for time-varying covariate {cov.name!r}")
        for cov in self.schema.baseline:
            if cov.name not in self.laws.get("baseline", {}):
                raise DgpError(f"no law for baseline covariate {cov.name!r}")
        # compile eagerly so syntax errors surface at construction
        for t in range(1, self.K + 2):
            for v in EVENT_VARS:
                self.law(v, t)
            if t <= self.K:
                for cov in self.schema.time_varying:
                    self.law(cov.name, t)
        for cov in self.schema.baseline:
            self.law(cov.name, 0)

    @property
    def discrete(self) -> bool:
        return self.schema.all_discrete

    def law(self, var: str, t: int):
        key = (var, t)
        if key in self._compiled:
            return self._compiled[key]
        if var in EVENT_VARS:
            spec = self.laws.get(var, {"C": 0, "R": 1, "D": 0}.get(var))
        elif t == 0:
            spec = self.laws["baseline"][var]
        else:
            spec = self.laws["time_varying"][var]
        if _time_keyed(spec):
            spec = {str(k): v for k, v in spec.items()}
            if str(t) in spec:
                spec = spec[str(t)]
            elif "default" in spec:
                spec = spec["default"]
            else:
                raise DgpError(f"no law for {var} at time {t}")
        out = _compile_law(spec, f"{var} at time {t}")
        if var in EVENT_VARS and out[0] not in ("binary", "callable"):
            raise DgpError(f"{var} must have a Bernoulli law")
        self._compiled[key] = out
        return out

    def to_dict(self) -> dict:
        def enc(v):
            if callable(v):
                raise DgpError("a DGP with Python callables cannot be serialized")
            if isinstance(v, Mapping):
                return {str(k): enc(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [enc(x) for x in v]
            return v

        return {"name": self.name, "K": self.K, "p_z": self.p_z, "schema": self.schema.to_dict(), "laws": enc(self.laws)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "DgpSpec":
        d = dict(d)
        unknown = set(d) - {"name", "K", "p_z", "schema", "laws"}
        if unknown:
            raise DgpError(f"unknown DGP keys: {sorted(unknown)}")
        return cls(int(d["K"]), CovariateSchema.from_dict(d.get("schema", {})), dict(d["laws"]), float(d.get("p_z", 0.5)), d.get("name", "dgp"))

    @classmethod
    def from_json(cls, source) -> "DgpSpec":
        if isinstance(source, Mapping):
            return cls.from_dict(source)
        text = str(source)
        if text.lstrip().startswith("{"):
            return cls.from_dict(json.loads(text))
        with open(text, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def fingerprint(self) -> str:
        try:
            payload = json.dumps(self.to_dict(), sort_keys=True)
        except DgpError:
            payload = repr(self)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Law evaluation over a block of histories


class _State:
    """Column-wise histories for ``m`` rows (paths or individuals)."""

    def __init__(self, schema, K, m):
        self.schema, self.K = schema, K
        H = K + 1
        self.zy = np.zeros(m, np.int8)
        self.zd = np.zeros(m, np.int8)
        self.flags = {v: np.full((m, H), ABSENT, np.int8) for v in EVENT_VARS}
        self.base = {c.name: np.full(m, np.nan) for c in schema.baseline}
        self.tv = {c.name: np.full((m, H), np.nan) for c in schema.time_varying}
        self.weight = np.ones(m)

    @property
    def m(self):
        return self.zy.shape[0]

    def take(self, idx):
        new = _State.__new__(_State)
        new.schema, new.K = self.schema, self.K
        new.zy, new.zd, new.weight = self.zy[idx], self.zd[idx], self.weight[idx]
        new.flags = {k: v[idx] for k, v in self.flags.items()}
        new.base = {k: v[idx] for k, v in self.base.items()}
        new.tv = {k: v[idx] for k, v in self.tv.items()}
        return new

    @staticmethod
    def concat(states):
        new = _State.__new__(_State)
        s0 = states[0]
        new.schema, new.K = s0.schema, s0.K
        new.zy = np.concatenate([s.zy for s in states])
        new.zd = np.concatenate([s.zd for s in states])
        new.weight = np.concatenate([s.weight for s in states])
        new.flags = {k: np.concatenate([s.flags[k] for s in states]) for k in s0.flags}
        new.base = {k: np.concatenate([s.base[k] for s in states]) for k in s0.base}
        new.tv = {k: np.concatenate([s.tv[k] for s in states]) for k in s0.tv}
        return new

    def env(self, rows, k, avail_events, avail_cov, zy=None, zd=None):
        """Environment over ``rows``; events visible through ``avail_events``."""
        getters, avail = {}, {}
        for v in EVENT_VARS:
            getters[v] = (lambda j, v=v: self.flags[v][rows, j - 1].astype(np.float64))
            avail[v] = avail_events.get(v, 0) if isinstance(avail_events, dict) else avail_events
        for c in self.schema.baseline:
            getters[c.name] = lambda j, n=c.name: self.base[n][rows]
            avail[c.name] = min(avail_cov(c.name) if callable(avail_cov) else avail_cov, 0)
        for c in self.schema.time_varying:
            g0 = getters.get(c.name)
            getters[c.name] = (lambda j, n=c.name, g0=g0: self.tv[n][rows, j - 1] if j > 0 else (g0(0) if g0 else _no_baseline(n)))
            avail[c.name] = avail_cov(c.name) if callable(avail_cov) else avail_cov
        zyv = self.zy[rows].astype(np.float64) if zy is None else zy
        zdv = self.zd[rows].astype(np.float64) if zd is None else zd
        return Env(len(rows), k, zyv, zdv, getters, avail)


def _no_baseline(name):
    raise DgpError(f"{name}[0] has no baseline value")


def _bernoulli(dgp, var, t, env, m, strict=True):
    kind, payload = dgp.law(var, t)
    p = payload(env)
    p = _vector(p, m, var)
    bad = ~np.isfinite(p) if strict else np.isinf(p)
    if np.any(bad) or np.any((p < 0) | (p > 1)):
        raise DgpError(f"law of {var} at time {t} gives a probability outside [0, 1]")
    return p


def _categorical(dgp, cov, t, env, m, strict=True):
    """Level probabilities, shape ``(m, levels)``."""
    kind, payload = dgp.law(cov.name, t)
    L = cov.n_levels
    if kind == "callable":
        out = np.asarray(payload(env), dtype=np.float64)
        if out.ndim == 1 or (out.ndim == 2 and out.shape[1] == 1):
            p1 = _vector(out.reshape(-1) if out.ndim == 2 else out, m, cov.name)
            out = np.stack([1 - p1, p1], axis=1)
        out = np.broadcast_to(out, (m, L)).copy()
    elif kind == "binary":
        if L != 2:
            raise DgpError(f"covariate {cov.name} has {L} levels but a Bernoulli law")
        p1 = _vector(payload(env), m, cov.name)
        out = np.stack([1 - p1, p1], axis=1)
    elif kind == "categorical":
        cols = [_vector(e(env), m, cov.name) for e in payload]
        if len(cols) == L - 1:
            cols.append(1 - np.sum(cols, axis=0))
        if len(cols) != L:
            raise DgpError(f"covariate {cov.name} needs {L} level probabilities")
        out = np.stack(cols, axis=1)
    else:
        raise DgpError(f"covariate {cov.name} has a continuous law and cannot be enumerated")
    fin = np.isfinite(out).all(axis=1)
    if strict and not fin.all():
        raise DgpError(f"law of {cov.name} at time {t} is not a probability vector")
    if np.any(out[fin] < -1e-15) or np.any(np.abs(out[fin].sum(axis=1) - 1) > 1e-9):
        raise DgpError(f"law of {cov.name} at time {t} is not a probability vector")
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Sampling


def sample_trial(dgp: DgpSpec, n: int, seed=0, mode: str = "two-arm") -> TrialDataset:
    """Draw ``n`` individuals in temporal order.

    ``seed`` may be an integer or a tuple naming a stream. In ``"four-arm"``
    mode ``Z_Y`` and ``Z_D`` are drawn independently; the dataset's ``z`` is
    ``Z_Y`` and both components are kept in ``dataset.z_pair``.
    """
    if mode not in ("two-arm", "four-arm"):
        raise ValueError("mode must be 'two-arm' or 'four-arm'")
    stream = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
    rng = rng_for(*stream)
    K = dgp.K
    st = _State(dgp.schema, K, n)
    st.zy = (rng.random(n) < dgp.p_z).astype(np.int8)
    st.zd = (rng.random(n) < dgp.p_z).astype(np.int8) if mode == "four-arm" else st.zy.copy()
    everyone = np.arange(n)
    drawn = set()
    for cov in dgp.schema.baseline:
        env = st.env(everyone, 0, 0, lambda name: 0 if name in drawn else -1)
        st.base[cov.name] = _draw(dgp, cov, 0, env, n, rng)
        drawn.add(cov.name)
    alive = np.ones(n, bool)
    for k in range(1, K + 2):
        rows = np.flatnonzero(alive)
        c = _flip(rng, _bernoulli(dgp, "C", k, st.env(rows, k, {"C": k - 1, "R": k - 1, "D": k - 1, "Y": k - 1}, k - 1), len(rows)))
        st.flags["C"][rows, k - 1] = c
        rows = rows[c == 0]
        r = _flip(rng, _bernoulli(dgp, "R", k, st.env(rows, k, {"C": k, "R": k - 1, "D": k - 1, "Y": k - 1}, k - 1), len(rows)))
        st.flags["R"][rows, k - 1] = r
        d = _flip(rng, _bernoulli(dgp, "D", k, st.env(rows, k, {"C": k, "R": k, "D": k - 1, "Y": k - 1}, k - 1), len(rows)))
        st.flags["D"][rows, k - 1] = d
        rows = rows[d == 0]
        y = _flip(rng, _bernoulli(dgp, "Y", k, st.env(rows, k, {"C": k, "R": k, "D": k, "Y": k - 1}, k - 1), len(rows)))
        st.flags["Y"][rows, k - 1] = y
        rows = rows[y == 0]
        alive[:] = False
        alive[rows] = True
        if k <= K:
            drawn = set()
            for cov in dgp.schema.time_varying:
                env = st.env(rows, k, k, lambda name, drawn=drawn: k if name in drawn else k - 1)
                st.tv[cov.name][rows, k - 1] = _draw(dgp, cov, k, env, len(rows), rng)
                drawn.add(cov.name)
    width = len(str(max(n - 1, 0)))
    ds = TrialDataset(
        [f"{i:0{width}d}" for i in range(n)],
        st.zy,
        st.flags["C"], st.flags["R"], st.flags["D"], st.flags["Y"],
        st.base, st.tv, dgp.schema,
    )
    if mode == "four-arm":
        ds.__dict__["z_pair"] = np.stack([st.zy, st.zd], axis=1)
    return ds


def _flip(rng, p):
    return (rng.random(p.shape[0]) < p).astype(np.int8)


def _draw(dgp, cov, t, env, m, rng):
    kind, payload = dgp.law(cov.name, t)
    if kind == "normal":
        mu = _vector(payload[0](env), m, cov.name)
        sd = _vector(payload[1](env), m, cov.name)
        return mu + sd * rng.standard_normal(m)
    if kind == "callable" and not cov.discrete:
        return _vector(payload(env), m, cov.name)
    probs = _categorical(dgp, cov, t, env, m)
    u = rng.random(m)
    cum = np.cumsum(probs, axis=1)
    return np.minimum((u[:, None] >= cum).sum(axis=1), cov.n_levels - 1).astype(np.float64)


# ---------------------------------------------------------------------------
# Exact enumeration


def _branch_binary(st: _State, rows, p, var, k):
    """Split ``rows`` of ``st`` into value-1 and value-0 copies weighted by ``p``."""
    one = st.take(rows)
    zero = st.take(rows)
    one.flags[var][:, k - 1] = 1
    zero.flags[var][:, k - 1] = 0
    one.weight = one.weight * p
    zero.weight = zero.weight * (1 - p)
    return one, zero


def _branch_cov(st: _State, rows, probs, cov, t):
    parts = []
    for lev in range(probs.shape[1]):
        part = st.take(rows)
        if t == 0:
            part.base[cov.name] = np.full(len(rows), float(lev))
        else:
            part.tv[cov.name][:, t - 1] = float(lev)
        part.weight = part.weight * probs[:, lev]
        parts.append(part)
    return parts


def _nonzero(st: _State) -> _State:
    return st.take(np.flatnonzero(st.weight > 0))


def enumerate_observed(dgp: DgpSpec, total: float = 1.0, drop_zero: bool = True) -> TrialDataset:
    """Every observable two-arm trajectory, with its probability as case weight.

    Estimators applied to this dataset return population-level values.
    """
    if not dgp.discrete:
        raise DgpError("exact enumeration needs discrete covariates")
    K = dgp.K
    st0 = _State(dgp.schema, K, 2)
    st0.zy = np.array([0, 1], np.int8)
    st0.zd = st0.zy.copy()
    st0.weight = np.array([1 - dgp.p_z, dgp.p_z]) * total
    st = st0
    drawn = set()
    for cov in dgp.schema.baseline:
        rows = np.arange(st.m)
        probs = _categorical(dgp, cov, 0, st.env(rows, 0, 0, lambda name: 0 if name in drawn else -1), st.m)
        st = _State.concat(_branch_cov(st, rows, probs, cov, 0))
        drawn.add(cov.name)
        if drop_zero:
            st = _nonzero(st)
    done = []
    for k in range(1, K + 2):
        rows = np.arange(st.m)
        p = _bernoulli(dgp, "C", k, st.env(rows, k, {"C": k - 1, "R": k - 1, "D": k - 1, "Y": k - 1}, k - 1), st.m)
        cens, st = _branch_binary(st, rows, p, "C", k)
        done.append(cens)
        rows = np.arange(st.m)
        p = _bernoulli(dgp, "R", k, st.env(rows, k, {"C": k, "R": k - 1, "D": k - 1, "Y": k - 1}, k - 1), st.m)
        st = _State.concat(_branch_binary(st, rows, p, "R", k))
        rows = np.arange(st.m)
        p = _bernoulli(dgp, "D", k, st.env(rows, k, {"C": k, "R": k, "D": k - 1, "Y": k - 1}, k - 1), st.m)
        dead, st = _branch_binary(st, rows, p, "D", k)
        done.append(dead)
        rows = np.arange(st.m)
        p = _bernoulli(dgp, "Y", k, st.env(rows, k, {"C": k, "R": k, "D": k, "Y": k - 1}, k - 1), st.m)
        ev, st = _branch_binary(st, rows, p, "Y", k)
        done.append(ev)
        if k <= K:
            drawn = set()
            for cov in dgp.schema.time_varying:
                rows = np.arange(st.m)
                env = st.env(rows, k, k, lambda name, drawn=drawn: k if name in drawn else k - 1)
                probs = _categorical(dgp, cov, k, env, st.m)
                st = _State.concat(_branch_cov(st, rows, probs, cov, k))
                drawn.add(cov.name)
        if drop_zero:
            st = _nonzero(st)
            done = [_nonzero(s) for s in done]
    done.append(st)
    full = _State.concat([s for s in done if s.m > 0])
    n = full.m
    width = len(str(max(n - 1, 0)))
    ds = TrialDataset(
        [f"e{i:0{width}d}" for i in range(n)],
        full.zy,
        full.flags["C"], full.flags["R"], full.flags["D"], full.flags["Y"],
        full.base, full.tv, dgp.schema, weights=full.weight,
    )
    return ds


def _intervened_curve(dgp: DgpSpec, arm, four_arm: bool) -> np.ndarray:
    """Flat path enumeration under ``c̄ = 0, r̄ = 1``.

    With ``four_arm=False`` every factor is the two-arm observed conditional,
    taken at ``Z = z_Y`` for ``Y`` and ``L_Y`` and at ``Z = z_D`` for ``D`` and
    ``L_D``. With ``four_arm=True`` both components enter every law.
    """
    if not dgp.discrete:
        raise DgpError("exact truth needs discrete covariates")
    zy, zd = ArmPair(*arm)
    K = dgp.K

    def zs(block):
        if four_arm:
            return float(zy), float(zd)
        z = zy if block in ("Y", "L_Y") else zd
        return float(z), float(z)

    st = _State(dgp.schema, K, 1)
    drawn = set()
    for cov in dgp.schema.baseline:
        rows = np.arange(st.m)
        a, b = zs(cov.block)
        env = st.env(rows, 0, 0, lambda name: 0 if name in drawn else -1, np.full(st.m, a), np.full(st.m, b))
        probs = _categorical(dgp, cov, 0, env, st.m)
        st = _nonzero(_State.concat(_branch_cov(st, rows, probs, cov, 0)))
        drawn.add(cov.name)
    curve = np.zeros(K + 1)
    risk = 0.0
    for k in range(1, K + 2):
        st.flags["C"][:, k - 1] = 0
        st.flags["R"][:, k - 1] = 1
        rows = np.arange(st.m)
        a, b = zs("D")
        pd = _bernoulli(dgp, "D", k, st.env(rows, k, {"C": k, "R": k, "D": k - 1, "Y": k - 1}, k - 1, np.full(st.m, a), np.full(st.m, b)), st.m)
        st.flags["D"][:, k - 1] = 0
        a, b = zs("Y")
        py = _bernoulli(dgp, "Y", k, st.env(rows, k, {"C": k, "R": k, "D": k, "Y": k - 1}, k - 1, np.full(st.m, a), np.full(st.m, b)), st.m)
        risk += float(np.sum(st.weight * (1 - pd) * py))
        curve[k - 1] = risk
        st.weight = st.weight * (1 - pd) * (1 - py)
        st.flags["Y"][:, k - 1] = 0
        if k <= K:
            drawn = set()
            for cov in dgp.schema.time_varying:
                rows = np.arange(st.m)
                a, b = zs(cov.block)
                env = st.env(rows, k, k, lambda name, drawn=drawn: k if name in drawn else k - 1, np.full(st.m, a), np.full(st.m, b))
                probs = _categorical(dgp, cov, k, env, st.m)
                st = _nonzero(_State.concat(_branch_cov(st, rows, probs, cov, k)))
                drawn.add(cov.name)
    return curve


def exact_truth(dgp: DgpSpec, arm) -> RiskCurve:
    """Risk curve by explicit enumeration of covariate paths under the strategy.

    Each factor is the DGP's own conditional law in the two-arm trial, taken
    at ``Z = z_Y`` for the ``Y`` and ``L_Y`` factors and ``Z = z_D`` for the
    ``D`` and ``L_D`` factors, with ``C = 0`` and ``R = 1`` throughout.
    """
    return RiskCurve(ArmPair(*arm), _intervened_curve(dgp, arm, four_arm=False))


def four_arm_risk(dgp: DgpSpec, arm) -> RiskCurve:
    """Counterfactual risk in the four-arm trial, setting ``Z_Y``, ``Z_D``, ``C̄ = 0`` and ``R̄ = 1``.

    Equals `exact_truth` whenever the dismissible component conditions hold
    for the DGP.
    """
    return RiskCurve(ArmPair(*arm), _intervened_curve(dgp, arm, four_arm=True))


class DgpLaws:
    """The DGP's observed-data conditionals in the two-arm trial, as a law set.

    Satisfies the interface `separable.estimators.evaluate_g_formula` expects,
    so exact laws and fitted models go through the same code.
    """

    def __init__(self, dgp: DgpSpec):
        if not dgp.discrete:
            raise DgpError("exact laws need discrete covariates")
        self.dgp = dgp
        self.K = dgp.K
        self.schema = dgp.schema
        self.codec = HistoryCodec(dgp.schema, dgp.K)

    def p_z(self, z: int) -> float:
        return self.dgp.p_z if z == 1 else 1 - self.dgp.p_z

    def _state(self, ctx, z, t):
        """State rows carrying the context's history, adherent and event-free before ``t``."""
        st = _State(self.schema, self.K, ctx.m)
        st.zy[:] = z
        st.zd[:] = z
        for name, v in ctx.baseline.items():
            st.base[name] = np.asarray(v, dtype=np.float64)
        for name, v in ctx.tv.items():
            cols = v.shape[1]
            st.tv[name][:, :cols] = v
        for j in range(1, t):
            st.flags["C"][:, j - 1] = 0
            st.flags["R"][:, j - 1] = 1
            st.flags["D"][:, j - 1] = 0
            st.flags["Y"][:, j - 1] = 0
        return st

    def hazard(self, role, z, t, ctx, missing="error"):
        st = self._state(ctx, z, t)
        st.flags["C"][:, t - 1] = 0
        st.flags["R"][:, t - 1] = 1
        rows = np.arange(ctx.m)
        if role == "D":
            return _bernoulli(self.dgp, "D", t, st.env(rows, t, {"C": t, "R": t, "D": t - 1, "Y": t - 1}, t - 1), ctx.m, strict=False)
        if role == "Y":
            st.flags["D"][:, t - 1] = 0
            return _bernoulli(self.dgp, "Y", t, st.env(rows, t, {"C": t, "R": t, "D": t, "Y": t - 1}, t - 1), ctx.m, strict=False)
        raise ValueError(f"no hazard for role {role!r}")

    def propensity(self, z, t, ctx, missing="error"):
        st = self._state(ctx, z, t)
        rows = np.arange(ctx.m)
        pc = _bernoulli(self.dgp, "C", t, st.env(rows, t, {"C": t - 1, "R": t - 1, "D": t - 1, "Y": t - 1}, t - 1), ctx.m, strict=False)
        st.flags["C"][:, t - 1] = 0
        pr = _bernoulli(self.dgp, "R", t, st.env(rows, t, {"C": t, "R": t - 1, "D": t - 1, "Y": t - 1}, t - 1), ctx.m, strict=False)
        return (1 - pc) * pr

    def law(self, role, z, s, ctx, missing="error"):
        covs = self.codec.covariates(s, role)
        m = ctx.m
        if not covs:
            return np.ones((m, 1))
        # the conditioning event includes C_s = D_s = Y_s = 0 and R̄_s = 1
        st = self._state(ctx, z, s + 1)
        if role == "L_Y" and ctx.ld:
            for name, v in ctx.ld.items():
                if s == 0:
                    st.base[name] = np.asarray(v, dtype=np.float64)
                else:
                    st.tv[name][:, s - 1] = v
        group = self.schema.baseline if s == 0 else self.schema.time_varying
        before = [c.name for c in group[: group.index(covs[0])]]
        radix = [c.n_levels for c in covs]
        total = math.prod(radix)
        codes = np.arange(total)
        out = np.ones((m, total))
        # iterate over block codes; each is a joint assignment of the block
        levels = self.codec.decode_block(s, role, codes)
        rows = np.arange(m)
        for idx in range(total):
            drawn = set(before)
            for cov in covs:
                env = st.env(rows, s, s, lambda name, drawn=drawn: s if name in drawn else s - 1)
                probs = _categorical(self.dgp, cov, s, env, m, strict=False)
                lev = int(levels[cov.name][idx])
                out[:, idx] *= probs[:, lev]
                if s == 0:
                    st.base[cov.name] = np.full(m, float(lev))
                else:
                    st.tv[cov.name][:, s - 1] = float(lev)
                drawn.add(cov.name)
        return out


# ---------------------------------------------------------------------------
# Reference processes


def two_period_dgp() -> DgpSpec:
    """Two-interval process with one binary covariate in the ``L_D`` block.

    Risks by interval 2 under the four strategies are 0.72 (1,1), 0.74 (1,0),
    0.62 (0,1) and 0.66 (0,0) to two decimals.
    """
    schema = CovariateSchema(
        [Covariate("L", "baseline", "binary", block="L_D")],
        [Covariate("L", "time_varying", "binary", block="L_D")],
    )
    laws = {
        "baseline": {"L": "1/2"},
        "C": {"1": "1/50", "2": "(1 + L[1]) / 20"},
        "R": {"1": "4/5", "2": "(3 + L[1]) / 5"},
        "D": "where(ZD == R[k], (1 + L[k-1]) / 20, (1 + L[k-1]) / 30)",
        "Y": "where(ZY == R[k], (10 + 2*L[k-1]) / 20, (10 - 2*L[k-1]) / 20)",
        "time_varying": {"L": "where(ZD == R[k], (2 + L[k-1]) / 4, (1 + L[k-1]) / 4)"},
    }
    return DgpSpec(1, schema, laws, 0.5, "two_period")


def two_period_dag() -> Dag:
    """Extended causal graph of `two_period_dgp` in the strategy-centered encoding."""
    edges = [
        ("Z_Y", "Y_1"), ("Z_Y", "Y_2"),
        ("Z_D", "D_1"), ("Z_D", "L_D_1"), ("Z_D", "D_2"),
        ("R_1", "D_1"), ("R_1", "Y_1"), ("R_1", "L_D_1"),
        ("R_2", "D_2"), ("R_2", "Y_2"),
        ("L_D_0", "D_1"), ("L_D_0", "Y_1"), ("L_D_0", "L_D_1"),
        ("L_D_1", "C_2"), ("L_D_1", "R_2"), ("L_D_1", "D_2"), ("L_D_1", "Y_2"),
        ("C_1", "R_1"), ("C_1", "Y_1"), ("C_1", "D_1"), ("C_1", "L_D_1"), ("C_1", "C_2"),
        ("C_2", "R_2"), ("C_2", "Y_2"), ("C_2", "D_2"),
        ("D_1", "Y_1"), ("D_1", "L_D_1"), ("D_1", "D_2"), ("D_1", "C_2"), ("D_1", "R_2"),
        ("D_2", "Y_2"),
        ("Y_1", "C_2"), ("Y_1", "Y_2"), ("Y_1", "D_2"), ("Y_1", "R_2"), ("Y_1", "L_D_1"),
    ]
    return Dag.from_edges(edges, K=1)


def blood_pressure_trial_dgp(K: int = 29) -> DgpSpec:
    """Synthetic monthly follow-up with a continuous blood-pressure covariate.

    Four baseline covariates (three binary, log mean arterial pressure) and
    the current log pressure as the only time-varying covariate, placed in
    the ``L_D`` block so ``L_Y`` is empty. Adherence declines over time,
    faster under ``Z = 1``. Intended for the weighted ``Y`` route with
    pooled logistic models (see `blood_pressure_model_spec`).
    """
    schema = CovariateSchema(
        [
            Covariate("female", "baseline", "binary"),
            Covariate("smoker", "baseline", "binary"),
            Covariate("ckd", "baseline", "binary"),
            Covariate("logmap", "baseline", "continuous"),
        ],
        [Covariate("logmap", "time_varying", "continuous")],
    )
    laws = {
        "baseline": {"female": "0.4", "smoker": "0.1", "ckd": "0.45", "logmap": {"normal": [4.5, 0.1]}},
        "time_varying": {"logmap": {"normal": ["4.5 + 0.5 * (logmap[k-1] - 4.5) - 0.03 * ZD * R[k]", 0.07]}},
        "C": "expit(-5.2 + 0.01 * k)",
        "R": {"1": "0.97", "default": "expit(4.2 - 0.03 * k - 0.5 * Z)"},
        "D": "expit(-6.4 + 0.02 * k + 0.5 * ckd[0] - 0.3 * female[0] + 0.3 * smoker[0] - 0.4 * ZD * R[k])",
        "Y": "expit(-5.6 + 0.01 * k + 0.8 * ckd[0] + 3 * (logmap[k-1] - 4.5) + 0.6 * ZY * R[k])",
    }
    return DgpSpec(K, schema, laws, 0.5, f"blood_pressure_K{K}")


def blood_pressure_model_spec() -> dict:
    """Arm-stratified pooled logistic models with a cubic in time.

    At ``k = 0`` the most recent pressure is the baseline measurement.
    """
    terms = ["t", "t2", "t3", "l0_female", "l0_smoker", "l0_ckd", "l_logmap"]
    base = {"kind": "logistic", "terms": terms, "strata": "by_z", "time_overrides": {"0": {"l_logmap": "l0_logmap"}}}
    return {role: dict(base) for role in ("Y", "D", "C", "R")}


def random_dgp(K: int = 1, seed: int = 0, n_ld: int = 1, n_ly: int = 0, baseline: bool = True, censoring: bool = True) -> DgpSpec:
    """Random logistic-form process with binary covariates.

    Coefficients are drawn so every probability stays inside ``[0.03, 0.97]``;
    the laws depend on ``Z``, adherence and the latest covariates, so the
    arms differ and the cross-arm weight ratios are nontrivial.
    """
    rng = np.random.default_rng(seed)
    ld = [f"a{i}" for i in range(n_ld)]
    ly = [f"b{i}" for i in range(n_ly)]
    base = []
    if baseline:
        base = [Covariate(nm, "baseline", "binary", block="L_D") for nm in ld] + [Covariate(nm, "baseline", "binary", block="L_Y") for nm in ly]
    tv = [Covariate(nm, "time_varying", "binary", block="L_D") for nm in ld] + [Covariate(nm, "time_varying", "binary", block="L_Y") for nm in ly]
    names = ld + ly

    def coef(scale=1.0):
        return round(float(rng.normal(0, scale)), 4)

    def linear(prev_names, extra=""):
        parts = [f"{coef(0.5)}", f"{coef(0.8)} * Z", f"{coef(0.6)} * R[k]" if extra == "r" else "0"]
        for nm in prev_names:
            parts.append(f"{coef(0.8)} * {nm}[k-1]")
        return "min(max(expit(" + " + ".join(parts) + "), 0.03), 0.97)"

    def tv_linear(nm, earlier):
        lag = f"{nm}[k-1]" if baseline else f"({nm}[k-1] if k > 1 else 0)"
        parts = [f"{coef(0.5)}", f"{coef(0.8)} * Z", f"{coef(0.6)} * R[k]", f"{coef(0.8)} * {lag}"]
        for e in earlier:
            parts.append(f"{coef(0.8)} * {e}[k]")
        return "min(max(expit(" + " + ".join(parts) + "), 0.03), 0.97)"

    prev = names if baseline else []
    laws = {
        "baseline": {},
        "time_varying": {},
    }
    earlier = []
    for c in base:
        parts = [f"{coef(0.5)}"] + [f"{coef(0.8)} * {e}[0]" for e in earlier]
        laws["baseline"][c.name] = "min(max(expit(" + " + ".join(parts) + "), 0.05), 0.95)"
        earlier.append(c.name)
    laws["Y"] = {"1": linear(prev, "r"), "default": linear(names, "r")}
    laws["D"] = {"1": linear(prev, "r"), "default": linear(names, "r")}
    if censoring:
        laws["C"] = {"1": f"{round(float(rng.uniform(0.01, 0.08)), 4)}", "default": linear(names).replace("0.03), 0.97", "0.01), 0.12")}
    laws["R"] = {"1": f"{round(float(rng.uniform(0.7, 0.95)), 4)}", "default": linear(names).replace("0.03), 0.97", "0.55), 0.97")}
    earlier = []
    for c in tv:
        laws["time_varying"][c.name] = tv_linear(c.name, earlier)
        earlier.append(c.name)
    return DgpSpec(K, CovariateSchema(base, tv), laws, round(float(rng.uniform(0.35, 0.65)), 4), f"random_K{K}_seed{seed}")


# ---------------------------------------------------------------------------
# Misspecification


def misspecified_spec(base_spec: Mapping, time: int = 1) -> dict:
    """Copy of ``base_spec`` whose ``L_D`` (and ``L_Y``) law at ``time`` is a single marginal row.

    The coarse law pools both arms, drops adherence from the risk set and
    ignores every earlier covariate.
    """
    spec = copy.deepcopy(dict(base_spec))
    coarse = {"kind": "table", "key": [], "strata": "pooled", "require_adherence": False}
    for role in ("L_D", "L_Y"):
        if role not in spec:
            continue
        current = spec[role]
        if isinstance(current, Mapping) and any(k in current for k in ("kind", "terms", "key", "strata")):
            spec[role] = {"default": current, str(time): coarse}
        else:
            current = dict(current)
            current[str(time)] = coarse
            spec[role] = current
    return spec


def misspecified_nuisance_set(data: TrialDataset, base_spec: Mapping, estimator: str = "all", time: int = 1) -> NuisanceSet:
    return fit_nuisance_set(data, misspecified_spec(base_spec, time), estimator)


# ---------------------------------------------------------------------------
# Coverage experiments


@dataclass
class Scenario:
    """One simulation study cell.

    ``spec`` is a model-spec mapping or one of ``"correct"`` (saturated
    tables) and ``"misspecified"`` (saturated tables with a coarse ``L_1``).
    """

    dgp: DgpSpec
    spec: object = "correct"
    estimators: tuple = ("plug_in", "weighted_y", "one_step")
    n: int = 1000
    replications: int = 200
    bootstraps: int = 200
    level: float = 0.95
    seed: int = 2024
    arms: tuple = ALL_ARMS
    threads: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if self.bootstraps < 2:
            raise ValueError("bootstraps must be at least 2")
        for e in self.estimators:
            if e not in ESTIMATORS:
                raise ValueError(f"unknown estimator {e!r}")
        self.estimators = tuple(self.estimators)
        self.arms = tuple(ArmPair(*a) for a in self.arms)

    def model_spec(self) -> dict:
        if isinstance(self.spec, str):
            base = saturated_spec()
            if self.spec == "correct":
                return base
            if self.spec == "misspecified":
                return misspecified_spec(base)
            raise ValueError(f"unknown scenario spec {self.spec!r}")
        return dict(self.spec)

    def fingerprint(self) -> str:
        payload = {
            "dgp": self.dgp.fingerprint(),
            "spec": self.spec if isinstance(self.spec, str) else json.dumps(self.spec, sort_keys=True, default=str),
            "estimators": list(self.estimators),
            "n": self.n,
            "replications": self.replications,
            "bootstraps": self.bootstraps,
            "level": self.level,
            "seed": self.seed,
            "arms": [list(a) for a in self.arms],
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class CoverageTable:
    """Coverage fractions per ``(estimator, arm)`` with Monte Carlo standard errors."""

    scenario: Scenario
    truth: dict  # arm -> float
    covered: dict  # (estimator, arm) -> int array (replications,), -1 for failed
    estimates: dict  # (estimator, arm) -> float array
    lower: dict
    upper: dict
    failures: dict  # estimator -> count of failed replications
    boot_failures: dict  # estimator -> total failed bootstrap draws
    seconds: float = 0.0

    def coverage(self, estimator, arm) -> float:
        c = self.covered[(estimator, ArmPair(*arm))]
        ok = c >= 0
        return float(c[ok].mean()) if ok.any() else float("nan")

    def mc_se(self, estimator, arm) -> float:
        c = self.covered[(estimator, ArmPair(*arm))]
        ok = c >= 0
        p = c[ok].mean() if ok.any() else float("nan")
        return float(math.sqrt(p * (1 - p) / max(ok.sum(), 1)))

    def bias(self, estimator, arm) -> float:
        arm = ArmPair(*arm)
        e = self.estimates[(estimator, arm)]
        return float(np.nanmean(e) - self.truth[arm])

    def rows(self) -> list:
        out = []
        for e in self.scenario.estimators:
            row = {"estimator": e, "n": self.scenario.n}
            for arm in self.scenario.arms:
                row[arm.label()] = self.coverage(e, arm)
                row[arm.label() + "_se"] = self.mc_se(e, arm)
            row["failed_replications"] = self.failures.get(e, 0)
            out.append(row)
        return out

    def to_csv(self, path=None) -> str:
        """Layout: one row per estimator, one coverage column per arm, then MC SEs."""
        buf = io.StringIO()
        buf.write(f"# scenario={self.scenario.fingerprint()} seed={self.scenario.seed} "
                  f"replications={self.scenario.replications} bootstraps={self.scenario.bootstraps} level={self.scenario.level}\n")
        rows = self.rows()
        fields = list(rows[0].keys())
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.fingerprint(),
            "truth": {a.label(): v for a, v in self.truth.items()},
            "rows": self.rows(),
            "bias": {f"{e}:{a.label()}": self.bias(e, a) for e in self.scenario.estimators for a in self.scenario.arms},
            "boot_failures": self.boot_failures,
            "seconds": self.seconds,
        }


def _replication(scenario: Scenario, r: int, spec: dict):
    from .inference import BootstrapConfig, bootstrap_estimates

    data = sample_trial(scenario.dgp, scenario.n, (scenario.seed, r))
    cfg = BootstrapConfig(scenario.bootstraps, scenario.level, (scenario.seed, r))
    return bootstrap_estimates(data, spec, scenario.arms, scenario.estimators, cfg, strict=False)


def run_coverage_experiment(scenario: Scenario, progress: Callable | None = None) -> CoverageTable:
    """Sample, fit, estimate and bootstrap each replication; tabulate coverage of the exact truth.

    Replication ``r`` draws its data from stream ``(seed, r)`` and bootstrap
    draw ``b`` from ``(seed, r, b)``, so results do not depend on execution
    order. A replication whose point estimate or interval cannot be computed
    for an estimator counts as a failure for that estimator.
    """
    start = _time.perf_counter()
    truth = {arm: exact_truth(scenario.dgp, arm).terminal for arm in scenario.arms}
    spec = scenario.model_spec()
    R = scenario.replications
    keys = [(e, a) for e in scenario.estimators for a in scenario.arms]
    covered = {k: np.full(R, -1, dtype=np.int64) for k in keys}
    est = {k: np.full(R, np.nan) for k in keys}
    lo = {k: np.full(R, np.nan) for k in keys}
    hi = {k: np.full(R, np.nan) for k in keys}
    failures = {e: 0 for e in scenario.estimators}
    boot_fail = {e: 0 for e in scenario.estimators}

    def record(r, result):
        for e in scenario.estimators:
            res = result.get(e)
            if res is None or res.error is not None:
                failures[e] += 1
                continue
            boot_fail[e] += res.failures
            for arm in scenario.arms:
                k = (e, arm)
                p = res.point[arm][-1]
                l, u = res.lower[arm][-1], res.upper[arm][-1]
                est[k][r], lo[k][r], hi[k][r] = p, l, u
                covered[k][r] = int(l <= truth[arm] <= u)
        if progress:
            progress(r)

    if scenario.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(scenario.threads) as pool:
            for r, result in enumerate(pool.map(lambda r: _replication(scenario, r, spec), range(R))):
                record(r, result)
    else:
        for r in range(R):
            record(r, _replication(scenario, r, spec))
    return CoverageTable(scenario, truth, covered, est, lo, hi, failures, boot_fail, _time.perf_counter() - start)
