"""Longitudinal trial data under the strategy-centered encoding.

A trial follows ``n`` individuals over ``K + 1`` discrete intervals. Each
individual has an initiated treatment ``z``, baseline covariates ``L_0`` and,
for every interval ``k = 1..K+1``, the flags

* ``c_k`` censoring (loss to follow-up),
* ``r_k`` adherence, ``r_k = 1`` when the treatment taken equals ``z``,
* ``d_k`` competing event,
* ``y_k`` event of interest,

followed by the time-varying covariates ``L_k``. Within an interval the order
is ``C_k, R_k, D_k, Y_k, L_k``. All four flags are absorbing.

`TrialDataset` stores the cohort column-wise. Flags are ``int8`` arrays of
shape ``(n, K+1)`` holding ``0``, ``1`` or ``ABSENT`` (-1). Covariates are
``float64`` arrays with ``NaN`` for absent values; discrete covariates hold
their integer level codes. Optional case weights make the dataset a weighted
sample, which is how exact enumerations and bootstrap resamples are
represented without copying trajectories.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

__all__ = [
    "ABSENT",
    "ArmPair",
    "ALL_ARMS",
    "Covariate",
    "CovariateSchema",
    "DataError",
    "HistoryCodec",
    "IndividualRecord",
    "RiskSetFilter",
    "TreatmentCenteredRecord",
    "TrialDataset",
    "Violation",
    "decode_treatment_centered",
    "encode_strategy_centered",
    "ingest_csv",
    "risk_set",
    "validate_monotone",
    "write_csv",
]

ABSENT = -1
FLAGS = ("c", "r", "d", "y")


class DataError(ValueError):
    """Raised when input data cannot be turned into a valid `TrialDataset`.

    The ``violations`` attribute lists every problem found, so callers can
    report them all at once.
    """

    def __init__(self, message: str, violations: Sequence["Violation"] = ()):
        super().__init__(message)
        self.violations = list(violations)


class ArmPair(NamedTuple):
    """Treatment components ``(z_Y, z_D)`` defining one arm of the four-arm trial."""

    z_y: int
    z_d: int

    def label(self) -> str:
        return f"({self.z_y},{self.z_d})"

    @classmethod
    def parse(cls, text) -> "ArmPair":
        """Parse ``"1,0"``, ``"(1,0)"``, ``"10"`` or a 2-sequence."""
        if isinstance(text, (tuple, list)):
            zy, zd = text
        else:
            digits = [ch for ch in str(text) if ch in "01"]
            if len(digits) != 2:
                raise ValueError(f"cannot parse arm {text!r}")
            zy, zd = digits
        arm = cls(int(zy), int(zd))
        if arm.z_y not in (0, 1) or arm.z_d not in (0, 1):
            raise ValueError(f"arm components must be 0 or 1, got {text!r}")
        return arm


ALL_ARMS = (ArmPair(1, 1), ArmPair(1, 0), ArmPair(0, 1), ArmPair(0, 0))


# ---------------------------------------------------------------------------
# Schema


@dataclass(frozen=True)
class Covariate:
    """One measured covariate.

    Parameters
    ----------
    name : str
        Column stem. Baseline columns are ``l0_<name>``, time-varying columns
        ``l_<name>``.
    role : {"baseline", "time_varying"}
    kind : {"binary", "categorical", "continuous"}
    levels : tuple of str
        Raw labels for discrete kinds. The stored value is the index of the
        label. Binary covariates default to ``("0", "1")``.
    block : {"L_D", "L_Y"}
        Which block of the partition ``L = (L_D, L_Y)`` the covariate belongs to.
    """

    name: str
    role: str = "time_varying"
    kind: str = "binary"
    levels: tuple = ()
    block: str = "L_D"

    def __post_init__(self):
        if self.role not in ("baseline", "time_varying"):
            raise ValueError(f"covariate {self.name}: unknown role {self.role!r}")
        if self.kind not in ("binary", "categorical", "continuous"):
            raise ValueError(f"covariate {self.name}: unknown kind {self.kind!r}")
        if self.block not in ("L_D", "L_Y"):
            raise ValueError(f"covariate {self.name}: unknown block {self.block!r}")
        levels = tuple(str(v) for v in self.levels)
        if self.kind == "binary":
            levels = levels or ("0", "1")
            if len(levels) != 2:
                raise ValueError(f"binary covariate {self.name} needs 2 levels")
        elif self.kind == "categorical":
            if len(levels) < 1:
                raise ValueError(f"categorical covariate {self.name} needs levels")
        elif levels:
            raise ValueError(f"continuous covariate {self.name} cannot have levels")
        if len(set(levels)) != len(levels):
            raise ValueError(f"covariate {self.name}: duplicate levels")
        object.__setattr__(self, "levels", levels)

    @property
    def discrete(self) -> bool:
        return self.kind != "continuous"

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def column(self) -> str:
        return ("l0_" if self.role == "baseline" else "l_") + self.name

    def to_dict(self) -> dict:
        out = {"name": self.name, "kind": self.kind, "block": self.block}
        if self.kind == "categorical" or (self.kind == "binary" and self.levels != ("0", "1")):
            out["levels"] = list(self.levels)
        return out


class CovariateSchema:
    """Ordered collection of baseline and time-varying covariates.

    Within each role, covariates are kept in the order given, with the
    ``L_D`` block first and the ``L_Y`` block second. That order defines the
    sampling order inside an interval and the mixed-radix history codes.
    """

    def __init__(self, baseline: Iterable[Covariate] = (), time_varying: Iterable[Covariate] = ()):
        base = [c if c.role == "baseline" else _with_role(c, "baseline") for c in baseline]
        tv = [c if c.role == "time_varying" else _with_role(c, "time_varying") for c in time_varying]
        self.baseline = tuple(_block_sorted(base))
        self.time_varying = tuple(_block_sorted(tv))
        names = [c.column for c in self.baseline + self.time_varying]
        if len(set(names)) != len(names):
            raise ValueError("duplicate covariate names in schema")

    @classmethod
    def from_dict(cls, spec: Mapping) -> "CovariateSchema":
        def build(items, role):
            out = []
            for item in items or ():
                item = dict(item)
                item.setdefault("kind", "binary")
                out.append(
                    Covariate(
                        name=item["name"],
                        role=role,
                        kind=item["kind"],
                        levels=tuple(item.get("levels", ())),
                        block=item.get("block", "L_D"),
                    )
                )
            return out

        unknown = set(spec) - {"baseline", "time_varying"}
        if unknown:
            raise ValueError(f"unknown schema keys: {sorted(unknown)}")
        return cls(build(spec.get("baseline"), "baseline"), build(spec.get("time_varying"), "time_varying"))

    def to_dict(self) -> dict:
        return {
            "baseline": [c.to_dict() for c in self.baseline],
            "time_varying": [c.to_dict() for c in self.time_varying],
        }

    def __eq__(self, other):
        return isinstance(other, CovariateSchema) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"CovariateSchema(baseline={[c.name for c in self.baseline]}, time_varying={[c.name for c in self.time_varying]})"

    @property
    def all_discrete(self) -> bool:
        return all(c.discrete for c in self.baseline + self.time_varying)

    def block(self, role: str, block: str) -> tuple:
        group = self.baseline if role == "baseline" else self.time_varying
        return tuple(c for c in group if c.block == block)

    def get(self, role: str, name: str) -> Covariate:
        group = self.baseline if role == "baseline" else self.time_varying
        for cov in group:
            if cov.name == name:
                return cov
        raise KeyError(f"no {role} covariate named {name!r}")

    def fingerprint(self) -> str:
        return hashlib.sha256(repr(self.to_dict()).encode()).hexdigest()[:16]


def _with_role(cov: Covariate, role: str) -> Covariate:
    return Covariate(cov.name, role, cov.kind, cov.levels, cov.block)


def _block_sorted(covs):
    return [c for c in covs if c.block == "L_D"] + [c for c in covs if c.block == "L_Y"]


# ---------------------------------------------------------------------------
# History codes


class HistoryCodec:
    """Mixed-radix integer codes for discrete covariate histories.

    The code of ``L_s`` is ``ld * n_ly(s) + ly`` where ``ld`` and ``ly`` are
    the mixed-radix codes of the ``L_D`` and ``L_Y`` blocks at time ``s``
    (time 0 uses the baseline covariates). The history code is built as
    ``h_s = h_{s-1} * radix(s) + code(L_s)`` with ``h_{-1} = 0``, so the set
    of histories at time ``s`` is ``range(n_histories(s))``.
    """

    def __init__(self, schema: CovariateSchema, K: int):
        if not schema.all_discrete:
            raise ValueError("history codes need every covariate to be discrete")
        self.schema = schema
        self.K = K
        self._blocks = {
            0: (schema.block("baseline", "L_D"), schema.block("baseline", "L_Y")),
            1: (schema.block("time_varying", "L_D"), schema.block("time_varying", "L_Y")),
        }
        total = 1
        for s in range(K + 1):
            total *= self.radix(s)
        if total >= 2**62:
            raise ValueError("covariate history space too large to enumerate")

    def covariates(self, s: int, block: str) -> tuple:
        ld, ly = self._blocks[0 if s == 0 else 1]
        return ld if block == "L_D" else ly

    def block_radix(self, s: int, block: str) -> int:
        return math.prod(c.n_levels for c in self.covariates(s, block))

    def radix(self, s: int) -> int:
        return self.block_radix(s, "L_D") * self.block_radix(s, "L_Y")

    def n_histories(self, s: int) -> int:
        """Number of distinct histories ``L̄_s``; ``s = -1`` gives 1."""
        return math.prod(self.radix(t) for t in range(s + 1))

    def encode_block(self, s: int, block: str, values: Mapping[str, np.ndarray], n: int | None = None) -> np.ndarray:
        """Mixed-radix code of one block; ``n`` sizes the all-zero code of an empty block."""
        code = None
        for cov in self.covariates(s, block):
            v = np.asarray(values[cov.name], dtype=np.float64)
            part = np.where(np.isnan(v), -1, v).astype(np.int64)
            code = part if code is None else code * cov.n_levels + part
        if code is None:
            if n is None:
                n = len(next(iter(values.values()))) if values else 0
            return np.zeros(n, dtype=np.int64)
        return code

    def decode_block(self, s: int, block: str, codes: np.ndarray) -> dict:
        codes = np.asarray(codes, dtype=np.int64)
        out = {}
        for cov in reversed(self.covariates(s, block)):
            out[cov.name] = (codes % cov.n_levels).astype(np.float64)
            codes = codes // cov.n_levels
        return out

    def split(self, hist: np.ndarray, s: int) -> tuple:
        """Split history codes at time ``s`` into ``(h_{s-1}, ld_s, ly_s)``."""
        hist = np.asarray(hist, dtype=np.int64)
        nly = self.block_radix(s, "L_Y")
        nld = self.block_radix(s, "L_D")
        prev, code = np.divmod(hist, nly * nld)
        ld, ly = np.divmod(code, nly)
        return prev, ld, ly

    def join(self, prev, ld, ly, s: int) -> np.ndarray:
        nly = self.block_radix(s, "L_Y")
        nld = self.block_radix(s, "L_D")
        return (np.asarray(prev, dtype=np.int64) * nld + ld) * nly + ly

    def decode(self, hist: np.ndarray, s: int) -> tuple:
        """Decode codes of ``L̄_s`` into ``(baseline, time_varying)`` value dicts.

        ``baseline`` maps names to arrays of shape ``(m,)`` and
        ``time_varying`` maps names to arrays of shape ``(m, s)`` holding
        ``L_1..L_s``.
        """
        hist = np.asarray(hist, dtype=np.int64)
        m = hist.shape[0]
        tv = {c.name: np.empty((m, max(s, 0))) for c in self.schema.time_varying}
        for t in range(s, 0, -1):
            hist, ld, ly = self.split(hist, t)
            for block, codes in (("L_D", ld), ("L_Y", ly)):
                for name, vals in self.decode_block(t, block, codes).items():
                    tv[name][:, t - 1] = vals
        base = {}
        if s >= 0:
            _, ld, ly = self.split(hist, 0)
            base.update(self.decode_block(0, "L_D", ld))
            base.update(self.decode_block(0, "L_Y", ly))
        return base, tv


# ---------------------------------------------------------------------------
# Records


@dataclass
class IndividualRecord:
    """One individual in strategy-centered form.

    ``c, r, d, y`` are sequences of length ``K+1`` with entries 0, 1 or None.
    ``l`` holds one mapping of covariate values per interval, or None when the
    covariates are absent. Values use raw labels for discrete covariates.
    """

    id: str
    z: int
    baseline: dict
    c: list
    r: list
    d: list
    y: list
    l: list = field(default_factory=list)


@dataclass
class TreatmentCenteredRecord:
    """One individual in treatment-centered form: ``a_k`` replaces ``z`` and ``r_k``."""

    id: str
    baseline: dict
    a: list
    c: list
    d: list
    y: list
    l: list = field(default_factory=list)


@dataclass(frozen=True)
class Violation:
    id: str
    time: int
    rule: str
    detail: str = ""

    def __str__(self):
        return f"id={self.id} time={self.time}: {self.rule}" + (f" ({self.detail})" if self.detail else "")


# ---------------------------------------------------------------------------
# Dataset


class TrialDataset:
    """Immutable column-wise cohort.

    Parameters
    ----------
    ids : sequence of str
    z : array of int, shape (n,)
    c, r, d, y : arrays of int, shape (n, K+1)
        Flags per interval, ``ABSENT`` for missing entries.
    baseline : dict of name -> array (n,)
    time_varying : dict of name -> array (n, K+1)
        Values of ``L_1..L_{K+1}``; ``NaN`` when absent.
    schema : CovariateSchema
    weights : array (n,), optional
        Nonnegative case weights. Defaults to ones.
    """

    def __init__(self, ids, z, c, r, d, y, baseline, time_varying, schema: CovariateSchema, weights=None):
        self.ids = np.asarray(ids, dtype=object)
        self.z = np.asarray(z, dtype=np.int8)
        n = self.z.shape[0]
        flags = [np.asarray(a, dtype=np.int8) for a in (c, r, d, y)]
        if flags[0].ndim != 2 or flags[0].shape[0] != n:
            raise DataError("flag arrays must have shape (n, K+1)")
        H = flags[0].shape[1]
        if H < 1:
            raise DataError("horizon must be at least 1")
        for a in flags:
            if a.shape != (n, H):
                raise DataError("flag arrays must share shape (n, K+1)")
        self.c, self.r, self.d, self.y = flags
        self.schema = schema
        self.baseline = {}
        for cov in schema.baseline:
            if cov.name not in baseline:
                raise DataError(f"missing baseline covariate {cov.name!r}")
            self.baseline[cov.name] = np.asarray(baseline[cov.name], dtype=np.float64).reshape(n)
        self.time_varying = {}
        for cov in schema.time_varying:
            if cov.name not in time_varying:
                raise DataError(f"missing time-varying covariate {cov.name!r}")
            self.time_varying[cov.name] = np.asarray(time_varying[cov.name], dtype=np.float64).reshape(n, H)
        if weights is None:
            self.weights = np.ones(n)
        else:
            self.weights = np.asarray(weights, dtype=np.float64).reshape(n)
            if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
                raise DataError("case weights must be finite and nonnegative")
        for a in [self.z, self.weights, *flags, *self.baseline.values(), *self.time_varying.values()]:
            a.setflags(write=False)

    # basic shape -----------------------------------------------------------
    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def horizon(self) -> int:
        """Number of follow-up intervals, ``K + 1``."""
        return self.c.shape[1]

    @property
    def K(self) -> int:
        return self.horizon - 1

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"TrialDataset(n={self.n}, horizon={self.horizon}, schema={self.schema!r})"

    def flag(self, name: str, k: int) -> np.ndarray:
        """Flag column for interval ``k`` (1-based); ``k = 0`` gives zeros."""
        if k == 0:
            return np.zeros(self.n, dtype=np.int8)
        return getattr(self, name)[:, k - 1]

    def covariate(self, name: str, s: int) -> np.ndarray:
        """Values of covariate ``name`` at time ``s``; ``s = 0`` reads the baseline."""
        if s == 0:
            return self.baseline[name]
        return self.time_varying[name][:, s - 1]

    # derived views ---------------------------------------------------------
    def take(self, idx) -> "TrialDataset":
        idx = np.asarray(idx)
        return TrialDataset(
            self.ids[idx],
            self.z[idx],
            self.c[idx],
            self.r[idx],
            self.d[idx],
            self.y[idx],
            {k: v[idx] for k, v in self.baseline.items()},
            {k: v[idx] for k, v in self.time_varying.items()},
            self.schema,
            self.weights[idx],
        )

    def reweight(self, weights) -> "TrialDataset":
        """Same trajectories with case weights ``self.weights * weights``.

        Weight-independent caches (risk sets, history codes) are shared, so a
        bootstrap resample expressed as multiplicities costs no recomputation.
        """
        new = TrialDataset.__new__(TrialDataset)
        new.__dict__.update({k: v for k, v in self.__dict__.items() if k != "weights"})
        w = self.weights * np.asarray(weights, dtype=np.float64)
        if np.any(w < 0):
            raise DataError("case weights must be nonnegative")
        w.setflags(write=False)
        new.weights = w
        return new

    @cached_property
    def phi(self) -> np.ndarray:
        """``phi[:, k]`` is ``C_k = 0`` and ``R̄_k = 1`` (without the ``Z`` part)."""
        out = np.ones((self.n, self.horizon + 1), dtype=bool)
        out[:, 1:] = np.cumprod((self.c == 0) & (self.r == 1), axis=1).astype(bool)
        return out

    @cached_property
    def free(self) -> np.ndarray:
        """``free[:, k]`` is ``C̄_k = D̄_k = Ȳ_k = 0``."""
        out = np.ones((self.n, self.horizon + 1), dtype=bool)
        ok = (self.c == 0) & (self.d == 0) & (self.y == 0)
        out[:, 1:] = np.cumprod(ok, axis=1).astype(bool)
        return out

    @cached_property
    def uncensored(self) -> np.ndarray:
        out = np.ones((self.n, self.horizon + 1), dtype=bool)
        out[:, 1:] = np.cumprod(self.c == 0, axis=1).astype(bool)
        return out

    @cached_property
    def codec(self) -> HistoryCodec | None:
        if not self.schema.all_discrete:
            return None
        return HistoryCodec(self.schema, self.K)

    @cached_property
    def history_codes(self) -> np.ndarray:
        """Codes of ``L̄_s`` for ``s = 0..K``, shape ``(n, K+1)``; -1 where unobserved."""
        codec = self.codec
        if codec is None:
            raise ValueError("history codes need every covariate to be discrete")
        out = np.full((self.n, self.K + 1), -1, dtype=np.int64)
        h = np.zeros(self.n, dtype=np.int64)
        for s in range(self.K + 1):
            vals = {name: self.covariate(name, s) for name in (self.baseline if s == 0 else self.time_varying)}
            ld = codec.encode_block(s, "L_D", vals, self.n)
            ly = codec.encode_block(s, "L_Y", vals, self.n)
            h = codec.join(h, ld, ly, s)
            ok = self.free[:, s] & (ld >= 0) & (ly >= 0)
            if s > 0:
                ok &= out[:, s - 1] >= 0
            out[:, s] = np.where(ok, h, -1)
        return out

    # record view -----------------------------------------------------------
    def records(self) -> list:
        """Materialize `IndividualRecord` objects (raw covariate labels)."""
        out = []
        for i in range(self.n):
            base = {c.name: _label(c, self.baseline[c.name][i]) for c in self.schema.baseline}
            ls = []
            for k in range(self.horizon):
                vals = {c.name: _label(c, self.time_varying[c.name][i, k]) for c in self.schema.time_varying}
                ls.append(None if all(v is None for v in vals.values()) else vals)
            out.append(
                IndividualRecord(
                    id=str(self.ids[i]),
                    z=int(self.z[i]),
                    baseline=base,
                    c=_flags_to_list(self.c[i]),
                    r=_flags_to_list(self.r[i]),
                    d=_flags_to_list(self.d[i]),
                    y=_flags_to_list(self.y[i]),
                    l=ls,
                )
            )
        return out

    @classmethod
    def from_records(cls, records: Sequence[IndividualRecord], schema: CovariateSchema, horizon: int | None = None):
        """Build a dataset from `IndividualRecord` objects.

        Covariate values are raw labels (or numbers for continuous covariates).
        """
        records = list(records)
        if horizon is None:
            if not records:
                raise DataError("cannot infer the horizon of an empty record list")
            horizon = len(records[0].c)
        n = len(records)
        arrays = {f: np.full((n, horizon), ABSENT, dtype=np.int8) for f in FLAGS}
        base = {c.name: np.full(n, np.nan) for c in schema.baseline}
        tv = {c.name: np.full((n, horizon), np.nan) for c in schema.time_varying}
        z = np.zeros(n, dtype=np.int8)
        problems = []
        for i, rec in enumerate(records):
            if rec.z not in (0, 1):
                problems.append(Violation(str(rec.id), 0, "non-binary flag", f"z={rec.z!r}"))
            z[i] = 1 if rec.z == 1 else 0
            for f in FLAGS:
                seq = list(getattr(rec, f))
                if len(seq) != horizon:
                    raise DataError(f"record {rec.id}: {f} has length {len(seq)}, expected {horizon}")
                for k, v in enumerate(seq):
                    if v is None:
                        continue
                    if v not in (0, 1):
                        problems.append(Violation(str(rec.id), k + 1, "non-binary flag", f"{f}={v!r}"))
                        continue
                    arrays[f][i, k] = v
            for cov in schema.baseline:
                base[cov.name][i] = _code(cov, rec.baseline.get(cov.name), rec.id, 0, problems)
            ls = list(rec.l) + [None] * (horizon - len(rec.l))
            for k, vals in enumerate(ls[:horizon]):
                if vals is None:
                    continue
                for cov in schema.time_varying:
                    tv[cov.name][i, k] = _code(cov, vals.get(cov.name), rec.id, k + 1, problems)
        if problems:
            raise DataError(f"{len(problems)} invalid values", problems)
        return cls([str(r.id) for r in records], z, arrays["c"], arrays["r"], arrays["d"], arrays["y"], base, tv, schema)

    def fingerprint(self) -> str:
        """Hash of the dataset contents, stable across processes."""
        h = hashlib.sha256()
        h.update(self.schema.fingerprint().encode())
        for a in [self.z, self.c, self.r, self.d, self.y, self.weights]:
            h.update(np.ascontiguousarray(a).tobytes())
        for name in sorted(self.baseline):
            h.update(np.ascontiguousarray(self.baseline[name]).tobytes())
        for name in sorted(self.time_varying):
            h.update(np.ascontiguousarray(self.time_varying[name]).tobytes())
        h.update("\x00".join(map(str, self.ids)).encode())
        return h.hexdigest()[:16]

    def equals(self, other: "TrialDataset") -> bool:
        """Exact equality of contents, treating NaN as equal to NaN."""
        if self.schema != other.schema or self.n != other.n or self.horizon != other.horizon:
            return False
        same = [np.array_equal(getattr(self, f), getattr(other, f)) for f in ("z", "c", "r", "d", "y", "weights")]
        same += [np.array_equal(self.baseline[k], other.baseline[k], equal_nan=True) for k in self.baseline]
        same += [np.array_equal(self.time_varying[k], other.time_varying[k], equal_nan=True) for k in self.time_varying]
        return all(same) and list(map(str, self.ids)) == list(map(str, other.ids))


def _flags_to_list(row) -> list:
    return [None if v == ABSENT else int(v) for v in row]


def _label(cov: Covariate, value):
    if np.isnan(value):
        return None
    if cov.discrete:
        return cov.levels[int(value)]
    return float(value)


def _code(cov: Covariate, raw, rid, k, problems) -> float:
    if raw is None or (isinstance(raw, str) and raw.strip() == ""):
        return np.nan
    if isinstance(raw, float) and np.isnan(raw):
        return np.nan
    if not cov.discrete:
        try:
            return float(raw)
        except (TypeError, ValueError):
            problems.append(Violation(str(rid), k, "schema mismatch", f"{cov.column}={raw!r} is not numeric"))
            return np.nan
    key = str(raw).strip()
    if key in cov.levels:
        return float(cov.levels.index(key))
    # numeric spellings such as 1.0 for level "1"
    try:
        num = float(key)
        if num.is_integer() and str(int(num)) in cov.levels:
            return float(cov.levels.index(str(int(num))))
    except ValueError:
        pass
    problems.append(Violation(str(rid), k, "schema mismatch", f"{cov.column}={raw!r} not in levels {list(cov.levels)}"))
    return np.nan


# ---------------------------------------------------------------------------
# Validation


def validate_monotone(dataset: TrialDataset) -> list:
    """Check every record against the absorption and ordering rules.

    Returns a list of `Violation` entries sorted by (id order, time). An empty
    list means the dataset is well formed. Rules reported:

    ``non-binary flag``, ``missing value``, ``value after censoring``,
    ``value after event``, ``non-monotone``, ``event after competing event``,
    ``covariate after event``, ``level out of range``.
    """
    ds = dataset
    n, H = ds.n, ds.horizon
    found = []  # (row, time, rule, detail)

    def report(mask, k, rule, detail=""):
        for i in np.flatnonzero(mask):
            found.append((int(i), k, rule, detail))

    report(~np.isin(ds.z, (0, 1)), 0, "non-binary flag", "z")
    for cov in ds.schema.baseline:
        v = ds.baseline[cov.name]
        report(np.isnan(v), 0, "missing value", cov.column)
        if cov.discrete:
            report(~np.isnan(v) & ~np.isin(v, np.arange(cov.n_levels)), 0, "level out of range", cov.column)

    tv = ds.time_varying
    cens_before = np.zeros(n, bool)
    d_before = np.zeros(n, bool)
    y_before = np.zeros(n, bool)
    for k in range(1, H + 1):
        c, r, d, y = (ds.flag(f, k) for f in FLAGS)
        for f, col in zip(FLAGS, (c, r, d, y)):
            report(~np.isin(col, (ABSENT, 0, 1)), k, "non-binary flag", f)
        l_present = np.zeros(n, bool)
        l_all = np.ones(n, bool)
        for cov in ds.schema.time_varying:
            v = tv[cov.name][:, k - 1]
            l_present |= ~np.isnan(v)
            l_all &= ~np.isnan(v)
            if cov.discrete:
                report(~np.isnan(v) & ~np.isin(v, np.arange(cov.n_levels)), k, "level out of range", cov.column)
        if not ds.schema.time_varying:
            l_all[:] = True
        event_before = d_before | y_before

        # after censoring nothing but c = 1 may appear
        report(cens_before & (c == 0), k, "non-monotone", "c returned to 0")
        after_c = cens_before & ((r != ABSENT) | (d != ABSENT) | (y != ABSENT) | l_present)
        report(after_c, k, "value after censoring")

        live = ~cens_before & ~event_before
        ev = ~cens_before & event_before
        # after an event
        report(ev & ((c != ABSENT) | (r != ABSENT)), k, "value after event")
        report(ev & l_present, k, "covariate after event")
        report(ev & d_before & (d == 0), k, "non-monotone", "d returned to 0")
        report(ev & y_before & (y == 0), k, "non-monotone", "y returned to 0")
        report(ev & d_before & ~y_before & (y == 1), k, "event after competing event")

        # at-risk intervals
        report(live & (c == ABSENT), k, "missing value", "c")
        cen_now = live & (c == 1)
        report(cen_now & ((r != ABSENT) | (d != ABSENT) | (y != ABSENT) | l_present), k, "value after censoring")
        obs = live & (c == 0)
        report(obs & (r == ABSENT), k, "missing value", "r")
        report(obs & (d == ABSENT), k, "missing value", "d")
        report(obs & (d == 0) & (y == ABSENT), k, "missing value", "y")
        report(obs & (d == 1) & (y == 1), k, "event after competing event")
        still = obs & (d == 0) & (y == 0)
        report((obs | cen_now) & ~still & l_present, k, "covariate after event")
        if k <= H - 1:
            report(still & ~l_all, k, "missing value", "time-varying covariate")
        else:
            # L_{K+1} is never used; a partial vector is still malformed
            report(still & l_present & ~l_all, k, "missing value", "time-varying covariate")

        cens_before |= c == 1
        d_before |= d == 1
        y_before |= y == 1
    found.sort(key=lambda t: (t[0], t[1]))
    return [Violation(str(ds.ids[i]), k, rule, detail) for i, k, rule, detail in found]


# ---------------------------------------------------------------------------
# Risk sets


@dataclass(frozen=True)
class RiskSetFilter:
    """Conditioning event ``φ_k(z) = {Z = z, C_k = 0, R̄_k = 1}`` plus event-freeness.

    Parameters
    ----------
    k : int
        Time index; ``k = 0`` reduces to ``{Z = z}``.
    z : int
    event_free_through : int, optional
        Require ``D_j = Y_j = 0`` for ``j <= event_free_through``.
    adherent : bool
        Include the ``C_k = 0, R̄_k = 1`` part. Set False to keep only
        ``C̄_k = 0``.
    """

    k: int
    z: int
    event_free_through: int | None = None
    adherent: bool = True


def risk_set_mask(dataset: TrialDataset, filt: RiskSetFilter, extra: Mapping | None = None) -> np.ndarray:
    if not 0 <= filt.k <= dataset.horizon:
        raise ValueError(f"filter time {filt.k} outside 0..{dataset.horizon}")
    mask = dataset.z == filt.z
    mask &= dataset.phi[:, filt.k] if filt.adherent else dataset.uncensored[:, filt.k]
    if filt.event_free_through is not None:
        j = filt.event_free_through
        ok = np.ones(dataset.n, bool)
        for t in range(1, j + 1):
            ok &= (dataset.flag("d", t) == 0) & (dataset.flag("y", t) == 0)
        mask &= ok
    for key, value in (extra or {}).items():
        name, t = key[0], int(key[1:])
        mask &= dataset.flag(name, t) == value
    return mask


def risk_set(dataset: TrialDataset, filt: RiskSetFilter, extra: Mapping | None = None) -> list:
    """Individual-intervals in the conditioning set described by ``filt``.

    ``extra`` adds flag constraints such as ``{"d1": 0, "y1": 0}``. Returns
    ``(id, k)`` pairs ordered by id then time.
    """
    mask = risk_set_mask(dataset, filt, extra)
    rows = np.flatnonzero(mask)
    keys = sorted(((str(dataset.ids[i]), filt.k) for i in rows), key=lambda t: _id_key(t[0]))
    return keys


def _id_key(value: str):
    try:
        return (0, float(value), value)
    except ValueError:
        return (1, 0.0, value)


# ---------------------------------------------------------------------------
# Encodings


def encode_strategy_centered(records: Sequence[TreatmentCenteredRecord], schema: CovariateSchema, horizon: int | None = None) -> TrialDataset:
    """Convert treatment-centered records to a strategy-centered dataset.

    ``z`` is the treatment taken in the first interval and ``r_k = 1`` exactly
    when ``a_k`` equals ``z``. An ``a_k`` recorded when the individual is no
    longer at risk is reported as a validation error.
    """
    out = []
    problems = []
    for rec in records:
        a = list(rec.a)
        if not a or a[0] is None:
            problems.append(Violation(str(rec.id), 1, "missing value", "a_1"))
            continue
        z = int(a[0])
        r = [None if ak is None else int(int(ak) == z) for ak in a]
        out.append(IndividualRecord(rec.id, z, dict(rec.baseline), list(rec.c), r, list(rec.d), list(rec.y), list(rec.l)))
    if problems:
        raise DataError("treatment-centered records without a_1", problems)
    ds = TrialDataset.from_records(out, schema, horizon)
    report = validate_monotone(ds)
    if report:
        raise DataError(f"{len(report)} validation errors after conversion", report)
    return ds


def decode_treatment_centered(dataset: TrialDataset) -> list:
    """Recover ``a_k`` on the always-adherent prefix of every record.

    Entries after the first ``r_k = 0`` are returned as None because the
    strategy-centered encoding of a binary treatment determines ``a_k`` only
    up to that point in the general case; on the prefix ``a_k = z``.
    """
    out = []
    for rec in dataset.records():
        a = []
        adherent = True
        for rk in rec.r:
            if rk is None or not adherent:
                a.append(None)
                continue
            if rk == 1:
                a.append(rec.z)
            else:
                a.append(1 - rec.z)
                adherent = False
        out.append(TreatmentCenteredRecord(rec.id, rec.baseline, a, rec.c, rec.d, rec.y, rec.l))
    return out


# ---------------------------------------------------------------------------
# CSV


def ingest_csv(path, schema: CovariateSchema, baseline_row: bool = False, encoding: str = "strategy", validate: bool = True) -> TrialDataset:
    """Read a long-format CSV file into a `TrialDataset`.

    Parameters
    ----------
    path : path-like
    schema : CovariateSchema
    baseline_row : bool
        If True, baseline covariates are read from ``time = 0`` rows;
        otherwise they are repeated on every row and must agree.
    encoding : {"strategy", "treatment"}
        ``"strategy"`` expects columns ``z`` and ``r``; ``"treatment"``
        expects ``a`` and converts with `encode_strategy_centered`.
    validate : bool
        Raise `DataError` listing every violation of `validate_monotone`.

    Lines starting with ``#`` are treated as comments.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
        fh.seek(0)
        header_line = next((line for line in fh if not line.startswith("#")), "")
    header = next(csv.reader([header_line])) if header_line else []
    flag_cols = ["c", "d", "y"] + (["z", "r"] if encoding == "strategy" else ["a"])
    if encoding not in ("strategy", "treatment"):
        raise ValueError(f"unknown encoding {encoding!r}")
    needed = ["id", "time"] + flag_cols + [c.column for c in schema.baseline + schema.time_varying]
    missing = [c for c in needed if c not in header]
    if missing:
        raise DataError(f"missing column(s): {', '.join(missing)}")
    known = set(needed)
    extra = [c for c in header if c not in known and (c.startswith("l_") or c.startswith("l0_"))]
    if extra:
        raise DataError(f"schema mismatch: covariate column(s) not in schema: {', '.join(extra)}")

    problems = []
    by_id: dict = {}
    order = []
    seen = set()
    max_t = 0
    for lineno, row in enumerate(rows, start=2):
        rid = row["id"].strip()
        try:
            t = int(row["time"])
        except ValueError:
            problems.append(Violation(rid, -1, "schema mismatch", f"line {lineno}: time={row['time']!r}"))
            continue
        if (rid, t) in seen:
            problems.append(Violation(rid, t, "duplicate (id, time)"))
            continue
        seen.add((rid, t))
        if rid not in by_id:
            by_id[rid] = {}
            order.append(rid)
        by_id[rid][t] = row
        max_t = max(max_t, t)
    if problems:
        raise DataError(f"{len(problems)} problems reading {path}", problems)
    if not order:
        raise DataError(f"{path} contains no data rows")
    horizon = max_t

    def flag(row, col, rid, t):
        raw = (row.get(col) or "").strip() if row is not None else ""
        if raw == "":
            return None
        if raw in ("0", "1", "0.0", "1.0"):
            return int(float(raw))
        problems.append(Violation(rid, t, "non-binary flag", f"{col}={raw!r}"))
        return None

    recs = []
    for rid in order:
        rows_by_t = by_id[rid]
        bad_t = [t for t in rows_by_t if t < (0 if baseline_row else 1) or t > horizon]
        for t in bad_t:
            problems.append(Violation(rid, t, "schema mismatch", "time outside range"))
        if baseline_row:
            brow = rows_by_t.get(0)
            if brow is None:
                problems.append(Violation(rid, 0, "missing value", "baseline row"))
                brow = {}
            base = {c.name: brow.get(c.column) for c in schema.baseline}
        else:
            base = {}
            for cov in schema.baseline:
                vals = {(rows_by_t[t].get(cov.column) or "").strip() for t in rows_by_t if t >= 1}
                vals.discard("")
                if len(vals) > 1:
                    problems.append(Violation(rid, 0, "schema mismatch", f"{cov.column} differs across rows"))
                base[cov.name] = vals.pop() if vals else None
        seq = {f: [] for f in ("c", "r", "d", "y", "a")}
        ls = []
        z = None
        for t in range(1, horizon + 1):
            row = rows_by_t.get(t)
            for f in ("c", "d", "y"):
                seq[f].append(flag(row, f, rid, t))
            if encoding == "strategy":
                seq["r"].append(flag(row, "r", rid, t))
                zt = flag(row, "z", rid, t)
                if zt is not None:
                    if z is not None and zt != z:
                        problems.append(Violation(rid, t, "schema mismatch", "z differs across rows"))
                    z = zt
            else:
                seq["a"].append(flag(row, "a", rid, t))
            if row is None:
                ls.append(None)
                continue
            vals = {c.name: row.get(c.column) for c in schema.time_varying}
            ls.append(None if all((v or "").strip() == "" for v in vals.values()) else vals)
        if encoding == "strategy":
            if z is None:
                problems.append(Violation(rid, 1, "missing value", "z"))
                z = 0
            recs.append(IndividualRecord(rid, z, base, seq["c"], seq["r"], seq["d"], seq["y"], ls))
        else:
            recs.append(TreatmentCenteredRecord(rid, base, seq["a"], seq["c"], seq["d"], seq["y"], ls))
    if problems:
        raise DataError(f"{len(problems)} problems reading {path}", problems)
    if encoding == "treatment":
        return encode_strategy_centered(recs, schema, horizon)
    ds = TrialDataset.from_records(recs, schema, horizon)
    if validate:
        report = validate_monotone(ds)
        if report:
            raise DataError(f"{len(report)} validation errors in {path}", report)
    return ds


def write_csv(dataset: TrialDataset, path, baseline_row: bool = False, header_comment: str | None = None) -> None:
    """Write ``dataset`` in the long format read by `ingest_csv`.

    Rows are emitted for every interval with at least one present flag.
    Continuous values use ``repr`` so the round trip is exact. Case weights
    are not part of the format; a weighted dataset raises.
    """
    if not np.all(dataset.weights == 1.0):
        raise ValueError("weighted datasets cannot be written as CSV")
    schema = dataset.schema
    cols = ["id", "time", "z", "c", "r", "d", "y"] + [c.column for c in schema.baseline] + [c.column for c in schema.time_varying]

    def fmt(cov, v):
        if np.isnan(v):
            return ""
        return cov.levels[int(v)] if cov.discrete else repr(float(v))

    def flagfmt(v):
        return "" if v == ABSENT else str(int(v))

    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(dataset.n):
            base = [fmt(c, dataset.baseline[c.name][i]) for c in schema.baseline]
            if baseline_row:
                w.writerow([dataset.ids[i], 0, "", "", "", "", ""] + base + [""] * len(schema.time_varying))
            for k in range(1, dataset.horizon + 1):
                flags = [dataset.flag(f, k)[i] for f in FLAGS]
                if all(v == ABSENT for v in flags):
                    continue
                tv = [fmt(c, dataset.time_varying[c.name][i, k - 1]) for c in schema.time_varying]
                w.writerow(
                    [dataset.ids[i], k, int(dataset.z[i])]
                    + [flagfmt(v) for v in flags]
                    + (["" for _ in base] if baseline_row else base)
                    + tv
                )
