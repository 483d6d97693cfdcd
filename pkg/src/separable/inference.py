"""Percentile bootstrap intervals and separable-effect contrasts.

Resampling is over individuals. A resample is represented as multiplicity
weights on the original rows (`TrialDataset.reweight`), which reuses every
weight-independent cache. Draw ``b`` uses the random stream ``(*seed, b)``,
so intervals do not depend on thread scheduling.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .data import ALL_ARMS, ArmPair, TrialDataset
from .estimators import ESTIMATORS, EstimateReport, estimate
from .models import fit_nuisance_set

__all__ = [
    "BootstrapConfig",
    "BootstrapError",
    "BootstrapResult",
    "ContrastReport",
    "EstimatorBootstrap",
    "bootstrap_ci",
    "bootstrap_estimates",
    "contrast_from_bootstrap",
    "percentile_interval",
    "resample_weights",
    "separable_effect_contrast",
    "table4_csv",
]


class BootstrapError(RuntimeError):
    """Too many resamples failed to produce an estimate."""


@dataclass(frozen=True)
class BootstrapConfig:
    draws: int = 500
    level: float = 0.95
    seed: object = 0
    threads: int = 1
    max_failure_fraction: float = 0.2

    def __post_init__(self):
        if int(self.draws) < 2:
            raise ValueError("bootstrap draws must be at least 2")
        if not 0 < self.level < 1:
            raise ValueError("confidence level must lie in (0, 1)")

    @property
    def stream(self) -> tuple:
        return tuple(self.seed) if isinstance(self.seed, (tuple, list)) else (self.seed,)


def _rng(stream, b):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(s) for s in (*stream, b)])))


def resample_weights(n: int, config: BootstrapConfig, b: int) -> np.ndarray:
    """Multiplicities of the ``n`` individuals in bootstrap draw ``b``."""
    idx = _rng(config.stream, b).integers(0, n, n)
    return np.bincount(idx, minlength=n).astype(np.float64)


def percentile_interval(replicates, level: float) -> tuple:
    """Equal-tailed percentile limits, type-7 (linear interpolation) quantiles.

    NaN rows (failed draws) are ignored.
    """
    reps = np.asarray(replicates, dtype=np.float64)
    alpha = (1 - level) / 2
    lo = np.nanquantile(reps, alpha, axis=0, method="linear")
    hi = np.nanquantile(reps, 1 - alpha, axis=0, method="linear")
    return lo, hi


@dataclass
class BootstrapResult:
    point: np.ndarray
    replicates: np.ndarray  # (draws, p); NaN rows for failed draws
    lower: np.ndarray
    upper: np.ndarray
    level: float
    failures: int
    errors: list = field(default_factory=list)

    @property
    def excludes_point(self) -> np.ndarray:
        """Coordinates whose interval does not contain the point estimate."""
        return (self.point < self.lower) | (self.point > self.upper)


def _map(fn, items, threads):
    if threads and threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def bootstrap_ci(data: TrialDataset, statistic, config: BootstrapConfig = BootstrapConfig()) -> BootstrapResult:
    """Percentile interval for ``statistic(data)`` (a scalar or vector).

    Draws on which the statistic raises are excluded and counted; more than
    ``config.max_failure_fraction`` of them raises `BootstrapError`.
    """
    point = np.atleast_1d(np.asarray(statistic(data), dtype=np.float64))
    B = int(config.draws)

    def one(b):
        try:
            val = np.atleast_1d(np.asarray(statistic(data.reweight(resample_weights(data.n, config, b))), dtype=np.float64))
            return val, None
        except Exception as exc:  # recorded, not fatal
            return None, f"draw {b}: {type(exc).__name__}: {exc}"

    reps = np.full((B, point.size), np.nan)
    errors = []
    for b, (val, err) in enumerate(_map(one, range(B), config.threads)):
        if err is None:
            reps[b] = val
        else:
            errors.append(err)
    _check_failures(len(errors), B, config, errors)
    lo, hi = percentile_interval(reps, config.level)
    return BootstrapResult(point, reps, lo, hi, config.level, len(errors), errors)


def _check_failures(failed, B, config, errors):
    if failed > config.max_failure_fraction * B:
        first = errors[0] if errors else ""
        raise BootstrapError(f"{failed} of {B} bootstrap resamples failed (limit {config.max_failure_fraction:.0%}); first: {first}")


@dataclass
class EstimatorBootstrap:
    """Joint bootstrap of one estimator over several arms (shared resamples)."""

    estimator: str
    reports: dict  # arm -> EstimateReport (point, with interval filled in)
    replicates: dict  # arm -> (draws, K+1)
    failures: int
    level: float
    error: str | None = None

    @property
    def point(self) -> dict:
        return {a: r.curve for a, r in self.reports.items()}

    @property
    def lower(self) -> dict:
        return {a: r.lower for a, r in self.reports.items()}

    @property
    def upper(self) -> dict:
        return {a: r.upper for a, r in self.reports.items()}


def _fit_and_estimate(data, spec, arms, estimators):
    """``{estimator: {arm: curve}}``, with exceptions in place of failed estimators."""
    out = {}
    try:
        res = estimate(data, spec, arms, estimators)
        for e in estimators:
            out[e] = {a: res[(e, a)] for a in arms}
        return out
    except Exception:
        pass
    # one failing model should not take down estimators that do not use it
    for e in estimators:
        try:
            laws = fit_nuisance_set(data, spec, e)
            res = estimate(data, spec, arms, (e,), laws=laws)
            out[e] = {a: res[(e, a)] for a in arms}
        except Exception as exc:
            out[e] = exc
    return out


def bootstrap_estimates(
    data: TrialDataset,
    spec,
    arms=ALL_ARMS,
    estimators=ESTIMATORS,
    config: BootstrapConfig = BootstrapConfig(),
    strict: bool = True,
) -> dict:
    """Point estimates and percentile intervals for every estimator and arm.

    All arms and estimators share the same resamples, so contrasts can use
    per-draw differences. Returns ``{estimator: EstimatorBootstrap}``. With
    ``strict=False`` failures are reported in ``EstimatorBootstrap.error``
    instead of raised.
    """
    arms = tuple(ArmPair(*a) for a in arms)
    estimators = tuple(estimators)
    base = _fit_and_estimate(data, spec, arms, estimators)
    B = int(config.draws)
    out = {}
    live = []
    for e in estimators:
        if isinstance(base[e], Exception):
            if strict:
                raise base[e]
            out[e] = EstimatorBootstrap(e, {}, {}, 0, config.level, f"{type(base[e]).__name__}: {base[e]}")
        else:
            live.append(e)
    if not live:
        return out
    H = data.K + 1
    reps = {e: {a: np.full((B, H), np.nan) for a in arms} for e in live}
    errors = {e: [] for e in live}

    def one(b):
        return _fit_and_estimate(data.reweight(resample_weights(data.n, config, b)), spec, arms, tuple(live))

    for b, res in enumerate(_map(one, range(B), config.threads)):
        for e in live:
            if isinstance(res[e], Exception):
                errors[e].append(f"draw {b}: {type(res[e]).__name__}: {res[e]}")
                continue
            for a in arms:
                reps[e][a][b] = res[e][a].curve
    for e in live:
        try:
            _check_failures(len(errors[e]), B, config, errors[e])
        except BootstrapError as exc:
            if strict:
                raise
            out[e] = EstimatorBootstrap(e, {}, {}, len(errors[e]), config.level, str(exc))
            continue
        reports = {}
        for a in arms:
            rep = base[e][a]
            rep.lower, rep.upper = percentile_interval(reps[e][a], config.level)
            rep.level = config.level
            rep.diagnostics = dict(rep.diagnostics)
            rep.diagnostics["bootstrap_failures"] = len(errors[e])
            rep.diagnostics["bootstrap_draws"] = B
            rep.diagnostics["interval_excludes_point"] = bool(rep.terminal < rep.lower[-1] or rep.terminal > rep.upper[-1])
            reports[a] = rep
        out[e] = EstimatorBootstrap(e, reports, reps[e], len(errors[e]), config.level)
    return out


# ---------------------------------------------------------------------------
# Contrasts


@dataclass
class ContrastReport:
    """Additive contrast between two arms that differ in one component.

    ``kind`` is ``"Z_Y"`` (the arms differ in ``z_Y``; ``at`` is the shared
    ``z_D``) or ``"Z_D"`` (they differ in ``z_D``; ``at`` is the shared ``z_Y``).
    """

    kind: str
    at: int
    estimator: str
    curve: np.ndarray
    report_a: EstimateReport
    report_b: EstimateReport
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    level: float | None = None

    @property
    def estimate(self) -> float:
        return float(self.curve[-1])

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "at": self.at,
            "estimator": self.estimator,
            "estimate": self.estimate,
            "curve": [float(v) for v in self.curve],
            "arm_a": self.report_a.to_dict(),
            "arm_b": self.report_b.to_dict(),
        }
        if self.lower is not None:
            out.update(lower=[float(v) for v in self.lower], upper=[float(v) for v in self.upper], level=self.level)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d) -> "ContrastReport":
        rep = cls(
            d["kind"], int(d["at"]), d["estimator"], np.asarray(d["curve"], float),
            EstimateReport.from_dict(d["arm_a"]), EstimateReport.from_dict(d["arm_b"]),
        )
        if "lower" in d:
            rep.lower = np.asarray(d["lower"], float)
            rep.upper = np.asarray(d["upper"], float)
            rep.level = d.get("level")
        return rep


def separable_effect_contrast(report_a: EstimateReport, report_b: EstimateReport, kind: str | None = None,
                              replicates_a=None, replicates_b=None, level: float | None = None) -> ContrastReport:
    """Risk under ``report_a``'s arm minus risk under ``report_b``'s arm.

    The interval, when replicates are given, is the percentile interval of
    per-draw differences from a joint bootstrap; arm intervals are never
    combined directly.
    """
    a, b = ArmPair(*report_a.arm), ArmPair(*report_b.arm)
    if report_a.estimator != report_b.estimator:
        raise ValueError("contrasted reports come from different estimators")
    if report_a.horizon != report_b.horizon:
        raise ValueError("contrasted reports have different horizons")
    if a.z_y != b.z_y and a.z_d != b.z_d:
        raise ValueError(f"arms {a.label()} and {b.label()} differ in both components")
    inferred = "Z_Y" if a.z_y != b.z_y else ("Z_D" if a.z_d != b.z_d else None)
    if kind is None:
        if inferred is None:
            raise ValueError("identical arms: give the contrast kind explicitly")
        kind = inferred
    if kind not in ("Z_Y", "Z_D"):
        raise ValueError("kind must be 'Z_Y' or 'Z_D'")
    if inferred is not None and inferred != kind:
        raise ValueError(f"arms {a.label()} and {b.label()} do not form a {kind} contrast")
    at = a.z_d if kind == "Z_Y" else a.z_y
    curve = np.asarray(report_a.curve, float) - np.asarray(report_b.curve, float)
    out = ContrastReport(kind, int(at), report_a.estimator, curve, report_a, report_b)
    if replicates_a is not None and replicates_b is not None:
        diff = np.asarray(replicates_a, float) - np.asarray(replicates_b, float)
        lvl = level if level is not None else (report_a.level or 0.95)
        out.lower, out.upper = percentile_interval(diff, lvl)
        out.level = lvl
    return out


def contrast_from_bootstrap(boot: EstimatorBootstrap, kind: str = "Z_Y", at: int = 1) -> ContrastReport:
    """Effect of switching the ``kind`` component from 0 to 1 with the other held at ``at``."""
    a = ArmPair(1, at) if kind == "Z_Y" else ArmPair(at, 1)
    b = ArmPair(0, at) if kind == "Z_Y" else ArmPair(at, 0)
    return separable_effect_contrast(boot.reports[a], boot.reports[b], kind, boot.replicates[a], boot.replicates[b], boot.level)


def table4_csv(reports: dict, contrast: ContrastReport, path=None, header_comment: str | None = None) -> str:
    """One row per arm plus a ``Causal effect`` row: estimate and interval at the last interval."""
    buf = io.StringIO()
    if header_comment:
        for line in header_comment.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "z_y", "z_d", "estimate", "lower", "upper"])

    def lim(x):
        return "" if x is None else f"{float(x[-1]):.6f}"

    for arm in sorted(reports, key=lambda a: (-a.z_y, -a.z_d)):
        r = reports[arm]
        w.writerow([arm.label(), arm.z_y, arm.z_d, f"{r.terminal:.6f}", lim(r.lower), lim(r.upper)])
    w.writerow(["Causal effect", contrast.kind, contrast.at, f"{contrast.estimate:.6f}", lim(contrast.lower), lim(contrast.upper)])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
