"""Nuisance models: hazards, propensities and covariate laws.

Every estimator needs some of the conditional laws below, each fitted in the
risk set listed and stratified by arm (or pooled with ``z`` as a predictor).

=========  ==============================================  =====================================
role       quantity                                        risk set at interval ``t`` / time ``s``
=========  ==============================================  =====================================
``Y``      ``P(Y_t = 1 | ...)``                            ``C_t = 0, R̄_t = 1, D_t = Y_{t-1} = 0``
``D``      ``P(D_t = 1 | ...)``                            ``C_t = 0, R̄_t = 1, D_{t-1} = Y_{t-1} = 0``
``C``      ``P(C_t = 1 | ...)``                            ``C_{t-1} = 0, R̄_{t-1} = 1, D_{t-1} = Y_{t-1} = 0``
``R``      ``P(R_t = 1 | C_t = 0, ...)``                   the ``C`` risk set with ``C_t = 0``
``CR``     ``P(C_t = 0, R_t = 1 | ...)`` (joint option)    the ``C`` risk set
``L_D``    law of the ``L_D`` block at ``s``               ``C_s = D_s = Y_s = 0, R̄_s = 1``
``L_Y``    law of the ``L_Y`` block given ``L_{D,s}``      same as ``L_D``
=========  ==============================================  =====================================

Hazards condition on ``L̄_{t-1}``; covariate laws on ``L̄_{s-1}``.

Two model kinds are available. ``logistic`` fits a pooled logistic
regression by iteratively reweighted least squares (`fit_logistic`).
``table`` fits empirical frequencies within cells of a discrete key; the
key ``"hist"`` uses the whole covariate history, which gives the saturated
model.

A model specification is a mapping from role to a formula dict, e.g.::

    {"Y": {"kind": "logistic", "terms": ["t", "t2", "t3", "l0_*", "l_bp"],
           "time_overrides": {"0": {"l_bp": "l0_map"}}},
     "C": {"kind": "table", "key": "hist"}}

A role may instead map time indices to formulas, with ``"default"`` as the
fallback, which is how a single time point gets a different model.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit, log_expit

from .data import HistoryCodec, TrialDataset

__all__ = [
    "CoverageError",
    "Context",
    "DiscreteConditionalModel",
    "FitError",
    "ModelFormula",
    "NuisanceSet",
    "PooledLogisticModel",
    "PositivityError",
    "SeparationError",
    "data_context",
    "code_context",
    "fit_discrete_conditional",
    "fit_logistic",
    "fit_nuisance_set",
    "fit_pooled_logistic",
    "predict",
    "required_roles",
    "role_rows",
    "saturated_spec",
]

HAZARD_ROLES = ("Y", "D", "C", "R", "CR")
LAW_ROLES = ("L_D", "L_Y")
ALL_ROLES = HAZARD_ROLES + LAW_ROLES


class PositivityError(RuntimeError):
    """A conditioning set required by the estimand is empty or has zero probability.

    Identification assumes positivity under the intervention; this error
    marks a finite-sample or structural failure of that assumption.
    """


class FitError(RuntimeError):
    pass


class SeparationError(FitError):
    pass


class CoverageError(ValueError):
    """The model specification lacks a role the estimator needs."""


# ---------------------------------------------------------------------------
# Contexts


@dataclass
class Context:
    """Values a model may condition on, for ``m`` rows at once.

    Attributes
    ----------
    k : int
        Time index of the modeled quantity: ``t - 1`` for a hazard at
        interval ``t``, ``s`` for a covariate law at time ``s``.
    s : int
        The conditioning history is ``L̄_s`` (``s = -1`` means empty).
    baseline, tv : dict
        Baseline values ``(m,)`` and time-varying values ``(m, >= s)``
        with column ``j`` holding ``L_{j+1}``.
    hist : array or None
        Codes of ``L̄_s`` (zeros when ``s = -1``).
    ld, ld_code : dict, array or None
        Current ``L_D`` block for ``L_Y`` laws.
    rbar : array (m, q) or None
        Adherence history in the conditioning set.
    """

    k: int
    s: int
    m: int
    baseline: dict
    tv: dict
    hist: np.ndarray | None = None
    ld: dict | None = None
    ld_code: np.ndarray | None = None
    rbar: np.ndarray | None = None
    cache: dict = field(default_factory=dict, repr=False)

    def latest(self, name: str, schema) -> np.ndarray:
        if self.ld is not None and name in self.ld:
            return self.ld[name]
        if name in self.tv and self.s >= 1:
            return self.tv[name][:, self.s - 1]
        if name not in {c.name for c in schema.time_varying}:
            raise FitError(f"unknown time-varying covariate {name!r}")
        raise FitError(f"term l_{name} has no value at time index {self.k}; add a time override")


def data_context(data: TrialDataset, role: str, t: int) -> Context:
    """Context for every row of ``data`` at interval ``t`` (hazards) or time ``t`` (laws).

    Contexts are cached on the dataset, so bootstrap reweightings share them.
    """
    cache = data.__dict__.setdefault("_context_cache", {})
    kind = "law_y" if role == "L_Y" else ("law" if role in LAW_ROLES else "hazard")
    key = (kind, t)
    if key in cache:
        return cache[key]
    codec = data.codec
    n = data.n
    if kind == "hazard":
        s = t - 1
        hist = data.history_codes[:, s] if codec is not None else None
        ctx = Context(k=s, s=s, m=n, baseline=data.baseline, tv=data.time_varying, hist=hist, rbar=np.asarray(data.r[:, :t]))
    else:
        s = t
        hist = None
        if codec is not None:
            hist = data.history_codes[:, s - 1] if s >= 1 else np.zeros(n, dtype=np.int64)
            if s >= 1:
                hist = np.where(data.free[:, s], hist, -1)
        ctx = Context(k=s, s=s - 1, m=n, baseline=data.baseline if s >= 1 else {}, tv=data.time_varying, hist=hist, rbar=np.asarray(data.r[:, :s]))
        if kind == "law_y":
            group = data.schema.baseline if s == 0 else data.schema.time_varying
            ctx.ld = {c.name: data.covariate(c.name, s) for c in group if c.block == "L_D"}
            if codec is not None:
                vals = {c.name: data.covariate(c.name, s) for c in group}
                ctx.ld_code = codec.encode_block(s, "L_D", vals, n)
    cache[key] = ctx
    return ctx


def code_context(codec: HistoryCodec, role: str, t: int, hist: np.ndarray, ld_code: np.ndarray | None = None) -> Context:
    """Context for enumerated histories given by their codes.

    For hazards ``hist`` codes ``L̄_{t-1}``; for laws at time ``t`` it codes
    ``L̄_{t-1}`` and ``ld_code`` the current ``L_D`` block (``L_Y`` laws).
    Adherence is 1 throughout.
    """
    hist = np.asarray(hist, dtype=np.int64)
    m = hist.shape[0]
    if role in LAW_ROLES:
        s = t - 1
        k = t
    else:
        s = t - 1
        k = t - 1
    base, tv = codec.decode(hist, s) if s >= 0 else ({}, {c.name: np.empty((m, 0)) for c in codec.schema.time_varying})
    ctx = Context(k=k, s=s, m=m, baseline=base, tv=tv, hist=hist, rbar=np.ones((m, t), dtype=np.int8))
    if role == "L_Y":
        ld_code = np.asarray(ld_code, dtype=np.int64)
        ctx.ld_code = ld_code
        ctx.ld = codec.decode_block(t, "L_D", ld_code)
    return ctx


# ---------------------------------------------------------------------------
# Risk sets


def role_rows(data: TrialDataset, role: str, t: int, adherent: bool = True) -> tuple:
    """Risk-set mask and outcome for ``role`` at interval/time ``t``.

    Returns ``(mask, outcome)`` over all rows; the outcome is meaningful only
    where ``mask`` holds. Covariate-law outcomes are block codes.
    """
    phi = data.phi if adherent else data.uncensored
    free = data.free
    if role == "Y":
        mask = phi[:, t] & free[:, t - 1] & (data.flag("d", t) == 0)
        out = data.flag("y", t)
    elif role == "D":
        mask = phi[:, t] & free[:, t - 1]
        out = data.flag("d", t)
    elif role == "C":
        mask = phi[:, t - 1] & free[:, t - 1]
        out = data.flag("c", t)
    elif role == "R":
        mask = phi[:, t - 1] & free[:, t - 1] & (data.flag("c", t) == 0)
        out = data.flag("r", t)
    elif role == "CR":
        mask = phi[:, t - 1] & free[:, t - 1]
        out = ((data.flag("c", t) == 0) & (data.flag("r", t) == 1)).astype(np.int8)
    elif role in LAW_ROLES:
        mask = phi[:, t] & free[:, t]
        codec = data.codec
        block = "L_D" if role == "L_D" else "L_Y"
        group = data.schema.baseline if t == 0 else data.schema.time_varying
        covs = [c for c in group if c.block == block]
        if codec is not None:
            vals = {c.name: data.covariate(c.name, t) for c in group}
            out = codec.encode_block(t, block, vals, data.n)
        elif len(covs) == 1:
            out = data.covariate(covs[0].name, t)
        else:
            raise FitError(f"{role} law at time {t} needs discrete covariates")
    else:
        raise ValueError(f"unknown role {role!r}")
    return mask, np.asarray(out)


def role_times(role: str, K: int) -> range:
    return range(0, K + 1) if role in LAW_ROLES else range(1, K + 2)


# ---------------------------------------------------------------------------
# Formulas


@dataclass(frozen=True)
class ModelFormula:
    """How one role is modeled.

    Parameters
    ----------
    role : str
    kind : {"logistic", "table"}
    terms : tuple of str
        Logistic predictors (an intercept is always included). Available
        terms: ``t``, ``t2``, ``t3`` (time polynomials), ``tcat`` (one dummy
        per time), ``z`` (pooled strata), ``l0_<name>`` and ``l0_*``
        (baseline), ``l_<name>`` and ``l_*`` (most recent time-varying
        value), and products written ``a:b``.
    key : "hist" or tuple of str
        Table conditioning key: ``"hist"`` for the full history, otherwise
        items among ``l0_<name>``, ``l_<name>``, ``z``, ``rbar``, ``ld``.
        An empty key gives one marginal row.
    strata : {"by_z", "pooled"}
    time_overrides : mapping of time index -> {term: replacement}
        Replaces a term at one time index, e.g. ``{0: {"l_bp": "l0_map"}}``.
    require_adherence : bool
        Covariate laws only: False drops ``R̄_s = 1`` from the risk set.
    smoothing : float
        Laplace pseudo-count for tables; 0 makes unseen cells an error.
    max_degree : int
        Largest allowed time polynomial degree.
    """

    role: str
    kind: str = "table"
    terms: tuple = ()
    key: object = "hist"
    strata: str = "by_z"
    time_overrides: tuple = ()
    require_adherence: bool = True
    smoothing: float = 0.0
    max_degree: int = 3

    def __post_init__(self):
        if self.role not in ALL_ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.kind not in ("logistic", "table"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.strata not in ("by_z", "pooled"):
            raise ValueError(f"unknown strata {self.strata!r}")
        if self.smoothing < 0:
            raise ValueError("smoothing must be nonnegative")
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.key != "hist":
            object.__setattr__(self, "key", tuple(self.key))
        ov = self.time_overrides
        if isinstance(ov, Mapping):
            ov = tuple(sorted((int(k), tuple(sorted(dict(v).items()))) for k, v in ov.items()))
        object.__setattr__(self, "time_overrides", tuple(ov))
        for term in self.terms:
            for part in term.split(":"):
                if part in ("t2", "t3") and int(part[1]) > self.max_degree:
                    raise ValueError(f"time polynomial {part} exceeds max_degree {self.max_degree}")

    @property
    def overrides(self) -> dict:
        return {k: dict(v) for k, v in self.time_overrides}

    @classmethod
    def from_dict(cls, role: str, spec: Mapping) -> "ModelFormula":
        spec = dict(spec)
        spec.pop("role", None)
        unknown = set(spec) - {"kind", "terms", "key", "strata", "time_overrides", "require_adherence", "smoothing", "max_degree"}
        if unknown:
            raise ValueError(f"unknown model-spec keys for {role}: {sorted(unknown)}")
        if "kind" not in spec:
            spec["kind"] = "logistic" if "terms" in spec else "table"
        return cls(role=role, **spec)

    def to_dict(self) -> dict:
        out = {"role": self.role, "kind": self.kind, "strata": self.strata}
        if self.kind == "logistic":
            out["terms"] = list(self.terms)
            if self.time_overrides:
                out["time_overrides"] = {str(k): v for k, v in self.overrides.items()}
        else:
            out["key"] = self.key if self.key == "hist" else list(self.key)
            if self.smoothing:
                out["smoothing"] = self.smoothing
        if not self.require_adherence:
            out["require_adherence"] = False
        return out


def _parse_role_spec(role: str, spec) -> dict:
    """Return ``{time or "default": ModelFormula}`` for one role."""
    if isinstance(spec, ModelFormula):
        return {"default": spec}
    spec = dict(spec)
    if any(k in spec for k in ("kind", "terms", "key", "strata")):
        return {"default": ModelFormula.from_dict(role, spec)}
    out = {}
    for k, v in spec.items():
        key = "default" if k == "default" else int(k)
        out[key] = v if isinstance(v, ModelFormula) else ModelFormula.from_dict(role, v)
    return out


def saturated_spec(roles=ALL_ROLES, smoothing: float = 0.0) -> dict:
    """Table models keyed by the full history for every role."""
    spec = {r: {"kind": "table", "key": "hist", "smoothing": smoothing} for r in roles if r != "CR"}
    return spec


# ---------------------------------------------------------------------------
# Design matrices


def _expand(term: str, ctx: Context, z: int, schema, times: tuple) -> list:
    """Columns ``[(name, array)]`` for a single (non-interaction) term."""
    m = ctx.m
    if term == "t":
        return [("t", np.full(m, float(ctx.k)))]
    if term in ("t2", "t3"):
        return [(term, np.full(m, float(ctx.k) ** int(term[1])))]
    if term == "tcat":
        return [(f"t={tt}", np.full(m, float(ctx.k == tt))) for tt in times[1:]]
    if term == "z":
        return [("z", np.full(m, float(z)))]
    if term == "l0_*":
        return [col for c in schema.baseline for col in _expand("l0_" + c.name, ctx, z, schema, times)]
    if term in ("l_*", "l_last"):
        return [col for c in schema.time_varying for col in _expand("l_" + c.name, ctx, z, schema, times)]
    if term.startswith("l0_"):
        name = term[3:]
        cov = schema.get("baseline", name)
        if name not in ctx.baseline:
            raise FitError(f"term {term} is not available at time index {ctx.k}")
        return _covariate_columns(term, cov, ctx.baseline[name])
    if term.startswith("l_"):
        name = term[2:]
        cov = schema.get("time_varying", name)
        return _covariate_columns(term, cov, ctx.latest(name, schema))
    raise FitError(f"unknown term {term!r}")


def _covariate_columns(term, cov, values) -> list:
    if cov.kind == "categorical" and cov.n_levels > 2:
        return [(f"{term}={lvl}", (values == i).astype(float)) for i, lvl in enumerate(cov.levels) if i > 0]
    return [(term, np.asarray(values, dtype=float))]


def design(terms: tuple, ctx: Context, z: int, schema, times: tuple, overrides: Mapping | None = None) -> tuple:
    """Design matrix (with intercept) and column names for ``terms``."""
    ov = (overrides or {}).get(ctx.k, {})
    cols = [("(intercept)", np.ones(ctx.m))]
    for term in terms:
        parts = [ov.get(p, p) for p in term.split(":")]
        acc = [("", np.ones(ctx.m))]
        for part in parts:
            new = []
            for name_a, a in acc:
                for name_b, b in _expand(part, ctx, z, schema, times):
                    new.append((f"{name_a}:{name_b}" if name_a else name_b, a * b))
            acc = new
        if len(parts) > 1 or parts[0] != term:
            # keep the declared term name so coefficients align across times
            if len(acc) == 1:
                acc = [(term, acc[0][1])]
            else:
                acc = [(f"{term}#{i}", a) for i, (_, a) in enumerate(acc)]
        cols.extend(acc)
    names = [c[0] for c in cols]
    return np.column_stack([c[1] for c in cols]), names


# ---------------------------------------------------------------------------
# Logistic regression


@dataclass
class IrlsResult:
    coef: np.ndarray
    cov: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    loglik_path: list


def fit_logistic(X, y, w=None, names=None, tol: float = 1e-10, max_iter: int = 100, ridge: float = 1e-8, max_abs_coef: float = 30.0) -> IrlsResult:
    """Weighted logistic regression by Newton/IRLS with step-halving.

    Columns other than the first (the intercept) are standardized
    internally. Convergence requires the max-norm of the gradient of the
    mean log-likelihood to fall below ``tol``. Complete or quasi-complete
    separation shows up as a diverging standardized coefficient and raises
    `SeparationError` naming the term.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    names = names or [f"x{j}" for j in range(p)]
    keep = w > 0
    X, y, w = X[keep], y[keep], w[keep]
    W = w.sum()
    if W <= 0:
        raise PositivityError("empty risk set: no person-intervals with positive weight")
    ybar = (w * y).sum() / W
    if ybar <= 0 or ybar >= 1:
        raise SeparationError(f"complete separation on term (intercept): outcome is constant ({ybar:.0f}) on the risk set")
    mu = np.zeros(p)
    sd = np.ones(p)
    for j in range(1, p):
        mu[j] = (w * X[:, j]).sum() / W
        sd[j] = math.sqrt((w * (X[:, j] - mu[j]) ** 2).sum() / W)
        if sd[j] < 1e-12:
            raise FitError(f"term {names[j]} is constant on the risk set")
    Xs = (X - mu) / sd
    Xs[:, 0] = 1.0

    def loglik(beta):
        eta = Xs @ beta
        return float((w * (y * log_expit(eta) + (1 - y) * log_expit(-eta))).sum())

    beta = np.zeros(p)
    beta[0] = math.log(ybar / (1 - ybar))
    ll = loglik(beta)
    path = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        prob = expit(Xs @ beta)
        grad = Xs.T @ (w * (y - prob))
        if np.max(np.abs(grad)) / W < tol:
            converged = True
            it -= 1
            break
        H = (Xs * (w * prob * (1 - prob))[:, None]).T @ Xs
        try:
            cond = np.linalg.cond(H)
        except np.linalg.LinAlgError:
            cond = np.inf
        if not np.isfinite(cond) or cond > 1e12:
            H = H + ridge * W * np.eye(p)
        step = np.linalg.solve(H, grad)
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            ll_new = loglik(cand)
            if ll_new >= ll - 1e-12 * abs(ll):
                break
            t /= 2
        beta, ll = cand, ll_new
        path.append(ll)
        big = np.abs(beta[1:]) > max_abs_coef
        if np.any(big) or abs(beta[0]) > max_abs_coef + 10:
            j = 1 + int(np.argmax(np.abs(beta[1:]))) if np.any(big) else 0
            raise SeparationError(f"complete separation detected on term {names[j]} (coefficient diverging)")
    if not converged:
        prob = expit(Xs @ beta)
        grad = Xs.T @ (w * (y - prob))
        if np.max(np.abs(grad)) / W < tol:
            converged = True
    if not converged:
        raise FitError(f"logistic fit did not converge in {max_iter} iterations")
    prob = expit(Xs @ beta)
    # the gradient also vanishes when fitted probabilities saturate at 0 or 1
    saturated = np.minimum(prob, 1 - prob) < 1e-8
    if np.any(saturated) and np.max(np.abs(beta[1:]), initial=0.0) > 10:
        j = 1 + int(np.argmax(np.abs(beta[1:])))
        raise SeparationError(f"complete separation detected on term {names[j]} (fitted probabilities at 0 or 1)")
    H = (Xs * (w * prob * (1 - prob))[:, None]).T @ Xs
    # map back to the raw scale: eta = b0 + sum_j b_j (x_j - mu_j)/sd_j
    T = np.eye(p)
    T[0, 1:] = -mu[1:] / sd[1:]
    T[1:, 1:] = np.diag(1 / sd[1:])
    coef = T @ beta
    try:
        cov_s = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        cov_s = np.full((p, p), np.nan)
    return IrlsResult(coef, T @ cov_s @ T.T, ll, it, converged, path)


@dataclass
class PooledLogisticModel:
    """Pooled logistic model for one role, one fit per stratum."""

    formula: ModelFormula
    schema: object
    times: tuple
    coefficients: dict  # stratum -> array
    names: list
    diagnostics: dict  # stratum -> dict
    covariances: dict = field(default_factory=dict, repr=False)

    kind = "logistic"

    def prob(self, z: int, ctx: Context) -> np.ndarray:
        """``P(outcome = 1)`` for each row of ``ctx``."""
        stratum = z if self.formula.strata == "by_z" else "all"
        X, _ = design(self.formula.terms, ctx, z, self.schema, self.times, self.formula.overrides)
        return expit(X @ self.coefficients[stratum])

    def dist(self, z: int, ctx: Context) -> np.ndarray:
        p = self.prob(z, ctx)
        return np.column_stack([1 - p, p])

    def to_dict(self) -> dict:
        return {
            "formula": self.formula.to_dict(),
            "times": list(self.times),
            "terms": self.names,
            "coefficients": {str(k): v.tolist() for k, v in self.coefficients.items()},
            "diagnostics": {str(k): v for k, v in self.diagnostics.items()},
        }


def _strata(formula: ModelFormula) -> list:
    return [0, 1] if formula.strata == "by_z" else ["all"]


def _stratum_mask(data: TrialDataset, stratum) -> np.ndarray:
    return np.ones(data.n, bool) if stratum == "all" else data.z == stratum


def fit_pooled_logistic(data: TrialDataset, formula: ModelFormula, times=None) -> PooledLogisticModel:
    """Fit ``formula`` by maximum likelihood pooled over person-intervals.

    ``times`` restricts the time indices used (interval ``t`` for hazards,
    time ``s`` for covariate laws); all are used by default.
    """
    if formula.kind != "logistic":
        raise ValueError("fit_pooled_logistic needs a logistic formula")
    role = formula.role
    times = tuple(times) if times is not None else tuple(role_times(role, data.K))
    if role in LAW_ROLES:
        for s in times:
            group = data.schema.baseline if s == 0 else data.schema.time_varying
            covs = [c for c in group if c.block == role]
            if len(covs) != 1 or covs[0].kind != "binary":
                raise FitError(f"logistic {role} law needs exactly one binary covariate in the block at time {s}")
    model_k = tuple((t if role in LAW_ROLES else t - 1) for t in times)
    coefs, diags, covs_out = {}, {}, {}
    names = None
    for stratum in _strata(formula):
        Xs, ys, ws = [], [], []
        for t, kk in zip(times, model_k):
            mask, out = role_rows(data, role, t, formula.require_adherence)
            mask = mask & _stratum_mask(data, stratum)
            rows = np.flatnonzero(mask)
            if rows.size == 0:
                raise PositivityError(
                    f"empty risk set for role {role} at time {t} (stratum z={stratum}); "
                    "positivity under the intervention is violated"
                )
            ctx = data_context(data, role, t)
            sub = _subset_context(ctx, rows)
            zval = 0 if stratum == "all" else stratum
            if formula.strata == "pooled":
                X, nm = _design_pooled(formula, sub, data.z[rows], data.schema, model_k)
            else:
                X, nm = design(formula.terms, sub, zval, data.schema, model_k, formula.overrides)
            names = names or nm
            Xs.append(X)
            ys.append(out[rows].astype(float))
            ws.append(data.weights[rows])
        X = np.vstack(Xs)
        if not np.all(np.isfinite(X)):
            raise FitError(f"missing predictor values in the {role} risk set")
        res = fit_logistic(X, np.concatenate(ys), np.concatenate(ws), names)
        coefs[stratum] = res.coef
        covs_out[stratum] = res.cov
        diags[stratum] = {"iterations": res.iterations, "converged": res.converged, "loglik": res.loglik, "n_rows": int(X.shape[0])}
    return PooledLogisticModel(formula, data.schema, model_k, coefs, names, diags, covs_out)


def _design_pooled(formula, ctx, z_rows, schema, times):
    """Design for pooled strata, where ``z`` varies by row."""
    X0, names = design(formula.terms, ctx, 0, schema, times, formula.overrides)
    X1, _ = design(formula.terms, ctx, 1, schema, times, formula.overrides)
    return np.where((z_rows == 1)[:, None], X1, X0), names


def _subset_context(ctx: Context, rows: np.ndarray) -> Context:
    return Context(
        k=ctx.k,
        s=ctx.s,
        m=rows.size,
        baseline={k: v[rows] for k, v in ctx.baseline.items()},
        tv={k: v[rows] for k, v in ctx.tv.items()},
        hist=None if ctx.hist is None else ctx.hist[rows],
        ld=None if ctx.ld is None else {k: v[rows] for k, v in ctx.ld.items()},
        ld_code=None if ctx.ld_code is None else ctx.ld_code[rows],
        rbar=None if ctx.rbar is None else ctx.rbar[rows],
    )


# ---------------------------------------------------------------------------
# Tables


def _cells(key, ctx: Context, z: int, schema, codec) -> np.ndarray:
    """Integer cell index of each context row under ``key`` (-1 when undefined)."""
    ck = (key, z)
    if ck in ctx.cache:
        return ctx.cache[ck]
    if key == "hist":
        if ctx.hist is None:
            raise FitError("key 'hist' needs discrete covariates")
        cells = np.asarray(ctx.hist, dtype=np.int64)
        if ctx.ld_code is not None:
            nld = codec.block_radix(ctx.k, "L_D")
            cells = np.where((cells >= 0) & (ctx.ld_code >= 0), cells * nld + ctx.ld_code, -1)
    else:
        cells = np.zeros(ctx.m, dtype=np.int64)
        bad = np.zeros(ctx.m, bool)
        for item in key:
            if item == "z":
                vals, radix = np.full(ctx.m, z, dtype=np.int64), 2
            elif item == "rbar":
                rb = np.asarray(ctx.rbar, dtype=np.int64)
                vals = np.zeros(ctx.m, dtype=np.int64)
                for j in range(rb.shape[1]):
                    vals = vals * 2 + np.clip(rb[:, j], 0, 1)
                bad |= (rb < 0).any(axis=1) if rb.size else False
                radix = 2 ** rb.shape[1]
            elif item == "ld":
                if ctx.ld_code is None:
                    raise FitError("key item 'ld' is only available for L_Y laws")
                vals, radix = ctx.ld_code, codec.block_radix(ctx.k, "L_D")
            elif item.startswith("l0_") or item.startswith("l_"):
                base = item.startswith("l0_")
                name = item[3:] if base else item[2:]
                cov = schema.get("baseline" if base else "time_varying", name)
                if not cov.discrete:
                    raise FitError(f"table key item {item} is continuous")
                if base:
                    if name not in ctx.baseline:
                        raise FitError(f"key item {item} is not available at time index {ctx.k}")
                    raw = ctx.baseline[name]
                else:
                    raw = ctx.latest(name, schema)
                bad |= np.isnan(raw)
                vals, radix = np.nan_to_num(raw).astype(np.int64), cov.n_levels
            else:
                raise FitError(f"unknown table key item {item!r}")
            cells = cells * radix + vals
        cells = np.where(bad, -1, cells)
    ctx.cache[ck] = cells
    return cells


@dataclass
class _Table:
    keys: np.ndarray  # sorted cell ids
    counts: np.ndarray  # (ncell, levels)
    probs: np.ndarray  # (ncell, levels)


@dataclass
class DiscreteConditionalModel:
    """Empirical conditional distribution of a discrete outcome within key cells.

    ``tables[(stratum, k)]`` holds one probability row per observed cell.
    """

    formula: ModelFormula
    schema: object
    codec: object
    levels: dict  # k -> number of outcome levels
    tables: dict
    zero_cells: list

    kind = "table"

    def dist(self, z: int, ctx: Context, missing: str = "error") -> np.ndarray:
        """Probability rows for each context row (shape ``(m, levels)``).

        ``missing="nan"`` returns NaN rows for unseen cells instead of raising.
        """
        stratum = z if self.formula.strata == "by_z" else "all"
        key = (stratum, ctx.k)
        if key not in self.tables:
            raise PositivityError(f"{self.formula.role} model has no table at time index {ctx.k} for z={z}")
        tab = self.tables[key]
        cells = _cells(self.formula.key, ctx, z, self.schema, self.codec)
        pos = np.searchsorted(tab.keys, cells)
        pos = np.clip(pos, 0, max(len(tab.keys) - 1, 0))
        found = (tab.keys.size > 0) & (cells >= 0)
        if tab.keys.size:
            found = found & (tab.keys[pos] == cells)
        L = self.levels[ctx.k]
        if np.all(found):
            return tab.probs[pos]
        out = np.full((ctx.m, L), np.nan)
        out[found] = tab.probs[pos[found]]
        if self.formula.smoothing > 0:
            out[~found & (cells >= 0)] = 1.0 / L
        elif missing == "error":
            bad = int(np.flatnonzero(~found)[0])
            raise PositivityError(
                f"unseen conditioning cell {int(cells[bad])} in {self.formula.role} model at time index {ctx.k} (z={z}); "
                "no observed individuals share this history"
            )
        return out

    def prob(self, z: int, ctx: Context, missing: str = "error") -> np.ndarray:
        return self.dist(z, ctx, missing)[:, 1]

    def to_dict(self) -> dict:
        return {
            "formula": self.formula.to_dict(),
            "tables": [
                {
                    "stratum": str(s),
                    "time": int(k),
                    "cells": t.keys.tolist(),
                    "counts": t.counts.tolist(),
                    "probs": t.probs.tolist(),
                }
                for (s, k), t in sorted(self.tables.items(), key=lambda kv: (str(kv[0][0]), kv[0][1]))
            ],
            "zero_cells": self.zero_cells,
        }


def _table_levels(data: TrialDataset, role: str, t: int) -> int:
    if role in LAW_ROLES:
        codec = data.codec
        if codec is None:
            raise FitError(f"{role} law needs discrete covariates (continuous covariates are rejected)")
        return codec.block_radix(t, role)
    return 2


def fit_discrete_conditional(data: TrialDataset, role: str, time: int, formula: ModelFormula) -> DiscreteConditionalModel:
    """Empirical frequencies of ``role``'s outcome at ``time`` within key cells."""
    return _fit_tables(data, formula, (time,), role)


def _fit_tables(data: TrialDataset, formula: ModelFormula, times, role=None) -> DiscreteConditionalModel:
    role = role or formula.role
    if formula.kind != "table":
        raise ValueError("table fit needs a table formula")
    cache = data.__dict__.setdefault("_cell_cache", {})
    tables, levels, zero = {}, {}, []
    for t in times:
        L = _table_levels(data, role, t)
        kk = t if role in LAW_ROLES else t - 1
        levels[kk] = L
        for stratum in _strata(formula):
            ck = (role, t, formula.key, formula.strata, formula.require_adherence, stratum)
            if ck not in cache:
                mask, out = role_rows(data, role, t, formula.require_adherence)
                mask = mask & _stratum_mask(data, stratum)
                rows = np.flatnonzero(mask)
                ctx = data_context(data, role, t)
                cells_all = _cells(formula.key, ctx, 0 if stratum == "all" else stratum, data.schema, data.codec)
                cells = cells_all[rows]
                if formula.strata == "pooled" and formula.key != "hist" and "z" in formula.key:
                    # z varies by row in a pooled table keyed by z
                    c0 = _cells(formula.key, ctx, 0, data.schema, data.codec)[rows]
                    c1 = _cells(formula.key, ctx, 1, data.schema, data.codec)[rows]
                    cells = np.where(data.z[rows] == 1, c1, c0)
                yv = np.asarray(out[rows], dtype=np.int64)
                if np.any(cells < 0) or np.any(yv < 0) or np.any(yv >= L):
                    raise FitError(f"missing key or outcome values in the {role} risk set at time {t}")
                keys, inv = np.unique(cells, return_inverse=True)
                cache[ck] = (rows, keys, inv.reshape(-1) * L + yv)
            rows, keys, flat = cache[ck]
            if rows.size == 0:
                raise PositivityError(
                    f"empty risk set for role {role} at time {t} (stratum z={stratum}); "
                    "positivity under the intervention is violated"
                )
            w = data.weights[rows]
            counts = np.bincount(flat, weights=w, minlength=keys.size * L).reshape(keys.size, L)
            tot = counts.sum(axis=1)
            alpha = formula.smoothing
            live = tot > 0
            if not np.all(live):
                # cells present in the layout but with zero weight (bootstrap)
                zero.extend({"stratum": str(stratum), "time": int(t), "cell": int(c)} for c in keys[~live])
                keys_t, counts_t, tot_t = keys[live], counts[live], tot[live]
            else:
                keys_t, counts_t, tot_t = keys, counts, tot
            if keys_t.size == 0:
                raise PositivityError(f"empty risk set for role {role} at time {t} (stratum z={stratum})")
            probs = (counts_t + alpha) / (tot_t + alpha * L)[:, None]
            tables[(stratum, kk)] = _Table(keys_t, counts_t, probs)
    return DiscreteConditionalModel(formula, data.schema, data.codec, levels, tables, zero)


# ---------------------------------------------------------------------------
# Nuisance sets


def required_roles(estimator: str) -> tuple:
    return {
        "weighted_y": ("Y", "CR", "L_Y"),
        "weighted_d": ("D", "CR", "L_D"),
        "plug_in": ("Y", "D", "CR", "L_D", "L_Y"),
        "one_step": ("Y", "D", "CR", "L_D", "L_Y"),
        "all": ("Y", "D", "CR", "L_D", "L_Y"),
    }[estimator]


def predict(model, ctx: Context, z: int, level: int | None = None) -> np.ndarray:
    """Probability of ``level`` (default: 1) under ``model`` for each context row."""
    dist = model.dist(z, ctx)
    return dist[:, 1 if level is None else level]


class NuisanceSet:
    """Fitted models for every role, usable as a conditional law set.

    Attributes
    ----------
    models : dict
        ``role -> {time or "default": fitted model}``; covariate-law roles
        whose block is empty at a time map to None (degenerate).
    p_z1 : float
        Estimated ``P(Z = 1)``.
    """

    def __init__(self, models: dict, spec: dict, schema, K: int, codec, p_z1: float, joint_cr: bool):
        self.models = models
        self.spec = spec
        self.schema = schema
        self.K = K
        self.codec = codec
        self.p_z1 = p_z1
        self.joint_cr = joint_cr

    def p_z(self, z: int) -> float:
        return self.p_z1 if z == 1 else 1.0 - self.p_z1

    def _model(self, role: str, t: int):
        fam = self.models.get(role)
        if fam is None:
            raise CoverageError(f"nuisance set has no {role} model")
        return fam[t] if t in fam else fam["default"]

    def hazard(self, role: str, z: int, t: int, ctx: Context, missing: str = "error") -> np.ndarray:
        """``P(Y_t = 1 | ...)`` or ``P(D_t = 1 | ...)`` for each context row."""
        m = self._model(role, t)
        return _prob(m, z, ctx, missing)

    def propensity(self, z: int, t: int, ctx: Context, missing: str = "error") -> np.ndarray:
        """``P(C_t = 0, R_t = 1 | ...)`` for each context row."""
        if self.joint_cr:
            return _prob(self._model("CR", t), z, ctx, missing)
        pc = _prob(self._model("C", t), z, ctx, missing)
        pr = _prob(self._model("R", t), z, ctx, missing)
        return (1 - pc) * pr

    def law(self, role: str, z: int, s: int, ctx: Context, missing: str = "error") -> np.ndarray:
        """Probability rows over the block codes of ``role`` at time ``s``."""
        levels = self.codec.block_radix(s, role) if self.codec is not None else 2
        fam = self.models.get(role)
        if fam is None or (s in fam and fam[s] is None) or (s not in fam and fam.get("default") is None):
            if levels != 1:
                raise CoverageError(f"nuisance set has no {role} model for time {s}")
            return np.ones((ctx.m, 1))
        m = fam[s] if s in fam else fam["default"]
        if isinstance(m, DiscreteConditionalModel):
            return m.dist(z, ctx, missing)
        return m.dist(z, ctx)

    def describe(self) -> dict:
        out = {"p_z1": self.p_z1, "models": {}}
        for role, fam in self.models.items():
            out["models"][role] = {str(k): (None if m is None else m.to_dict()) for k, m in fam.items()}
        return out

    def fingerprint(self) -> str:
        return spec_fingerprint(self.spec)

    def converged(self) -> bool:
        for fam in self.models.values():
            for m in fam.values():
                if isinstance(m, PooledLogisticModel) and not all(d["converged"] for d in m.diagnostics.values()):
                    return False
        return True


def _prob(model, z, ctx, missing):
    if isinstance(model, DiscreteConditionalModel):
        return model.prob(z, ctx, missing)
    return model.prob(z, ctx)


def spec_fingerprint(spec) -> str:
    def norm(v):
        if isinstance(v, ModelFormula):
            return v.to_dict()
        if isinstance(v, Mapping):
            return {str(k): norm(x) for k, x in v.items()}
        return v

    return hashlib.sha256(json.dumps(norm(spec), sort_keys=True, default=str).encode()).hexdigest()[:16]


def _block_nonempty(schema, role: str, s: int) -> bool:
    group = schema.baseline if s == 0 else schema.time_varying
    return any(c.block == role for c in group)


def fit_nuisance_set(data: TrialDataset, spec: Mapping, estimator: str = "all") -> NuisanceSet:
    """Fit every model named in ``spec`` that ``estimator`` needs.

    Parameters
    ----------
    data : TrialDataset
    spec : mapping role -> formula dict (or time -> formula dict)
        Roles ``C`` and ``R`` together give the sequential propensity;
        ``CR`` gives the joint option.
    estimator : {"weighted_y", "weighted_d", "plug_in", "one_step", "all"}

    Raises
    ------
    CoverageError
        A required role is missing.
    FitError, PositivityError
        Propagated from the component fits.
    """
    if data.n == 0:
        raise PositivityError("empty dataset")
    need = required_roles(estimator)
    for role in spec:
        if role not in ALL_ROLES:
            raise CoverageError(f"unknown role {role!r} in model spec")
    parsed = {role: _parse_role_spec(role, s) for role, s in spec.items() if s is not None}
    joint = "CR" in parsed
    if joint and ("C" in parsed or "R" in parsed):
        raise CoverageError("give either a joint CR model or separate C and R models, not both")
    K = data.K
    models = {}
    for role in need:
        fit_roles = (["CR"] if joint else ["C", "R"]) if role == "CR" else [role]
        for r in fit_roles:
            if role in LAW_ROLES:
                needed_times = [s for s in range(K + 1) if _block_nonempty(data.schema, r, s)]
                if not needed_times:
                    models[r] = {"default": None}
                    continue
            else:
                needed_times = list(range(1, K + 2))
            if r not in parsed:
                raise CoverageError(f"estimator {estimator} needs a {r} model but the model spec has none")
            fam_spec = parsed[r]
            models[r] = _fit_family(data, r, fam_spec, needed_times)
    p1 = float(data.weights[data.z == 1].sum() / data.weights.sum())
    if not 0 < p1 < 1:
        raise PositivityError("both initiated treatments must be observed")
    codec = data.codec
    return NuisanceSet(models, {r: v for r, v in parsed.items()}, data.schema, K, codec, p1, joint)


def _fit_family(data, role, fam_spec, times) -> dict:
    default = fam_spec.get("default")
    groups = {}
    for t in times:
        f = fam_spec.get(t, default)
        if f is None:
            raise CoverageError(f"no {role} model for time {t}")
        groups.setdefault(f, []).append(t)
    out = {}
    for f, ts in groups.items():
        if f.role != role:
            f = ModelFormula.from_dict(role, f.to_dict())
        if f.kind == "table":
            m = _fit_tables(data, f, ts, role)
        else:
            m = fit_pooled_logistic(data, f, ts)
        for t in ts:
            out[t] = m
    return out
