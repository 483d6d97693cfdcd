"""Command-line front end: ``separable <command> [options]``.

Every command reads an optional JSON config (``--config``) whose keys are
overridden by explicit flags, writes deterministic artifacts under ``--out``
and exits with 0 on success. Failures print an error JSON to stderr, write
``error.json`` to the output directory when possible and exit with

* 2 for configuration problems,
* 3 for data validation failures,
* 4 for positivity or model-fitting failures.

Environment variables are never consulted.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from . import __version__
from .data import ALL_ARMS, ArmPair, CovariateSchema, DataError, TrialDataset, ingest_csv, validate_monotone, write_csv
from .estimators import ESTIMATORS, EstimateReport, estimate
from .graph import Dag, GraphError, NodeLabel, check_dcc, convert_to_strategy_centered, d_separated, find_open_path
from .inference import BootstrapConfig, BootstrapError, bootstrap_estimates, contrast_from_bootstrap, table4_csv
from .models import CoverageError, FitError, PositivityError, fit_nuisance_set, saturated_spec, spec_fingerprint
from .simulation import DgpError, DgpSpec, Scenario, two_period_dgp, blood_pressure_model_spec, blood_pressure_trial_dgp, exact_truth, misspecified_spec, run_coverage_experiment, sample_trial

__all__ = ["ConfigError", "RunConfig", "dispatch", "emit_curves", "main", "read_curves"]


class ConfigError(ValueError):
    """Unusable command line or config file."""


EXIT_CONFIG, EXIT_DATA, EXIT_FIT = 2, 3, 4


# ---------------------------------------------------------------------------
# Configuration


class RunConfig(dict):
    """Resolved settings for one command: config-file values with flag overrides."""

    IGNORED = {"out", "threads", "config", "func", "command", "graph_command"}

    @property
    def fingerprint(self) -> str:
        payload = {k: v for k, v in self.items() if k not in self.IGNORED}
        return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]

    @property
    def seed(self) -> int:
        return int(self.get("seed", 0))

    def stamp(self) -> dict:
        return {"config_fingerprint": self.fingerprint, "seed": self.seed, "version": __version__}

    def header(self) -> str:
        return f"config={self.fingerprint} seed={self.seed}"

    def require(self, key):
        if self.get(key) in (None, ""):
            raise ConfigError(f"missing required setting {key!r} (flag --{key.replace('_', '-')} or config key)")
        return self[key]


def _load_json(value, what):
    if isinstance(value, (dict, list)):
        return value
    text = str(value)
    try:
        if text.lstrip().startswith(("{", "[")):
            return json.loads(text)
        with open(text, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"{what} file not found: {text}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} is not valid JSON: {exc}") from exc


def _resolve(args) -> RunConfig:
    cfg = {}
    if args.config:
        loaded = _load_json(args.config, "config")
        if not isinstance(loaded, dict):
            raise ConfigError("config must be a JSON object")
        cfg.update(loaded)
    for key, value in vars(args).items():
        if value is not None and key != "config":
            cfg[key] = value
    cfg.setdefault("seed", 0)
    cfg.setdefault("threads", 1)
    cfg.setdefault("out", ".")
    return RunConfig(cfg)


def _arms(value) -> tuple:
    if value in (None, "all"):
        return ALL_ARMS
    if isinstance(value, str):
        value = [part.strip() for part in value.split(";") if part.strip()] if ";" in value else _load_json(value, "arms")
    arms = []
    for a in value:
        if isinstance(a, str):
            a = [int(x) for x in a.strip("()").split(",")]
        if len(a) != 2 or any(int(x) not in (0, 1) for x in a):
            raise ConfigError(f"arm {a!r} is not a pair of 0/1 values")
        arms.append(ArmPair(int(a[0]), int(a[1])))
    return tuple(arms)


def _estimators(value, default=("plug_in", "weighted_y", "one_step")) -> tuple:
    if value is None:
        return tuple(default)
    items = value.split(",") if isinstance(value, str) else list(value)
    items = [s.strip() for s in items if s.strip()]
    if items == ["all"]:
        return ESTIMATORS
    bad = [e for e in items if e not in ESTIMATORS]
    if bad:
        raise ConfigError(f"unknown estimator(s) {bad}; choose from {list(ESTIMATORS)}")
    return tuple(items)


def _model_spec(value) -> dict:
    if value in (None, "saturated", "correct"):
        return saturated_spec()
    if value == "misspecified":
        return misspecified_spec(saturated_spec())
    if value == "blood_pressure":
        return blood_pressure_model_spec()
    spec = _load_json(value, "model spec")
    if not isinstance(spec, dict):
        raise ConfigError("model spec must be a JSON object keyed by role")
    return spec


def _schema(value) -> CovariateSchema:
    if value is None:
        return CovariateSchema([], [])
    try:
        spec = _load_json(value, "schema")
        # artifacts written by `simulate` wrap the schema with provenance keys
        if isinstance(spec, dict) and "schema" in spec:
            spec = spec["schema"]
        return CovariateSchema.from_dict(spec)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid schema: {exc}") from exc


def _dgp(value) -> DgpSpec:
    if value in (None, "two_period"):
        return two_period_dgp()
    if value == "blood_pressure":
        return blood_pressure_trial_dgp()
    try:
        return DgpSpec.from_json(_load_json(value, "DGP"))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"invalid DGP: {exc}") from exc


def _data(cfg: RunConfig) -> TrialDataset:
    path = cfg.require("data")
    if not os.path.exists(path):
        raise ConfigError(f"data file not found: {path}")
    data = ingest_csv(path, _schema(cfg.get("schema")), bool(cfg.get("baseline_row", False)), cfg.get("encoding", "strategy"))
    if data.n == 0:
        raise DataError("dataset has no individuals")
    return data


def _bootstrap(cfg: RunConfig, default_draws: int = 0):
    draws = int(cfg.get("bootstrap", default_draws) or 0)
    if draws == 0:
        return None
    return BootstrapConfig(draws, float(cfg.get("level", 0.95)), cfg.seed, int(cfg.get("threads", 1)))


# ---------------------------------------------------------------------------
# Artifacts


class _Writer:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dir = Path(cfg.get("out", "."))
        self.written = []

    def path(self, name) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        return self.dir / name

    def json(self, name, payload):
        body = dict(self.cfg.stamp())
        body.update(payload)
        p = self.path(name)
        p.write_text(json.dumps(body, indent=2, sort_keys=False, default=_default) + "\n", encoding="utf-8")
        self.written.append(str(p))
        return p

    def text(self, name, text):
        p = self.path(name)
        p.write_text(text, encoding="utf-8", newline="")
        self.written.append(str(p))
        return p


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, set):
        return sorted(obj)
    return str(obj)


def emit_curves(reports, path=None, header_comment: str | None = None) -> str:
    """Tidy CSV ``arm,k,risk,lower,upper`` with one row per arm and interval.

    ``lower``/``upper`` are blank when no interval was computed.
    """
    reports = list(reports.values()) if isinstance(reports, Mapping) else list(reports)
    if len({r.horizon for r in reports}) > 1:
        raise ValueError("reports have different horizons")
    buf = io.StringIO()
    if header_comment:
        for line in header_comment.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["arm", "k", "risk", "lower", "upper"])
    for rep in reports:
        for k, v in enumerate(rep.curve, start=1):
            lo = "" if rep.lower is None else repr(float(rep.lower[k - 1]))
            hi = "" if rep.upper is None else repr(float(rep.upper[k - 1]))
            w.writerow([rep.arm.label(), k, repr(float(v)), lo, hi])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="")
    return text


def read_curves(source) -> dict:
    """Parse `emit_curves` output (path, text or file object) into ``{ArmPair: {"risk", "lower", "upper"}}`` arrays."""
    if hasattr(source, "read"):
        text = source.read()
    elif str(source).lstrip().startswith(("#", "arm")):
        text = str(source)
    else:
        text = Path(source).read_text(encoding="utf-8")
    rows = list(csv.DictReader(line for line in text.splitlines() if not line.startswith("#")))
    out = {}
    for row in rows:
        arm = ArmPair(*(int(x) for x in row["arm"].strip("()").split(",")))
        d = out.setdefault(arm, {"k": [], "risk": [], "lower": [], "upper": []})
        d["k"].append(int(row["k"]))
        d["risk"].append(float(row["risk"]))
        d["lower"].append(float(row["lower"]) if row["lower"] else np.nan)
        d["upper"].append(float(row["upper"]) if row["upper"] else np.nan)
    return {a: {k: np.asarray(v) for k, v in d.items()} for a, d in out.items()}


def _curve_files(w: _Writer, reports: dict, estimators):
    for e in estimators:
        reps = [r for (est, _), r in reports.items() if est == e]
        if reps:
            w.text(f"curves_{e}.csv", emit_curves(reps, header_comment=w.cfg.header() + f" estimator={e}"))


# ---------------------------------------------------------------------------
# Commands


def cmd_validate(cfg: RunConfig, w: _Writer) -> int:
    path = cfg.require("data")
    if not os.path.exists(path):
        raise ConfigError(f"data file not found: {path}")
    data = ingest_csv(path, _schema(cfg.get("schema")), bool(cfg.get("baseline_row", False)), cfg.get("encoding", "strategy"), validate=False)
    problems = validate_monotone(data)
    w.json("validation.json", {
        "valid": not problems and data.n > 0,
        "n": data.n,
        "horizon": data.K + 1,
        "fingerprint": data.fingerprint(),
        "violations": [{"id": v.id, "time": v.time, "rule": v.rule, "detail": v.detail} for v in problems],
    })
    if data.n == 0:
        raise DataError("dataset has no individuals")
    if problems:
        raise DataError(f"{len(problems)} validation violation(s); see validation.json")
    return 0


def _graph_in(cfg) -> Dag:
    src = cfg.require("input")
    try:
        return Dag.from_json(_load_json(src, "graph"))
    except GraphError as exc:
        raise ConfigError(str(exc)) from exc


def _graph_out(cfg: RunConfig, w: _Writer, default_name: str, payload: dict):
    out = str(cfg.get("out", "."))
    if out.endswith(".json"):
        body = dict(cfg.stamp())
        body.update(payload)
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(json.dumps(body, indent=2, default=_default) + "\n", encoding="utf-8")
        w.written.append(out)
    else:
        w.json(default_name, payload)


def cmd_graph_convert(cfg, w) -> int:
    g = convert_to_strategy_centered(_graph_in(cfg))
    out = str(cfg.get("out", "."))
    if out.endswith(".dot"):
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        header = "// " + cfg.header() + "\n"
        Path(out).write_text(header + g.to_dot("strategy_centered"), encoding="utf-8")
        w.written.append(out)
        return 0
    _graph_out(cfg, w, "graph_strategy_centered.json", g.to_json())
    return 0


def _node(g: Dag, text: str) -> NodeLabel:
    try:
        want = NodeLabel.parse(text)
    except GraphError as exc:
        raise ConfigError(str(exc)) from exc
    for v in g.nodes:
        if v == want:
            return v
    raise ConfigError(f"graph has no node {text!r}; nodes: {[str(v) for v in g.nodes]}")


def _nodes(g, value):
    if value in (None, ""):
        return []
    items = value.split(",") if isinstance(value, str) else value
    return [_node(g, s.strip()) for s in items if s.strip()]


def cmd_graph_dsep(cfg, w) -> int:
    g = _graph_in(cfg)
    x, y, z = _nodes(g, cfg.require("x")), _nodes(g, cfg.require("y")), _nodes(g, cfg.get("given"))
    sep = d_separated(g, x, y, z)
    path = None if sep else find_open_path(g, x, y, z)
    _graph_out(cfg, w, "dsep.json", {
        "x": [str(v) for v in x], "y": [str(v) for v in y], "given": [str(v) for v in z],
        "d_separated": sep, "open_path": None if path is None else [str(v) for v in path],
    })
    return 0


def cmd_graph_check_dcc(cfg, w) -> int:
    g = _graph_in(cfg)
    partition = cfg.get("partition")
    if partition is not None and partition not in ("L_D", "L_Y"):
        partition = _load_json(partition, "partition")
    report = check_dcc(g, partition)
    _graph_out(cfg, w, "dcc.json", report.to_dict())
    return 0


def cmd_fit(cfg, w) -> int:
    data = _data(cfg)
    spec = _model_spec(cfg.get("model_spec"))
    laws = fit_nuisance_set(data, spec, cfg.get("estimator", "all"))
    w.json("nuisance.json", {"data_fingerprint": data.fingerprint(), "spec_fingerprint": spec_fingerprint(spec),
                             "converged": laws.converged(), "models": laws.describe()})
    return 0


def _run_estimates(cfg, data, spec, arms, estimators):
    boot = _bootstrap(cfg)
    if boot is None:
        return estimate(data, spec, arms, estimators), None
    res = bootstrap_estimates(data, spec, arms, estimators, boot)
    return {(e, a): res[e].reports[a] for e in estimators for a in arms}, res


def cmd_estimate(cfg, w) -> int:
    data = _data(cfg)
    spec = _model_spec(cfg.get("model_spec"))
    arms, estimators = _arms(cfg.get("arms")), _estimators(cfg.get("estimators"))
    reports, _ = _run_estimates(cfg, data, spec, arms, estimators)
    w.json("estimates.json", {
        "data_fingerprint": data.fingerprint(),
        "spec_fingerprint": spec_fingerprint(spec),
        "reports": [r.to_dict() for r in reports.values()],
    })
    _curve_files(w, reports, estimators)
    return 0


def cmd_contrast(cfg, w) -> int:
    data = _data(cfg)
    spec = _model_spec(cfg.get("model_spec"))
    kind = cfg.get("kind", "Z_Y")
    if kind not in ("Z_Y", "Z_D"):
        raise ConfigError("--kind must be Z_Y or Z_D")
    at = int(cfg.get("at", 1))
    estimator = cfg.get("estimator", "weighted_y")
    _estimators([estimator])
    boot = _bootstrap(cfg, default_draws=200)
    if boot is None:
        raise ConfigError("contrast needs bootstrap draws (--bootstrap >= 2)")
    res = bootstrap_estimates(data, spec, ALL_ARMS, (estimator,), boot)[estimator]
    con = contrast_from_bootstrap(res, kind, at)
    payload = con.to_dict()
    payload["data_fingerprint"] = data.fingerprint()
    payload["bootstrap_failures"] = res.failures
    w.json("contrast.json", payload)
    w.text("table4.csv", table4_csv(res.reports, con, header_comment=cfg.header() + f" estimator={estimator}"))
    w.text(f"curves_{estimator}.csv", emit_curves(res.reports.values(), header_comment=cfg.header() + f" estimator={estimator}"))
    return 0


def cmd_simulate(cfg, w) -> int:
    dgp = _dgp(cfg.get("dgp"))
    n = int(cfg.get("n", 1000))
    mode = cfg.get("mode", "two-arm")
    data = sample_trial(dgp, n, cfg.seed, mode)
    p = w.path("simulated.csv")
    write_csv(data, p, header_comment=cfg.header() + f" dgp={dgp.fingerprint()}")
    w.written.append(str(p))
    if mode == "four-arm":
        zp = data.z_pair
        w.text("assignments.csv", "# " + cfg.header() + "\nid,z_y,z_d\n" + "".join(f"{i},{a},{b}\n" for i, (a, b) in zip(data.ids, zp)))
    w.json("schema.json", {"dgp": dgp.fingerprint(), "schema": dgp.schema.to_dict()})
    return 0


def cmd_truth(cfg, w) -> int:
    dgp = _dgp(cfg.get("dgp"))
    arms = _arms(cfg.get("arms"))
    curves = {a: exact_truth(dgp, a) for a in arms}
    buf = io.StringIO()
    buf.write(f"# {cfg.header()} dgp={dgp.fingerprint()}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["arm", "z_y", "z_d", "k", "risk"])
    for a, c in curves.items():
        for k, v in enumerate(c.values, start=1):
            wr.writerow([a.label(), a.z_y, a.z_d, k, repr(float(v))])
    w.text("truth.csv", buf.getvalue())
    w.json("truth.json", {"dgp": dgp.fingerprint(), "truth": {a.label(): [float(v) for v in c.values] for a, c in curves.items()}})
    return 0


def cmd_coverage(cfg, w) -> int:
    dgp = _dgp(cfg.get("dgp"))
    spec = cfg.get("model_spec", "correct")
    if spec not in ("correct", "misspecified"):
        spec = _model_spec(spec)
    sc = Scenario(
        dgp, spec, _estimators(cfg.get("estimators")), int(cfg.get("n", 1000)),
        int(cfg.get("replications", 200)), int(cfg.get("bootstrap", 200)), float(cfg.get("level", 0.95)),
        cfg.seed, _arms(cfg.get("arms")), int(cfg.get("threads", 1)),
    )
    table = run_coverage_experiment(sc)
    w.text("coverage.csv", f"# {cfg.header()}\n" + table.to_csv())
    payload = table.to_dict()
    payload.pop("seconds", None)
    w.json("coverage.json", payload)
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "fit": cmd_fit,
    "estimate": cmd_estimate,
    "contrast": cmd_contrast,
    "simulate": cmd_simulate,
    "truth": cmd_truth,
    "coverage": cmd_coverage,
    ("graph", "convert"): cmd_graph_convert,
    ("graph", "dsep"): cmd_graph_dsep,
    ("graph", "check-dcc"): cmd_graph_check_dcc,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its keys")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", help="output directory (graph commands also accept a .json file path)")

    data_opts = _Parser(add_help=False)
    data_opts.add_argument("--data", help="long-format CSV")
    data_opts.add_argument("--schema", help="covariate schema JSON (file or inline)")
    data_opts.add_argument("--encoding", choices=["strategy", "treatment"])
    data_opts.add_argument("--baseline-row", dest="baseline_row", action="store_true", default=None)

    model_opts = _Parser(add_help=False)
    model_opts.add_argument("--model-spec", dest="model_spec", help="'saturated', 'misspecified', 'blood_pressure' or a JSON spec")
    model_opts.add_argument("--bootstrap", type=int, help="bootstrap draws (0 for none)")
    model_opts.add_argument("--level", type=float)

    p = _Parser(prog="separable", description="Separable effects of treatment components on competing-event outcomes.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    sub.add_parser("validate", parents=[common, data_opts], help="check a dataset against the absorption rules")
    g = sub.add_parser("graph", help="graph utilities")
    gsub = g.add_subparsers(dest="graph_command", parser_class=_Parser)
    for name, helptext in (("convert", "treatment-centered to strategy-centered"), ("dsep", "d-separation query"),
                           ("check-dcc", "dismissible component conditions")):
        gp = gsub.add_parser(name, parents=[common], help=helptext)
        gp.add_argument("--in", dest="input", help="graph JSON")
        if name == "dsep":
            gp.add_argument("--x")
            gp.add_argument("--y")
            gp.add_argument("--given")
        if name == "check-dcc":
            gp.add_argument("--partition", help="'L_D', 'L_Y' or a JSON mapping of covariate nodes to blocks")
    fp = sub.add_parser("fit", parents=[common, data_opts, model_opts], help="fit nuisance models")
    fp.add_argument("--estimator", choices=list(ESTIMATORS) + ["all"])
    ep = sub.add_parser("estimate", parents=[common, data_opts, model_opts], help="risk curves per arm")
    ep.add_argument("--arms", help="'all' or e.g. '1,1;0,1'")
    ep.add_argument("--estimators", help="comma list or 'all'")
    cp = sub.add_parser("contrast", parents=[common, data_opts, model_opts], help="separable effect with bootstrap CI")
    cp.add_argument("--kind", choices=["Z_Y", "Z_D"])
    cp.add_argument("--at", type=int, choices=[0, 1])
    cp.add_argument("--estimator", choices=list(ESTIMATORS))
    sp = sub.add_parser("simulate", parents=[common], help="sample a synthetic trial")
    sp.add_argument("--dgp", help="'two_period', 'blood_pressure' or a DGP JSON")
    sp.add_argument("--n", type=int)
    sp.add_argument("--mode", choices=["two-arm", "four-arm"])
    tp = sub.add_parser("truth", parents=[common], help="exact risks by enumeration")
    tp.add_argument("--dgp")
    tp.add_argument("--arms")
    vp = sub.add_parser("coverage", parents=[common, model_opts], help="bootstrap coverage study")
    vp.add_argument("--dgp")
    vp.add_argument("--n", type=int)
    vp.add_argument("--replications", type=int)
    vp.add_argument("--estimators")
    vp.add_argument("--arms")
    return p


def _error(code, exc, out_dir):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    text = json.dumps(payload)
    print(text, file=sys.stderr)
    if out_dir and not str(out_dir).endswith(".json"):
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            (Path(out_dir) / "error.json").write_text(text + "\n", encoding="utf-8")
        except OSError:
            pass
    return code


def dispatch(argv=None) -> int:
    """Run one command; returns the process exit status."""
    parser = build_parser()
    out_dir = None
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise ConfigError("no command given; see --help")
        key = args.command if args.command != "graph" else ("graph", args.graph_command)
        if key == ("graph", None):
            raise ConfigError("graph needs a subcommand: convert, dsep or check-dcc")
        cfg = _resolve(args)
        out_dir = cfg.get("out")
        writer = _Writer(cfg)
        return COMMANDS[key](cfg, writer)
    except (ConfigError, DgpError, json.JSONDecodeError) as exc:
        return _error(EXIT_CONFIG, exc, out_dir)
    except DataError as exc:
        return _error(EXIT_DATA, exc, out_dir)
    except (PositivityError, FitError, CoverageError, BootstrapError) as exc:
        return _error(EXIT_FIT, exc, out_dir)
    except (ValueError, KeyError, TypeError) as exc:
        # remaining input-shape problems (bad spec entries, malformed schema)
        return _error(EXIT_CONFIG, exc, out_dir)


def main(argv=None) -> None:
    sys.exit(dispatch(argv))


if __name__ == "__main__":
    main()
