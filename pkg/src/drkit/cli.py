"""Batch command-line front end.

Subcommands: ``simulate`` (write a benchmark dataset CSV), ``estimate`` (run
estimators on a dataset CSV, write an EstimateReport JSON), ``replicate``
(Monte Carlo sweep, write a summary CSV + JSON), ``grid-select`` (fit the
DR grid, apply selection rules, write the sensitivity CSV + selections JSON)
and ``report`` (render a JSON artifact as plain text / plot-ready CSV).

Configuration comes from ``--config`` (a UTF-8 ``key=value`` file, entries
separated by newlines or commas, or a JSON object); ``--seed``, ``--threads``
and ``--out`` override the file.  Every error in a config is reported, not
just the first.  Outputs are written atomically (temp file + rename) and JSON
is serialized with a fixed key order and 17-significant-digit floats so equal
runs are byte-identical.  Exit codes: 0 ok, 2 config error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import json
import re
import sys
import tempfile
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import model_select
from .core import BasisSpec, Dataset, DataError, read_dataset_csv
from .glm import NumericError
from .model_select import SelectionError
from .simulate import (
    DgpConfig,
    bdr_estimator,
    gen_dataset,
    ht_estimator,
    ipw_estimator,
    run_replications,
    semipar_estimator,
    true_tau,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

COMMANDS = ("simulate", "estimate", "replicate", "grid-select", "report")

ESTIMATOR_NAMES = (
    "ipw",
    "ht",
    "bdr-reg",
    "bdr-wls",
    "bdr-nr",
    "bdr-iter-wls",
    "bdr-iter-reg",
    "semipar",
    "semipar-wop",
)


class ConfigError(Exception):
    """Carries every validation error found in a config."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# --- canonical JSON ----------------------------------------------------------

def dumps_canonical(obj, _level: int = 0) -> str:
    """Deterministic JSON: insertion-ordered keys, floats with 17 significant digits."""
    pad = "  " * _level
    inner = "  " * (_level + 1)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if not np.isfinite(f):
            return "null"
        return format(f, ".17g")
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f"{inner}{json.dumps(str(k), ensure_ascii=False)}: {dumps_canonical(v, _level + 1)}"
            for k, v in obj.items()
        ]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        items = [f"{inner}{dumps_canonical(v, _level + 1)}" for v in seq]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".drkit-tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- basis-spec mini-grammar --------------------------------------------------

_TOKEN = re.compile(
    r"^(?:1|(?P<l1>[xz])(?P<j>\d+)(?:\^(?P<e>\d+))?|(?P<l2>[xz])(?P<a>\d+)\*(?P<l3>[xz])(?P<b>\d+))$"
)


def parse_spec_string(text: str) -> BasisSpec:
    """Parse the spec mini-grammar: ``1``, ``xJ``, ``zJ``, ``xJ^E``, ``xJ*xK``.

    Terms are separated by ``+`` or ``,``; the leading ``1`` is mandatory and
    all terms must read the same covariate source letter.
    """
    raw = [tok.strip() for tok in re.split(r"[+,]", text) if tok.strip()]
    if not raw:
        raise ValueError(f"empty basis spec {text!r}")
    if raw[0] != "1":
        raise ValueError(f"basis spec must start with the constant term '1': {text!r}")
    terms: list[tuple] = [("const",)]
    letters = set()
    for tok in raw[1:]:
        m = _TOKEN.match(tok)
        if not m:
            raise ValueError(f"malformed spec term {tok!r}")
        if tok == "1":
            raise ValueError("the constant term may appear only once, first")
        if m.group("l1"):
            letters.add(m.group("l1"))
            j = int(m.group("j")) - 1
            if j < 0:
                raise ValueError(f"column indices are 1-based: {tok!r}")
            if m.group("e"):
                terms.append(("power", j, int(m.group("e"))))
            else:
                terms.append(("raw", j))
        else:
            la, lb = m.group("l2"), m.group("l3")
            if la != lb:
                raise ValueError(f"interaction terms cannot mix sources: {tok!r}")
            letters.add(la)
            terms.append(("interaction", int(m.group("a")) - 1, int(m.group("b")) - 1))
    if len(letters) > 1:
        raise ValueError(f"spec mixes covariate sources {sorted(letters)}: {text!r}")
    source = letters.pop() if letters else "x"
    return BasisSpec(terms=tuple(terms), source=source)


# --- config parsing -----------------------------------------------------------

@dataclass
class RunConfig:
    command: str
    options: dict


_KEYS: dict[str, dict[str, tuple]] = {
    # key: (type tag, required, default)
    "simulate": {
        "n": ("int", True, None),
        "seed": ("int", False, 0),
        "out": ("path", True, None),
        "noise_sd": ("float", False, 1.0),
        "gamma": ("floats", False, None),
        "threads": ("int", False, None),
    },
    "estimate": {
        "input": ("path", True, None),
        "out": ("path", True, None),
        "estimators": ("names", True, None),
        "prop_spec": ("spec", True, None),
        "out_spec": ("spec", False, None),
        "v_spec": ("spec", False, None),
        "vdag_spec": ("spec", False, None),
        "link": ("str", False, "identity"),
        "eps": ("float", False, 0.01),
        "truncate": ("float", False, None),
        "seed": ("int", False, 0),
        "threads": ("int", False, None),
    },
    "replicate": {
        "n": ("int", True, None),
        "R": ("int", True, None),
        "out": ("path", True, None),
        "out_json": ("path", False, None),
        "estimators": ("names", True, None),
        "prop_spec": ("spec", True, None),
        "out_spec": ("spec", False, None),
        "v_spec": ("spec", False, None),
        "vdag_spec": ("spec", False, None),
        "link": ("str", False, "identity"),
        "gamma": ("floats", False, None),
        "noise_sd": ("float", False, 1.0),
        "seed": ("int", False, 0),
        "threads": ("int", False, None),
    },
    "grid-select": {
        "input": ("path", True, None),
        "out": ("path", True, None),
        "out_json": ("path", False, None),
        "prop_specs": ("specs", False, "default"),
        "out_specs": ("specs", False, "default"),
        "rules": ("rules", False, ("sd", "range")),
        "c": ("floats", False, (1.0,)),
        "folds": ("int", False, 5),
        "B": ("int", False, 200),
        "tau_true": ("float", False, None),
        "dr_method": ("str", False, "WLS"),
        "seed": ("int", False, 0),
        "threads": ("int", False, None),
    },
    "report": {
        "input": ("path", True, None),
        "out": ("path", True, None),
        "plot_out": ("path", False, None),
        "seed": ("int", False, 0),
        "threads": ("int", False, None),
    },
}


def _parse_kv_text(text: str) -> dict:
    pairs: dict[str, str] = {}
    for chunk in re.split(r"[\n,]", text):
        chunk = chunk.strip()
        if not chunk or chunk.startswith("#"):
            continue
        if "=" not in chunk:
            raise ConfigError([f"malformed config entry {chunk!r} (expected key=value)"])
        key, val = chunk.split("=", 1)
        pairs[key.strip()] = val.strip()
    return pairs


def _coerce(kind: str, key: str, val, errors: list):
    try:
        if kind == "int":
            return int(val)
        if kind == "float":
            return float(val)
        if kind in ("str", "path"):
            return str(val)
        if kind == "floats":
            if isinstance(val, (list, tuple)):
                return tuple(float(v) for v in val)
            return tuple(float(v) for v in str(val).split(";") if v.strip())
        if kind == "names":
            names = (
                [str(v) for v in val]
                if isinstance(val, (list, tuple))
                else [v.strip() for v in str(val).split(";") if v.strip()]
            )
            bad = [nm for nm in names if nm not in ESTIMATOR_NAMES]
            if bad:
                errors.append(f"{key}: unknown estimator(s) {bad}; known: {list(ESTIMATOR_NAMES)}")
                return None
            return tuple(names)
        if kind == "rules":
            names = (
                [str(v) for v in val]
                if isinstance(val, (list, tuple))
                else [v.strip() for v in str(val).split(";") if v.strip()]
            )
            bad = [nm for nm in names if nm not in model_select.RULES]
            if bad:
                errors.append(f"{key}: unknown rule(s) {bad}; known: {list(model_select.RULES)}")
                return None
            return tuple(names)
        if kind == "spec":
            return parse_spec_string(str(val))
        if kind == "specs":
            if isinstance(val, str) and val.strip() == "default":
                return "default"
            items = val if isinstance(val, (list, tuple)) else str(val).split(";")
            return tuple(parse_spec_string(str(s)) for s in items if str(s).strip())
    except (ValueError, TypeError) as exc:
        errors.append(f"{key}: {exc}")
        return None
    raise AssertionError(f"unknown kind {kind}")


def parse_config(text: str, command: Optional[str] = None) -> RunConfig:
    """Parse and fully validate a config; raises ConfigError with every problem."""
    errors: list[str] = []
    text_stripped = text.lstrip()
    if text_stripped.startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"invalid JSON config: {exc}"]) from None
        if not isinstance(raw, dict):
            raise ConfigError(["JSON config must be an object"])
    else:
        raw = _parse_kv_text(text)

    cmd = raw.pop("command", None)
    if cmd is not None and command is not None and cmd != command:
        errors.append(f"config command {cmd!r} does not match subcommand {command!r}")
    cmd = command or cmd
    if cmd not in COMMANDS:
        raise ConfigError(errors + [f"unknown command {cmd!r}; expected one of {list(COMMANDS)}"])

    table = _KEYS[cmd]
    options: dict = {}
    for key, val in raw.items():
        if key not in table:
            errors.append(f"unknown key {key!r} for command {cmd}")
            continue
        kind = table[key][0]
        coerced = _coerce(kind, key, val, errors)
        if coerced is not None:
            options[key] = coerced
    for key, (kind, required, default) in table.items():
        if key not in options:
            if required and not any(e.startswith(f"{key}:") for e in errors):
                errors.append(f"missing required key {key!r} for command {cmd}")
            elif default is not None:
                options[key] = default

    # cross-field requirements
    if cmd in ("estimate", "replicate") and "estimators" in options:
        names = options["estimators"]
        if any(nm.startswith("bdr-") for nm in names) and "out_spec" not in options:
            errors.append("out_spec is required when a bdr-* estimator is requested")
        if any(nm.startswith("semipar") for nm in names):
            if "v_spec" not in options:
                errors.append("v_spec is required when a semipar estimator is requested")
            options.setdefault("vdag_spec", options.get("v_spec"))
    if cmd == "grid-select" and "rules" in options and "oracle" in options["rules"]:
        if options.get("tau_true") is None:
            errors.append("the oracle rule requires tau_true")
    if errors:
        raise ConfigError(errors)
    return RunConfig(command=cmd, options=options)


# --- command implementations ---------------------------------------------------

def _build_suite(opts: dict) -> dict:
    suite = {}
    for name in opts["estimators"]:
        if name == "ipw":
            suite[name] = ipw_estimator(opts["prop_spec"])
        elif name == "ht":
            suite[name] = ht_estimator(opts["prop_spec"])
        elif name.startswith("bdr-"):
            method = name[4:].upper()
            kw = {"link": opts.get("link", "identity"), "eps": opts.get("eps", 0.01)}
            if opts.get("truncate") is not None:
                kw["truncate"] = opts["truncate"]
            suite[name] = bdr_estimator(method, opts["prop_spec"], opts["out_spec"], **kw)
        else:
            weight = "omega-op-hat" if name == "semipar-wop" else "unit"
            suite[name] = semipar_estimator(
                opts["v_spec"], opts["vdag_spec"], opts["prop_spec"], weight=weight
            )
    return suite


def _run_simulate(opts: dict) -> str:
    cfg = DgpConfig(
        n=opts["n"], seed=opts["seed"], gamma=opts.get("gamma"), noise_sd=opts["noise_sd"]
    )
    ds = gen_dataset(cfg)
    import io

    buf = io.StringIO()
    _write_dataset(ds, buf)
    _atomic_write(opts["out"], buf.getvalue())
    n0, n1 = ds.arm_counts()
    return (
        f"simulate: wrote {ds.n} units to {opts['out']} "
        f"(arm 0: {n0}, arm 1: {n1}, true tau = {true_tau(cfg):g})"
    )


def _write_dataset(ds: Dataset, fh) -> None:
    p = ds.x.shape[1]
    q = ds.z.shape[1] if ds.z is not None else 0
    header = ["y", "t"] + [f"x{i}" for i in range(1, p + 1)] + [f"z{i}" for i in range(1, q + 1)]
    fh.write(",".join(header) + "\n")
    for i in range(ds.n):
        fields = [format(ds.y[i], ".17g"), str(int(ds.t[i]))]
        fields += [format(v, ".17g") for v in ds.x[i]]
        if q:
            fields += [format(v, ".17g") for v in ds.z[i]]
        fh.write(",".join(fields) + "\n")


def _run_estimate(opts: dict) -> str:
    ds = read_dataset_csv(opts["input"])
    suite = _build_suite(opts)
    reports = []
    for name, fn in suite.items():
        reports.append(fn(ds))
    payload = {
        "command": "estimate",
        "input": opts["input"],
        "seed": opts["seed"],
        "reports": [r.to_dict() for r in reports],
    }
    _atomic_write(opts["out"], dumps_canonical(payload) + "\n")
    lines = [f"estimate: {opts['input']} -> {opts['out']}"]
    for r in reports:
        lines.append(
            f"  {r.tag:14s} {r.estimate: .6f}  95% CI [{r.ci_lower: .6f}, {r.ci_upper: .6f}]"
        )
    return "\n".join(lines)


def _run_replicate(opts: dict) -> str:
    cfg = DgpConfig(
        n=opts["n"], seed=opts["seed"], gamma=opts.get("gamma"), noise_sd=opts["noise_sd"]
    )
    suite = _build_suite(opts)
    threads = opts.get("threads") or 1
    summary = run_replications(cfg, opts["R"], suite, threads=threads)
    _atomic_write(opts["out"], summary.to_csv_text())
    out_json = opts.get("out_json") or _sibling_json(opts["out"])
    payload = {
        "command": "replicate",
        "n": opts["n"],
        "R": opts["R"],
        "seed": opts["seed"],
        "true_tau": true_tau(cfg),
        "summary": summary.to_dict(),
    }
    _atomic_write(out_json, dumps_canonical(payload) + "\n")
    lines = [f"replicate: R={opts['R']}, n={opts['n']} -> {opts['out']}, {out_json}"]
    for row in summary.rows:
        cov = "-" if row.coverage is None else f"{row.coverage:.3f}"
        lines.append(
            f"  {row.estimator:14s} bias {row.mc_bias: .4f}  var {row.mc_variance: .4f}  "
            f"mse {row.mc_mse: .4f}  coverage {cov}  failures {row.failures}"
        )
    return "\n".join(lines)


def _sibling_json(path: str) -> str:
    root, ext = os.path.splitext(path)
    return root + ".json" if ext.lower() == ".csv" else path + ".json"


def _grid_csv(grid) -> str:
    I, J = grid.shape
    lines = ["," + ",".join([f"out{j + 1}" for j in range(J)] + ["row_sd", "row_range"])]
    row_sd, row_rg = grid.row_sds(), grid.row_ranges()
    col_sd, col_rg = grid.col_sds(), grid.col_ranges()

    def fmt(v):
        return "FAIL" if not np.isfinite(v) else format(v, ".17g")

    for i in range(I):
        cells = [
            "FAIL" if grid.failures[i, j] else format(grid.tau[i, j], ".17g") for j in range(J)
        ]
        lines.append(",".join([f"prop{i + 1}"] + cells + [fmt(row_sd[i]), fmt(row_rg[i])]))
    lines.append(",".join(["col_sd"] + [fmt(v) for v in col_sd] + ["", ""]))
    lines.append(",".join(["col_range"] + [fmt(v) for v in col_rg] + ["", ""]))
    return "\n".join(lines) + "\n"


def _run_grid_select(opts: dict) -> str:
    ds = read_dataset_csv(opts["input"])
    prop_specs = (
        model_select.default_prop_specs() if opts["prop_specs"] == "default" else opts["prop_specs"]
    )
    out_specs = (
        model_select.default_out_specs() if opts["out_specs"] == "default" else opts["out_specs"]
    )
    grid = model_select.build_grid(ds, prop_specs, out_specs, dr_method=opts["dr_method"])
    outcomes = []
    rule_errors = []
    for rule in opts["rules"]:
        try:
            if rule == "sd":
                outcomes.append(model_select.select_sd(grid))
            elif rule == "range":
                outcomes.append(model_select.select_range(grid))
            elif rule == "wald":
                if grid.boot_cov is None:
                    model_select.attach_bootstrap_covariance(
                        ds, grid, B=opts["B"], seed=opts["seed"]
                    )
                outcomes.append(model_select.select_wald(grid))
            elif rule == "joint":
                for c in opts["c"]:
                    outcomes.append(model_select.select_joint(grid, c=c))
            elif rule == "cv":
                outcomes.append(
                    model_select.select_cv(
                        ds, prop_specs, out_specs, folds=opts["folds"], seed=opts["seed"], grid=grid
                    )
                )
            elif rule == "oracle":
                outcomes.append(model_select.oracle(grid, opts["tau_true"]))
        except SelectionError as exc:
            rule_errors.append({"rule": rule, "error": str(exc)})
    _atomic_write(opts["out"], _grid_csv(grid))
    out_json = opts.get("out_json") or _sibling_json(opts["out"])
    payload = {
        "command": "grid-select",
        "input": opts["input"],
        "seed": opts["seed"],
        "grid": grid.to_dict(),
        "selections": [o.to_dict() for o in outcomes],
        "rule_errors": rule_errors,
    }
    _atomic_write(out_json, dumps_canonical(payload) + "\n")
    lines = [f"grid-select: {grid.shape[0]}x{grid.shape[1]} grid -> {opts['out']}, {out_json}"]
    for o in outcomes:
        extra = f" (c={o.scores['c']})" if o.rule == "joint" else ""
        lines.append(f"  {o.rule:8s}{extra} -> cell ({o.i + 1}, {o.j + 1}), tau = {o.tau:.6f}")
    for err in rule_errors:
        lines.append(f"  {err['rule']:8s} -> no valid cell: {err['error']}")
    return "\n".join(lines)


def _run_report(opts: dict) -> str:
    with open(opts["input"], "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    kind = payload.get("command")
    lines: list[str] = [f"drkit report: {opts['input']} ({kind})"]
    plot_rows: list[str] = []
    if kind == "estimate":
        for r in payload["reports"]:
            lines.append(
                f"  {r['tag']:14s} estimate {r['estimate']: .6f}  "
                f"variance {r['variance']:.6g}  CI [{r['ci_lower']:.6f}, {r['ci_upper']:.6f}]"
            )
        plot_rows = ["tag,estimate,ci_lower,ci_upper"] + [
            f"{r['tag']},{r['estimate']!r},{r['ci_lower']!r},{r['ci_upper']!r}"
            for r in payload["reports"]
        ]
    elif kind == "replicate":
        lines.append(f"  R = {payload['R']}, n = {payload['n']}, truth = {payload['true_tau']}")
        for r in payload["summary"]["rows"]:
            cov = "-" if r["coverage"] is None else f"{r['coverage']:.3f}"
            lines.append(
                f"  {r['estimator']:14s} bias {r['mc_bias']: .4f}  var {r['mc_variance']: .4f}  "
                f"mse {r['mc_mse']: .4f}  coverage {cov}"
            )
        plot_rows = ["estimator,bias,variance,mse,coverage"] + [
            f"{r['estimator']},{r['mc_bias']!r},{r['mc_variance']!r},{r['mc_mse']!r},"
            + ("" if r["coverage"] is None else repr(r["coverage"]))
            for r in payload["summary"]["rows"]
        ]
    elif kind == "grid-select":
        grid = model_select.SelectionGrid.from_dict(payload["grid"])
        lines.append(model_select.sensitivity_report(grid).text)
        for o in payload["selections"]:
            lines.append(f"  {o['rule']:8s} -> cell ({o['i'] + 1}, {o['j'] + 1}), tau = {o['tau']:.6f}")
        plot_rows = ["i,j,tau"] + [
            f"{i + 1},{j + 1},{grid.tau[i, j]!r}"
            for i in range(grid.shape[0])
            for j in range(grid.shape[1])
            if not grid.failures[i, j]
        ]
    else:
        raise DataError(f"unrecognized report input (command={kind!r})")
    text = "\n".join(lines) + "\n"
    _atomic_write(opts["out"], text)
    if opts.get("plot_out") and plot_rows:
        _atomic_write(opts["plot_out"], "\n".join(plot_rows) + "\n")
    return text.rstrip("\n")


_RUNNERS = {
    "simulate": _run_simulate,
    "estimate": _run_estimate,
    "replicate": _run_replicate,
    "grid-select": _run_grid_select,
    "report": _run_report,
}


def run(config: RunConfig) -> int:
    """Execute a validated config; returns the process exit code."""
    try:
        message = _RUNNERS[config.command](config.options)
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(message)
    return EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="drkit",
        description="Double-robust treatment-effect estimation toolkit (batch CLI).",
    )
    sub = parser.add_subparsers(dest="command")
    for cmd in COMMANDS:
        p = sub.add_parser(cmd)
        p.add_argument("--config", default=None, help="key=value or JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", default=None)
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG

    text = ""
    if args.config is not None:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        cfg = _merge_cli_overrides(text, args)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


def _merge_cli_overrides(text: str, args) -> RunConfig:
    overrides = []
    if args.seed is not None:
        overrides.append(("seed", str(args.seed)))
    if args.threads is not None:
        overrides.append(("threads", str(args.threads)))
    if args.out is not None:
        overrides.append(("out", args.out))
    if not args.threads and os.environ.get("DRKIT_THREADS"):
        overrides.append(("threads", os.environ["DRKIT_THREADS"]))
    if text.lstrip().startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"invalid JSON config: {exc}"]) from None
        raw.update({k: v for k, v in overrides})
        merged = json.dumps(raw)
        return parse_config(merged, command=args.command)
    merged = text
    for k, v in overrides:
        merged += f"\n{k}={v}"
    return parse_config(merged, command=args.command)


if __name__ == "__main__":
    sys.exit(main())
