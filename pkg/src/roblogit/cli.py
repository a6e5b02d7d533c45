"""Command-line front end.

Subcommands::

    roblogit fit      --data DATA.csv --config FIT.yaml --out RESULT.jsonl
    roblogit path     --data DATA.csv --config PATH.yaml --out PATH.jsonl
    roblogit simulate --config SCENARIO.yaml --out DIR [--threads N]
    roblogit validate --data DATA.csv --config FIT.yaml --result RESULT.jsonl

Exit codes: 0 success (all fits converged), 1 input error, 2 a fit did not
converge (results are still written).  The default thread count for
``simulate`` comes from ``ROBLOGIT_THREADS``.
"""

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .dataset import Dataset
from .exceptions import ContractError, DivergedError, IllConditionedError, RobLogitError
from .inference import estimate_moment_matrices, sandwich_covariance
from .losses import LossSpec, empirical_loss
from .penalties import PenaltySpec, penalty_value
from .simlab import Scenario, run_experiment
from .solver import FitConfig, PathFitError, bic, fit, lambda_path, select_lambda_bic

THREADS_ENV = "ROBLOGIT_THREADS"
EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2
ROUND_TRIP_TOL = 1e-9

_FIT_KEYS = {"response", "features", "intercept", "loss", "penalty", "solver", "sandwich", "lambdas"}


class InputError(Exception):
    """Bad input file or configuration; maps to exit code 1."""


# -- input ------------------------------------------------------------------


def read_csv(path):
    """Read a headed, comma-separated numeric CSV.

    Returns ``(header, rows)`` with ``rows`` a float array.  Errors name the
    1-based line number in the file.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open data file {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file, a header row is required") from None
        except (csv.Error, UnicodeDecodeError) as exc:
            raise InputError(f"{path}: line 1: {exc}") from None
        header = [h.strip() for h in header]
        if not header or any(h == "" for h in header):
            raise InputError(f"{path}: line 1: header has empty column names")
        if len(set(header)) != len(header):
            raise InputError(f"{path}: line 1: duplicate column names")
        rows = []
        try:
            for row in reader:
                line = reader.line_num
                if not row or all(c.strip() == "" for c in row):
                    continue
                if len(row) != len(header):
                    raise InputError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
                try:
                    vals = [float(c) for c in row]
                except ValueError:
                    raise InputError(f"{path}: line {line}: non-numeric value") from None
                if not all(math.isfinite(v) for v in vals):
                    raise InputError(f"{path}: line {line}: non-finite value")
                rows.append(vals)
        except (csv.Error, UnicodeDecodeError) as exc:
            raise InputError(f"{path}: line {reader.line_num}: {exc}") from None
    if not rows:
        raise InputError(f"{path}: no data rows")
    return header, np.array(rows)


def read_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open config file {path}: {exc.strerror}") from None
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InputError(f"{path}: invalid YAML: {exc}") from None
    if cfg is None:
        cfg = {}
    if not isinstance(cfg, dict):
        raise InputError(f"{path}: top level must be a mapping")
    return cfg


def _resolve_column(spec, header, what):
    if isinstance(spec, bool):
        raise InputError(f"config: {what}: expected a column name or index")
    if isinstance(spec, int):
        if not 0 <= spec < len(header):
            raise InputError(f"config: {what}: column index {spec} out of range")
        return spec
    if spec not in header:
        raise InputError(f"config: {what}: no column named {spec!r}")
    return header.index(spec)


def load_dataset(data_path, cfg):
    """Dataset plus feature names from a CSV and the fit configuration."""
    header, rows = read_csv(data_path)
    yi = _resolve_column(cfg.get("response", len(header) - 1), header, "response")
    feats = cfg.get("features")
    if feats is None:
        xi = [j for j in range(len(header)) if j != yi]
    else:
        if not isinstance(feats, list) or not feats:
            raise InputError("config: features: expected a nonempty list")
        xi = [_resolve_column(f, header, "features") for f in feats]
        if yi in xi:
            raise InputError("config: features: the response column cannot be a feature")
    if not xi:
        raise InputError("config: no feature columns")
    y = rows[:, yi]
    bad = np.flatnonzero((y != 0) & (y != 1))
    if bad.size:
        raise InputError(
            f"{data_path}: line {_line_of(data_path, bad[0])}: response {header[yi]!r} must be 0 or 1, got {y[bad[0]]:g}"
        )
    intercept = cfg.get("intercept", False)
    if not isinstance(intercept, bool):
        raise InputError("config: intercept: expected true or false")
    return Dataset(rows[:, xi], y, intercept=intercept), [header[j] for j in xi]


def _line_of(path, data_row):
    # map a 0-based data row back to its file line, skipping blank lines as read_csv does
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        k = -1
        for row in reader:
            if not row or all(c.strip() == "" for c in row):
                continue
            k += 1
            if k == data_row:
                return reader.line_num
    return data_row + 2


def parse_fit_config(cfg, seed=None):
    unknown = sorted(set(cfg) - _FIT_KEYS)
    if unknown:
        raise InputError(f"config: unknown keys {unknown}")
    try:
        loss = LossSpec.from_config(cfg.get("loss", "exp"))
    except (TypeError, ValueError, KeyError) as exc:
        raise InputError(f"config: loss: {exc}") from None
    try:
        pen = PenaltySpec.from_config(cfg.get("penalty", "none"))
    except (TypeError, ValueError, KeyError) as exc:
        raise InputError(f"config: penalty: {exc}") from None
    solver = dict(cfg.get("solver") or {})
    if seed is not None:
        solver["seed"] = seed
    try:
        fcfg = FitConfig.from_config(solver)
    except (TypeError, ValueError) as exc:
        raise InputError(f"config: solver: {exc}") from None
    sandwich = cfg.get("sandwich", False)
    if not isinstance(sandwich, bool):
        raise InputError("config: sandwich: expected true or false")
    return loss, pen, fcfg, sandwich


# -- records ----------------------------------------------------------------


def _sandwich_se(data, res, loss):
    cols = list(res.active_set) + ([data.p] if data.intercept else [])
    if not cols:
        return None, None
    rep = estimate_moment_matrices(data, res.coef, cols, loss)
    try:
        cov = sandwich_covariance(rep)
    except IllConditionedError as exc:
        return None, str(exc)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    return {str(c): float(s) for c, s in zip(cols, se)}, None


def fit_record(data, names, res, loss, pen, sandwich):
    rec = res.to_record()
    rec["features"] = names
    rec["n"] = data.n
    rec["loss"] = loss.to_config()
    rec["penalty"] = pen.with_lambda(res.lam).to_config()
    if sandwich:
        se, err = _sandwich_se(data, res, loss)
        # keys are design column indices; the intercept, if any, is column p
        rec["sandwich_se"] = se
        if err:
            rec["sandwich_error"] = err
    return rec


def _dump(obj):
    return json.dumps(obj, sort_keys=True)


def _writable(out):
    out = Path(out)
    parent = out.parent if out.parent != Path("") else Path(".")
    if not parent.is_dir():
        raise InputError(f"output directory {parent} does not exist")
    if not os.access(parent, os.W_OK):
        raise InputError(f"output directory {parent} is not writable")
    return out


# -- commands ---------------------------------------------------------------


def cmd_fit(args):
    cfg = read_config(args.config)
    loss, pen, fcfg, sandwich = parse_fit_config(cfg, args.seed)
    if "lambdas" in cfg:
        raise InputError("config: lambdas: only used by the path command")
    out = _writable(args.out)
    data, names = load_dataset(args.data, cfg)
    res = fit(data, loss, pen, fcfg)
    rec = fit_record(data, names, res, loss, pen, sandwich)
    out.write_text(_dump(rec) + "\n", encoding="utf-8")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_path(args):
    cfg = read_config(args.config)
    loss, pen, fcfg, sandwich = parse_fit_config(cfg, args.seed)
    lambdas = cfg.get("lambdas")
    if not isinstance(lambdas, list) or not lambdas:
        raise InputError("config: lambdas: expected a nonempty list")
    try:
        lambdas = [float(l) for l in lambdas]
    except (TypeError, ValueError):
        raise InputError("config: lambdas: entries must be numbers") from None
    if any(b >= a for a, b in zip(lambdas, lambdas[1:])):
        raise InputError("config: lambdas: must be strictly descending")
    if any(l <= 0 for l in lambdas):
        raise InputError("config: lambdas: must be positive")
    out = _writable(args.out)
    data, names = load_dataset(args.data, cfg)
    results = lambda_path(data, loss, pen, lambdas, fcfg)
    lines = []
    for i, res in enumerate(results):
        rec = fit_record(data, names, res, loss, pen, sandwich)
        rec["index"] = i
        rec["bic"] = float(bic(res, data, loss))
        lines.append(_dump(rec))
    sel = select_lambda_bic(results, data, loss)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    summary = {
        "lambdas": lambdas,
        "bic": [json.loads(l)["bic"] for l in lines],
        "selected_index": sel,
        "selected_lambda": lambdas[sel],
        "all_converged": all(r.converged for r in results),
    }
    Path(str(out) + ".summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK if summary["all_converged"] else EXIT_NOT_CONVERGED


def cmd_simulate(args):
    cfg = read_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        scenario = Scenario.from_config(cfg)
    except ContractError as exc:
        raise InputError(f"scenario: {exc}") from None
    out = Path(args.out)
    if out.exists():
        if not out.is_dir():
            raise InputError(f"output path {out} exists and is not a directory")
        _writable(out / "records.jsonl")
    else:
        _writable(out)
        out.mkdir()
    report = run_experiment(scenario, threads=args.threads)
    (out / "records.jsonl").write_text(report.dumps_records(), encoding="utf-8")
    (out / "aggregate.json").write_text(report.dumps_aggregate(), encoding="utf-8")
    return EXIT_OK


def revalidate(result_path, data_path, config):
    """Re-read a fit or path result and check every stored objective.

    The objective is recomputed from the stored coefficients and the data and
    must match to ``1e-9`` (relative to ``max(1, |objective|)``).  Returns the
    number of records checked.
    """
    cfg = read_config(config) if not isinstance(config, dict) else config
    loss, pen, _, _ = parse_fit_config(cfg)
    data, names = load_dataset(data_path, cfg)
    try:
        lines = Path(result_path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"cannot open result file {result_path}: {exc.strerror}") from None
    if not lines:
        raise InputError(f"{result_path}: empty result file")
    for i, line in enumerate(lines, start=1):
        try:
            rec = json.loads(line)
            coef = np.array(rec["coefficients"], dtype=float)
            lam = float(rec["lambda"])
            stored = float(rec["objective"])
            icpt = rec["intercept"]
        except (ValueError, KeyError, TypeError) as exc:
            raise InputError(f"{result_path}: line {i}: malformed record ({exc})") from None
        if rec.get("features") != names or coef.size != data.p:
            raise InputError(f"{result_path}: line {i}: coefficients do not match the data columns")
        if (icpt is None) == data.intercept:
            raise InputError(f"{result_path}: line {i}: intercept does not match the config")
        full = coef if icpt is None else np.append(coef, icpt)
        mask = None
        if data.intercept:
            mask = np.ones(data.n_coef)
            mask[-1] = 0.0
        value = empirical_loss(full, data, loss) + penalty_value(full, pen.with_lambda(lam), mask)
        if abs(value - stored) > ROUND_TRIP_TOL * max(1.0, abs(stored)):
            raise InputError(f"{result_path}: line {i}: stored objective {stored!r} but recomputed {value!r}")
    return len(lines)


def cmd_validate(args):
    count = revalidate(args.result, args.data, args.config)
    print(f"ok: {count} record(s) re-validated")
    return EXIT_OK


# -- entry point ------------------------------------------------------------


def _default_threads():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        val = int(raw)
    except ValueError:
        raise InputError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if val < 1:
        raise InputError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return val


def _positive_int(text):
    try:
        val = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if val < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return val


def _nonneg_int(text):
    try:
        val = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text!r}") from None
    if val < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text!r}")
    return val


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; argparse would exit with 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="roblogit", description="Penalized robust logistic regression.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, data=True):
        if data:
            p.add_argument("--data", required=True, help="CSV file with a header row")
        p.add_argument("--config", required=True, help="YAML configuration file")
        p.add_argument("--seed", type=_nonneg_int, default=None, help="override the configured seed")
        p.add_argument("--threads", type=_positive_int, default=None, help=f"worker threads (default ${THREADS_ENV} or 1)")

    p = sub.add_parser("fit", help="fit one penalty level")
    common(p)
    p.add_argument("--out", required=True, help="result file (JSON lines)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("path", help="fit a descending lambda sequence with BIC selection")
    common(p)
    p.add_argument("--out", required=True, help="result file (JSON lines); a .summary.json is written next to it")
    p.set_defaults(func=cmd_path)

    p = sub.add_parser("simulate", help="run a simulation scenario")
    common(p, data=False)
    p.add_argument("--out", required=True, help="output directory for records.jsonl and aggregate.json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="re-check a fit or path result against its data")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--result", required=True)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "threads", None) is None and args.command != "validate":
            args.threads = _default_threads()
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DivergedError, PathFitError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except RobLogitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
