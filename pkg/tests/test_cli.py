import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from roblogit import cli
from roblogit.losses import LossSpec, empirical_loss, link

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "configs" / "scenarios"


def write_csv(path, X, y, names=None, yname="y"):
    names = names or [f"x{j}" for j in range(X.shape[1])]
    lines = [",".join(names + [yname])]
    lines += [",".join([repr(float(v)) for v in row] + [str(int(t))]) for row, t in zip(X, y)]
    path.write_text("\n".join(lines) + "\n")
    return path


def toy(tmp_path, n=200, beta=(1.0, -1.0), seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, len(beta)))
    y = (rng.random(n) < link(X @ np.asarray(beta))).astype(int)
    return write_csv(tmp_path / "data.csv", X, y), X, y


def write_cfg(path, text):
    path.write_text(text)
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_lines(path):
    return [json.loads(l) for l in Path(path).read_text().splitlines()]


# -- fit --------------------------------------------------------------------


def test_fit_toy(tmp_path):
    data, X, y = toy(tmp_path)
    cfg = write_cfg(tmp_path / "fit.yaml", "loss: {family: exp}\npenalty: none\n")
    out = tmp_path / "res.jsonl"
    assert run("fit", "--data", data, "--config", cfg, "--out", out) == 0
    (rec,) = read_lines(out)
    assert len(rec["coefficients"]) == 2
    assert rec["features"] == ["x0", "x1"]
    assert rec["converged"] is True
    assert rec["objective"] == pytest.approx(empirical_loss(rec["coefficients"], _ds(X, y), LossSpec.exp()), abs=1e-12)


def _ds(X, y):
    from roblogit.dataset import Dataset

    return Dataset(X, y)


def test_fit_large_lasso_zeroes_everything(tmp_path):
    data, _, _ = toy(tmp_path)
    cfg = write_cfg(tmp_path / "fit.yaml", "penalty: {family: lasso, lambda: 10}\n")
    out = tmp_path / "res.jsonl"
    assert run("fit", "--data", data, "--config", cfg, "--out", out) == 0
    (rec,) = read_lines(out)
    assert rec["coefficients"] == [0.0, 0.0]
    assert rec["active_set"] == []


def test_fit_with_intercept_and_sandwich(tmp_path):
    data, _, _ = toy(tmp_path, n=500)
    cfg = write_cfg(
        tmp_path / "fit.yaml",
        "response: y\nfeatures: [x1, x0]\nintercept: true\nloss: {family: divergence, c: 0.5}\n"
        "penalty: {family: scad, lambda: 0.05}\nsandwich: true\nsolver: {tol: 1.0e-10}\n",
    )
    out = tmp_path / "res.jsonl"
    assert run("fit", "--data", data, "--config", cfg, "--out", out) == 0
    (rec,) = read_lines(out)
    assert rec["features"] == ["x1", "x0"]
    assert rec["intercept"] is not None
    assert set(rec["sandwich_se"]) == {"0", "1", "2"}
    assert all(0 < v < 1 for v in rec["sandwich_se"].values())
    assert cli.revalidate(out, data, cfg) == 1


def test_fit_not_converged_still_writes(tmp_path):
    data, _, _ = toy(tmp_path)
    cfg = write_cfg(tmp_path / "fit.yaml", "solver: {max_iters: 1}\n")
    out = tmp_path / "res.jsonl"
    assert run("fit", "--data", data, "--config", cfg, "--out", out) == 2
    (rec,) = read_lines(out)
    assert rec["converged"] is False


def test_response_value_two_is_rejected_with_line(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("a,y\n0.5,1\n\n-0.2,0\n1.0,2\n")
    cfg = write_cfg(tmp_path / "fit.yaml", "{}\n")
    assert run("fit", "--data", path, "--config", cfg, "--out", tmp_path / "o.jsonl") == 1
    err = capsys.readouterr().err
    assert "line 5" in err and "must be 0 or 1" in err
    assert not (tmp_path / "o.jsonl").exists()


@pytest.mark.parametrize(
    "body, fragment",
    [
        ("a,y\n1,0\n2\n", "line 3: expected 2 fields"),
        ("a,y\n1,0\nfoo,1\n", "line 3: non-numeric"),
        ("a,y\n1,0\nnan,1\n", "line 3: non-finite"),
        ("", "header row is required"),
        ("a,y\n", "no data rows"),
        ("a,a\n1,0\n", "line 1: duplicate"),
    ],
)
def test_malformed_csv(tmp_path, capsys, body, fragment):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    cfg = write_cfg(tmp_path / "fit.yaml", "{}\n")
    assert run("fit", "--data", path, "--config", cfg, "--out", tmp_path / "o.jsonl") == 1
    assert fragment in capsys.readouterr().err


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("loss: {family: nope}\n", "loss"),
        ("penalty: {family: scad, lambda: -1}\n", "penalty"),
        ("solver: {tol: -1}\n", "solver"),
        ("bogus: 1\n", "unknown keys"),
        ("response: zz\n", "response"),
        ("- a\n- b\n", "mapping"),
        ("penalty: [unclosed\n", "invalid YAML"),
        ("lambdas: [1.0]\n", "lambdas"),
    ],
)
def test_bad_config(tmp_path, capsys, text, fragment):
    data, _, _ = toy(tmp_path)
    cfg = write_cfg(tmp_path / "fit.yaml", text)
    assert run("fit", "--data", data, "--config", cfg, "--out", tmp_path / "o.jsonl") == 1
    assert fragment in capsys.readouterr().err


def test_missing_files_and_usage_errors(tmp_path, capsys):
    data, _, _ = toy(tmp_path)
    cfg = write_cfg(tmp_path / "fit.yaml", "{}\n")
    assert run("fit", "--data", tmp_path / "none.csv", "--config", cfg, "--out", tmp_path / "o") == 1
    assert run("fit", "--data", data, "--config", tmp_path / "none.yaml", "--out", tmp_path / "o") == 1
    assert run("fit", "--data", data, "--config", cfg, "--out", tmp_path / "nodir" / "o") == 1
    with pytest.raises(SystemExit) as info:
        run("fit", "--data", data)
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        run("simulate", "--config", cfg, "--out", tmp_path, "--threads", "0")
    assert info.value.code == 1


def test_seed_override_changes_only_multistart(tmp_path):
    data, _, _ = toy(tmp_path)
    cfg = write_cfg(tmp_path / "fit.yaml", "penalty: {family: scad, lambda: 0.05}\nsolver: {n_starts: 3}\n")
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert run("fit", "--data", data, "--config", cfg, "--out", a, "--seed", 5) == 0
    assert run("fit", "--data", data, "--config", cfg, "--out", b, "--seed", 5) == 0
    assert a.read_bytes() == b.read_bytes()


# -- round trip -------------------------------------------------------------


def test_round_trip_detects_tampering(tmp_path):
    data, _, _ = toy(tmp_path)
    cfg = write_cfg(tmp_path / "fit.yaml", "penalty: {family: mcp, lambda: 0.05}\n")
    out = tmp_path / "res.jsonl"
    assert run("fit", "--data", data, "--config", cfg, "--out", out) == 0
    assert run("validate", "--data", data, "--config", cfg, "--result", out) == 0
    rec = read_lines(out)[0]
    rec["objective"] += 1e-6
    out.write_text(json.dumps(rec) + "\n")
    assert run("validate", "--data", data, "--config", cfg, "--result", out) == 1


# -- path -------------------------------------------------------------------


def test_single_lambda_path_matches_fit(tmp_path):
    data, _, _ = toy(tmp_path)
    fit_cfg = write_cfg(tmp_path / "fit.yaml", "penalty: {family: scad, lambda: 0.05}\n")
    path_cfg = write_cfg(tmp_path / "path.yaml", "penalty: {family: scad}\nlambdas: [0.05]\n")
    assert run("fit", "--data", data, "--config", fit_cfg, "--out", tmp_path / "f.jsonl") == 0
    assert run("path", "--data", data, "--config", path_cfg, "--out", tmp_path / "p.jsonl") == 0
    (f,) = read_lines(tmp_path / "f.jsonl")
    (p,) = read_lines(tmp_path / "p.jsonl")
    extra = {k: p.pop(k) for k in ("bic", "index")}
    assert p == f
    assert extra["index"] == 0 and np.isfinite(extra["bic"])
    summary = json.loads((tmp_path / "p.jsonl.summary.json").read_text())
    assert summary["selected_index"] == 0


def test_path_descending_and_bic(tmp_path):
    data, _, _ = toy(tmp_path, n=400, beta=(1.5, 0.0, -1.5, 0.0))
    cfg = write_cfg(tmp_path / "path.yaml", "penalty: {family: scad}\nlambdas: [1.0, 0.3, 0.1, 0.03]\n")
    out = tmp_path / "p.jsonl"
    assert run("path", "--data", data, "--config", cfg, "--out", out) == 0
    recs = read_lines(out)
    assert [r["index"] for r in recs] == [0, 1, 2, 3]
    summary = json.loads(Path(str(out) + ".summary.json").read_text())
    assert summary["bic"] == [r["bic"] for r in recs]
    assert summary["selected_index"] == int(np.argmin(summary["bic"]))
    assert cli.revalidate(out, data, cfg) == 4
    bad = write_cfg(tmp_path / "bad.yaml", "penalty: {family: scad}\nlambdas: [0.1, 0.3]\n")
    assert run("path", "--data", data, "--config", bad, "--out", tmp_path / "q.jsonl") == 1


def test_path_is_byte_identical(tmp_path):
    data, _, _ = toy(tmp_path)
    cfg = write_cfg(tmp_path / "path.yaml", "loss: {family: divergence}\npenalty: {family: mcp}\nlambdas: [0.5, 0.1, 0.02]\n")
    for name in ("a", "b"):
        assert run("path", "--data", data, "--config", cfg, "--out", tmp_path / f"{name}.jsonl") == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert (tmp_path / "a.jsonl.summary.json").read_bytes() == (tmp_path / "b.jsonl.summary.json").read_bytes()


# -- simulate ---------------------------------------------------------------


def test_simulate_smoke_is_fast_and_repeatable(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "2")
    t0 = time.perf_counter()
    assert run("simulate", "--config", SCENARIOS / "smoke.yaml", "--out", tmp_path / "a") == 0
    assert time.perf_counter() - t0 < 5
    assert run("simulate", "--config", SCENARIOS / "smoke.yaml", "--out", tmp_path / "b", "--threads", 1) == 0
    for name in ("records.jsonl", "aggregate.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert len((tmp_path / "a" / "records.jsonl").read_text().splitlines()) == 1


def test_simulate_seed_override(tmp_path):
    assert run("simulate", "--config", SCENARIOS / "smoke.yaml", "--out", tmp_path / "a", "--seed", 9) == 0
    agg = json.loads((tmp_path / "a" / "aggregate.json").read_text())
    assert agg["scenario"]["seed"] == 9


def test_simulate_validation_names_field(tmp_path, capsys):
    cfg = write_cfg(
        tmp_path / "s.yaml",
        "n_grid: [100]\np_rule: {kind: fixed, p: 3}\nk: 2\nbeta0_rule: {kind: fixed_magnitudes, values: [1, 0]}\nreplications: 1\n",
    )
    assert run("simulate", "--config", cfg, "--out", tmp_path / "o") == 1
    assert "beta0_rule.values" in capsys.readouterr().err


def test_bad_thread_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.THREADS_ENV, "many")
    assert run("simulate", "--config", SCENARIOS / "smoke.yaml", "--out", tmp_path / "o") == 1
    assert cli.THREADS_ENV in capsys.readouterr().err


@pytest.mark.parametrize("name", ["rate", "selection", "normality", "robust_exp", "robust_deviance"])
def test_acceptance_scenarios_parse(name):
    from roblogit.simlab import Scenario

    sc = Scenario.from_config(cli.read_config(SCENARIOS / f"{name}.yaml"))
    assert sc.seed == 20261015


def test_console_entry_point(tmp_path):
    data, _, _ = toy(tmp_path)
    cfg = write_cfg(tmp_path / "fit.yaml", "{}\n")
    out = tmp_path / "r.jsonl"
    proc = subprocess.run(
        [sys.executable, "-m", "roblogit.cli", "fit", "--data", str(data), "--config", str(cfg), "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
