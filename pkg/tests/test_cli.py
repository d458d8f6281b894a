import csv
import hashlib
import json
import math
import shutil
import subprocess

import numpy as np
import pytest

from gsmpkit.cli import EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, main


def _run(tmp_path, command, config=None, *extra, out="out"):
    argv = [command, "--out", str(tmp_path / out), "--quiet"]
    if config is not None:
        path = tmp_path / f"{out}.json"
        path.write_text(json.dumps(config) if not isinstance(config, str) else config)
        argv += ["--config", str(path)]
    return main(argv + list(extra)), tmp_path / out


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _check_manifest(out, status):
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == status
    assert set(man["versions"]) == {"gsmpkit", "numpy", "scipy", "python"}
    for entry in man["files"]:
        data = (out / entry["path"]).read_bytes()
        assert entry["bytes"] == len(data)
        assert entry["sha256"] == hashlib.sha256(data).hexdigest()
    return man


def test_potential_default(tmp_path):
    code, out = _run(tmp_path, "potential")
    assert code == EXIT_OK
    pot = json.loads((out / "potential.json").read_text())
    assert pot["potential"] == {"lambda0": 2.0, "c0": 0.0, "poles": [[4.0, 0.0]]}
    assert pot["verification"]["ok"] is True
    man = _check_manifest(out, "ok")
    assert [e["path"] for e in man["files"]] == ["config.json", "potential.json"]


def test_potential_no_gaps(tmp_path):
    code, out = _run(tmp_path, "potential", {"interval_system": [[-2, 2]]})
    assert code == EXIT_OK
    pot = json.loads((out / "potential.json").read_text())
    assert pot["potential"] == {"lambda0": 1.0, "c0": 0.0, "poles": []}


@pytest.mark.parametrize(
    "config",
    ["{not json", {"interval_system": [[-2, 2]], "torus_count": 0}, {"interval_system": [[-2, 2]], "x": 1}],
)
def test_bad_config_exit_usage(tmp_path, config):
    code, _ = _run(tmp_path, "potential", config)
    assert code == EXIT_USAGE


def test_missing_config_and_bad_args(tmp_path):
    assert main(["potential", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert main(["nonsense"]) == EXIT_USAGE
    assert main(["flow", "--eta", "3", "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_torus(tmp_path):
    code, out = _run(tmp_path, "torus", {"interval_system": [[-2, 2], [-1, 1]], "torus_count": 4, "pins": {"q0": 0.0}})
    assert code == EXIT_OK
    rows = _rows(out / "torus_points.csv")
    assert list(rows[0]) == ["p0", "p1", "q0", "q1", "residual", "lambda_margin", "magic_residual"]
    first = [float(rows[0][k]) for k in ("p0", "p1", "q0", "q1")]
    np.testing.assert_allclose(first, [math.sqrt(2), 0.5, 0.0, 0.0], atol=1e-12)
    for r in rows:
        assert float(r["residual"]) < 1e-12
        assert float(r["lambda_margin"]) > 0
    _check_manifest(out, "ok")


def test_torus_threads_match(tmp_path, monkeypatch):
    cfg = {"interval_system": [[-3, 3], [-2, -1], [0.5, 1.5]], "torus_count": 3}
    _, a = _run(tmp_path, "torus", cfg, out="a")
    monkeypatch.setenv("GSMPKIT_THREADS", "3")
    _, b = _run(tmp_path, "torus", cfg, out="b")
    assert (a / "torus_points.csv").read_bytes() == (b / "torus_points.csv").read_bytes()


def test_flow_periodic(tmp_path):
    code, out = _run(tmp_path, "flow", None, "--steps", "6")
    assert code == EXIT_OK
    rows = _rows(out / "jacobi.csv")
    a = {int(r["n"]): float(r["a"]) for r in rows if r["a"] not in ("", "nan")}
    b = [float(r["b"]) for r in rows]
    assert min(a) == 0 and max(a) == 6
    for n in range(0, 7):
        assert a[n] == pytest.approx(1.5 if n % 2 == 0 else 0.5, abs=1e-12)
    assert max(abs(x) for x in b) < 1e-12
    flow = json.loads((out / "flow.json").read_text())
    assert flow["steps_completed"] == 6 and flow["stopped"] is None
    assert len(flow["discrepancy_log"]) == 6
    assert max(d["relative_difference"] for d in flow["discrepancy_log"]) < 1e-11
    assert len((out / "flow_trace.jsonl").read_text().splitlines()) == 7
    man = _check_manifest(out, "ok")
    assert {e["path"] for e in man["files"]} == {"config.json", "flow_trace.jsonl", "jacobi.csv", "flow.json"}


@pytest.mark.parametrize("command", ["flow", "ks-report"])
@pytest.mark.parametrize(
    "values",
    [
        [{"j": 0, "dp": [-1.4142135623730951, -0.5]}],  # p_g = 0 at block 0
        [{"j": 0, "dp": [-1.4142135613730951, 0.0]}],  # Lambda# below the margin
        [{"j": 500, "dp": [0.1, 0.0]}],  # outside the window
    ],
)
def test_flow_breaking_perturbation(tmp_path, command, values):
    cfg = {"interval_system": [[-2, 2], [-1, 1]], "perturbation": {"family": "custom", "values": values}}
    code, out = _run(tmp_path, command, cfg)
    assert code in (EXIT_USAGE, EXIT_PARTIAL)
    man = _check_manifest(out, {EXIT_USAGE: "usage-error", EXIT_PARTIAL: "partial"}[code])
    assert "config.json" in [e["path"] for e in man["files"]]


def test_reruns_byte_identical(tmp_path):
    cfg = {"interval_system": [[-2, 2], [-1, 1]], "perturbation": {"family": "power-decay", "exponent": 1, "amplitude": 0.05, "seed": 2}}
    _run(tmp_path, "flow", cfg, "--steps", "5", out="a")
    _run(tmp_path, "flow", cfg, "--steps", "5", out="b")
    for f in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_ks_report_periodic(tmp_path):
    code, out = _run(tmp_path, "ks-report", None, "--steps", "60")
    assert code == EXIT_OK
    rep = json.loads((out / "ks_report.json").read_text())
    run = rep["runs"]["configured"]
    for v in run["tail_growth"].values():
        assert v == 0.0
    sums = _rows(out / "partial_sums.csv")
    assert max(abs(float(r["partial_sum"])) for r in sums) < 1e-11
    spec = _rows(out / "spectral_terms.csv")
    assert [int(r["N"]) for r in spec] == [50]
    _check_manifest(out, "ok")


def test_ks_report_comparison(tmp_path):
    cfg = {
        "interval_system": [[-2, 2], [-1, 1]],
        "perturbation": {"family": "power-decay", "exponent": 1, "amplitude": 0.05, "seed": 0},
        "compare_exponents": [0.5],
        "flow_steps": 200,
    }
    code, out = _run(tmp_path, "ks-report", cfg)
    assert code == EXIT_OK
    runs = json.loads((out / "ks_report.json").read_text())["runs"]
    assert set(runs) == {"configured", "exponent=0.5"}
    assert max(runs["configured"]["tail_growth"].values()) < 0.01
    assert min(runs["exponent=0.5"]["tail_growth"].values()) > 0.01


def test_ks_report_from_trace(tmp_path):
    _, flow_out = _run(tmp_path, "flow", None, "--steps", "8", out="f")
    cfg = {"interval_system": [[-2, 2], [-1, 1]], "trace_path": str(flow_out / "flow_trace.jsonl")}
    code, out = _run(tmp_path, "ks-report", cfg, out="k")
    assert code == EXIT_OK
    assert set(json.loads((out / "ks_report.json").read_text())["runs"]) == {"trace"}
    cfg["trace_path"] = str(tmp_path / "missing.jsonl")
    code, _ = _run(tmp_path, "ks-report", cfg, out="m")
    assert code == EXIT_USAGE


@pytest.mark.skipif(shutil.which("gsmpkit") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["gsmpkit", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("gsmpkit ")
    res = subprocess.run(["gsmpkit", "potential", "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0
    assert (tmp_path / "o" / "manifest.json").is_file()
