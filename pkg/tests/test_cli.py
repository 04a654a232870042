import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from oscint import __version__
from oscint.cli import RunManifest, run
from oscint.phase import paraboloid_phase


def _run(tmp_path, *argv, sub="out"):
    out = tmp_path / sub
    code = run(["--out-dir", str(out), *argv])
    return code, out


def _manifest(out) -> RunManifest:
    return RunManifest.read(out / "manifest.json")


def test_exponents_table(tmp_path, capsys):
    code, out = _run(tmp_path, "exponents", "table", "--n-max", "5")
    assert code == 0
    assert "| 3 | 4 | 10/3 |" in capsys.readouterr().out
    man = _manifest(out)
    assert man.command == "exponents table" and man.version == __version__
    assert all(Path(p).exists() for p in man.outputs)


def test_exponents_convert(tmp_path, capsys):
    code, out = _run(tmp_path, "exponents", "convert", "--n", "7", "--mode", "pd")
    assert code == 0
    rec = json.loads((out / "conversion.json").read_text())
    assert rec["k_star"] == 4 and rec["p_linear"] == "22/9"


def test_evaluate_zero(tmp_path):
    par = tmp_path / "par.json"
    par.write_text(json.dumps(paraboloid_phase(2).to_json()))
    code, out = _run(tmp_path, "evaluate", "--phase", str(par), "--lambda", "64", "--f", "zero",
                     "--samples", "200")
    assert code == 0
    with open(out / "field.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 200
    vals = np.array([[float(r[k]) for k in r if k.startswith(("re", "im"))] for r in rows])
    assert vals.size and np.all(vals == 0)


def test_evaluate_grid_fast(tmp_path):
    code, out = _run(tmp_path, "evaluate", "--lambda", "32", "--grid", "2.0", "--radius", "0.5")
    assert code == 0
    man = _manifest(out)
    assert man.config["audit_deviation"] < 1e-8


def test_resolution_error_exit_code(tmp_path):
    code, out = _run(tmp_path, "evaluate", "--lambda", "64", "--h", "0.5", "--samples", "20")
    assert code == 3
    assert _manifest(out).status.startswith("resolution error")


def test_precondition_exit_code(tmp_path):
    code, out = _run(tmp_path, "decompose", "--lambda", "64", "--R", "128")
    assert code == 2
    assert _manifest(out).status.startswith("error")


def test_usage_exit_code(tmp_path):
    assert run(["--out-dir", str(tmp_path), "evaluate", "--bogus"]) == 64
    assert run(["--out-dir", str(tmp_path), "nosuchcommand"]) == 64


def test_decompose(tmp_path):
    code, out = _run(tmp_path, "decompose", "--lambda", "64", "--R", "64")
    assert code == 0
    summary = json.loads((out / "decomposition.json").read_text())
    assert summary["residual"] <= 1e-6 * summary["f_norm"]
    assert (out / "packets.csv").read_text().splitlines()[0] == "theta1,v1,norm,t_start,t_end"


def test_kbroad(tmp_path):
    code, out = _run(tmp_path, "kbroad", "--k", "2", "--A", "1", "--p", "4", "--K", "8", "--frames", "200")
    assert code == 0
    s = json.loads((out / "kbroad.json").read_text())
    assert s["BL"] >= 0 and s["balls"] == 8
    assert len((out / "mu.csv").read_text().splitlines()) == 9


def test_partition(tmp_path):
    pts = tmp_path / "pts.csv"
    np.savetxt(pts, np.random.default_rng(0).uniform(size=(500, 2)), delimiter=",")
    code, out = _run(tmp_path, "partition", "--D", "2", "--points", str(pts))
    assert code == 0
    s = json.loads((out / "partition.json").read_text())
    assert s["weight_ratio"] <= 16


def test_experiment_run(tmp_path):
    code, out = _run(tmp_path, "experiment", "run", "mass_concentration", "--n", "2",
                     "--lambdas", "64,128,256")
    assert code == 0
    rep = json.loads((out / "mass_concentration.json").read_text())
    assert abs(rep["fit"]["slope"] + 0.5) <= 0.1
    assert (out / "mass_concentration.csv").read_text().startswith("x,y")


def test_experiment_bad_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"nonsense": 1}))
    code, _ = _run(tmp_path, "experiment", "run", "hormander", "--config", str(cfg))
    assert code == 2


def test_manifest_round_trip(tmp_path):
    code, out = _run(tmp_path, "evaluate", "--lambda", "32", "--f", "random:3", "--samples", "100",
                     "--seed", "5")
    assert code == 0
    man = _manifest(out)
    assert man.seeds == [5]
    argv = list(man.config["argv"])
    i = argv.index("--out-dir")
    argv[i + 1] = str(tmp_path / "again")
    assert run(argv) == 0
    assert (out / "field.csv").read_bytes() == (tmp_path / "again" / "field.csv").read_bytes()


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "oscint", "--out-dir", str(tmp_path), "exponents", "table",
                        "--n-max", "3"], capture_output=True, text=True)
    assert r.returncode == 0 and "10/3" in r.stdout
