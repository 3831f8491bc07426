import csv
import io
import json
import subprocess
import sys

import pytest

from dmckf.cli import main
from dmckf.diagnostics import dmckf_flops, sdkf_flops
from dmckf.network import default_topology, read_edge_list


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out=out, err=err)
    return code, out.getvalue(), err.getvalue()


def write_config(tmp_path, **extra):
    doc = {"trials": 1, "steps": 5, "filter": {"sigmas": [1.0]}, "drops": {"p": 0.8}}
    doc.update(extra)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


def test_complexity():
    code, out, _ = run("complexity", "--n", "3", "--m", "1", "--t", "2")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0
    assert int(rows[0]["add_mult"]) == sdkf_flops(3, 1).add_mult
    assert int(rows[1]["add_mult"]) == dmckf_flops(3, 1, 2).add_mult
    assert int(rows[1]["special"]) == dmckf_flops(3, 1, 2).special


def test_complexity_rejects_t0():
    code, _, err = run("complexity", "--n", "3", "--m", "1", "--t", "0")
    assert code != 0 and err.startswith("error: InvalidParameterError:") and err.count("\n") == 1


def test_missing_config_names_path():
    code, _, err = run("simulate", "--config", "missing.json")
    assert code != 0 and "missing.json" in err and err.count("\n") == 1


def test_schema_violation(tmp_path):
    path = write_config(tmp_path, bogus=1)
    code, _, err = run("simulate", "--config", str(path))
    assert code != 0 and err.startswith("error: ConfigError: schema violation")


def test_unknown_flag():
    code, _, err = run("complexity", "--n", "3", "--m", "1", "--frobnicate")
    assert code == 2 and err.startswith("error: usage:") and err.count("\n") == 1


def test_simulate_and_seed_override(tmp_path):
    path = write_config(tmp_path)
    outs = []
    for seed in ("3", "3", "4"):
        csv_path = tmp_path / f"r{len(outs)}.csv"
        code, out, _ = run("simulate", "--config", str(path), "--seed", seed, "--records-csv", str(csv_path))
        assert code == 0 and out.startswith("algorithm,sigma,p,network_msd_db")
        outs.append(csv_path.read_bytes())
    assert outs[0] == outs[1] != outs[2]


def test_sweep_rows(tmp_path):
    code, out, _ = run("sweep-sigma", "--sigmas", "0.5", "2", "--p", "0.9", "0.7", "--trials", "1", "--steps", "3")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0
    assert len(rows) == 2 * 2 * 20 * 2
    assert len({(r["sigma"], r["p"], r["node"], r["algorithm"]) for r in rows}) == len(rows)


def test_sweep_default_grid_shape(tmp_path):
    path = write_config(tmp_path, steps=2, algorithms="stationary-dkf")
    code, out, _ = run("sweep-sigma", "--config", str(path))
    assert code == 0
    # config given without grids: its own sigma/p lists are kept
    assert len(out.strip().splitlines()) == 1 + 20
    code, out, _ = run("sweep-sigma", "--steps", "2", "--trials", "1")
    assert code == 0 and len(out.strip().splitlines()) == 1 + 5 * 3 * 20 * 2


def test_convergence_check():
    code, out, _ = run("convergence-check", "--step", "3", "--node", "16", "--sigma", "1e6", "--probes", "8")
    rep = json.loads(out)
    assert code == 0
    assert rep["satisfied"] is True and rep["beta"] == pytest.approx(2 * rep["zeta"])
    assert rep["converged"] is True and rep["node"] == 16


def test_convergence_check_bad_node():
    code, _, err = run("convergence-check", "--node", "99")
    assert code != 0 and "node" in err


def test_emit_topology(tmp_path):
    out_path = tmp_path / "t.edges"
    code, _, _ = run("emit-default-topology", "--out", str(out_path))
    assert code == 0 and read_edge_list(out_path) == default_topology()


def test_console_script_entry():
    proc = subprocess.run([sys.executable, "-m", "dmckf", "complexity", "--n", "1", "--m", "1"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "stationary-dkf" in proc.stdout
