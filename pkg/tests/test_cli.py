import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from relusplit import acas
from relusplit.cli import main
from relusplit.network import ReluNetwork, network_to_dict

SYNTH = str(acas.synthetic_network_path())


@pytest.fixture
def identity_files(tmp_path):
    net = tmp_path / "identity.json"
    net.write_text(json.dumps(network_to_dict(ReluNetwork([np.eye(2)], [np.zeros(2)]))))
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"name": "y0>=2", "box": {"lower": [0, 0], "upper": [1, 1]},
                                "disjuncts": [{"A": [[-1, 0]], "b": [-2]}]}))
    return net, spec


@pytest.fixture
def manifest(tmp_path):
    path = tmp_path / "nets.json"
    path.write_text(json.dumps({"1_1": SYNTH, "2_2": SYNTH}))
    return path


def test_verify_identity_trivial_spec(identity_files, tmp_path, capsys):
    net, spec = identity_files
    out = tmp_path / "stats.json"
    code = main(["verify", "--net", str(net), "--spec", str(spec), "--out", str(out)])
    text = capsys.readouterr().out
    assert code == 0
    assert "verdict: does_not_intersect" in text and "nodes: 1" in text
    stats = json.loads(out.read_text())
    assert stats["verdict"] == "does_not_intersect" and stats["nodes"] == 1
    assert stats["depth_histogram"] == [[0, 1]]


def test_verify_acas_property_on_synthetic(tmp_path, capsys):
    out, hist = tmp_path / "s.json", tmp_path / "h.csv"
    code = main(["verify", "--net", SYNTH, "--property", "3", "--splitter", "iog",
                 "--out", str(out), "--histogram-out", str(hist)])
    text = capsys.readouterr().out
    assert code == 0 and "satisfied (intersects)" in text
    stats = json.loads(out.read_text())
    # the stats file is enough to recompute the printed summary
    depths = [d for d, c in stats["depth_histogram"] for _ in range(c)]
    assert f"depth: {np.mean(depths):.3f} +- {np.std(depths):.3f}" in text
    assert f"nodes: {stats['nodes']}" in text
    assert stats["witness"] and len(stats["witness"]) == 5
    rows = list(csv.DictReader(hist.open()))
    assert sum(int(r["count"]) for r in rows) == len(depths)


def test_verify_timeout_exit_code(tmp_path):
    out = tmp_path / "s.json"
    code = main(["verify", "--net", SYNTH, "--property", "6", "--timeout-s", "1e-9",
                 "--out", str(out)])
    assert code == 2 and json.loads(out.read_text())["verdict"] == "timeout"


def test_error_exit_codes(tmp_path, identity_files, capsys):
    assert main(["verify", "--net", str(tmp_path / "missing.nnet"), "--property", "1"]) == 1
    net, spec = identity_files
    assert main(["verify", "--net", str(net), "--property", "1", "--spec", str(spec)]) == 1
    assert main(["verify", "--net", str(net)]) == 1
    assert main(["verify", "--property", "1"]) == 1
    assert main(["verify", "--net", SYNTH, "--property", "1", "--timeout-s", "-1"]) == 1
    bad = tmp_path / "bad.nnet"
    bad.write_text("garbage\n")
    assert main(["verify", "--net", str(bad), "--property", "1"]) == 1
    assert "error:" in capsys.readouterr().err


def test_compare_two_network_sweep(manifest, tmp_path, capsys):
    out, hist = tmp_path / "c.csv", tmp_path / "h.csv"
    code = main(["compare", "--nets-manifest", str(manifest), "--property", "3",
                 "--out", str(out), "--histogram-out", str(hist)])
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    tasks = [r for r in rows if r["network"] != "TOTAL"]
    totals = {r["splitter"]: r for r in rows if r["network"] == "TOTAL"}
    assert len(tasks) == 4 and set(totals) == {"be", "iog"}
    assert [(r["network"], r["splitter"]) for r in tasks] == [
        ("N1,1", "be"), ("N1,1", "iog"), ("N2,2", "be"), ("N2,2", "iog")]
    for s in ("be", "iog"):
        assert int(totals[s]["nodes"]) == sum(int(r["nodes"]) for r in tasks if r["splitter"] == s)
    hist_rows = list(csv.DictReader(hist.open()))
    assert {r["splitter"] for r in hist_rows} == {"be", "iog"}
    assert "time ratio be/iog" in capsys.readouterr().out


def test_compare_skips_untested_networks(manifest, tmp_path):
    out = tmp_path / "c.csv"
    assert main(["compare", "--nets-manifest", str(manifest), "--property", "5",
                 "--out", str(out)]) == 0
    rows = [r for r in csv.DictReader(out.open()) if r["network"] != "TOTAL"]
    assert {r["network"] for r in rows} == {"N1,1"}


def test_compare_is_reproducible(manifest, tmp_path):
    def run(name):
        path = tmp_path / name
        main(["compare", "--nets-manifest", str(manifest), "--property", "4", "--out", str(path)])
        return [{k: v for k, v in r.items() if k != "wall_ms"} for r in csv.DictReader(path.open())]

    assert run("a.csv") == run("b.csv")


def test_compare_records_failures_without_aborting(tmp_path):
    path = tmp_path / "nets.json"
    path.write_text(json.dumps({"1_1": SYNTH, "1_2": str(tmp_path / "missing.nnet")}))
    out = tmp_path / "c.csv"
    code = main(["compare", "--nets-manifest", str(path), "--property", "4", "--out", str(out)])
    rows = list(csv.DictReader(out.open()))
    assert code == 1
    failed = [r for r in rows if r["verdict"] == "error"]
    assert len(failed) == 2 and all(r["network"] == "N1,2" for r in failed)
    assert any(r["network"] == "N1,1" and r["verdict"] != "error" for r in rows)


def test_catalog_command(capsys):
    assert main(["catalog"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert [d["id"] for d in data] == list(range(1, 11))


def test_custom_property_document(tmp_path, capsys):
    doc = tmp_path / "p.json"
    doc.write_text(json.dumps({"id": 99, "boxes": [{"rho": [1000, 2000], "v_own": [500, 600]}],
                               "networks": [[1, 1]],
                               "desired": {"kind": "not_maximal", "output": "COC"}}))
    assert main(["verify", "--net", SYNTH, "--spec", str(doc)]) == 0
    assert "phi99" in capsys.readouterr().out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "relusplit", "verify", "--net", SYNTH,
                           "--property", "1"], capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0 and "unsatisfied" in proc.stdout
