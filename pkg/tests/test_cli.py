from __future__ import annotations

import json
import math
import subprocess
import sys

import pytest

from ustatbounds.cli import bundled_config, main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def identity():
    return bundled_config("identity-2x2.json")


def test_norm_command(capsys, identity):
    code, out, _ = run(capsys, "norm", identity, "{1}|{2}")
    assert code == 0 and json.loads(out)["value"] == pytest.approx(1.0)
    code, out, _ = run(capsys, "norm", identity, "{1,2}")
    assert json.loads(out)["value"] == pytest.approx(math.sqrt(2))


def test_norm_bad_partition(capsys, identity):
    code, _, err = run(capsys, "norm", identity, "{1}|{1}")
    assert code == 2 and "blocks not disjoint" in err


def test_missing_file_and_bad_args(capsys, tmp_path):
    code, _, err = run(capsys, "bound", str(tmp_path / "nope.json"), "--kind", "7", "--t", "1")
    assert code == 2 and "cannot read" in err
    assert run(capsys, "bound")[0] == 2


def test_bound_tail_csv_and_cor3_matches(capsys, tmp_path):
    kern = bundled_config("rademacher-xy.json")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    ts = ["0.5", "1", "2", "4"]
    assert run(capsys, "bound", kern, "--kind", "7", "--t", *ts, "--csv", str(a))[0] == 0
    assert run(capsys, "bound", kern, "--kind", "cor3", "--n", "1", "--t", *ts,
               "--csv", str(b))[0] == 0
    assert a.read_text() == b.read_text()
    lines = a.read_text().splitlines()
    assert lines[0] == "t,exponent,dominantI,dominantJ,bound"
    t4 = lines[-1].split(",")
    assert float(t4[1]) == pytest.approx(2.0) and float(t4[-1]) == pytest.approx(math.exp(-2))


def test_bound_moment(capsys):
    kern = bundled_config("rademacher-xy.json")
    code, out, _ = run(capsys, "bound", kern, "--kind", "moment", "--p", "2", "4")
    reps = json.loads(out)["reports"]
    assert code == 0 and [r["p"] for r in reps] == [2.0, 4.0]
    assert all(len(r["terms"]) == 5 for r in reps)


def test_noncanonical_exit_three(capsys, tmp_path):
    f = tmp_path / "k.json"
    f.write_text(json.dumps({"d": 2, "n": 1, "space": {"atoms": [-1, 1], "probs": [0.5, 0.5]},
                             "kernelTable": [0, 2, 0, 2]}))
    code, _, err = run(capsys, "bound", str(f), "--kind", "6", "--p", "2")
    assert code == 3 and "axis j=" in err and "index i=" in err
    with pytest.warns(UserWarning, match="non-canonical"):
        code, _, _ = run(capsys, "bound", str(f), "--kind", "6", "--p", "2",
                         "--allow-noncanonical")
    assert code == 0


def test_canonicalize_command(capsys, tmp_path):
    f = tmp_path / "k.json"
    f.write_text(json.dumps({"d": 2, "n": 1, "space": {"atoms": [-1, 1], "probs": [0.5, 0.5]},
                             "kernelTable": [-1, -1, -1, 3]}))  # x + y + xy
    out_path = tmp_path / "c.json"
    assert run(capsys, "canonicalize", str(f), "-o", str(out_path))[0] == 0
    assert json.loads(out_path.read_text())["kernelTable"] == [1.0, -1.0, -1.0, 1.0]


def test_poisson_commands(capsys):
    sk = bundled_config("unit-step-d1.json")
    code, out, _ = run(capsys, "bound", sk, "--kind", "8", "--p", "2")
    assert code == 0
    assert json.loads(out)["reports"][0]["total"] == pytest.approx(2 + math.sqrt(2))
    code, out, _ = run(capsys, "poisson", sk, "--verify", "20000", "--constant", "3")
    assert code == 0 and json.loads(out)["verification"]["pass"]


def test_verify_bundled(capsys, tmp_path):
    code, out, err = run(capsys, "verify", bundled_config(), "--output-dir", str(tmp_path))
    assert code == 0, err
    report = json.loads(out)
    assert report["pass"]
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["rademacher-d2-moment.csv", "rademacher-d2-plots.json",
                     "rademacher-d2-report.json", "rademacher-d2-tail.csv"]
    manifest = json.loads((tmp_path / "rademacher-d2-plots.json").read_text())
    assert {p["data"] for p in manifest["plots"]} == {"rademacher-d2-tail.csv",
                                                       "rademacher-d2-moment.csv"}


def test_verify_csv_traces_report(capsys, tmp_path):
    run(capsys, "verify", bundled_config(), "--output-dir", str(tmp_path))
    report = json.loads((tmp_path / "rademacher-d2-report.json").read_text())
    rows = (tmp_path / "rademacher-d2-tail.csv").read_text().splitlines()
    assert len(rows) == 1 + len(report["tail"]["rows"])
    first = dict(zip(rows[0].split(","), rows[1].split(",")))
    assert float(first["bound"]) == report["tail"]["rows"][0]["bound"]


def test_verify_schema_violation(capsys, tmp_path):
    f = tmp_path / "bad.json"
    f.write_text(json.dumps({"schemaVersion": 1, "kernel": "x.json", "extra": True}))
    code, _, err = run(capsys, "verify", str(f))
    assert code == 2 and "extra" in err
    f.write_text(json.dumps({"schemaVersion": 2, "kernel": "x.json"}))
    assert run(capsys, "verify", str(f))[0] == 2


def test_verify_small_n_warns_unresolvable(capsys, tmp_path):
    cfg = json.loads(open(bundled_config()).read())
    cfg.update(N=200, tGrid=[12.0, 15.0], checks=["tail"],
               kernel=bundled_config("rademacher-xy.json"))
    f = tmp_path / "small.json"
    f.write_text(json.dumps(cfg))
    code, out, err = run(capsys, "verify", str(f))
    assert code == 0 and "unresolvable" in err
    assert {r["status"] for r in json.loads(out)["tail"]["rows"]} <= {"unresolvable", "pass"}


def test_verify_failure_exit_one(capsys, tmp_path):
    cfg = json.loads(open(bundled_config()).read())
    cfg.update(constant=1e-6, checks=["moment"], kernel=bundled_config("rademacher-xy.json"))
    f = tmp_path / "tight.json"
    f.write_text(json.dumps(cfg))
    assert run(capsys, "verify", str(f))[0] == 1


def test_console_entry_point_runs(identity):
    out = subprocess.run([sys.executable, "-m", "ustatbounds.cli", "norm", identity, "{1,2}"],
                         capture_output=True, text=True, check=True)
    assert json.loads(out.stdout)["value"] == pytest.approx(math.sqrt(2))
