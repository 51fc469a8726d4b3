import csv
import importlib.util
import json
import math
from pathlib import Path

import numpy as np
import pytest

from ldp_causal.cli import main, read_release
from ldp_causal.frequentist import estimate_custom_ipw
from ldp_causal.simulation import DgpConfig, replication_data

DATA = Path(__file__).parent / "data"
_spec = importlib.util.spec_from_file_location("make_fixtures", DATA / "make_fixtures.py")
fixtures = importlib.util.module_from_spec(_spec)
_spec.loader.exec_module(fixtures)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def run(*argv):
    return main([str(a) for a in argv])


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("case", fixtures.CASES, ids=[c[0] for c in fixtures.CASES])
def test_round_trip_matches_golden_files(case, tmp_path):
    scenario = case[0]
    privatize, estimate = fixtures.golden_commands(*case, out_dir=tmp_path)
    assert main(privatize) == 0
    assert main(estimate) == 0
    for name in (f"{scenario}.csv", f"{scenario}.csv.manifest.json", f"{scenario}.report.json"):
        assert (tmp_path / name).read_bytes() == (DATA / name).read_bytes(), name


def test_privatize_shape_and_determinism(tmp_path):
    raw = write(tmp_path / "raw.csv", "w,y\n1,0.8\n0,0.4\n1,0.1\n")
    for out in ("a.csv", "b.csv"):
        assert run("privatize", "--scenario", "custom_b", "--eps-total", 3, "--seed", 4,
                   "--input", raw, "--output", tmp_path / out) == 0
    table = rows(tmp_path / "a.csv")
    assert table[0] == ["b1", "b2", "b3"] and len(table) == 4
    assert all(len(r) == 3 and all(math.isfinite(float(v)) for v in r) for r in table[1:])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv.manifest.json").read_bytes() == (tmp_path / "b.csv.manifest.json").read_bytes()
    run("privatize", "--scenario", "custom_b", "--eps-total", 3, "--seed", 5, "--input", raw, "--output", tmp_path / "c.csv")
    assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "c.csv").read_bytes()


def test_values_round_trip_exactly(tmp_path):
    rc = run("privatize", "--scenario", "joint_with_covariates", "--eps-total", 3, "--seed", 1,
             "--input", DATA / "raw.csv", "--output", tmp_path / "j.csv")
    assert rc == 0
    release, budget, manifest = read_release(tmp_path / "j.csv")
    from ldp_causal.cli import read_raw
    from ldp_causal.core import RandomSource
    from ldp_causal.mechanisms import privatize

    direct = privatize(read_raw(DATA / "raw.csv"), budget, RandomSource(1))
    assert np.array_equal(direct.y_tilde, release.y_tilde)
    assert np.array_equal(direct.x_tilde, release.x_tilde)


def test_out_of_range_outcome_names_row(tmp_path, capsys):
    raw = write(tmp_path / "raw.csv", "w,y\n1,0.8\n0,1.5\n")
    rc = run("privatize", "--scenario", "joint", "--eps-total", 1, "--input", raw, "--output", tmp_path / "o.csv")
    assert rc == 2
    assert "row 2" in capsys.readouterr().err
    assert not (tmp_path / "o.csv").exists()


@pytest.mark.parametrize(
    "text", ["", "w,y\n2,0.5\n", "w,z\n1,0.5\n", "w,y\n1,abc\n", "w,y\n1\n", "w,y,x_2\n1,0.5,0.5\n", "w,y,x_1\n1,0.5,1.2\n"]
)
def test_bad_raw_files(tmp_path, text):
    raw = write(tmp_path / "raw.csv", text)
    assert run("privatize", "--scenario", "joint", "--eps-total", 1, "--input", raw, "--output", tmp_path / "o.csv") == 2


def custom_a_file(tmp_path, values, p=0.5):
    path = write(tmp_path / "a.csv", "a_tilde\n" + "".join(f"{v!r}\n" for v in values))
    manifest = {"format_version": 1, "scenario": "custom_a", "budget": {"eps_a": 1.0}, "eps_total": 1.0,
                "p": p, "seed": 0, "n": len(values), "columns": ["a_tilde"]}
    write(tmp_path / "a.csv.manifest.json", json.dumps(manifest))
    return path


def test_estimate_custom_a_example(tmp_path):
    path = custom_a_file(tmp_path, [0.2, 0.4, 0.6])
    assert run("estimate", "--input", path, "--output", tmp_path / "r.json") == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["estimate"] == pytest.approx(0.4)
    assert list(rep)[:5] == ["method", "estimate", "std_error", "ci_lower", "ci_upper"]
    assert rep["method"] == "custom_ipw" and rep["n"] == 3


def test_alpha_narrows_interval(tmp_path):
    path = custom_a_file(tmp_path, [0.2, 0.4, 0.6])
    widths = []
    for alpha in (0.05, 0.10):
        run("estimate", "--alpha", alpha, "--input", path, "--output", tmp_path / "r.json")
        rep = json.loads((tmp_path / "r.json").read_text())
        widths.append(rep["ci_upper"] - rep["ci_lower"])
    assert widths[1] < widths[0]


def test_joint_estimate_needs_p(tmp_path, capsys):
    run("privatize", "--scenario", "joint", "--eps-total", 2, "--input", DATA / "raw.csv", "--output", tmp_path / "j.csv")
    assert run("estimate", "--input", tmp_path / "j.csv") == 2
    assert "--p" in capsys.readouterr().err
    assert run("estimate", "--p", 0.5, "--input", tmp_path / "j.csv", "--output", tmp_path / "r.json") == 0
    assert run("estimate", "--p", 0.4, "--input", DATA / "joint.csv") == 2  # disagrees with manifest


def test_manifest_enforcement(tmp_path):
    path = custom_a_file(tmp_path, [0.2, 0.4, 0.6])
    assert run("estimate", "--scenario", "custom_a", "--eps-total", 2, "--input", path) == 2
    assert run("estimate", "--estimator", "custom_dm", "--input", path) == 2
    m = json.loads((tmp_path / "a.csv.manifest.json").read_text())
    for key, val in (("format_version", 2), ("n", 4), ("columns", ["b1"])):
        write(tmp_path / "a.csv.manifest.json", json.dumps({**m, key: val}))
        assert run("estimate", "--input", path) == 2
    (tmp_path / "a.csv.manifest.json").unlink()
    assert run("estimate", "--input", path) == 2


def test_degenerate_data_exit_code(tmp_path):
    path = custom_a_file(tmp_path, [0.2])
    assert run("estimate", "--input", path) == 3


def test_flag_validation():
    assert run("estimate", "--alpha", 1.5, "--input", DATA / "custom_a.csv") == 2
    assert run("estimate", "--p", 1.0, "--input", DATA / "custom_a.csv") == 2
    assert run("privatize", "--scenario", "joint", "--eps-split", "1,1,1", "--input", DATA / "raw.csv") == 2


def test_simulate_empty_grid(tmp_path):
    grid = write(tmp_path / "g.json", "[]")
    assert run("simulate", "--grid", grid, "--output", tmp_path / "m.csv") == 0
    assert (tmp_path / "m.csv").read_text() == "scenario,estimator,eps_split,n,n_sim,bias,mse,coverage,mean_width,failure_count\n"


def test_simulate_single_replication(tmp_path):
    out = tmp_path / "m.csv"
    assert run("simulate", "--scenario", "custom_a", "--eps-total", "1,3", "--n", 200, "--nsim", 1, "--output", out) == 0
    table = rows(out)
    assert len(table) == 3
    for r in table[1:]:
        assert float(r[7]) in (0.0, 1.0)
    again = tmp_path / "m2.csv"
    run("simulate", "--scenario", "custom_a", "--eps-total", "1,3", "--n", 200, "--nsim", 1, "--output", again)
    assert out.read_bytes() == again.read_bytes()


def test_simulate_grid_file(tmp_path):
    grid = write(tmp_path / "g.json", json.dumps({"cells": [
        {"scenario": "custom_b", "eps_split": [0.5, 0.5, 2.0], "n": 300, "n_sim": 3},
        {"scenario": "joint", "estimator": "naive", "eps_total": 1.0, "n": 300, "n_sim": 3},
    ]}))
    assert run("simulate", "--grid", grid, "--output", tmp_path / "m.csv") == 0
    table = rows(tmp_path / "m.csv")
    assert [r[:3] for r in table[1:]] == [["custom_b", "custom_dm", "0.5,0.5,2.0"], ["joint", "naive", "0.5,0.5"]]
    assert run("simulate", "--grid", write(tmp_path / "bad.json", "[{}]")) == 2
    assert run("simulate", "--grid", write(tmp_path / "bad2.json", "{")) == 2


def test_posterior_outputs(tmp_path):
    args = ["posterior", "--iterations", 30, "--burn-in", 10, "--seed", 2, "--input", DATA / "joint.csv"]
    assert run(*args, "--output", tmp_path / "a.json", "--draws", tmp_path / "d.csv") == 0
    assert run(*args, "--output", tmp_path / "b.json") == 0
    a = json.loads((tmp_path / "a.json").read_text())
    assert a == json.loads((tmp_path / "b.json").read_text())
    assert a["n_draws"] == 20 and a["ci_lower"] <= a["mean"] <= a["ci_upper"]
    draws = rows(tmp_path / "d.csv")
    assert draws[0] == ["iteration", "pate", "sample_effect"] and len(draws) == 21
    assert draws[1][0] == "10"


def test_posterior_near_noiseless_custom_a_matches_ipw(tmp_path):
    _, sim = replication_data(31, 0, DgpConfig(n=10000))
    d = sim.dataset
    raw = tmp_path / "raw.csv"
    with open(raw, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["w", "y"])
        w.writerows([int(a), repr(float(b))] for a, b in zip(d.w, d.y))
    priv = tmp_path / "a.csv"
    assert run("privatize", "--scenario", "custom_a", "--eps-total", 1e4, "--p", 0.5, "--input", raw, "--output", priv) == 0
    assert run("estimate", "--input", priv, "--output", tmp_path / "f.json") == 0
    assert run("posterior", "--iterations", 300, "--burn-in", 150, "--input", priv, "--output", tmp_path / "b.json") == 0
    freq = json.loads((tmp_path / "f.json").read_text())["estimate"]
    bayes = json.loads((tmp_path / "b.json").read_text())["mean"]
    release, _, _ = read_release(priv)
    assert freq == estimate_custom_ipw(release).estimate
    assert abs(bayes - freq) < 0.03
