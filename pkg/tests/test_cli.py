import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from ocpbandit import harness
from ocpbandit.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_DATA, EXIT_OK, check_directory, main
from ocpbandit.config import config_digest, load_config

SMALL = ["--K", "12", "--T", "300", "--alpha", "0.1"]
NUMERIC = ("MC", "Ineff", "Reg", "C_mc", "C1", "N0", "N1", "best_arm", "lemma1_slack", "bound_rhs", "C")


def _run(tmp_path, name, *extra):
    out = tmp_path / name
    code = main(["run", *SMALL, "--out", str(out), *extra])
    return code, out


def _summary(out, seed=0):
    return json.loads((out / f"summary_seed{seed}.json").read_text())


def test_run_writes_outputs(tmp_path):
    code, out = _run(tmp_path, "a", "--seeds", "3", "--seed", "4")
    assert code == EXIT_OK
    for s in (4, 5, 6):
        assert (out / f"steps_seed{s}.csv").exists() and (out / f"summary_seed{s}.json").exists()
    steps = harness.read_step_log(out / "steps_seed4.csv")
    assert steps["t"].tolist() == list(range(1, 301))
    assert _summary(out, 5)["config_digest"] == config_digest(load_config(out / "config.json"))


def test_aggregate_recomputed(tmp_path):
    _, out = _run(tmp_path, "a", "--seeds", "3")
    with open(out / "aggregate.csv") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    assert [r[0] for r in body] == ["0", "1", "2", "mean", "min", "max"]
    docs = [_summary(out, s) for s in range(3)]
    for j, name in enumerate(header[1:], start=1):
        vals = np.array([d["Reg"] / d["T"] if name == "Reg_per_T" else d[name] for d in docs], dtype=float)
        assert float(body[3][j]) == pytest.approx(vals.mean(), rel=1e-7, abs=1e-9)
        assert float(body[4][j]) == pytest.approx(vals.min(), rel=1e-7, abs=1e-9)
        assert float(body[5][j]) == pytest.approx(vals.max(), rel=1e-7, abs=1e-9)


@pytest.mark.parametrize("env", ["iid", "exponent", "shift", "adaptive"])
def test_byte_identical(tmp_path, env):
    _, a = _run(tmp_path, "a", "--env", env, "--seeds", "2")
    _, b = _run(tmp_path, "b", "--env", env, "--seeds", "2")
    for name in ("steps_seed0.csv", "steps_seed1.csv", "aggregate.csv", "summary_seed1.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_single_step(tmp_path):
    out = tmp_path / "one"
    assert main(["run", "--T", "1", "--gamma-override", "0.999", "--out", str(out)]) == EXIT_OK
    assert len((out / "steps_seed0.csv").read_text().splitlines()) == 2


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"K": 8, "T": 50, "alpha": 0.2, "algorithm": "bandit"}))
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--alpha", "0.3", "--out", str(out)]) == EXIT_OK
    got = load_config(out / "config.json")
    assert (got.K, got.alpha, got.algorithm) == (8, 0.3, "bandit")


def test_config_errors(tmp_path, capsys):
    assert main(["run", "--alpha", "0.6", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "(0, 0.5)" in capsys.readouterr().err
    bad = tmp_path / "c.json"
    bad.write_text('{"alhpa": 0.1}')
    assert main(["run", "--config", str(bad)]) == EXIT_CONFIG


@pytest.mark.parametrize("axis,values,n", [("alpha", "0.1,0.2,0.3,0.4", 4), ("K", "18,20,22", 3),
                                           ("algorithm", "bandit,unlock,unlock-plus", 3)])
def test_sweep(tmp_path, axis, values, n):
    code = main(["sweep", "--axis", axis, "--values", values, "--T", "200", "--K", "10",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    root = tmp_path / f"sweep_{axis}"
    assert len(list(root.glob("*/aggregate.csv"))) == n
    lines = (root / "table.csv").read_text().splitlines()
    assert lines[0].startswith(f"{axis},MC_mean") and len(lines) == n + 1
    assert [ln.split(",")[0] for ln in lines[1:]] == values.split(",")


def test_check(tmp_path, capsys):
    _, out = _run(tmp_path, "a", "--seeds", "2")
    assert main(["check", str(out)]) == EXIT_OK
    assert all(ok and bound for _, ok, _, bound in check_directory(out))
    # inflating the best arm's total loss shrinks the regret below what the log supports
    doc = _summary(out)
    doc["arm_losses"] = [x + 1000.0 for x in doc["arm_losses"]]
    (out / "summary_seed0.json").write_text(json.dumps(doc))
    assert main(["check", str(out)]) == EXIT_CHECK
    assert "FAIL" in capsys.readouterr().out


def test_check_missing(tmp_path):
    assert main(["check", str(tmp_path / "nothing")]) == EXIT_DATA


def test_replay_matches_live(tmp_path):
    path = tmp_path / "stream.csv"
    for env in ("iid", "exponent", "shift"):
        assert main(["make-replay", *SMALL, "--env", env, "--seed", "3", "--path", str(path)]) == EXIT_OK
        _, live = _run(tmp_path, f"live_{env}", "--env", env, "--seed", "3")
        _, rep = _run(tmp_path, f"rep_{env}", "--env", f"replay:{path}", "--seed", "3")
        assert (live / "steps_seed3.csv").read_bytes() == (rep / "steps_seed3.csv").read_bytes()
        a, b = _summary(live, 3), _summary(rep, 3)
        for key in NUMERIC:
            assert a[key] == pytest.approx(b[key], abs=1e-12)


def test_empty_replay(tmp_path, capsys):
    path = tmp_path / "empty.csv"
    assert main(["make-replay", "--T", "0", "--K", "5", "--path", str(path)]) == EXIT_OK
    assert path.read_text().splitlines() == ["t,f_star,set_sizes"]
    assert main(["run", "--K", "5", "--T", "10", "--env", f"replay:{path}", "--out", str(tmp_path / "o")]) \
        == EXIT_DATA
    assert "empty stream" in capsys.readouterr().err


def test_corrupt_replay(tmp_path, capsys):
    path = tmp_path / "s.csv"
    main(["make-replay", "--K", "5", "--T", "20", "--path", str(path)])
    lines = path.read_text().splitlines()
    lines[7] = lines[7].rsplit(",", 1)[0] + ",1|2"
    path.write_text("\n".join(lines) + "\n")
    code = main(["run", "--K", "5", "--T", "20", "--env", f"replay:{path}", "--out", str(tmp_path / "o")])
    assert code == EXIT_DATA
    assert "line 8" in capsys.readouterr().err


def test_replay_too_short(tmp_path):
    path = tmp_path / "s.csv"
    main(["make-replay", "--K", "5", "--T", "5", "--path", str(path)])
    assert main(["run", "--K", "5", "--T", "20", "--env", f"replay:{path}", "--out", str(tmp_path / "o")]) \
        == EXIT_DATA


def test_adaptive_has_no_replay(tmp_path):
    assert main(["make-replay", "--env", "adaptive", "--K", "5", "--T", "5",
                 "--path", str(tmp_path / "x.csv")]) == EXIT_CONFIG


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "ocpbandit", "run", "--K", "5", "--T", "20",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "mean MC" in res.stdout
