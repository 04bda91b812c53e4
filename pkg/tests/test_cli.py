import csv
import math
import subprocess
import sys

import numpy as np
import pytest

from remaade.cli import main, resolve_settings, build_parser, sign_test


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_random_run_writes_trajectory(tmp_path):
    rc = main(["run", "--algo", "random", "--space", "dims=2,2,2,2", "--env", "xor", "--budget", "10",
               "--out", str(tmp_path)])
    assert rc == 0
    traj = read_csv(tmp_path / "trajectory.csv")
    assert [int(r["e"]) for r in traj] == list(range(1, 11))
    vals = [float(r["best_reward"]) for r in traj]
    assert vals == sorted(vals)
    res = read_csv(tmp_path / "result.csv")[0]
    assert float(res["best_reward"]) == vals[-1] and res["seconds"] == ""


def test_preset_expands(tmp_path):
    args = build_parser().parse_args(["run", "--preset", "nas101-short", "--algo", "remaade",
                                      "--env", "separable", "--d", "8"])
    settings, _ = resolve_settings(args)
    assert settings["space"] == "nas101-cell"
    assert (settings["batch"], settings["budget"], settings["ppo"], settings["eps"]) == (30, 150, True, 0.1)
    assert settings["alpha"] == 1e-2 and settings["S"] == 1 and settings["m"] == 1
    assert settings["d"] == 8  # explicit flags win over the preset


def test_config_file_layer(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("# comment\nbudget=40\nbatch = 20\nppo=true\n")
    args = build_parser().parse_args(["run", "--config", str(cfg), "--space", "dims=2,2", "--env", "xor",
                                      "--batch", "10"])
    settings, _ = resolve_settings(args)
    assert (settings["budget"], settings["batch"], settings["ppo"]) == (40, 10, True)


def test_reruns_are_byte_identical(tmp_path):
    argv = ["run", "--algo", "remaade", "--space", "dims=2,3,2", "--env", "separable:t=1,2,0", "--budget", "40",
            "--batch", "10", "--d", "6", "--ppo", "--S", "2", "--seed", "5"]
    assert main(argv + ["--out", str(tmp_path / "a")]) == 0
    assert main(argv + ["--out", str(tmp_path / "b")]) == 0
    for name in ("trajectory.csv", "result.csv", "config.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    cfg = (tmp_path / "a" / "config.txt").read_text()
    assert "seed=5" in cfg and "orders" in cfg


@pytest.mark.parametrize("argv", [
    ["run", "--algo", "remaade", "--space", "dims=2,2", "--env", "xor", "--eps", "0.2"],
    ["run", "--algo", "remaade", "--space", "dims=2,2", "--env", "xor", "--ppo-epochs", "3"],
    ["run", "--algo", "remaade", "--env", "xor"],
    ["run", "--algo", "remaade", "--space", "dims=2,2", "--env", "xor", "--budget", "5", "--batch", "10"],
    ["run", "--algo", "remaade", "--space", "garbage", "--env", "xor"],
])
def test_usage_errors_exit_2(tmp_path, argv, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err
    assert not (tmp_path / "trajectory.csv").exists()


def test_compare_outputs(tmp_path):
    rc = main(["compare", "--algos", "random,reinforce-iid,remaade,reacts", "--trials", "30",
               "--space", "dims=2,2,2", "--env", "xor:pairs=0-1", "--budget", "6", "--batch", "3",
               "--d", "4", "--critic-epochs", "5", "--out", str(tmp_path)])
    assert rc == 0
    trials = read_csv(tmp_path / "trials.csv")
    assert len(trials) == 120 and all(r["error"] == "" for r in trials)
    assert sorted({int(r["seed"]) for r in trials}) == list(range(30))
    summary = read_csv(tmp_path / "summary.csv")
    assert [r["algo"] for r in summary] == ["random", "reinforce-iid", "remaade", "reacts"]
    for row in summary:
        best = np.array([float(r["best_reward"]) for r in trials if r["algo"] == row["algo"]])
        assert int(row["trials"]) == 30 and int(row["failures"]) == 0
        assert float(row["mean_best"]) == pytest.approx(best.mean(), abs=1e-12)
        assert float(row["sd_best"]) == pytest.approx(best.std(ddof=1), abs=1e-12)
    curve = read_csv(tmp_path / "curve.csv")
    for algo in ("random", "remaade"):
        vals = [float(r["mean_best_so_far"]) for r in curve if r["algo"] == algo]
        assert len(vals) == 6 and vals == sorted(vals)
    sig = read_csv(tmp_path / "significance.csv")
    assert len(sig) == 6
    for r in sig:
        assert int(r["wins"]) + int(r["losses"]) + int(r["ties"]) == 30


def test_compare_records_failures(tmp_path):
    rc = main(["compare", "--algos", "random", "--trials", "2", "--space", "dims=2,2",
               "--env", f"tabular:{tmp_path / 'missing.csv'}", "--budget", "3", "--out", str(tmp_path)])
    assert rc == 0
    rows = read_csv(tmp_path / "trials.csv")
    assert all(r["error"] for r in rows)
    assert read_csv(tmp_path / "summary.csv")[0]["failures"] == "2"


def test_sign_test_oracle():
    better = [3, 2, 5, 5, 1, 4, 4, 7]
    worse = [1, 2, 4, 3, 2, 1, 1, 0]
    wins, losses, ties, p = sign_test(better, worse)
    assert (wins, losses, ties) == (6, 1, 1)
    assert p == pytest.approx(sum(math.comb(7, k) for k in range(6, 8)) / 2**7, rel=1e-12)
    assert sign_test([1, 1], [1, 1])[3] == 1.0


@pytest.mark.parametrize("m", ["1", "2"])
def test_gradcheck_passes(m, capsys):
    assert main(["gradcheck", "--m", m]) == 0
    assert "PASS" in capsys.readouterr().out


def test_gradcheck_detects_corruption(capsys):
    assert main(["gradcheck", "--corrupt", "1e-2"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "remaade", "run", "--algo", "random", "--space", "dims=3,3",
                           "--env", "separable", "--budget", "5", "--out", str(tmp_path)],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    assert "best_reward=" in proc.stdout
