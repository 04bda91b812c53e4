"""Command-line harness: ``remaade run | compare | gradcheck``.

Settings resolve in the order defaults < ``--preset`` < ``--config FILE``
(``key=value`` lines) < explicit flags. Every output file is a pure function
of the resolved settings; wall-clock time is only written with ``--timing``.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields

import numpy as np
from scipy import stats

from .env import parse_env
from .numerics import central_finite_difference, seeded_rng
from .policy import init_policy
from .space import SpaceError, build_space, enumerate_strings, parse_space
from .trainer import ALGORITHMS, RunConfig, run

PRESETS = {
    "nas101-short": dict(d=36, batch=30, alpha=1e-2, m=1, eps=0.1, ppo=True, S=1, budget=150,
                         space="nas101-cell"),
}

# flag dest -> settings key
_FLAG_KEYS = {
    "algo": "algorithm", "budget": "budget", "batch": "batch", "d": "d", "dff": "d_ff", "m": "m",
    "alpha": "alpha", "eps": "eps", "ppo": "ppo", "ppo_epochs": "ppo_epochs", "S": "S", "L": "L",
    "entropy": "entropy", "baseline": "baseline", "ema_gamma": "ema_gamma", "seed": "seed",
    "critic": "critic", "max_attempts": "max_attempts", "value_mode": "value_mode",
    "critic_hidden": "critic_hidden", "critic_alpha": "critic_alpha", "critic_epochs": "critic_epochs",
    "w_max": "w_max", "space": "space", "env": "env", "minimize": "minimize", "env_timeout": "env_timeout",
}
_EXTRA_DEFAULTS = {"space": None, "env": None, "minimize": False, "env_timeout": 60.0}
_CONFIG_FIELDS = {f.name: f for f in fields(RunConfig)}


class UsageError(ValueError):
    pass


_INT_KEYS = {"budget", "batch", "ppo_epochs", "d", "d_ff", "m", "S", "L", "seed", "max_attempts",
             "critic_hidden", "critic_epochs"}
_BOOL_KEYS = {"ppo", "minimize"}
_STR_KEYS = {"space", "env", "algorithm", "baseline", "critic", "value_mode"}


def _coerce(key: str, value):
    if not isinstance(value, str) or key in _STR_KEYS:
        return value
    if key in _BOOL_KEYS:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{key} expects a boolean, got {value!r}")
    if key == "d_ff" and value == "None":
        return None
    try:
        return int(value) if key in _INT_KEYS else float(value)
    except ValueError:
        raise UsageError(f"bad value {value!r} for {key}") from None


def read_config_file(path) -> dict:
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value")
            key, value = (x.strip() for x in line.split("=", 1))
            if key not in _CONFIG_FIELDS and key not in _EXTRA_DEFAULTS:
                raise UsageError(f"{path}:{n}: unknown key {key!r}")
            out[key] = _coerce(key, value)
    return out


def resolve_settings(args) -> tuple[dict, set]:
    """Merge defaults, preset, config file and flags; also return explicitly set keys."""
    settings = {f.name: f.default for f in fields(RunConfig)}
    settings.update(_EXTRA_DEFAULTS)
    explicit = set()
    if getattr(args, "preset", None):
        settings.update(PRESETS[args.preset])
    if getattr(args, "config", None):
        cfg = read_config_file(args.config)
        settings.update(cfg)
        explicit |= set(cfg)
    for dest, key in _FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            settings[key] = _coerce(key, value)
            explicit.add(key)
    if settings["d_ff"] is None:
        settings["d_ff"] = settings["d"]
    if "eps" in explicit and not settings["ppo"]:
        raise UsageError("--eps only applies with --ppo")
    if settings["ppo_epochs"] > 1 and not settings["ppo"]:
        raise UsageError("--ppo-epochs > 1 needs --ppo")
    if settings["space"] is None:
        raise UsageError("--space is required (e.g. dims=2,2 or nas101-cell)")
    if settings["env"] is None:
        raise UsageError("--env is required (e.g. separable, xor, tabular:FILE, external:CMD)")
    return settings, explicit


def make_config(settings: dict, **override) -> RunConfig:
    kw = {k: settings[k] for k in _CONFIG_FIELDS}
    kw.update(override)
    try:
        return RunConfig(**kw)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_config(path, settings: dict, extra: dict | None = None) -> None:
    with open(path, "w") as fh:
        for key in sorted(settings, key=str.lower):
            fh.write(f"{key}={_fmt(settings[key])}\n")
        fh.write("# init: normal(0, 1/sqrt(d)) weights, zero biases\n")
        fh.write("# rng: numpy PCG64, trial seed = seed + trial index\n")
        fh.write("# attention: additive, single head; posff activation: tanh\n")
        for key, value in (extra or {}).items():
            fh.write(f"# {key}: {value}\n")


def _string(s) -> str:
    return "" if s is None else "-".join(map(str, s))


TRIAL_COLUMNS = ["algo", "trial", "seed", "best_reward", "best_string", "explorations", "seconds"]


def run_trial(settings: dict, algo: str, trial: int) -> dict:
    """One seeded trial; failures are captured in the returned row."""
    seed = settings["seed"] + trial
    row = {"algo": algo, "trial": trial, "seed": seed, "best_reward": "", "best_string": "",
           "explorations": 0, "seconds": "", "error": "", "trajectory": None, "metadata": {}}
    try:
        space = parse_space(settings["space"])
        env = parse_env(settings["env"], space, settings["minimize"], settings["env_timeout"])
        with env:
            res = run(make_config(settings, algorithm=algo, seed=seed), space, env)
        row.update(best_reward=res.best_reward, best_string=_string(res.best_string),
                   explorations=res.explorations, seconds=res.seconds, trajectory=res.trajectory,
                   metadata=res.metadata)
    except Exception as e:  # noqa: BLE001 - recorded per row, run continues
        row["error"] = f"{type(e).__name__}: {e}"
    return row


def _trial_csv_row(row: dict, timing: bool) -> list:
    out = []
    for col in TRIAL_COLUMNS:
        v = row[col]
        if col == "seconds":
            v = _fmt(v) if (timing and v != "") else ""
        elif col == "best_reward" and v != "":
            v = _fmt(v)
        out.append(v)
    return out


def cmd_run(args) -> int:
    settings, _ = resolve_settings(args)
    make_config(settings)
    parse_space(settings["space"])
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    row = run_trial(settings, settings["algorithm"], 0)
    if row["error"]:
        print(f"run failed: {row['error']}", file=sys.stderr)
        return 1
    with open(os.path.join(out, "trajectory.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["e", "best_reward"])
        for e, r in enumerate(row["trajectory"], start=1):
            w.writerow([e, _fmt(r)])
    with open(os.path.join(out, "result.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_COLUMNS)
        w.writerow(_trial_csv_row(row, args.timing))
    extra = {}
    if "orders" in row["metadata"]:
        extra["orders"] = row["metadata"]["orders"]
    if "critic" in row["metadata"]:
        extra["critic"] = row["metadata"]["critic"]
    write_config(os.path.join(out, "config.txt"), settings, extra)
    print(f"best_reward={_fmt(row['best_reward'])} best_string={row['best_string']} "
          f"explorations={row['explorations']}")
    return 0


def sign_test(better, worse) -> tuple[int, int, int, float]:
    """One-sided paired sign test that ``better`` exceeds ``worse``; ties are dropped."""
    better, worse = np.asarray(better), np.asarray(worse)
    wins = int(np.sum(better > worse))
    losses = int(np.sum(better < worse))
    ties = len(better) - wins - losses
    n = wins + losses
    p = 1.0 if n == 0 else float(stats.binomtest(wins, n, 0.5, alternative="greater").pvalue)
    return wins, losses, ties, p


def _default_pairs(algos) -> list[tuple[str, str]]:
    rank = {a: i for i, a in enumerate(ALGORITHMS)}
    ordered = sorted(algos, key=lambda a: rank.get(a, 99))
    return [(b, a) for a, b in itertools.combinations(ordered, 2)]


def summarize(rows: list[dict], algos) -> tuple[list, list]:
    """Summary rows (algo, trials, failures, mean, sd) and curve rows (algo, e, mean best-so-far)."""
    summary, curve = [], []
    for algo in algos:
        ok = [r for r in rows if r["algo"] == algo and not r["error"]]
        best = np.array([r["best_reward"] for r in ok], dtype=np.float64)
        n_fail = sum(1 for r in rows if r["algo"] == algo and r["error"])
        mean = float(best.mean()) if len(best) else math.nan
        sd = float(best.std(ddof=1)) if len(best) > 1 else math.nan
        summary.append([algo, len(ok), n_fail, mean, sd])
        if ok:
            length = min(len(r["trajectory"]) for r in ok)
            traj = np.array([r["trajectory"][:length] for r in ok])
            for e, v in enumerate(traj.mean(axis=0), start=1):
                curve.append([algo, e, float(v)])
    return summary, curve


def cmd_compare(args) -> int:
    settings, _ = resolve_settings(args)
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    for a in algos:
        if a not in ALGORITHMS:
            raise UsageError(f"unknown algorithm {a!r}")
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    for a in algos:
        make_config(settings, algorithm=a)
    tasks = [(settings, a, t) for a in algos for t in range(args.trials)]
    if args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            rows = list(pool.map(run_trial, *zip(*tasks)))
    else:
        rows = [run_trial(*t) for t in tasks]
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "trials.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_COLUMNS + ["error"])
        for r in rows:
            w.writerow(_trial_csv_row(r, args.timing) + [r["error"]])
    summary, curve = summarize(rows, algos)
    with open(os.path.join(out, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algo", "trials", "failures", "mean_best", "sd_best"])
        for s in summary:
            w.writerow(s[:3] + [_fmt(s[3]), _fmt(s[4])])
    with open(os.path.join(out, "curve.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algo", "e", "mean_best_so_far"])
        for c in curve:
            w.writerow([c[0], c[1], _fmt(c[2])])
    pairs = ([tuple(p.split(">")) for p in args.pairs.split(",")] if args.pairs else _default_pairs(algos))
    with open(os.path.join(out, "significance.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["better", "worse", "wins", "losses", "ties", "p_value"])
        for hi, lo in pairs:
            a = {r["trial"]: r for r in rows if r["algo"] == hi and not r["error"]}
            b = {r["trial"]: r for r in rows if r["algo"] == lo and not r["error"]}
            common = sorted(set(a) & set(b))
            wins, losses, ties, p = sign_test([a[t]["best_reward"] for t in common],
                                              [b[t]["best_reward"] for t in common])
            w.writerow([hi, lo, wins, losses, ties, _fmt(p)])
    write_config(os.path.join(out, "config.txt"), settings,
                 {"algorithms": ",".join(algos), "trials": args.trials})
    for s in summary:
        print(f"{s[0]:>14}  trials={s[1]}  failures={s[2]}  mean={s[3]:.6g}  sd={s[4]:.6g}")
    return 0


def gradcheck(d=8, dims=(2, 3, 2, 3), m=1, seed=1, h=1e-5, corrupt=0.0, n_strings=3):
    """Max relative gradient error and total-probability deviation for a random policy."""
    space = build_space(dims)
    if space.size > 2**12:
        raise UsageError(f"gradcheck space has {space.size} strings, limit is {2**12}")
    rng = seeded_rng(seed)
    pol = init_policy(space, "maade", d, None, m, rng)
    for name in pol.params:
        pol.params[name] += rng.normal(0.5, pol.params[name].shape)
    worst = 0.0
    for _ in range(n_strings):
        order = rng.permutation(space.n)
        s = tuple(rng.integer(x) for x in dims)
        g = pol.grad_log_prob(s, order).flatten()
        if corrupt:
            g = g + corrupt
        fd = central_finite_difference(lambda p: pol.with_params(p).log_prob(s, order), pol.params, h).flatten()
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(g)))))
    total = sum(math.exp(pol.log_prob(s)) for s in enumerate_strings(space, include_invalid=True))
    return worst, abs(total - 1.0)


def cmd_gradcheck(args) -> int:
    dims = tuple(int(x) for x in args.dims.split(","))
    grad_err, prob_dev = gradcheck(args.d, dims, args.m, args.seed, args.h, args.corrupt)
    ok = grad_err <= 1e-4 and prob_dev <= 1e-8
    print(f"max_rel_grad_err={grad_err:.3e} (tol 1e-4)  prob_dev={prob_dev:.3e} (tol 1e-8)  "
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def _add_run_flags(p):
    p.add_argument("--algo", choices=ALGORITHMS)
    p.add_argument("--space", help="dims=3,3,2[;validity=nas-cell] or nas101-cell")
    p.add_argument("--env", help="separable[:w=..:t=..:noise=..] | xor[:pairs=0-1,..] | tabular:FILE | external:CMD")
    p.add_argument("--budget", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--dff", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--ppo", action="store_const", const=True)
    p.add_argument("--ppo-epochs", type=int)
    p.add_argument("--S", type=int)
    p.add_argument("--L", type=int)
    p.add_argument("--entropy", type=float)
    p.add_argument("--baseline", choices=("batch-mean", "ema", "none"))
    p.add_argument("--ema-gamma", type=float)
    p.add_argument("--critic", choices=("learned", "exact"))
    p.add_argument("--critic-hidden", type=int)
    p.add_argument("--critic-alpha", type=float)
    p.add_argument("--critic-epochs", type=int)
    p.add_argument("--w-max", type=float)
    p.add_argument("--value-mode", choices=("auto", "exhaustive", "sampled"))
    p.add_argument("--max-attempts", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--minimize", action="store_const", const=True)
    p.add_argument("--env-timeout", type=float)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--config", help="file of key=value lines")
    p.add_argument("--out")
    p.add_argument("--timing", action="store_true", help="write wall-clock seconds to the CSVs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="remaade", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one seeded trial")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("compare", help="run T seeded trials per algorithm")
    _add_run_flags(p)
    p.add_argument("--algos", default="random,reinforce-iid,remaade,reacts")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--pairs", help="comma-separated better>worse pairs for the sign test")
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("gradcheck", help="finite-difference check of the policy gradient")
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--dims", default="2,3,2,3")
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--corrupt", type=float, default=0.0, help="offset added to the analytic gradient")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, SpaceError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
