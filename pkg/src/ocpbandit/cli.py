"""Command-line front end: ``run``, ``sweep``, ``check`` and ``make-replay``.

Exit codes: 0 success, 1 a coverage-inequality or bound check failed, 2 bad
configuration or usage, 3 input data or I/O error.
"""

from __future__ import annotations

import argparse
import glob
import json
import sys
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import harness
from .config import ConfigError, RunConfig, config_digest, load_config, serialize_config
from .environments import EmptyStreamError, EndOfStream, ReplayParseError, make_environment, write_replay
from .grid_loss import DomainError, LossParams, ThresholdGrid, a_term
from .learners import VARIANTS, HyperParams, theorem_schedule

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3
SWEEP_AXES = ("K", "alpha", "c", "T", "algorithm")
# rounding of logged losses to 9 significant digits, accumulated over a run
CHECK_TOL = 1e-7


@dataclass(frozen=True)
class Setup:
    grid: ThresholdGrid
    params: LossParams
    hyper: HyperParams


def setup(cfg: RunConfig) -> Setup:
    grid = ThresholdGrid.uniform(cfg.K)
    params = LossParams.for_horizon(cfg.alpha, cfg.c, cfg.T, cfg.rho)
    with warnings.catch_warnings():
        if cfg.gamma_override is not None:
            warnings.simplefilter("ignore")
        hyper = theorem_schedule(cfg.K, cfg.T)
    if cfg.gamma_override is not None:
        hyper = replace(hyper, gamma=cfg.gamma_override, clamped=False)
    return Setup(grid, params, hyper)


def run_one(cfg: RunConfig, seed: int, **kw):
    """One seeded run of ``cfg``; returns ``(log, summary)``."""
    s = setup(cfg)
    log = harness.run(cfg.env_spec, cfg.algorithm, s.grid, s.params, s.hyper, cfg.T, seed=seed, **kw)
    summary = harness.summarize(log, cfg.algorithm, s.hyper, cfg.delta, seed, cfg.env_spec.label,
                                config_digest(cfg))
    return log, summary


def run_seeds(cfg: RunConfig, out: Path, step_logs: bool = True):
    """All seeds of ``cfg`` into ``out``; returns the summaries in seed order."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(serialize_config(cfg), encoding="utf-8")

    def job(seed):
        log, summary = run_one(cfg, seed)
        if step_logs:
            harness.write_step_log(out / f"steps_seed{seed}.csv", log)
        harness.write_summary(out / f"summary_seed{seed}.json", summary)
        return summary

    summaries = harness.run_suite(job, cfg.seed_list)
    harness.write_aggregate(out / "aggregate.csv", summaries)
    return summaries


def _report(summaries) -> int:
    bad = [s for s in summaries if not s.lemma1_pass]
    for s in bad:
        print(f"coverage check failed: seed={s.seed} slack={s.lemma1_slack:.3g}", file=sys.stderr)
    return EXIT_CHECK if bad else EXIT_OK


def cmd_run(cfg: RunConfig) -> int:
    summaries = run_seeds(cfg, Path(cfg.out))
    mc = np.mean([s.MC for s in summaries])
    print(f"{len(summaries)} run(s) -> {cfg.out}  mean MC={mc:.4f}")
    return _report(summaries)


def _axis_value(axis: str, raw: str):
    if axis in ("K", "T"):
        return int(raw)
    if axis in ("alpha", "c"):
        return float(raw)
    return raw


def cmd_sweep(cfg: RunConfig, axis: str, values, step_logs: bool = False) -> int:
    if axis not in SWEEP_AXES:
        raise ConfigError("axis", f"{axis!r} not one of {', '.join(SWEEP_AXES)}")
    root = Path(cfg.out) / f"sweep_{axis}"
    rows, status = [], EXIT_OK
    for raw in values:
        value = _axis_value(axis, raw)
        point = replace(cfg, **{axis: value}, out=str(root / f"{axis}={raw}"))
        summaries = run_seeds(point, Path(point.out), step_logs)
        status = max(status, _report(summaries))
        mc = np.array([s.MC for s in summaries])
        ineff = np.array([s.Ineff for s in summaries])
        rows.append((raw, mc.mean(), mc.min(), mc.max(), ineff.mean(), ineff.min(), ineff.max()))
    with open(root / "table.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{axis},MC_mean,MC_min,MC_max,Ineff_mean,Ineff_min,Ineff_max\n")
        for raw, *nums in rows:
            fh.write(",".join([str(raw)] + [harness.NUM_FMT % x for x in nums]) + "\n")
    print(f"sweep over {axis}: {len(rows)} table(s) -> {root}")
    return status


def check_directory(directory) -> list[tuple[int, bool, float, bool]]:
    """Re-validate the coverage inequality and the bound from written logs and summaries.

    Returns ``(seed, lemma_ok, slack, bound_ok)`` per run.
    """
    d = Path(directory)
    cfg = load_config(d / "config.json")
    s = setup(cfg)
    results = []
    for path in sorted(glob.glob(str(d / "summary_seed*.json"))):
        with open(path, encoding="utf-8") as fh:
            summary = json.load(fh)
        seed = summary["seed"]
        steps = harness.read_step_log(d / f"steps_seed{seed}.csv")
        T = steps["t"].size
        m = steps["m"]
        mc = float(np.mean(m))
        reg = float(np.sum(steps["loss"])) - min(summary["arm_losses"])
        a_played = a_term(steps["pi"], m, s.params)
        c1 = (T * a_term(0.0, 0, s.params) - float(np.sum(a_played))) / T
        n1 = int(np.sum(m))
        cmc = c1 + (n1 * (1 - cfg.alpha) - cfg.alpha * (T - n1)) / T
        slack = reg / T + cmc - (mc - cfg.alpha)
        lemma_ok = slack >= -(harness.LEMMA_TOL + CHECK_TOL)
        bound_ok = summary["bound_rhs"] >= mc - cfg.alpha - CHECK_TOL
        results.append((seed, lemma_ok, slack, bound_ok))
    if not results:
        raise FileNotFoundError(f"no summaries in {d}")
    return results


def cmd_check(directory) -> int:
    results = check_directory(directory)
    status = EXIT_OK
    for seed, lemma_ok, slack, bound_ok in results:
        ok = lemma_ok and bound_ok
        print(f"seed {seed}: lemma1 {'ok' if lemma_ok else 'FAIL'} (slack {slack:.3g}), "
              f"bound {'ok' if bound_ok else 'FAIL'}")
        if not ok:
            status = EXIT_CHECK
    return status


def cmd_make_replay(cfg: RunConfig, path, rows=None) -> int:
    """Materialise the environment stream a live run of ``cfg.seed`` would see.

    ``rows`` defaults to ``cfg.T``; zero gives a header-only file.
    """
    rows = cfg.T if rows is None else rows
    spec = cfg.env_spec
    if spec.kind == "replay":
        raise ConfigError("env", "make-replay needs a synthetic environment")
    grid = ThresholdGrid.uniform(cfg.K)
    _, env_rng = harness.seed_streams(cfg.seed)
    env = make_environment(spec, grid, cfg.T, env_rng)
    if env.adaptive:
        raise ConfigError("env", "an adaptive environment has no learner-free stream")
    n = write_replay(path, (env.step(t) for t in range(1, rows + 1)))
    print(f"wrote {n} rows -> {path}")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--alg", choices=VARIANTS, dest="algorithm")
    p.add_argument("--env", help="iid, exponent, shift, adaptive or replay:PATH")
    p.add_argument("--K", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int)
    p.add_argument("--out")
    p.add_argument("--gamma-override", type=float, dest="gamma_override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ocpbandit", description="Online conformal prediction as a bandit.")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="run one config over one or more seeds"))
    sw = sub.add_parser("sweep", help="repeat a run over values of one parameter")
    _common(sw)
    sw.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--step-logs", action="store_true", help="also write per-step CSVs")
    ck = sub.add_parser("check", help="re-validate the coverage inequality and bounds on an output directory")
    ck.add_argument("directory")
    mk = sub.add_parser("make-replay", help="write a synthetic stream as a replay file")
    _common(mk)
    mk.add_argument("--path", required=True)
    return parser


def config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    keys = ("algorithm", "env", "K", "T", "alpha", "c", "rho", "delta", "seed", "seeds", "out", "gamma_override")
    changes = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    if "env" in changes and changes["env"] != cfg.env:
        # parameters of a different environment kind do not carry over
        changes["env_params"] = {}
    try:
        return replace(cfg, **changes)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("<flags>", str(exc)) from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "check":
            return cmd_check(args.directory)
        rows = None
        if args.command == "make-replay" and args.T is not None and args.T < 1:
            rows, args.T = args.T, 1
            if rows < 0:
                raise ConfigError("T", f"{rows} outside [0, inf)")
        cfg = config_from_args(args)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.axis, args.values.split(","), args.step_logs)
        return cmd_make_replay(cfg, args.path, rows)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ReplayParseError, DomainError, EmptyStreamError, EndOfStream, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
