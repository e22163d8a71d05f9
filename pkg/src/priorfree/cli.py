"""Command-line front end.

Subcommands: run, sweep, audit-bias, verify-lemmas, lower-bound, impossibility.
Every output is UTF-8 CSV or JSON written under ``--out``. CSV files start with a
``#schema=<name>/<version>`` line.

Exit codes: 0 success, 1 check failed (verify-lemmas, impossibility),
2 config error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import fixtures
from .forecasting import audit_bias, bias_csv
from .game import DomainError, PersuasionGame
from .harness import (
    ConfigError,
    ExperimentConfig,
    build_game,
    generate_stream,
    loglog_slope,
    report_json,
    run_experiment,
    transcripts_csv,
)
from .lemmas import certify_impossibility, default_grid, verify_lemmas
from .oracles.linear import is_stable

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
SWEEP_SCHEMA = "sweep/1"
LEMMAS_SCHEMA = "lemmas/1"


class _Out:
    def __init__(self, args):
        self.dir = args.out
        self.quiet = args.quiet

    def write(self, name: str, text: str) -> str:
        os.makedirs(self.dir, exist_ok=True)
        path = os.path.join(self.dir, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        return path

    def say(self, msg: str = "") -> None:
        if not self.quiet:
            print(msg)


def _read_json(path: str | None) -> dict:
    if path is None:
        raise ConfigError("this command needs --config")
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path!r}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path!r} is not valid JSON: {e}") from None
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    base = os.path.dirname(os.path.abspath(path))
    st = d.get("states")
    if isinstance(st, dict) and st.get("kind") == "file" and isinstance(st.get("path"), str):
        st["path"] = os.path.join(base, st["path"])
    return d


def _overrides(d: dict, args) -> dict:
    d = dict(d)
    if args.seed is not None:
        d["seed"] = args.seed
    if args.reps is not None:
        d["reps"] = args.reps
    return d


def _horizons(d: dict) -> list[int]:
    T = d.get("T")
    Ts = T if isinstance(T, list) else [T]
    if not Ts or not all(isinstance(t, int) and not isinstance(t, bool) and t >= 1 for t in Ts):
        raise ConfigError("config field 'T' must be a positive integer or a list of them")
    return Ts


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    out = _Out(args)
    cfg = ExperimentConfig.from_dict(_overrides(_read_json(args.config), args))
    res = run_experiment(cfg)
    out.write("transcript.csv", transcripts_csv(res.realized))
    out.write("report.json", report_json(res.report))
    r = res.report
    out.say(f"T={cfg.T} reps={cfg.reps} seed={cfg.seed}")
    out.say(f"PR={r['policy_regret']['PR']:.6f} +- {r['policy_regret']['PR_stderr']:.6f}")
    out.say(f"SwapReg/T={r['swap_regret']['mean']:.6f} NegReg/T={r['neg_regret']['mean']:.6f}")
    out.say(f"mean principal value per round={r['mean_principal_value']:.6f}")
    out.say(f"max alpha={r['bias']['max_alpha']:.6f}")
    return EXIT_OK


def sweep_rows(d: dict) -> tuple[list[dict], float | None]:
    rows = []
    for T in _horizons(d):
        r = run_experiment(ExperimentConfig.from_dict({**d, "T": T})).report
        rows.append({"T": T, "PR": r["policy_regret"]["PR"], "PR_stderr": r["policy_regret"]["PR_stderr"],
                     "SwapReg": r["swap_regret"]["mean"], "max_alpha": r["bias"]["max_alpha"]})
    slope = loglog_slope([x["T"] for x in rows], [x["PR"] for x in rows]) if len(rows) > 1 else None
    return rows, slope


def sweep_csv(rows: list[dict], slope) -> str:
    buf = io.StringIO()
    buf.write(f"#schema={SWEEP_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["T", "PR", "PR_stderr", "SwapReg", "max_alpha", "pr_slope"])
    for x in rows:
        w.writerow([x["T"], _fmt(x["PR"]), _fmt(x["PR_stderr"]), _fmt(x["SwapReg"]), _fmt(x["max_alpha"]), _fmt(slope)])
    return buf.getvalue()


def cmd_sweep(args) -> int:
    out = _Out(args)
    rows, slope = sweep_rows(_overrides(_read_json(args.config), args))
    out.write("sweep.csv", sweep_csv(rows, slope))
    for x in rows:
        out.say(f"T={x['T']:>7} PR={x['PR']:+.5f} +- {x['PR_stderr']:.5f} SwapReg/T={x['SwapReg']:.5f} max_alpha={x['max_alpha']:.5f}")
    out.say("slope=" + ("" if slope is None else f"{slope:.4f}"))
    return EXIT_OK


def cmd_audit_bias(args) -> int:
    out = _Out(args)
    d = _overrides(_read_json(args.config), args)
    parts = []
    for k, T in enumerate(_horizons(d)):
        cfg = ExperimentConfig.from_dict({**d, "T": T})
        st = generate_stream(cfg, cfg.mechanism_obj())
        rows = audit_bias(st.forecasts, st.states, st.families)
        parts.append(bias_csv(rows, header=k == 0))
        out.say(f"T={T} events={len(rows)} max_alpha={max((r['alpha'] for r in rows), default=0.0):.6f}")
    out.write("bias.csv", "".join(parts))
    return EXIT_OK


def lemma_table(results) -> str:
    buf = io.StringIO()
    buf.write(f"#schema={LEMMAS_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lemma", "cases", "failures", "status"])
    for r in results:
        w.writerow([r.name, r.cases, r.failures, "PASS" if r.passed else "FAIL"])
    return buf.getvalue()


def cmd_verify_lemmas(args, stability=is_stable) -> int:
    """``stability`` replaces the linear oracle's stability check (test hook for mutants)."""
    out = _Out(args)
    seed = 0 if args.seed is None else args.seed
    cases = args.cases
    if cases < 1:
        raise ConfigError("--cases must be at least 1")
    results = verify_lemmas(seed=seed, cases=cases, oracle_cases=max(cases, 10 * cases),
                            persuasion_cases=cases, stability=stability)
    out.write("lemmas.csv", lemma_table(results))
    for r in results:
        out.say(f"{'PASS' if r.passed else 'FAIL'} {r.name:<28} cases={r.cases:>6} failures={r.failures}")
        if not r.passed and r.first_failure is not None:
            out.say(f"     first failure: {r.first_failure}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


LOWER_BOUND_DEFAULTS = {
    "game": {"fixture": "lower-bound"},
    "forecaster": {"kind": "calibrated", "m": 32},
    "agent": "adversary-L",
    "events": "E123",
    "resample_states": True,
    "benchmark_recommendations": ["work", "work"],
    "T": 16384,
    "reps": 32,
}


def lower_bound_report(d: dict) -> dict:
    if "mechanism" not in d:
        raise ConfigError("config field 'mechanism' is required: name the mechanism to attack")
    base = {**LOWER_BOUND_DEFAULTS, **d}
    out = {"schema": "lower-bound/1", "mechanism": base["mechanism"], "T": base["T"], "reps": base["reps"],
           "distributions": []}
    for first in ("M", "H"):
        cfg = ExperimentConfig.from_dict({**base, "states": {"kind": "lower-bound", "first": first}})
        r = run_experiment(cfg).report
        adv = r["adversary"]
        noreg = list(adv["noreg_from"])
        out["distributions"].append({
            "first_state": first,
            "PR": r["policy_regret"]["PR"],
            "PR_stderr": r["policy_regret"]["PR_stderr"],
            "by_benchmark": r["policy_regret"]["by_benchmark"],
            "SwapReg_per_T": r["swap_regret"]["mean"],
            "NegReg_per_T": r["neg_regret"]["mean"],
            "balanced_all_fraction": adv["balanced_all_fraction"],
            "trigger": adv["trigger"],
            "noreg_from": noreg,
            "noreg_from_round_2_fraction": float(np.mean([x == 2 for x in noreg])),
            "identity_error": max(x["identity_error"] for x in r["decomposition"]),
        })
    out["max_PR"] = max(x["PR"] for x in out["distributions"])
    return out


def cmd_lower_bound(args) -> int:
    out = _Out(args)
    rep = lower_bound_report(_overrides(_read_json(args.config), args))
    out.write("lower_bound.json", json.dumps(rep, sort_keys=True, indent=2) + "\n")
    for x in rep["distributions"]:
        out.say(f"first={x['first_state']} PR={x['PR']:.5f} +- {x['PR_stderr']:.5f} SwapReg/T={x['SwapReg_per_T']:.5f} "
                f"NegReg/T={x['NegReg_per_T']:.5f} balanced_all={x['balanced_all_fraction']:.3f} "
                f"noreg_from_2={x['noreg_from_round_2_fraction']:.3f}")
    out.say(f"max PR={rep['max_PR']:.5f}")
    return EXIT_OK


def impossibility_report(d: dict) -> dict:
    game = fixtures.prop2_game()
    if "game" in d:
        game = build_game(d["game"])
        if isinstance(game, PersuasionGame):
            raise ConfigError("config field 'game': the certificate needs a linear-contract or tabular game")
    grid = default_grid()
    g = d.get("grid", {})
    if not isinstance(g, dict):
        raise ConfigError("config field 'grid' must be an object")
    for k in ("c", "gamma", "beta"):
        if k in g:
            v = g[k]
            v = v if isinstance(v, list) else [v]
            if not v or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
                raise ConfigError(f"config field 'grid.{k}' must be a number or a list of numbers")
            grid[k] = [float(x) for x in v]
    eps = d.get("eps", 0.0)
    if not isinstance(eps, (int, float)) or isinstance(eps, bool) or eps < 0:
        raise ConfigError("config field 'eps' must be a nonnegative number")
    rep = certify_impossibility(game, grid, float(eps)).to_dict()
    rep["schema"] = "impossibility/1"
    rep["benchmark"] = [game.policy_label(p) for p in game.benchmark]
    return rep


def cmd_impossibility(args) -> int:
    out = _Out(args)
    d = _read_json(args.config) if args.config else {}
    rep = impossibility_report(d)
    out.write("impossibility.json", json.dumps(rep, sort_keys=True, indent=2) + "\n")
    out.say(f"certified={rep['certified']} grid_points={rep['grid_points']} counterexamples={len(rep['counterexamples'])}")
    for k, v in sorted(rep["binding_constraints"].items()):
        out.say(f"  {k}: binds at {v} points")
    for cx in rep["counterexamples"][:5]:
        out.say(f"  counterexample c={cx['c']:g} gamma={cx['gamma']:g} beta={cx['beta']:g} qualifying={cx['qualifying']}")
        for pol, why in sorted(cx["binding"].items()):
            out.say(f"    p={pol}: " + ("; ".join(why) if why else "optimal and stable"))
    return EXIT_OK if rep["certified"] else EXIT_FAILED


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON experiment config")
    common.add_argument("--out", metavar="DIR", default=".", help="output directory (default: current)")
    common.add_argument("--seed", metavar="N", type=int, help="override the config seed")
    common.add_argument("--reps", metavar="N", type=int, help="override the number of repetitions")
    common.add_argument("--quiet", action="store_true", help="print nothing on success")
    p = argparse.ArgumentParser(prog="priorfree", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="one experiment: transcript.csv + report.json").set_defaults(fn=cmd_run)
    sub.add_parser("sweep", parents=[common], help="PR, SwapReg and bias over the T list: sweep.csv").set_defaults(fn=cmd_sweep)
    sub.add_parser("audit-bias", parents=[common], help="per-event bias table: bias.csv").set_defaults(fn=cmd_audit_bias)
    v = sub.add_parser("verify-lemmas", parents=[common], help="randomized lemma suites: lemmas.csv")
    v.add_argument("--cases", type=int, default=1000, help="cases per suite (oracle suites get 10x)")
    v.set_defaults(fn=cmd_verify_lemmas)
    sub.add_parser("lower-bound", parents=[common], help="clairvoyant agent vs a mechanism: lower_bound.json").set_defaults(fn=cmd_lower_bound)
    sub.add_parser("impossibility", parents=[common], help="certify that no benchmark policy is optimal and stable").set_defaults(fn=cmd_impossibility)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    if args.reps is not None and args.reps < 1:
        print("error: --reps must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, RuntimeError, ArithmeticError, np.linalg.LinAlgError, OSError) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
