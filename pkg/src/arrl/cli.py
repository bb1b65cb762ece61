"""Command-line driver: solve, train, evaluate and duality-check.

Every command is a pure function of its flags (and optional JSON config file,
which flags override).  All randomness derives from --seed through named
sub-streams, see `arrl.mdp.make_rng`.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from arrl.arrlc import arrlc_run
from arrl.envs import make_env
from arrl.evaluation import (EpisodeCsvWriter, PerturbationSpec, PolicyValueCache, default_thinning,
                             rollout_perturbed, write_evaluation_csv)
from arrl.mdp import make_rng
from arrl.planner import InstanceTooLarge, solve_robust_optimal, verify_perfect_duality
from arrl.runlog import LearnerConfig
from arrl.ucbh import ucbh_run

EXIT_OK, EXIT_USAGE, EXIT_RESOURCE = 0, 2, 3

# regret columns need one backward induction per distinct policy; skip beyond this model size
ORACLE_MAX_ENTRIES = 10**8
DEFAULT_GRID = (("fixed_policy", 0.1), ("fixed_policy", 0.2), ("uniform_random", 0.1), ("uniform_random", 0.2))
_KIND_ALIASES = {"fixed": "fixed_policy", "fixed_policy": "fixed_policy", "random": "uniform_random",
                 "uniform_random": "uniform_random", "none": "none"}


class UsageError(Exception):
    pass


# --- policy files ------------------------------------------------------------------

def save_policy(path, actions: np.ndarray, A: int, name: str, env: str, **meta) -> None:
    H, S = actions.shape
    doc = {"name": name, "env": env, "H": int(H), "S": int(S), "A": int(A),
           "actions": np.asarray(actions).tolist(), **meta}
    Path(path).write_text(json.dumps(doc))


def load_policy(path, mdp) -> tuple[np.ndarray, str]:
    doc = json.loads(Path(path).read_text())
    found = (doc.get("H"), doc.get("S"), doc.get("A"))
    expected = (mdp.H, mdp.S, mdp.A)
    actions = np.asarray(doc["actions"], dtype=np.int64)
    if found != expected or actions.shape != expected[:2]:
        raise UsageError(f"policy {path} has (H,S,A)={found}, actions shape {actions.shape}; "
                         f"environment expects (H,S,A)={expected}")
    return actions, doc.get("name", Path(path).stem)


def parse_perturbation(text: str) -> tuple[str, float]:
    kind, _, p = text.partition(":")
    if kind not in _KIND_ALIASES or not p:
        raise argparse.ArgumentTypeError(f"expected KIND:P with KIND in fixed|random|none, got {text!r}")
    return _KIND_ALIASES[kind], float(p)


# --- commands --------------------------------------------------------------------

def _build_env(args):
    try:
        return make_env(args.env, args.H)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_solve(args) -> int:
    mdp, amap, _ = _build_env(args)
    sol = solve_robust_optimal(mdp, args.rho)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    doc = {"env": args.env, "H": mdp.H, "S": mdp.S, "A": mdp.A, "s1": mdp.s1, **sol.to_dict()}
    out.write_text(json.dumps(doc))
    v = float(sol.V_star[0, mdp.s1])
    print(f"V*_1(s1)={v!r} raw={float(amap.return_to_raw(v, mdp.H))!r} -> {out}")
    return EXIT_OK


def _train_one(args, seed: int) -> str:
    mdp, _, _ = _build_env(args)
    config = LearnerConfig(args.K, args.rho, args.delta)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{args.alg}_seed{seed}.csv"
    pol_path = out_dir / f"{args.alg}_seed{seed}_pi_out.json"
    oracle = mdp.H * mdp.S * mdp.A * mdp.S <= ORACLE_MAX_ENTRIES
    cache = PolicyValueCache(mdp, args.rho) if oracle else None
    rng = make_rng(seed, f"train:{args.alg}")
    with open(csv_path, "w", newline="") as fh:
        writer = EpisodeCsvWriter(fh, seed, cache, thin=default_thinning(mdp))
        if args.alg == "arrlc":
            log = arrlc_run(mdp, config, rng, record_trajectories=False, on_chunk=writer.write)
        else:
            log = ucbh_run(mdp, config, rng, record_trajectories=False, on_chunk=writer.write)
    save_policy(pol_path, log.pi_out, mdp.A, f"{args.alg}_rho{args.rho:g}_seed{seed}", args.env,
                algorithm=args.alg, rho=args.rho, K=args.K, seed=seed)
    return (f"seed={seed} alg={args.alg} K={args.K} final_eps={float(log.epsilon[-1])!r} "
            f"csv={csv_path} pi_out={pol_path}")


def cmd_train(args) -> int:
    if args.seed is None:
        raise UsageError("train needs --seed")
    seeds = args.seed if isinstance(args.seed, list) else [args.seed]
    _build_env(args)  # fail fast on a bad spec before fanning out
    if args.jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            lines = list(pool.map(_train_one, [args] * len(seeds), seeds))
    else:
        lines = [_train_one(args, s) for s in seeds]
    for line in lines:
        print(line)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    mdp, amap, default_adv = _build_env(args)
    seed = 0 if args.seed is None else (args.seed[0] if isinstance(args.seed, list) else args.seed)
    policy, name = load_policy(args.policy, mdp)
    adversary = load_policy(args.adversary, mdp)[0] if args.adversary else default_adv
    grid = [parse_perturbation(g) if isinstance(g, str) else tuple(g) for g in args.perturb] \
        if args.perturb else list(DEFAULT_GRID)
    rows = []
    for kind, p in grid:
        if kind == "fixed_policy" and adversary is None:
            raise UsageError(f"env {args.env!r} has no default adversary; pass --adversary")
        spec = PerturbationSpec(kind, p, adversary if kind == "fixed_policy" else None)
        rep = rollout_perturbed(mdp, policy, spec, args.n, make_rng(seed, f"evaluate:{kind}:{p!r}"), amap)
        rows.append((name, spec, rep))
        print(f"{name} {kind} p={p:g} n={rep.n_trajectories} mean_raw={rep.mean_return_raw:.6g} "
              f"mean_norm={rep.mean_return_normalized:.6g} stderr={rep.std_error:.3g}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        write_evaluation_csv(fh, rows)
    return EXIT_OK


def cmd_duality_check(args) -> int:
    mdp, _, _ = _build_env(args)
    max_min, min_max, gap = verify_perfect_duality(mdp, args.rho)
    print(f"max_min={max_min!r} min_max={min_max!r} gap={gap:.3e}")
    return EXIT_OK


# --- argument parsing ------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of defaults; explicit flags take precedence")
    p.add_argument("--env", default="cliff", help="cliff | chain:n=..,slip=.. | random:S=..,A=..,seed=..[,c=..] | file:path=..")
    p.add_argument("--H", type=int, default=30, help="horizon")
    p.add_argument("--rho", type=float, default=0.2, help="execution uncertainty level")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arrl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="exact robust optimal values and policies")
    _common(p)
    p.add_argument("--out", default="solution.json")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("train", help="run a learner, stream per-episode CSV and save pi_out")
    _common(p)
    p.add_argument("--alg", choices=["arrlc", "ar_ucbh"], default="arrlc")
    p.add_argument("--K", type=int, default=1000, help="episodes")
    p.add_argument("--delta", type=float, default=0.05, help="confidence parameter")
    p.add_argument("--seed", type=int, nargs="+", help="one or more seeds (required)")
    p.add_argument("--jobs", type=int, default=1, help="parallel seed runs")
    p.add_argument("--out", default="runs", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="Monte Carlo returns under perturbed execution")
    _common(p)
    p.add_argument("--policy", required=True, help="policy JSON written by train")
    p.add_argument("--adversary", help="policy JSON for the fixed adversary (default: env's own)")
    p.add_argument("--perturb", action="append", type=parse_perturbation, metavar="KIND:P",
                   help="fixed|random|none with probability P; repeatable (default: fixed and random at 0.1, 0.2)")
    p.add_argument("--n", type=int, default=100, help="trajectories per setting")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="evaluation.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("duality-check", help="compare max-min and min-max by enumeration")
    _common(p)
    p.set_defaults(func=cmd_duality_check)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        cfg = json.loads(Path(known.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config {known.config}: {exc}")
    subparser = parser._subparsers._group_actions[0].choices.get(known.command)
    if subparser is None:
        return
    dests = {a.dest for a in subparser._actions}
    unknown = set(cfg) - dests
    if unknown:
        parser.error(f"unknown config keys {sorted(unknown)}")
    subparser.set_defaults(**cfg)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    _apply_config(parser, argv)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"arrl {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InstanceTooLarge, MemoryError) as exc:
        print(f"arrl {args.command}: resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except ValueError as exc:
        print(f"arrl {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
