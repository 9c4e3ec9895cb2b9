"""Command line interface.

Exit codes: 0 success, 1 failed verification, 2 validation error,
3 non-convergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .core import MarketInstance
from .equilibrium import InitMode, SolverConfig, solve_equilibrium
from .errors import DomainError, NonConvergenceError, UnsupportedMarketError, UsageError, ValidationError
from .harness import (
    ExperimentConfig,
    dump_json,
    load_config,
    run_epoch_sweep,
    run_eta_sweep,
    run_experiment,
)
from .providers import load_belief_matrix
from .wealth import LabeledBeliefSet, run_batch_epochs, run_online_epoch

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_VALIDATION = 2
EXIT_NONCONVERGENCE = 3
EXIT_IO = 4


def _add_solver_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("solver")
    g.add_argument("--a-init", type=float, default=None)
    g.add_argument("--epsilon", type=float, default=None)
    g.add_argument("--max-iters", type=int, default=None)
    g.add_argument("--init", choices=[m.value for m in InitMode], default=None)


def _solver_from_args(args, base: SolverConfig | None = None) -> SolverConfig:
    d = (base or SolverConfig()).to_dict()
    for key, attr in (("a_init", "a_init"), ("epsilon", "epsilon"), ("max_iters", "max_iters"), ("c_init_mode", "init")):
        v = getattr(args, attr)
        if v is not None:
            d[key] = v
    return SolverConfig(**d)


def _add_experiment_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON experiment config; flags below override it")
    p.add_argument("--dataset", help="CSV dataset path (default: built-in synthetic blobs)")
    p.add_argument("--label-column")
    p.add_argument("--num-agents", type=int)
    p.add_argument("--agent-kind", choices=["bagged_tree", "gaussian_nb"])
    p.add_argument("--repetitions", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--update-scheme", choices=["batch", "online", "none"])
    p.add_argument("--eta", type=float, help="homogeneous market with this eta instead of gamma-sampled etas")
    p.add_argument("--num-corrupted", type=int)
    p.add_argument("--base-seed", type=int)
    p.add_argument("--jobs", type=int)
    _add_solver_flags(p)


def _experiment_config(args) -> ExperimentConfig:
    overrides = {
        "dataset": args.dataset,
        "label_column": args.label_column,
        "num_agents": args.num_agents,
        "agent_kind": args.agent_kind,
        "repetitions": args.repetitions,
        "epochs": args.epochs,
        "update_scheme": args.update_scheme,
        "num_corrupted": args.num_corrupted,
        "base_seed": args.base_seed,
        "jobs": args.jobs,
    }
    if args.eta is not None:
        overrides["eta_mode"] = {"mode": "homogeneous", "eta": args.eta}
    if args.config is not None:
        cfg = load_config(args.config, overrides)
    else:
        cfg = ExperimentConfig.from_dict({k: v for k, v in overrides.items() if v is not None})
    cfg.solver = _solver_from_args(args, cfg.solver)
    return cfg


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_equilibrium(args) -> int:
    bf = load_belief_matrix(args.beliefs)
    solver = _solver_from_args(args)
    n_inst = bf.beliefs.shape[1]
    indices = [args.instance] if args.instance is not None else range(n_inst)
    results = []
    trace_for = args.instance if args.instance is not None else 0
    trace = None
    for t in indices:
        if not 0 <= t < n_inst:
            raise ValidationError(f"instance {t} out of range [0, {n_inst})")
        market = MarketInstance(bf.beliefs[:, t], bf.wealths, bf.utilities, bf.ids)
        res = solve_equilibrium(market, solver)
        results.append({
            "instance": t,
            "c": res.c.tolist(),
            "iterations": res.iterations,
            "proposals": res.proposals,
            "final_kl": res.final_kl,
            "converged": res.converged,
            "method": res.method,
        })
        if t == trace_for:
            trace = res.kl_trace
        print(f"instance {t}: c = {np.array2string(res.c, precision=6)}  ({res.iterations} accepted steps)")
    if args.out:
        dump_json({"solver": solver.to_dict(), "instances": results}, args.out)
    if args.kl_trace and trace is not None:
        _write_csv(args.kl_trace, ["iter", "value"], [[i, repr(float(v))] for i, v in enumerate(trace)])
    return EXIT_OK


def cmd_update(args) -> int:
    bf = load_belief_matrix(args.beliefs)
    if bf.targets is None:
        raise ValidationError("belief file has no 'targets'; the update command needs them")
    data = LabeledBeliefSet(bf.beliefs, bf.targets)
    solver = _solver_from_args(args)
    if args.scheme == "batch":
        traj = run_batch_epochs(bf.wealths, data, bf.utilities, args.epochs, solver)
    else:
        w, rows = bf.wealths, [bf.wealths]
        for _ in range(args.epochs):
            w, steps = run_online_epoch(w, data, bf.utilities, solver)
            rows.extend(steps[1:])
        traj = np.stack(rows)
    final = traj[-1]
    for aid, w in zip(bf.ids, final):
        print(f"{aid}\t{w:.10f}")
    if args.trace:
        _write_csv(
            args.trace, ["epoch", "agent_id", "wealth"],
            [[e, aid, repr(float(w))] for e, row in enumerate(traj) for aid, w in zip(bf.ids, row)],
        )
    if args.out:
        dump_json({"scheme": args.scheme, "ids": list(bf.ids), "trajectory": traj.tolist()}, args.out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    report = run_experiment(_experiment_config(args))
    table = report.to_table()
    print(table, end="")
    if args.out:
        Path(args.out).write_text(report.to_json())
    if args.table:
        Path(args.table).write_text(table)
    return EXIT_OK


def cmd_sweep_eta(args) -> int:
    grid = [float(x) for x in args.grid.split(",") if x.strip()]
    result = run_eta_sweep(_experiment_config(args), grid)
    print(f"{'eta':>8}{'mean test LL':>16}")
    for row in result["table"]:
        print(f"{row['eta']:>8.3g}{row['mean_test_ll']:>16.4f}")
    print(f"{'inhom.':>8}{result['inhomogeneous']['mean_test_ll']:>16.4f}")
    if args.out:
        dump_json(result, args.out)
    return EXIT_OK


def cmd_sweep_epochs(args) -> int:
    result = run_epoch_sweep(_experiment_config(args), args.max_epochs)
    print(f"{'epoch':>6}{'iso LL':>14}{'iso acc':>10}{'log LL':>14}{'log acc':>10}")
    for iso, lg in zip(result["mean_trace"]["iso_market"], result["mean_trace"]["log_market"]):
        print(f"{iso['epoch']:>6}{iso['test_ll']:>14.4f}{iso['accuracy']:>10.4f}{lg['test_ll']:>14.4f}{lg['accuracy']:>10.4f}")
    if args.out:
        dump_json(result, args.out)
    if args.wealth_trace:
        wealths = result["repetitions"][0]["markets"]["iso_market"]["wealths"]
        _write_csv(
            args.wealth_trace, ["epoch", "agent_id", "wealth"],
            [[e, f"agent{i}", repr(float(w))] for e, row in enumerate(wealths) for i, w in enumerate(row)],
        )
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_checks

    results = run_checks(seed=args.seed, n=args.n)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlmarkets", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("equilibrium", help="solve market equilibria for a belief file")
    p.add_argument("beliefs", type=Path)
    p.add_argument("--instance", type=int, help="only this instance (0-based)")
    p.add_argument("--out", type=Path, help="JSON output with equilibrium prices")
    p.add_argument("--kl-trace", type=Path, help="CSV trace (iter,value) for --instance or instance 0")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_equilibrium)

    p = sub.add_parser("update", help="run wealth updates on a belief file with targets")
    p.add_argument("beliefs", type=Path)
    p.add_argument("--scheme", choices=["batch", "online"], default="batch")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--trace", type=Path, help="CSV wealth trace (epoch,agent_id,wealth)")
    p.add_argument("--out", type=Path)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_update)

    p = sub.add_parser("experiment", help="run the repeated train/test protocol")
    _add_experiment_flags(p)
    p.add_argument("--out", type=Path, help="JSON report")
    p.add_argument("--table", type=Path, help="text table report")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sweep-eta", help="homogeneous-eta sweep versus the inhomogeneous market")
    _add_experiment_flags(p)
    p.add_argument("--grid", default="1,2,3,5,8,12")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_sweep_eta)

    p = sub.add_parser("sweep-epochs", help="test metrics after each batch wealth epoch")
    _add_experiment_flags(p)
    p.add_argument("--max-epochs", type=int, default=5)
    p.add_argument("--out", type=Path)
    p.add_argument("--wealth-trace", type=Path, help="CSV (epoch,agent_id,wealth) for repetition 0")
    p.set_defaults(func=cmd_sweep_epochs)

    p = sub.add_parser("verify", help="run the randomised invariant suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-n", type=int, default=20, help="random instances per check")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValidationError, DomainError, UsageError, UnsupportedMarketError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
