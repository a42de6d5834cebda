"""Command line interface.

Exit codes: 0 success (including Trivial), 2 Infeasible, 3 Timeout,
1 usage or input errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from ..diversity import DiversityConfig, diverse_synthesize
from ..encoding import EncodingError, SynthesisQuery, build_problem, export_problem, nonconvexity_report
from ..explain import render
from ..mdp_core import DistanceConfig, ModelError, induce_dtmc
from ..oracle import GridTooLarge, grid_oracle
from ..reachability import SingularSystemError, min_reach_probability, reach_probability
from ..solver import SolverConfig, Status, SynthesisResult, solve, solve_epsilon
from .bench import gamma_sweep
from .io import (
    ResultRecord,
    WorkbenchError,
    dump_json,
    load_json,
    load_mdp,
    load_strategy,
    load_traces,
    write_output,
)
from .learn import learn_mdp, random_strategy

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_TIMEOUT = 0, 1, 2, 3

log = logging.getLogger("cfstrat")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise WorkbenchError(f"{self.prog}: {message}")


def _exit_for(status: Status) -> int:
    if status == Status.INFEASIBLE:
        return EXIT_INFEASIBLE
    if status == Status.TIMEOUT:
        return EXIT_TIMEOUT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="MDP JSON file")
    common.add_argument("--strategy", help="strategy JSON file")
    common.add_argument("--target", help="target state label or id")
    common.add_argument("--gamma", type=float, help="reachability limit")
    common.add_argument("--epsilon", type=float, help="distance bound (epsilon mode)")
    common.add_argument("--r0", type=float, default=1.0)
    common.add_argument("--r1", type=float, default=1.0)
    common.add_argument("--rinf", type=float, default=1.0)
    common.add_argument("--lambda", dest="lam", type=float, default=2.0, help="diversity weight")
    common.add_argument("--count", type=int, default=None,
                        help="diverse members (diverse) or random strategies (bench)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--time-limit", type=float, default=1800.0)
    common.add_argument("--starts", type=int, default=16)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--out", help="write output here instead of stdout")
    common.add_argument("--format", choices=("json", "text", "csv"), default=None)
    common.add_argument("--verbose", "-v", action="store_true")

    parser = _Parser(prog="cfstrat", description="Counterfactual strategy synthesis for MDPs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in [
        ("check", "reachability probability of the strategy"),
        ("feasible", "minimum reachability over all strategies"),
        ("synth", "closest strategy within the limit"),
        ("epsilon", "any strategy within distance epsilon"),
        ("diverse", "several diverse counterfactual strategies"),
        ("oracle", "brute-force grid search"),
        ("export", "write the optimization problem as text"),
        ("explain", "counterfactual as instructions"),
        ("bench", "sweep gamma over random strategies"),
        ("nonconvexity", "Hessian eigenvalues of the Bellman constraints"),
    ]:
        p = sub.add_parser(name, parents=[common], help=help_)
        if name == "oracle":
            p.add_argument("--step", type=float, default=0.05, choices=(0.05, 0.02, 0.01))
        if name == "explain":
            p.add_argument("--result", help="render this result JSON instead of solving")
        if name == "bench":
            p.add_argument("--name", default=None, help="model name in the report")
    p = sub.add_parser("learn", parents=[common], help="MDP from an event log")
    p.add_argument("--traces", required=True)
    p.add_argument("--history", type=int, default=1)
    p.add_argument("--smoothing", type=float, default=0.0)
    p.add_argument("--threshold", type=int, default=15)
    return parser


def _need(args, *names):
    missing = [n for n in names if getattr(args, n.replace("-", "_")) is None]
    if missing:
        raise WorkbenchError(f"{args.command}: missing " + ", ".join(f"--{n}" for n in missing))


def _model(args):
    _need(args, "model")
    return load_mdp(args.model)


def _target(args, mdp):
    _need(args, "target")
    key = args.target
    try:
        return mdp.state_index(int(key) if key.isdigit() else key)
    except ModelError as exc:
        raise WorkbenchError(f"--target: {exc}") from None


def _query(args, epsilon=None):
    mdp = _model(args)
    _need(args, "strategy", "gamma")
    sigma = load_strategy(args.strategy, mdp)
    try:
        dist = DistanceConfig(args.r0, args.r1, args.rinf)
        return SynthesisQuery(mdp, sigma, _target(args, mdp), args.gamma, dist, epsilon)
    except (ModelError, ValueError) as exc:
        raise WorkbenchError(str(exc)) from None


def _solver_config(args) -> SolverConfig:
    try:
        return SolverConfig(time_limit=args.time_limit, starts=args.starts, seed=args.seed,
                            jobs=args.jobs)
    except ValueError as exc:
        raise WorkbenchError(str(exc)) from None


def _fmt(args, default="json"):
    return args.format or default


def cmd_check(args) -> int:
    mdp = _model(args)
    _need(args, "strategy")
    sigma = load_strategy(args.strategy, mdp)
    t = _target(args, mdp)
    p = reach_probability(induce_dtmc(mdp, sigma), t)[mdp.initial]
    if _fmt(args, "text") == "json":
        write_output(dump_json({"target": mdp.state_labels[t], "reach": p}), args.out)
    else:
        write_output(f"{p:.12g}\n", args.out)
    return EXIT_OK


def cmd_feasible(args) -> int:
    mdp = _model(args)
    t = _target(args, mdp)
    fixed = None
    if args.strategy is not None and mdp.controllable is not None:
        sigma = load_strategy(args.strategy, mdp)
        free = set(mdp.free_states)
        fixed = {s: sigma[s] for s in range(mdp.n_states) if s not in free}
    low, witness = min_reach_probability(mdp, t, fixed=fixed)
    feasible = args.gamma is None or low <= args.gamma + 1e-9
    if _fmt(args, "text") == "json":
        data = {"target": mdp.state_labels[t], "min_reach": low, "gamma": args.gamma,
                "feasible": feasible, "witness": witness.to_dict()}
        write_output(dump_json(data), args.out)
    else:
        verdict = "" if args.gamma is None else (" feasible" if feasible else " infeasible")
        write_output(f"{low:.12g}{verdict}\n", args.out)
    return EXIT_OK if feasible else EXIT_INFEASIBLE


def _emit_result(args, q, result) -> int:
    record = ResultRecord.from_result(q, result, args.seed)
    if _fmt(args) == "text":
        text = f"{record.status}\n"
        if result.strategy is not None:
            text += render(q.mdp, q.initial, result, q.target)
        write_output(text, args.out)
    else:
        write_output(dump_json(record.to_dict()), args.out)
    return _exit_for(result.status)


def cmd_synth(args) -> int:
    q = _query(args)
    return _emit_result(args, q, solve(q, _solver_config(args)))


def cmd_epsilon(args) -> int:
    _need(args, "epsilon")
    q = _query(args, epsilon=args.epsilon)
    return _emit_result(args, q, solve_epsilon(q, _solver_config(args)))


def cmd_diverse(args) -> int:
    q = _query(args)
    try:
        dcfg = DiversityConfig(count=args.count or 3, lam=args.lam, base=q.distances)
    except ValueError as exc:
        raise WorkbenchError(str(exc)) from None
    ds = diverse_synthesize(q, dcfg, _solver_config(args))
    data = {
        "status": str(ds.status),
        "members": [ResultRecord.from_result(q, r, args.seed).to_dict() for r in ds.members],
        "pairwise": ds.pairwise.tolist(),
        "determinant_trace": ds.determinant_trace,
        "novel_fractions": ds.novel_fractions,
        "certificate": ds.certificate,
    }
    if _fmt(args) == "text":
        text = "".join(f"# member {i + 1}\n" + render(q.mdp, q.initial, r, q.target)
                       for i, r in enumerate(ds.members))
        write_output(text or f"{ds.status}\n", args.out)
    else:
        write_output(dump_json(data), args.out)
    return _exit_for(ds.status)


def cmd_oracle(args) -> int:
    q = _query(args)
    try:
        o = grid_oracle(q, args.step)
    except GridTooLarge as exc:
        raise WorkbenchError(str(exc)) from None
    data = {"feasible": o.feasible, "step": args.step, "points": o.points,
            "distance": None if o.distance is None else o.distance.to_dict(),
            "reach_after": o.reach_value,
            "strategy": None if o.strategy is None else o.strategy.to_dict()}
    write_output(dump_json(data), args.out)
    return EXIT_OK if o.feasible else EXIT_INFEASIBLE


def cmd_learn(args) -> int:
    traces = load_traces(args.traces)
    try:
        mdp = learn_mdp(traces, args.history, args.smoothing, args.threshold)
    except (ModelError, ValueError) as exc:
        raise WorkbenchError(str(exc)) from None
    write_output(dump_json(mdp.to_dict()), args.out)
    return EXIT_OK


def cmd_export(args) -> int:
    write_output(export_problem(build_problem(_query(args))), args.out)
    return EXIT_OK


def cmd_explain(args) -> int:
    q = _query(args)
    if args.result is not None:
        record = ResultRecord.from_dict(load_json(args.result))
        try:
            strategy = record.strategy_for(q.mdp)
        except (KeyError, ValueError) as exc:
            raise WorkbenchError(f"{args.result}: {exc}") from None
        if strategy is None:
            raise WorkbenchError(f"{args.result}: result has no strategy ({record.status})")
        result = SynthesisResult(Status(record.status), strategy, None, record.reach_after,
                                 reach_before=record.reach_before)
    else:
        result = solve(q, _solver_config(args))
        if result.strategy is None:
            write_output(f"{result.status}\n", args.out)
            return _exit_for(result.status)
    write_output(render(q.mdp, q.initial, result, q.target), args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    mdp = _model(args)
    t = _target(args, mdp)
    n = args.count or 10
    strategies = [(args.seed + i, random_strategy(mdp, args.seed + i)) for i in range(n)]
    name = args.name or args.model
    report = gamma_sweep(mdp, t, strategies, _solver_config(args), name=name, jobs=args.jobs)
    write_output(report.table() if _fmt(args, "csv") == "text" else report.to_csv(), args.out)
    return EXIT_OK


def cmd_nonconvexity(args) -> int:
    report = nonconvexity_report(build_problem(_query(args)))
    if _fmt(args, "text") == "json":
        data = [{"state": e.state, "variables": list(e.variables), "eigenvalues": list(e.eigenvalues),
                 "nonconvex": e.nonconvex} for e in report]
        write_output(dump_json(data), args.out)
    else:
        mdp = _query(args).mdp
        lines = []
        for e in report:
            ev = " ".join(f"{v:.6g}" for v in e.eigenvalues)
            flag = "nonconvex" if e.nonconvex else "convex"
            lines.append(f"{mdp.state_labels[e.state]}: {flag} [{ev}]")
        write_output("\n".join(lines) + "\n", args.out)
    return EXIT_OK


COMMANDS = {
    "check": cmd_check, "feasible": cmd_feasible, "synth": cmd_synth, "epsilon": cmd_epsilon,
    "diverse": cmd_diverse, "oracle": cmd_oracle, "learn": cmd_learn, "export": cmd_export,
    "explain": cmd_explain, "bench": cmd_bench, "nonconvexity": cmd_nonconvexity,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except WorkbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (WorkbenchError, EncodingError, ModelError, SingularSystemError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
