"""Sweep the reachability threshold over many initial strategies and tabulate."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..encoding import SynthesisQuery
from ..mdp_core import Mdp, Strategy
from ..solver import SolverConfig, Status, solve

log = logging.getLogger(__name__)

GAMMA_GRID = (0.0001, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
CSV_COLUMNS = ("model", "gamma", "strategy_seed", "status", "wall_time_s",
               "distance_combined", "reach_after")
ERROR = "Error"
# table columns; Trivial runs are counted as Opt.
CATEGORIES = {
    "Opt.": (Status.OPTIMAL.value, Status.TRIVIAL.value),
    "Inf.": (Status.INFEASIBLE.value,),
    "T.O.": (Status.TIMEOUT.value,),
    "Sub.O.": (Status.SUBOPTIMAL.value,),
    "Err.": (ERROR,),
}


@dataclass(frozen=True)
class BenchRow:
    model: str
    gamma: float
    strategy_seed: int
    status: str
    wall_time_s: float
    distance_combined: float | None
    reach_after: float | None


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)

    def extend(self, other: "BenchReport") -> "BenchReport":
        self.rows.extend(other.rows)
        return self

    def aggregates(self) -> dict[str, dict[str, float]]:
        out = {}
        for model in dict.fromkeys(r.model for r in self.rows):
            rows = [r for r in self.rows if r.model == model]
            t = np.array([r.wall_time_s for r in rows])
            agg = {"runs": len(rows), "mean(t)": float(t.mean()), "std(t)": float(t.std()),
                   "min(t)": float(t.min()), "max(t)": float(t.max())}
            for name, statuses in CATEGORIES.items():
                agg[name] = sum(r.status in statuses for r in rows)
            out[model] = agg
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.model, repr(r.gamma), r.strategy_seed, r.status, f"{r.wall_time_s:.6f}",
                        "" if r.distance_combined is None else repr(r.distance_combined),
                        "" if r.reach_after is None else repr(r.reach_after)])
        return buf.getvalue()

    def table(self) -> str:
        heads = ["model", "runs", "mean(t)", "std(t)", "min(t)", "max(t)", *CATEGORIES]
        lines = [" ".join(f"{h:>10}" for h in heads)]
        for model, agg in self.aggregates().items():
            cells = [model, str(agg["runs"])]
            cells += [f"{agg[k]:.2f}" for k in ("mean(t)", "std(t)", "min(t)", "max(t)")]
            cells += [str(agg[k]) for k in CATEGORIES]
            lines.append(" ".join(f"{c:>10}" for c in cells))
        return "\n".join(lines) + "\n"


def gamma_sweep(m: Mdp, t: int, strategies: Sequence[tuple[int, Strategy]],
                cfg: SolverConfig = SolverConfig(), name: str = "model",
                gammas: Sequence[float] = GAMMA_GRID, jobs: int = 1) -> BenchReport:
    """Solve every (strategy, gamma) pair; a failing run becomes an error row."""
    tasks = [(seed, sigma, g) for seed, sigma in strategies for g in gammas]

    def run(task) -> BenchRow:
        seed, sigma, g = task
        try:
            r = solve(SynthesisQuery(m, sigma, t, g), cfg)
        except Exception as exc:  # recorded, never aborts the sweep
            log.warning("run model=%s gamma=%s seed=%s failed: %s", name, g, seed, exc)
            return BenchRow(name, g, seed, ERROR, 0.0, None, None)
        dist = None if r.distance is None else float(r.distance.combined)
        return BenchRow(name, g, seed, str(r.status), float(r.wall_time), dist,
                        None if r.reach_value is None else float(r.reach_value))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run, tasks))
    else:
        rows = [run(task) for task in tasks]
    return BenchReport(rows)
