"""Diverse collections of counterfactual strategies.

Members are generated one at a time. The first is the plain counterfactual;
each later one minimizes its distance to the initial strategy minus
``lam * det(D)``, where ``D`` holds inverse pairwise distances between the
members found so far and the candidate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encoding import SynthesisQuery
from .mdp_core import CHANGE_TOL, DistanceConfig, Mdp, Strategy
from .reachability import min_reach_probability
from .solver import (
    Landscape,
    SolverConfig,
    Status,
    SynthesisResult,
    _Deadline,
    _result,
    optimize,
    replace_query,
    solve,
)


@dataclass(frozen=True)
class DiversityConfig:
    count: int = 3
    lam: float = 2.0
    perturbation: float = 1e-4
    base: DistanceConfig = DistanceConfig()

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be at least 1")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if not self.perturbation > 0:
            raise ValueError("perturbation must be positive")


@dataclass
class DiverseSet:
    """Members in generation order.

    ``pairwise`` uses the raw (unaveraged) sum of per-state distances,
    unlike ``d1`` in the base distance which is averaged.
    """

    members: list[SynthesisResult]
    pairwise: np.ndarray
    determinant_trace: list[float] = field(default_factory=list)
    novel_fractions: list[float] = field(default_factory=list)
    perturbation: float = 1e-4
    certificate: str = ""

    @property
    def status(self) -> Status:
        if not self.members:
            return Status.INFEASIBLE if "reachability" in self.certificate else Status.TIMEOUT
        return self.members[0].status


def l1_distance(mdp: Mdp, a: Strategy, b: Strategy) -> float:
    """Raw sum over decision states of the per-state total variation distance."""
    return 0.5 * float(np.abs(a.to_vector(mdp) - b.to_vector(mdp)).sum())


def pairwise_matrix(mdp: Mdp, strategies: Sequence[Strategy], perturbation: float = 1e-4) -> np.ndarray:
    k = len(strategies)
    D = np.eye(k) * (1.0 + perturbation)
    for i in range(k):
        for j in range(i + 1, k):
            D[i, j] = D[j, i] = 1.0 / (1.0 + l1_distance(mdp, strategies[i], strategies[j]))
    return D


def diversity_determinant(mdp: Mdp, strategies: Sequence[Strategy], perturbation: float = 1e-4) -> float:
    if not strategies:
        raise ValueError("need at least one strategy")
    return float(np.linalg.det(pairwise_matrix(mdp, strategies, perturbation)))


def changed_pairs(mdp: Mdp, sigma0: Strategy, other: Strategy) -> set[tuple[int, int]]:
    diff = np.abs(other.to_vector(mdp) - sigma0.to_vector(mdp))
    return {mdp.pairs[k] for k in np.flatnonzero(diff > CHANGE_TOL)}


def novel_fraction(mdp: Mdp, sigma0: Strategy, candidate: Strategy,
                   previous: Sequence[Strategy] = ()) -> float:
    """Share of the candidate's changed state-action pairs that no earlier member changed."""
    mine = changed_pairs(mdp, sigma0, candidate)
    if not mine:
        return 0.0
    seen = set().union(*(changed_pairs(mdp, sigma0, p) for p in previous)) if previous else set()
    return len(mine - seen) / len(mine)


def diverse_synthesize(q: SynthesisQuery, dcfg: DiversityConfig = DiversityConfig(),
                       scfg: SolverConfig = SolverConfig()) -> DiverseSet:
    started = time.perf_counter()
    q = replace_query(q, distances=dcfg.base, epsilon=None)
    mdp = q.mdp
    first = solve(q, scfg)
    if not first.feasible:
        return DiverseSet([], np.zeros((0, 0)), perturbation=dcfg.perturbation,
                          certificate=first.certificate or str(first.status))
    members = [first]
    strategies = [first.strategy]
    trace = [diversity_determinant(mdp, strategies, dcfg.perturbation)]
    novel = [novel_fraction(mdp, q.initial, first.strategy)]
    _, witness = min_reach_probability(mdp, q.target, fixed=q.fixed_rows())
    for _ in range(1, dcfg.count):
        remaining = scfg.time_limit - (time.perf_counter() - started)
        if remaining <= 0:
            break
        previous = [s.to_vector(mdp) for s in strategies]
        land = Landscape(q, previous, dcfg.lam, dcfg.perturbation)
        best, used = optimize(land, scfg, witness, _Deadline(remaining))
        if best is None:
            break
        strategy = Strategy.from_vector(mdp, land.full(best.y))
        result = _result(q, strategy, best, used, first.reach_before, first.min_reach, started)
        result.certificate = "diversity objective"
        novel.append(novel_fraction(mdp, q.initial, strategy, strategies))
        members.append(result)
        strategies.append(strategy)
        trace.append(diversity_determinant(mdp, strategies, dcfg.perturbation))
    return DiverseSet(members, pairwise_matrix(mdp, strategies, dcfg.perturbation), trace, novel,
                      dcfg.perturbation)
