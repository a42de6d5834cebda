"""Reachability analysis for DTMCs and minimum reachability over MDP strategies."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mdp_core import Distribution, Dtmc, Mdp, ModelError, Strategy, induced_matrix

BELLMAN_TOL = 1e-8


class SingularSystemError(RuntimeError):
    """The Bellman system stayed singular after graph preprocessing."""


@dataclass(frozen=True)
class ReachAnalysis:
    target: int
    reach_set: frozenset[int]
    zero_set: frozenset[int]


@dataclass(frozen=True)
class ReachValues:
    values: np.ndarray
    residual: float

    def __getitem__(self, s: int) -> float:
        return float(self.values[s])


def backward_closure(matrix: sp.spmatrix, target, blocked=None) -> np.ndarray:
    """Boolean mask of states with a positive-probability path to ``target``
    (a state id or a collection of ids) in the square matrix ``matrix``.

    Paths may not pass through ``blocked`` states.
    """
    pred = sp.csc_matrix(matrix)
    n = pred.shape[1]
    seen = np.zeros(n, dtype=bool)
    stop = np.zeros(n, dtype=bool)
    if blocked is not None:
        stop[blocked] = True
    start = np.atleast_1d(np.asarray(target, dtype=np.int64))
    seen[start] = True
    queue = deque(start.tolist())
    while queue:
        v = queue.popleft()
        for u in pred.indices[pred.indptr[v] : pred.indptr[v + 1]]:
            if not seen[u] and not stop[u]:
                seen[u] = True
                queue.append(u)
    return seen


def prob1_mask(matrix: sp.spmatrix, t: int, reach: np.ndarray | None = None) -> np.ndarray:
    """States that reach ``t`` with probability one: they cannot reach a
    state that avoids ``t`` without passing through ``t`` first."""
    if reach is None:
        reach = backward_closure(matrix, t)
    no = np.flatnonzero(~reach)
    if not no.size:
        return reach.copy()
    return ~backward_closure(matrix, no, blocked=[t])


def _state_graph(mdp: Mdp) -> sp.csr_matrix:
    """Union over actions of the positive-probability edges."""
    n_pairs = len(mdp.pairs)
    select = sp.csr_matrix(
        (np.ones(n_pairs), (mdp.pair_state, np.arange(n_pairs))),
        shape=(mdp.n_states, n_pairs),
    )
    return (select @ mdp.pair_matrix).tocsr()


def reach_set(mdp: Mdp, t: int) -> ReachAnalysis:
    """States from which ``t`` is reachable under some choice of actions."""
    if not 0 <= t < mdp.n_states:
        raise ModelError(f"unknown state id {t}")
    mask = backward_closure(_state_graph(mdp), t)
    reach = frozenset(np.flatnonzero(mask).tolist())
    return ReachAnalysis(t, reach, frozenset(range(mdp.n_states)) - reach)


def bellman_residual(matrix: sp.csr_matrix, t: int, values: np.ndarray) -> float:
    res = values - matrix @ values
    res[t] = values[t] - 1.0
    # states outside Reach(t) are pinned to zero and carry no equation
    res[values == 0.0] = 0.0
    return float(np.max(np.abs(res))) if res.size else 0.0


def solve_reach(matrix: sp.csr_matrix, t: int, with_lu: bool = False):
    """Exact reachability probabilities for a row-stochastic sparse matrix.

    Returns the value vector, and optionally the factorization and index set
    used, so callers can reuse them for adjoint solves.
    """
    n = matrix.shape[0]
    matrix = sp.csr_matrix(matrix)
    mask = backward_closure(matrix, t)
    yes = prob1_mask(matrix, t, mask)
    idx = np.flatnonzero(mask & ~yes)
    values = np.zeros(n)
    values[yes] = 1.0
    lu = None
    if idx.size:
        sub = matrix[idx][:, idx]
        rhs = np.asarray(matrix[idx][:, np.flatnonzero(yes)].sum(axis=1)).ravel()
        system = (sp.identity(idx.size, format="csc") - sub).tocsc()
        try:
            lu = spla.splu(system)
        except RuntimeError as exc:
            raise SingularSystemError(str(exc)) from exc
        sol = lu.solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise SingularSystemError("non-finite solution of reachability system")
        values[idx] = np.clip(sol, 0.0, 1.0)
    if with_lu:
        return values, lu, idx
    return values


def reach_adjoint(matrix: sp.csr_matrix, t: int, source: int) -> np.ndarray:
    """Expected visits to each state from ``source`` before hitting ``t``.

    Solved over every state that can reach ``t`` (probability-one states
    included), so ``adj[s] * (Q(s, a) - V(s))`` is the one-sided rate at which
    moving choice mass to ``a`` changes ``Pr(source -> t)`` even where the
    value is flat at one.
    """
    n = matrix.shape[0]
    matrix = sp.csr_matrix(matrix)
    mask = backward_closure(matrix, t)
    mask[t] = False
    adj = np.zeros(n)
    if not mask[source]:
        return adj
    idx = np.flatnonzero(mask)
    system = (sp.identity(idx.size, format="csc") - matrix[idx][:, idx]).tocsc()
    rhs = np.zeros(idx.size)
    rhs[np.searchsorted(idx, source)] = 1.0
    try:
        adj[idx] = spla.splu(system).solve(rhs, trans="T")
    except RuntimeError as exc:
        raise SingularSystemError(str(exc)) from exc
    return adj


def reach_probability(d: Dtmc, t: int) -> ReachValues:
    """Probability of eventually reaching ``t`` from every state of ``d``."""
    if not 0 <= t < d.n_states:
        raise ModelError(f"unknown state id {t}")
    values = solve_reach(d.matrix, t)
    residual = bellman_residual(d.matrix, t, values)
    if residual > BELLMAN_TOL:
        raise SingularSystemError(f"Bellman residual {residual:.3g} after exact solve")
    return ReachValues(values, residual)


def value_iteration(
    d: Dtmc, t: int, tol: float = 1e-10, max_sweeps: int = 10**6
) -> ReachValues:
    """Reachability by iterating ``p <- T p`` from below until the update is ``< tol``."""
    mat = d.matrix
    mask = backward_closure(mat, t)
    p = np.zeros(d.n_states)
    p[t] = 1.0
    for _ in range(max_sweeps):
        new = mat @ p
        new[t] = 1.0
        new[~mask] = 0.0
        delta = np.max(np.abs(new - p))
        p = new
        if delta < tol:
            break
    return ReachValues(p, bellman_residual(mat, t, p))


def min_reach_probability(
    mdp: Mdp,
    t: int,
    fixed: Mapping[int, Distribution] | None = None,
    tol: float = 1e-10,
    max_sweeps: int = 10**6,
) -> tuple[float, Strategy]:
    """Minimum over all strategies of the probability to reach ``t`` from ``s0``.

    ``fixed`` pins the choice distribution of some states (e.g. states the
    user does not control). Returns the value together with a witnessing
    strategy that is deterministic on all free states.
    """
    if not 0 <= t < mdp.n_states:
        raise ModelError(f"unknown state id {t}")
    fixed = dict(fixed or {})
    n = mdp.n_states
    R = mdp.pair_matrix
    starts = mdp.state_offsets[:-1]

    # weights for pinned rows; free rows are minimized over
    free = np.ones(n, dtype=bool)
    weights = np.zeros(len(mdp.pairs))
    for s, dist in fixed.items():
        free[s] = False
        for a, p in dist.support:
            weights[mdp.pair_index[(s, a)]] = p

    # least fixpoint of states that reach t with positive probability under
    # every strategy; the rest can avoid t and have minimum value 0
    positive = np.zeros(n, dtype=bool)
    positive[t] = True
    while True:
        hits = (R @ positive.astype(float)) > 0
        new = positive.copy()
        for s in np.flatnonzero(~positive):
            rows = slice(mdp.state_offsets[s], mdp.state_offsets[s + 1])
            if free[s]:
                new[s] = bool(np.all(hits[rows]))
            else:
                new[s] = bool(np.any(hits[rows] & (weights[rows] > 0)))
        if np.array_equal(new, positive):
            break
        positive = new

    p = np.zeros(n)
    p[t] = 1.0
    for _ in range(max_sweeps):
        q = R @ p
        best = np.minimum.reduceat(q, starts)
        pinned = np.add.reduceat(q * weights, starts)
        new = np.where(free, best, pinned)
        new[t] = 1.0
        new[~positive] = 0.0
        delta = np.max(np.abs(new - p))
        p = new
        if delta < tol:
            break

    q = R @ p
    choices = []
    for s in range(n):
        if not free[s]:
            choices.append(fixed[s])
            continue
        acts = mdp.enabled(s)
        vals = q[mdp.state_offsets[s] : mdp.state_offsets[s + 1]]
        if not positive[s]:
            # stay inside the zero region
            hits = (R @ positive.astype(float))[mdp.state_offsets[s] : mdp.state_offsets[s + 1]]
            choices.append(Distribution.dirac(acts[int(np.argmin(hits > 0))]))
            continue
        lo = vals.min()
        pick = next(a for a, v in zip(acts, vals) if v <= lo + 1e-12)
        choices.append(Distribution.dirac(pick))
    witness = Strategy(tuple(choices))
    exact = solve_reach(induced_matrix(mdp, witness.to_vector(mdp)), t)
    return float(exact[mdp.initial]), witness
