"""Brute-force grid oracle for counterfactual strategies.

Every changeable decision state that can influence the reachability value
gets its choice distribution enumerated on a regular probability grid (plus
its original distribution). All combinations are evaluated exactly.

One state -- the one with the largest grid -- is swept in closed form: with
every other row fixed, the probability of reaching the target from that
state is ``sum_a x_a R_a / (1 - sum_a x_a S_a)``, where ``R_a`` is the
probability of hitting the target before returning and ``S_a`` the
probability of returning first. The remaining combinations are solved in
batches with dense linear algebra.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb, prod

import numpy as np

from .mdp_core import (
    CHANGE_TOL,
    DistanceBreakdown,
    Distribution,
    Strategy,
    induced_matrix,
    strategy_distance,
)
from .reachability import backward_closure, reach_set, solve_reach

#: Maximum number of enumerated (non-swept) grid combinations.
MAX_GRID_POINTS = 10**7
#: Maximum number of grid points overall, the swept state included.
MAX_TOTAL_POINTS = 2 * 10**8
#: Slack on ``p_s0 <= gamma`` when judging grid points.
FEASIBILITY_TOL = 1e-12

_BATCH = 20000
_BATCH_ELEMENTS = 2 * 10**6


class GridTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class OracleResult:
    feasible: bool
    strategy: Strategy | None
    distance: DistanceBreakdown | None
    reach_value: float | None
    points: int

    @property
    def combined(self) -> float:
        return self.distance.combined if self.distance is not None else float("inf")


def simplex_grid(k: int, step: float) -> np.ndarray:
    """All points of the ``k``-simplex whose coordinates are multiples of ``step``."""
    m = int(round(1.0 / step))
    if abs(m * step - 1.0) > 1e-9:
        raise ValueError(f"1/step must be an integer, got step={step}")
    rows = []
    # stars and bars: choose k-1 divider positions among m+k-1 slots
    for bars in combinations(range(m + k - 1), k - 1):
        cuts = (-1, *bars, m + k - 1)
        rows.append([cuts[i + 1] - cuts[i] - 1 for i in range(k)])
    return np.array(rows, dtype=float) / m


def grid_size(k: int, step: float) -> int:
    m = int(round(1.0 / step))
    return comb(m + k - 1, k - 1)


def relevant_states(q) -> list[int]:
    """Changeable decision states whose choice can affect ``Pr(s0 -> t)``."""
    mdp, t = q.mdp, q.target
    reach = reach_set(mdp, t).reach_set
    graph = induced_matrix(mdp, np.ones(len(mdp.pairs)))
    forward = backward_closure(graph.T.tocsr(), mdp.initial)
    return [s for s in mdp.free_states if s in reach and s != t and forward[s]]


def _candidates(q, s: int, step: float) -> np.ndarray:
    acts = q.mdp.enabled(s)
    grid = simplex_grid(len(acts), step)
    ref = np.array([q.initial[s][a] for a in acts])
    same = np.all(np.abs(grid - ref) < 1e-12, axis=1)
    if np.any(same):
        grid[same] = ref  # keep sigma's row exact so its distance is exactly zero
        return grid
    return np.vstack([ref, grid])


def grid_oracle(q, step: float = 0.05, max_points: int = MAX_GRID_POINTS,
                max_total: int = MAX_TOTAL_POINTS) -> OracleResult:
    """Minimum-distance feasible strategy over the probability grid.

    ``q`` is a :class:`~cfstrat.encoding.SynthesisQuery`. Raises
    :class:`GridTooLarge` when the number of enumerated combinations would
    exceed ``max_points``.
    """
    mdp, t, sigma, cfg = q.mdp, q.target, q.initial, q.distances
    s0 = mdp.initial
    n_dec = len(mdp.decision_states)
    states = relevant_states(q)
    cands = {s: _candidates(q, s, step) for s in states}
    deltas = {s: 0.5 * np.abs(cands[s] - np.array([sigma[s][a] for a in mdp.enabled(s)])).sum(1)
              for s in states}

    if not states:
        value = solve_reach(induced_matrix(mdp, sigma.to_vector(mdp)), t)[s0]
        if value <= q.gamma + FEASIBILITY_TOL:
            return OracleResult(True, sigma, strategy_distance(mdp, sigma, sigma, cfg), value, 1)
        return OracleResult(False, None, None, None, 1)

    inner = max(states, key=lambda s: (len(cands[s]), -s))
    outer = [s for s in states if s != inner]
    sizes = [len(cands[s]) for s in outer]
    n_outer = prod(sizes)
    if n_outer > max_points:
        raise GridTooLarge(f"{n_outer} grid combinations exceed the limit {max_points}")
    if n_outer * len(cands[inner]) > max_total:
        raise GridTooLarge(f"{n_outer * len(cands[inner])} grid points exceed the limit {max_total}")
    batch = max(1, min(_BATCH, _BATCH_ELEMENTS // len(cands[inner])))

    base = induced_matrix(mdp, sigma.to_vector(mdp)).toarray()
    reach = reach_set(mdp, t).reach_set
    K = [s for s in range(mdp.n_states) if s in reach and s not in (t, inner)]
    pos = {s: i for i, s in enumerate(K)}
    nK = len(K)
    A0 = base[np.ix_(K, K)]
    bt0 = base[K, t]
    bs0 = base[K, inner]
    # rows of outer states for every candidate, restricted to K / t / inner
    rows = {}
    for s in outer:
        R = mdp.pair_matrix[mdp.state_offsets[s] : mdp.state_offsets[s + 1]].toarray()
        full = cands[s] @ R
        rows[s] = (full[:, K], full[:, t], full[:, inner])
    Rin = mdp.pair_matrix[mdp.state_offsets[inner] : mdp.state_offsets[inner + 1]].toarray()
    Gin = cands[inner]
    din = deltas[inner]
    ch_in = din > CHANGE_TOL

    best = (np.inf, None, None)
    eye = np.eye(nK)
    for start in range(0, n_outer, batch):
        idx = np.arange(start, min(start + batch, n_outer))
        B = idx.size
        digits = np.unravel_index(idx, sizes) if sizes else ()
        A = np.broadcast_to(A0, (B, nK, nK)).copy()
        bt = np.broadcast_to(bt0, (B, nK)).copy()
        bs = np.broadcast_to(bs0, (B, nK)).copy()
        d0o = np.zeros(B)
        sumo = np.zeros(B)
        maxo = np.zeros(B)
        for s, dig in zip(outer, digits):
            rK, rt, rs = rows[s]
            i = pos[s]
            A[:, i, :] = rK[dig]
            bt[:, i] = rt[dig]
            bs[:, i] = rs[dig]
            dv = deltas[s][dig]
            d0o += dv > CHANGE_TOL
            sumo += dv
            maxo = np.maximum(maxo, dv)

        # drop transient states that cannot reach t or the swept state
        live = (bt + bs) > 0
        edge = A > 0
        for _ in range(nK):
            grown = live | np.any(edge & live[:, None, :], axis=2)
            if np.array_equal(grown, live):
                break
            live = grown
        A[~live] = 0.0
        bt[~live] = 0.0
        bs[~live] = 0.0
        sol = np.linalg.solve(eye - A, np.stack([bt, bs], axis=2))
        ft, fs = sol[:, :, 0], sol[:, :, 1]

        # hit-t-first / return-first probabilities after each inner action
        vt = np.zeros((B, mdp.n_states))
        vs = np.zeros((B, mdp.n_states))
        vt[:, K] = ft
        vs[:, K] = fs
        vt[:, t] = 1.0
        vs[:, inner] = 1.0
        Ra = vt @ Rin.T
        Sa = vs @ Rin.T
        num = Ra @ Gin.T
        den = 1.0 - Sa @ Gin.T
        p_in = np.where(den > 1e-12, num / np.where(den > 1e-12, den, 1.0), 0.0)
        p_in = np.clip(p_in, 0.0, 1.0)
        if s0 == inner:
            p0 = p_in
        elif s0 in pos:
            p0 = ft[:, pos[s0]][:, None] + fs[:, pos[s0]][:, None] * p_in
        else:
            p0 = np.zeros_like(p_in)

        combined = (
            cfg.r0 * (d0o[:, None] + ch_in[None, :])
            + cfg.r1 * (sumo[:, None] + din[None, :]) / n_dec
            + cfg.rinf * np.maximum(maxo[:, None], din[None, :])
        )
        combined = np.where(p0 <= q.gamma + FEASIBILITY_TOL, combined, np.inf)
        flat = int(np.argmin(combined))
        val = combined.flat[flat]
        if val < best[0]:
            b, j = divmod(flat, Gin.shape[0])
            best = (val, idx[b], j)

    points = n_outer * len(Gin)
    if best[1] is None:
        return OracleResult(False, None, None, None, points)
    choice = {}
    digits = np.unravel_index(best[1], sizes) if sizes else ()
    for s, dig in zip(outer, digits):
        choice[s] = cands[s][int(dig)]
    choice[inner] = Gin[best[2]]
    rows_out = list(sigma.choices)
    for s, row in choice.items():
        rows_out[s] = Distribution(tuple(zip(mdp.enabled(s), row.tolist())))
    strategy = Strategy(tuple(rows_out))
    value = solve_reach(induced_matrix(mdp, strategy.to_vector(mdp)), t)[s0]
    return OracleResult(True, strategy, strategy_distance(mdp, sigma, strategy, cfg), float(value), points)
