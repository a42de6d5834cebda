"""Local solver for counterfactual strategy synthesis.

The reachability constraint is handled by solving the Bellman system
exactly for every candidate strategy, so the only free variables are the
choice probabilities of the changeable decision states. The distance is
smoothed (``d0`` by a continuation ``D/(D+mu)``, ``dinf`` by a
log-sum-exp, absolute values by ``sqrt(u^2+eta^2)``), the threshold enters
as a squared-hinge penalty, and projected gradient steps keep every row on
its simplex. Multiple deterministic starts are run and the best feasible
point wins.
"""

from __future__ import annotations

import copy
import enum
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .encoding import SynthesisQuery, build_problem, assignment_from_strategy, validate_solution
from .mdp_core import (
    CHANGE_TOL,
    DistanceBreakdown,
    Mdp,
    ModelError,
    Strategy,
    induced_matrix,
    strategy_distance,
)
from .oracle import GridTooLarge, OracleResult, grid_oracle, grid_size, relevant_states
from .reachability import min_reach_probability, reach_adjoint, solve_reach

log = logging.getLogger(__name__)

#: Slack allowed on ``p_s0 <= gamma`` for accepted solutions.
FEAS_EPS = 1e-9
#: Projected probabilities below this are set to zero.
SNAP_TOL = 1e-12
#: Models up to this many states use dense linear algebra.
DENSE_LIMIT = 400
#: Largest move of a single probability per gradient step (before projection).
MAX_STEP = 10.0
#: Changed states tried per round of backward elimination.
ELIMINATION_CANDIDATES = 8
#: Relative agreement with the grid oracle needed to claim optimality.
CERTIFY_SLACK = 0.05


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    SUBOPTIMAL = "SubOptimal"
    INFEASIBLE = "Infeasible"
    TIMEOUT = "Timeout"
    TRIVIAL = "Trivial"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class SolverConfig:
    time_limit: float = 1800.0
    starts: int = 16
    seed: int = 0
    penalty_init: float = 10.0
    penalty_growth: float = 5.0
    max_outer: int = 12
    step_tol: float = 1e-9
    constraint_tol: float = 1e-7
    sparsify: bool = True
    max_inner: int = 30
    jobs: int = 1
    certify: bool = True
    certify_max_points: int = 2 * 10**6

    def __post_init__(self):
        for name in ("time_limit", "starts", "penalty_init", "max_outer", "step_tol",
                     "constraint_tol", "max_inner", "jobs"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.penalty_growth > 1:
            raise ValueError("penalty_growth must exceed 1")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


@dataclass
class SynthesisResult:
    status: Status
    strategy: Strategy | None = None
    distance: DistanceBreakdown | None = None
    reach_value: float | None = None
    wall_time: float = 0.0
    starts_used: int = 0
    reach_before: float | None = None
    min_reach: float | None = None
    oracle_distance: float | None = None
    objective: float | None = None
    certificate: str = ""

    @property
    def feasible(self) -> bool:
        return self.status in (Status.OPTIMAL, Status.SUBOPTIMAL, Status.TRIVIAL)


# ---------------------------------------------------------------------------
# objective landscape over the free choice variables


def _dense_closure(edge: np.ndarray, seed: np.ndarray) -> np.ndarray:
    """States with a path to ``seed`` along the boolean adjacency ``edge``."""
    mask = seed.copy()
    while True:
        grown = mask | edge[:, mask].any(axis=1)
        if np.array_equal(grown, mask):
            return mask
        mask = grown


def project_simplices(y: np.ndarray, index: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Euclidean projection of every group of ``y`` onto its probability simplex.

    ``index`` is a ``(groups, width)`` array of positions into ``y`` padded
    where ``mask`` is false.
    """
    if y.size == 0:
        return y
    vals = np.where(mask, y[index], -np.inf)
    srt = -np.sort(-vals, axis=1)
    finite = np.isfinite(srt)
    css = np.cumsum(np.where(finite, srt, 0.0), axis=1) - 1.0
    j = np.arange(1, srt.shape[1] + 1)
    cond = finite & (srt - css / j > 0)
    rho = srt.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(len(rho)), rho] / (rho + 1)
    out = np.empty_like(y)
    out[index[mask]] = np.maximum(y[index[mask]] - np.repeat(theta, mask.sum(1)), 0.0)
    return out


class Landscape:
    """Objective, reachability and gradients as functions of the free choices.

    ``previous`` holds earlier diverse counterfactuals (full pair vectors);
    with ``lam > 0`` the determinant diversity term is subtracted.
    """

    def __init__(self, q: SynthesisQuery, previous: Sequence[np.ndarray] = (),
                 lam: float = 0.0, perturbation: float = 1e-4):
        mdp = q.mdp
        self.q = q
        self.mdp = mdp
        self.cfg = q.distances
        self.t = q.target
        self.s0 = mdp.initial
        self.gamma = q.gamma
        self.x0 = q.initial.to_vector(mdp)
        self.free_states = list(mdp.free_states)
        off = mdp.state_offsets
        self.free_idx = np.array(
            [k for s in self.free_states for k in range(off[s], off[s + 1])], dtype=np.int64
        )
        sizes = np.array([off[s + 1] - off[s] for s in self.free_states], dtype=np.int64)
        self.group_starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        width = int(sizes.max()) if sizes.size else 0
        self.index = np.zeros((len(sizes), width), dtype=np.int64)
        self.mask = np.zeros((len(sizes), width), dtype=bool)
        for g, (st, n) in enumerate(zip(self.group_starts, sizes)):
            self.index[g, :n] = np.arange(st, st + n)
            self.mask[g, :n] = True
        self.group_of = np.repeat(np.arange(len(sizes)), sizes)
        self.y0 = self.x0[self.free_idx]
        self.n_dec = len(mdp.decision_states)
        self.previous = [np.asarray(p)[self.free_idx] for p in previous]
        self.prev_matrix = self._pairwise_previous(previous, perturbation)
        self.lam = lam
        self.perturbation = perturbation
        self.frozen = np.zeros(0, dtype=np.int64)
        self.frozen_groups: tuple[int, ...] = ()
        self.polished: dict[bytes, np.ndarray] = {}
        self.free_state = mdp.pair_state[self.free_idx]
        self.R_free = mdp.pair_matrix[self.free_idx]
        self.dense = mdp.n_states <= DENSE_LIMIT
        if self.dense:
            self.R = mdp.pair_matrix.toarray()
            self.R_free = self.R[self.free_idx]
            self.row_starts = np.asarray(mdp.state_offsets[:-1])

    # -- helpers ------------------------------------------------------------
    def full(self, y: np.ndarray) -> np.ndarray:
        """Pair vector with ``y`` on the free rows; tiny entries are zeroed."""
        if y.size and np.any((y > 0) & (y < SNAP_TOL)):
            y = np.where(y < SNAP_TOL, 0.0, y)
            y = y / self.group_sum(y)[self.group_of]
        x = self.x0.copy()
        x[self.free_idx] = y
        return x

    def project(self, y: np.ndarray) -> np.ndarray:
        out = project_simplices(y, self.index, self.mask)
        tiny = out < SNAP_TOL
        if tiny.any():
            out[tiny] = 0.0
            out /= self.group_sum(out)[self.group_of]
        out[self.frozen] = self.y0[self.frozen]
        return out

    def with_frozen(self, groups) -> "Landscape":
        """Copy in which the given free-state groups are pinned to the initial strategy."""
        other = copy.copy(self)
        rows = [self.index[g][self.mask[g]] for g in sorted(groups)]
        other.frozen = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        other.frozen_groups = tuple(sorted(groups))
        other.polished = {}
        return other

    def group_sum(self, v: np.ndarray) -> np.ndarray:
        if v.size == 0:
            return v
        return np.add.reduceat(v, self.group_starts)

    def _pairwise_previous(self, previous, perturbation):
        k = len(previous)
        D = np.eye(k) * (1.0 + perturbation)
        for i in range(k):
            for j in range(i + 1, k):
                L = 0.5 * np.abs(np.asarray(previous[i]) - np.asarray(previous[j])).sum()
                D[i, j] = D[j, i] = 1.0 / (1.0 + L)
        return D

    # -- reachability -------------------------------------------------------
    def reach(self, y: np.ndarray, grad: bool = False):
        """``Pr(s0 -> t)`` and, optionally, its gradient in ``y``."""
        x = self.full(y)
        if self.dense:
            values, T, idx, factor = self._dense_reach(x)
        else:
            T = induced_matrix(self.mdp, x)
            values = solve_reach(T, self.t)
        p0 = float(values[self.s0])
        if not grad:
            return p0
        if self.dense:
            adj = self._dense_adjoint(T, idx, factor)
        else:
            adj = reach_adjoint(T, self.t, self.s0)
        return p0, adj[self.free_state] * (self.R_free @ values)

    def _dense_reach(self, x: np.ndarray):
        T = np.add.reduceat(x[:, None] * self.R, self.row_starts, axis=0)
        edge = T > 0
        mask = _dense_closure(edge, np.eye(len(T), dtype=bool)[self.t])
        # probability-one states cannot reach the zero region without passing t
        blocked = edge.copy()
        blocked[self.t] = False
        yes = ~_dense_closure(blocked, ~mask)
        yes[self.t] = True
        mask[self.t] = False
        idx = np.flatnonzero(mask & ~yes)
        values = np.zeros(len(T))
        values[yes] = 1.0
        factor = None
        if idx.size:
            factor = scipy.linalg.lu_factor(np.eye(idx.size) - T[np.ix_(idx, idx)], check_finite=False)
            rhs = T[np.ix_(idx, np.flatnonzero(yes))].sum(axis=1)
            values[idx] = np.clip(scipy.linalg.lu_solve(factor, rhs, check_finite=False), 0.0, 1.0)
        if idx.size < np.count_nonzero(mask):
            # the adjoint needs the system over every state that reaches t
            idx, factor = np.flatnonzero(mask), None
        return values, T, idx, factor

    def _dense_adjoint(self, T: np.ndarray, idx: np.ndarray, factor) -> np.ndarray:
        # solved over all states that reach t, so flat probability-one regions
        # still expose the rate of leaking mass towards the zero region
        adj = np.zeros(len(T))
        where = np.searchsorted(idx, self.s0)
        if where >= idx.size or idx[where] != self.s0:
            return adj
        if factor is None:
            factor = scipy.linalg.lu_factor(np.eye(idx.size) - T[np.ix_(idx, idx)], check_finite=False)
        rhs = np.zeros(idx.size)
        rhs[where] = 1.0
        adj[idx] = scipy.linalg.lu_solve(factor, rhs, trans=1, check_finite=False)
        return adj

    def values(self, y: np.ndarray) -> np.ndarray:
        """Reachability of ``t`` from every state."""
        x = self.full(y)
        if self.dense:
            return self._dense_reach(x)[0]
        return solve_reach(induced_matrix(self.mdp, x), self.t)

    def deltas(self, y: np.ndarray) -> np.ndarray:
        return np.minimum(self.group_sum(0.5 * np.abs(y - self.y0)), 1.0)

    def distance(self, y: np.ndarray) -> float:
        d = self.deltas(y)
        if d.size == 0:
            return 0.0
        cfg = self.cfg
        return (cfg.r0 * np.count_nonzero(d > CHANGE_TOL) + cfg.r1 * d.sum() / self.n_dec
                + cfg.rinf * d.max())

    def determinant(self, y: np.ndarray) -> float:
        D = self._with_candidate([0.5 * np.abs(y - p).sum() for p in self.previous])
        return float(np.linalg.det(D))

    def _with_candidate(self, dists):
        k = len(dists)
        D = np.empty((k + 1, k + 1))
        D[:k, :k] = self.prev_matrix
        v = 1.0 / (1.0 + np.asarray(dists, dtype=float))
        D[:k, k] = v
        D[k, :k] = v
        D[k, k] = 1.0 + self.perturbation
        return D

    def exact(self, y: np.ndarray) -> float:
        val = self.distance(y)
        if self.lam and self.previous:
            val -= self.lam * self.determinant(y)
        return val

    # -- smoothed objective -------------------------------------------------
    def smooth(self, y: np.ndarray, mu: float, eta: float, tau: float, rho: float):
        """Smoothed penalized objective and its gradient."""
        cfg = self.cfg
        u = y - self.y0
        root = np.sqrt(u * u + eta * eta)
        a = root - eta
        da = u / root
        delta = 0.5 * self.group_sum(a)
        g_delta = np.zeros_like(delta)
        val = 0.0
        if delta.size:
            val += cfg.r0 * np.sum(delta / (delta + mu))
            g_delta += cfg.r0 * mu / (delta + mu) ** 2
            val += cfg.r1 * delta.sum() / self.n_dec
            g_delta += cfg.r1 / self.n_dec
            if cfg.rinf:
                z = delta / tau
                top = z.max()
                w = np.exp(z - top)
                total = w.sum()
                val += cfg.rinf * tau * (top + np.log(total))
                g_delta += cfg.rinf * w / total
        grad = 0.5 * g_delta[self.group_of] * da

        p0, gp = self.reach(y, grad=True)
        excess = p0 - self.gamma
        if excess > 0:
            val += rho * excess * excess
            grad = grad + 2.0 * rho * excess * gp

        if self.lam and self.previous:
            dists, d_grads = [], []
            for prev in self.previous:
                w = y - prev
                r = np.sqrt(w * w + eta * eta)
                dists.append(0.5 * (r - eta).sum())
                d_grads.append(0.5 * w / r)
            D = self._with_candidate(dists)
            det = np.linalg.det(D)
            k = len(dists)
            cof = det * np.linalg.inv(D)  # adjugate transposed; D symmetric
            val -= self.lam * det
            for j, (L, dg) in enumerate(zip(dists, d_grads)):
                ddet_dv = 2.0 * cof[j, k]
                dv_dL = -1.0 / (1.0 + L) ** 2
                grad = grad - self.lam * ddet_dv * dv_dL * dg
        return val, grad


def reach_sensitivity(mdp: Mdp, strategy: Strategy, t: int) -> tuple[float, np.ndarray]:
    """``Pr(s0 -> t)`` and its derivative with respect to every choice probability.

    The gradient is aligned with ``mdp.pairs`` and treats each entry as an
    independent variable (no simplex coupling).
    """
    x = strategy.to_vector(mdp)
    mat = induced_matrix(mdp, x)
    values = solve_reach(mat, t)
    adj = reach_adjoint(mat, t, mdp.initial)
    grad = adj[mdp.pair_state] * (mdp.pair_matrix @ values)
    return float(values[mdp.initial]), grad


# ---------------------------------------------------------------------------
# local search


@dataclass
class StartOutcome:
    index: int
    y: np.ndarray
    objective: float
    reach: float
    timed_out: bool = False


class _Deadline:
    def __init__(self, seconds: float):
        self.end = time.perf_counter() + seconds

    def passed(self) -> bool:
        return time.perf_counter() > self.end


def _schedule(k: int, n: int, first: float, last: float) -> float:
    if n <= 1:
        return last
    return first * (last / first) ** (k / (n - 1))


def _pgd(land: Landscape, y, params, cfg: SolverConfig, deadline: _Deadline):
    """Spectral projected gradient with a nonmonotone Armijo search."""
    f, g = land.smooth(y, *params)
    history = [f]
    alpha = 1.0
    for _ in range(cfg.max_inner):
        if deadline.passed():
            break
        gmax = np.max(np.abs(g)) if g.size else 0.0
        if gmax > 0:
            alpha = min(alpha, MAX_STEP / gmax)
        d = land.project(y - alpha * g) - y
        if d.size == 0 or np.max(np.abs(d)) <= cfg.step_tol:
            break
        ref = max(history[-10:])
        slope = g @ d
        lam = 1.0
        while True:
            cand = y + lam * d
            fc, gc = land.smooth(cand, *params)
            if fc <= ref + 1e-4 * lam * slope or lam < 1e-12:
                break
            lam *= 0.5
        s_, r_ = cand - y, gc - g
        sy = s_ @ r_
        alpha = float(np.clip((s_ @ s_) / sy, 1e-10, 1e10)) if sy > 0 else 1e10
        y, f, g = cand, fc, gc
        history.append(f)
    return y


def _local(land: Landscape, y: np.ndarray, cfg: SolverConfig, deadline: _Deadline) -> np.ndarray:
    n = cfg.max_outer
    for k in range(n):
        mu = _schedule(k, n, 0.1, 1e-4)
        eta = _schedule(k, n, 1e-3, 1e-7)
        tau = _schedule(k, n, 0.05, 1e-4)
        rho = cfg.penalty_init * cfg.penalty_growth**k
        y = _pgd(land, y, (mu, eta, tau, rho), cfg, deadline)
        if deadline.passed():
            break
        viol = land.reach(y) - land.gamma
        if viol <= cfg.constraint_tol and k >= n // 2:
            break
    return y


def _bisect(feasible, lo: float = 0.0, hi: float = 1.0, iters: int = 32) -> float:
    """Smallest ``theta`` in ``[lo, hi]`` (up to bisection) with ``feasible(theta)``.

    Assumes ``feasible(hi)``.  Points whose feasibility is lost by any move
    away from ``hi`` (e.g. closed traps avoiding the target) exit after one probe.
    """
    if feasible(lo):
        return lo
    if not feasible(hi - 1e-6 * (hi - lo)):
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _gradient_repair(land: Landscape, y: np.ndarray, limit: float) -> np.ndarray:
    """Smallest step along the projected reach-gradient path that restores feasibility."""
    p, g = land.reach(y, grad=True)
    if p <= limit or not np.any(g):
        return y
    alpha = (p - limit) / (g @ g)
    cap = 1e3 / np.max(np.abs(g))
    while True:
        alpha = min(alpha, cap)
        if land.reach(land.project(y - alpha * g)) <= limit:
            break
        if alpha >= cap:
            return y
        alpha *= 2.0
    theta = _bisect(lambda th: land.reach(land.project(y - th * alpha * g)) <= limit)
    return land.project(y - theta * alpha * g)


def _finalize(land: Landscape, y: np.ndarray, witness: np.ndarray, sparsify: bool) -> np.ndarray:
    """Repair feasibility, then pull back towards the initial strategy and sparsify."""
    limit = land.gamma

    def ok(z):
        return land.reach(z) <= limit

    if not ok(y):
        y = _gradient_repair(land, y, limit)
    if not ok(y):
        theta = _bisect(lambda th: ok((1 - th) * y + th * witness))
        if theta >= 1.0:
            # every start that ends here gets the same polished witness
            key = witness.tobytes()
            if key not in land.polished:
                land.polished[key] = _polish(land, witness.copy(), sparsify)
            return land.polished[key].copy()
        y = land.project((1 - theta) * y + theta * witness)
        if not ok(y):
            y = witness.copy()
    return _polish(land, y, sparsify)


def _polish(land: Landscape, y: np.ndarray, sparsify: bool) -> np.ndarray:
    """Pull a feasible point back towards the initial strategy and sparsify it."""
    limit = land.gamma

    def ok(z):
        return land.reach(z) <= limit

    def pull_back(z):
        theta = _bisect(lambda th: ok(land.y0 + th * (z - land.y0)))
        cand = land.y0 + theta * (z - land.y0)
        if ok(cand) and land.exact(cand) <= land.exact(z):
            return cand
        return z

    y = pull_back(y)
    if sparsify:
        changed = True
        while changed:
            changed = False
            d = land.deltas(y)
            for g in np.argsort(d, kind="stable"):
                if d[g] <= CHANGE_TOL:
                    continue
                sl = land.index[g][land.mask[g]]
                cand = y.copy()
                cand[sl] = land.y0[sl]
                if ok(cand) and land.exact(cand) <= land.exact(y):
                    y = pull_back(cand)
                    changed = True
                    break
    # pull each changed row towards sigma on its own, and towards sigma
    # renormalized on the row's support (zeros often carry the feasibility)
    for _ in range(3):
        moved = False
        d = land.deltas(y)
        for g in np.argsort(-d, kind="stable"):
            if d[g] <= CHANGE_TOL:
                continue
            sl = land.index[g][land.mask[g]]
            anchors = [land.y0[sl]]
            kept = np.where(y[sl] > 0, land.y0[sl], 0.0)
            if 0 < kept.sum() < 1:
                anchors.append(kept / kept.sum())
            for anchor in anchors:
                row = y[sl].copy()

                def at(th, sl=sl, row=row, anchor=anchor):
                    z = y.copy()
                    z[sl] = anchor + th * (row - anchor)
                    return z

                theta = _bisect(lambda th: ok(at(th)))
                cand = at(theta)
                if theta < 1.0 and ok(cand) and land.exact(cand) < land.exact(y) - 1e-12:
                    y = cand
                    moved = True
        if not moved:
            break
    # rows moved by less than the change tolerance go back to sigma exactly
    d = land.deltas(y)
    for g in np.flatnonzero((d > 0) & (d <= CHANGE_TOL)):
        sl = land.index[g][land.mask[g]]
        cand = y.copy()
        cand[sl] = land.y0[sl]
        if ok(cand):
            y = cand
    return y


def start_points(land: Landscape, cfg: SolverConfig) -> list[np.ndarray]:
    """Start 0 is the initial strategy; start ``i`` draws each row from Dirichlet(1)."""
    points = [land.y0.copy()]
    for i in range(1, cfg.starts):
        y = np.empty_like(land.y0)
        for g, s in enumerate(land.free_states):
            sl = land.index[g][land.mask[g]]
            rng = np.random.default_rng([cfg.seed, i, s])
            y[sl] = rng.dirichlet(np.ones(sl.size))
        points.append(y)
    return points


def optimize(land: Landscape, cfg: SolverConfig, witness: Strategy,
             deadline: _Deadline | None = None) -> tuple[StartOutcome | None, int]:
    """Run all starts and return the best finalized point and the number of starts run."""
    deadline = deadline or _Deadline(cfg.time_limit)
    w = witness.to_vector(land.mdp)[land.free_idx]
    points = start_points(land, cfg)

    def run(i):
        if deadline.passed():
            return None
        y = _local(land, points[i], cfg, deadline)
        y = _finalize(land, y, w, cfg.sparsify)
        return StartOutcome(i, y, land.exact(y), land.reach(y), deadline.passed())

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(run, range(len(points))))
    else:
        outcomes = [run(i) for i in range(len(points))]
    done = [o for o in outcomes if o is not None]
    best = _best(done, land.gamma)
    if best is not None and cfg.sparsify:
        best = _eliminate(land, best, cfg, w, deadline)
    if not deadline.passed():
        greedy = _greedy_start(land, cfg, len(points), deadline)
        if greedy is not None:
            best = _best([o for o in (best, greedy) if o is not None], land.gamma)
    return best, len(done)


def _best(outcomes: Sequence[StartOutcome], gamma: float) -> StartOutcome | None:
    """Lowest objective among feasible outcomes; ties go to the earlier start."""
    best = None
    for o in outcomes:
        if o.reach <= gamma + FEAS_EPS and (best is None or o.objective < best.objective):
            best = o
    return best


def _greedy_support(land: Landscape, deadline: _Deadline) -> tuple[np.ndarray, list[int]] | None:
    """Switch whole rows to a single action, one state at a time, always taking
    the switch that lowers the reachability most (ties go to the smaller row
    change), until the limit holds. Every action is tried, not just the one
    with the best Q-value, so self-loop traps are found. Returns the point and
    the switched groups."""
    y = land.y0.copy()
    chosen: list[int] = []
    free = [g for g in range(len(land.free_states)) if g not in set(land.frozen_groups)]
    while land.reach(y) > land.gamma:
        if deadline.passed() or len(chosen) == len(free):
            return None
        best = None
        for g in free:
            if g in chosen:
                continue
            sl = land.index[g][land.mask[g]]
            for k in sl:
                cand = y.copy()
                cand[sl] = 0.0
                cand[k] = 1.0
                key = (land.reach(cand), 0.5 * np.abs(cand[sl] - land.y0[sl]).sum())
                if best is None or key[0] < best[0][0] - 1e-15 or (
                        key[0] <= best[0][0] + 1e-15 and key[1] < best[0][1]):
                    best = (key, g, cand)
        chosen.append(best[1])
        y = best[2]
    return y, chosen


def _greedy_start(land: Landscape, cfg: SolverConfig, index: int,
                  deadline: _Deadline) -> StartOutcome | None:
    """Local search restricted to the states picked by :func:`_greedy_support`."""
    found = _greedy_support(land, deadline)
    if found is None:
        return None
    y, chosen = found
    keep = set(chosen)
    sub = land.with_frozen(set(range(len(land.free_states))) - keep)
    z = _finalize(sub, _local(sub, y, cfg, deadline), y, cfg.sparsify)
    return StartOutcome(index, z, land.exact(z), land.reach(z), deadline.passed())


def _eliminate(land: Landscape, best: StartOutcome, cfg: SolverConfig, w: np.ndarray,
               deadline: _Deadline) -> StartOutcome:
    """Backward elimination: pin one changed state back to its original choice,
    re-optimize the others and keep the result when it is feasible and better."""
    frozen: set[int] = set()
    improved = True
    while improved and not deadline.passed():
        improved = False
        d = land.deltas(best.y)
        order = [int(g) for g in np.argsort(d, kind="stable") if d[g] > CHANGE_TOL]
        for g in order[:ELIMINATION_CANDIDATES]:
            if deadline.passed():
                break
            sub = land.with_frozen(frozen | {g})
            y = _local(sub, sub.project(best.y), cfg, deadline)
            y = _finalize(sub, y, sub.project(w), cfg.sparsify)
            reach = sub.reach(y)
            value = sub.exact(y)
            if reach <= land.gamma + FEAS_EPS and value < best.objective - 1e-12:
                best = StartOutcome(best.index, y, value, reach, deadline.passed())
                frozen.add(g)
                improved = True
                break
    return best


# ---------------------------------------------------------------------------
# public entry points


def _certify_oracle(q: SynthesisQuery, cfg: SolverConfig) -> OracleResult | None:
    if not cfg.certify:
        return None
    states = relevant_states(q)
    if not states:
        return None
    sizes = sorted((grid_size(len(q.mdp.enabled(s)), 0.01) + 1 for s in states), reverse=True)
    enumerated = int(np.prod(sizes[1:], dtype=float))
    if enumerated > cfg.certify_max_points:
        return None
    try:
        return grid_oracle(q, 0.01, max_points=cfg.certify_max_points)
    except GridTooLarge:
        return None


def classify_status(result: SynthesisResult, oracle: OracleResult | None = None,
                    scale: float = 3.0) -> Status:
    """Map a solver outcome and optional oracle certificate to a status.

    ``scale`` is ``r0 + r1 + rinf``; the oracle must agree within
    ``0.05 * scale`` for an optimality claim.
    """
    if result.status in (Status.TRIVIAL, Status.TIMEOUT):
        return result.status
    if result.strategy is None:
        return Status.INFEASIBLE if result.status == Status.INFEASIBLE else Status.TIMEOUT
    if result.distance is not None and result.distance.combined <= 1e-12:
        return Status.OPTIMAL
    if oracle is not None and oracle.feasible:
        if result.distance.combined <= oracle.combined + CERTIFY_SLACK * scale:
            return Status.OPTIMAL
    return Status.SUBOPTIMAL


def _prechecks(q: SynthesisQuery, cfg: SolverConfig, started: float):
    """Trivial / infeasible short-circuits shared by every synthesis mode."""
    mdp = q.mdp
    before = q.initial_reach
    if before <= q.gamma:
        dist = strategy_distance(mdp, q.initial, q.initial, q.distances)
        return SynthesisResult(Status.TRIVIAL, q.initial, dist, before,
                               time.perf_counter() - started, 0, before,
                               objective=0.0, certificate="initial strategy satisfies the limit"), None
    low, witness = min_reach_probability(mdp, q.target, fixed=q.fixed_rows())
    if low > q.gamma + FEAS_EPS:
        return SynthesisResult(Status.INFEASIBLE, None, None, None,
                               time.perf_counter() - started, 0, before, low,
                               certificate=f"minimum reachability {low:.12g} > {q.gamma}"), None
    return None, (before, low, witness)


def solve(q: SynthesisQuery, cfg: SolverConfig = SolverConfig()) -> SynthesisResult:
    """Closest strategy to ``q.initial`` whose reachability is at most ``q.gamma``."""
    started = time.perf_counter()
    build_problem(q)  # surfaces encoding errors (e.g. target is the initial state)
    early, info = _prechecks(q, cfg, started)
    if early is not None:
        return early
    before, low, witness = info
    deadline = _Deadline(cfg.time_limit - (time.perf_counter() - started))
    if deadline.passed():
        return SynthesisResult(Status.TIMEOUT, wall_time=time.perf_counter() - started,
                               reach_before=before, min_reach=low)
    land = Landscape(q)
    best, used = optimize(land, cfg, witness, deadline)
    if best is None:
        return SynthesisResult(Status.TIMEOUT, wall_time=time.perf_counter() - started,
                               starts_used=used, reach_before=before, min_reach=low)
    strategy = Strategy.from_vector(q.mdp, land.full(best.y))
    result = _result(q, strategy, best, used, before, low, started)
    oracle = _certify_oracle(q, cfg)
    if oracle is not None and oracle.feasible:
        result.oracle_distance = oracle.combined
    result.status = classify_status(result, oracle, q.distances.total)
    result.wall_time = time.perf_counter() - started
    return result


def _result(q, strategy, best, used, before, low, started) -> SynthesisResult:
    dist = strategy_distance(q.mdp, q.initial, strategy, q.distances)
    reach = solve_reach(induced_matrix(q.mdp, strategy.to_vector(q.mdp)), q.target)[q.mdp.initial]
    return SynthesisResult(Status.SUBOPTIMAL, strategy, dist, float(reach),
                           time.perf_counter() - started, used, before, low,
                           objective=best.objective)


def solve_epsilon(q: SynthesisQuery, cfg: SolverConfig = SolverConfig()) -> SynthesisResult:
    """Any strategy with reachability at most ``gamma`` and distance at most ``epsilon``."""
    if q.epsilon is None:
        raise ModelError("solve_epsilon needs a query with epsilon set")
    started = time.perf_counter()
    build_problem(q)
    early, info = _prechecks(q, cfg, started)
    if early is not None:
        return early
    before, low, witness = info
    deadline = _Deadline(cfg.time_limit - (time.perf_counter() - started))
    land = Landscape(q)
    best, used = optimize(land, cfg, witness, deadline)
    if best is not None and best.objective <= q.epsilon + 1e-12:
        strategy = Strategy.from_vector(q.mdp, land.full(best.y))
        result = _result(q, strategy, best, used, before, low, started)
        result.certificate = "local search"
        return result
    oracle = _certify_oracle(replace_query(q, epsilon=None), cfg)
    if oracle is not None and oracle.feasible and oracle.combined <= q.epsilon + 1e-12:
        result = SynthesisResult(Status.SUBOPTIMAL, oracle.strategy, oracle.distance,
                                 oracle.reach_value, time.perf_counter() - started, used,
                                 before, low, oracle.combined, oracle.combined,
                                 certificate="grid oracle")
        return result
    if best is None and deadline.passed():
        return SynthesisResult(Status.TIMEOUT, wall_time=time.perf_counter() - started,
                               starts_used=used, reach_before=before, min_reach=low)
    how = "grid oracle (step 0.01) and local search" if oracle is not None else "local search"
    return SynthesisResult(
        Status.INFEASIBLE, None, None, None, time.perf_counter() - started, used, before, low,
        oracle.combined if oracle is not None and oracle.feasible else None,
        certificate=f"no strategy within distance {q.epsilon} found by {how}",
    )


def replace_query(q: SynthesisQuery, **changes) -> SynthesisQuery:
    fields = dict(mdp=q.mdp, initial=q.initial, target=q.target, gamma=q.gamma,
                  distances=q.distances, epsilon=q.epsilon)
    fields.update(changes)
    return SynthesisQuery(**fields)


def solution_report(q: SynthesisQuery, result: SynthesisResult):
    """Validate a feasible result against the explicit encoding."""
    problem = build_problem(q)
    return validate_solution(problem, assignment_from_strategy(problem, result.strategy))
