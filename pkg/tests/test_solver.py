import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfstrat.encoding import SynthesisQuery
from cfstrat.mdp_core import DistanceBreakdown, DistanceConfig, Strategy
from cfstrat.models import random_interior_strategy, random_mdp
from cfstrat.oracle import grid_oracle
from cfstrat.reachability import min_reach_probability
from cfstrat.solver import (
    Landscape,
    SolverConfig,
    Status,
    SynthesisResult,
    classify_status,
    project_simplices,
    reach_sensitivity,
    solution_report,
    solve,
    solve_epsilon,
)
from tests.conftest import REJECTED
from tests.oracles import dense_matrix, dense_reach

FAST = SolverConfig(starts=4, certify=False)


@pytest.fixture(scope="module")
def golden(loan, sigma):
    q = SynthesisQuery(loan, sigma, REJECTED, 0.2)
    return q, solve(q)


def test_golden_changes_only_rework(golden):
    q, r = golden
    assert r.status == Status.OPTIMAL
    assert r.reach_value <= 0.2 + 1e-7
    assert r.distance.combined <= 1.70 + 1e-3
    assert r.distance.d0 == 1
    assert 0.51 <= r.distance.per_state[3] <= 0.56
    assert solution_report(q, r).ok


def test_golden_beats_oracle_within_slack(golden):
    q, r = golden
    assert r.oracle_distance is not None
    assert r.distance.combined <= r.oracle_distance + 0.05 * 3


def test_infeasible_and_trivial(loan, sigma):
    r = solve(SynthesisQuery(loan, sigma, REJECTED, 0.0001), FAST)
    assert r.status == Status.INFEASIBLE and r.strategy is None
    assert r.min_reach == pytest.approx(0.02) and "0.02" in r.certificate
    r = solve(SynthesisQuery(loan, sigma, REJECTED, 0.45), FAST)
    assert r.status == Status.TRIVIAL
    assert r.distance.combined == 0.0 and r.strategy == sigma


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(penalty_growth=1.0)
    with pytest.raises(ValueError):
        SolverConfig(starts=0)


def test_deterministic_and_thread_independent(loan, sigma):
    q = SynthesisQuery(loan, sigma, REJECTED, 0.1)
    a = solve(q, FAST)
    b = solve(q, FAST)
    c = solve(q, SolverConfig(starts=4, certify=False, jobs=3))
    assert a.strategy == b.strategy == c.strategy
    assert a.distance == b.distance == c.distance


def test_timeout_without_feasible_point(loan, sigma):
    r = solve(SynthesisQuery(loan, sigma, REJECTED, 0.2), SolverConfig(time_limit=1e-9))
    assert r.status == Status.TIMEOUT and r.strategy is None


def test_epsilon_mode(loan, sigma):
    dinf = DistanceConfig(0, 0, 1)
    ok = solve_epsilon(SynthesisQuery(loan, sigma, REJECTED, 0.2, dinf, epsilon=0.56), FAST)
    assert ok.feasible and ok.distance.combined <= 0.56 and ok.reach_value <= 0.2 + 1e-7
    wide = solve_epsilon(SynthesisQuery(loan, sigma, REJECTED, 0.2, epsilon=1.0 + 2.0), FAST)
    assert wide.feasible
    no = solve_epsilon(SynthesisQuery(loan, sigma, REJECTED, 0.2, dinf, epsilon=0.50), FAST)
    assert no.status == Status.INFEASIBLE


def test_classify_status():
    base = dict(strategy=Strategy(()), reach_value=0.1)
    dist = DistanceBreakdown.from_vector([0.3], DistanceConfig())
    r = SynthesisResult(Status.SUBOPTIMAL, distance=dist, **base)
    assert classify_status(r) == Status.SUBOPTIMAL

    class Oracle:
        feasible = True
        combined = dist.combined - 0.1

    assert classify_status(r, Oracle()) == Status.OPTIMAL
    Oracle.combined = dist.combined - 0.2
    assert classify_status(r, Oracle()) == Status.SUBOPTIMAL
    zero = SynthesisResult(Status.SUBOPTIMAL, distance=DistanceBreakdown.from_vector([0.0], DistanceConfig()),
                           **base)
    assert classify_status(zero) == Status.OPTIMAL
    assert classify_status(SynthesisResult(Status.INFEASIBLE)) == Status.INFEASIBLE


@given(st.integers(0, 10_000))
def test_projection_lands_on_simplices(seed):
    rng = np.random.default_rng(seed)
    sizes = rng.integers(1, 5, size=int(rng.integers(1, 6)))
    width = int(sizes.max())
    index = np.zeros((len(sizes), width), dtype=np.int64)
    mask = np.zeros((len(sizes), width), dtype=bool)
    start = 0
    for g, k in enumerate(sizes):
        index[g, :k] = np.arange(start, start + k)
        mask[g, :k] = True
        start += k
    y = rng.normal(size=start) * 3
    x = project_simplices(y, index, mask)
    assert np.all(x >= 0)
    for g, k in enumerate(sizes):
        row = x[index[g, :k]]
        assert row.sum() == pytest.approx(1.0)
        # projection is idempotent and no farther than any other simplex point
        assert np.allclose(project_simplices(x, index, mask)[index[g, :k]], row)
        other = rng.dirichlet(np.ones(k))
        assert np.linalg.norm(y[index[g, :k]] - row) <= np.linalg.norm(y[index[g, :k]] - other) + 1e-12


def _fd_reach(m, x, t, k, h=1e-6):
    """Central difference of Pr(s0 -> t) in pair ``k``, rows left unnormalized."""
    out = []
    for sign in (1, -1):
        z = x.copy()
        z[k] += sign * h
        P = np.zeros((m.n_states, m.n_states))
        for j, (s, a) in enumerate(m.pairs):
            for s2, p in m.transitions[(s, a)].support:
                P[s, s2] += z[j] * p
        out.append(dense_reach(P, t)[m.initial])
    return (out[0] - out[1]) / (2 * h)


@settings(max_examples=15)
@given(st.integers(0, 10_000))
def test_adjoint_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    m = random_mdp(rng, int(rng.integers(2, 51)), absorbing=2)
    s = random_interior_strategy(m, rng)
    t = m.n_states - 1
    p0, g = reach_sensitivity(m, s, t)
    x = s.to_vector(m)
    assert p0 == pytest.approx(dense_reach(dense_matrix(m, s), t)[m.initial], abs=1e-9)
    for k in rng.choice(len(x), size=min(8, len(x)), replace=False):
        fd = _fd_reach(m, x, t, k)
        assert abs(fd - g[k]) <= 1e-4 * max(abs(fd), 1e-3)


@settings(max_examples=10)
@given(st.integers(0, 10_000))
def test_smoothed_objective_gradient(seed):
    rng = np.random.default_rng(seed)
    m = random_mdp(rng, int(rng.integers(3, 12)), absorbing=2)
    s = random_interior_strategy(m, rng)
    prev = [random_interior_strategy(m, rng).to_vector(m)]
    land = Landscape(SynthesisQuery(m, s, m.n_states - 1, 0.0), prev, lam=2.0)
    if not land.free_idx.size:
        return
    y = random_interior_strategy(m, rng).to_vector(m)[land.free_idx]
    params = (0.05, 1e-2, 0.1, 10.0)
    _, g = land.smooth(y, *params)
    h = 1e-6
    for _ in range(5):
        # directions tangent to the simplices, where the iterates live
        e = rng.normal(size=y.size)
        e -= (land.group_sum(e) / land.group_sum(np.ones_like(e)))[land.group_of]
        fd = (land.smooth(y + h * e, *params)[0] - land.smooth(y - h * e, *params)[0]) / (2 * h)
        assert fd == pytest.approx(g @ e, rel=1e-4, abs=1e-6)


def _small_query(seed, gamma):
    rng = np.random.default_rng(seed)
    m = random_mdp(rng, int(rng.integers(2, 6)), max_decision_states=3, absorbing=2)
    return SynthesisQuery(m, random_interior_strategy(m, rng), m.n_states - 1, gamma)


@settings(max_examples=12)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_sound_and_dominates_oracle(seed, gamma):
    q = _small_query(seed, gamma)
    r = solve(q, FAST)
    low = min_reach_probability(q.mdp, q.target)[0]
    assert (r.status == Status.INFEASIBLE) == (low > gamma + 1e-9)
    if not r.feasible:
        return
    assert dense_reach(dense_matrix(q.mdp, r.strategy), q.target)[q.mdp.initial] <= gamma + 1e-7
    assert solution_report(q, r).ok
    oracle = grid_oracle(q, 0.05)
    if oracle.feasible:
        assert r.distance.combined <= oracle.combined + 0.05 * 3


@settings(max_examples=8)
@given(st.integers(0, 10_000), st.floats(0.0, 0.9))
def test_oracle_distance_monotone_in_gamma(seed, gamma):
    q = _small_query(seed, gamma)
    lo = grid_oracle(q, 0.05)
    hi = grid_oracle(SynthesisQuery(q.mdp, q.initial, q.target, gamma + 0.1), 0.05)
    if lo.feasible:
        assert hi.feasible and hi.combined <= lo.combined + 1e-12
