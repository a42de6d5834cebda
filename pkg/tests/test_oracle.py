import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfstrat.encoding import SynthesisQuery
from cfstrat.mdp_core import DistanceConfig, Distribution, Strategy, strategy_distance
from cfstrat.models import random_interior_strategy, random_mdp
from cfstrat.oracle import GridTooLarge, grid_oracle, grid_size, relevant_states, simplex_grid
from tests.conftest import REJECTED
from tests.oracles import dense_matrix, dense_reach


def test_simplex_grid_points():
    g = simplex_grid(3, 0.25)
    assert len(g) == comb(6, 2) == grid_size(3, 0.25)
    assert np.allclose(g.sum(axis=1), 1.0)
    assert len({tuple(r) for r in g}) == len(g)
    with pytest.raises(ValueError):
        simplex_grid(2, 0.3)


def test_relevant_states_running_example(loan, sigma):
    q = SynthesisQuery(loan, sigma, REJECTED, 0.2)
    assert relevant_states(q) == [0, 2, 3, 5]


def test_gamma_one_returns_sigma(loan, sigma):
    r = grid_oracle(SynthesisQuery(loan, sigma, REJECTED, 1.0), 0.05)
    assert r.feasible and r.combined == 0.0


def test_below_min_reach_is_infeasible(loan, sigma):
    r = grid_oracle(SynthesisQuery(loan, sigma, REJECTED, 0.01), 0.05)
    assert not r.feasible and r.strategy is None


def test_running_example_coarse(loan, sigma):
    r = grid_oracle(SynthesisQuery(loan, sigma, REJECTED, 0.2), 0.02)
    assert r.feasible
    assert r.reach_value <= 0.2 + 1e-12
    assert 1.6 <= r.combined <= 1.70 + 1e-9
    # only Rework moves
    assert r.distance.d0 == 1 and r.distance.per_state[3] > 0.5


def test_grid_cap(loan, sigma):
    with pytest.raises(GridTooLarge):
        grid_oracle(SynthesisQuery(loan, sigma, REJECTED, 0.2), 0.01, max_points=100)


def _brute(q, step):
    """Plain enumeration with a dense solve per grid point."""
    m, sigma = q.mdp, q.initial
    free = list(m.free_states)
    grids = []
    for s in free:
        acts = m.enabled(s)
        ref = [sigma[s][a] for a in acts]
        grids.append([ref] + simplex_grid(len(acts), step).tolist())
    best = None
    for combo in itertools.product(*grids):
        rows = list(sigma.choices)
        for s, probs in zip(free, combo):
            rows[s] = Distribution(tuple(zip(m.enabled(s), probs)))
        cand = Strategy(tuple(rows))
        p = dense_reach(dense_matrix(m, cand), q.target)[m.initial]
        if p <= q.gamma + 1e-12:
            d = strategy_distance(m, sigma, cand, q.distances).combined
            best = d if best is None else min(best, d)
    return best


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_matches_plain_enumeration(seed, gamma):
    rng = np.random.default_rng(seed)
    m = random_mdp(rng, int(rng.integers(2, 6)), max_decision_states=3, absorbing=2)
    q = SynthesisQuery(m, random_interior_strategy(m, rng), m.n_states - 1, gamma,
                       DistanceConfig(1, 1, 1))
    r = grid_oracle(q, 0.1)
    expect = _brute(q, 0.1)
    if expect is None:
        assert not r.feasible
    else:
        assert r.feasible
        assert r.combined == pytest.approx(expect, abs=1e-9)
        assert dense_reach(dense_matrix(m, r.strategy), q.target)[m.initial] <= gamma + 1e-9
