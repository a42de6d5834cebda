import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cfstrat.mdp_core import (
    CHANGE_TOL,
    DistanceBreakdown,
    DistanceConfig,
    Distribution,
    Dtmc,
    Mdp,
    ModelError,
    Strategy,
    distance_vector,
    induce_dtmc,
    strategy_distance,
    tv_distance,
    validate_strategy,
)
from cfstrat.models import random_interior_strategy, random_mdp


def test_distribution_renormalizes_within_tolerance():
    d = Distribution(((0, 0.5), (1, 0.5 + 5e-10)))
    assert sum(p for _, p in d.support) == pytest.approx(1.0, abs=1e-15)


def test_distribution_rejects_bad_mass():
    with pytest.raises(ModelError):
        Distribution(((0, 0.5), (1, 0.49)))
    with pytest.raises(ModelError):
        Distribution(((0, 1.5), (1, -0.5)))
    with pytest.raises(ModelError):
        Distribution(())


def test_distribution_drops_zero_entries():
    d = Distribution.of({3: 1.0, 1: 0.0})
    assert d.items() == (3,)
    assert d[1] == 0.0


def test_tv_distance_examples():
    a = Distribution.of({0: 0.7, 1: 0.3})
    b = Distribution.of({0: 0.14, 1: 0.86})
    assert tv_distance(a, b) == pytest.approx(0.56)
    assert tv_distance(a, a) == 0.0
    assert tv_distance(Distribution.dirac(0), Distribution.dirac(1)) == 1.0


@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=5),
       st.lists(st.floats(0.01, 1.0), min_size=2, max_size=5))
def test_tv_distance_bounds_and_symmetry(p, q):
    k = min(len(p), len(q))
    a = Distribution(tuple(zip(range(k), np.array(p[:k]) / sum(p[:k]))))
    b = Distribution(tuple(zip(range(k), np.array(q[:k]) / sum(q[:k]))))
    d = tv_distance(a, b)
    assert 0.0 <= d <= 1.0
    assert d == pytest.approx(tv_distance(b, a))


def test_loan_structure(loan):
    assert loan.n_states == 9
    assert loan.decision_states == (0, 2, 3, 5)
    assert loan.enabled(0) == (0, 1)
    assert loan.prob(0, 0, 1) == pytest.approx(0.95)


def test_mdp_rejects_state_without_actions():
    with pytest.raises(ModelError, match="without enabled actions"):
        Mdp(("a", "b"), ("x",), 0, {(0, 0): Distribution.dirac(1)})


def test_mdp_rejects_unknown_successor():
    with pytest.raises(ModelError):
        Mdp(("a",), ("x",), 0, {(0, 0): Distribution.dirac(4)})


def test_mdp_json_round_trip(loan):
    data = json.loads(json.dumps(loan.to_dict()))
    again = Mdp.from_dict(data)
    assert again.to_dict() == loan.to_dict()
    assert again.fingerprint == loan.fingerprint


def test_mdp_from_dict_requires_dense_ids(loan):
    data = loan.to_dict()
    data["states"][0]["id"] = 42
    with pytest.raises(ModelError, match="ids"):
        Mdp.from_dict(data)


def test_strategy_round_trip(loan, sigma):
    again = Strategy.from_dict(loan, json.loads(json.dumps(sigma.to_dict())))
    assert again == sigma
    assert np.allclose(Strategy.from_vector(loan, sigma.to_vector(loan)).to_vector(loan),
                       sigma.to_vector(loan))


def test_strategy_from_mapping_fills_single_action_states(loan, sigma):
    assert sigma[1].as_dict() == {4: 1.0}
    with pytest.raises(ModelError, match="decision state"):
        Strategy.from_mapping(loan, {0: {0: 1.0}})


def test_validate_strategy_reports_problems(loan, sigma):
    assert validate_strategy(loan, sigma) == []
    raw = {s: d.as_dict() for s, d in enumerate(sigma.choices)}
    raw[5] = {2: 0.7, 3: 0.2}
    raw[0] = {0: 0.5, 4: 0.5}
    problems = validate_strategy(loan, raw)
    assert any("sum to" in p for p in problems)
    assert any("disabled" in p for p in problems)


def test_dtmc_rejects_non_stochastic_rows():
    with pytest.raises(ModelError):
        Dtmc(np.array([[0.5, 0.4], [0.0, 1.0]]), 0)


def test_induced_rows_are_stochastic(loan, sigma):
    d = induce_dtmc(loan, sigma)
    assert np.allclose(np.asarray(d.matrix.sum(axis=1)).ravel(), 1.0)
    # s0 applies with probability one
    assert d.matrix[0, 1] == pytest.approx(0.95)
    assert d.matrix[0, 2] == pytest.approx(0.05)


def test_distance_goldens(loan, sigma, sigma_star):
    dist = strategy_distance(loan, sigma, sigma_star)
    assert dist.d0 == 1
    assert dist.d1 == pytest.approx(0.14, abs=1e-9)
    assert dist.dinf == pytest.approx(0.56, abs=1e-9)
    assert dist.combined == pytest.approx(1.70, abs=1e-9)


def test_distance_change_tolerance():
    d = DistanceBreakdown.from_vector([CHANGE_TOL / 2, 0.3], DistanceConfig())
    assert d.d0 == 1


def test_distance_config_validation():
    with pytest.raises(ModelError):
        DistanceConfig(-1, 1, 1)
    with pytest.raises(ModelError):
        DistanceConfig(0, 0, 0)


@given(st.integers(0, 10_000))
def test_distance_is_metric_on_random_strategies(seed):
    rng = np.random.default_rng(seed)
    m = random_mdp(rng, 6)
    a, b, c = (random_interior_strategy(m, rng) for _ in range(3))
    dab, dbc, dac = (distance_vector(m, x, y) for x, y in ((a, b), (b, c), (a, c)))
    assert np.all(dab >= 0) and np.all(dab <= 1)
    assert np.all(dac <= dab + dbc + 1e-12)
    assert np.allclose(distance_vector(m, a, a), 0.0)
