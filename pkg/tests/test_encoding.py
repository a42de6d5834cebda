import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cfstrat.encoding import (
    EQ,
    INT,
    EncodingError,
    SynthesisQuery,
    assignment_from_strategy,
    build_problem,
    constraint_matrix,
    export_problem,
    hessian_eigenvalues,
    nonconvexity_report,
    parse_problem,
    validate_solution,
)
from cfstrat.mdp_core import DistanceConfig, Distribution, Mdp, ModelError, Strategy
from cfstrat.models import random_interior_strategy, random_mdp
from cfstrat.reachability import reach_set
from tests.conftest import REJECTED


@pytest.fixture(scope="module")
def problem(loan, sigma):
    return build_problem(SynthesisQuery(loan, sigma, REJECTED, 0.2))


def test_census_running_example(loan, problem):
    census = problem.census()
    assert census["simplex"] == 4
    assert census["bellman"] == 7
    assert census["threshold"] == 1
    # per decision state: 2|Act(s)| splits, one delta, one indicator, one Dinf bound
    n_acts = sum(len(loan.enabled(s)) for s in loan.decision_states)
    assert census["abs+"] + census["abs-"] == 2 * n_acts
    assert census["delta"] == census["indicator"] == census["dinf"] == 4
    assert census["d0"] == census["d1"] == 1
    threshold = next(c for c in problem.linear if c.label == "threshold")
    assert threshold.coeffs == (("p_s0", 1.0),) and threshold.rhs == 0.2


def test_variable_domains(loan, problem):
    for v in problem.variables:
        if v.role == "indicator":
            assert v.kind == INT and (v.lo, v.hi) == (0.0, 1.0)
        elif v.role == "D0":
            assert v.hi == len(loan.decision_states)
        else:
            assert (v.lo, v.hi) == (0.0, 1.0)
    choice_states = {v.state for v in problem.variables if v.role == "choice"}
    assert choice_states == set(loan.decision_states)


def test_s0_matrix_matches_printed_form(problem):
    names, Q = constraint_matrix(problem, 0)
    assert names == ["p_s0_a0", "p_s1", "p_s2", "p_s0_a1", "p_s3"]
    expected = np.zeros((5, 5))
    expected[0, 1] = expected[1, 0] = 0.95 / 2
    expected[0, 2] = expected[2, 0] = 0.05 / 2
    expected[3, 4] = expected[4, 3] = 0.5
    assert np.array_equal(Q, expected)


def test_s0_eigenvalues(problem):
    entry = next(e for e in nonconvexity_report(problem) if e.state == 0)
    r = np.sqrt(362) / 20
    assert np.allclose(sorted(entry.eigenvalues), [-1, -r, 0, r, 1], atol=1e-9)
    assert entry.nonconvex


def test_zero_matrix_has_no_flag():
    ev = hessian_eigenvalues(np.zeros((3, 3)))
    assert np.array_equal(ev, np.zeros(3))


@given(st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_two_successor_block_is_indefinite(a, b):
    # x*(a*y + b*z): Hessian eigenvalues are +-sqrt(a^2 + b^2) and 0
    Q = np.zeros((3, 3))
    Q[0, 1] = Q[1, 0] = a / 2
    Q[0, 2] = Q[2, 0] = b / 2
    ev = hessian_eigenvalues(Q)
    assert ev[0] == pytest.approx(-np.hypot(a, b))
    assert ev[-1] == pytest.approx(np.hypot(a, b))


def test_constraint_matrix_missing_state(problem):
    with pytest.raises(EncodingError):
        constraint_matrix(problem, REJECTED)


def test_target_is_initial_rejected(loan, sigma):
    with pytest.raises(EncodingError) as err:
        build_problem(SynthesisQuery(loan, sigma, 0, 0.5))
    assert err.value.code == "target-is-initial"


def test_query_validation(loan, sigma):
    with pytest.raises(ModelError):
        SynthesisQuery(loan, sigma, REJECTED, 1.5)
    with pytest.raises(ModelError):
        SynthesisQuery(loan, sigma, 42, 0.2)
    with pytest.raises(ModelError):
        SynthesisQuery(loan, sigma, REJECTED, 0.2, epsilon=0.0)


def test_no_decision_states():
    trans = {(0, 0): Distribution.of({1: 0.5, 2: 0.5}), (1, 0): Distribution.dirac(1),
             (2, 0): Distribution.dirac(2)}
    m = Mdp(("s", "a", "b"), ("x",), 0, trans)
    p = build_problem(SynthesisQuery(m, Strategy.from_mapping(m, {}), 2, 0.2))
    assert not [v for v in p.variables if v.role == "choice"]
    bellman = next(c for c in p.quadratic if c.state == 0)
    assert bellman.quad == ()


def test_validate_sigma_star(loan, sigma, sigma_star, problem):
    report = validate_solution(problem, assignment_from_strategy(problem, sigma_star))
    assert report.ok
    assert report.reach_recomputed == pytest.approx(0.1982, abs=1e-12)
    assert report.objective_tight == pytest.approx(1.70, abs=1e-9)


def test_validate_sigma_violates_threshold(problem, sigma):
    report = validate_solution(problem, assignment_from_strategy(problem, sigma))
    viol = dict(report.violations)
    assert viol == {"threshold": pytest.approx(0.211, abs=1e-9)}


def test_validate_bad_simplex(problem, sigma_star):
    values = assignment_from_strategy(problem, sigma_star)
    values["p_s5_a2"] -= 0.1
    values["p_s5_a3"] -= 0.1
    labels = [label for label, _ in validate_solution(problem, values).violations]
    assert "simplex[5]" in labels


def test_validate_requires_complete_assignment(problem):
    with pytest.raises(EncodingError):
        validate_solution(problem, {"D0": 0.0})


def test_validate_tightens_slack(problem, sigma_star):
    values = assignment_from_strategy(problem, sigma_star)
    values["Dinf"] = 0.9  # loose but still a valid upper bound
    report = validate_solution(problem, values)
    assert not report.violations
    assert report.objective_assigned > report.objective_tight
    assert report.lemma_gap <= 1e-9


def test_epsilon_mode(loan, sigma):
    q = SynthesisQuery(loan, sigma, REJECTED, 0.2, DistanceConfig(0, 0, 1), epsilon=0.56)
    p = build_problem(q)
    assert p.objective == ()
    eps = next(c for c in p.linear if c.label == "epsilon")
    assert eps.rhs == 0.56 and eps.coeffs == (("D0", 0.0), ("D1", 0.0), ("Dinf", 1.0))


def test_export_is_deterministic_and_round_trips(loan, sigma, problem):
    text = export_problem(problem)
    assert text.splitlines()[0] == "miqcqp 1"
    again = export_problem(build_problem(SynthesisQuery(loan, sigma, REJECTED, 0.2)))
    assert again == text
    parsed = parse_problem(text)
    assert export_problem(parsed) == text
    assert parsed.structure() == problem.structure()
    var_lines = [ln for ln in text.splitlines() if ln.startswith("var ")]
    assert var_lines == sorted(var_lines)


def test_parse_rejects_bad_header():
    with pytest.raises(EncodingError):
        parse_problem("lp 2\n")


@given(st.integers(0, 10_000))
def test_quadratic_matrices_are_symmetric(seed):
    rng = np.random.default_rng(seed)
    m = random_mdp(rng, int(rng.integers(3, 12)), absorbing=2)
    q = SynthesisQuery(m, random_interior_strategy(m, rng), m.n_states - 1, 0.5)
    p = build_problem(q)
    for c in p.quadratic:
        Q = c.matrix()
        assert np.array_equal(Q, Q.T)
        assert c.rel == EQ
    # one Bellman constraint per state that can reach t, target excluded
    assert {c.state for c in p.quadratic} == set(reach_set(m, q.target).reach_set) - {q.target}


@given(st.integers(0, 10_000))
def test_tight_assignment_satisfies_every_constraint(seed):
    rng = np.random.default_rng(seed)
    m = random_mdp(rng, int(rng.integers(3, 10)), absorbing=2)
    s = random_interior_strategy(m, rng)
    q = SynthesisQuery(m, s, m.n_states - 1, 1.0)
    p = build_problem(q)
    other = random_interior_strategy(m, rng)
    report = validate_solution(p, assignment_from_strategy(p, other))
    assert not report.violations
    assert report.lemma_gap <= 1e-9
