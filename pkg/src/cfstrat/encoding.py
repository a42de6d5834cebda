"""The counterfactual-strategy synthesis problem as an explicit MIQCQP.

:func:`build_problem` materializes variables, linear and quadratic
constraints and the objective for a :class:`SynthesisQuery`; the result can
be inspected, exported to a plain text format, and used to validate
candidate solutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .mdp_core import (
    CHANGE_TOL,
    DistanceBreakdown,
    DistanceConfig,
    Mdp,
    ModelError,
    Strategy,
    induce_dtmc,
    induced_matrix,
    strategy_distance,
    validate_strategy,
)
from .reachability import reach_probability, reach_set, solve_reach

REAL, INT = "real", "int"
LE, EQ = "<=", "="

#: Tolerance for constraint satisfaction in :func:`validate_solution`.
CONSTRAINT_TOL = 1e-6
#: Tolerance on the reachability threshold and recomputed ``p_s0``.
REACH_TOL = 1e-7


class EncodingError(ValueError):
    """A query cannot be encoded; ``code`` names the reason."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True, order=True)
class VarRef:
    """A problem variable, identified by its role and the state/action it belongs to."""

    role: str
    state: int = -1
    action: int = -1
    kind: str = field(default=REAL, compare=False)
    lo: float = field(default=0.0, compare=False)
    hi: float = field(default=1.0, compare=False)

    ROLES = ("choice", "reach", "delta", "indicator", "absdiff", "D0", "D1", "Dinf")

    @property
    def name(self) -> str:
        s, a = self.state, self.action
        return {
            "choice": f"p_s{s}_a{a}",
            "reach": f"p_s{s}",
            "delta": f"delta_s{s}",
            "indicator": f"i_s{s}",
            "absdiff": f"dsa_s{s}_a{a}",
        }.get(self.role, self.role)


@dataclass(frozen=True)
class LinearConstraint:
    coeffs: tuple[tuple[str, float], ...]
    rel: str
    rhs: float
    label: str = ""

    def lhs(self, values: Mapping[str, float]) -> float:
        return sum(c * values[v] for v, c in self.coeffs)


@dataclass(frozen=True)
class QuadraticConstraint:
    """``sum c*x*y + sum c*x  rel  rhs``; bilinear terms are stored unsymmetrized."""

    quad: tuple[tuple[str, str, float], ...]
    linear: tuple[tuple[str, float], ...]
    rel: str
    rhs: float
    state: int = -1
    label: str = ""

    def lhs(self, values: Mapping[str, float]) -> float:
        return sum(c * values[x] * values[y] for x, y, c in self.quad) + sum(
            c * values[v] for v, c in self.linear
        )

    def participants(self) -> list[str]:
        """Variables in the order they first appear in a bilinear or linear term."""
        seen: dict[str, None] = {}
        for x, y, _ in self.quad:
            seen.setdefault(x)
            seen.setdefault(y)
        for v, c in self.linear:
            if c > 0:
                seen.setdefault(v)
        return list(seen)

    def matrix(self, order: Sequence[str] | None = None) -> np.ndarray:
        order = list(order or self.participants())
        pos = {v: i for i, v in enumerate(order)}
        Q = np.zeros((len(order), len(order)))
        for x, y, c in self.quad:
            Q[pos[x], pos[y]] += c / 2
            Q[pos[y], pos[x]] += c / 2
        return Q


@dataclass(frozen=True)
class DiversityTerm:
    """``- lam * det(D)`` over ``n_previous`` fixed strategies plus the candidate."""

    lam: float
    perturbation: float
    n_previous: int


@dataclass(frozen=True, eq=False)
class SynthesisQuery:
    """Inputs of one synthesis run: find a strategy close to ``initial`` that
    reaches ``target`` from the initial state with probability at most ``gamma``.
    """

    mdp: Mdp
    initial: Strategy
    target: int
    gamma: float
    distances: DistanceConfig = DistanceConfig()
    epsilon: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ModelError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0 <= self.target < self.mdp.n_states:
            raise ModelError(f"unknown target state {self.target}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ModelError("epsilon must be positive")
        problems = validate_strategy(self.mdp, self.initial)
        if problems or len(self.initial.choices) != self.mdp.n_states:
            raise ModelError("initial strategy invalid: " + "; ".join(problems))

    @cached_property
    def initial_reach(self) -> float:
        return reach_probability(induce_dtmc(self.mdp, self.initial), self.target)[
            self.mdp.initial
        ]

    @property
    def premise_holds(self) -> bool:
        """Whether the initial strategy actually exceeds the limit."""
        return self.initial_reach > self.gamma

    def fixed_rows(self):
        """Distributions of decision states the user cannot change."""
        free = set(self.mdp.free_states)
        return {
            s: self.initial[s] for s in range(self.mdp.n_states) if s not in free
        }


@dataclass(frozen=True, eq=False)
class SynthesisProblem:
    variables: tuple[VarRef, ...]
    linear: tuple[LinearConstraint, ...]
    quadratic: tuple[QuadraticConstraint, ...]
    objective: tuple[tuple[str, float], ...]
    diversity: DiversityTerm | None = None
    query: SynthesisQuery | None = None

    @cached_property
    def by_name(self) -> dict[str, VarRef]:
        return {v.name: v for v in self.variables}

    def census(self) -> dict[str, int]:
        """Number of constraints per kind (label prefix)."""
        counts: dict[str, int] = {}
        for c in (*self.linear, *self.quadratic):
            kind = c.label.split("[")[0] or "unlabeled"
            counts[kind] = counts.get(kind, 0) + 1
        return counts

    def structure(self) -> tuple:
        """Canonical content, ignoring labels and the originating query."""
        return tuple(export_problem(self).splitlines())


def build_problem(q: SynthesisQuery, diversity: DiversityTerm | None = None) -> SynthesisProblem:
    """Encode the query as variables, constraints and objective.

    Single-action states and decision states outside the controllable set
    get no choice variables; their distribution enters the Bellman
    constraints as constants.
    """
    mdp, sigma, t = q.mdp, q.initial, q.target
    s0 = mdp.initial
    if t == s0 and q.gamma < 1.0:
        raise EncodingError(
            "target-is-initial",
            f"target {mdp.state_labels[t]!r} is the initial state; "
            f"probability 1 can never be at most {q.gamma}",
        )
    reach = reach_set(mdp, t)
    free = mdp.free_states
    free_set = set(free)
    n_dec = len(mdp.decision_states)
    fixed = q.fixed_rows()

    choice = {
        (s, a): VarRef("choice", s, a) for s in free for a in mdp.enabled(s)
    }
    reach_vars = {s: VarRef("reach", s) for s in range(mdp.n_states)}
    delta = {s: VarRef("delta", s) for s in free}
    indicator = {s: VarRef("indicator", s, kind=INT) for s in free}
    absdiff = {(s, a): VarRef("absdiff", s, a) for s in free for a in mdp.enabled(s)}
    D0 = VarRef("D0", hi=float(n_dec))
    D1 = VarRef("D1")
    Dinf = VarRef("Dinf")
    variables = (
        *choice.values(),
        *reach_vars.values(),
        *delta.values(),
        *indicator.values(),
        *absdiff.values(),
        D0,
        D1,
        Dinf,
    )

    lin: list[LinearConstraint] = []
    for s in free:
        lin.append(
            LinearConstraint(
                tuple((choice[s, a].name, 1.0) for a in mdp.enabled(s)), EQ, 1.0, f"simplex[{s}]"
            )
        )
    lin.append(LinearConstraint(((reach_vars[t].name, 1.0),), EQ, 1.0, "target"))
    for s in sorted(reach.zero_set):
        lin.append(LinearConstraint(((reach_vars[s].name, 1.0),), EQ, 0.0, f"zero[{s}]"))
    lin.append(LinearConstraint(((reach_vars[s0].name, 1.0),), LE, q.gamma, "threshold"))
    for s in free:
        for a in mdp.enabled(s):
            p, d, ref = choice[s, a].name, absdiff[s, a].name, sigma[s][a]
            lin.append(LinearConstraint(((p, 1.0), (d, -1.0)), LE, ref, f"abs+[{s},{a}]"))
            lin.append(LinearConstraint(((p, -1.0), (d, -1.0)), LE, -ref, f"abs-[{s},{a}]"))
        lin.append(
            LinearConstraint(
                ((delta[s].name, 1.0),)
                + tuple((absdiff[s, a].name, -0.5) for a in mdp.enabled(s)),
                EQ,
                0.0,
                f"delta[{s}]",
            )
        )
        lin.append(
            LinearConstraint(
                ((delta[s].name, 1.0), (indicator[s].name, -1.0)), LE, 0.0, f"indicator[{s}]"
            )
        )
        lin.append(
            LinearConstraint(((delta[s].name, 1.0), (Dinf.name, -1.0)), LE, 0.0, f"dinf[{s}]")
        )
    lin.append(
        LinearConstraint(
            ((D0.name, 1.0),) + tuple((indicator[s].name, -1.0) for s in free), EQ, 0.0, "d0"
        )
    )
    lin.append(
        LinearConstraint(
            ((D1.name, 1.0),) + tuple((delta[s].name, -1.0 / n_dec) for s in free),
            EQ,
            0.0,
            "d1",
        )
    )
    cfg = q.distances
    weights = ((D0.name, cfg.r0), (D1.name, cfg.r1), (Dinf.name, cfg.rinf))
    if q.epsilon is not None:
        lin.append(LinearConstraint(weights, LE, q.epsilon, "epsilon"))
        objective: tuple[tuple[str, float], ...] = ()
    else:
        objective = weights

    quad: list[QuadraticConstraint] = []
    for s in sorted(reach.reach_set - {t}):
        terms: list[tuple[str, str, float]] = []
        const: dict[str, float] = {}
        for a in mdp.enabled(s):
            dist = mdp.transitions[(s, a)]
            if s in free_set:
                for s2, prob in dist.support:
                    terms.append((choice[s, a].name, reach_vars[s2].name, prob))
            else:
                w = fixed[s][a]
                for s2, prob in dist.support:
                    if w > 0:
                        name = reach_vars[s2].name
                        const[name] = const.get(name, 0.0) + w * prob
        linear = tuple(const.items()) + ((reach_vars[s].name, -1.0),)
        quad.append(QuadraticConstraint(tuple(terms), linear, EQ, 0.0, s, f"bellman[{s}]"))

    return SynthesisProblem(variables, tuple(lin), tuple(quad), objective, diversity, q)


def constraint_matrix(p: SynthesisProblem, s: int) -> tuple[list[str], np.ndarray]:
    """Symmetric matrix ``Q`` of the Bellman constraint of state ``s``.

    Returns the participating variable names (the row/column order of ``Q``)
    and ``Q`` itself, such that the bilinear part equals ``x^T Q x``.
    """
    for c in p.quadratic:
        if c.state == s:
            order = c.participants()
            return order, c.matrix(order)
    raise EncodingError("no-quadratic-constraint", f"state {s} has no Bellman constraint")


@dataclass(frozen=True)
class NonconvexityEntry:
    state: int
    variables: tuple[str, ...]
    eigenvalues: tuple[float, ...]

    @property
    def nonconvex(self) -> bool:
        return any(ev < -1e-9 for ev in self.eigenvalues)


def hessian_eigenvalues(Q: np.ndarray) -> np.ndarray:
    """Eigenvalues of the Hessian ``2Q`` of ``x^T Q x``, ascending."""
    if Q.size == 0:
        return np.zeros(0)
    return np.linalg.eigvalsh(2.0 * Q)


def nonconvexity_report(p: SynthesisProblem) -> list[NonconvexityEntry]:
    """Hessian spectrum of every Bellman constraint; negative eigenvalues witness nonconvexity."""
    report = []
    for c in p.quadratic:
        order = c.participants()
        eig = hessian_eigenvalues(c.matrix(order))
        report.append(NonconvexityEntry(c.state, tuple(order), tuple(eig.tolist())))
    return report


@dataclass
class ValidationReport:
    violations: list[tuple[str, float]]
    strategy: Strategy | None
    distance: DistanceBreakdown | None
    objective_assigned: float
    objective_tight: float
    reach_assigned: float
    reach_recomputed: float

    @property
    def lemma_gap(self) -> float:
        if self.distance is None:
            return float("inf")
        return abs(self.objective_tight - self.distance.combined)

    @property
    def ok(self) -> bool:
        return not self.violations and self.lemma_gap <= CONSTRAINT_TOL


def _values(p: SynthesisProblem, assignment: Mapping) -> dict[str, float]:
    values = {}
    for key, val in assignment.items():
        values[key.name if isinstance(key, VarRef) else str(key)] = float(val)
    missing = [v.name for v in p.variables if v.name not in values]
    if missing:
        raise EncodingError("incomplete-assignment", f"missing variables: {missing[:5]}")
    return values


def strategy_from_assignment(p: SynthesisProblem, values: Mapping[str, float]) -> Strategy:
    q = p.query
    mdp = q.mdp
    x = q.initial.to_vector(mdp)
    for v in p.variables:
        if v.role == "choice":
            x[mdp.pair_index[(v.state, v.action)]] = values[v.name]
    return Strategy.from_vector(mdp, x)


def validate_solution(p: SynthesisProblem, assignment: Mapping) -> ValidationReport:
    """Check an assignment against every constraint and re-derive its objective.

    Slack in the absolute-value splits, indicators and ``Dinf`` is replaced
    by the tight values implied by the choice variables before the objective
    is compared with the strategy distance computed from first principles.
    """
    if p.query is None:
        raise EncodingError("no-query", "problem was not built from a query")
    q = p.query
    mdp = q.mdp
    values = _values(p, assignment)
    violations: list[tuple[str, float]] = []

    for v in p.variables:
        val = values[v.name]
        excess = max(v.lo - val, val - v.hi, 0.0)
        if excess > CONSTRAINT_TOL:
            violations.append((f"bound[{v.name}]", excess))
        if v.kind == INT and abs(val - round(val)) > CONSTRAINT_TOL:
            violations.append((f"integrality[{v.name}]", abs(val - round(val))))
    for c in (*p.linear, *p.quadratic):
        gap = c.lhs(values) - c.rhs
        amount = abs(gap) if c.rel == EQ else max(gap, 0.0)
        tol = REACH_TOL if c.label == "threshold" else CONSTRAINT_TOL
        if amount > tol:
            violations.append((c.label, amount))

    cfg = q.distances
    assigned_obj = sum(c * values[n] for n, c in (("D0", cfg.r0), ("D1", cfg.r1), ("Dinf", cfg.rinf)))
    strategy = distance = None
    tight = float("nan")
    recomputed = float("nan")
    try:
        strategy = strategy_from_assignment(p, values)
    except ModelError as exc:
        violations.append((f"strategy[{exc}]", 1.0))
    if strategy is not None:
        distance = strategy_distance(mdp, q.initial, strategy, cfg)
        # tight values straight from the choice variables
        delta = []
        for s in mdp.decision_states:
            if s in set(mdp.free_states):
                delta.append(
                    0.5 * sum(abs(q.initial[s][a] - values[f"p_s{s}_a{a}"]) for a in mdp.enabled(s))
                )
            else:
                delta.append(0.0)
        tight_d = DistanceBreakdown.from_vector(delta, cfg)
        tight = tight_d.combined
        recomputed = solve_reach(induced_matrix(mdp, strategy.to_vector(mdp)), q.target)[mdp.initial]
        if abs(recomputed - values[f"p_s{mdp.initial}"]) > REACH_TOL:
            violations.append(("reach-recomputed", abs(recomputed - values[f"p_s{mdp.initial}"])))
    return ValidationReport(
        violations,
        strategy,
        distance,
        assigned_obj,
        tight,
        values[f"p_s{mdp.initial}"],
        float(recomputed),
    )


def assignment_from_strategy(p: SynthesisProblem, strategy: Strategy) -> dict[str, float]:
    """Tight variable assignment induced by ``strategy``."""
    q = p.query
    mdp = q.mdp
    reach = solve_reach(induced_matrix(mdp, strategy.to_vector(mdp)), q.target)
    values: dict[str, float] = {}
    deltas = []
    for v in p.variables:
        if v.role == "choice":
            values[v.name] = strategy[v.state][v.action]
        elif v.role == "reach":
            values[v.name] = float(reach[v.state])
        elif v.role == "absdiff":
            values[v.name] = abs(q.initial[v.state][v.action] - strategy[v.state][v.action])
    for v in p.variables:
        if v.role == "delta":
            d = 0.5 * sum(values[f"dsa_s{v.state}_a{a}"] for a in mdp.enabled(v.state))
            values[v.name] = d
            values[f"i_s{v.state}"] = 1.0 if d > CHANGE_TOL else 0.0
            deltas.append(d)
    n_dec = len(mdp.decision_states)
    values["D0"] = float(sum(1 for d in deltas if d > CHANGE_TOL))
    values["D1"] = sum(deltas) / n_dec if n_dec else 0.0
    values["Dinf"] = max(deltas, default=0.0)
    return values


def _num(x: float) -> str:
    return f"{x:.17g}"


def export_problem(p: SynthesisProblem) -> str:
    """Deterministic line-oriented text rendering of the problem."""
    lines = ["miqcqp 1"]
    for v in sorted(p.variables, key=lambda v: v.name):
        lines.append(f"var {v.name} {v.kind} {_num(v.lo)} {_num(v.hi)}")
    if p.objective:
        lines.append("min " + " ".join(f"{c:+.17g}*{n}" for n, c in p.objective))
    else:
        lines.append("min 0")
    if p.diversity is not None:
        d = p.diversity
        lines.append(f"div {_num(d.lam)} {_num(d.perturbation)} {d.n_previous}")
    lin = [
        f"lin {c.rel} {_num(c.rhs)} : " + " ".join(f"{_num(k)}*{n}" for n, k in c.coeffs)
        for c in p.linear
    ]
    quad = [
        f"quad {c.rel} {_num(c.rhs)} : "
        + " ".join(f"{_num(k)}*{x}*{y}" for x, y, k in c.quad)
        + " | "
        + " ".join(f"{_num(k)}*{n}" for n, k in c.linear)
        for c in p.quadratic
    ]
    lines.extend(sorted(lin))
    lines.extend(sorted(quad))
    return "\n".join(lines) + "\n"


def _terms(text: str) -> list[tuple[float, list[str]]]:
    out = []
    for tok in text.split():
        coef, *names = tok.split("*")
        out.append((float(coef), names))
    return out


def parse_problem(text: str) -> SynthesisProblem:
    """Parse :func:`export_problem` output back into a (query-less) problem."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != "miqcqp 1":
        raise EncodingError("bad-header", "expected header line 'miqcqp 1'")
    variables, lin, quad = [], [], []
    objective: tuple[tuple[str, float], ...] = ()
    diversity = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        head, _, rest = line.partition(" ")
        try:
            if head == "var":
                name, kind, lo, hi = rest.split()
                variables.append(_ref_from_name(name, kind, float(lo), float(hi)))
            elif head == "min":
                objective = tuple(
                    (names[0], c) for c, names in _terms(rest) if names
                )
            elif head == "div":
                lam, pert, n = rest.split()
                diversity = DiversityTerm(float(lam), float(pert), int(n))
            elif head in ("lin", "quad"):
                spec, _, body = rest.partition(" : ")
                rel, rhs = spec.split()
                if head == "lin":
                    coeffs = tuple((names[0], c) for c, names in _terms(body))
                    lin.append(LinearConstraint(coeffs, rel, float(rhs)))
                else:
                    qpart, _, lpart = body.partition("|")
                    qterms = tuple((n[0], n[1], c) for c, n in _terms(qpart))
                    lterms = tuple((n[0], c) for c, n in _terms(lpart))
                    state = next(
                        (int(n[3:]) for n, c in lterms if c == -1.0 and n.startswith("p_s") and "_a" not in n),
                        -1,
                    )
                    quad.append(QuadraticConstraint(qterms, lterms, rel, float(rhs), state))
            else:
                raise ValueError(f"unknown line kind {head!r}")
        except (ValueError, IndexError) as exc:
            raise EncodingError("parse", f"line {lineno}: {exc}") from exc
    return SynthesisProblem(tuple(variables), tuple(lin), tuple(quad), objective, diversity, None)


def _ref_from_name(name: str, kind: str, lo: float, hi: float) -> VarRef:
    if name in ("D0", "D1", "Dinf"):
        return VarRef(name, kind=kind, lo=lo, hi=hi)
    prefix, *rest = name.split("_")
    nums = [int(r[1:]) for r in rest]
    role = {
        ("p", 2): "choice",
        ("p", 1): "reach",
        ("delta", 1): "delta",
        ("i", 1): "indicator",
        ("dsa", 2): "absdiff",
    }[(prefix, len(nums))]
    return VarRef(role, nums[0], nums[1] if len(nums) > 1 else -1, kind, lo, hi)
