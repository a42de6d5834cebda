"""Core data model: distributions, MDPs, strategies, induced DTMCs and
strategy distance measures.

States and actions are identified by their integer index; labels are kept
only for display and file I/O.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

#: Tolerance on probability mass before a distribution is rejected.
NORMALIZATION_TOL = 1e-9
#: A state counts as changed when its total variation distance exceeds this.
CHANGE_TOL = 1e-6


class ModelError(ValueError):
    """Raised when an MDP, strategy or distribution violates its invariants."""


@dataclass(frozen=True)
class Distribution:
    """Finite discrete distribution stored as an ordered ``(item, prob)`` tuple.

    Zero-probability items are dropped, so the support is exactly the set of
    items with positive mass.
    """

    support: tuple[tuple[int, float], ...]

    def __post_init__(self):
        items = [int(i) for i, _ in self.support]
        if len(set(items)) != len(items):
            raise ModelError(f"duplicate items in distribution: {items}")
        probs = np.array([p for _, p in self.support], dtype=float)
        if probs.size == 0:
            raise ModelError("empty distribution")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise ModelError(f"negative or non-finite probability in {self.support}")
        total = probs.sum()
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ModelError(f"probabilities sum to {total!r}, expected 1")
        probs = probs / total
        support = tuple(
            (i, float(p)) for i, p in sorted(zip(items, probs)) if p > 0.0
        )
        object.__setattr__(self, "support", support)

    @classmethod
    def of(cls, mapping: Mapping[int, float]) -> "Distribution":
        return cls(tuple((int(k), float(v)) for k, v in mapping.items()))

    @classmethod
    def dirac(cls, item: int) -> "Distribution":
        return cls(((int(item), 1.0),))

    def __getitem__(self, item: int) -> float:
        for i, p in self.support:
            if i == item:
                return p
        return 0.0

    def items(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.support)

    def as_dict(self) -> dict[int, float]:
        return dict(self.support)


def tv_distance(mu1: Distribution, mu2: Distribution) -> float:
    """Total variation distance ``1/2 * sum_x |mu1(x) - mu2(x)|``.

    Items missing from one support count as probability zero there.
    """
    d1, d2 = mu1.as_dict(), mu2.as_dict()
    total = sum(abs(d1.get(x, 0.0) - d2.get(x, 0.0)) for x in set(d1) | set(d2))
    return min(1.0, 0.5 * total)


@dataclass(frozen=True, eq=False)
class Mdp:
    """Finite MDP with a partial transition function.

    ``transitions`` maps ``(state, action)`` to a distribution over states.
    ``controllable`` optionally restricts which decision states a
    counterfactual may modify; ``None`` means all of them.
    """

    state_labels: tuple[str, ...]
    action_labels: tuple[str, ...]
    initial: int
    transitions: Mapping[tuple[int, int], Distribution]
    controllable: frozenset[int] | None = None

    def __post_init__(self):
        n, m = len(self.state_labels), len(self.action_labels)
        if n == 0:
            raise ModelError("MDP has no states")
        if not 0 <= self.initial < n:
            raise ModelError(f"initial state {self.initial} out of range")
        trans = {}
        for (s, a), dist in sorted(self.transitions.items()):
            if not (0 <= s < n):
                raise ModelError(f"transition from unknown state {s}")
            if not (0 <= a < m):
                raise ModelError(f"transition with unknown action {a} in state {s}")
            if not isinstance(dist, Distribution):
                dist = Distribution.of(dist)
            bad = [x for x in dist.items() if not 0 <= x < n]
            if bad:
                raise ModelError(f"transition ({s}, {a}) leads to unknown states {bad}")
            trans[(int(s), int(a))] = dist
        object.__setattr__(self, "transitions", trans)
        enabled = {s for s, _ in trans}
        missing = [s for s in range(n) if s not in enabled]
        if missing:
            labels = [self.state_labels[s] for s in missing]
            raise ModelError(f"states without enabled actions: {labels}")
        if self.controllable is not None:
            ctrl = frozenset(int(s) for s in self.controllable)
            if any(not 0 <= s < n for s in ctrl):
                raise ModelError("controllable set references unknown states")
            object.__setattr__(self, "controllable", ctrl)

    @property
    def n_states(self) -> int:
        return len(self.state_labels)

    @property
    def n_actions(self) -> int:
        return len(self.action_labels)

    def enabled(self, s: int) -> tuple[int, ...]:
        """Enabled actions of ``s`` in ascending index order."""
        return self._enabled[s]

    def prob(self, s: int, a: int, s2: int) -> float:
        dist = self.transitions.get((s, a))
        return 0.0 if dist is None else dist[s2]

    @cached_property
    def _enabled(self) -> tuple[tuple[int, ...], ...]:
        acts: list[list[int]] = [[] for _ in range(self.n_states)]
        for s, a in self.transitions:
            acts[s].append(a)
        return tuple(tuple(sorted(a)) for a in acts)

    @cached_property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        """All enabled ``(state, action)`` pairs, sorted by state then action."""
        return tuple((s, a) for s in range(self.n_states) for a in self._enabled[s])

    @cached_property
    def pair_index(self) -> dict[tuple[int, int], int]:
        return {p: k for k, p in enumerate(self.pairs)}

    @cached_property
    def pair_state(self) -> np.ndarray:
        return np.array([s for s, _ in self.pairs], dtype=np.int64)

    @cached_property
    def state_offsets(self) -> np.ndarray:
        """``pairs[offsets[s]:offsets[s+1]]`` are the pairs of state ``s``."""
        counts = np.array([len(a) for a in self._enabled], dtype=np.int64)
        return np.concatenate([[0], np.cumsum(counts)])

    @cached_property
    def pair_matrix(self) -> sp.csr_matrix:
        """Sparse ``(n_pairs, n_states)`` matrix of ``T(s, a, s')``."""
        rows, cols, vals = [], [], []
        for k, (s, a) in enumerate(self.pairs):
            for s2, p in self.transitions[(s, a)].support:
                rows.append(k)
                cols.append(s2)
                vals.append(p)
        return sp.csr_matrix(
            (vals, (rows, cols)), shape=(len(self.pairs), self.n_states)
        )

    @cached_property
    def decision_states(self) -> tuple[int, ...]:
        return tuple(s for s in range(self.n_states) if len(self._enabled[s]) >= 2)

    @cached_property
    def free_states(self) -> tuple[int, ...]:
        """Decision states a counterfactual may change."""
        if self.controllable is None:
            return self.decision_states
        return tuple(s for s in self.decision_states if s in self.controllable)

    def state_index(self, key: int | str) -> int:
        """Resolve a state given either its index or its label."""
        if isinstance(key, (int, np.integer)):
            if not 0 <= key < self.n_states:
                raise ModelError(f"unknown state id {key}")
            return int(key)
        try:
            return self.state_labels.index(key)
        except ValueError:
            if key.lstrip("-").isdigit():
                return self.state_index(int(key))
            raise ModelError(f"unknown state label {key!r}") from None

    def action_index(self, key: int | str) -> int:
        if isinstance(key, (int, np.integer)):
            if not 0 <= key < self.n_actions:
                raise ModelError(f"unknown action id {key}")
            return int(key)
        try:
            return self.action_labels.index(key)
        except ValueError:
            raise ModelError(f"unknown action label {key!r}") from None

    def to_dict(self) -> dict:
        data = {
            "states": [{"id": i, "label": l} for i, l in enumerate(self.state_labels)],
            "actions": [{"id": i, "label": l} for i, l in enumerate(self.action_labels)],
            "initial": self.initial,
            "transitions": [
                {
                    "from": s,
                    "action": a,
                    "to": [{"state": s2, "prob": p} for s2, p in dist.support],
                }
                for (s, a), dist in self.transitions.items()
            ],
        }
        if self.controllable is not None:
            data["controllable"] = sorted(self.controllable)
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> "Mdp":
        states = _indexed(data["states"], "states")
        actions = _indexed(data["actions"], "actions")
        trans: dict[tuple[int, int], Distribution] = {}
        for entry in data["transitions"]:
            key = (int(entry["from"]), int(entry["action"]))
            if key in trans:
                raise ModelError(f"duplicate transition entry {key}")
            trans[key] = Distribution(
                tuple((int(t["state"]), float(t["prob"])) for t in entry["to"])
            )
        ctrl = data.get("controllable")
        return cls(
            tuple(states),
            tuple(actions),
            int(data["initial"]),
            trans,
            None if ctrl is None else frozenset(int(c) for c in ctrl),
        )

    @cached_property
    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _indexed(entries: Sequence[Mapping], what: str) -> list[str]:
    ids = [int(e["id"]) for e in entries]
    if sorted(ids) != list(range(len(ids))):
        raise ModelError(f"{what} ids must be exactly 0..{len(ids) - 1}, got {sorted(ids)}")
    labels = [""] * len(ids)
    for e in entries:
        labels[int(e["id"])] = str(e.get("label", e["id"]))
    return labels


@dataclass(frozen=True)
class Strategy:
    """Memoryless randomized strategy: one action distribution per state."""

    choices: tuple[Distribution, ...]

    def __getitem__(self, s: int) -> Distribution:
        return self.choices[s]

    @classmethod
    def from_mapping(cls, mdp: Mdp, mapping: Mapping[int, Mapping[int, float]]) -> "Strategy":
        """Build a strategy from ``{state: {action: prob}}``.

        States not mentioned must have a single enabled action, which is
        then chosen with probability one.
        """
        choices = []
        for s in range(mdp.n_states):
            if s in mapping:
                choices.append(Distribution.of(mapping[s]))
            elif len(mdp.enabled(s)) == 1:
                choices.append(Distribution.dirac(mdp.enabled(s)[0]))
            else:
                raise ModelError(
                    f"strategy does not specify decision state {mdp.state_labels[s]!r}"
                )
        return cls(tuple(choices))

    def to_vector(self, mdp: Mdp) -> np.ndarray:
        """Probabilities aligned with ``mdp.pairs``."""
        return np.array([self.choices[s][a] for s, a in mdp.pairs])

    @classmethod
    def from_vector(cls, mdp: Mdp, x: np.ndarray) -> "Strategy":
        """Inverse of :meth:`to_vector`; clips tiny negatives and renormalizes."""
        x = np.clip(np.asarray(x, dtype=float), 0.0, None)
        off = mdp.state_offsets
        choices = []
        for s in range(mdp.n_states):
            row = x[off[s] : off[s + 1]]
            total = row.sum()
            if total <= 0:
                raise ModelError(f"all-zero choice row at state {s}")
            choices.append(
                Distribution(tuple(zip(mdp.enabled(s), (row / total).tolist())))
            )
        return cls(tuple(choices))

    def to_dict(self) -> dict:
        return {
            "choices": [
                {"state": s, "actions": [{"action": a, "prob": p} for a, p in d.support]}
                for s, d in enumerate(self.choices)
            ]
        }

    @classmethod
    def from_dict(cls, mdp: Mdp, data: Mapping) -> "Strategy":
        mapping = {}
        for entry in data["choices"]:
            s = int(entry["state"])
            if s in mapping:
                raise ModelError(f"state {s} listed twice in strategy")
            mapping[s] = {int(e["action"]): float(e["prob"]) for e in entry["actions"]}
        return cls.from_mapping(mdp, mapping)


def validate_strategy(mdp: Mdp, sigma) -> list[str]:
    """List every way ``sigma`` fails to be a strategy of ``mdp``.

    Accepts a :class:`Strategy` or a raw ``{state: {action: prob}}`` mapping,
    so that unnormalized rows can be reported rather than rejected early.
    """
    if isinstance(sigma, Strategy):
        rows = {s: d.as_dict() for s, d in enumerate(sigma.choices)}
    else:
        rows = {int(s): {int(a): float(p) for a, p in r.items()} for s, r in sigma.items()}
    problems = []
    for s in sorted(rows):
        if not 0 <= s < mdp.n_states:
            problems.append(f"state {s}: unknown state")
    for s in range(mdp.n_states):
        label = mdp.state_labels[s]
        row = rows.get(s)
        if row is None:
            problems.append(f"state {label}: no distribution given")
            continue
        enabled = set(mdp.enabled(s))
        disabled = sorted(a for a, p in row.items() if p != 0 and a not in enabled)
        if disabled:
            names = [mdp.action_labels[a] if 0 <= a < mdp.n_actions else str(a) for a in disabled]
            problems.append(f"state {label}: probability on disabled actions {names}")
        if any(p < 0 or not np.isfinite(p) for p in row.values()):
            problems.append(f"state {label}: negative or non-finite probability")
        total = sum(row.values())
        if abs(total - 1.0) > NORMALIZATION_TOL:
            problems.append(f"state {label}: probabilities sum to {total:.12g}, not 1")
    return problems


def _check_strategy(mdp: Mdp, sigma: Strategy) -> None:
    if len(sigma.choices) != mdp.n_states:
        raise ModelError(
            f"strategy covers {len(sigma.choices)} states, MDP has {mdp.n_states}"
        )
    problems = validate_strategy(mdp, sigma)
    if problems:
        raise ModelError("; ".join(problems))


@dataclass(frozen=True, eq=False)
class Dtmc:
    """Markov chain with a sparse row-stochastic transition matrix."""

    matrix: sp.csr_matrix
    initial: int
    state_labels: tuple[str, ...] = ()

    def __post_init__(self):
        mat = sp.csr_matrix(self.matrix, dtype=float)
        mat.eliminate_zeros()
        if mat.shape[0] != mat.shape[1]:
            raise ModelError("transition matrix must be square")
        if mat.nnz and mat.data.min() < 0:
            raise ModelError("negative transition probability")
        sums = np.asarray(mat.sum(axis=1)).ravel()
        if np.any(np.abs(sums - 1.0) > NORMALIZATION_TOL):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise ModelError(f"row {bad} sums to {sums[bad]!r}")
        object.__setattr__(self, "matrix", mat)

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]


def induced_matrix(mdp: Mdp, x: np.ndarray) -> sp.csr_matrix:
    """``T^x(s, s') = sum_a x[s, a] T(s, a, s')`` for a pair-aligned vector ``x``."""
    n_pairs = len(mdp.pairs)
    select = sp.csr_matrix(
        (x, (mdp.pair_state, np.arange(n_pairs))), shape=(mdp.n_states, n_pairs)
    )
    mat = (select @ mdp.pair_matrix).tocsr()
    mat.eliminate_zeros()
    return mat


def induce_dtmc(mdp: Mdp, sigma: Strategy) -> Dtmc:
    """The DTMC obtained by resolving the choices of ``mdp`` with ``sigma``."""
    _check_strategy(mdp, sigma)
    return Dtmc(induced_matrix(mdp, sigma.to_vector(mdp)), mdp.initial, mdp.state_labels)


def decision_states(mdp: Mdp) -> list[int]:
    """States with at least two enabled actions, in index order."""
    return list(mdp.decision_states)


def distance_vector(mdp: Mdp, s1: Strategy, s2: Strategy) -> np.ndarray:
    _check_strategy(mdp, s1)
    _check_strategy(mdp, s2)
    return np.array([tv_distance(s1[s], s2[s]) for s in mdp.decision_states])


def vector_distance_vector(mdp: Mdp, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Per-decision-state TV distances for pair-aligned strategy vectors."""
    half = 0.5 * np.abs(np.asarray(x1) - np.asarray(x2))
    per_state = np.add.reduceat(half, mdp.state_offsets[:-1]) if len(half) else half
    return np.minimum(per_state[list(mdp.decision_states)], 1.0)


@dataclass(frozen=True)
class DistanceConfig:
    """Weights of the combined strategy distance ``r0*d0 + r1*d1 + rinf*dinf``."""

    r0: float = 1.0
    r1: float = 1.0
    rinf: float = 1.0

    def __post_init__(self):
        if min(self.r0, self.r1, self.rinf) < 0:
            raise ModelError("distance coefficients must be nonnegative")
        if max(self.r0, self.r1, self.rinf) <= 0:
            raise ModelError("at least one distance coefficient must be positive")

    @property
    def total(self) -> float:
        return self.r0 + self.r1 + self.rinf


@dataclass(frozen=True)
class DistanceBreakdown:
    per_state: tuple[float, ...]
    d0: int
    d1: float
    dinf: float
    combined: float

    @classmethod
    def from_vector(cls, delta: Iterable[float], cfg: DistanceConfig) -> "DistanceBreakdown":
        delta = tuple(float(v) for v in delta)
        n = len(delta)
        d0 = sum(1 for v in delta if v > CHANGE_TOL)
        d1 = sum(delta) / n if n else 0.0
        dinf = max(delta) if n else 0.0
        return cls(delta, d0, d1, dinf, cfg.r0 * d0 + cfg.r1 * d1 + cfg.rinf * dinf)

    def to_dict(self) -> dict:
        return {"d0": self.d0, "d1": self.d1, "dinf": self.dinf, "combined": self.combined}


def strategy_distance(
    mdp: Mdp, s1: Strategy, s2: Strategy, cfg: DistanceConfig = DistanceConfig()
) -> DistanceBreakdown:
    return DistanceBreakdown.from_vector(distance_vector(mdp, s1, s2), cfg)


__all__ = [
    "CHANGE_TOL",
    "Distribution",
    "DistanceBreakdown",
    "DistanceConfig",
    "Dtmc",
    "Mdp",
    "ModelError",
    "Strategy",
    "decision_states",
    "distance_vector",
    "induce_dtmc",
    "induced_matrix",
    "strategy_distance",
    "tv_distance",
    "validate_strategy",
    "vector_distance_vector",
]
