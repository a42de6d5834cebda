"""Small built-in models: the loan application example and random MDPs."""

from __future__ import annotations

import numpy as np

from .mdp_core import Distribution, Mdp, Strategy

LOAN_STATES = (
    "s0",
    "Application",
    "Error",
    "Consultation",
    "Application+",
    "Rework",
    "Resubmit",
    "Granted",
    "Rejected",
)
LOAN_ACTIONS = ("Apply", "Consult", "Quit", "Submit", "Provider")


def loan_mdp() -> Mdp:
    """Loan application procedure; the client wants to avoid ``Rejected``."""
    S = {name: i for i, name in enumerate(LOAN_STATES)}
    A = {name: i for i, name in enumerate(LOAN_ACTIONS)}
    edges = {
        ("s0", "Apply"): {"Application": 0.95, "Error": 0.05},
        ("s0", "Consult"): {"Consultation": 1.0},
        ("Application", "Provider"): {"Granted": 0.5, "Rework": 0.5},
        ("Error", "Consult"): {"Consultation": 1.0},
        ("Error", "Quit"): {"Rejected": 1.0},
        ("Consultation", "Apply"): {"Application+": 1.0},
        ("Consultation", "Quit"): {"Rejected": 1.0},
        ("Application+", "Provider"): {"Rework": 0.1, "Granted": 0.9},
        ("Rework", "Submit"): {"Resubmit": 1.0},
        ("Rework", "Quit"): {"Rejected": 1.0},
        ("Resubmit", "Provider"): {"Rejected": 0.2, "Granted": 0.8},
        ("Granted", "Provider"): {"Granted": 1.0},
        ("Rejected", "Provider"): {"Rejected": 1.0},
    }
    trans = {
        (S[s], A[a]): Distribution.of({S[k]: v for k, v in succ.items()})
        for (s, a), succ in edges.items()
    }
    return Mdp(LOAN_STATES, LOAN_ACTIONS, S["s0"], trans)


def _loan_strategy(mdp: Mdp, rework_quit: float) -> Strategy:
    S = {name: i for i, name in enumerate(LOAN_STATES)}
    A = {name: i for i, name in enumerate(LOAN_ACTIONS)}
    return Strategy.from_mapping(
        mdp,
        {
            S["s0"]: {A["Apply"]: 1.0},
            S["Error"]: {A["Consult"]: 0.2, A["Quit"]: 0.8},
            S["Consultation"]: {A["Quit"]: 1.0},
            S["Rework"]: {A["Quit"]: rework_quit, A["Submit"]: 1.0 - rework_quit},
        },
    )


def impatient_strategy(mdp: Mdp | None = None) -> Strategy:
    """The impatient client: applies directly and mostly quits after rework."""
    return _loan_strategy(mdp or loan_mdp(), 0.7)


def counterfactual_strategy(mdp: Mdp | None = None) -> Strategy:
    """Impatient client who keeps going after rework (Quit 0.14, Submit 0.86)."""
    return _loan_strategy(mdp or loan_mdp(), 0.14)


def random_mdp(
    rng: np.random.Generator,
    n_states: int,
    max_actions: int = 3,
    max_successors: int = 3,
    decision_prob: float = 0.5,
    max_decision_states: int | None = None,
    absorbing: int = 1,
) -> Mdp:
    """Random MDP with state 0 initial and the last ``absorbing`` states absorbing.

    Used for property tests and benchmarks; the structure is arbitrary but
    every state has at least one enabled action.
    """
    labels = tuple(f"q{i}" for i in range(n_states))
    actions = tuple(f"a{i}" for i in range(max_actions))
    trans = {}
    n_decision = 0
    for s in range(n_states):
        if s >= n_states - absorbing:
            trans[(s, 0)] = Distribution.dirac(s)
            continue
        k = 1
        allowed = max_decision_states is None or n_decision < max_decision_states
        if max_actions > 1 and allowed and rng.random() < decision_prob:
            k = int(rng.integers(2, max_actions + 1))
            n_decision += 1
        for a in sorted(rng.choice(max_actions, size=k, replace=False)):
            m = int(rng.integers(1, min(max_successors, n_states) + 1))
            succ = rng.choice(n_states, size=m, replace=False)
            probs = rng.dirichlet(np.ones(m))
            trans[(s, int(a))] = Distribution(tuple(zip(succ.tolist(), probs.tolist())))
    return Mdp(labels, actions, 0, trans)


def random_interior_strategy(mdp: Mdp, rng: np.random.Generator) -> Strategy:
    """Strategy with every enabled action at positive probability."""
    choices = []
    for s in range(mdp.n_states):
        acts = mdp.enabled(s)
        probs = rng.dirichlet(np.ones(len(acts)))
        choices.append(Distribution(tuple(zip(acts, probs.tolist()))))
    return Strategy(tuple(choices))
