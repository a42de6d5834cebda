"""MDPs from event logs by last-k history counting, plus random strategies."""

from __future__ import annotations

from collections import Counter, defaultdict

import numpy as np

from ..mdp_core import Distribution, Mdp, ModelError, Strategy
from .io import TraceLog

START = "start"
NEGATIVE = "negative"
POSITIVE = "positive"
END = "<end>"
STAY = "<stay>"


def _label(history: tuple[str, ...]) -> str:
    return "|".join(history)


def learn_mdp(log: TraceLog, history: int = 1, smoothing: float = 0.0,
              threshold: int = 15) -> Mdp:
    """States are the last ``history`` events seen (plus start and two terminals).

    Taking event ``e`` in a state moves to the history extended by ``e``.
    When a trace stops, the user takes ``<end>``, which leads to the
    ``negative`` terminal for traces shorter than ``threshold`` and to
    ``positive`` otherwise; those outcome frequencies are estimated with
    additive ``smoothing`` over the outcomes observed at that state.
    """
    if history < 1:
        raise ValueError("history must be at least 1")
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    reserved = {START, NEGATIVE, POSITIVE, END, STAY}
    clash = reserved & set(log.alphabet)
    if clash:
        raise ModelError(f"event labels clash with reserved names: {sorted(clash)}")

    order: dict[tuple[str, ...], int] = {(): 0}
    moves: dict[tuple[int, str], Counter] = defaultdict(Counter)
    ends: dict[int, Counter] = defaultdict(Counter)
    for tr in log.traces:
        h: tuple[str, ...] = ()
        for e in tr:
            nxt = (h + (e,))[-history:]
            order.setdefault(nxt, len(order))
            moves[(order[h], e)][order[nxt]] += 1
            h = nxt
        ends[order[h]][NEGATIVE if len(tr) < threshold else POSITIVE] += 1

    n_hist = len(order)
    outcomes = sorted({o for c in ends.values() for o in c})
    term = {o: n_hist + i for i, o in enumerate(outcomes)}
    labels = [START] + [_label(h) for h in list(order)[1:]] + outcomes
    actions = list(log.alphabet) + [END, STAY]
    act = {a: i for i, a in enumerate(actions)}

    trans = {}
    for (s, e), counts in moves.items():
        trans[(s, act[e])] = _estimate(counts, smoothing)
    for s, counts in ends.items():
        trans[(s, act[END])] = _estimate(Counter({term[o]: c for o, c in counts.items()}), smoothing)
    for o in outcomes:
        trans[(term[o], act[STAY])] = Distribution.dirac(term[o])
    return Mdp(tuple(labels), tuple(actions), 0, trans)


def _estimate(counts: Counter, smoothing: float) -> Distribution:
    total = sum(counts.values()) + smoothing * len(counts)
    return Distribution(tuple((k, (c + smoothing) / total) for k, c in sorted(counts.items())))


def random_strategy(m: Mdp, seed: int) -> Strategy:
    """Independent Dirichlet(1) rows at decision states; deterministic per model and seed."""
    rng = np.random.default_rng([int(seed), int(m.fingerprint[:8], 16)])
    choices = []
    for s in range(m.n_states):
        acts = m.enabled(s)
        if len(acts) == 1:
            choices.append(Distribution.dirac(acts[0]))
        else:
            choices.append(Distribution(tuple(zip(acts, rng.dirichlet(np.ones(len(acts))).tolist()))))
    return Strategy(tuple(choices))
