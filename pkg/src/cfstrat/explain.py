"""Plain-text recourse instructions for counterfactual strategies."""

from __future__ import annotations

from dataclasses import dataclass

from .mdp_core import CHANGE_TOL, Mdp, Strategy
from .solver import SynthesisResult


@dataclass(frozen=True)
class ActionEdit:
    action: str
    direction: str  # "increase" or "decrease"
    probability: float


@dataclass(frozen=True)
class Explanation:
    target_label: str
    before: float
    after: float
    edits: tuple[tuple[str, tuple[ActionEdit, ...]], ...]

    def text(self) -> str:
        lines = [
            f"State `{self.target_label}' is reached with probability {fmt_prob(self.before)}.",
            f"You can reach `{self.target_label}' with probability {fmt_prob(self.after)} as follows:",
        ]
        if not self.edits:
            lines.append("No changes required.")
        for state, actions in self.edits:
            lines.append(f" In state `{state}'")
            for e in actions:
                lines.append(f"  {e.direction} probability of action `{e.action}' to {fmt_prob(e.probability)}")
        return "\n".join(lines) + "\n"


def fmt_prob(p: float) -> str:
    return "0.0" if p == 0 else f"{p:.2f}"


def explain(m: Mdp, sigma: Strategy, result: SynthesisResult, t: int) -> Explanation:
    if result.strategy is None:
        raise ValueError(f"result with status {result.status} carries no strategy")
    new = result.strategy
    edits = []
    for s in m.decision_states:
        acts = m.enabled(s)
        old_row = [sigma[s][a] for a in acts]
        new_row = [new[s][a] for a in acts]
        if 0.5 * sum(abs(x - y) for x, y in zip(old_row, new_row)) <= CHANGE_TOL:
            continue
        up = [ActionEdit(m.action_labels[a], "increase", y)
              for a, x, y in zip(acts, old_row, new_row) if y - x > CHANGE_TOL]
        down = [ActionEdit(m.action_labels[a], "decrease", y)
                for a, x, y in zip(acts, old_row, new_row) if x - y > CHANGE_TOL]
        edits.append((m.state_labels[s], tuple(up + down)))
    before = result.reach_before if result.reach_before is not None else result.reach_value
    return Explanation(m.state_labels[t], float(before), float(result.reach_value), tuple(edits))


def render(m: Mdp, sigma: Strategy, result: SynthesisResult, t: int) -> str:
    """Instruction text: header, then per changed state the changed actions."""
    return explain(m, sigma, result, t).text()
