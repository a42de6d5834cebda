"""JSON and trace-file I/O for the command line tools."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from ..encoding import SynthesisQuery
from ..mdp_core import DistanceBreakdown, Mdp, ModelError, Strategy
from ..solver import SynthesisResult


class WorkbenchError(Exception):
    """User-facing input error (bad file, unknown label, conflicting flags)."""


def read_text(path: str | Path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise WorkbenchError(f"{path}: {exc.strerror or exc}") from None


def load_json(path: str | Path) -> Any:
    text = read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise WorkbenchError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def load_mdp(path: str | Path) -> Mdp:
    data = load_json(path)
    try:
        return Mdp.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise WorkbenchError(f"{path}: invalid MDP: {_describe(exc)}") from None


def load_strategy(path: str | Path, mdp: Mdp) -> Strategy:
    data = load_json(path)
    try:
        return Strategy.from_dict(mdp, data)
    except (KeyError, TypeError, ValueError) as exc:
        raise WorkbenchError(f"{path}: invalid strategy: {_describe(exc)}") from None


def _describe(exc: Exception) -> str:
    if isinstance(exc, KeyError):
        return f"missing field {exc.args[0]!r}"
    return str(exc)


def dump_json(data: Any) -> str:
    return json.dumps(data, indent=2) + "\n"


def write_output(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise WorkbenchError(f"{out}: {exc.strerror or exc}") from None


# ---------------------------------------------------------------------------
# result records


RESULT_KEYS = ("status", "gamma", "target", "reach_before", "reach_after", "distance",
               "strategy", "wall_time_s", "seed")


@dataclass(frozen=True)
class ResultRecord:
    """Serializable summary of one synthesis run (stable key order)."""

    status: str
    gamma: float
    target: str
    reach_before: float | None
    reach_after: float | None
    distance: dict | None
    strategy: dict | None
    wall_time_s: float
    seed: int

    @classmethod
    def from_result(cls, q: SynthesisQuery, result: SynthesisResult, seed: int) -> "ResultRecord":
        dist = result.distance
        return cls(
            status=str(result.status),
            gamma=float(q.gamma),
            target=q.mdp.state_labels[q.target],
            reach_before=None if result.reach_before is None else float(result.reach_before),
            reach_after=None if result.reach_value is None else float(result.reach_value),
            distance=None if dist is None else _distance_dict(dist),
            strategy=None if result.strategy is None else result.strategy.to_dict(),
            wall_time_s=round(float(result.wall_time), 6),
            seed=int(seed),
        )

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in RESULT_KEYS}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ResultRecord":
        missing = [k for k in RESULT_KEYS if k not in data]
        if missing:
            raise WorkbenchError(f"result JSON lacks {', '.join(missing)}")
        return cls(**{k: data[k] for k in RESULT_KEYS})

    def strategy_for(self, mdp: Mdp) -> Strategy | None:
        return None if self.strategy is None else Strategy.from_dict(mdp, self.strategy)


def _distance_dict(d: DistanceBreakdown) -> dict:
    return {"d0": int(d.d0), "d1": float(d.d1), "dinf": float(d.dinf), "combined": float(d.combined)}


# ---------------------------------------------------------------------------
# traces


@dataclass(frozen=True)
class TraceLog:
    traces: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if not self.traces:
            raise ModelError("empty trace log")
        for i, tr in enumerate(self.traces):
            if not tr:
                raise ModelError(f"trace {i} is empty")
            if any(not e for e in tr):
                raise ModelError(f"trace {i} has an empty event label")

    @property
    def alphabet(self) -> tuple[str, ...]:
        return tuple(sorted({e for tr in self.traces for e in tr}))


def parse_traces(text: str, source: str = "<traces>") -> TraceLog:
    """One trace per line, comma-separated labels; ``#`` starts a comment."""
    traces = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        events = tuple(e.strip() for e in line.split(","))
        if any(not e for e in events):
            raise WorkbenchError(f"{source}:{lineno}: empty event label")
        traces.append(events)
    if not traces:
        raise WorkbenchError(f"{source}: no traces found")
    return TraceLog(tuple(traces))


def load_traces(path: str | Path) -> TraceLog:
    return parse_traces(read_text(path), str(path))
