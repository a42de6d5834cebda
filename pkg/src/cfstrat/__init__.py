"""Counterfactual strategies for Markov decision processes.

Given an MDP, a user strategy and a target state reached too often, find
the closest strategy that reaches the target with probability at most a
given limit.
"""

from .diversity import DiverseSet, DiversityConfig, diverse_synthesize, diversity_determinant, novel_fraction
from .encoding import (
    SynthesisProblem,
    SynthesisQuery,
    build_problem,
    export_problem,
    nonconvexity_report,
    parse_problem,
    validate_solution,
)
from .explain import Explanation, explain, render
from .mdp_core import (
    DistanceBreakdown,
    DistanceConfig,
    Distribution,
    Dtmc,
    Mdp,
    ModelError,
    Strategy,
    induce_dtmc,
    strategy_distance,
    validate_strategy,
)
from .oracle import OracleResult, grid_oracle
from .reachability import min_reach_probability, reach_probability, reach_set, value_iteration
from .solver import SolverConfig, Status, SynthesisResult, classify_status, solve, solve_epsilon

__all__ = [
    "DiverseSet", "DiversityConfig", "diverse_synthesize", "diversity_determinant", "novel_fraction",
    "SynthesisProblem", "SynthesisQuery", "build_problem", "export_problem", "nonconvexity_report",
    "parse_problem", "validate_solution", "Explanation", "explain", "render",
    "DistanceBreakdown", "DistanceConfig", "Distribution", "Dtmc", "Mdp", "ModelError", "Strategy",
    "induce_dtmc", "strategy_distance", "validate_strategy", "OracleResult", "grid_oracle",
    "min_reach_probability", "reach_probability", "reach_set", "value_iteration",
    "SolverConfig", "Status", "SynthesisResult", "classify_status", "solve", "solve_epsilon",
]
