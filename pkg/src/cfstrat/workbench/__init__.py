"""Command line tools, file formats, log ingestion and benchmarking."""

from .bench import GAMMA_GRID, BenchReport, BenchRow, gamma_sweep
from .io import ResultRecord, TraceLog, WorkbenchError, load_mdp, load_strategy, parse_traces
from .learn import learn_mdp, random_strategy

__all__ = [
    "GAMMA_GRID", "BenchReport", "BenchRow", "gamma_sweep", "ResultRecord", "TraceLog",
    "WorkbenchError", "load_mdp", "load_strategy", "parse_traces", "learn_mdp", "random_strategy",
]
