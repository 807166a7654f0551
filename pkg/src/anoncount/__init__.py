"""Counting the processes of a congested anonymous dynamic network with a leader."""

from .counting import CountResult, Malformed, count_from_view, infer_anonymities
from .engine import RoundTopology, Trace, make_scheduler, run_processes, step_round
from .harness import ExperimentConfig, run_experiment, run_one
from .history_tree import HistoryTree, build_ground_truth, extract_view, is_generalized_view_of
from .messages import Label, Message
from .protocol import Process, make_processes

__all__ = [
    "CountResult",
    "ExperimentConfig",
    "HistoryTree",
    "Label",
    "Malformed",
    "Message",
    "Process",
    "RoundTopology",
    "Trace",
    "build_ground_truth",
    "count_from_view",
    "extract_view",
    "infer_anonymities",
    "is_generalized_view_of",
    "make_processes",
    "make_scheduler",
    "run_experiment",
    "run_one",
    "run_processes",
    "step_round",
]
