"""Maliciously secure three-party private decision tree evaluation.

The model owner's tree and the feature owner's query stay hidden from
everyone else; only the feature owner learns the label, and any
deviation by one corrupt party makes the honest parties abort.
"""
from .errors import ConfigError, ProtocolAbort
from .harness import FaultSpec, RunReport, Scenario, fault_matrix, run_three_parties
from .pdte import PdteParams, pdte_eval, pdte_preprocess, pdte_setup, run_party
from .tree import Leaf, Split, TreeArray, encode_tree, pad_size, pad_tree, plaintext_dte, random_tree

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ProtocolAbort", "FaultSpec", "RunReport", "Scenario", "fault_matrix",
    "run_three_parties", "PdteParams", "pdte_eval", "pdte_preprocess", "pdte_setup", "run_party",
    "Leaf", "Split", "TreeArray", "encode_tree", "pad_size", "pad_tree", "plaintext_dte", "random_tree",
]
