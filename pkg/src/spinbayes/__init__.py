"""Fault injection and online testing of Bayesian binarized networks on CIM crossbars."""

from .atpg import TestVectorSet, generate_test_vectors, repeatability_score
from .campaign import CampaignConfig, Sweep, classify_fault, roc_sweep, run_campaign
from .detector import UncertaintyProfile, fit_profile, run_test_session
from .faults import FaultContext, FaultSpec, Kind, Location, inject
from .inference import predict, predict_batch
from .network import BinaryNetwork, DropoutBank, GenState, Method, Sharing, forward
from .rng import RngStream
from .training import Dataset, DropoutConfig, TrainConfig, evaluate_accuracy, synth_dataset, train

__version__ = "0.1.0"

__all__ = [
    "BinaryNetwork", "CampaignConfig", "Dataset", "DropoutBank", "DropoutConfig",
    "FaultContext", "FaultSpec", "GenState", "Kind", "Location", "Method", "RngStream",
    "Sharing", "Sweep", "TestVectorSet", "TrainConfig", "UncertaintyProfile",
    "classify_fault", "evaluate_accuracy", "fit_profile", "forward", "generate_test_vectors",
    "inject", "predict", "predict_batch", "repeatability_score", "roc_sweep", "run_campaign",
    "run_test_session", "synth_dataset", "train",
]
