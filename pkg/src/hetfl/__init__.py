"""Federated learning with dynamic, client-dependent reduced local models."""

from .params import LayerSlice, Mask, ParamVector, apply_mask, masked_axpy, reduction_noise
from .models import Batch, ModelSpec, accuracy, gradient, loss, smoothness_estimate
from .masks import MaskStrategy, check_noise_bound, coverage, gen_mask, optimize_assignment
from .engine import ClientSpec, Federation, RoundRecord, Schedule, aggregate, local_train, run_round, theorem_lr
from .experiment import run_experiment
from .config import ExperimentConfig, parse_config

__version__ = "0.1.0"
