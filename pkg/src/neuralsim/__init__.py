"""Bit-exact reference and event-driven simulation of single-timestep spiking CNNs."""

from .compare import Comparison, compare_runs
from .container import InputBundle, load_config, load_inputs, load_model, save_inputs, save_model
from .epa import CycleStats, EpaConfig, run_layer_eventdriven
from .generate import random_inputs, toy_qkfresnet
from .graph import LayerKind, LayerSpec, ModelError, ModelGraph, Scores, avg_pool_ref, dense_conv_ref, fc_ref
from .metrics import PowerModel, RunMetrics, count_synops, derive_efficiency, energy_per_frame
from .qkformer import MaskAxis, QkBlockSpec, onthefly_writeback, qk_attention_ref
from .reference import ReferenceResult, run_reference
from .simulator import EventDrivenResult, run_eventdriven, run_qk_block
from .spike_core import FixedPointFormat, FixedTensor, LifParams, LifState, ResetMode, SpikeTensor, lif_step, quantize
from .w2ttfs import ttfs_fc_exact, w2ttfs_encode
from .wtfc import run_wtfc

__version__ = "0.1.0"

__all__ = [
    "Comparison",
    "CycleStats",
    "EpaConfig",
    "EventDrivenResult",
    "FixedPointFormat",
    "FixedTensor",
    "InputBundle",
    "LayerKind",
    "LayerSpec",
    "LifParams",
    "LifState",
    "MaskAxis",
    "ModelError",
    "ModelGraph",
    "PowerModel",
    "QkBlockSpec",
    "ReferenceResult",
    "ResetMode",
    "RunMetrics",
    "Scores",
    "SpikeTensor",
    "avg_pool_ref",
    "compare_runs",
    "count_synops",
    "dense_conv_ref",
    "derive_efficiency",
    "energy_per_frame",
    "fc_ref",
    "lif_step",
    "load_config",
    "load_inputs",
    "load_model",
    "onthefly_writeback",
    "qk_attention_ref",
    "quantize",
    "random_inputs",
    "run_eventdriven",
    "run_layer_eventdriven",
    "run_qk_block",
    "run_reference",
    "run_wtfc",
    "save_inputs",
    "save_model",
    "toy_qkfresnet",
    "ttfs_fc_exact",
    "w2ttfs_encode",
]
