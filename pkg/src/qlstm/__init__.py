"""Quantization-aware Bi-LSTM sequence labeling with hand-derived backprop."""

from .data import Dataset, SynthConfig, batch_iter, read_conll, synth_task
from .estimator import LstmTagger
from .lstm import GateMode, GateSpec, LstmParams, bilstm_forward, init_params
from .model import SequenceTagger
from .quantize import (
    GumbelCfg,
    QuantDecomp,
    RoundClipScheme,
    binary_weight_quantize,
    gumbel_gate,
    quant_decompose,
    round_clip,
)
from .train import (
    TrainConfig,
    TrainReport,
    checkpoint_load,
    checkpoint_save,
    chunk_f1,
    evaluate,
    parse_settings,
    train,
)

__all__ = [
    "Dataset", "SynthConfig", "batch_iter", "read_conll", "synth_task",
    "LstmTagger", "GateMode", "GateSpec", "LstmParams", "bilstm_forward",
    "init_params", "SequenceTagger", "GumbelCfg", "QuantDecomp",
    "RoundClipScheme", "binary_weight_quantize", "gumbel_gate",
    "quant_decompose", "round_clip", "TrainConfig", "TrainReport",
    "checkpoint_load", "checkpoint_save", "chunk_f1", "evaluate",
    "parse_settings", "train",
]

__version__ = "0.1.0"
