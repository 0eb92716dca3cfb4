"""Easeformer forecaster and its building blocks."""

from .attention import AttentionLayer, dense_attention, probsparse_attention, select_queries, sparsity_measure, top_count
from .config import MODE_LABELS, MODES, EaseformerConfig
from .eit import DistancePreferenceTable, EncoderInputTransformer, eit_transform
from .estimator import EaseformerForecaster
from .inputs import ModelInput, build_decoder_input, make_windows, session_starts
from .model import DistillLayer, Easeformer

__all__ = [
    "AttentionLayer",
    "DistancePreferenceTable",
    "DistillLayer",
    "Easeformer",
    "EaseformerConfig",
    "EaseformerForecaster",
    "EncoderInputTransformer",
    "MODES",
    "MODE_LABELS",
    "ModelInput",
    "build_decoder_input",
    "dense_attention",
    "eit_transform",
    "make_windows",
    "probsparse_attention",
    "select_queries",
    "session_starts",
    "sparsity_measure",
    "top_count",
]
