"""Streaming two-pass transducer decoding with HAT fusion, biasing and prefetch simulation."""

from .biasing import ContextualModel, build_context
from .core import EncoderOutputs, FusionWeights, ModelParams, Vocab, load_encoder, load_model
from .decoder import BeamConfig, NBestList, brute_force_posterior, decode_utterance, run_cascade
from .lm import NGramLm, estimate_ngram, load_ngram, rescore_nbest
from .streaming import EndpointConfig, LatencyReport, run_session

__version__ = "0.1.0"

__all__ = [
    "BeamConfig",
    "ContextualModel",
    "EncoderOutputs",
    "EndpointConfig",
    "FusionWeights",
    "LatencyReport",
    "ModelParams",
    "NBestList",
    "NGramLm",
    "Vocab",
    "brute_force_posterior",
    "build_context",
    "decode_utterance",
    "estimate_ngram",
    "load_encoder",
    "load_model",
    "load_ngram",
    "rescore_nbest",
    "run_cascade",
    "run_session",
]
