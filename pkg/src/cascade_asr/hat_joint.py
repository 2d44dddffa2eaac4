"""HAT joint layer: sigmoid blank, tied softmax labels, internal LM and fusion."""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .core import FusionWeights, JointParams, ModelParams
from .prediction_net import PredictionVector, predict

__all__ = [
    "JointParams",
    "FusionWeights",
    "FrameLabelScores",
    "ScoreDelta",
    "enc_contribution",
    "pred_contribution",
    "joint_hidden",
    "label_logits",
    "hat_scores",
    "ilm_label_scores",
    "weighted",
    "fused_token_score",
]


class FrameLabelScores(NamedTuple):
    log_blank: float
    log_labels: np.ndarray  # log[(1 - b) * softmax(label logits)]


class ScoreDelta(NamedTuple):
    """Per-source log-score increments for one token extension."""

    posterior: float = 0.0
    ilm: float = 0.0
    lm: float = 0.0
    context: float = 0.0


def enc_contribution(enc_frame, params: ModelParams) -> np.ndarray:
    enc_frame = np.asarray(enc_frame, dtype=np.float64)
    if enc_frame.shape != (params.d_enc,):
        raise ValueError(f"encoder frame must have shape ({params.d_enc},)")
    return enc_frame @ params.joint.enc_proj


def pred_contribution(pred: PredictionVector, params: ModelParams) -> np.ndarray:
    return pred.r @ params.joint.pred_proj + params.joint.bias


def joint_hidden(enc_frame, pred: PredictionVector, params: ModelParams) -> np.ndarray:
    return np.tanh(enc_contribution(enc_frame, params) + pred_contribution(pred, params))


def label_logits(hidden, params: ModelParams) -> np.ndarray:
    return np.asarray(hidden) @ params.joint.label_softmax


def hat_scores(enc_frame, pred: PredictionVector, params: ModelParams) -> FrameLabelScores:
    lb, lnb, lsm = kernels.joint_scores(
        enc_contribution(enc_frame, params),
        pred_contribution(pred, params)[None, :],
        params.joint.tied_embedding,
        params.joint.blank_row,
    )
    return FrameLabelScores(float(lb[0]), lnb[0] + lsm[0])


def ilm_label_scores(history: Sequence[int], params: ModelParams) -> np.ndarray:
    """log p_ILM(y | history): label posterior with the encoder zeroed, blank dropped."""
    pred = predict(history, params.prediction)
    _, _, lsm = kernels.joint_scores(
        np.zeros(params.d_h),
        pred_contribution(pred, params)[None, :],
        params.joint.tied_embedding,
        params.joint.blank_row,
    )
    return lsm[0]


def weighted(weight: float, value: float) -> float:
    # a zero weight must be an exact no-op even against -inf
    return 0.0 if weight == 0 else weight * value


def fused_token_score(delta: ScoreDelta, weights: FusionWeights) -> float:
    return (
        delta.posterior
        - weighted(weights.lambda2, delta.ilm)
        + weighted(weights.lambda1, delta.lm)
        + weighted(weights.beta, delta.context)
    )
