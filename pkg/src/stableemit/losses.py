"""Quantity and expected-latency regularizers plus the total objective.

l_total = (1 - lambda_ctc) * l_mocha + lambda_ctc * l_ctc
          + lambda_latency * l_latency + lambda_qua * l_qua

with the coupling rule that an active latency loss forces the quantity
weight to zero.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Node


@dataclass
class LossWeights:
    """Objective weights plus the decode threshold and mask slack."""

    lambda_ctc: float = 0.3
    lambda_qua: float = 2.0
    lambda_latency: float = 0.0
    lambda_se: float = 0.0
    delta: int = 0
    tau: float = 0.5

    def validate(self):
        if not 0.0 <= self.lambda_ctc <= 1.0:
            raise ValueError(f"lambda_ctc must be in [0, 1], got {self.lambda_ctc}")
        if not 0.0 <= self.lambda_se < 1.0:
            raise ValueError(f"lambda_se must be in [0, 1), got {self.lambda_se}")
        if self.lambda_qua < 0.0 or self.lambda_latency < 0.0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda_latency > 0.0 and self.lambda_qua > 0.0:
            raise ValueError(
                "an active latency loss requires lambda_qua = 0")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        return self


@dataclass
class LossBundle:
    l_mocha: Node
    l_ctc: Node
    l_qua: Node
    l_latency: Node
    l_total: Node

    def scalars(self):
        return {
            "l_mocha": float(self.l_mocha.value),
            "l_ctc": float(self.l_ctc.value),
            "l_qua": float(self.l_qua.value),
            "l_latency": float(self.l_latency.value),
            "l_total": float(self.l_total.value),
        }


def effective_weights(weights, epoch, warmup_epochs=0):
    """Latency/quantity terms stay disabled during warm-up epochs."""
    if epoch < warmup_epochs:
        return replace(weights, lambda_latency=0.0, lambda_qua=0.0)
    return weights


def quantity_loss(alpha, n_tokens):
    """| n_tokens - sum of all alignment mass |."""
    total = ad.reduce_sum(alpha)
    return ad.abs_(float(n_tokens) - total)


def expected_boundary(alpha_row):
    """Sum_j j * alpha[j] with 1-based j; 0 for an all-zero row."""
    row = alpha_row if isinstance(alpha_row, Node) else ad.constant(alpha_row)
    n_frames = row.value.shape[-1]
    j = np.arange(1, n_frames + 1, dtype=np.float64)
    return ad.reduce_sum(row * ad.constant(j))


def expected_boundaries(alpha):
    """Per-row expected boundary indices, `[U]`."""
    n_frames = alpha.value.shape[1]
    j = np.arange(1, n_frames + 1, dtype=np.float64).reshape(n_frames, 1)
    return ad.reshape(ad.matmul(alpha, ad.constant(j)), (alpha.value.shape[0],))


def latency_loss(b_ref, alpha):
    """Mean absolute gap between reference and expected boundaries.

    The reference is constant; gradients flow through alpha only. With
    CTC-derived references this is the synchronous-training loss, with
    external references minimum-latency training.
    """
    ref = getattr(b_ref, "boundaries", b_ref)
    ref = np.asarray([float(b) for b in ref])
    if ref.shape[0] != alpha.value.shape[0]:
        raise ValueError(
            f"reference length {ref.shape[0]} != alignment rows "
            f"{alpha.value.shape[0]}")
    b_hat = expected_boundaries(alpha)
    return ad.reduce_mean(ad.abs_(ad.constant(ref) - b_hat))


def total_loss(l_mocha, l_ctc, l_qua, l_latency, weights):
    """Compose the training objective; inactive terms may be None."""
    weights.validate()
    zero = ad.constant(np.array(0.0))
    l_mocha = l_mocha if l_mocha is not None else zero
    l_ctc = l_ctc if l_ctc is not None else zero
    l_qua = l_qua if l_qua is not None else zero
    l_latency = l_latency if l_latency is not None else zero
    total = (1.0 - weights.lambda_ctc) * l_mocha
    if weights.lambda_ctc > 0.0:
        total = total + weights.lambda_ctc * l_ctc
    if weights.lambda_latency > 0.0:
        total = total + weights.lambda_latency * l_latency
    if weights.lambda_qua > 0.0:
        total = total + weights.lambda_qua * l_qua
    return LossBundle(l_mocha=l_mocha, l_ctc=l_ctc, l_qua=l_qua,
                      l_latency=l_latency, l_total=total)
