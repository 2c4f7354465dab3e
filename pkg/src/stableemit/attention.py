"""Monotonic selection probabilities, expected alignment, and chunkwise weights.

Training-time path: selection probabilities ``p`` are optionally discounted
by a constant factor, clamped, and fed to the expected-alignment recurrence
(either the literal left-to-right form or the scan-based parallel form).
Chunkwise weights ``beta`` spread each row of ``alpha`` over a local window
of ``w`` frames. Test-time path: a hard boundary plus softmax attention over
the trailing window.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Node

# selection probabilities are clamped to this range before the alignment
# recurrences so the division by p never blows up
P_CLAMP = 1e-12


@dataclass
class SelectionMatrix:
    """Per-(token, frame) boundary selection probabilities.

    ``p`` holds the raw sigmoid outputs, ``p_discounted`` the training-time
    values ``(1 - lambda_se) * p``.
    """

    p: Node
    p_discounted: Node
    lambda_se: float


@dataclass
class AlignmentPosterior:
    """Expected alignment weights and their chunkwise spread."""

    alpha: Node
    beta: Node
    chunk_width: int


@dataclass
class PathMask:
    """Zeroes alignment mass at frames beyond a reference boundary + slack."""

    b_ref: object  # BoundarySequence or plain sequence of 1-based frame indices
    delta: int = 0

    def frame_indices(self):
        b = getattr(self.b_ref, "boundaries", self.b_ref)
        return [int(x) for x in b]

    def matrix(self, n_rows, n_frames):
        """0/1 matrix, row i zeroed for frames j > b_i + delta.

        Rows beyond the reference length (e.g. an end-of-sequence row) stay
        unmasked.
        """
        if self.delta < 0:
            raise ValueError("mask slack must be non-negative")
        b = self.frame_indices()
        if any(x2 < x1 for x1, x2 in zip(b, b[1:])):
            raise ValueError("reference boundaries must be non-decreasing")
        if b and (b[0] < 1 or b[-1] > n_frames):
            raise ValueError("reference boundaries out of range")
        mask = np.ones((n_rows, n_frames))
        cols = np.arange(1, n_frames + 1)
        for i in range(min(n_rows, len(b))):
            mask[i, cols > b[i] + self.delta] = 0.0
        return mask


@dataclass
class EnergyNet:
    """Additive energy network: score(s, h) = v . tanh(W s + V h + b).

    The monotonic variant rescales by a learned gain over ||v|| and adds a
    learned offset so the sigmoid starts biased toward not halting.
    """

    W: Node
    V: Node
    b: Node
    v: Node
    g: Optional[Node] = None
    r: Optional[Node] = None


def project_keys(net, keys):
    """Precompute V h for all frames; reusable across decoder steps."""
    return ad.matmul(keys, net.V)


def energies(net, queries, keys, key_proj=None):
    """Score every (query, key) pair.

    Args:
        net: EnergyNet weights.
        queries: `[U, d_q]` node (decoder states).
        keys: `[T, d_k]` node (encoder outputs).
        key_proj: optional cached result of :func:`project_keys`.
    Returns:
        `[U, T]` energy node.
    """
    qproj = ad.matmul(queries, net.W)
    kproj = key_proj if key_proj is not None else project_keys(net, keys)
    a_dim = net.v.value.shape[0]
    v_col = ad.reshape(net.v, (a_dim, 1))
    n_q = queries.value.shape[0]
    n_frames = keys.value.shape[0]
    rows = []
    for i in range(n_q):
        h = ad.tanh(kproj + (qproj[i] + net.b))
        rows.append(ad.reshape(ad.matmul(h, v_col), (n_frames,)))
    e = rows[0] if n_q == 1 else None
    e = ad.stack_rows(rows) if n_q > 1 else ad.reshape(e, (1, n_frames))
    if net.g is not None:
        v_norm = ad.sqrt(ad.reduce_sum(net.v * net.v))
        e = e * (net.g / v_norm)
    if net.r is not None:
        e = e + net.r
    return e


def selection_probabilities(decoder_states, encoder_outputs, net,
                            noise_std=0.0, training=False, rng=None,
                            lambda_se=0.0):
    """Monotonic selection probabilities p = sigmoid(e + n).

    Pre-sigmoid Gaussian noise is injected only when ``training`` and
    ``noise_std > 0`` (it pushes p toward discreteness); evaluation is
    noise-free and therefore deterministic.
    """
    e = energies(net, decoder_states, encoder_outputs)
    if training and noise_std > 0.0:
        if rng is None:
            raise ValueError("training-time noise requires an rng")
        noise = rng.normals(e.value.shape, std=noise_std)
        e = e + ad.constant(noise)
    p = ad.sigmoid(e)
    return discount(SelectionMatrix(p=p, p_discounted=p, lambda_se=0.0), lambda_se)


def discount(sel, lambda_se):
    """Apply the constant training-time discount p' = (1 - lambda_se) p."""
    if not 0.0 <= lambda_se < 1.0:
        raise ValueError(f"discount factor must be in [0, 1), got {lambda_se}")
    if lambda_se == 0.0:
        p_disc = sel.p
    else:
        p_disc = sel.p * (1.0 - lambda_se)
    return SelectionMatrix(p=sel.p, p_discounted=p_disc, lambda_se=lambda_se)


def effective_threshold(tau, lambda_se):
    """Raw-p threshold the discounted training drives boundaries toward.

    Training against p' = (1 - lambda_se) p with full mass recovery pushes
    raw p at boundaries to tau / (1 - lambda_se), while decoding keeps
    thresholding raw p at tau.
    """
    return tau / (1.0 - lambda_se)


def _clamped(p_eff):
    p_eff = p_eff if isinstance(p_eff, Node) else ad.constant(p_eff)
    return ad.clamp(p_eff, P_CLAMP, 1.0 - P_CLAMP)


def _initial_row(n_frames):
    row = np.zeros(n_frames)
    row[0] = 1.0
    return ad.constant(row)


def expected_alignment_recursive(p_eff, mask=None):
    """Expected alignment by the literal left-to-right recurrence.

    alpha[i, j] = p[i, j] * ((1 - p[i, j-1]) * alpha[i, j-1] / p[i, j-1]
                             + alpha[i-1, j])

    with the virtual previous row [1, 0, ..., 0]. When a mask is given,
    masked cells are zeroed inside the recurrence, so later rows see the
    masked values.
    """
    p = _clamped(p_eff)
    n_rows, n_frames = p.value.shape
    mask_arr = mask.matrix(n_rows, n_frames) if mask is not None else None
    prev = _initial_row(n_frames)
    rows = []
    for i in range(n_rows):
        cells = []
        for j in range(n_frames):
            carried = prev[j]
            if j > 0:
                carried = carried + (1.0 - p[i, j - 1]) * cells[j - 1] / p[i, j - 1]
            cell = p[i, j] * carried
            if mask_arr is not None and mask_arr[i, j] == 0.0:
                cell = cell * 0.0
            cells.append(cell)
        row = ad.concat([ad.reshape(c, (1,)) for c in cells], axis=0)
        rows.append(row)
        prev = row
    return ad.stack_rows(rows)


def alignment_row_parallel(p_row, prev_row, mask_row=None):
    """One row of the expected alignment via cumulative scans.

    Closed form of the recurrence for row i given row i-1:

        alpha_i = p_i * cumprod(1 - p_i) * cumsum(alpha_{i-1} / cumprod(1 - p_i))

    where cumprod is exclusive and computed in log space with a floor so the
    denominator never vanishes; the denominator is additionally clamped to
    [floor, 1]. ``mask_row`` (0/1 constants) zeroes cells inside the
    recurrence so downstream rows see the masked values.
    """
    pi = ad.clamp(p_row if isinstance(p_row, Node) else ad.constant(p_row),
                  P_CLAMP, 1.0 - P_CLAMP)
    log1m = ad.log(ad.clamp(1.0 - pi, lo=ad.CUMPROD_FLOOR))
    # exclusive scan: prod over l < j of (1 - p[i, l])
    cp = ad.exp(ad.cumsum(log1m) - log1m)
    denom = ad.clamp(cp, ad.CUMPROD_FLOOR, 1.0)
    row = pi * cp * ad.cumsum(prev_row / denom)
    if mask_row is not None:
        row = row * ad.constant(np.asarray(mask_row, dtype=np.float64))
    return row


def expected_alignment_parallel(p_eff, mask=None):
    """Expected alignment via cumulative sum/product scans (all rows)."""
    p = _clamped(p_eff)
    n_rows, n_frames = p.value.shape
    mask_arr = mask.matrix(n_rows, n_frames) if mask is not None else None
    prev = _initial_row(n_frames)
    rows = []
    for i in range(n_rows):
        row = alignment_row_parallel(
            p[i], prev, mask_arr[i] if mask_arr is not None else None)
        rows.append(row)
        prev = row
    return ad.stack_rows(rows)


@lru_cache(maxsize=128)
def _window_matrix(n_frames, width):
    """band[l, k] = 1 iff frame l falls in the width-window ending at k."""
    cols = np.arange(n_frames)
    rows = np.arange(n_frames)[:, None]
    return ((rows <= cols) & (rows > cols - width)).astype(np.float64)


def chunkwise_weights(alpha, chunk_energies, width):
    """Spread alignment mass over a trailing window of ``width`` frames.

    beta[i, j] = sum_{k=j}^{j+width-1} alpha[i, k] * exp(u[i, j]) / D[i, k]
    where D[i, k] sums exp(u) over the window ending at k. Row mass of beta
    equals row mass of alpha by construction.
    """
    if width < 1:
        raise ValueError("chunk width must be >= 1")
    alpha = alpha if isinstance(alpha, Node) else ad.constant(alpha)
    u = chunk_energies if isinstance(chunk_energies, Node) else ad.constant(chunk_energies)
    n_frames = alpha.value.shape[1]
    if width == 1:
        return alpha
    m = ad.reduce_max(u, axis=1, keepdims=True).detach()
    eu = ad.clamp(ad.exp(u - m), lo=1e-30)
    band = _window_matrix(n_frames, width)
    denom = ad.matmul(eu, ad.constant(band))
    spread = ad.matmul(alpha / denom, ad.constant(band.T))
    return eu * spread


def hard_chunk_attend(encoder_outputs, boundary_j, width, chunk_energy_row):
    """Test-time context vector: softmax over the window ending at the boundary.

    Args:
        encoder_outputs: `[T, d]` array.
        boundary_j: 1-based boundary frame.
        width: chunk width in frames.
        chunk_energy_row: `[T]` array of chunk energies for this token.
    Returns:
        `[d]` context vector.
    """
    enc = np.asarray(encoder_outputs, dtype=np.float64)
    u = np.asarray(chunk_energy_row, dtype=np.float64)
    n_frames = enc.shape[0]
    if not 1 <= boundary_j <= n_frames:
        raise ValueError(f"boundary {boundary_j} out of range [1, {n_frames}]")
    lo = max(1, boundary_j - width + 1)
    window = u[lo - 1:boundary_j]
    window = window - window.max()
    weights = np.exp(window)
    weights /= weights.sum()
    return weights @ enc[lo - 1:boundary_j]
