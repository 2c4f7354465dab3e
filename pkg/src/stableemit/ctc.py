"""CTC loss, Viterbi best-path alignment, and boundary extraction.

The loss runs the standard forward recursion in log space on the
blank-interleaved extended target, inside the autodiff graph so gradients
flow to the log-probabilities. Viterbi is the max-product analogue with
backpointers (no gradients). Boundaries are read off the best path, one
frame index per target token.
"""

import json
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Node

# log-space floor for impossible states
LOG_ZERO = -1e30


@dataclass
class BoundarySequence:
    """Per-token 1-based boundary frame indices with provenance."""

    boundaries: List[int]
    source: str  # ground-truth | ctc-viterbi | external-file
    frame_ms: float

    VALID_SOURCES = ("ground-truth", "ctc-viterbi", "external-file")

    def __post_init__(self):
        self.boundaries = [int(b) for b in self.boundaries]
        if self.source not in self.VALID_SOURCES:
            raise ValueError(f"unknown boundary source {self.source!r}")
        if any(b < 1 for b in self.boundaries):
            raise ValueError("boundaries are 1-based frame indices")
        if any(b2 < b1 for b1, b2 in zip(self.boundaries, self.boundaries[1:])):
            raise ValueError("boundaries must be non-decreasing")

    def __len__(self):
        return len(self.boundaries)


def write_boundaries(path, items):
    """Write (utt_id, BoundarySequence) pairs as JSON lines."""
    with open(path, "w") as fh:
        for utt_id, bs in items:
            fh.write(json.dumps({
                "utt_id": utt_id,
                "boundaries": bs.boundaries,
                "source": bs.source,
                "frame_ms": bs.frame_ms,
            }) + "\n")


def read_boundaries(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out[rec["utt_id"]] = BoundarySequence(
                boundaries=rec["boundaries"],
                source=rec["source"],
                frame_ms=rec["frame_ms"],
            )
    return out


@dataclass
class CtcLattice:
    """Log-probability lattice plus target for the CTC recursions.

    ``log_probs`` is `[T, C]` with the blank symbol in the last column by
    convention; each row must be a log-distribution.
    """

    log_probs: Node
    target: List[int]
    blank: int

    @property
    def extended_target(self):
        ext = [self.blank]
        for y in self.target:
            ext.append(int(y))
            ext.append(self.blank)
        return ext


def make_lattice(log_probs, target, blank=None):
    node = log_probs if isinstance(log_probs, Node) else ad.constant(log_probs)
    n_frames, n_symbols = node.value.shape
    if blank is None:
        blank = n_symbols - 1
    target = [int(y) for y in target]
    if any(not 0 <= y < n_symbols for y in target):
        raise ValueError("target symbol outside lattice alphabet")
    if any(y == blank for y in target):
        raise ValueError("target may not contain the blank symbol")
    row_lse = np.logaddexp.reduce(node.value, axis=1)
    if not np.all(np.abs(row_lse) < 1e-6):
        raise ValueError("each lattice row must be a log-distribution")
    return CtcLattice(log_probs=node, target=target, blank=blank)


def _skip_mask(ext, blank):
    """0 where the s-2 transition is legal, LOG_ZERO where it is not."""
    n_states = len(ext)
    mask = np.full(n_states, LOG_ZERO)
    for s in range(2, n_states):
        if ext[s] != blank and ext[s] != ext[s - 2]:
            mask[s] = 0.0
    return mask


def ctc_loss(lattice):
    """Negative log-probability of all paths collapsing to the target."""
    n_frames = lattice.log_probs.value.shape[0]
    n_tokens = len(lattice.target)
    if n_tokens > n_frames:
        raise ValueError(
            f"no valid CTC path: {n_tokens} tokens need at least "
            f"{n_tokens} of {n_frames} frames")
    ext = lattice.extended_target
    n_states = len(ext)
    lp_ext = ad.gather(lattice.log_probs, ext, axis=1)  # [T, S]

    init = np.full(n_states, LOG_ZERO)
    init[0] = 0.0
    if n_states > 1:
        init[1] = 0.0
    log_alpha = lp_ext[0] + ad.constant(init)

    skip = _skip_mask(ext, lattice.blank)
    has_skips = bool(np.any(skip == 0.0))
    neg1 = ad.constant(np.full(1, LOG_ZERO))
    neg2 = ad.constant(np.full(2, LOG_ZERO))
    for t in range(1, n_frames):
        stay = log_alpha
        step = ad.concat([neg1, log_alpha[:-1]], axis=0)
        acc = ad.logaddexp(stay, step)
        if has_skips and n_states > 2:
            skip_from = ad.concat([neg2, log_alpha[:-2]], axis=0)
            acc = ad.logaddexp(acc, skip_from + ad.constant(skip))
        log_alpha = acc + lp_ext[t]

    if n_states == 1:
        total = log_alpha[0]
    else:
        total = ad.logaddexp(log_alpha[n_states - 1], log_alpha[n_states - 2])
    return ad.neg(total)


def viterbi_alignment(lattice):
    """Most probable single CTC path, as a per-frame label sequence.

    Ties between predecessors prefer staying over advancing one state over
    skipping, which keeps the result deterministic.
    """
    log_probs = lattice.log_probs.value
    n_frames = log_probs.shape[0]
    target = lattice.target
    n_tokens = len(target)
    if n_tokens > n_frames:
        raise ValueError("no valid CTC path: more tokens than frames")
    ext = lattice.extended_target
    n_states = len(ext)
    skip_ok = _skip_mask(ext, lattice.blank) == 0.0

    dp = np.full((n_frames, n_states), LOG_ZERO)
    back = np.zeros((n_frames, n_states), dtype=np.int64)
    dp[0, 0] = log_probs[0, ext[0]]
    if n_states > 1:
        dp[0, 1] = log_probs[0, ext[1]]
        back[0, 1] = 1
    for t in range(1, n_frames):
        for s in range(n_states):
            best_prev, best_score = s, dp[t - 1, s]
            if s >= 1 and dp[t - 1, s - 1] > best_score:
                best_prev, best_score = s - 1, dp[t - 1, s - 1]
            if s >= 2 and skip_ok[s] and dp[t - 1, s - 2] > best_score:
                best_prev, best_score = s - 2, dp[t - 1, s - 2]
            dp[t, s] = best_score + log_probs[t, ext[s]]
            back[t, s] = best_prev

    final_states = [n_states - 1]
    if n_states > 1:
        final_states.append(n_states - 2)
    end = max(final_states, key=lambda s: dp[n_frames - 1, s])
    if dp[n_frames - 1, end] <= LOG_ZERO:
        raise ValueError("no valid CTC path reaches a final state")

    states = [end]
    for t in range(n_frames - 1, 0, -1):
        states.append(back[t, states[-1]])
    states.reverse()
    return [ext[s] for s in states]


def boundaries_from_alignment(path, target, blank, frame_ms,
                              style="onset", log_probs=None):
    """Token boundaries read off a best-path label sequence.

    ``onset`` takes the first frame of each token run (the spike onset);
    ``peak`` takes the run's highest-probability frame and needs
    ``log_probs``.
    """
    if style not in ("onset", "peak"):
        raise ValueError(f"unknown boundary style {style!r}")
    if style == "peak" and log_probs is None:
        raise ValueError("peak boundaries need the lattice log-probs")
    runs = []  # (label, first_frame, last_frame) 1-based
    prev = None
    for t, lab in enumerate(path, start=1):
        if lab == blank:
            prev = None
            continue
        if lab == prev:
            runs[-1] = (lab, runs[-1][1], t)
        else:
            runs.append((lab, t, t))
        prev = lab
    if [r[0] for r in runs] != [int(y) for y in target]:
        raise ValueError("path does not collapse to the target")
    boundaries = []
    for lab, first, last in runs:
        if style == "onset":
            boundaries.append(first)
        else:
            lp = np.asarray(log_probs)
            frames = np.arange(first, last + 1)
            boundaries.append(int(frames[np.argmax(lp[first - 1:last, lab])]))
    return BoundarySequence(boundaries=boundaries, source="ctc-viterbi",
                            frame_ms=frame_ms)
