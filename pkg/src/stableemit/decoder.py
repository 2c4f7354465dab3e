"""Test-time streaming decoder: threshold boundary detection, hard chunk
attention, greedy token selection, and emission recording.

Decoding is deterministic: token i scans encoder frames left to right from
the previous boundary (a boundary may repeat a frame) and emits at the
first frame whose selection probability reaches the threshold. Tokens whose
probability never reaches the threshold are never emitted; that is the
deletion mechanism the training-time discount targets.

The offline entry point is a thin wrapper over the incremental session, so
online and offline decoding are identical by construction.
"""

import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import attention
from .model import EOS_ID


@dataclass
class EmissionRecord:
    """One decoded token: identity, boundary frame, p that crossed tau."""

    token: int
    frame: int  # 1-based encoder frame
    p: float
    index: int  # 1-based output position


@dataclass
class DecodeConfig:
    tau: float = 0.5
    max_tokens: int = 200
    discount_at_test: bool = False
    lambda_se: float = 0.0
    max_lookahead: Optional[int] = None  # frames past the previous boundary

    def validate(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")
        if self.discount_at_test and not 0.0 <= self.lambda_se < 1.0:
            raise ValueError("test-time discount factor must be in [0, 1)")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        return self


class IncrementalSession:
    """Push frames in arrival order; emissions appear as soon as possible.

    The session owns a streaming encoder and the decoder state. ``close``
    marks the end of the utterance; a token still scanning then terminates
    the session with reason ``no-boundary``.
    """

    def __init__(self, model, config=None):
        self.model = model
        self.config = (config or DecodeConfig()).validate()
        self._enc = model.encoder_session()
        state = model.initial_decoder_state()
        # consuming the start symbol yields the query for the first token
        self._state = model.advance_decoder(state, EOS_ID)
        self._scan_j = 1
        self._prev_boundary = 1
        self._index = 1
        self._closed = False
        self.done = False
        self.termination = None
        self.emissions: List[EmissionRecord] = []

    def push_frames(self, frames):
        """Feed raw feature frames; returns emissions triggered by them."""
        if self._closed:
            raise RuntimeError("push_frames after close")
        self._enc.push(frames)
        return self._scan()

    def close(self):
        """No more frames; flush and report the termination reason."""
        if not self._closed:
            self._closed = True
            emitted = self._scan()
            if not self.done:
                self.done = True
                self.termination = "no-boundary"
            return emitted
        return []

    def _emit_context(self, boundary_j):
        width = self.model.config.chunk_width
        frames = self._enc.frames
        lo = max(1, boundary_j - width + 1)
        u_row = np.zeros(boundary_j)
        u_row[lo - 1:] = self.model.chunk_energy_row(
            self._state.h, frames[lo - 1:boundary_j])
        return attention.hard_chunk_attend(
            np.stack(frames[:boundary_j]), boundary_j, width, u_row)

    def _scan(self):
        new_emissions = []
        cfg = self.config
        frames = self._enc.frames
        while not self.done and self._scan_j <= len(frames):
            j = self._scan_j
            if (cfg.max_lookahead is not None
                    and j - self._prev_boundary > cfg.max_lookahead):
                self.done = True
                self.termination = "no-boundary"
                break
            p_raw = self.model.selection_p(self._state.h, frames[j - 1])
            p_eff = (1.0 - cfg.lambda_se) * p_raw if cfg.discount_at_test else p_raw
            if p_eff < cfg.tau:
                self._scan_j += 1
                continue

            context = self._emit_context(j)
            dist = self.model.output_distribution(self._state.h, context)
            token = int(np.argmax(dist))
            if token == EOS_ID:
                self.done = True
                self.termination = "eos"
                break
            record = EmissionRecord(token=token, frame=j, p=float(p_eff),
                                    index=self._index)
            self.emissions.append(record)
            new_emissions.append(record)
            self._state.context = context
            self._state = self.model.advance_decoder(self._state, token)
            self._prev_boundary = j
            self._scan_j = j  # the next boundary may reuse this frame
            self._index += 1
            if self._index > cfg.max_tokens:
                self.done = True
                self.termination = "max-tokens"
        return new_emissions


def greedy_streaming_decode(model, features, config=None):
    """Offline decode = push everything, close; returns (emissions, reason)."""
    session = IncrementalSession(model, config)
    session.push_frames(np.asarray(features, dtype=np.float64))
    session.close()
    return session.emissions, session.termination


def write_emissions(path, per_utterance):
    """JSON lines {utt_id, token, i, frame, p} for every emission."""
    with open(path, "w") as fh:
        for utt_id, emissions in per_utterance:
            for rec in emissions:
                fh.write(json.dumps({
                    "utt_id": utt_id,
                    "token": rec.token,
                    "i": rec.index,
                    "frame": rec.frame,
                    "p": rec.p,
                }) + "\n")


def read_emissions(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.setdefault(rec["utt_id"], []).append(EmissionRecord(
                token=rec["token"], frame=rec["frame"], p=rec["p"],
                index=rec["i"]))
    return out
