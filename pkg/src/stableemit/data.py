"""Deterministic synthetic streaming corpus with known token boundaries.

Each utterance is a sequence of segments. A segment carries one content
token: its frames repeat that token's fixed template vector plus Gaussian
noise, and the token's ground-truth boundary is the segment's final frame.
Everything is a pure function of the corpus spec (seed included), so any
run can regenerate bit-identical data.

Token id 0 is reserved for end-of-sequence; content tokens are 1..vocab.
"""

import json
import os
from dataclasses import asdict, dataclass, field
from typing import List

import numpy as np

from . import VERSION_STRING
from .ctc import BoundarySequence
from .rng import PRNG_SPEC, Rng, derive_seed

FEATURE_DTYPE = "<f4"


class CorpusError(ValueError):
    """Manifest/payload mismatch or corrupt corpus files."""


@dataclass
class CorpusSpec:
    n_utts: int = 2000
    vocab: int = 20
    seg_len_min: int = 3
    seg_len_max: int = 8
    noise: float = 0.1
    input_dim: int = 8
    min_segments: int = 2
    max_segments: int = 12
    frame_ms: float = 40.0
    seed: int = 0

    def validate(self):
        if self.vocab < 3:
            raise ValueError("vocab must be >= 3 (plus the reserved eos token)")
        if self.seg_len_min < 2:
            raise ValueError("segment length must be >= 2")
        if self.seg_len_max < self.seg_len_min:
            raise ValueError("empty segment length range")
        if self.min_segments < 1 or self.max_segments < self.min_segments:
            raise ValueError("invalid segment count range")
        if self.n_utts < 0 or self.input_dim < 1:
            raise ValueError("invalid corpus size")
        if self.noise < 0:
            raise ValueError("noise level must be non-negative")
        return self


@dataclass
class Utterance:
    utt_id: str
    features: np.ndarray  # [T, input_dim]
    tokens: List[int]
    boundaries: BoundarySequence  # ground-truth segment end frames
    seed: int

    @property
    def n_frames(self):
        return self.features.shape[0]


def token_templates(spec):
    """Fixed unit-norm template vector per content token, `[vocab+1, dim]`.

    Row 0 (the eos id) is zero and never used as a segment.
    """
    rng = Rng(derive_seed(spec.seed, "templates"))
    templates = np.zeros((spec.vocab + 1, spec.input_dim))
    for v in range(1, spec.vocab + 1):
        vec = rng.normals((spec.input_dim,))
        templates[v] = vec / np.linalg.norm(vec)
    return templates


def generate_utterance(spec, templates, index):
    seed = derive_seed(spec.seed, "utt", index)
    rng = Rng(seed)
    n_segments = rng.randint(spec.min_segments, spec.max_segments)
    tokens = [rng.randint(1, spec.vocab) for _ in range(n_segments)]
    lengths = [rng.randint(spec.seg_len_min, spec.seg_len_max)
               for _ in range(n_segments)]
    chunks = []
    for tok, length in zip(tokens, lengths):
        seg = np.tile(templates[tok], (length, 1))
        if spec.noise > 0:
            seg = seg + rng.normals(seg.shape, std=spec.noise)
        chunks.append(seg)
    features = np.concatenate(chunks, axis=0)
    boundaries = BoundarySequence(
        boundaries=list(np.cumsum(lengths)),
        source="ground-truth",
        frame_ms=spec.frame_ms,
    )
    return Utterance(utt_id=f"utt{index:05d}", features=features,
                     tokens=tokens, boundaries=boundaries, seed=seed)


def generate_corpus(spec):
    spec.validate()
    templates = token_templates(spec)
    return [generate_utterance(spec, templates, i) for i in range(spec.n_utts)]


def write_corpus(corpus, spec, out_dir):
    """features.bin (f32 LE) + manifest.json + transcripts.jsonl."""
    os.makedirs(out_dir, exist_ok=True)
    records = []
    offset = 0
    with open(os.path.join(out_dir, "features.bin"), "wb") as fh:
        for utt in corpus:
            payload = utt.features.astype(FEATURE_DTYPE).tobytes()
            fh.write(payload)
            records.append({
                "utt_id": utt.utt_id,
                "T": int(utt.n_frames),
                "dim": int(utt.features.shape[1]),
                "offset": offset,
            })
            offset += len(payload)
    manifest = {
        "format_version": 1,
        "version": VERSION_STRING,
        "seed": spec.seed,
        "prng": PRNG_SPEC,
        "spec": asdict(spec),
        "feature_dtype": FEATURE_DTYPE,
        "records": records,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    with open(os.path.join(out_dir, "transcripts.jsonl"), "w") as fh:
        for utt in corpus:
            fh.write(json.dumps({
                "utt_id": utt.utt_id,
                "tokens": utt.tokens,
                "boundaries": utt.boundaries.boundaries,
                "source": utt.boundaries.source,
                "frame_ms": utt.boundaries.frame_ms,
                "seed": utt.seed,
            }) + "\n")


def read_corpus(in_dir):
    """Load a corpus directory; returns (utterances, manifest)."""
    manifest_path = os.path.join(in_dir, "manifest.json")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusError(f"cannot read manifest: {exc}") from exc

    transcripts = {}
    with open(os.path.join(in_dir, "transcripts.jsonl")) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            transcripts[rec["utt_id"]] = rec
    if len(transcripts) != len(manifest["records"]):
        raise CorpusError(
            f"transcript count {len(transcripts)} != manifest record count "
            f"{len(manifest['records'])}")

    feat_path = os.path.join(in_dir, "features.bin")
    file_size = os.path.getsize(feat_path)
    itemsize = np.dtype(FEATURE_DTYPE).itemsize
    utts = []
    with open(feat_path, "rb") as fh:
        for rec in manifest["records"]:
            n_bytes = rec["T"] * rec["dim"] * itemsize
            if rec["offset"] + n_bytes > file_size:
                raise CorpusError(
                    f"feature payload for {rec['utt_id']} is truncated")
            fh.seek(rec["offset"])
            raw = fh.read(n_bytes)
            if len(raw) != n_bytes:
                raise CorpusError(
                    f"feature payload for {rec['utt_id']} is truncated")
            feats = np.frombuffer(raw, dtype=FEATURE_DTYPE).astype(np.float64)
            feats = feats.reshape(rec["T"], rec["dim"])
            tr = transcripts.get(rec["utt_id"])
            if tr is None:
                raise CorpusError(f"missing transcript for {rec['utt_id']}")
            utts.append(Utterance(
                utt_id=rec["utt_id"],
                features=feats,
                tokens=[int(t) for t in tr["tokens"]],
                boundaries=BoundarySequence(
                    boundaries=tr["boundaries"],
                    source=tr.get("source", "ground-truth"),
                    frame_ms=tr["frame_ms"],
                ),
                seed=tr.get("seed", 0),
            ))
    return utts, manifest
