"""Toy streaming encoder-decoder with a monotonic chunkwise attention head.

Unidirectional LSTM encoder, per-token decoder LSTM whose state queries the
monotonic and chunk energy networks, an auxiliary CTC projection on the
encoder outputs, and an Adam trainer with gradient-norm clipping. Training
uses teacher forcing; the expected alignment is computed row by row from
the (optionally discounted) selection probabilities.

Token id 0 is the end-of-sequence (and start) symbol; content ids are
1..vocab_size. The CTC projection adds a blank class at index
vocab_size + 1.
"""

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import attention, autodiff as ad, ctc as ctc_mod, losses
from .losses import LossBundle, LossWeights
from .rng import Rng, derive_seed

EOS_ID = 0

CHECKPOINT_MAGIC = b"SEMCKPT1"
CHECKPOINT_VERSION = 1


class NumericalError(RuntimeError):
    """A training step produced a non-finite value; the step was aborted."""


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    input_dim: int = 8
    hidden_dim: int = 64
    vocab_size: int = 20
    encoder_layers: int = 2
    chunk_width: int = 4
    weights: LossWeights = field(default_factory=LossWeights)
    noise_std: float = 1.0
    seed: int = 0
    downsample: int = 1
    # initial sigmoid offset: biases early training away from halting.
    # sigmoid(r) should roughly match the expected boundary rate
    # (boundaries per frame), so short toy utterances want a larger value
    # than the -4 used for long speech inputs.
    energy_offset_init: float = -4.0

    @property
    def n_classes(self):
        """Decoder output classes: eos + content tokens."""
        return self.vocab_size + 1

    @property
    def ctc_blank(self):
        return self.vocab_size + 1

    @property
    def n_ctc_classes(self):
        return self.vocab_size + 2

    def validate(self):
        if min(self.input_dim, self.hidden_dim, self.vocab_size,
               self.encoder_layers, self.chunk_width, self.downsample) < 1:
            raise ValueError("all model dimensions must be positive")
        self.weights.validate()
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniforms((fan_in, fan_out), -limit, limit)


def init_parameters(config):
    """Named float64 arrays; deterministic in config.seed."""
    rng = Rng(derive_seed(config.seed, "init"))
    d = config.hidden_dim
    a_dim = d
    params = {}

    in_dim = config.input_dim * config.downsample
    for layer in range(config.encoder_layers):
        params[f"enc{layer}.W"] = _glorot(rng, in_dim + d, 4 * d)
        bias = np.zeros(4 * d)
        bias[d:2 * d] = 1.0  # forget-gate bias
        params[f"enc{layer}.b"] = bias
        in_dim = d

    for prefix in ("mono", "chunk"):
        params[f"{prefix}.W"] = _glorot(rng, d, a_dim)
        params[f"{prefix}.V"] = _glorot(rng, d, a_dim)
        params[f"{prefix}.b"] = np.zeros(a_dim)
        params[f"{prefix}.v"] = _glorot(rng, a_dim, 1).reshape(a_dim)
    params["mono.g"] = np.asarray(1.0 / np.sqrt(a_dim))
    params["mono.r"] = np.asarray(float(config.energy_offset_init))

    params["emb.E"] = rng.normals((config.n_classes, d), std=0.1)
    params["dec.W"] = _glorot(rng, 2 * d + d, 4 * d)
    dec_bias = np.zeros(4 * d)
    dec_bias[d:2 * d] = 1.0
    params["dec.b"] = dec_bias

    params["out.Ws"] = _glorot(rng, d, d)
    params["out.Wc"] = _glorot(rng, d, d)
    params["out.br"] = np.zeros(d)
    params["out.Wo"] = _glorot(rng, d, config.n_classes)
    params["out.bo"] = np.zeros(config.n_classes)

    params["ctc.W"] = _glorot(rng, d, config.n_ctc_classes)
    params["ctc.b"] = np.zeros(config.n_ctc_classes)
    return params


def _stack_frames(features, downsample):
    """Group ds consecutive frames; trailing remainder frames are dropped."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ValueError("features must be a non-empty [T, input_dim] array")
    if downsample == 1:
        return feats
    n_out = feats.shape[0] // downsample
    if n_out < 1:
        raise ValueError("utterance shorter than one downsampled frame")
    trimmed = feats[:n_out * downsample]
    return trimmed.reshape(n_out, downsample * feats.shape[1])


def _sigmoid_np(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _lstm_gates_np(W, b, x, h, c):
    z = np.concatenate([x, h]) @ W + b
    d = h.shape[0]
    i = _sigmoid_np(z[:d])
    f = _sigmoid_np(z[d:2 * d])
    g = np.tanh(z[2 * d:3 * d])
    o = _sigmoid_np(z[3 * d:])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new


def _log_softmax(node, axis=1):
    m = ad.constant(node.value.max(axis=axis, keepdims=True))
    shifted = node - m
    lse = ad.log(ad.reduce_sum(ad.exp(shifted), axis=axis, keepdims=True))
    return shifted - lse


class EncoderSession:
    """Streaming causal encoder: push raw frames, receive encoder frames."""

    def __init__(self, model):
        self._model = model
        self._config = model.config
        d = self._config.hidden_dim
        self._states = [(np.zeros(d), np.zeros(d))
                        for _ in range(self._config.encoder_layers)]
        self._pending = np.zeros((0, self._config.input_dim))
        self.frames = []  # encoder output rows so far

    def push(self, frames):
        """Feed raw feature frames; returns newly produced encoder rows."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim == 1:
            frames = frames.reshape(1, -1)
        if frames.size:
            self._pending = np.concatenate([self._pending, frames], axis=0)
        ds = self._config.downsample
        new_rows = []
        while self._pending.shape[0] >= ds:
            group, self._pending = self._pending[:ds], self._pending[ds:]
            x = group.reshape(-1)
            for layer in range(self._config.encoder_layers):
                W = self._model.params[f"enc{layer}.W"]
                b = self._model.params[f"enc{layer}.b"]
                h, c = self._states[layer]
                h, c = _lstm_gates_np(W, b, x, h, c)
                self._states[layer] = (h, c)
                x = h
            new_rows.append(x)
        self.frames.extend(new_rows)
        return new_rows


@dataclass
class DecoderState:
    """Decoder LSTM state plus the context that fed it."""

    h: np.ndarray
    c: np.ndarray
    context: np.ndarray


class Seq2SeqModel:
    def __init__(self, config, params=None):
        self.config = config.validate()
        self.params = params if params is not None else init_parameters(config)

    # ----------------------------------------------------------------
    # graph construction (training path)
    # ----------------------------------------------------------------

    def _param_nodes(self):
        return {name: ad.parameter(arr) for name, arr in self.params.items()}

    @staticmethod
    def _lstm_step(W, b, x, h, c, d):
        z = ad.matmul(ad.concat([x, h], axis=1), W) + b
        i = ad.sigmoid(z[:, :d])
        f = ad.sigmoid(z[:, d:2 * d])
        g = ad.tanh(z[:, 2 * d:3 * d])
        o = ad.sigmoid(z[:, 3 * d:])
        c_new = f * c + i * g
        h_new = o * ad.tanh(c_new)
        return h_new, c_new

    def _encode_graph(self, nodes, features):
        d = self.config.hidden_dim
        x_rows = [ad.constant(row.reshape(1, -1))
                  for row in _stack_frames(features, self.config.downsample)]
        for layer in range(self.config.encoder_layers):
            W, b = nodes[f"enc{layer}.W"], nodes[f"enc{layer}.b"]
            h = ad.constant(np.zeros((1, d)))
            c = ad.constant(np.zeros((1, d)))
            out_rows = []
            for x in x_rows:
                h, c = self._lstm_step(W, b, x, h, c, d)
                out_rows.append(h)
            x_rows = out_rows
        return ad.concat(x_rows, axis=0)

    def _energy_net(self, nodes, prefix, scaled):
        return attention.EnergyNet(
            W=nodes[f"{prefix}.W"], V=nodes[f"{prefix}.V"],
            b=nodes[f"{prefix}.b"], v=nodes[f"{prefix}.v"],
            g=nodes["mono.g"] if scaled else None,
            r=nodes["mono.r"] if scaled else None,
        )

    def _utterance_graph(self, nodes, utt, weights, rng, mask_boundaries):
        """Teacher-forced forward pass for one utterance.

        Returns (token_log_losses, alpha, p_raw, ctc_nll or None).
        """
        config = self.config
        d = config.hidden_dim
        tokens = [int(t) for t in utt.tokens]
        if any(not 1 <= t <= config.vocab_size for t in tokens):
            raise ValueError("content token outside 1..vocab_size")
        enc = self._encode_graph(nodes, utt.features)
        n_frames = enc.value.shape[0]
        n_steps = len(tokens) + 1  # content tokens + eos
        if n_steps - 1 > n_frames:
            raise ValueError(
                f"{utt.utt_id}: {len(tokens)} tokens exceed {n_frames} frames")

        mono_net = self._energy_net(nodes, "mono", scaled=True)
        chunk_net = self._energy_net(nodes, "chunk", scaled=False)
        mono_keys = attention.project_keys(mono_net, enc)
        chunk_keys = attention.project_keys(chunk_net, enc)
        mask_arr = None
        if mask_boundaries is not None:
            mask_arr = attention.PathMask(
                b_ref=mask_boundaries, delta=weights.delta,
            ).matrix(n_steps, n_frames)

        # pre-sigmoid noise is a training device; rng=None means a
        # noise-free evaluation pass
        noise = None
        if config.noise_std > 0.0 and rng is not None:
            noise = rng.normals((n_steps, n_frames), std=config.noise_std)

        teacher_in = [EOS_ID] + tokens
        targets = tokens + [EOS_ID]
        h_dec = ad.constant(np.zeros((1, d)))
        c_dec = ad.constant(np.zeros((1, d)))
        context = ad.constant(np.zeros((1, d)))
        alpha_prev = attention._initial_row(n_frames)
        log_losses = []
        alpha_rows = []
        p_rows = []
        for i in range(n_steps):
            emb = ad.reshape(nodes["emb.E"][teacher_in[i]], (1, d))
            h_dec, c_dec = self._lstm_step(
                nodes["dec.W"], nodes["dec.b"],
                ad.concat([emb, context], axis=1), h_dec, c_dec, d)

            e_row = attention.energies(mono_net, h_dec, enc, key_proj=mono_keys)
            if noise is not None:
                e_row = e_row + ad.constant(noise[i:i + 1])
            p_raw = ad.sigmoid(e_row)
            sel = attention.discount(
                attention.SelectionMatrix(p_raw, p_raw, 0.0), weights.lambda_se)
            alpha_row = attention.alignment_row_parallel(
                ad.reshape(sel.p_discounted, (n_frames,)), alpha_prev,
                mask_arr[i] if mask_arr is not None else None)
            alpha_prev = alpha_row

            u_row = attention.energies(chunk_net, h_dec, enc, key_proj=chunk_keys)
            beta_row = attention.chunkwise_weights(
                ad.reshape(alpha_row, (1, n_frames)), u_row, config.chunk_width)
            context = ad.matmul(beta_row, enc)

            readout = ad.tanh(ad.matmul(h_dec, nodes["out.Ws"])
                              + ad.matmul(context, nodes["out.Wc"])
                              + nodes["out.br"])
            logits = ad.matmul(readout, nodes["out.Wo"]) + nodes["out.bo"]
            log_probs = _log_softmax(logits, axis=1)
            log_losses.append(ad.neg(log_probs[0, targets[i]]))
            alpha_rows.append(alpha_row)
            p_rows.append(ad.reshape(p_raw, (n_frames,)))

        alpha = ad.stack_rows(alpha_rows)
        p_matrix = ad.stack_rows(p_rows)

        ctc_nll = None
        if weights.lambda_ctc > 0.0:
            ctc_logits = ad.matmul(enc, nodes["ctc.W"]) + nodes["ctc.b"]
            lattice = ctc_mod.CtcLattice(
                log_probs=_log_softmax(ctc_logits, axis=1),
                target=tokens, blank=config.ctc_blank)
            ctc_nll = ctc_mod.ctc_loss(lattice)
        return log_losses, alpha, p_matrix, ctc_nll

    def train_forward(self, batch, weights=None, rng=None, boundaries=None,
                      apply_mask=False, collect=False):
        """Loss bundle for a batch of utterances (teacher forcing).

        ``boundaries`` is an optional per-utterance list of reference
        boundary sequences; required when the latency loss is active or
        ``apply_mask`` is set. Utterance losses are averaged over the batch.
        """
        bundle, _, aux = self._forward_graph(batch, weights, rng, boundaries,
                                             apply_mask, collect)
        return (bundle, aux) if collect else bundle

    def _forward_graph(self, batch, weights, rng, boundaries, apply_mask,
                       collect=False):
        weights = (weights or self.config.weights).validate()
        if not batch:
            raise ValueError("empty batch")
        need_refs = apply_mask or weights.lambda_latency > 0.0
        if need_refs and (boundaries is None or any(b is None for b in boundaries)):
            raise ValueError(
                "reference boundaries are required for the latency loss "
                "and for path masking")
        if boundaries is not None and len(boundaries) != len(batch):
            raise ValueError("boundaries must align with the batch")

        nodes = self._param_nodes()
        mocha_terms, ctc_terms, qua_terms, lat_terms = [], [], [], []
        aux = {"alpha": [], "p": []}
        for k, utt in enumerate(batch):
            b_ref = boundaries[k] if boundaries is not None else None
            log_losses, alpha, p_matrix, ctc_nll = self._utterance_graph(
                nodes, utt, weights, rng,
                mask_boundaries=b_ref if apply_mask else None)
            ce = ad.reduce_mean(ad.concat(
                [ad.reshape(l, (1,)) for l in log_losses], axis=0))
            mocha_terms.append(ce)
            if ctc_nll is not None:
                ctc_terms.append(ctc_nll)
            n_steps = len(utt.tokens) + 1
            qua_terms.append(losses.quantity_loss(alpha, n_steps))
            if weights.lambda_latency > 0.0:
                content = alpha[:len(utt.tokens)]
                lat_terms.append(losses.latency_loss(b_ref, content))
            if collect:
                aux["alpha"].append(alpha.value.copy())
                aux["p"].append(p_matrix.value.copy())

        def mean_of(terms):
            if not terms:
                return None
            acc = terms[0]
            for t in terms[1:]:
                acc = acc + t
            return acc / float(len(terms))

        bundle = losses.total_loss(
            mean_of(mocha_terms), mean_of(ctc_terms), mean_of(qua_terms),
            mean_of(lat_terms), weights)
        return bundle, nodes, aux

    def train_step(self, batch, optimizer, weights=None, rng=None,
                   boundaries=None, apply_mask=False):
        """One Adam update; aborts without touching parameters on NaN/Inf."""
        if self.config.noise_std > 0.0 and rng is None:
            raise ValueError("training with noise_std > 0 requires an rng")
        try:
            with ad.finite_checks_disabled():
                bundle, nodes, _ = self._forward_graph(
                    batch, weights, rng, boundaries, apply_mask)
        except ad.NonFiniteError as exc:
            raise NumericalError(
                f"aborting step: non-finite value in op '{exc.op_name}'") from exc
        for term in ("l_mocha", "l_ctc", "l_qua", "l_latency", "l_total"):
            if not np.isfinite(float(getattr(bundle, term).value)):
                raise NumericalError(f"aborting step: {term} is non-finite")
        with ad.finite_checks_disabled():
            ad.backward(bundle.l_total)
        grads = {name: (node.grad if node.grad is not None
                        else np.zeros_like(node.value))
                 for name, node in nodes.items()}
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericalError(
                    f"aborting step: non-finite gradient for {name}")
        self.params = optimizer.step(self.params, grads)
        return bundle

    # ----------------------------------------------------------------
    # inference path (plain numpy; shared by offline and streaming decode)
    # ----------------------------------------------------------------

    def encode(self, features):
        """Full-utterance encoder outputs `[T', d]` (inference path)."""
        session = self.encoder_session()
        session.push(np.asarray(features, dtype=np.float64))
        if not session.frames:
            raise ValueError("empty encoder output")
        return np.stack(session.frames)

    def encoder_session(self):
        return EncoderSession(self)

    def initial_decoder_state(self):
        d = self.config.hidden_dim
        return DecoderState(h=np.zeros(d), c=np.zeros(d), context=np.zeros(d))

    def advance_decoder(self, state, token_id):
        """Consume (token embedding, previous context); the new hidden state
        is the attention query for the next output position."""
        emb = self.params["emb.E"][token_id]
        x = np.concatenate([emb, state.context])
        h, c = _lstm_gates_np(self.params["dec.W"], self.params["dec.b"],
                              x, state.h, state.c)
        return DecoderState(h=h, c=c, context=state.context)

    def _energy_cell(self, prefix, query, enc_frame, scaled):
        p = self.params
        pre = np.tanh(query @ p[f"{prefix}.W"] + enc_frame @ p[f"{prefix}.V"]
                      + p[f"{prefix}.b"])
        e = pre @ p[f"{prefix}.v"]
        if scaled:
            e = e * float(p["mono.g"]) / np.linalg.norm(p["mono.v"]) \
                + float(p["mono.r"])
        return float(e)

    def selection_p(self, query, enc_frame):
        """Raw selection probability for one (query, frame) cell."""
        return float(_sigmoid_np(np.asarray(
            self._energy_cell("mono", query, enc_frame, scaled=True))))

    def chunk_energy_row(self, query, enc_frames):
        return np.array([self._energy_cell("chunk", query, f, scaled=False)
                         for f in enc_frames])

    def output_distribution(self, query, context):
        p = self.params
        readout = np.tanh(query @ p["out.Ws"] + context @ p["out.Wc"]
                          + p["out.br"])
        logits = readout @ p["out.Wo"] + p["out.bo"]
        shifted = logits - logits.max()
        probs = np.exp(shifted)
        return probs / probs.sum()

    def ctc_log_probs(self, enc):
        logits = enc @ self.params["ctc.W"] + self.params["ctc.b"]
        shifted = logits - logits.max(axis=1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def viterbi_boundaries(self, utt, frame_ms, style="onset"):
        """CTC best-path boundaries for an utterance under current params."""
        enc = self.encode(utt.features)
        lp = self.ctc_log_probs(enc)
        lattice = ctc_mod.make_lattice(lp, utt.tokens, blank=self.config.ctc_blank)
        path = ctc_mod.viterbi_alignment(lattice)
        return ctc_mod.boundaries_from_alignment(
            path, utt.tokens, blank=self.config.ctc_blank, frame_ms=frame_ms,
            style=style, log_probs=lp)


class Adam:
    """Adam with bias correction and global gradient-norm clipping."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip=5.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip = clip
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        norm_sq = sum(float((g * g).sum()) for g in grads.values())
        norm = np.sqrt(norm_sq)
        scale = self.clip / norm if (self.clip and norm > self.clip) else 1.0
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        new_params = {}
        for name, value in params.items():
            g = grads[name] * scale
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(value)
                self.v[name] = np.zeros_like(value)
            v = self.v[name]
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            self.m[name] = m
            self.v[name] = v
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            new_params[name] = value - self.lr * update
        return new_params

    def state_arrays(self):
        out = {"adam.t": np.asarray(float(self.t))}
        for name, arr in self.m.items():
            out[f"adam.m.{name}"] = arr
        for name, arr in self.v.items():
            out[f"adam.v.{name}"] = arr
        return out

    def load_state_arrays(self, arrays):
        self.t = int(float(arrays.get("adam.t", 0.0)))
        self.m = {k[len("adam.m."):]: np.asarray(v) for k, v in arrays.items()
                  if k.startswith("adam.m.")}
        self.v = {k[len("adam.v."):]: np.asarray(v) for k, v in arrays.items()
                  if k.startswith("adam.v.")}


# ---------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------

def _write_array(fh, name, arr):
    name_b = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    fh.write(struct.pack("<H", len(name_b)))
    fh.write(name_b)
    fh.write(struct.pack("<B", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(arr.astype("<f8").tobytes())


def _read_array(fh):
    raw = fh.read(2)
    if len(raw) < 2:
        raise CheckpointError("truncated checkpoint (array header)")
    (name_len,) = struct.unpack("<H", raw)
    name = fh.read(name_len).decode("utf-8")
    (ndim,) = struct.unpack("<B", fh.read(1))
    shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    payload = fh.read(count * 8)
    if len(payload) != count * 8:
        raise CheckpointError(f"truncated payload for array {name!r}")
    arr = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return name, arr.reshape(shape)


def save_checkpoint(path, params, config, extra=None):
    """Versioned container: magic, version, config JSON, named f64 arrays."""
    arrays = dict(params)
    if extra:
        arrays.update(extra)
    config_json = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(config_json)))
        fh.write(config_json)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            _write_array(fh, name, arr)


def load_checkpoint(path, expected_config=None):
    """Returns (config, model params, extra arrays)."""
    try:
        with open(path, "rb") as fh:
            magic = fh.read(len(CHECKPOINT_MAGIC))
            if magic != CHECKPOINT_MAGIC:
                raise CheckpointError("not a checkpoint file (bad magic)")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != CHECKPOINT_VERSION:
                raise CheckpointError(f"unsupported checkpoint version {version}")
            (cfg_len,) = struct.unpack("<I", fh.read(4))
            try:
                config = ModelConfig.from_dict(json.loads(fh.read(cfg_len)))
            except (json.JSONDecodeError, TypeError, KeyError) as exc:
                raise CheckpointError(f"corrupt config block: {exc}") from exc
            (n_arrays,) = struct.unpack("<I", fh.read(4))
            arrays = {}
            for _ in range(n_arrays):
                name, arr = _read_array(fh)
                arrays[name] = arr
    except struct.error as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    if expected_config is not None and config != expected_config:
        raise CheckpointError(
            "checkpoint config does not match the requested configuration")
    param_names = set(init_parameters(config).keys())
    params = {k: v for k, v in arrays.items() if k in param_names}
    extra = {k: v for k, v in arrays.items() if k not in param_names}
    missing = param_names - set(params)
    if missing:
        raise CheckpointError(f"checkpoint missing parameters: {sorted(missing)}")
    return config, params, extra
