"""Seedable PRNG shared by init, training noise, and data generation.

The generator is splitmix64 so that corpora and training runs are
reproducible bit-for-bit from a single integer seed, independent of any
library version. Sub-streams are derived by hashing a label path into the
parent seed (see :func:`derive_seed`); the scheme is recorded in corpus
manifests.
"""

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

PRNG_SPEC = {
    "algorithm": "splitmix64",
    "stream_scheme": "seed' = mix64(seed XOR fnv1a64(repr(token))) applied per token",
    "uniform": "(next_u64 >> 11) * 2**-53",
    "normal": "Box-Muller on uniform pairs, second value cached",
}


def mix64(x):
    """splitmix64 output function (finalizer) for a 64-bit state."""
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _fnv1a64(data):
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def derive_seed(seed, *tokens):
    """Derive a sub-stream seed from ``seed`` and a label path.

    Tokens may be ints or strings; the order matters. Deriving is pure, so
    per-utterance / per-epoch streams can be rebuilt without consuming the
    parent stream.
    """
    h = seed & _MASK64
    for tok in tokens:
        h = mix64(h ^ _fnv1a64(repr(tok).encode("utf-8")))
    return h


def _finalize_block(states):
    """Vectorized splitmix64 finalizer over a uint64 array."""
    z = states
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class Rng:
    """splitmix64 stream with uniform and Gaussian draws.

    Bulk draws (:meth:`uniforms`, :meth:`normals`) consume the stream in
    exactly the same order as repeated scalar calls.
    """

    def __init__(self, seed):
        self._state = seed & _MASK64
        self._cached_normal = None

    def next_u64(self):
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def _u64_block(self, n):
        if n == 0:
            return np.empty(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self._state) + steps * np.uint64(_GOLDEN)
            out = _finalize_block(states)
        self._state = (self._state + n * _GOLDEN) & _MASK64
        return out

    def uniform(self):
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * 2.0**-53

    def randint(self, lo, hi):
        """Uniform integer in the inclusive range [lo, hi]."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        span = hi - lo + 1
        # rejection sampling keeps the draw unbiased
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % span)
        while True:
            x = self.next_u64()
            if x < limit:
                return lo + x % span

    def normal(self):
        """Standard normal via Box-Muller."""
        if self._cached_normal is not None:
            z = self._cached_normal
            self._cached_normal = None
            return z
        # u1 in (0, 1] so log() is finite
        u1 = ((self.next_u64() >> 11) + 1) * 2.0**-53
        u2 = (self.next_u64() >> 11) * 2.0**-53
        r = math.sqrt(-2.0 * math.log(u1))
        self._cached_normal = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def uniforms(self, shape, lo=0.0, hi=1.0):
        n = int(np.prod(shape)) if shape else 1
        block = self._u64_block(n)
        u = (block >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (lo + (hi - lo) * u).reshape(shape)

    def normals(self, shape, std=1.0):
        n = int(np.prod(shape)) if shape else 1
        out = np.empty(n, dtype=np.float64)
        pos = 0
        if self._cached_normal is not None and n > 0:
            out[0] = self._cached_normal
            self._cached_normal = None
            pos = 1
        m = n - pos
        pairs = (m + 1) // 2
        block = self._u64_block(2 * pairs)
        if pairs:
            u1 = ((block[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
            u2 = (block[1::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53
            r = np.sqrt(-2.0 * np.log(u1))
            z0 = r * np.cos(2.0 * np.pi * u2)
            z1 = r * np.sin(2.0 * np.pi * u2)
            interleaved = np.empty(2 * pairs, dtype=np.float64)
            interleaved[0::2] = z0
            interleaved[1::2] = z1
            out[pos:] = interleaved[:m]
            if m % 2 == 1:
                self._cached_normal = float(interleaved[m])
        return (out * std).reshape(shape)

    def shuffle(self, items):
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(0, i)
            items[i], items[j] = items[j], items[i]
