"""Deterministic counter-based random number generation.

The generator is splitmix64: output i of stream `seed` is
``mix64(seed + GAMMA * (i + 1))`` where GAMMA is the 64-bit golden gamma and
mix64 is the usual xor-shift/multiply finalizer.  Because each output is a
pure function of (seed, counter), streams are bit-identical across runs and
platforms, and child streams can be split off without consuming state from
the parent.  Gaussian variates use the Box-Muller transform on the uniform
stream (the uniform/integer stream is integer-exact; Gaussians additionally
depend on IEEE-754 double transcendentals).
"""

from __future__ import annotations

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_TWO_NEG53 = 2.0 ** -53


def _mix64_int(z: int) -> int:
    """splitmix64 finalizer on a Python int (mod 2**64)."""
    z &= 0xFFFFFFFFFFFFFFFF
    z = (z ^ (z >> 30)) * _MIX1 & 0xFFFFFFFFFFFFFFFF
    z = (z ^ (z >> 27)) * _MIX2 & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(_MIX1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_MIX2)
    z ^= z >> np.uint64(31)
    return z


class SeededRng:
    """Counter-based stream of pseudo-random values.

    Identical (seed, call sequence) pairs reproduce identical values exactly.
    """

    def __init__(self, seed: int, _counter: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._counter = int(_counter)

    def split(self, key: int) -> "SeededRng":
        """Derive an independent child stream.

        The child seed is ``mix64(seed ^ mix64(key + GAMMA))``; distinct keys
        give distinct streams regardless of how much of the parent stream has
        been consumed.
        """
        child = _mix64_int(self.seed ^ _mix64_int((int(key) + _GAMMA) & 0xFFFFFFFFFFFFFFFF))
        return SeededRng(child)

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            z = (np.uint64(self.seed) + np.uint64(_GAMMA) * idx) & _MASK
            return _mix64_array(z)

    def uniform(self, shape=(), lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """Uniforms in [lo, hi) as float64 with 53-bit resolution."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * _TWO_NEG53
        out = lo + (hi - lo) * u
        return out.reshape(shape) if shape else float(out[0])

    def normal(self, shape=(), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """Gaussian variates via Box-Muller on consecutive uniform pairs."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        bits = self._raw(2 * pairs)
        # u1 in (0, 1] so log(u1) is finite
        u1 = ((bits[:pairs] >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_NEG53
        u2 = (bits[pairs:] >> np.uint64(11)).astype(np.float64) * _TWO_NEG53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        out = mean + std * z
        return out.reshape(shape) if shape else float(out[0])

    def truncated_normal(self, shape, std: float = 0.02, bound_sigmas: float = 2.0) -> np.ndarray:
        """Zero-mean normal with resampling outside +/- bound_sigmas * std."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        out = np.empty(n, dtype=np.float64)
        filled = 0
        while filled < n:
            cand = self.normal((n - filled,))
            keep = cand[np.abs(cand) <= bound_sigmas]
            take = min(len(keep), n - filled)
            out[filled:filled + take] = keep[:take]
            filled += take
        out *= std
        return out.reshape(shape)

    def integers(self, n_exclusive: int, shape=()) -> np.ndarray:
        """Integers uniform in [0, n_exclusive) via floor of the uniform stream."""
        if n_exclusive <= 0:
            raise ValueError("n_exclusive must be positive")
        u = self.uniform(shape if shape else (1,))
        out = np.minimum((np.asarray(u) * n_exclusive).astype(np.int64), n_exclusive - 1)
        return out.reshape(shape) if shape else int(out[0])

    def shuffle(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) (Fisher-Yates)."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.integers(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
