"""Deterministic random streams.

Every source of randomness in the package flows through `Rng`, a thin wrapper
over numpy's PCG64 generator keyed by a 64-bit seed plus a derivation path.
The same seed always replays the same stream bit-for-bit, and `derive()`
splits off statistically independent child streams without consuming state
from the parent — so experiment stages can't perturb each other's draws.
"""

from __future__ import annotations

import zlib

import numpy as np

from .tensor import Tensor

__all__ = ["Rng", "randn"]


def _salt_to_int(salt) -> int:
    if isinstance(salt, (int, np.integer)):
        return int(salt) & 0xFFFFFFFFFFFFFFFF
    if isinstance(salt, str):
        return zlib.crc32(salt.encode("utf-8"))
    raise TypeError(f"rng salt must be int or str, got {type(salt).__name__}")


class Rng:
    """Seeded generator with hierarchical, order-independent derivation."""

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._path = tuple(_path)
        material = (self.seed,) + self._path if self._path else self.seed
        self._gen = np.random.default_rng(material)

    def derive(self, *salts) -> "Rng":
        """A child stream keyed by (seed, *path, *salts); the parent is untouched."""
        return Rng(self.seed, self._path + tuple(_salt_to_int(s) for s in salts))

    # -- draws ------------------------------------------------------------

    def standard_normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, lo: float, hi: float, shape=()) -> np.ndarray:
        return self._gen.uniform(lo, hi, shape)

    def integers(self, lo: int, hi: int, shape=()) -> np.ndarray:
        return self._gen.integers(lo, hi, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        if k > n:
            raise ValueError(f"cannot draw {k} distinct items from {n}")
        return self._gen.choice(n, size=k, replace=False)

    def rotation(self, n: int) -> np.ndarray:
        """A random n x n rotation matrix (orthogonal, det +1)."""
        q, r = np.linalg.qr(self._gen.standard_normal((n, n)))
        q = q * np.sign(np.diag(r))  # fix the QR sign ambiguity
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        return q


def randn(rng: Rng, shape) -> Tensor:
    """Standard-normal Tensor draw from an Rng stream."""
    return Tensor(rng.standard_normal(tuple(shape)))
