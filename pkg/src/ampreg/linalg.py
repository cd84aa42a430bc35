"""Small dense linear algebra and deterministic randomness.

Everything here operates on float64 numpy arrays. The eigensolver is a
plain cyclic Jacobi sweep, which is all the theory testbed (dimension
<= 16) needs; it is not meant to compete with LAPACK.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1

MAX_EIG_DIM = 16


def l2_norm(v) -> float:
    """Euclidean norm; rejects NaN/Inf entries."""
    a = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite input")
    return float(np.sqrt(np.sum(a * a)))


def spd_eigendecomp(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a small symmetric positive definite matrix.

    Returns (eigenvalues ascending, eigenvectors as orthonormal columns)
    such that m = Q diag(w) Q^T. Uses cyclic Jacobi rotations; input must
    be symmetric positive definite with dimension <= 16.
    """
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("not SPD: not a square matrix")
    n = a.shape[0]
    if n > MAX_EIG_DIM:
        raise ValueError(f"not SPD: dimension {n} exceeds {MAX_EIG_DIM}")
    scale = float(np.max(np.abs(a))) or 1.0
    if not np.all(np.isfinite(a)):
        raise ValueError("not SPD: non-finite entries")
    if np.max(np.abs(a - a.T)) > 1e-10 * scale:
        raise ValueError("not SPD: asymmetric input")
    a = 0.5 * (a + a.T)

    q = np.eye(n)
    for _ in range(100):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= 1e-15 * scale * n:
            break
        for p in range(n - 1):
            for r in range(p + 1, n):
                apr = a[p, r]
                if abs(apr) <= 1e-18 * scale:
                    continue
                # standard stable Jacobi rotation angle
                tau = (a[r, r] - a[p, p]) / (2.0 * apr)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau)) if tau != 0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[r, r] = c
                rot[p, r] = s
                rot[r, p] = -s
                a = rot.T @ a @ rot
                q = q @ rot

    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    w = w[order]
    q = q[:, order]
    if w[0] <= 0:
        raise ValueError("not SPD: non-positive eigenvalue")
    return w, q


def stream_id(*parts) -> int:
    """Stable 64-bit id for a named random stream, e.g. stream_id("shuffle", 3)."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(str(p).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class Rng:
    """Counter-based random source keyed by (seed, stream).

    The same (seed, stream) always yields the same draws, on any platform;
    Rng values are cheap and immutable, so they can be handed across
    threads freely. Use `generator()` when a consumer needs to draw
    sequentially, and the convenience methods for one-shot draws.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & MASK64, self.stream & MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def with_stream(self, *parts) -> "Rng":
        return Rng(self.seed, stream_id(*parts))

    def standard_normal(self, n: int) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        return self.generator().standard_normal(n)

    def uniform(self, n: int) -> np.ndarray:
        return self.generator().random(n)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator().permutation(n)


def rng_standard_normal(rng: Rng, n: int) -> np.ndarray:
    """First n standard-normal draws of the (seed, stream) sequence."""
    return rng.standard_normal(n)
