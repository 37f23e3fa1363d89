"""Symmetric-matrix values and the elementary symmetric functions of their eigenvalues.

All array routines accept stacks of matrices with shape ``(..., n, n)`` and
broadcast over the leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_DIM = 8


class DomainError(ValueError):
    """An argument lies outside the set where an operation is defined."""


@dataclass(frozen=True)
class SymMatrix:
    """Symmetric ``n x n`` matrix stored as its row-major upper triangle."""

    dim: int
    upper: tuple[float, ...]

    def __post_init__(self):
        if not 1 <= self.dim <= MAX_DIM:
            raise DomainError(f"dimension {self.dim} outside 1..{MAX_DIM}")
        if len(self.upper) != self.dim * (self.dim + 1) // 2:
            raise DomainError("upper triangle has the wrong number of entries")
        if not all(np.isfinite(self.upper)):
            raise DomainError("matrix entries must be finite")

    @classmethod
    def from_array(cls, a) -> "SymMatrix":
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DomainError(f"expected a square matrix, got shape {a.shape}")
        sym = 0.5 * (a + a.T)
        iu = np.triu_indices(a.shape[0])
        return cls(a.shape[0], tuple(float(v) for v in sym[iu]))

    def full(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        iu = np.triu_indices(self.dim)
        out[iu] = self.upper
        out.T[iu] = self.upper
        return out

    def __array__(self, dtype=None, copy=None):
        return self.full() if dtype is None else self.full().astype(dtype)


@dataclass(frozen=True)
class BlockShape:
    """Split ``R^n = R^k x R^ell`` used by the block projections."""

    k: int
    ell: int

    def __post_init__(self):
        if self.k < 1 or self.ell < 1:
            raise DomainError("block sizes must be positive")

    @property
    def n(self) -> int:
        return self.k + self.ell


def as_array(M) -> np.ndarray:
    """Coerce a SymMatrix, nested list or array stack to a float array."""
    if isinstance(M, SymMatrix):
        return M.full()
    a = np.asarray(M, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DomainError(f"expected (..., n, n) matrices, got shape {a.shape}")
    return a


def sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def trace(M) -> np.ndarray:
    return np.trace(as_array(M), axis1=-2, axis2=-1)


def sym_basis(n: int) -> np.ndarray:
    """Directions ``(E_ij + E_ji) / 2`` indexed as ``basis[i, j]``.

    Differentiating along ``basis[i, j]`` is the convention used for every
    ``dF/da_ij`` in this package; with it ``dF(M)[H] = sum_ij F^{ij} H_ij``
    for symmetric ``H``.
    """
    basis = np.zeros((n, n, n, n))
    for i in range(n):
        for j in range(n):
            basis[i, j, i, j] += 0.5
            basis[i, j, j, i] += 0.5
    return basis


def power_sums(M, kmax: int) -> list[np.ndarray]:
    """Traces ``tr(M^j)`` for ``j = 1..kmax``."""
    a = as_array(M)
    sums = []
    P = a
    for _ in range(kmax):
        sums.append(np.trace(P, axis1=-2, axis2=-1))
        P = P @ a
    return sums


def elementary_symmetric(M, kmax: int | None = None) -> list[np.ndarray]:
    """``[sigma_0, ..., sigma_kmax]`` of the eigenvalues via Newton's identities.

    Works from traces of matrix powers (the characteristic polynomial
    coefficients), so no eigen-decomposition is involved.
    """
    a = as_array(M)
    n = a.shape[-1]
    kmax = n if kmax is None else kmax
    p = power_sums(a, kmax)
    e = [np.ones(a.shape[:-2])]
    for k in range(1, kmax + 1):
        acc = np.zeros(a.shape[:-2])
        for i in range(1, k + 1):
            acc = acc + (-1) ** (i - 1) * e[k - i] * p[i - 1]
        e.append(acc / k)
    return e


def sigma_k(M, k: int) -> np.ndarray | float:
    """k-th elementary symmetric polynomial of the eigenvalues of ``M``."""
    a = as_array(M)
    n = a.shape[-1]
    if not 1 <= k <= n:
        raise DomainError(f"k={k} outside 1..{n}")
    out = elementary_symmetric(a, k)[k]
    return float(out) if out.ndim == 0 else out


def project_blocks(M, shape: BlockShape) -> tuple[np.ndarray, np.ndarray]:
    """Leading ``k x k`` and trailing ``ell x ell`` diagonal blocks."""
    a = as_array(M)
    if a.shape[-1] != shape.n:
        raise DomainError(
            f"block shape ({shape.k}, {shape.ell}) does not fit dimension {a.shape[-1]}"
        )
    k = shape.k
    return a[..., :k, :k].copy(), a[..., k:, k:].copy()


def opnorm(M) -> np.ndarray:
    """Spectral norm of symmetric matrices (largest absolute eigenvalue)."""
    a = as_array(M)
    if a.shape[-1] == 2:
        mean = 0.5 * (a[..., 0, 0] + a[..., 1, 1])
        rad = np.hypot(0.5 * (a[..., 0, 0] - a[..., 1, 1]), a[..., 0, 1])
        return np.abs(mean) + rad
    return np.max(np.abs(np.linalg.eigvalsh(sym(a))), axis=-1)


def psd_norm(P) -> np.ndarray:
    """Size of positive semidefinite increments, measured by the trace.

    For ``P >= 0`` this is the nuclear norm; it is the normalisation under
    which a linear operator ``tr(A P)`` has slope exactly bounded by the
    extreme eigenvalues of ``A``.
    """
    return trace(P)


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def random_symmetric(n: int, rng: np.random.Generator, size: tuple = (), scale=1.0) -> np.ndarray:
    return scale * sym(rng.standard_normal(tuple(size) + (n, n)))


def random_psd(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random positive semidefinite matrix of random rank, unit trace."""
    rank = int(rng.integers(1, n + 1))
    v = rng.standard_normal((n, rank))
    P = v @ v.T
    return P / np.trace(P)
