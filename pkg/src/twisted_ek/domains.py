"""Matrix sets on which operators are declared smooth and elliptic.

Two shapes are supported: a box on the eigenvalues and the block band of
matrices that are uniformly convex in the leading block, uniformly concave in
the trailing block and bounded in norm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, qmc

from .matrices import BlockShape, DomainError, as_array, opnorm

DEFAULT_SEED = 20150101
_EIG_TOL = 1e-12


def _sobol(d: int, count: int, seed: int) -> np.ndarray:
    sampler = qmc.Sobol(d, scramble=True, seed=seed)
    m = max(1, int(np.ceil(np.log2(max(count, 2)))))
    return sampler.random_base2(m)[:count]


def _orthogonal_from_uniform(u: np.ndarray, n: int) -> np.ndarray:
    """Rotation stack from uniforms of shape ``(count, n*n)``."""
    if n == 1:
        return np.ones((u.shape[0], 1, 1))
    if n == 2:
        th = np.pi * u[:, 0]
        c, s = np.cos(th), np.sin(th)
        return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    z = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12)).reshape(-1, n, n)
    q, r = np.linalg.qr(z)
    return q * np.sign(np.diagonal(r, axis1=-2, axis2=-1))[:, None, :]


@dataclass(frozen=True)
class EigenBox:
    """Symmetric matrices with every eigenvalue in ``[lo, hi]``."""

    n: int
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise DomainError("eigenvalue box needs lo < hi")

    kind = "box"

    def contains(self, M) -> np.ndarray:
        ev = np.linalg.eigvalsh(as_array(M))
        return np.all((ev >= self.lo - _EIG_TOL) & (ev <= self.hi + _EIG_TOL), axis=-1)

    def sample(self, count: int, seed: int = DEFAULT_SEED) -> np.ndarray:
        n = self.n
        u = _sobol(n + n * n, count, seed)
        lam = self.lo + (self.hi - self.lo) * u[:, :n]
        Q = _orthogonal_from_uniform(u[:, n:], n)
        return np.einsum("kij,kj,klj->kil", Q, lam, Q)

    def to_dict(self) -> dict:
        return {"type": "box", "n": self.n, "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class EnvelopeSet:
    """Block band: ``lam I <= pi_k(M) <= I/lam``, ``lam I <= -pi_ell(M) <= I/lam``, ``|M| <= kappa``."""

    shape: BlockShape
    lam: float
    kappa: float

    kind = "band"

    def __post_init__(self):
        if not 0 < self.lam <= 1:
            raise DomainError("band parameter lambda must lie in (0, 1]")
        if self.kappa <= 0:
            raise DomainError("norm bound kappa must be positive")

    @property
    def n(self) -> int:
        return self.shape.n

    def contains(self, M) -> np.ndarray:
        a = as_array(M)
        k = self.shape.k
        ek = np.linalg.eigvalsh(a[..., :k, :k])
        el = -np.linalg.eigvalsh(a[..., k:, k:])
        lo, hi = self.lam - _EIG_TOL, 1 / self.lam + _EIG_TOL
        ok = np.all((ek >= lo) & (ek <= hi), axis=-1)
        ok &= np.all((el >= lo) & (el <= hi), axis=-1)
        return ok & (opnorm(a) <= self.kappa + _EIG_TOL)

    def sample(self, count: int, seed: int = DEFAULT_SEED) -> np.ndarray:
        """Quasi-random members; the off-diagonal block is rejection-sampled."""
        k, ell = self.shape.k, self.shape.ell
        n = k + ell
        d = k + k * k + ell + ell * ell + k * ell
        lo, hi = self.lam, 1 / self.lam
        out: list[np.ndarray] = []
        batch = max(count, 16)
        attempt = 0
        while sum(len(o) for o in out) < count:
            u = _sobol(d, 2 * batch, seed + attempt)
            attempt += 1
            c = 0
            ak = lo + (hi - lo) * u[:, c:c + k]; c += k
            Qk = _orthogonal_from_uniform(u[:, c:c + k * k], k); c += k * k
            al = lo + (hi - lo) * u[:, c:c + ell]; c += ell
            Ql = _orthogonal_from_uniform(u[:, c:c + ell * ell], ell); c += ell * ell
            off = self.kappa * (2 * u[:, c:c + k * ell] - 1)
            M = np.zeros((len(u), n, n))
            M[:, :k, :k] = np.einsum("kij,kj,klj->kil", Qk, ak, Qk)
            M[:, k:, k:] = -np.einsum("kij,kj,klj->kil", Ql, al, Ql)
            M[:, :k, k:] = off.reshape(-1, k, ell)
            M[:, k:, :k] = np.swapaxes(M[:, :k, k:], -1, -2)
            out.append(M[self.contains(M)])
        return np.concatenate(out)[:count]

    def to_dict(self) -> dict:
        return {"type": "band", "k": self.shape.k, "ell": self.shape.ell,
                "lambda": self.lam, "kappa": self.kappa}


def domain_from_dict(d: dict):
    kind = d.get("type")
    if kind == "box":
        return EigenBox(int(d["n"]), float(d["lo"]), float(d["hi"]))
    if kind == "band":
        return EnvelopeSet(BlockShape(int(d["k"]), int(d["ell"])), float(d["lambda"]), float(d["kappa"]))
    raise DomainError(f"unknown domain type {kind!r}")
