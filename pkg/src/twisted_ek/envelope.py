"""Convex extension of a block-structured convex operator beyond the band ``E_{lambda,kappa}``.

The extension is the supremum of affine minorants ``tr(S M) + c`` whose
slope ``S`` is block diagonal. ``c`` is the largest constant keeping the
minorant below ``F_cup`` on a finite sample of the band. Two slope families
are available:

``"tangent"``
    ``S`` is the block-diagonal part of ``grad F_cup(N)`` at sampled ``N`` in
    the band. For convex ``F_cup`` these are supporting planes, so the
    maximum agrees with ``F_cup`` on the band up to sampling error.
``"block"``
    ``S = I_k (+) (-pi_ell(N))``: the leading-block slope is fixed at the
    identity and the trailing one ranges over the band. Every member has
    increments between ``lambda tr P`` and ``tr P / lambda`` along
    ``P >= 0``, but the family cannot match ``F_cup`` when its leading-block
    slope differs from the identity.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .domains import DEFAULT_SEED, EnvelopeSet
from .matrices import BlockShape, as_array, psd_norm, random_psd, random_symmetric
from .operators import MatrixFunction
from .structure import SCHEMA_VERSION, EllipticityReport

FAMILIES = ("tangent", "block")


class EnvelopeConfigError(ValueError):
    """Empty sample sets or an unknown minorant family."""


@dataclass(frozen=True)
class Minorant:
    N: np.ndarray
    slope: np.ndarray
    c: float

    def __call__(self, M):
        return np.einsum("...ij,ij->...", as_array(M), self.slope) + self.c


@dataclass
class EnvelopeApprox:
    """Maximum of affine minorants, stored as stacked slopes and constants."""

    set: EnvelopeSet
    N: np.ndarray  # (m, n, n)
    slopes: np.ndarray  # (m, n, n)
    c: np.ndarray  # (m,)
    base_samples: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 0)))
    family: str = "tangent"
    tolerance: float = math.nan

    def __len__(self) -> int:
        return len(self.c)

    @property
    def minorants(self) -> list[Minorant]:
        return [Minorant(N, S, float(c)) for N, S, c in zip(self.N, self.slopes, self.c)]

    def affine_values(self, M) -> np.ndarray:
        a = as_array(M)
        return np.einsum("...ij,mij->...m", a, self.slopes) + self.c

    def truncated(self, count: int) -> "EnvelopeApprox":
        return EnvelopeApprox(self.set, self.N[:count], self.slopes[:count], self.c[:count],
                              self.base_samples, self.family, self.tolerance)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "shape": {"k": self.set.shape.k, "ell": self.set.shape.ell},
            "lambda": self.set.lam,
            "kappa": self.set.kappa,
            "family": self.family,
            "tolerance": self.tolerance,
            "minorants": [{"N": N.tolist(), "slope": S.tolist(), "c": float(c)}
                          for N, S, c in zip(self.N, self.slopes, self.c)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EnvelopeApprox":
        shape = BlockShape(int(d["shape"]["k"]), int(d["shape"]["ell"]))
        es = EnvelopeSet(shape, float(d["lambda"]), float(d["kappa"]))
        mins = d["minorants"]
        N = np.array([m["N"] for m in mins], dtype=float)
        c = np.array([m["c"] for m in mins], dtype=float)
        if mins and "slope" in mins[0]:
            S = np.array([m["slope"] for m in mins], dtype=float)
        else:
            S = np.stack([_block_slope(x, shape) for x in N]) if len(N) else N
        return cls(es, N, S, c, family=d.get("family", "block"), tolerance=float(d.get("tolerance", math.nan)))


def _block_slope(N: np.ndarray, shape: BlockShape) -> np.ndarray:
    S = np.zeros_like(N)
    k = shape.k
    S[:k, :k] = np.eye(k)
    S[k:, k:] = -N[k:, k:]
    return S


def _block_diagonal(G: np.ndarray, shape: BlockShape) -> np.ndarray:
    out = np.zeros_like(G)
    k = shape.k
    out[..., :k, :k] = G[..., :k, :k]
    out[..., k:, k:] = G[..., k:, k:]
    return out


def build_envelope(fcup: MatrixFunction, set_: EnvelopeSet, n_minorants: int,
                   n_base_samples: int | None = None, family: str = "tangent",
                   seed: int = DEFAULT_SEED) -> EnvelopeApprox:
    """Sample ``N`` in the band and fit one minorant per ``N``.

    ``c = min_X [F_cup(X) - tr(S X)]`` over the base samples, which are
    ``n_base_samples`` band points (default ``10 * n_minorants``) together
    with the sampled ``N`` themselves. The reported tolerance is the
    agreement gap ``max (F_cup - envelope)`` over an independent sample of
    the band.
    """
    if family not in FAMILIES:
        raise EnvelopeConfigError(f"unknown minorant family {family!r}; choose from {FAMILIES}")
    if n_base_samples is None:
        n_base_samples = 10 * n_minorants
    if n_minorants < 1 or n_base_samples < 1:
        raise EnvelopeConfigError("minorant and base sample counts must be at least 1")
    shape = set_.shape
    N = set_.sample(n_minorants, seed)
    X = np.concatenate([set_.sample(n_base_samples, seed + 1), N])
    FX = np.asarray(fcup(X), dtype=float)
    if not np.all(np.isfinite(FX)):
        raise EnvelopeConfigError("F_cup is not finite on the band samples")
    if family == "tangent":
        S = _block_diagonal(np.asarray(fcup.grad(N)), shape)
    else:
        S = np.stack([_block_slope(x, shape) for x in N])
    c = np.min(FX[None, :] - np.einsum("xij,mij->mx", X, S), axis=1)
    env = EnvelopeApprox(set_, N, S, c, X, family)
    env.tolerance = agreement_gap(env, fcup, set_, max(200, n_minorants), seed + 2)
    return env


def eval_envelope(env: EnvelopeApprox, M) -> np.ndarray | float:
    """Maximum over the minorants; defined for every symmetric ``M``."""
    if len(env) == 0:
        raise EnvelopeConfigError("envelope has no minorants")
    out = np.max(env.affine_values(M), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def agreement_gap(env: EnvelopeApprox, fcup: MatrixFunction, set_: EnvelopeSet, samples: int = 400,
                  seed: int = DEFAULT_SEED + 7) -> float:
    """``max |F_cup - envelope|`` over band samples."""
    M = set_.sample(samples, seed)
    return float(np.max(np.abs(np.asarray(fcup(M)) - eval_envelope(env, M))))


def sample_around(set_: EnvelopeSet, count: int, rng: np.random.Generator, spread: float = 2.0) -> np.ndarray:
    """Half band members, half band members pushed off by a random symmetric matrix."""
    inside = set_.sample(count, int(rng.integers(2 ** 31)))
    push = random_symmetric(set_.n, rng, size=(count,), scale=spread)
    push[: count // 2] = 0.0
    return inside + push


def verify_sandwich(env: EnvelopeApprox, set_: EnvelopeSet, trials: int = 500, tol: float | None = None,
                    seed: int = DEFAULT_SEED, scale: float = 1.0) -> EllipticityReport:
    """Check ``lambda tr P - tol <= F~(M + P) - F~(M) <= tr P / lambda + tol`` for ``P >= 0``.

    ``M`` is drawn inside and outside the band; ``P`` has random rank and
    trace ``scale``, with the first trial using ``P = 0``. Violations record
    ``(M, P, increment / tr P)``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if tol is None:
        tol = env.tolerance if math.isfinite(env.tolerance) else 0.0
    rng = np.random.default_rng(seed)
    n = set_.n
    Ms = sample_around(set_, trials, rng)
    Ps = np.stack([scale * random_psd(n, rng) for _ in range(trials)])
    Ps[0] = 0.0
    diff = np.asarray(eval_envelope(env, Ms + Ps)) - np.asarray(eval_envelope(env, Ms))
    size = psd_norm(Ps)
    lam = set_.lam
    bad = (diff < lam * size - tol) | (diff > size / lam + tol)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(size > 0, diff / np.where(size > 0, size, 1.0), 0.0)
    nz = size > 0
    report = EllipticityReport(float(ratio[nz].min()) if nz.any() else math.nan,
                               float(ratio[nz].max()) if nz.any() else math.nan, trials)
    for i in np.flatnonzero(bad):
        report.violations.append((Ms[i], Ps[i], float(ratio[i])))
    return report


class Envelope(MatrixFunction):
    """The envelope as an operator; its gradient is the slope of an active minorant."""

    analytic = True

    def __init__(self, env: EnvelopeApprox, shift: float = 0.0):
        super().__init__(env.set.n)
        self.env = env
        self.shift = shift
        self.name = f"envelope[{len(env)} minorants]"

    def __call__(self, M):
        return eval_envelope(self.env, M) + self.shift

    def grad(self, M):
        idx = np.argmax(self.env.affine_values(M), axis=-1)
        return self.env.slopes[idx]

    def hess(self, M):
        n = self.dim
        return np.zeros(np.shape(as_array(M))[:-2] + (n, n, n, n))
