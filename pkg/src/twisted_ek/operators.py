"""Twisted-type operators ``F = F_cup + F_cap`` and their derivatives.

Matrix functions are vectorised: they take ``(..., n, n)`` stacks and return
``(...)`` values, ``(..., n, n)`` gradients and ``(..., n, n, n, n)`` second
derivatives.

Derivative convention: ``F^{ij}`` is the derivative along ``(E_ij + E_ji)/2``
and ``F^{ij,rs}`` the mixed second derivative along two such directions.
Both tensors are therefore symmetric in ``i <-> j`` and ``r <-> s``, the
off-diagonal gradient entries carry half the weight of a one-sided entry
derivative, and contractions ``sum_ij F^{ij} H_ij`` over the full index range
reproduce directional derivatives exactly.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .domains import EigenBox, EnvelopeSet
from .matrices import (
    BlockShape,
    DomainError,
    as_array,
    elementary_symmetric,
    opnorm,
    sym,
    sym_basis,
)

GRAD_STEP = 1e-5
HESS_STEP = 1e-3


class EvaluationError(ArithmeticError):
    """An operator produced a non-finite value."""


class OutOfDomainWarning(UserWarning):
    """A matrix lies outside the declared smoothness set of an operator."""


class GaugeError(DomainError):
    """A weak-concavity gauge condition fails; ``condition`` is 'i', 'ii' or 'iii'."""

    def __init__(self, condition: str, message: str):
        super().__init__(f"gauge condition ({condition}) violated: {message}")
        self.condition = condition


def _pairs(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i, n)]


def _outer_sym(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Tensor ``T[ijrs] = tr(X S_rs Y S_ij)`` with ``S_ij = (E_ij + E_ji)/2``."""
    t = np.einsum("...jr,...si->...ijrs", X, Y)
    t = t + np.swapaxes(t, -4, -3)
    t = t + np.swapaxes(t, -2, -1)
    return 0.25 * t


def _swap_pairs(T: np.ndarray) -> np.ndarray:
    return np.moveaxis(T, (-4, -3), (-2, -1))


class MatrixFunction:
    """Scalar function of symmetric matrices.

    Subclasses override ``__call__`` and, where closed forms exist, ``grad``
    and ``hess``; the defaults fall back to central differences.
    """

    name = "matrix function"
    analytic = False

    def __init__(self, dim: int):
        self.dim = dim

    def __call__(self, M) -> np.ndarray:
        raise NotImplementedError

    def value(self, M):
        out = self(as_array(M))
        return float(out) if np.ndim(out) == 0 else out

    def grad(self, M) -> np.ndarray:
        return fd_grad(self, M)

    def hess(self, M) -> np.ndarray:
        return fd_hess(self, M)

    def __add__(self, other: "MatrixFunction") -> "Combination":
        return Combination([(1.0, self), (1.0, other)])

    def __repr__(self):
        return f"<{type(self).__name__} {self.name} n={self.dim}>"


def _step(M: np.ndarray, base: float) -> np.ndarray:
    return base * (1.0 + opnorm(M))


def _checked(f: MatrixFunction, M: np.ndarray) -> np.ndarray:
    return np.asarray(f(M), dtype=float)


def fd_grad(f: MatrixFunction, M, step: float = GRAD_STEP) -> np.ndarray:
    """Central-difference gradient; halves the step once if it leaves the domain."""
    a = as_array(M)
    n = a.shape[-1]
    basis = sym_basis(n)
    for attempt in range(2):
        h = _step(a, step) * (0.5 ** attempt)
        hh = h[..., None, None]
        out = np.zeros(a.shape)
        for i, j in _pairs(n):
            E = basis[i, j]
            d = (_checked(f, a + hh * E) - _checked(f, a - hh * E)) / (2 * h)
            out[..., i, j] = d
            out[..., j, i] = d
        if np.all(np.isfinite(out)):
            return out
    raise EvaluationError("finite-difference gradient left the operator's domain")


def fd_hess(f: MatrixFunction, M, step: float = HESS_STEP) -> np.ndarray:
    """Nested central differences, exactly symmetric under ``(ij) <-> (rs)``."""
    a = as_array(M)
    n = a.shape[-1]
    basis = sym_basis(n)
    pairs = _pairs(n)
    for attempt in range(2):
        h = _step(a, step) * (0.5 ** attempt)
        hh = h[..., None, None]
        out = np.zeros(a.shape + (n, n))
        for p, (i, j) in enumerate(pairs):
            for (r, s) in pairs[p:]:
                A, B = basis[i, j], basis[r, s]
                S, D = A + B, A - B
                val = (
                    _checked(f, a + hh * S) - _checked(f, a + hh * D)
                    - _checked(f, a - hh * D) + _checked(f, a - hh * S)
                ) / (4 * h * h)
                for (x, y) in {(i, j), (j, i)}:
                    for (z, w) in {(r, s), (s, r)}:
                        out[..., x, y, z, w] = val
                        out[..., z, w, x, y] = val
        if np.all(np.isfinite(out)):
            return out
    raise EvaluationError("finite-difference second derivative left the operator's domain")


class Linear(MatrixFunction):
    """``F(M) = tr(A M) + c``."""

    analytic = True

    def __init__(self, A, c: float = 0.0, name: str | None = None):
        A = sym(np.asarray(A, dtype=float))
        super().__init__(A.shape[-1])
        self.A, self.c = A, float(c)
        self.name = name or "linear"

    def __call__(self, M):
        return np.einsum("ij,...ij->...", self.A, as_array(M)) + self.c

    def grad(self, M):
        a = as_array(M)
        return np.broadcast_to(self.A, a.shape).copy()

    def hess(self, M):
        a = as_array(M)
        n = self.dim
        return np.zeros(a.shape + (n, n))


def trace_op(n: int, c: float = 0.0) -> Linear:
    return Linear(np.eye(n), c, name="trace" if c == 0 else f"trace{c:+g}")


class Zero(Linear):
    def __init__(self, n: int):
        super().__init__(np.zeros((n, n)), 0.0, name="zero")


class SigmaK(MatrixFunction):
    """k-th elementary symmetric polynomial of the eigenvalues, with closed-form derivatives.

    ``grad sigma_k = sum_j (-1)^j sigma_{k-1-j} M^j``; the second derivative
    differentiates that expression once more along the symmetric basis.
    """

    analytic = True

    def __init__(self, n: int, k: int):
        if not 1 <= k <= n:
            raise DomainError(f"k={k} outside 1..{n}")
        super().__init__(n)
        self.k = k
        self.name = f"sigma_{k}"

    def __call__(self, M):
        return elementary_symmetric(as_array(M), self.k)[self.k]

    def _powers(self, a):
        pw = [np.broadcast_to(np.eye(self.dim), a.shape)]
        for _ in range(self.k):
            pw.append(pw[-1] @ a)
        return pw

    @staticmethod
    def _grad_from(m, e, pw):
        g = np.zeros(pw[0].shape)
        for j in range(m):
            g = g + (-1) ** j * e[m - 1 - j][..., None, None] * pw[j]
        return g

    def grad(self, M):
        a = as_array(M)
        e = elementary_symmetric(a, self.k)
        return self._grad_from(self.k, e, self._powers(a))

    def hess(self, M):
        a = as_array(M)
        k = self.k
        e = elementary_symmetric(a, k)
        pw = self._powers(a)
        out = np.zeros(a.shape + (self.dim, self.dim))
        for j in range(k):
            m = k - 1 - j
            gm = self._grad_from(m, e, pw)
            term = np.einsum("...ij,...rs->...ijrs", pw[j], gm)
            for b in range(j):
                term = term + e[m][..., None, None, None, None] * _outer_sym(pw[b], pw[j - 1 - b])
            out = out + (-1) ** j * term
        return 0.5 * (out + _swap_pairs(out))


class DetPower(MatrixFunction):
    """``F(M) = s * det(s * M_B)^p`` on the diagonal block ``B = start:stop``, ``s = +-1``.

    Undefined (NaN) unless ``s * M_B`` is positive definite.
    """

    analytic = True

    def __init__(self, n: int, exponent: float, negate: bool = False, start: int = 0, stop: int | None = None):
        super().__init__(n)
        self.p = float(exponent)
        self.s = -1.0 if negate else 1.0
        self.start, self.stop = start, n if stop is None else stop
        sign = "-" if negate else ""
        self.name = f"{sign}det({sign}M[{self.start}:{self.stop}])^{self.p:g}"

    def _block(self, a):
        b = self.s * a[..., self.start:self.stop, self.start:self.stop]
        ev = np.linalg.eigvalsh(b)
        ok = np.all(ev > 0, axis=-1)
        return b, ok

    def __call__(self, M):
        a = as_array(M)
        b, ok = self._block(a)
        det = np.where(ok, np.linalg.det(b), np.nan)
        return self.s * np.abs(det) ** self.p * np.where(ok, 1.0, np.nan)

    def _embed(self, blk, shape):
        out = np.zeros(shape)
        out[..., self.start:self.stop, self.start:self.stop] = blk
        return out

    def grad(self, M):
        a = as_array(M)
        b, ok = self._block(a)
        g = np.where(ok, np.abs(np.linalg.det(np.where(ok[..., None, None], b, np.eye(b.shape[-1])))) ** self.p, np.nan)
        inv = np.linalg.inv(np.where(ok[..., None, None], b, np.eye(b.shape[-1])))
        # d/dH of s*g(s*B) along H is p*g*tr(B^{-1} H_B)
        return self._embed(self.p * g[..., None, None] * inv, a.shape)

    def hess(self, M):
        a = as_array(M)
        b, ok = self._block(a)
        safe = np.where(ok[..., None, None], b, np.eye(b.shape[-1]))
        g = np.where(ok, np.abs(np.linalg.det(safe)) ** self.p, np.nan)
        inv = np.linalg.inv(safe)
        inv_full = self._embed(inv, a.shape)
        t = self.p * self.p * np.einsum("...ij,...rs->...ijrs", inv_full, inv_full)
        t = t - self.p * _outer_sym(inv_full, inv_full)
        return self.s * g[..., None, None, None, None] * t


class QuadraticForm(MatrixFunction):
    """``F(M) = <A M, M> = tr(A M^2)`` for symmetric ``A``."""

    analytic = True

    def __init__(self, A):
        A = sym(np.asarray(A, dtype=float))
        super().__init__(A.shape[-1])
        self.A = A
        self.name = "<AM,M>"

    def __call__(self, M):
        a = as_array(M)
        return np.einsum("ij,...jk,...ki->...", self.A, a, a)

    def grad(self, M):
        a = as_array(M)
        return sym(self.A @ a + a @ self.A)

    def hess(self, M):
        a = as_array(M)
        I = np.broadcast_to(np.eye(self.dim), a.shape)
        A = np.broadcast_to(self.A, a.shape)
        # D^2 F[H, K] = tr(A (HK + KH))
        t = _outer_sym(A, I) + _outer_sym(I, A)
        return 0.5 * (t + _swap_pairs(t))


class Combination(MatrixFunction):
    """``sum_i w_i f_i + c``."""

    def __init__(self, terms, c: float = 0.0, name: str | None = None):
        terms = [(float(w), f) for w, f in terms]
        dims = {f.dim for _, f in terms}
        if len(dims) != 1:
            raise DomainError("combined matrix functions must share a dimension")
        super().__init__(dims.pop())
        self.terms, self.c = terms, float(c)
        self.analytic = all(f.analytic for _, f in terms)
        self.name = name or " + ".join(f"{w:g}*{f.name}" for w, f in terms)

    def __call__(self, M):
        a = as_array(M)
        return sum(w * f(a) for w, f in self.terms) + self.c

    def grad(self, M):
        a = as_array(M)
        return sum(w * f.grad(a) for w, f in self.terms)

    def hess(self, M):
        a = as_array(M)
        return sum(w * f.hess(a) for w, f in self.terms)


def _expr_namespace(M: np.ndarray) -> dict:
    n = M.shape[-1]

    def det(X):
        return np.linalg.det(X)

    return {
        "M": M,
        "I": np.eye(n),
        "n": n,
        "tr": lambda X: np.trace(X, axis1=-2, axis2=-1),
        "det": det,
        "sigma": lambda X, k: elementary_symmetric(X, k)[k],
        "m": lambda i, j: M[..., i - 1, j - 1],
        "block": lambda X, i0, i1: X[..., i0:i1, i0:i1],
        "eig": lambda X: np.linalg.eigvalsh(X),
        "sqrt": np.sqrt, "log": np.log, "exp": np.exp, "abs": np.abs,
        "minimum": np.minimum, "maximum": np.maximum, "pi": math.pi,
    }


class Expression(MatrixFunction):
    """User operator from a numpy expression in ``M`` (see ``EXPRESSION_HELP``)."""

    def __init__(self, n: int, source: str):
        super().__init__(n)
        self.source = source
        self.name = source
        try:
            self._code = compile(source, "<operator>", "eval")
        except SyntaxError as exc:
            raise DomainError(f"cannot parse operator expression {source!r}: {exc.msg}") from exc

    def __call__(self, M):
        a = as_array(M)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = eval(self._code, {"__builtins__": {}}, _expr_namespace(a))
        return np.broadcast_to(np.asarray(out, dtype=float), a.shape[:-2])


EXPRESSION_HELP = """\
Custom operators are numpy expressions in the symmetric matrix M (stacked over
leading axes). Available names:
  M, I, n                 the matrix, identity, dimension
  tr(X), det(X)           trace and determinant
  sigma(X, k)             k-th elementary symmetric polynomial of eigenvalues
  m(i, j)                 entry (1-based)
  block(X, i0, i1)        diagonal block X[i0:i1, i0:i1] (0-based, half-open)
  eig(X)                  eigenvalues (ascending, last axis)
  sqrt log exp abs minimum maximum pi
Matrix products use '@'. Derivatives are taken by central differences.
Example config entry:
  {"preset": "custom", "n": 2, "fcup": "tr(M) + 0.25*tr(M@M) - 1",
   "fcap": "sigma(M, 2)", "gauge": {"type": "power", "k": 2},
   "domain": {"type": "box", "n": 2, "lo": 0.1, "hi": 2.0}}"""


# -- gauges ---------------------------------------------------------------


@dataclass(frozen=True)
class ConcavityGauge:
    """Increasing concave reparametrisation ``G`` on ``U`` with lower bound ``Q <= G'``.

    ``U`` is ``[lo, hi]`` with either end possibly infinite; the endpoint
    ``lo`` belongs to ``U`` when ``closed_lo``.
    """

    name: str
    G: Callable[[np.ndarray], np.ndarray]
    Gprime: Callable[[np.ndarray], np.ndarray]
    Gsecond: Callable[[np.ndarray], np.ndarray]
    Q: Callable[[np.ndarray], np.ndarray]
    lo: float = -math.inf
    hi: float = math.inf
    closed_lo: bool = True
    closed_hi: bool = True
    params: dict = field(default_factory=dict)

    def in_U(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        above = x >= self.lo if self.closed_lo else x > self.lo
        below = x <= self.hi if self.closed_hi else x < self.hi
        return above & below

    def in_interior(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x > self.lo) & (x < self.hi)

    def to_dict(self) -> dict:
        return {"type": self.name, **self.params}


def power_gauge(k: int, printed_q: bool = False) -> ConcavityGauge:
    """``G(x) = x^(1/k)`` on ``[0, inf)`` with ``Q(x) = min(1, |x|^(1/k - 1)/k)``.

    ``printed_q=True`` uses the factor ``k`` in place of ``1/k`` in ``Q``;
    that variant violates ``G' >= Q`` for large ``x`` and exists only so the
    violation can be demonstrated.
    """
    p = 1.0 / k
    factor = float(k) if printed_q else p

    def G(x):
        return np.power(np.asarray(x, dtype=float), p)

    def Gp(x):
        with np.errstate(divide="ignore"):
            return p * np.power(np.asarray(x, dtype=float), p - 1)

    def Gpp(x):
        with np.errstate(divide="ignore"):
            return p * (p - 1) * np.power(np.asarray(x, dtype=float), p - 2)

    def Q(x):
        with np.errstate(divide="ignore"):
            return np.minimum(1.0, factor * np.power(np.abs(np.asarray(x, dtype=float)), p - 1))

    name = "power-printed" if printed_q else "power"
    return ConcavityGauge(name, G, Gp, Gpp, Q, lo=0.0, params={"k": k})


def identity_gauge() -> ConcavityGauge:
    one = lambda x: np.ones_like(np.asarray(x, dtype=float))  # noqa: E731
    zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))  # noqa: E731
    return ConcavityGauge("identity", lambda x: np.asarray(x, dtype=float), one, zero, one)


def gauge_from_dict(d: dict) -> ConcavityGauge:
    kind = d.get("type")
    if kind == "identity":
        return identity_gauge()
    if kind in ("power", "power-printed"):
        return power_gauge(int(d["k"]), printed_q=kind == "power-printed")
    raise DomainError(f"unknown gauge type {kind!r}")


def gauge_eval(gauge: ConcavityGauge, x: float) -> tuple[float, float, float]:
    """``(G(x), G'(x), Q(x))``, checking the three gauge conditions at ``x``."""
    x = float(x)
    if not gauge.in_U(x):
        raise GaugeError("i", f"x={x!r} is outside U=[{gauge.lo}, {gauge.hi}]")
    g, gp, q = float(gauge.G(x)), float(gauge.Gprime(x)), float(gauge.Q(x))
    if not gp > 0:
        raise GaugeError("ii", f"G'({x!r}) = {gp!r} is not positive")
    if q <= 0:
        raise GaugeError("iii", f"Q({x!r}) = {q!r} is not positive")
    if gauge.in_interior(x) and gp < q - 1e-12:
        raise GaugeError("iii", f"G'({x!r}) = {gp!r} < Q = {q!r}")
    return g, gp, q


# -- twisted operators ------------------------------------------------------


@dataclass(frozen=True)
class TwistedOperator:
    """``F = F_cup + F_cap`` with its gauge, smoothness set and ellipticity constants.

    ``rhs``, when set, makes the operator position dependent:
    ``F(M, x) = F_cup(M) + F_cap(M) - rhs(x)``.
    """

    name: str
    dim: int
    fcup: MatrixFunction
    fcap: MatrixFunction
    gauge: ConcavityGauge
    domain: EigenBox | EnvelopeSet
    lam: float
    Lam: float
    rhs: Callable[[np.ndarray], np.ndarray] | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.lam <= self.Lam:
            raise DomainError(f"ellipticity constants must satisfy 0 <= lambda <= Lambda, got {self.lam}, {self.Lam}")
        if self.fcup.dim != self.dim or self.fcap.dim != self.dim:
            raise DomainError("operator parts do not match the declared dimension")

    @property
    def x_dependent(self) -> bool:
        return self.rhs is not None

    def F(self, M, x=None) -> np.ndarray:
        a = as_array(M)
        val = self.fcup(a) + self.fcap(a)
        if self.rhs is not None and x is not None:
            val = val - self.rhs(np.asarray(x, dtype=float))
        return val

    def grad(self, M) -> np.ndarray:
        a = as_array(M)
        return self.fcup.grad(a) + self.fcap.grad(a)

    def with_rhs(self, rhs) -> "TwistedOperator":
        return TwistedOperator(self.name, self.dim, self.fcup, self.fcap, self.gauge,
                               self.domain, self.lam, self.Lam, rhs, dict(self.params))

    def convex_part(self) -> "TwistedOperator":
        """``F_cup`` alone, as an operator with a zero concave part."""
        return TwistedOperator(f"{self.name}[cup]", self.dim, self.fcup, Zero(self.dim),
                               identity_gauge(), self.domain, self.lam, self.Lam)


def eval_twisted(op: TwistedOperator, M, x=None) -> float:
    """``F_cup(M) + F_cap(M)``, minus the position-dependent right-hand side when present."""
    a = as_array(M)
    if a.shape != (op.dim, op.dim):
        raise DomainError(f"expected a {op.dim}x{op.dim} matrix")
    if not bool(op.domain.contains(a)):
        warnings.warn(f"matrix outside the declared domain of {op.name}", OutOfDomainWarning, stacklevel=2)
    val = float(op.F(a, x))
    if not math.isfinite(val):
        raise EvaluationError(f"{op.name} is not finite at the given matrix")
    return val


def grad_operator(f: MatrixFunction, M) -> np.ndarray:
    """``F^{ij}`` at ``M``: closed form for built-ins, central differences otherwise."""
    out = f.grad(as_array(M))
    if not np.all(np.isfinite(out)):
        raise EvaluationError(f"gradient of {f.name} is not finite")
    return sym(out)


def hess_operator(f: MatrixFunction, M) -> np.ndarray:
    """``F^{ij,rs}`` at ``M`` as an ``(n, n, n, n)`` tensor."""
    out = f.hess(as_array(M))
    if not np.all(np.isfinite(out)):
        raise EvaluationError(f"second derivative of {f.name} is not finite")
    return out


# -- presets ----------------------------------------------------------------


def twist_k(n: int = 2, k: int = 2, rhs: float = 1.0, lo: float = 0.01, hi: float = 4.0) -> TwistedOperator:
    """``Delta u + sigma_k(D^2 u) = rhs``, split as ``(tr - rhs) + sigma_k``."""
    fcup = trace_op(n, -rhs)
    fcap = SigmaK(n, k)
    # grad sigma_k has eigenvalues sigma_{k-1}(lambda | i) in [0, C(n-1, k-1) hi^(k-1)]
    Lam = 1.0 + math.comb(n - 1, k - 1) * hi ** (k - 1)
    return TwistedOperator(f"twist-{k}", n, fcup, fcap, power_gauge(k), EigenBox(n, lo, hi),
                           1.0, Lam, params={"n": n, "k": k, "rhs": rhs, "lo": lo, "hi": hi})


def twisted_ma(k: int = 1, ell: int = 1, eps: float = 0.1, lam: float = 0.5, kappa: float = 4.0) -> TwistedOperator:
    """Real twisted Monge-Ampere split with the ``eps`` trace transfer.

    ``F_cup = -det(-pi_ell M)^(1/n) + eps tr(pi_k M)`` and
    ``F_cap = det(pi_k M)^(1/n) - eps tr(pi_k M)``.
    """
    n = k + ell
    bound = lam ** (1 + k / n) / n
    if not 0 < eps <= bound:
        raise DomainError(f"eps must lie in (0, {bound:.6g}] for the concave part to stay elliptic")
    Ik = np.zeros((n, n))
    Ik[:k, :k] = np.eye(k)
    fcup = Combination([(1.0, DetPower(n, 1.0 / n, negate=True, start=k)), (1.0, Linear(eps * Ik))],
                       name=f"-det(-pi_ell M)^(1/{n}) + {eps:g} tr(pi_k M)")
    fcap = Combination([(1.0, DetPower(n, 1.0 / n, start=0, stop=k)), (1.0, Linear(-eps * Ik))],
                       name=f"det(pi_k M)^(1/{n}) - {eps:g} tr(pi_k M)")
    lo_l = lam ** (1 + ell / n) / n
    hi_l = lam ** (-1 - ell / n) / n
    domain = EnvelopeSet(BlockShape(k, ell), lam, kappa)
    return TwistedOperator("twisted-ma", n, fcup, fcap, identity_gauge(), domain,
                           min(eps, lo_l), max(eps, hi_l),
                           params={"k": k, "ell": ell, "eps": eps, "lambda": lam, "kappa": kappa})


def laplace(n: int = 2) -> TwistedOperator:
    return TwistedOperator("laplace", n, trace_op(n), Zero(n), identity_gauge(),
                           EigenBox(n, -1e3, 1e3), 1.0, 1.0, params={"n": n})


def convex_concave(n: int = 2, lo: float = 0.1, hi: float = 2.0) -> TwistedOperator:
    """``tr M + tr(M^2)/4 - 2`` plus the concave ``det(M)^(1/n)``; identity gauge."""
    fcup = Combination([(1.0, trace_op(n)), (0.25, QuadraticForm(np.eye(n)))], c=-2.0,
                       name="tr M + tr(M^2)/4 - 2")
    fcap = DetPower(n, 1.0 / n)
    # slope of F_cup along P >= 0 is tr((I + M/2) P)
    return TwistedOperator("convex-concave", n, fcup, fcap, identity_gauge(), EigenBox(n, lo, hi),
                           1.0 + lo / 2, 1.0 + hi / 2 + hi / (n * lo),
                           params={"n": n, "lo": lo, "hi": hi})


def custom(n: int, fcup: str, fcap: str, gauge: dict, domain: dict,
           lam: float = 0.0, Lam: float = math.inf) -> TwistedOperator:
    from .domains import domain_from_dict

    return TwistedOperator("custom", n, Expression(n, fcup), Expression(n, fcap),
                           gauge_from_dict(gauge), domain_from_dict(domain), lam, Lam,
                           params={"n": n, "fcup": fcup, "fcap": fcap, "gauge": gauge, "domain": domain})


@dataclass(frozen=True)
class Preset:
    factory: Callable[..., TwistedOperator]
    summary: str
    anchor: str


PRESETS: dict[str, Preset] = {
    "twist-k": Preset(
        twist_k,
        "Delta u + sigma_k(D^2 u) = 1 with F_cup = tr(M) - 1 (linear, uniformly elliptic) and\n"
        "F_cap = sigma_k(M), weakly concave through G(x) = x^(1/k) on U = [0, inf),\n"
        "Q(x) = min{1, |x|^(1/k-1)/k}. Domain: eigenvalue box inside the Garding cone.\n"
        "Parameters: n, k, rhs (default 1), lo, hi.",
        "the sigma_k twist family Delta u + sigma_k(D^2u) = 1",
    ),
    "twisted-ma": Preset(
        twisted_ma,
        "log det u_xx - log det(-u_yy) = 0 rewritten with the eps-split\n"
        "  -(det(-D^2_y u))^(1/n) + eps Tr(D^2_x u) + (det(D^2_x u))^(1/n) - eps Tr(D^2_x u) = 0,\n"
        "F_cup = -(det(-pi_ell M))^(1/n) + eps tr(pi_k M) (convex), F_cap = (det pi_k M)^(1/n) - eps tr(pi_k M)\n"
        "(concave, identity gauge). Domain: block band E_{lambda,kappa}.\n"
        "Parameters: k, ell, eps, lam, kappa.",
        "the real twisted Monge-Ampere equation and its convex-envelope extension",
    ),
    "laplace": Preset(laplace, "F_cup = tr(M), F_cap = 0. Parameters: n.", "linear reference operator"),
    "convex-concave": Preset(
        convex_concave,
        "F_cup = tr M + tr(M^2)/4 - 2 (convex, uniformly elliptic on the box), F_cap = det(M)^(1/n)\n"
        "(concave, degenerate elliptic); identity gauge G(x) = x, Q = 1. Parameters: n, lo, hi.",
        "convex + concave operators with G(x) = x, Q(x) = 1",
    ),
    "custom": Preset(custom, EXPRESSION_HELP, "user-defined split"),
}


def make_operator(preset: str, **params) -> TwistedOperator:
    try:
        entry = PRESETS[preset]
    except KeyError:
        raise DomainError(f"unknown preset {preset!r}; available: {', '.join(PRESETS)}") from None
    return entry.factory(**params)


def describe(preset: str) -> str:
    if preset not in PRESETS:
        raise DomainError(f"unknown preset {preset!r}; available: {', '.join(PRESETS)}")
    entry = PRESETS[preset]
    return f"{preset}: {entry.anchor}\n{entry.summary}\n"
