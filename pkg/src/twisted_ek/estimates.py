"""Regularity diagnostics on computed and analytic fields.

Covers the sign decomposition behind the supersolution property of
``G(F_cap(D^2 u))``, its discrete residual, the dyadic sup/inf scan, discrete
Hoelder seminorms of Hessians, quadratic approximation at small scales and
the blow-down rigidity scan.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .grid import GridField, ResolutionError, ball_mask, hessian_array, hessian_field
from .matrices import opnorm
from .operators import GaugeError, TwistedOperator
from .structure import SCHEMA_VERSION, compute_gamma_Gamma

DELTA_LADDER = (0.5, 0.25, 0.1)


# -- sign decomposition -----------------------------------------------------


def lemma_terms(op: TwistedOperator, D2u, D3u) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The three terms of ``L[G(F_cap(D^2 u))]`` at a point, given ``D^2 u`` and ``D^3 u``.

    ``T1 = F_cup^{ab} (G' F_cap^{ij,rs} + G'' F_cap^{ij} F_cap^{rs}) u_aij u_brs``,
    ``T2 = G'' F_cap^{ab} F_cap^{ij} F_cap^{rs} u_aij u_brs`` and
    ``T3 = -G' F_cap^{ab} F_cup^{ij,rs} u_aij u_brs``. Each is non-positive
    for a twisted-type operator. Inputs may be stacked over leading axes.
    """
    M = np.asarray(D2u, dtype=float)
    U = np.asarray(D3u, dtype=float)
    x = op.fcap(M)
    if not np.all(op.gauge.in_interior(x)):
        bad = np.asarray(x)[~op.gauge.in_interior(x)].ravel()[0]
        raise GaugeError("i", f"F_cap = {bad!r} is not in the interior of U")
    Gp = op.gauge.Gprime(x)
    Gpp = op.gauge.Gsecond(x)
    cup1, cup2 = op.fcup.grad(M), op.fcup.hess(M)
    cap1, cap2 = op.fcap.grad(M), op.fcap.hess(M)
    v = np.einsum("...ij,...aij->...a", cap1, U)
    B_cap = np.einsum("...ijrs,...aij,...brs->...ab", cap2, U, U)
    B_cup = np.einsum("...ijrs,...aij,...brs->...ab", cup2, U, U)
    vv = np.einsum("...a,...b->...ab", v, v)
    Gp_, Gpp_ = np.asarray(Gp)[..., None, None], np.asarray(Gpp)[..., None, None]
    T1 = np.einsum("...ab,...ab->...", cup1, Gp_ * B_cap + Gpp_ * vv)
    T2 = Gpp * np.einsum("...ab,...ab->...", cap1, vv)
    T3 = -Gp * np.einsum("...ab,...ab->...", cap1, B_cup)
    return T1, T2, T3


def random_third_derivative(n: int, rng: np.random.Generator, size: tuple = ()) -> np.ndarray:
    """Fully symmetric random 3-tensors."""
    A = rng.standard_normal(tuple(size) + (n, n, n))
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    k = len(size)
    return sum(np.transpose(A, tuple(range(k)) + tuple(k + p for p in q)) for q in perms) / 6.0


# -- supersolution residual -------------------------------------------------


def supersolution_residual(op: TwistedOperator, u: GridField, radius: float | None = None) -> GridField:
    """Discrete ``L phi`` for ``phi = G(F_cap(D^2_h u))`` with coefficients from ``D^2_h u``.

    ``phi`` lives on the nodes with a complete Hessian stencil; ``L phi`` is
    reported where ``phi`` has a complete stencil (NaN elsewhere). With
    ``radius`` only nodes of that ball are used.
    """
    H = hessian_field(u)
    valid = np.isfinite(H[..., 0, 0])
    if radius is not None:
        valid &= ball_mask(u, radius, strict=True)
    vals = np.full(valid.shape, np.nan)
    vals[valid] = op.fcap(H[valid])
    gauge = op.gauge
    bad = valid & ~gauge.in_U(np.where(valid, vals, 0.0))
    if bad.any():
        node = tuple(int(i) for i in np.argwhere(bad)[0])
        raise GaugeError("i", f"F_cap(D^2 u) = {vals[node]!r} outside U at node {node}")
    phi = np.where(valid, gauge.G(np.where(valid, vals, gauge.lo if math.isfinite(gauge.lo) else 0.0)), np.nan)
    D = np.full(H.shape, np.nan)
    with np.errstate(invalid="ignore"):
        D[1:-1, 1:-1] = hessian_array(phi, u.h)
    ok = np.isfinite(D[..., 0, 0]) & valid
    A = op.grad(H[ok])
    res = np.full(valid.shape, np.nan)
    res[ok] = np.einsum("kij,kij->k", A, D[ok])
    return GridField(u.points, res, u.mask, {"kind": "supersolution-residual"})


def positive_part_max(residual: GridField, radius: float | None = None) -> float:
    vals = np.asarray(residual.values)
    sel = np.isfinite(vals)
    if radius is not None:
        sel &= ball_mask(residual, radius, strict=True)
    return float(np.max(np.maximum(vals[sel], 0.0)))


# -- dyadic scan ------------------------------------------------------------


@dataclass
class DyadicReport:
    xi: float
    k_max: int
    levels: list[dict]
    gamma: float
    Gamma: float
    first_small: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "kind": "dyadic-report", "xi": self.xi, "kMax": self.k_max,
                "gamma": self.gamma, "Gamma": self.Gamma, "perLevel": self.levels,
                "firstSmallLevel": {str(k): v for k, v in self.first_small.items()}}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "t_k", "s_k", "fractionE_k"])
        for lv in self.levels:
            w.writerow([lv["k"], repr(lv["t_k"]), repr(lv["s_k"]), repr(lv["fractionE_k"])])
        return buf.getvalue()


def dyadic_scan(op: TwistedOperator, u: GridField, xi: float, k_max: int,
                deltas=DELTA_LADDER) -> DyadicReport:
    """Per-level ``t_k = sup F_cup``, ``s_k = inf G(F_cap)`` and the fraction of ``E_k`` on ``B_{2^-k}``.

    ``E_k`` holds the nodes where ``F_cup <= t_k - xi``; its size is a node
    fraction of the ball. Levels run ``1..k_max``.
    """
    if xi <= 0:
        raise ValueError("xi must be positive")
    H = hessian_field(u)
    valid = np.isfinite(H[..., 0, 0])
    cup = np.full(valid.shape, np.nan)
    cap = np.full(valid.shape, np.nan)
    cup[valid] = op.fcup(H[valid])
    cap[valid] = op.fcap(H[valid])
    levels = []
    for k in range(1, k_max + 1):
        r = 2.0 ** -k
        if 2 * math.floor(r / u.h + 1e-9) + 1 < 5:
            raise ResolutionError(f"ball of radius 2^-{k} has fewer than 5 nodes per side")
        sel = ball_mask(u, r) & valid
        if not sel.any():
            raise ResolutionError(f"no interior nodes in the ball of radius 2^-{k}")
        t = float(np.max(cup[sel]))
        s = float(np.min(op.gauge.G(cap[sel])))
        in_E = cup[sel] <= t - xi
        g_t = float(op.gauge.G(-t)) if op.gauge.in_U(-t) else math.nan
        levels.append({"k": k, "t_k": t, "s_k": s, "G(-t_k)": g_t,
                       "measureE_k": int(in_E.sum()), "nodes": int(sel.sum()),
                       "fractionE_k": float(in_E.mean())})
    gamma, Gamma = compute_gamma_Gamma(op, u)
    first = {}
    for d in deltas:
        first[d] = next((lv["k"] for lv in levels if lv["fractionE_k"] <= d), None)
    return DyadicReport(xi, k_max, levels, gamma, Gamma, first)


# -- Hoelder seminorms ------------------------------------------------------


@dataclass
class HolderReport:
    alpha: float
    radius: float
    seminorm: float
    grid_levels: list[dict] = field(default_factory=list)
    pair: tuple | None = None

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "kind": "holder-report", "alpha": self.alpha,
                "radius": self.radius, "seminorm": self.seminorm, "gridLevels": self.grid_levels,
                "pair": None if self.pair is None else [list(map(float, p)) for p in self.pair]}


def _lattice_seminorm(idx: np.ndarray, h: float, H: np.ndarray, alpha: float, chunk: int = 256):
    """Max of ``|H_p - H_q| / |x_p - x_q|^alpha`` over node pairs on a lattice of spacing ``h``.

    ``idx`` are integer lattice coordinates; distances come from a lookup
    table of squared integer offsets.
    """
    N = len(idx)
    if N < 2:
        return 0.0, None
    if H.shape[-1] == 2:
        m = 0.5 * (H[:, 0, 0] + H[:, 1, 1])
        d = 0.5 * (H[:, 0, 0] - H[:, 1, 1])
        b = H[:, 0, 1]
    span = int(np.max(idx.max(0) - idx.min(0)))
    table = np.zeros(2 * span * span + 1)
    table[1:] = (h * np.sqrt(np.arange(1, 2 * span * span + 1))) ** (-alpha)
    best, best_pair = 0.0, None
    for s in range(0, N - 1, chunk):
        e = min(s + chunk, N)
        rows = np.arange(s, e)
        di = idx[s:e, None, 0] - idx[None, s:, 0]
        dj = idx[s:e, None, 1] - idx[None, s:, 1]
        r2 = di * di + dj * dj
        if H.shape[-1] == 2:
            diff = np.abs(m[s:e, None] - m[None, s:]) + np.hypot(d[s:e, None] - d[None, s:], b[s:e, None] - b[None, s:])
        else:
            diff = opnorm(H[s:e, None] - H[None, s:])
        ratio = diff * table[r2]
        upper = np.arange(s, N)[None, :] > rows[:, None]
        ratio = np.where(upper, ratio, 0.0)
        k = int(np.argmax(ratio))
        if ratio.flat[k] > best:
            best = float(ratio.flat[k])
            i, j = divmod(k, ratio.shape[1])
            best_pair = (s + i, s + j)
    return best, best_pair


def holder_seminorm(source, alpha: float, radius: float, center=(0.0, 0.0)) -> HolderReport:
    """``max ||D^2 u(x) - D^2 u(y)|| / |x - y|^alpha`` over node pairs in the closed ball.

    ``source`` is a GridField (discrete Hessians) or a tuple
    ``(lattice_index, spacing, hessians, positions)`` of analytic samples.
    Operator norms are used for the Hessian differences.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if isinstance(source, GridField):
        H = hessian_field(source)
        X, Y = source.coords()
        sel = ball_mask(source, radius) & np.isfinite(H[..., 0, 0])
        if center != (0.0, 0.0):
            sel = ((X - center[0]) ** 2 + (Y - center[1]) ** 2 <= radius * radius + 1e-12) & np.isfinite(H[..., 0, 0])
        idx = np.argwhere(sel)
        pos = np.stack([X[sel], Y[sel]], -1)
        value, pair = _lattice_seminorm(idx, source.h, H[sel], alpha)
        h = source.h
    else:
        idx, h, Hs, pos = source
        value, pair = _lattice_seminorm(np.asarray(idx), h, np.asarray(Hs), alpha)
    pts = None if pair is None else (tuple(pos[pair[0]]), tuple(pos[pair[1]]))
    return HolderReport(alpha, radius, value, [{"h": h, "seminorm": value}], pts)


def holder_refinement(fields: list[GridField], alpha: float, radius: float) -> HolderReport:
    """Seminorms of the same problem on successively refined grids; the last one is headline."""
    levels = [holder_seminorm(f, alpha, radius) for f in fields]
    last = levels[-1]
    return HolderReport(alpha, radius, last.seminorm,
                        [{"h": f.h, "seminorm": r.seminorm} for f, r in zip(fields, levels)], last.pair)


# -- quadratic approximation ------------------------------------------------


@dataclass
class QuadApproxReport:
    eta: float
    coefficients: tuple  # c, c_x, c_y, a_xx, a_xy, a_yy for c + g.y + y.A.y/2
    sup_error: float
    residual_at_P: float
    shift: float
    fit_error: float

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "kind": "quadratic-approx", "eta": self.eta,
                "P": list(self.coefficients), "supError": self.sup_error,
                "residualAtP": self.residual_at_P, "shift": self.shift, "fitError": self.fit_error}

    def evaluate(self, Y1, Y2):
        c, gx, gy, a, b, d = self.coefficients
        return c + gx * Y1 + gy * Y2 + 0.5 * (a * Y1 * Y1 + 2 * b * Y1 * Y2 + d * Y2 * Y2)


def quadratic_approx(u: GridField, op: TwistedOperator, eta: float) -> QuadApproxReport:
    """Fit ``P`` to ``eta^-2 u(eta y)`` on ``|y| <= 1`` and move ``D^2 P`` along ``+cI`` onto ``{F = 0}``."""
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    if 2 * math.floor(eta / u.h + 1e-9) + 1 < 9:
        raise ResolutionError(f"scale eta={eta} spans fewer than 9 nodes per side")
    X, Y = u.coords()
    sel = ball_mask(u, eta) & np.isfinite(np.asarray(u.values))
    y1, y2 = X[sel] / eta, Y[sel] / eta
    target = np.asarray(u.values)[sel] / eta ** 2
    design = np.stack([np.ones_like(y1), y1, y2, 0.5 * y1 * y1, y1 * y2, 0.5 * y2 * y2], -1)
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    fit_error = float(np.max(np.abs(design @ coef - target)))
    D2 = np.array([[coef[3], coef[4]], [coef[4], coef[5]]])

    def F_shift(c):
        return float(op.F(D2 + c * np.eye(2)))

    c = 0.0
    f0 = F_shift(0.0)
    if f0 != 0.0:
        direction = -1.0 if f0 > 0 else 1.0
        step = 1e-3 * (1.0 + np.abs(D2).max())
        lo = 0.0
        for _ in range(80):
            hi = lo + direction * step
            fh = F_shift(hi)
            if not math.isfinite(fh):
                raise ValueError("root bracket left the operator's domain")
            if np.sign(fh) != np.sign(f0) or fh == 0:
                break
            lo, step = hi, 2 * step
        else:
            raise ValueError("no root bracket for the projection onto F = 0")
        a_, b_ = sorted((lo, hi))
        c = brentq(F_shift, a_, b_, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    coef = coef.copy()
    coef[3] += c
    coef[5] += c
    Pc = design @ coef
    sup_error = float(np.max(np.abs(Pc - target)))
    resid = abs(F_shift(c))
    return QuadApproxReport(eta, tuple(float(v) for v in coef), sup_error, resid, float(c), fit_error)


# -- rigidity scan ----------------------------------------------------------


def rigidity_scan(op: TwistedOperator | None, hessian: Callable, alpha: float, R_list,
                  points: int = 129, bound: float | None = None, growth: float = 0.10) -> list[dict]:
    """Seminorm of ``D^2 v_R`` on ``B_{1/2}`` for the blow-downs ``v_R(x) = R^-2 u(Rx)``.

    ``hessian(X, Y)`` is the closed-form Hessian of the global function, so
    ``D^2 v_R(x) = hessian(R x)`` exactly. The reported value equals
    ``R^alpha [D^2 u]_{C^alpha(B_{R/2})}`` sampled on the image of the unit
    grid. Entries whose value grows by more than ``growth`` over the previous
    radius are flagged.
    """
    h = 2.0 / (points - 1)
    t = -1.0 + h * np.arange(points)
    X, Y = np.meshgrid(t, t, indexing="ij")
    sel = X * X + Y * Y <= 0.25 + 1e-12
    idx = np.argwhere(sel)
    pos = np.stack([X[sel], Y[sel]], -1)
    out = []
    prev = None
    for R in R_list:
        Hs = np.asarray(hessian(R * pos[:, 0], R * pos[:, 1]), dtype=float)
        if bound is not None and np.max(opnorm(Hs)) > bound * (1 + 1e-12):
            raise ValueError(f"Hessian bound {bound} violated at radius {R}")
        value, _ = _lattice_seminorm(idx, h, Hs, alpha)
        entry = {"R": float(R), "value": value, "flag": bool(prev is not None and value > (1 + growth) * prev)}
        if op is not None:
            entry["max_abs_F"] = float(np.max(np.abs(op.F(Hs))))
        out.append(entry)
        prev = value
    return out


# -- global test functions for the rigidity scan ------------------------------


def quadratic_function(A=((1.0, 0.0), (0.0, 1.0))):
    """``u = x.A.x / 2`` and its constant Hessian."""
    A = np.asarray(A, dtype=float)

    def u(X, Y):
        return 0.5 * (A[0, 0] * X * X + 2 * A[0, 1] * X * Y + A[1, 1] * Y * Y)

    def hess(X, Y):
        return np.broadcast_to(A, np.shape(X) + (2, 2)).copy()

    return u, hess


def bump_function(amplitude: float = 0.1, support: float = 0.5, A=((1.0, 0.0), (0.0, 1.0))):
    """Quadratic plus ``amplitude * exp(-1 / (1 - |x|^2 / support^2))`` inside the support."""
    q, qh = quadratic_function(A)
    r2s = support * support

    def _parts(X, Y):
        s = (np.asarray(X) ** 2 + np.asarray(Y) ** 2) / r2s
        inside = s < 1
        w = np.where(inside, 1.0 - s, 1.0)
        b = np.where(inside, amplitude * np.exp(-1.0 / w), 0.0)
        return s, inside, w, b

    def u(X, Y):
        return q(X, Y) + _parts(X, Y)[3]

    def hess(X, Y):
        X, Y = np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
        _, inside, w, b = _parts(X, Y)
        bs = -b / w ** 2
        bss = b * (1.0 / w ** 4 - 2.0 / w ** 3)
        g = np.stack([2 * X / r2s, 2 * Y / r2s], -1)
        H = bss[..., None, None] * g[..., :, None] * g[..., None, :] + (2 / r2s) * bs[..., None, None] * np.eye(2)
        return qh(X, Y) + np.where(inside[..., None, None], H, 0.0)

    return u, hess


def oscillating_function(amplitude: float = 0.1, A=((1.0, 0.0), (0.0, 1.0))):
    """Quadratic plus ``amplitude * sin(x_1)``; bounded, non-decaying Hessian oscillation."""
    q, qh = quadratic_function(A)

    def u(X, Y):
        return q(X, Y) + amplitude * np.sin(X)

    def hess(X, Y):
        H = qh(X, Y)
        H[..., 0, 0] -= amplitude * np.sin(np.asarray(X, dtype=float))
        return H

    return u, hess


TEST_FUNCTIONS = {"quadratic": quadratic_function, "bump": bump_function, "oscillating": oscillating_function}
