"""Damped Newton solver for ``F(D^2 u, x) = f`` on 2-D grids with Dirichlet data."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RectBivariateSpline
from scipy.sparse.linalg import splu

from .grid import BOUNDARY, INTERIOR, GridField, hessian_array
from .operators import MatrixFunction, TwistedOperator, Zero, identity_gauge

log = logging.getLogger(__name__)

class SolverError(RuntimeError):
    """The Newton system could not be solved."""


class NonConvergenceError(SolverError):
    """Newton stalled; carries the last iterate and the residual history."""

    def __init__(self, message: str, iterate: GridField, history: list[float]):
        super().__init__(message)
        self.iterate = iterate
        self.history = history


@dataclass(frozen=True)
class SolveConfig:
    residual_tol: float = 1e-10
    max_newton: int = 60
    line_search_shrink: float = 0.5
    min_step: float = 1e-6
    damping_floor: float = 1e-8
    keep_elliptic: bool = True

    def __post_init__(self):
        for name in ("residual_tol", "max_newton", "line_search_shrink", "min_step", "damping_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def _as_grid_values(spec, template: GridField) -> np.ndarray:
    if spec is None:
        return np.zeros((template.points, template.points))
    if callable(spec):
        X, Y = template.coords()
        return np.asarray(spec(X, Y), dtype=float) * np.ones_like(X)
    if isinstance(spec, GridField):
        return np.asarray(spec.values, dtype=float)
    arr = np.asarray(spec, dtype=float)
    return arr * np.ones((template.points, template.points)) if arr.ndim == 0 else arr


class _Discretisation:
    def __init__(self, op: TwistedOperator, grid: GridField, f: np.ndarray, g: np.ndarray):
        self.op, self.grid = op, grid
        self.h = grid.h
        P = grid.points
        inner = grid.mask[1:-1, 1:-1] == INTERIOR
        self.inner = inner
        self.nodes = np.argwhere(grid.mask == INTERIOR)
        self.index = -np.ones((P, P), dtype=np.int64)
        self.index[tuple(self.nodes.T)] = np.arange(len(self.nodes))
        self.f = f[grid.mask == INTERIOR]
        self.x = grid.positions()[grid.mask == INTERIOR]
        base = np.where(grid.mask == BOUNDARY, g, 0.0)
        self.base = base

    def field(self, unknowns: np.ndarray) -> np.ndarray:
        v = self.base.copy()
        v[tuple(self.nodes.T)] = unknowns
        return v

    def hessians(self, v: np.ndarray) -> np.ndarray:
        return hessian_array(v, self.h)[self.inner]

    def residual(self, unknowns: np.ndarray) -> np.ndarray:
        H = self.hessians(self.field(unknowns))
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.op.F(H, self.x if self.op.x_dependent else None) - self.f

    def min_ellipticity(self, unknowns: np.ndarray) -> float:
        H = self.hessians(self.field(unknowns))
        with np.errstate(invalid="ignore", divide="ignore"):
            A = self.op.grad(H)
        if not np.all(np.isfinite(A)):
            return -np.inf
        return float(np.linalg.eigvalsh(A)[:, 0].min())

    def jacobian(self, unknowns: np.ndarray, floor: float) -> sp.csc_matrix:
        H = self.hessians(self.field(unknowns))
        A = self.op.grad(H)
        if not np.all(np.isfinite(A)):
            raise SolverError("linearisation is not finite at the current iterate")
        lam_min = np.linalg.eigvalsh(A)[:, 0]
        shift = np.where(lam_min < floor, floor - lam_min, 0.0)
        A = A + shift[:, None, None] * np.eye(2)
        h2 = self.h * self.h
        a11, a22, a12 = A[:, 0, 0] / h2, A[:, 1, 1] / h2, 2 * A[:, 0, 1] / (4 * h2)
        coef = {
            (0, 0): -2 * a11 - 2 * a22,
            (1, 0): a11, (-1, 0): a11, (0, 1): a22, (0, -1): a22,
            (1, 1): a12, (-1, -1): a12, (1, -1): -a12, (-1, 1): -a12,
        }
        rows, cols, vals = [], [], []
        row_ids = np.arange(len(self.nodes))
        for (di, dj), c in coef.items():
            nb = self.index[self.nodes[:, 0] + di, self.nodes[:, 1] + dj]
            keep = nb >= 0
            rows.append(row_ids[keep]); cols.append(nb[keep]); vals.append(c[keep])
        n = len(self.nodes)
        return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def solve_dirichlet(op: TwistedOperator, f=0.0, g=None, grid: GridField | None = None,
                    cfg: SolveConfig = SolveConfig(), warm_start=None, certificate=None,
                    points: int = 65, domain: str = "square") -> GridField:
    """Solve ``F(D^2_h u, x) = f`` at interior nodes with ``u = g`` on boundary nodes.

    ``grid`` supplies the node layout (its values are ignored); otherwise a
    ``points``-per-side grid on the square or the unit ball is built. ``f`` and
    ``g`` may be constants, arrays, grid fields or callables ``(X, Y)``.
    The iteration starts from zero unless ``warm_start`` is given: a field,
    or ``"coarse"`` to solve first on the grid with half the resolution and
    interpolate (cubic splines) that solution. When the zero field has a
    non-finite residual and ``g`` is callable, ``g`` itself is the start.
    Newton steps are damped by backtracking on the sup-norm residual, so the
    recorded residual history strictly decreases. With ``cfg.keep_elliptic``
    a trial step is also rejected when it takes an elliptic iterate to one
    where some linearisation coefficient matrix is no longer positive definite,
    which keeps the iteration on the elliptic solution branch.
    """
    if op.dim != 2:
        raise ValueError("the grid solver supports n = 2 only")
    if grid is None:
        grid = GridField(points, np.zeros((points, points)),
                         GridField.square_mask(points) if domain == "square" else GridField.ball_mask(points))
    if certificate is None:
        log.info("solving %s without a structure certificate", op.name)
    elif not certificate.passed:
        log.warning("structure certificate for %s has failing conditions", op.name)
    gvals = _as_grid_values(g, grid)
    if not np.all(np.isfinite(gvals[grid.mask == BOUNDARY])):
        raise ValueError("boundary data must be finite on boundary nodes")
    disc = _Discretisation(op, grid, _as_grid_values(f, grid), gvals)
    if isinstance(warm_start, str):
        if warm_start != "coarse":
            raise ValueError(f"unknown warm start {warm_start!r}")
        warm_start = _coarse_start(op, f, g, grid, cfg)
    u = (_as_grid_values(warm_start, grid)[grid.mask == INTERIOR].copy()
         if warm_start is not None else np.zeros(len(disc.nodes)))

    r = disc.residual(u)
    if warm_start is None and not np.all(np.isfinite(r)) and callable(g):
        # zero lies outside the operator's domain; extend the boundary data instead
        log.info("zero start is not admissible for %s; starting from the boundary data", op.name)
        u = gvals[grid.mask == INTERIOR].copy()
        r = disc.residual(u)
    res = float(np.max(np.abs(r))) if np.all(np.isfinite(r)) else np.inf
    history, steps = [res], []

    def snapshot(vec):
        vals = np.where(grid.mask == 0, np.nan, disc.field(vec))
        return grid.with_values(vals, residual_history=list(history), step_lengths=list(steps))

    guard = cfg.keep_elliptic and disc.min_ellipticity(u) > cfg.damping_floor
    it = 0
    while res > cfg.residual_tol:
        if it >= cfg.max_newton:
            raise NonConvergenceError(f"no convergence in {cfg.max_newton} Newton steps (residual {res:.3e})",
                                      snapshot(u), history)
        if not np.isfinite(res):
            raise NonConvergenceError("initial iterate has a non-finite residual", snapshot(u), history)
        J = disc.jacobian(u, cfg.damping_floor)
        try:
            d = splu(J).solve(-r)
        except RuntimeError as exc:
            raise SolverError(f"Newton system is singular: {exc}") from exc
        t = 1.0
        while True:
            trial = u + t * d
            rt = disc.residual(trial)
            rt_max = float(np.max(np.abs(rt))) if np.all(np.isfinite(rt)) else np.inf
            if rt_max < res and (not guard or disc.min_ellipticity(trial) > cfg.damping_floor):
                break
            t *= cfg.line_search_shrink
            if t < cfg.min_step:
                raise NonConvergenceError(f"line search stalled at residual {res:.3e}", snapshot(u), history)
        u, r, res = trial, rt, rt_max
        history.append(res)
        steps.append(t)
        it += 1
        log.debug("newton %d: step %.3g residual %.3e", it, t, res)

    out = snapshot(u)
    H = disc.hessians(disc.field(u))
    inside = op.domain.contains(H)
    warnings_ = []
    if not np.all(inside):
        warnings_.append(f"{int((~inside).sum())} discrete Hessians lie outside the declared domain")
        log.warning("%s: %s", op.name, warnings_[-1])
    return grid.with_values(out.values, residual_history=history, step_lengths=steps, iterations=it,
                            max_residual=res, warnings=warnings_)


def _coarse_start(op, f, g, grid: GridField, cfg: SolveConfig):
    P = grid.points
    Pc = (P - 1) // 2 + 1
    square = np.array_equal(grid.mask, GridField.square_mask(P))
    if (P - 1) % 2 or Pc < 9 or not (callable(g) or np.ndim(g) == 0) or not (callable(f) or np.ndim(f) == 0):
        return None
    sub = "coarse" if Pc >= 17 else None
    coarse = solve_dirichlet(op, f, g, cfg=cfg, warm_start=sub, points=Pc,
                             domain="square" if square else "ball")
    vals = np.asarray(coarse.values, dtype=float)
    gc = _as_grid_values(g, coarse)
    vals = np.where(np.isfinite(vals), vals, gc)
    t_c = -1.0 + coarse.h * np.arange(Pc)
    t_f = -1.0 + grid.h * np.arange(P)
    return RectBivariateSpline(t_c, t_c, vals, kx=3, ky=3)(t_f, t_f)


def _as_convex_operator(fcup) -> TwistedOperator:
    if isinstance(fcup, TwistedOperator):
        return fcup.convex_part()
    if isinstance(fcup, MatrixFunction):
        from .domains import EigenBox

        return TwistedOperator(fcup.name, fcup.dim, fcup, Zero(fcup.dim), identity_gauge(),
                               EigenBox(fcup.dim, -np.inf, np.inf), 0.0, np.inf)
    raise TypeError("expected a TwistedOperator or MatrixFunction")


def solve_convex_auxiliary(fcup, t_ell: float, w: GridField, cfg: SolveConfig = SolveConfig(),
                           radius: float = 1.0) -> GridField:
    """Solve ``F_cup(D^2 v) = t_ell`` in the unit ball with ``v = w`` on the boundary layer.

    ``w`` must carry data on the whole square (as the rescaled fields do); it
    also serves as the Newton starting point.
    """
    op = _as_convex_operator(fcup)
    mask = GridField.ball_mask(w.points, radius)
    if not np.all(np.isfinite(np.asarray(w.values)[mask != 0])):
        raise ValueError("w must be defined on the ball and its boundary layer")
    grid = GridField(w.points, np.zeros((w.points, w.points)), mask)
    return solve_dirichlet(op, f=t_ell, g=w, grid=grid, cfg=cfg, warm_start=w)


def manufactured_rhs(op: TwistedOperator, hess_exact: Callable) -> Callable:
    """Right-hand side ``F(D^2 u*)`` from a closed-form Hessian ``hess_exact(X, Y) -> (..., 2, 2)``."""
    return lambda X, Y: op.F(hess_exact(X, Y))
