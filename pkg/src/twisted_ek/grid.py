"""Scalar fields on uniform grids over ``[-1, 1]^2`` and their discrete Hessians.

Node ``(i, j)`` sits at ``x = -1 + i h``, ``y = -1 + j h``; ``values[i, j]``
therefore has ``x`` along axis 0. The mask marks each node as outside (0),
boundary (1, prescribed data) or interior (2, unknown).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np

from .matrices import SymMatrix

OUTSIDE, BOUNDARY, INTERIOR = 0, 1, 2
BINARY_MAGIC = b"TWEKFLD1"


class StencilError(ValueError):
    """A difference stencil reaches nodes that carry no data."""


class ResolutionError(ValueError):
    """The grid is too coarse for the requested sub-ball or rescaling."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GridField:
    """Field on a ``points x points`` grid with spacing ``h = 2 / (points - 1)``."""

    points: int
    values: np.ndarray
    mask: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        P = self.points
        if P < 5 or P % 2 == 0:
            raise ValueError(f"points per side must be odd and >= 5, got {P}")
        if self.values.shape != (P, P) or self.mask.shape != (P, P):
            raise ValueError("values and mask must be points x points arrays")
        object.__setattr__(self, "values", _frozen(np.asarray(self.values, dtype=float)))
        object.__setattr__(self, "mask", _frozen(np.asarray(self.mask, dtype=np.uint8)))

    @property
    def spacing(self) -> Fraction:
        return Fraction(2, self.points - 1)

    @property
    def h(self) -> float:
        return 2.0 / (self.points - 1)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        t = -1.0 + self.h * np.arange(self.points)
        return np.meshgrid(t, t, indexing="ij")

    def positions(self) -> np.ndarray:
        X, Y = self.coords()
        return np.stack([X, Y], axis=-1)

    def with_values(self, values, **meta) -> "GridField":
        return GridField(self.points, values, self.mask, {**self.meta, **meta})

    @property
    def interior(self) -> np.ndarray:
        return self.mask == INTERIOR

    # -- constructors --------------------------------------------------------

    @staticmethod
    def square_mask(points: int) -> np.ndarray:
        mask = np.full((points, points), INTERIOR, dtype=np.uint8)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = BOUNDARY
        return mask

    @staticmethod
    def ball_mask(points: int, radius: float = 1.0) -> np.ndarray:
        """Nodes with ``|x| < radius`` are interior; their 9-point neighbours outside are boundary."""
        t = -1.0 + (2.0 / (points - 1)) * np.arange(points)
        X, Y = np.meshgrid(t, t, indexing="ij")
        inside = X * X + Y * Y < radius * radius
        inside[0, :] = inside[-1, :] = inside[:, 0] = inside[:, -1] = False
        near = np.zeros_like(inside)
        padded = np.pad(inside, 1)
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                near |= padded[1 + di:1 + di + points, 1 + dj:1 + dj + points]
        mask = np.where(inside, INTERIOR, np.where(near, BOUNDARY, OUTSIDE)).astype(np.uint8)
        return mask

    @classmethod
    def from_function(cls, points: int, func: Callable, domain: str = "square", radius: float = 1.0) -> "GridField":
        mask = cls.square_mask(points) if domain == "square" else cls.ball_mask(points, radius)
        t = -1.0 + (2.0 / (points - 1)) * np.arange(points)
        X, Y = np.meshgrid(t, t, indexing="ij")
        vals = np.asarray(func(X, Y), dtype=float) * np.ones_like(X)
        vals = np.where(mask == OUTSIDE, np.nan, vals)
        return cls(points, vals, mask)


def _stencil_ok(u: GridField) -> np.ndarray:
    """Interior nodes whose full 9-point stencil carries data."""
    P = u.points
    has = np.pad(u.mask != OUTSIDE, 1)
    ok = u.mask == INTERIOR
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            ok &= has[1 + di:1 + di + P, 1 + dj:1 + dj + P]
    return ok


def hessian_array(v: np.ndarray, h: float) -> np.ndarray:
    """Second differences of ``v`` at the ``(P-2) x (P-2)`` inner nodes, shape ``(..., 2, 2)``."""
    c = v[1:-1, 1:-1]
    hxx = (v[2:, 1:-1] - 2 * c + v[:-2, 1:-1]) / (h * h)
    hyy = (v[1:-1, 2:] - 2 * c + v[1:-1, :-2]) / (h * h)
    hxy = (v[2:, 2:] + v[:-2, :-2] - v[2:, :-2] - v[:-2, 2:]) / (4 * h * h)
    return np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)


def hessian_field(u: GridField) -> np.ndarray:
    """Discrete Hessians at every node; NaN where the stencil is incomplete."""
    P = u.points
    out = np.full((P, P, 2, 2), np.nan)
    with np.errstate(invalid="ignore"):
        out[1:-1, 1:-1] = hessian_array(u.values, u.h)
    out[~_stencil_ok(u)] = np.nan
    return out


def discrete_hessian(u: GridField, node: tuple[int, int]) -> SymMatrix:
    """Standard second differences with the four-point cross difference; exact on quadratics."""
    i, j = node
    if not (0 <= i < u.points and 0 <= j < u.points) or not _stencil_ok(u)[i, j]:
        raise StencilError(f"stencil at node {node} leaves the field's data")
    block = np.asarray(u.values[i - 1:i + 2, j - 1:j + 2])
    return SymMatrix.from_array(hessian_array(block, u.h)[0, 0])


def ball_mask(u: GridField, radius: float, strict: bool = False) -> np.ndarray:
    """Nodes within ``radius`` of the origin (closed ball unless ``strict``)."""
    X, Y = u.coords()
    r2 = X * X + Y * Y
    tol = 1e-12
    return r2 < radius * radius - tol if strict else r2 <= radius * radius + tol


def rescale_field(u: GridField, k: int) -> GridField:
    """``w_k(x) = 4^k u(x / 2^k)`` on its native grid; Hessians are preserved node for node."""
    if k < 0:
        raise ValueError("rescaling level must be non-negative")
    if k == 0:
        return u
    P = u.points
    if (P - 1) % (2 ** (k + 1)) != 0 or (P - 1) // 2 ** k + 1 < 5:
        raise ResolutionError(f"grid with {P} points per side cannot resolve level {k}")
    c = (P - 1) // 2
    m = (P - 1) // 2 ** (k + 1)
    block = np.asarray(u.values[c - m:c + m + 1, c - m:c + m + 1])
    if (u.mask[c - m:c + m + 1, c - m:c + m + 1] == OUTSIDE).any():
        raise ResolutionError("rescaled window reaches nodes without data")
    Q = 2 * m + 1
    return GridField(Q, (4.0 ** k) * block, GridField.square_mask(Q), {"rescaled_from": P, "level": k})


# -- serialisation ----------------------------------------------------------


def write_field_binary(u: GridField, path) -> None:
    """Little-endian layout: magic, uint32 points, float64 h, float64 values (row-major), uint8 mask."""
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<Id", u.points, u.h))
        fh.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(u.mask, dtype=np.uint8).tobytes())


def read_field_binary(path) -> GridField:
    data = Path(path).read_bytes()
    if not data.startswith(BINARY_MAGIC):
        raise ValueError("not a grid field file")
    off = len(BINARY_MAGIC)
    P, h = struct.unpack_from("<Id", data, off)
    off += struct.calcsize("<Id")
    vals = np.frombuffer(data, dtype="<f8", count=P * P, offset=off).reshape(P, P)
    off += 8 * P * P
    mask = np.frombuffer(data, dtype=np.uint8, count=P * P, offset=off).reshape(P, P)
    field_ = GridField(P, vals.astype(float), mask)
    if field_.h != h:
        raise ValueError("stored spacing disagrees with points per side")
    return field_


def write_field_csv(u: GridField, path) -> None:
    """Header ``pointsPerSide,h`` then one ``i,j,value,mask`` row per node in row-major order."""
    I, J = np.meshgrid(np.arange(u.points), np.arange(u.points), indexing="ij")
    with open(path, "w") as fh:
        fh.write(f"pointsPerSide,h\n{u.points},{u.h!r}\ni,j,value,mask\n")
        for i, j, v, m in zip(I.ravel(), J.ravel(), u.values.ravel(), u.mask.ravel()):
            fh.write(f"{i},{j},{float(v)!r},{int(m)}\n")


def read_field_csv(path) -> GridField:
    lines = Path(path).read_text().splitlines()
    P = int(lines[1].split(",")[0])
    rows = np.array([ln.split(",") for ln in lines[3:]], dtype=float)
    vals = rows[:, 2].reshape(P, P)
    mask = rows[:, 3].astype(np.uint8).reshape(P, P)
    return GridField(P, vals, mask)
