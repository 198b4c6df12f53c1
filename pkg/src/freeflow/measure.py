"""Finitely supported signed measures and their rasterization."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .geometry import DomainSpec, boundary_distance
from .grid import GridSpec, ScalarField

BALANCE_TOL = 1e-12


@dataclass
class PointMeasure:
    """``sum_i a_i eps_{x_i}`` stored as an ``(N, d)`` point array and ``(N,)`` weights."""

    points: np.ndarray
    weights: np.ndarray
    dim: int = field(default=0)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        pts = np.asarray(self.points, dtype=float)
        if w.size == 0:
            if not self.dim:
                self.dim = pts.shape[-1] if pts.ndim == 2 else 0
            pts = pts.reshape(0, self.dim)
        else:
            pts = pts.reshape(w.size, -1)
            if self.dim and pts.shape[1] != self.dim:
                raise ValueError("atom dimension mismatch")
            self.dim = pts.shape[1]
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(w))):
            raise ValueError("atoms must have finite coordinates and weights")
        self.points = pts
        self.weights = w

    @classmethod
    def from_atoms(cls, atoms, dim: int | None = None) -> PointMeasure:
        """Build from an iterable of ``(x, a)`` pairs; zero weights are dropped."""
        atoms = [(np.asarray(x, dtype=float).reshape(-1), float(a)) for x, a in atoms]
        atoms = [(x, a) for x, a in atoms if a != 0.0]
        if not atoms:
            return cls(np.zeros((0, dim or 0)), np.zeros(0), dim or 0)
        return cls(np.array([x for x, _ in atoms]), np.array([a for _, a in atoms]))

    @classmethod
    def dirac(cls, x, a: float = 1.0) -> PointMeasure:
        return cls.from_atoms([(x, a)])

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def mass(self) -> float:
        return float(np.sum(self.weights))

    @property
    def balanced(self) -> bool:
        scale = max(1.0, float(np.sum(np.abs(self.weights))))
        return abs(self.mass) <= BALANCE_TOL * scale

    def __add__(self, other: PointMeasure) -> PointMeasure:
        d = self.dim or other.dim
        pts = np.vstack([self.points.reshape(-1, d), other.points.reshape(-1, d)])
        return merge_atoms(PointMeasure(pts, np.concatenate([self.weights, other.weights]), d))

    def __neg__(self) -> PointMeasure:
        return PointMeasure(self.points.copy(), -self.weights, self.dim)

    def __sub__(self, other: PointMeasure) -> PointMeasure:
        return self + (-other)

    def scaled(self, t: float) -> PointMeasure:
        return PointMeasure(self.points.copy(), t * self.weights, self.dim)

    def reflected(self, signs) -> PointMeasure:
        return PointMeasure(self.points * np.asarray(signs, dtype=float), self.weights.copy(), self.dim)

    def positive_part(self) -> PointMeasure:
        keep = self.weights > 0
        return PointMeasure(self.points[keep], self.weights[keep], self.dim)

    def negative_part(self) -> PointMeasure:
        """The negative part as a positive measure."""
        keep = self.weights < 0
        return PointMeasure(self.points[keep], -self.weights[keep], self.dim)

    def to_dict(self) -> dict:
        return {"atoms": [{"x": p.tolist(), "a": float(a)} for p, a in zip(self.points, self.weights)]}

    @classmethod
    def from_dict(cls, data: dict, dim: int | None = None) -> PointMeasure:
        atoms = data.get("atoms", [])
        return cls.from_atoms([(at["x"], at["a"]) for at in atoms], dim)


def merge_atoms(m: PointMeasure) -> PointMeasure:
    """Combine atoms at identical points, dropping those that cancel."""
    if m.size == 0:
        return m
    uniq, inverse = np.unique(m.points, axis=0, return_inverse=True)
    w = np.zeros(len(uniq))
    np.add.at(w, inverse.reshape(-1), m.weights)
    keep = w != 0.0
    return PointMeasure(uniq[keep], w[keep], m.dim)


def check_atoms(m: PointMeasure, dom: DomainSpec, margin: float = 0.0) -> None:
    """Raise ``ValueError`` unless every atom lies in ``dom`` at distance > ``margin`` from its boundary."""
    if m.size == 0:
        return
    if m.dim != dom.dim:
        raise ValueError(f"measure dimension {m.dim} does not match domain dimension {dom.dim}")
    dist = np.asarray(boundary_distance(dom, m.points)).reshape(-1)
    bad = np.flatnonzero(~(dist > margin))
    if bad.size:
        x = m.points[bad[0]].tolist()
        raise ValueError(f"atom at {x} is not inside the open domain (boundary distance "
                         f"{dist[bad[0]]:.3g}, required > {margin:.3g})")


def balance(m: PointMeasure, dom: DomainSpec) -> PointMeasure:
    """Append ``(o, -sum a_i)`` so the measure has total mass zero, merging with an atom at ``o``.

    For ``delta(a)`` this yields ``eps_a - eps_o``, whose negative
    ``eps_o - eps_a`` is the divergence data of its flow representatives;
    see :func:`divergence_data`.
    """
    check_atoms(m, dom)
    if m.balanced:
        return m
    o = np.asarray(dom.basepoint)
    pts = np.vstack([m.points.reshape(-1, dom.dim), o[None, :]])
    w = np.concatenate([m.weights, [-m.mass]])
    return merge_atoms(PointMeasure(pts, w, dom.dim))


def splat_stencil(grid: GridSpec, x) -> tuple[list[tuple[int, ...]], list[float]]:
    """Cells and multilinear weights of the ``2^d`` cell centers surrounding ``x``."""
    s = (np.asarray(x, dtype=float) - grid.origin) / grid.h - 0.5
    base = np.floor(s).astype(int)
    t = s - base
    cells, weights = [], []
    for corner in product((0, 1), repeat=grid.dim):
        c = np.asarray(corner)
        wt = float(np.prod(np.where(c == 1, t, 1.0 - t)))
        if wt == 0.0:
            continue
        cells.append(tuple(int(v) for v in base + c))
        weights.append(wt)
    return cells, weights


def masked_stencil(grid: GridSpec, x) -> tuple[list[tuple[int, ...]], list[float]]:
    """Multilinear stencil of ``x`` restricted to masked cells.

    Along any axis where the stencil leaves the mask the splat collapses
    onto the cell containing ``x`` (moving the first moment by at most
    ``h/2``).  Raises ``ValueError`` if that cell itself is unmasked.
    """
    x = np.asarray(x, dtype=float)
    own = np.floor((x - grid.origin) / grid.h).astype(int)
    if np.any(own < 0) or np.any(own >= np.asarray(grid.dims)) or not grid.mask[tuple(own)]:
        raise ValueError(f"atom at {x.tolist()} lies outside the grid mask")
    s = (x - grid.origin) / grid.h - 0.5
    base = np.floor(s).astype(int)
    t = s - base
    # The stencil's other cell along axis k is own -+ e_k; collapse axes where it is unmasked.
    for k in range(grid.dim):
        other = own.copy()
        other[k] = base[k] + 1 if own[k] == base[k] else base[k]
        weight = t[k] if other[k] == base[k] + 1 else 1.0 - t[k]
        if weight > 0 and not grid.mask[tuple(other)]:
            t[k] = float(own[k] - base[k])
    for _ in range(grid.dim + 1):
        cells, weights = [], []
        bad_axes = np.zeros(grid.dim, dtype=bool)
        for corner in product((0, 1), repeat=grid.dim):
            c = np.asarray(corner)
            wt = float(np.prod(np.where(c == 1, t, 1.0 - t)))
            if wt == 0.0:
                continue
            cell = base + c
            if not grid.mask[tuple(cell)]:
                bad_axes |= cell != own
            cells.append(tuple(int(v) for v in cell))
            weights.append(wt)
        if not bad_axes.any():
            return cells, weights
        t = np.where(bad_axes, (own - base).astype(float), t)
    raise AssertionError("stencil collapse did not terminate")


def rasterize(m: PointMeasure, grid: GridSpec) -> ScalarField:
    """Multilinear splat of ``m`` onto cell centers, as a density (values per unit volume).

    The splat preserves each atom's mass, and its first moment unless the
    atom is within half a cell of the mask edge (see :func:`masked_stencil`).
    Raises ``ValueError`` for atoms outside the mask.
    """
    out = np.zeros(grid.dims)
    vol = grid.cell_volume
    for x, a in zip(m.points, m.weights):
        cells, weights = masked_stencil(grid, x)
        for c, wt in zip(cells, weights):
            out[c] += a * wt / vol
    return ScalarField(grid, out)


def divergence_data(m: PointMeasure, grid: GridSpec) -> ScalarField:
    """Divergence data ``b = -rasterize(m)`` of a balanced measure.

    ``sum a_i delta(x_i)`` balances to ``sum a_i eps_{x_i} - (sum a_i) eps_o``;
    flows representing it satisfy ``div g = (sum a_i) eps_o - sum a_i eps_{x_i}``.
    """
    if not m.balanced:
        raise ValueError("divergence data requires a balanced measure")
    return -rasterize(m, grid)
