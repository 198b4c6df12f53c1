"""Fundamental-solution fields, flux quadrature and the flow representative of a point evaluation.

``h(x) = x / (d kappa_d |x|^d)`` is the gradient of the Laplace fundamental
solution; it has unit flux through every closed surface around the origin.
``h_a(x) = h(x - o) - h(x - a)`` therefore has divergence ``eps_o - eps_a``.
Cutting ``h_a`` off to a tube around the segment ``[o, a]`` and removing the
divergence the cutoff creates gives a compactly supported flow representing
``eps_o - eps_a``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Callable

import numpy as np

from .geometry import DomainSpec, NormSpec, segment_clearance
from .grid import GridSpec, ScalarField, VectorField, divergence
from .measure import PointMeasure, masked_stencil, rasterize
from .solver import BeckmannProblem, SolveReport, SolverParams, solve


def kappa(d: int) -> float:
    """Volume of the Euclidean unit ball in R^d."""
    if d < 1:
        raise ValueError("dimension must be at least 1")
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def h_eval(x, d: int | None = None) -> np.ndarray:
    """``x / (d kappa_d |x|^d)`` for points stacked along the last axis."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1] if d is None else d
    if x.shape[-1] != d:
        raise ValueError("point dimension mismatch")
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(r == 0):
        raise ValueError("h is singular at the origin")
    return x / (d * kappa(d) * r ** d)


def h_a_eval(x, a, o=None) -> np.ndarray:
    """``h(x - o) - h(x - a)``; identically zero when ``a = o``."""
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    o = np.zeros_like(a) if o is None else np.asarray(o, dtype=float)
    if np.array_equal(a, o):
        return np.zeros_like(x)
    return h_eval(x - o) - h_eval(x - a)


@dataclass(frozen=True)
class FundamentalField:
    dim: int
    center: tuple[float, ...] | None = None

    def __call__(self, x) -> np.ndarray:
        c = np.zeros(self.dim) if self.center is None else np.asarray(self.center, dtype=float)
        return h_eval(np.asarray(x, dtype=float) - c, self.dim)


def _gauss_panels(lo: float, hi: float, n: int, order: int = 10) -> tuple[np.ndarray, np.ndarray]:
    # composite Gauss-Legendre with about n nodes
    panels = max(1, n // order)
    t, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * t[None, :]).reshape(-1)
    weights = (half[:, None] * w[None, :]).reshape(-1)
    return nodes, weights


def boundary_rule(dom: DomainSpec, quad_points: int = 10000) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nodes, outer unit normals and surface weights on the boundary of a ball or box."""
    d = dom.dim
    if dom.kind == "ball":
        c = np.asarray(dom.params["center"])
        rad = dom.params["radius"]
        if d == 2:
            th = 2 * np.pi * np.arange(quad_points) / quad_points
            nu = np.stack([np.cos(th), np.sin(th)], axis=1)
            return c + rad * nu, nu, np.full(quad_points, 2 * np.pi * rad / quad_points)
        if d == 3:
            # Gauss-Legendre in z = cos(theta) times the trapezoid rule in azimuth
            nz = max(2, int(round(math.sqrt(quad_points / 2))))
            nphi = max(3, quad_points // nz)
            z, wz = np.polynomial.legendre.leggauss(nz)
            phi = 2 * np.pi * np.arange(nphi) / nphi
            Z, P = np.meshgrid(z, phi, indexing="ij")
            s = np.sqrt(1 - Z ** 2)
            nu = np.stack([s * np.cos(P), s * np.sin(P), Z], axis=-1).reshape(-1, 3)
            w = (wz[:, None] * np.full(nphi, 2 * np.pi / nphi)[None, :]).reshape(-1) * rad ** 2
            return c + rad * nu, nu, w
        raise ValueError("ball boundary quadrature is implemented for d = 2 and 3")
    if dom.kind == "box":
        lo, hi = dom.bounds()
        per_face = max(1, quad_points // (2 * d))
        per_axis = max(1, int(round(per_face ** (1 / max(1, d - 1)))))
        nodes, normals, weights = [], [], []
        for k in range(d):
            others = [j for j in range(d) if j != k]
            rules = [_gauss_panels(lo[j], hi[j], per_axis) for j in others]
            grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
            wts = np.ones_like(grids[0]) if grids else np.ones(1)
            for r, g in zip(rules, np.meshgrid(*[r[1] for r in rules], indexing="ij")):
                wts = wts * g
            for side, val in ((-1.0, lo[k]), (1.0, hi[k])):
                pts = np.empty((wts.size, d))
                pts[:, k] = val
                for j, g in zip(others, grids):
                    pts[:, j] = g.reshape(-1)
                nu = np.zeros((wts.size, d))
                nu[:, k] = side
                nodes.append(pts)
                normals.append(nu)
                weights.append(wts.reshape(-1))
        return np.vstack(nodes), np.vstack(normals), np.concatenate(weights)
    raise ValueError(f"boundary flux needs a ball or box, got {dom.kind!r}")


def boundary_flux(field: Callable[[np.ndarray], np.ndarray], dom: DomainSpec,
                  quad_points: int = 10000) -> float:
    """``int_{boundary} <field, nu> dH^{d-1}`` by quadrature."""
    if not dom.bounded:
        raise ValueError("boundary flux needs a bounded domain")
    x, nu, w = boundary_rule(dom, quad_points)
    return float(np.sum(np.sum(field(x) * nu, axis=1) * w))


def smoothstep_cutoff(s) -> np.ndarray:
    """1 on ``[0, 1/2]``, 0 on ``[3/4, inf)``, quintic (C^2) in between."""
    t = np.clip((np.asarray(s, dtype=float) - 0.5) / 0.25, 0.0, 1.0)
    return 1.0 - t ** 3 * (10.0 - 15.0 * t + 6.0 * t ** 2)


def segment_distance(x, o, a) -> np.ndarray:
    """Euclidean distance from points ``x`` (last axis) to the segment ``[o, a]``."""
    x = np.asarray(x, dtype=float)
    o = np.asarray(o, dtype=float)
    ab = np.asarray(a, dtype=float) - o
    L2 = float(ab @ ab)
    t = np.zeros(x.shape[:-1]) if L2 == 0 else np.clip(((x - o) @ ab) / L2, 0.0, 1.0)
    return np.linalg.norm(x - o - t[..., None] * ab, axis=-1)


@dataclass(frozen=True)
class TubeCutoff:
    """``eta(x) = psi(dist(x, [o, a]) / r)``: 1 within ``r/2`` of the segment, 0 beyond ``3r/4``."""

    o: tuple[float, ...]
    a: tuple[float, ...]
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("tube radius must be positive")

    def eta(self, x) -> np.ndarray:
        return smoothstep_cutoff(segment_distance(x, self.o, self.a) / self.r)

    def within(self, x, fraction: float = 1.0) -> np.ndarray:
        """Points in the open tube of radius ``fraction * r``."""
        return segment_distance(x, self.o, self.a) < fraction * self.r


@dataclass
class Representative:
    field: VectorField
    target: ScalarField
    tube_mask: np.ndarray
    radius: float
    residual: float
    correction: SolveReport | None


def _sample_cutoff_field(grid: GridSpec, tube: TubeCutoff, a: np.ndarray, o: np.ndarray) -> np.ndarray:
    x = np.moveaxis(grid.centers(), 0, -1)
    val = np.zeros(grid.dims + (grid.dim,))
    live = tube.eta(x) > 0
    singular = set()
    for p in (o, a):
        singular.add(tuple(np.floor((p - grid.origin) / grid.h).astype(int)))
    for c in singular:
        live[c] = False
    pts = x[live]
    val[live] = tube.eta(pts)[:, None] * h_a_eval(pts, a, o)
    offsets = np.array(list(product((-0.25, 0.25), repeat=grid.dim))) * grid.h
    for c in singular:
        center = x[c]
        sub = center + offsets
        ok = np.min(np.stack([np.linalg.norm(sub - o, axis=1), np.linalg.norm(sub - a, axis=1)]), axis=0) > 1e-12 * grid.h
        sub = sub[ok]
        val[c] = np.mean(tube.eta(sub)[:, None] * h_a_eval(sub, a, o), axis=0)
    return np.moveaxis(val, -1, 0) * grid.mask


def representative(a, dom: DomainSpec, grid: GridSpec, spec: NormSpec | None = None,
                   r: float | None = None, params: SolverParams | None = None) -> Representative:
    """Compactly supported flow ``g`` with ``divergence(g) = rasterize(eps_o - eps_a)``.

    ``eta * h_a`` is sampled at cell centers (cells holding ``o`` or ``a`` get
    the mean of ``2^d`` sub-cell samples).  Its discrete divergence differs
    from the target by a zero-mass residual supported in the tube; a minimal
    flow for that residual on the tube cells is subtracted.  The tube radius
    defaults to ``0.9`` times the segment's clearance from the boundary.
    Only feasibility of the correction matters, so it is returned even
    when its solve stops at ``max_iters``.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    d = grid.dim
    o = np.asarray(dom.basepoint, dtype=float)
    spec = spec or NormSpec("p2", d)
    params = params or SolverParams(max_iters=5000)
    if a.shape != (d,) or dom.dim != d:
        raise ValueError("point, domain and grid dimensions must agree")
    if d < 2:
        raise ValueError("the fundamental-solution construction needs d >= 2")
    target_m = PointMeasure.from_atoms([(o, 1.0), (a, -1.0)], d)
    if np.array_equal(a, o):
        return Representative(grid.zeros_vector(), grid.zeros_scalar(),
                              np.zeros(grid.dims, dtype=bool), 0.0, 0.0, None)
    clearance = segment_clearance(dom, o, a)
    if r is None:
        if math.isfinite(clearance):
            r = 0.9 * clearance
        else:
            # unbounded domain: stay clear of the grid's unmasked cells instead
            x = np.moveaxis(grid.centers(), 0, -1)
            r = 0.9 * (float(np.min(segment_distance(x[~grid.mask], o, a))) - math.sqrt(d) * grid.h)
    if not (0 < r < clearance):
        raise ValueError(f"tube radius {r:.3g} must be positive and below the clearance {clearance:.3g}")
    if r / 4 <= 2 * math.sqrt(d) * grid.h:
        raise ValueError(f"tube radius {r:.3g} is too small for grid spacing {grid.h:.3g}")
    tube = TubeCutoff(tuple(o), tuple(a), float(r))
    x = np.moveaxis(grid.centers(), 0, -1)
    tube_mask = tube.within(x) & grid.mask
    if np.any(tube.within(x) & ~grid.mask):
        raise ValueError("the grid mask does not cover the tube around [o, a]")
    for p in (o, a):
        masked_stencil(grid, p)

    target = rasterize(target_m, grid)
    g_tilde = VectorField(grid, _sample_cutoff_field(grid, tube, a, o))
    rho = divergence(g_tilde) - target
    tube_grid = grid.with_mask(tube_mask)
    g0, _, report = solve(BeckmannProblem(tube_grid, spec, ScalarField(tube_grid, rho.values), params))
    g = VectorField(grid, g_tilde.values - g0.values)
    residual = float(np.max(np.abs(divergence(g).values - target.values)))
    return Representative(g, target, tube_mask, float(r), residual, report)


def build_representative(a, dom: DomainSpec, grid: GridSpec, **kwargs) -> VectorField:
    """The flow of :func:`representative`."""
    return representative(a, dom, grid, **kwargs).field
