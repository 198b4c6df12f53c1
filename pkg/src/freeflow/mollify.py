"""Approximate units, discrete convolution and potential reconstruction from gradients.

A Lipschitz ``F`` with ``F(o) = 0`` is recovered from its gradient field
``f`` as ``F(x) = lim_n int_0^1 <(f * u_n)(o + t (x - o)), x - o> dt``, where
``u_n(x) = n^d rho(n x)`` and ``rho`` is the standard exponential bump.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product

import numpy as np
from scipy.integrate import simpson
from scipy.ndimage import correlate, map_coordinates

from .geometry import DomainSpec, segment_clearance
from .grid import GridSpec, ScalarField, VectorField

logger = logging.getLogger(__name__)


def bump(x, axis: int = -1) -> np.ndarray:
    """Unnormalized ``exp(-1 / (1 - |x|^2))`` inside the unit ball, 0 outside."""
    r2 = np.sum(np.asarray(x, dtype=float) ** 2, axis=axis)
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


@lru_cache(maxsize=None)
def normalize_bump(d: int, samples: int | None = None) -> float:
    """``C`` with ``int C * bump = 1``, by the midpoint rule on a tensor grid over ``[-1, 1]^d``.

    The bump vanishes to all orders at the sphere, so the rule converges
    faster than any power of the spacing.
    """
    if d < 1:
        raise ValueError("dimension must be at least 1")
    if samples is None:
        samples = {1: 4096, 2: 512}.get(d, 128)
    if samples < 64:
        raise ValueError("at least 64 samples per axis are required")
    h = 2.0 / samples
    t = -1.0 + (np.arange(samples) + 0.5) * h
    pts = np.stack(np.meshgrid(*([t] * d), indexing="ij"), axis=-1)
    return 1.0 / (float(np.sum(bump(pts))) * h ** d)


@dataclass(frozen=True)
class Mollifier:
    """``u_n(x) = n^d C bump(n x)``, supported in the closed ball of radius ``1/n``."""

    n: float
    dim: int
    C: float = field(default=0.0)

    def __post_init__(self):
        if not self.n > 0:
            raise ValueError("mollifier scale must be positive")
        if self.C == 0.0:
            object.__setattr__(self, "C", normalize_bump(self.dim))

    @property
    def radius(self) -> float:
        return 1.0 / self.n

    def rho(self, x) -> np.ndarray:
        return self.C * bump(x)

    def __call__(self, x) -> np.ndarray:
        return self.n ** self.dim * self.rho(self.n * np.asarray(x, dtype=float))

    def kernel(self, h: float) -> np.ndarray:
        """Weights on integer cell offsets ``k`` with ``|k h| < 1/n``, summing to 1."""
        m = int(math.floor(self.radius / h))
        k = np.arange(-m, m + 1) * h
        pts = np.stack(np.meshgrid(*([k] * self.dim), indexing="ij"), axis=-1)
        w = self(pts)
        return w / w.sum()


def convolve(f: VectorField | ScalarField, mol: Mollifier) -> VectorField | ScalarField:
    """``u_n * f`` with ``f`` extended by zero outside the mask; componentwise for vector fields.

    If the support radius ``1/n`` is below ``2h`` the kernel cannot be
    resolved and ``f`` is returned unchanged (a warning is logged).
    """
    grid = f.grid
    if mol.dim != grid.dim:
        raise ValueError("mollifier and grid dimensions differ")
    if mol.radius < 2 * grid.h:
        logger.warning("mollifier radius %.3g is below twice the grid spacing %.3g; "
                       "convolution skipped", mol.radius, grid.h)
        return f
    w = mol.kernel(grid.h)
    mask = grid.mask
    if isinstance(f, VectorField):
        vals = np.stack([correlate(c * mask, w, mode="constant", cval=0.0) * mask for c in f.values])
        return VectorField(grid, vals)
    return ScalarField(grid, correlate(f.values * mask, w, mode="constant", cval=0.0) * mask)


def interpolate(values: np.ndarray, grid: GridSpec, x: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of cell-centered ``values`` at points ``x`` of shape ``(N, d)``."""
    idx = ((np.atleast_2d(x) - grid.origin) / grid.h - 0.5).T
    return map_coordinates(values, idx, order=1, mode="constant", cval=0.0)


def _stencils_masked(grid: GridSpec, x: np.ndarray) -> bool:
    s = (np.atleast_2d(x) - grid.origin) / grid.h - 0.5
    base = np.floor(s).astype(int)
    dims = np.asarray(grid.dims)
    for corner in product((0, 1), repeat=grid.dim):
        c = base + np.asarray(corner)
        if np.any(c < 0) or np.any(c >= dims):
            return False
        if not np.all(grid.mask[tuple(c.T)]):
            return False
    return True


class Reconstructor:
    """Evaluates the reconstruction formula for one field and mollifier at many points."""

    def __init__(self, f: VectorField, mol: Mollifier, dom: DomainSpec, quad_m: int = 257):
        if quad_m < 8:
            raise ValueError("at least 8 quadrature nodes are required")
        if dom.dim != f.grid.dim:
            raise ValueError("domain and field dimensions differ")
        self.grid = f.grid
        self.mol = mol
        self.dom = dom
        self.quad_m = int(quad_m)
        self.smoothed = convolve(f, mol)
        self.o = np.asarray(dom.basepoint, dtype=float)

    def clearance_ok(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        try:
            clear = segment_clearance(self.dom, self.o, x)
        except ValueError:
            return False
        if not clear > self.mol.radius:
            return False
        return _stencils_masked(self.grid, self._nodes(x))

    def _nodes(self, x: np.ndarray) -> np.ndarray:
        t = np.linspace(0.0, 1.0, self.quad_m)
        return self.o[None, :] + t[:, None] * (x - self.o)[None, :]

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        if not self.clearance_ok(x):
            raise ValueError(f"segment from the base point to {x.tolist()} does not keep "
                             f"clearance {self.mol.radius:.3g} inside the domain and grid mask")
        nodes = self._nodes(x)
        vals = np.stack([interpolate(c, self.grid, nodes) for c in self.smoothed.values], axis=1)
        integrand = vals @ (x - self.o)
        return float(simpson(integrand, x=np.linspace(0.0, 1.0, self.quad_m)))


def reconstruct_potential(f: VectorField, x, mol: Mollifier, quad_m: int = 257,
                          dom: DomainSpec | None = None) -> float:
    """``int_0^1 <(f * u_n)(o + t (x - o)), x - o> dt`` by composite Simpson with ``quad_m`` nodes.

    ``dom`` defaults to the grid's bounding box with base point at the origin.
    """
    if dom is None:
        g = f.grid
        lo = g.origin + g.h
        hi = g.origin + (np.asarray(g.dims) - 1) * g.h
        dom = DomainSpec("box", g.dim, {"lo": lo, "hi": hi})
    return Reconstructor(f, mol, dom, quad_m)(x)
