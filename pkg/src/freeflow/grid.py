"""Cell-centered grids, vector/scalar fields and the discrete div/grad pair.

Fields are collocated at cell centers.  The divergence uses backward
differences and the gradient forward differences, restricted to the mask,
so that ``<div g, phi> = -<g, grad phi>`` holds exactly for every pair.

Every grid carries at least one unmasked cell layer around the mask.  A
vector field is zero there (extension by zero), but its divergence is not:
flux leaving the mask shows up as divergence in that ghost layer, which is
how divergence "in the sense of distributions on R^d" is represented.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .geometry import DomainSpec, NormSpec, boundary_distance, norm_eval

_COMPONENT_NAMES = ("gx", "gy", "gz")
_INDEX_NAMES = ("i", "j", "k")


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Uniform isotropic cell-centered grid.

    Cell ``c`` (a multi-index) has center ``origin + (c + 1/2) h``.
    ``mask[c]`` marks cells whose center lies in the domain.
    """

    origin: np.ndarray
    h: float
    mask: np.ndarray

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(-1)
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != origin.size:
            raise ValueError("mask dimensionality must match origin")
        if not self.h > 0:
            raise ValueError("grid spacing must be positive")
        if any(n < 3 for n in mask.shape):
            raise ValueError("grid needs at least 3 cells per axis")
        for k in range(mask.ndim):
            lo = np.take(mask, 0, axis=k)
            hi = np.take(mask, -1, axis=k)
            if lo.any() or hi.any():
                raise ValueError("mask must leave a ghost layer of unmasked cells on every side")
        origin.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "mask", mask)

    @property
    def dim(self) -> int:
        return self.mask.ndim

    @property
    def dims(self) -> tuple[int, ...]:
        return self.mask.shape

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    def centers(self) -> np.ndarray:
        """Cell centers, shape ``(d, *dims)``."""
        axes = [self.origin[k] + (np.arange(n) + 0.5) * self.h for k, n in enumerate(self.dims)]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    def axis_centers(self, k: int) -> np.ndarray:
        return self.origin[k] + (np.arange(self.dims[k]) + 0.5) * self.h

    def with_mask(self, mask: np.ndarray) -> GridSpec:
        return GridSpec(self.origin, self.h, mask)

    def zeros_vector(self) -> VectorField:
        return VectorField(self, np.zeros((self.dim, *self.dims)))

    def zeros_scalar(self) -> ScalarField:
        return ScalarField(self, np.zeros(self.dims))

    @classmethod
    def covering(cls, lo, hi, resolution: int, dom: DomainSpec | None = None) -> GridSpec:
        """Grid over the box ``[lo, hi]`` with ``resolution`` cells along its longest side.

        One ghost layer is added on each side.  A cell is masked when its
        center lies in ``[lo, hi]`` and, if given, in the open domain.
        """
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if not np.all(np.isfinite(lo) & np.isfinite(hi)) or not np.all(hi > lo):
            raise ValueError("covering box must be finite with hi > lo")
        if resolution < 1:
            raise ValueError("resolution must be positive")
        h = float(np.max(hi - lo)) / resolution
        # round to absorb float noise, e.g. 4/128 * 128
        n_inner = [max(1, int(math.ceil(round(s / h, 9)))) for s in hi - lo]
        # center the cells on the box along shorter axes
        inner_lo = (lo + hi) / 2 - np.array(n_inner) * h / 2
        origin = inner_lo - h
        dims = tuple(n + 2 for n in n_inner)
        grid = cls(origin, h, np.zeros(dims, dtype=bool))
        x = grid.centers()
        inside = np.ones(dims, dtype=bool)
        for k in range(len(dims)):
            inside &= (x[k] > lo[k]) & (x[k] < hi[k])
        if dom is not None:
            inside &= boundary_distance(dom, x, axis=0) > 0
        for k in range(len(dims)):
            idx = [slice(None)] * len(dims)
            idx[k] = [0, -1]
            inside[tuple(idx)] = False
        return cls(origin, h, inside)

    @classmethod
    def for_domain(cls, dom: DomainSpec, resolution: int) -> GridSpec:
        """Grid covering a bounded domain's bounding box."""
        if not dom.bounded:
            raise ValueError("for_domain requires a bounded domain; use GridSpec.covering")
        lo, hi = dom.bounds()
        return cls.covering(lo, hi, resolution, dom)


@dataclass(eq=False)
class VectorField:
    """Cell-centered vector field, ``values`` of shape ``(d, *grid.dims)``."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.dim, *self.grid.dims):
            raise ValueError(f"vector field shape {self.values.shape} does not match grid")

    def masked(self) -> VectorField:
        """Copy with the values outside the mask set to zero."""
        return VectorField(self.grid, self.values * self.grid.mask)

    def __add__(self, other: VectorField) -> VectorField:
        return VectorField(self.grid, self.values + other.values)

    def __sub__(self, other: VectorField) -> VectorField:
        return VectorField(self.grid, self.values - other.values)

    def __mul__(self, t: float) -> VectorField:
        return VectorField(self.grid, self.values * t)

    __rmul__ = __mul__


@dataclass(eq=False)
class ScalarField:
    """Cell-centered scalar field, ``values`` of shape ``grid.dims``."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.dims:
            raise ValueError(f"scalar field shape {self.values.shape} does not match grid")

    def __add__(self, other: ScalarField) -> ScalarField:
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other: ScalarField) -> ScalarField:
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, t: float) -> ScalarField:
        return ScalarField(self.grid, self.values * t)

    __rmul__ = __mul__

    def __neg__(self) -> ScalarField:
        return ScalarField(self.grid, -self.values)

    def total(self) -> float:
        """Discrete integral ``sum_c v(c) h^d``."""
        return float(np.sum(self.values)) * self.grid.cell_volume


# Raw array kernels, shared with the solver.

def div_array(g: np.ndarray, h: float) -> np.ndarray:
    """Backward-difference divergence of a ``(d, *dims)`` array that vanishes on the outer layer."""
    out = np.zeros(g.shape[1:])
    for k in range(g.shape[0]):
        gk = g[k]
        lead = [slice(None)] * gk.ndim
        lag = [slice(None)] * gk.ndim
        lead[k] = slice(1, None)
        lag[k] = slice(None, -1)
        out += gk
        out[tuple(lead)] -= gk[tuple(lag)]
    return out / h


def grad_array(phi: np.ndarray, h: float, mask: np.ndarray) -> np.ndarray:
    """Forward-difference gradient on masked cells; zero elsewhere."""
    d = phi.ndim
    out = np.zeros((d, *phi.shape))
    for k in range(d):
        lead = [slice(None)] * d
        lag = [slice(None)] * d
        lead[k] = slice(1, None)
        lag[k] = slice(None, -1)
        out[k][tuple(lag)] = phi[tuple(lead)] - phi[tuple(lag)]
    out *= mask
    return out / h


def divergence(g: VectorField) -> ScalarField:
    """Distributional divergence of ``g`` extended by zero, including the ghost layer."""
    return ScalarField(g.grid, div_array(g.values * g.grid.mask, g.grid.h))


def gradient(phi: ScalarField) -> VectorField:
    """Forward-difference gradient on masked cells, the negative adjoint of :func:`divergence`."""
    return VectorField(phi.grid, grad_array(phi.values, phi.grid.h, phi.grid.mask))


def inner(a, b) -> float:
    """Discrete L2 pairing ``sum_c <a(c), b(c)> h^d`` of two fields on one grid."""
    return float(np.sum(a.values * b.values)) * a.grid.cell_volume


def l1_norm(g: VectorField, spec: NormSpec) -> float:
    """Discrete ``L^1(Omega, E)`` norm: sum of ``||g(c)||_E h^d`` over masked cells."""
    if spec.dim != g.grid.dim:
        raise ValueError("norm and grid dimensions differ")
    pointwise = norm_eval(spec, g.values, axis=0)
    return float(np.sum(pointwise[g.grid.mask])) * g.grid.cell_volume


def is_divergence_free(g: VectorField, tol: float = 1e-12) -> bool:
    """Membership test for discrete divergence-free fields: ``max |div g| h^d <= tol``."""
    return bool(np.max(np.abs(divergence(g).values)) * g.grid.cell_volume <= tol)


def curl_field(psi: ScalarField, i: int = 0, j: int = 1) -> VectorField:
    """Discretely divergence-free field built from a stream function.

    ``g_i = D^-_j psi`` and ``g_j = -D^-_i psi`` with backward differences,
    so the backward-difference divergence ``D^-_i D^-_j psi - D^-_j D^-_i psi``
    cancels exactly.  ``psi`` must vanish near the mask boundary so that
    ``g`` is supported in the mask.
    """
    grid = psi.grid
    values = np.zeros((grid.dim, *grid.dims))
    for dst, src, sign in ((i, j, 1.0), (j, i, -1.0)):
        lag = [slice(None)] * grid.dim
        lead = [slice(None)] * grid.dim
        lag[src] = slice(None, -1)
        lead[src] = slice(1, None)
        back = psi.values.copy()
        back[tuple(lead)] -= psi.values[tuple(lag)]
        values[dst] = sign * back / grid.h
    if np.any(values[:, ~grid.mask] != 0):
        raise ValueError("stream function must be supported well inside the mask")
    return VectorField(grid, values)


# CSV dumps: index columns then component columns, row-major cell order.

def _index_columns(d: int) -> list[str]:
    if d > 3:
        raise ValueError("CSV dumps support d <= 3")
    return list(_INDEX_NAMES[:d])


def field_to_csv(field: VectorField | ScalarField) -> str:
    grid = field.grid
    d = grid.dim
    if isinstance(field, VectorField):
        cols = _index_columns(d) + list(_COMPONENT_NAMES[:d])
        data = field.values.reshape(d, -1).T
    else:
        cols = _index_columns(d) + ["v"]
        data = field.values.reshape(-1, 1)
    idx = np.indices(grid.dims).reshape(d, -1).T
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for ijk, vals in zip(idx, data):
        w.writerow([*map(int, ijk), *(repr(float(v)) for v in vals)])
    return buf.getvalue()


def field_from_csv(text: str, grid: GridSpec) -> VectorField | ScalarField:
    """Parse a field dump onto ``grid``; raises ``ValueError`` on malformed input."""
    d = grid.dim
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty field CSV")
    header = [c.strip() for c in rows[0]]
    idx_cols = _index_columns(d)
    if header == idx_cols + list(_COMPONENT_NAMES[:d]):
        vector = True
    elif header == idx_cols + ["v"]:
        vector = False
    else:
        raise ValueError(f"unexpected CSV header {header}")
    body = [r for r in rows[1:] if r]
    if len(body) != int(np.prod(grid.dims)):
        raise ValueError(f"CSV has {len(body)} rows, grid has {int(np.prod(grid.dims))} cells")
    try:
        arr = np.array([[float(x) for x in r] for r in body])
    except ValueError as exc:
        raise ValueError(f"non-numeric CSV entry: {exc}") from None
    if arr.shape[1] != len(header):
        raise ValueError("ragged CSV rows")
    idx = arr[:, :d].astype(int)
    if np.any(idx < 0) or np.any(idx >= np.array(grid.dims)):
        raise ValueError("cell index out of range")
    flat = np.ravel_multi_index(tuple(idx.T), grid.dims)
    if len(np.unique(flat)) != flat.size:
        raise ValueError("duplicate cell index in CSV")
    if vector:
        values = np.zeros((d, int(np.prod(grid.dims))))
        values[:, flat] = arr[:, d:].T
        return VectorField(grid, values.reshape(d, *grid.dims))
    values = np.zeros(int(np.prod(grid.dims)))
    values[flat] = arr[:, d]
    return ScalarField(grid, values.reshape(grid.dims))
