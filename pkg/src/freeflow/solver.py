"""Minimal-flow (Beckmann) solver for the free-space norm.

Solves ``min ||g||_{L^1(Omega, E)}  s.t.  div g = b`` on a grid by the
primal-dual iteration of Chambolle and Pock::

    phi  <- phi + sigma (D gbar - b)
    g    <- prox_{tau ||.||_E}(g - tau D^T phi)       (pointwise)
    gbar <- g + theta (g - g_prev)

where ``D`` is the discrete divergence and ``D^T = -grad``.  Every
``check_every`` iterations the iterate is certified: the flow is projected
onto ``{D g = b}`` (an exact sparse solve), which gives a feasible upper
bound, and the potential is rescaled into ``{||grad phi||_{E*} <= 1}``, which
gives a lower bound by weak duality.  The best certified pair so far is
kept.  The iteration restarts from the running average when the gap has
dropped enough, and rebalances the primal and dual step sizes at each
restart.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sps
from scipy.sparse.csgraph import connected_components
from scipy.ndimage import map_coordinates
from scipy.sparse.linalg import splu

from . import _kernels
from .geometry import DomainSpec, NormSpec, dual_norm_eval
from .grid import (
    GridSpec,
    ScalarField,
    VectorField,
    div_array,
    grad_array,
    l1_norm,
)
from .measure import PointMeasure, balance, divergence_data

logger = logging.getLogger(__name__)


class InfeasibleProblem(ValueError):
    """The divergence data cannot be matched by a field supported in the mask."""


@dataclass
class SolverParams:
    max_iters: int = 20000
    tol_gap: float = 1e-3
    tol_div: float = 1e-6
    step_ratio: float | None = None
    theta: float = 1.0
    check_every: int = 100
    restarts: bool = True
    restart_factor: float = 0.2
    restart_max: int = 1000
    adaptive_ratio: bool = True

    def __post_init__(self):
        if self.max_iters < 0 or self.check_every < 1:
            raise ValueError("max_iters must be >= 0 and check_every >= 1")
        if self.step_ratio is not None and not self.step_ratio > 0:
            raise ValueError("step ratio must be positive")
        if not (self.tol_gap > 0 and self.tol_div > 0):
            raise ValueError("tolerances and step ratio must be positive")
        if not 0 <= self.theta <= 1:
            raise ValueError("over-relaxation theta must lie in [0, 1]")


@dataclass
class BeckmannProblem:
    grid: GridSpec
    norm: NormSpec
    b: ScalarField
    params: SolverParams = field(default_factory=SolverParams)

    def __post_init__(self):
        if self.norm.dim != self.grid.dim:
            raise ValueError("norm and grid dimensions differ")
        if self.b.grid is not self.grid and self.b.values.shape != self.grid.dims:
            raise ValueError("divergence data does not live on the problem grid")
        scale = max(1.0, float(np.sum(np.abs(self.b.values))) * self.grid.cell_volume)
        if abs(self.b.total()) > 1e-10 * scale:
            raise InfeasibleProblem(
                f"divergence data has total mass {self.b.total():.3e}; it must be balanced")


@dataclass
class SolveReport:
    value: float
    lower_bound: float
    gap: float
    div_residual: float
    iterations: int
    converged: bool

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)


def divergence_matrix(grid: GridSpec) -> sps.csr_matrix:
    """Sparse ``D`` mapping the stacked masked components to all cells (unscaled by ``1/h``).

    Column ``k * n_masked + m`` is component ``k`` at the ``m``-th masked
    cell in C order.
    """
    dims = grid.dims
    flat = np.flatnonzero(grid.mask.reshape(-1))
    strides = np.cumprod((1,) + dims[::-1])[:-1][::-1]
    n = flat.size
    rows, cols, vals = [], [], []
    for k in range(grid.dim):
        col = np.arange(n) + k * n
        rows += [flat, flat + strides[k]]
        cols += [col, col]
        vals += [np.ones(n), -np.ones(n)]
    return sps.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(int(np.prod(dims)), grid.dim * n),
    )


class FeasibilityProjector:
    """Euclidean projection onto ``{g : D g = b}`` for fields supported on the mask.

    Factorizes the graph Laplacian ``D D^T`` once, grounding one node per
    connected component.
    """

    def __init__(self, grid: GridSpec):
        self.grid = grid
        self._D = divergence_matrix(grid)
        self._DT = self._D.T.tocsr()
        self._mask_flat = grid.mask.reshape(-1)
        active = np.flatnonzero(np.asarray(abs(self._D).sum(axis=1)).reshape(-1) > 0)
        self._active = active
        L = (self._D @ self._D.T).tocsr()[active][:, active]
        ncomp, labels = connected_components(L, directed=False)
        self._labels = labels
        self._ncomp = ncomp
        # ground the first node of each component
        _, first = np.unique(labels, return_index=True)
        keep = np.ones(active.size, dtype=bool)
        keep[first] = False
        self._keep = keep
        self._lu = splu(L[keep][:, keep].tocsc()) if keep.any() else None

    def component_masses(self, r: np.ndarray) -> np.ndarray:
        """Per-component sums of a cell array, and the mass on inactive cells appended last."""
        flat = r.reshape(-1)
        comp = np.bincount(self._labels, weights=flat[self._active], minlength=self._ncomp)
        outside = np.sum(flat) - np.sum(flat[self._active])
        return np.append(comp, outside)

    def check_feasible(self, b: np.ndarray, rtol: float = 1e-10) -> None:
        m = self.component_masses(b)
        scale = max(1.0, float(np.sum(np.abs(b))))
        if np.any(np.abs(m) > rtol * scale):
            raise InfeasibleProblem(
                "divergence data is unbalanced on some connected part of the mask "
                "or lies outside the mask")

    def project(self, g: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Project a ``(d, *dims)`` array onto ``{div g = b}`` (unit-consistent with :func:`div_array`)."""
        h = self.grid.h
        d = self.grid.dim
        m = self._mask_flat
        gs = np.concatenate([g[k].reshape(-1)[m] for k in range(d)])
        # D here is unscaled; div = D g / h, so solve (D D^T) y = h (D g / h - b) h
        r = (self._D @ gs) - h * b.reshape(-1)
        y = np.zeros(self._active.size)
        if self._lu is not None:
            rr = r[self._active]
            y[self._keep] = self._lu.solve(rr[self._keep])
        full = np.zeros(r.size)
        full[self._active] = y
        gs = gs - self._DT @ full
        out = np.zeros_like(g)
        n = int(m.sum())
        for k in range(d):
            out[k].reshape(-1)[m] = gs[k * n:(k + 1) * n]
        return out


def duality_gap(g: VectorField, phi: ScalarField, b: ScalarField, spec: NormSpec) -> tuple[float, float]:
    """Certified gap and lower bound from a potential.

    ``phi`` is rescaled so that ``||grad phi||_{E*} <= 1`` on every masked
    cell; then ``sum b phi h^d`` is a lower bound on the minimal flow cost.
    Returns ``(gap, lower_bound)`` with ``gap = l1_norm(g) - lower_bound``.
    """
    lb = _lower_bound(phi.values, b.values, phi.grid, spec)
    return l1_norm(g, spec) - lb, lb


def _lower_bound(phi: np.ndarray, b: np.ndarray, grid: GridSpec, spec: NormSpec) -> float:
    grad = grad_array(phi, grid.h, grid.mask)
    lip = float(np.max(dual_norm_eval(spec, grad, axis=0))) if grid.mask.any() else 0.0
    return float(np.sum(b * phi)) * grid.cell_volume / max(1.0, lip)


def _div_residual(g: np.ndarray, b: np.ndarray, grid: GridSpec) -> float:
    return float(np.sum(np.abs(div_array(g, grid.h) - b))) * grid.cell_volume


def _auto_step_ratio(b: np.ndarray, grid: GridSpec) -> float:
    # ratio tau/sigma ~ ||rhs|| / ||cost||, the usual primal-weight heuristic
    nb = float(np.linalg.norm(b))
    nc = math.sqrt(max(1, int(grid.mask.sum())))
    return nb / nc if nb > 0 else 1.0


class _Certifier:
    """Turns an iterate into ``(gap, value, lower_bound, g_feasible, phi_hat, residual)``."""

    def __init__(self, grid: GridSpec, spec: NormSpec, b: np.ndarray):
        self.grid, self.spec, self.b = grid, spec, b
        self.projector = FeasibilityProjector(grid)
        self.projector.check_feasible(b * grid.cell_volume)

    def __call__(self, g: np.ndarray, phi: np.ndarray):
        grid, spec, b = self.grid, self.spec, self.b
        g_feas = self.projector.project(g, b)
        value = l1_norm(VectorField(grid, g_feas), spec)
        # the iteration ascends on <phi, D g - b>; the certificate potential is -phi
        grad = grad_array(-phi, grid.h, grid.mask)
        lip = float(np.max(dual_norm_eval(spec, grad, axis=0)))
        phi_hat = -phi / max(1.0, lip)
        lb = float(np.sum(b * phi_hat)) * grid.cell_volume
        res = _div_residual(g_feas, b, grid)
        return value - lb, value, lb, g_feas, phi_hat, res


def solve(problem: BeckmannProblem, g0: VectorField | None = None,
          phi0: ScalarField | None = None) -> tuple[VectorField, ScalarField, SolveReport]:
    """Minimal flow with divergence ``problem.b``.

    Returns the certified feasible flow, the rescaled potential (with
    ``||grad phi||_{E*} <= 1`` on the mask) and a :class:`SolveReport`.
    ``g0``/``phi0`` warm-start the iteration; ``phi0`` uses the sign
    convention of the returned potential.
    """
    grid, spec, prm = problem.grid, problem.norm, problem.params
    d, h = grid.dim, grid.h
    b = problem.b.values
    cert = _Certifier(grid, spec, b)

    if not np.any(b):
        zero = grid.zeros_vector()
        return zero, grid.zeros_scalar(), SolveReport(0.0, 0.0, 0.0, 0.0, 0, True)

    cells = np.flatnonzero(grid.mask.reshape(-1)).astype(np.int64)
    strides = (np.cumprod((1,) + grid.dims[::-1])[:-1][::-1]).astype(np.int64)
    kind = _kernels.KIND_CODES[spec.kind]
    w = np.asarray(spec.weights, dtype=float)
    b_flat = np.ascontiguousarray(b.reshape(-1))

    def compact(arr):
        return np.ascontiguousarray(arr.reshape(d, -1)[:, cells])

    def expand(gc):
        out = np.zeros((d, int(np.prod(grid.dims))))
        out[:, cells] = gc
        return out.reshape(d, *grid.dims)

    g = np.zeros((d, cells.size)) if g0 is None else compact(g0.values)
    phi = np.zeros(b_flat.size) if phi0 is None else -np.array(phi0.values, dtype=float).reshape(-1)
    gbar = g.copy()
    gsum = np.zeros_like(g)
    psum = np.zeros_like(phi)
    nsum = 0

    base = 0.99 * h / (2.0 * math.sqrt(d))
    ratio = prm.step_ratio if prm.step_ratio is not None else _auto_step_ratio(b, grid)
    g_anchor, phi_anchor = g.copy(), phi.copy()
    gap_anchor = None

    best = cert(expand(g), phi.reshape(grid.dims))
    it = 0
    converged = _done(best, prm)
    while not converged and it < prm.max_iters:
        n = min(prm.check_every, prm.max_iters - it)
        _kernels.cp_steps(g, gbar, phi, b_flat, cells, strides, h, base * ratio, base / ratio,
                          prm.theta, kind, w, n, gsum, psum)
        it += n
        nsum += n
        current = cert(expand(g), phi.reshape(grid.dims))
        candidates = [(current, g, phi)]
        if prm.restarts:
            g_avg, phi_avg = gsum / nsum, psum / nsum
            candidates.append((cert(expand(g_avg), phi_avg.reshape(grid.dims)), g_avg, phi_avg))
        for c, _, _ in candidates:
            if c[0] < best[0]:
                best = c
        logger.debug("iter %d value %.6g lower %.6g gap %.3g ratio %.3g",
                     it, best[1], best[2], best[0], ratio)
        if _done(best, prm):
            converged = True
            break
        if not prm.restarts:
            continue
        (c_gap, *_), g_new, phi_new = min(candidates, key=lambda t: t[0][0])
        if gap_anchor is None:
            gap_anchor = c_gap
        if c_gap <= prm.restart_factor * gap_anchor or nsum >= prm.restart_max:
            g, phi = np.array(g_new), np.array(phi_new)
            if prm.adaptive_ratio:
                dg = float(np.linalg.norm(g - g_anchor))
                dp = float(np.linalg.norm(phi - phi_anchor))
                if dg > 0 and dp > 0:
                    ratio = math.exp(0.5 * math.log(dg / dp) + 0.5 * math.log(ratio))
            g_anchor, phi_anchor = g.copy(), phi.copy()
            gbar = g.copy()
            gsum[:] = 0.0
            psum[:] = 0.0
            nsum = 0
            gap_anchor = c_gap

    gap, value, lb, g_feas, phi_hat, res = best
    report = SolveReport(value=value, lower_bound=lb, gap=gap, div_residual=res,
                         iterations=it, converged=converged)
    return VectorField(grid, g_feas), ScalarField(grid, phi_hat), report


def _done(c, prm: SolverParams) -> bool:
    gap, value, _, _, _, res = c
    return gap <= prm.tol_gap * value and res <= prm.tol_div


def prolong(values: np.ndarray, coarse: GridSpec, fine: GridSpec) -> np.ndarray:
    """Multilinear interpolation of cell-centered ``values`` from ``coarse`` to ``fine`` centers."""
    x = fine.centers()
    idx = [(x[k] - coarse.origin[k]) / coarse.h - 0.5 for k in range(fine.dim)]
    return map_coordinates(values, idx, order=1, mode="nearest")


@dataclass
class FreeNormSolution:
    """Result of :func:`solve_measure`.

    ``grid``, ``flow``, ``potential`` and ``measure`` (the balanced input)
    live in the solve frame, the image of the input under
    ``x -> signs * x``; :meth:`potential_original` and :meth:`flow_original`
    map the fields back.
    """

    grid: GridSpec
    flow: VectorField
    potential: ScalarField
    report: SolveReport
    measure: PointMeasure
    signs: tuple[int, ...]

    def _flipped_grid(self) -> GridSpec:
        g = self.grid
        flip = [k for k, sk in enumerate(self.signs) if sk < 0]
        origin = np.array(g.origin)
        for k in flip:
            origin[k] = -g.origin[k] - g.dims[k] * g.h
        return GridSpec(origin, g.h, np.flip(g.mask, axis=flip) if flip else g.mask)

    def potential_original(self) -> ScalarField:
        flip = [k for k, sk in enumerate(self.signs) if sk < 0]
        vals = np.flip(self.potential.values, axis=flip) if flip else self.potential.values
        return ScalarField(self._flipped_grid(), np.array(vals))

    def flow_original(self) -> VectorField:
        """Flow on the original frame's grid, satisfying the same discrete divergence constraint.

        A face flux owned by cell ``c`` in the solve frame belongs, after
        flipping axis ``k``, to the face on the low side of the image cell,
        which the forward convention assigns to its neighbour ``c - e_k``.
        The per-cell norms then pair different faces, so ``l1_norm`` of the
        result is generally larger than ``report.value``.
        """
        grid = self._flipped_grid()
        flip = [k for k, sk in enumerate(self.signs) if sk < 0]
        vals = np.flip(self.flow.values, axis=[k + 1 for k in flip]) if flip else self.flow.values
        out = np.array(vals)
        for k in flip:
            comp = -out[k]
            out[k] = np.roll(comp, -1, axis=k)
        return VectorField(grid, out * grid.mask)


def free_norm_grid(m: PointMeasure, dom: DomainSpec, resolution: int,
                   margin: float = 0.5) -> GridSpec:
    """Grid over the bounding box of the atoms of the balanced ``m``, inflated by
    ``margin`` times its diameter and clipped to the domain's bounds."""
    lo = m.points.min(axis=0)
    hi = m.points.max(axis=0)
    diam = float(np.linalg.norm(hi - lo))
    lo, hi = lo - margin * diam, hi + margin * diam
    if dom.bounded:
        blo, bhi = dom.bounds()
        lo, hi = np.maximum(lo, blo), np.minimum(hi, bhi)
    return GridSpec.covering(lo, hi, resolution, dom)


def orientations(d: int) -> list[tuple[int, ...]]:
    """Axis reflections up to the global flip (which leaves the discretization unchanged)."""
    return [(1,) + s for s in itertools.product((1, -1), repeat=d - 1)]


def preferred_orientation(flow: VectorField) -> tuple[int, ...]:
    """Reflection under which the flow runs mostly along the cheaply discretized diagonals.

    Face fluxes are averaged to cell centers and ``Q_ij = sum c_i c_j`` is
    formed; the reflection ``s`` minimizing ``sum_{i<j} s_i s_j Q_ij`` turns
    most of the transport into ``(1, -1)``-type directions.
    """
    g = flow.values
    d = g.shape[0]
    centered = []
    for k in range(d):
        prev = np.zeros_like(g[k])
        sl_dst = [slice(None)] * d
        sl_src = [slice(None)] * d
        sl_dst[k], sl_src[k] = slice(1, None), slice(None, -1)
        prev[tuple(sl_dst)] = g[k][tuple(sl_src)]
        centered.append(0.5 * (g[k] + prev))
    Q = np.array([[float(np.sum(ci * cj)) for cj in centered] for ci in centered])
    best, best_score = (1,) * d, None
    for signs in orientations(d):
        s = np.asarray(signs, dtype=float)
        score = float(np.sum(np.triu(np.outer(s, s) * Q, 1)))
        if best_score is None or score < best_score - 1e-12 * np.abs(Q).sum():
            best, best_score = signs, score
    return best


def solve_measure(m: PointMeasure, dom: DomainSpec, spec: NormSpec, resolution: int,
                  margin: float = 0.5, params: SolverParams | None = None,
                  levels: int = 3, orient: bool = True) -> FreeNormSolution:
    """Free-space norm of ``m`` with the optimal flow and potential.

    The measure is balanced against the base point, rasterized and solved on
    a ladder of grids (``resolution / 2^k`` for ``k < levels``, never coarser
    than 16 cells), each level warm-started from the previous one.

    The forward-difference pairing of flow components is anisotropic: a
    thin staircase flow along ``(1, 1)`` is charged its l1 length while one
    along ``(1, -1)`` is charged exactly.  With ``orient`` the coarsest
    solution picks a reflected frame (:func:`preferred_orientation`) and
    the ladder continues there.
    """
    params = params or SolverParams()
    if spec.dim != dom.dim:
        raise ValueError("norm and domain dimensions differ")
    mb = balance(m, dom)
    d = dom.dim
    if mb.size == 0:
        grid = GridSpec.for_domain(dom, resolution) if dom.bounded else GridSpec.covering(
            np.full(d, -1.0), np.full(d, 1.0), resolution)
        return FreeNormSolution(grid, grid.zeros_vector(), grid.zeros_scalar(),
                                SolveReport(0.0, 0.0, 0.0, 0.0, 0, True), mb, (1,) * d)
    ladder = [resolution // 2 ** k for k in range(levels) if resolution // 2 ** k >= 16]
    ladder = ladder[::-1] or [resolution]

    def level(res, frame, prev):
        mf, domf = frame
        grid = free_norm_grid(mf, domf, res, margin)
        b = divergence_data(mf, grid)
        g0 = phi0 = None
        if prev is not None:
            pg, pflow, pphi = prev
            g0 = VectorField(grid, np.stack([prolong(c, pg, grid) for c in pflow.values]) * grid.mask)
            phi0 = ScalarField(grid, prolong(pphi.values, pg, grid))
        flow, phi, report = solve(BeckmannProblem(grid, spec, b, params), g0, phi0)
        return grid, flow, phi, report

    signs = (1,) * d
    frame = (mb, dom)
    grid, flow, phi, report = level(ladder[0], frame, None)
    if orient and d >= 2 and len(ladder) > 1:
        chosen = preferred_orientation(flow)
        logger.debug("orientation %s", chosen)
        if chosen != signs:
            signs = chosen
            frame = (mb.reflected(signs), dom.reflected(signs))
            grid, flow, phi, report = level(ladder[0], frame, None)
    for res in ladder[1:]:
        grid, flow, phi, report = level(res, frame, (grid, flow, phi))
    return FreeNormSolution(grid, flow, phi, report, frame[0], signs)


def free_norm(m: PointMeasure, dom: DomainSpec, spec: NormSpec, resolution: int,
              margin: float = 0.5, params: SolverParams | None = None) -> SolveReport:
    """Report of :func:`solve_measure`; ``report.value`` approximates ``||m||``."""
    return solve_measure(m, dom, spec, resolution, margin, params).report
