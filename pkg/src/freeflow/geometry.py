"""Norms on E = R^d, their duals, dual-ball projections and convex domains.

Norms are diagonally weighted p-norms, ``||v|| = ||(w_i v_i)_i||_p`` with
``p in {1, 2, inf}``.  The dual norm of ``(p, w)`` is ``(p*, 1/w)``.

All vector arguments carry the vector components along ``axis`` (the last
axis by default) so the same functions work pointwise on grid fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

KINDS = ("p1", "p2", "pinf")
_DUAL_KIND = {"p1": "pinf", "p2": "p2", "pinf": "p1"}


@dataclass(frozen=True)
class NormSpec:
    """A weighted p-norm on R^d."""

    kind: str
    dim: int
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown norm kind {self.kind!r}; expected one of {KINDS}")
        if int(self.dim) < 1:
            raise ValueError("norm dimension must be >= 1")
        object.__setattr__(self, "dim", int(self.dim))
        if self.weights is None:
            w = (1.0,) * self.dim
        else:
            w = tuple(float(x) for x in self.weights)
        if len(w) != self.dim:
            raise ValueError(f"expected {self.dim} weights, got {len(w)}")
        if not all(x > 0 and math.isfinite(x) for x in w):
            raise ValueError("norm weights must be strictly positive and finite")
        object.__setattr__(self, "weights", w)

    @property
    def unweighted(self) -> bool:
        return all(x == 1.0 for x in self.weights)

    def dual(self) -> NormSpec:
        return NormSpec(_DUAL_KIND[self.kind], self.dim, tuple(1.0 / x for x in self.weights))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "weights": list(self.weights)}

    @classmethod
    def from_dict(cls, data: dict) -> NormSpec:
        return cls(data["kind"], data["dim"], data.get("weights"))


def _prepare(spec: NormSpec, v, axis: int) -> tuple[np.ndarray, np.ndarray]:
    v = np.asarray(v, dtype=float)
    if v.ndim == 0 or v.shape[axis] != spec.dim:
        raise ValueError(f"vector dimension mismatch: norm has dim {spec.dim}, got shape {v.shape}")
    shape = [1] * v.ndim
    shape[axis] = spec.dim
    return v, np.asarray(spec.weights).reshape(shape)


def _pnorm(kind: str, y: np.ndarray, axis: int):
    if kind == "p1":
        return np.sum(np.abs(y), axis=axis)
    if kind == "p2":
        return np.sqrt(np.sum(y * y, axis=axis))
    return np.max(np.abs(y), axis=axis)


def norm_eval(spec: NormSpec, v, axis: int = -1):
    """Evaluate ``||v||_E``.  Returns a float for a single vector."""
    v, w = _prepare(spec, v, axis)
    out = _pnorm(spec.kind, w * v, axis)
    return float(out) if np.ndim(out) == 0 else out


def dual_norm_eval(spec: NormSpec, u, axis: int = -1):
    """Evaluate ``||u||_{E*} = sup{<u, v> : ||v||_E <= 1}``."""
    u, w = _prepare(spec, u, axis)
    out = _pnorm(_DUAL_KIND[spec.kind], u / w, axis)
    return float(out) if np.ndim(out) == 0 else out


def _project_l1_weighted(v: np.ndarray, s: np.ndarray, r, axis: int) -> np.ndarray:
    # Projection onto {u : sum_i s_i |u_i| <= r}.  KKT gives
    # u_i = sign(v_i) max(|v_i| - lam s_i, 0).  For any candidate active set
    # S = {i : |v_i|/s_i >= |v_j|/s_j} the value (sum_S s a - r) / sum_S s^2
    # is a lower bound on lam, attained on the true active set, so lam is the
    # max over the d candidates.  Avoids a per-point sort.
    v = np.moveaxis(v, axis, 0)
    s = np.moveaxis(s, axis, 0)
    a = np.abs(v)
    ratio = a / s
    sa = s * a
    s2 = np.broadcast_to(s * s, v.shape)
    r = np.asarray(r, dtype=float)
    lam = np.zeros(v.shape[1:])
    for j in range(v.shape[0]):
        sel = ratio >= ratio[j]
        lam_j = (np.einsum("i...,i...->...", sel, sa) - r) / np.einsum("i...,i...->...", sel, s2)
        np.maximum(lam, lam_j, out=lam)
    u = np.copysign(np.maximum(a - lam * s, 0.0), v)
    return np.moveaxis(u, 0, axis)


def _project_ellipsoid(v: np.ndarray, s: np.ndarray, r, axis: int) -> np.ndarray:
    # Projection onto {u : sum_i (s_i u_i)^2 <= r^2}.  u_i = v_i / (1 + mu s_i^2)
    # with mu >= 0 the root of the secular equation; Newton from mu = 0 is
    # monotone because the secular function is convex and decreasing.
    s2 = np.moveaxis(np.broadcast_to(s, v.shape), axis, -1) ** 2
    v = np.moveaxis(v, axis, -1)
    r = np.broadcast_to(np.asarray(r, dtype=float), v.shape[:-1])
    v2 = v * v
    mu = np.zeros(v.shape[:-1])
    for _ in range(100):
        q = 1.0 + mu[..., None] * s2
        f = np.sum(s2 * v2 / (q * q), axis=-1) - r * r
        df = -2.0 * np.sum(s2 * s2 * v2 / (q * q * q), axis=-1)
        active = f > 0
        if not np.any(active):
            break
        step = np.where(active, f / np.where(active, df, -1.0), 0.0)
        new_mu = mu - step
        if np.all(np.abs(new_mu - mu) <= 1e-15 * np.maximum(1.0, new_mu)):
            mu = new_mu
            break
        mu = new_mu
    u = v / (1.0 + mu[..., None] * s2)
    return np.moveaxis(u, -1, axis)


def project_dual_ball(spec: NormSpec, v, r, axis: int = -1) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{u : ||u||_{E*} <= r}``.

    ``r`` may be a positive scalar or an array broadcasting against ``v``
    with the vector axis removed.
    """
    v, w = _prepare(spec, v, axis)
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0):
        raise ValueError("projection radius must be positive")
    if spec.kind == "p1":
        # dual ball is the box |u_i| <= r w_i
        rr = np.expand_dims(r_arr, axis) if r_arr.ndim else r_arr
        return np.clip(v, -rr * w, rr * w)
    if spec.kind == "p2":
        if spec.unweighted:
            n = np.sqrt(np.sum(v * v, axis=axis, keepdims=True))
            rr = np.expand_dims(r_arr, axis) if r_arr.ndim else r_arr
            scale = np.where(n > rr, rr / np.where(n > 0, n, 1.0), 1.0)
            return v * scale
        return _project_ellipsoid(v, 1.0 / w, r_arr, axis)
    # E = pinf: dual is the weighted l1 ball sum |u_i| / w_i <= r
    return _project_l1_weighted(v, 1.0 / w, r_arr, axis)


def prox_norm(spec: NormSpec, v, tau, axis: int = -1) -> np.ndarray:
    """Proximal map of ``tau ||.||_E`` via the Moreau decomposition."""
    v = np.asarray(v, dtype=float)
    return v - project_dual_ball(spec, v, tau, axis=axis)


@dataclass(frozen=True)
class DomainSpec:
    """A convex open set in R^d with a base point.

    ``kind`` is one of ``box`` (``lo``, ``hi``), ``ball`` (``center``,
    ``radius``; Euclidean), ``polytope`` (``normals``, ``offsets``: the
    intersection of ``<n_j, x> < c_j``) or ``full``.
    """

    kind: str
    dim: int
    params: dict = field(default_factory=dict)
    basepoint: tuple[float, ...] | None = None

    def __post_init__(self):
        d = int(self.dim)
        object.__setattr__(self, "dim", d)
        p = dict(self.params)
        if self.kind == "box":
            lo = np.asarray(p["lo"], dtype=float)
            hi = np.asarray(p["hi"], dtype=float)
            if lo.shape != (d,) or hi.shape != (d,):
                raise ValueError("box corners must have the domain dimension")
            if not np.all(lo < hi):
                raise ValueError("box requires lo < hi componentwise")
            p = {"lo": tuple(lo), "hi": tuple(hi)}
        elif self.kind == "ball":
            c = np.asarray(p["center"], dtype=float)
            if c.shape != (d,):
                raise ValueError("ball center must have the domain dimension")
            if not float(p["radius"]) > 0:
                raise ValueError("ball radius must be positive")
            p = {"center": tuple(c), "radius": float(p["radius"])}
        elif self.kind == "polytope":
            n = np.asarray(p["normals"], dtype=float).reshape(-1, d)
            c = np.asarray(p["offsets"], dtype=float).reshape(-1)
            if n.shape[0] != c.shape[0]:
                raise ValueError("one offset per half-space normal required")
            if np.any(np.linalg.norm(n, axis=1) == 0):
                raise ValueError("half-space normals must be nonzero")
            p = {"normals": tuple(map(tuple, n)), "offsets": tuple(c)}
        elif self.kind == "full":
            p = {}
        else:
            raise ValueError(f"unknown domain kind {self.kind!r}")
        object.__setattr__(self, "params", p)
        o = (0.0,) * d if self.basepoint is None else tuple(float(x) for x in self.basepoint)
        if len(o) != d:
            raise ValueError("basepoint must have the domain dimension")
        object.__setattr__(self, "basepoint", o)
        if not domain_contains(self, o):
            raise ValueError("basepoint must lie in the open domain")

    def reflected(self, signs) -> DomainSpec:
        """Image under ``x -> signs * x`` for a vector of ``+-1``."""
        s = np.asarray(signs, dtype=float)
        p = self.params
        if self.kind == "box":
            a, b = s * np.asarray(p["lo"]), s * np.asarray(p["hi"])
            p = {"lo": np.minimum(a, b), "hi": np.maximum(a, b)}
        elif self.kind == "ball":
            p = {"center": s * np.asarray(p["center"]), "radius": p["radius"]}
        elif self.kind == "polytope":
            p = {"normals": np.asarray(p["normals"]) * s, "offsets": p["offsets"]}
        return DomainSpec(self.kind, self.dim, p, tuple(s * np.asarray(self.basepoint)))

    @property
    def bounded(self) -> bool:
        return self.kind in ("box", "ball")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box; infinite entries for unbounded kinds."""
        d = self.dim
        if self.kind == "box":
            return np.array(self.params["lo"]), np.array(self.params["hi"])
        if self.kind == "ball":
            c = np.array(self.params["center"])
            r = self.params["radius"]
            return c - r, c + r
        return np.full(d, -np.inf), np.full(d, np.inf)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim, "basepoint": list(self.basepoint)}
        for k, v in self.params.items():
            out[k] = np.asarray(v).tolist() if not isinstance(v, float) else v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> DomainSpec:
        data = dict(data)
        kind = data.pop("kind")
        dim = data.pop("dim")
        base = data.pop("basepoint", None)
        return cls(kind, dim, data, base)


def boundary_distance(dom: DomainSpec, x, axis: int = -1):
    """Euclidean distance from points of ``dom`` to the complement of ``dom``.

    Negative values mean the point lies outside (signed for box/ball and a
    lower bound for polytopes).  Full space gives ``+inf``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[axis] != dom.dim:
        raise ValueError(f"point dimension mismatch: domain has dim {dom.dim}, got {x.shape}")
    x = np.moveaxis(x, axis, -1)
    if dom.kind == "box":
        lo = np.asarray(dom.params["lo"])
        hi = np.asarray(dom.params["hi"])
        out = np.min(np.minimum(x - lo, hi - x), axis=-1)
    elif dom.kind == "ball":
        c = np.asarray(dom.params["center"])
        out = dom.params["radius"] - np.sqrt(np.sum((x - c) ** 2, axis=-1))
    elif dom.kind == "polytope":
        n = np.asarray(dom.params["normals"])
        c = np.asarray(dom.params["offsets"])
        nn = np.linalg.norm(n, axis=1)
        out = np.min((c - x @ n.T) / nn, axis=-1)
    else:
        out = np.full(x.shape[:-1], np.inf)
    return float(out) if np.ndim(out) == 0 else out


def domain_contains(dom: DomainSpec, x, margin: float = 0.0, axis: int = -1):
    """True iff ``x`` lies in the open domain, at distance > ``margin`` from its boundary."""
    out = np.asarray(boundary_distance(dom, x, axis=axis)) > margin
    return bool(out) if out.ndim == 0 else out


def segment_clearance(dom: DomainSpec, a, b) -> float:
    """Largest r with ``[a, b] + U(0, r)`` inside ``dom``.

    The distance to the complement of a convex set is concave on the set,
    so its minimum over a segment is attained at an endpoint.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not (domain_contains(dom, a) and domain_contains(dom, b)):
        raise ValueError("segment endpoints must lie in the open domain")
    return float(min(boundary_distance(dom, a), boundary_distance(dom, b)))
