"""Exact Kantorovich (W1) values for small point measures.

The optimal plan between the positive and negative parts of a balanced
measure is found with the transportation simplex: bases are spanning trees
of the bipartite source/sink graph, dual potentials ``u, v`` come from the
tree, and the entering cell is the most negative reduced cost.  Small
instances can also be solved by enumerating every basis, which gives an
independent check of the simplex.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .geometry import NormSpec, norm_eval
from .measure import PointMeasure, merge_atoms

MAX_ATOMS = 64


@dataclass
class TransportPlan:
    sources: np.ndarray
    supply: np.ndarray
    sinks: np.ndarray
    demand: np.ndarray
    plan: np.ndarray
    cost: float
    u: np.ndarray | None = None
    v: np.ndarray | None = None

    def marginal_error(self) -> float:
        return float(max(np.max(np.abs(self.plan.sum(axis=1) - self.supply)),
                         np.max(np.abs(self.plan.sum(axis=0) - self.demand))))


def cost_matrix(xs: np.ndarray, ys: np.ndarray, spec: NormSpec) -> np.ndarray:
    return np.asarray(norm_eval(spec, xs[:, None, :] - ys[None, :, :]), dtype=float)


def _tree_solve(basis: list[tuple[int, int]], n: int, m: int, supply, demand):
    """Flows on a spanning-tree basis, by repeatedly peeling leaves."""
    rows = [set() for _ in range(n)]
    cols = [set() for _ in range(m)]
    for i, j in basis:
        rows[i].add(j)
        cols[j].add(i)
    r_left = np.array(supply, dtype=float)
    c_left = np.array(demand, dtype=float)
    t = {}
    queue = deque([("r", i) for i in range(n) if len(rows[i]) == 1]
                  + [("c", j) for j in range(m) if len(cols[j]) == 1])
    while queue:
        side, k = queue.popleft()
        if side == "r":
            if len(rows[k]) != 1:
                continue
            j = rows[k].pop()
            cols[j].discard(k)
            t[(k, j)] = r_left[k]
            c_left[j] -= r_left[k]
            r_left[k] = 0.0
            if len(cols[j]) == 1:
                queue.append(("c", j))
        else:
            if len(cols[k]) != 1:
                continue
            i = cols[k].pop()
            rows[i].discard(k)
            t[(i, k)] = c_left[k]
            r_left[i] -= c_left[k]
            c_left[k] = 0.0
            if len(rows[i]) == 1:
                queue.append(("r", i))
    if len(t) != len(basis):
        return None
    return t


def _potentials(basis, n: int, m: int, c: np.ndarray):
    """``u_i + v_j = c_ij`` on the basis with ``u_0 = 0``."""
    adj_r = [[] for _ in range(n)]
    adj_c = [[] for _ in range(m)]
    for i, j in basis:
        adj_r[i].append(j)
        adj_c[j].append(i)
    u = np.full(n, np.nan)
    v = np.full(m, np.nan)
    u[0] = 0.0
    stack = [("r", 0)]
    while stack:
        side, k = stack.pop()
        if side == "r":
            for j in adj_r[k]:
                if np.isnan(v[j]):
                    v[j] = c[k, j] - u[k]
                    stack.append(("c", j))
        else:
            for i in adj_c[k]:
                if np.isnan(u[i]):
                    u[i] = c[i, k] - v[k]
                    stack.append(("r", i))
    return u, v


def _tree_path(basis, n: int, i0: int, j0: int) -> list[tuple[int, int]]:
    """Basis cells on the tree path from row ``i0`` to column ``j0``."""
    adj = {}
    for i, j in basis:
        adj.setdefault(("r", i), []).append((("c", j), (i, j)))
        adj.setdefault(("c", j), []).append((("r", i), (i, j)))
    start, goal = ("r", i0), ("c", j0)
    prev = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nxt, cell in adj.get(node, []):
            if nxt not in prev:
                prev[nxt] = (node, cell)
                queue.append(nxt)
    path = []
    node = goal
    while prev[node] is not None:
        node, cell = prev[node]
        path.append(cell)
    return path[::-1]


def _initial_basis(supply, demand) -> tuple[list[tuple[int, int]], dict]:
    # northwest corner rule; ties advance the row and keep a zero cell so
    # the basis stays a spanning tree
    n, m = len(supply), len(demand)
    s, d = list(map(float, supply)), list(map(float, demand))
    i = j = 0
    basis, t = [], {}
    while i < n and j < m:
        q = min(s[i], d[j])
        basis.append((i, j))
        t[(i, j)] = q
        s[i] -= q
        d[j] -= q
        if i == n - 1:
            j += 1
        elif j == m - 1:
            i += 1
        elif s[i] <= d[j]:
            i += 1
        else:
            j += 1
    return basis, t


def transport_simplex(c: np.ndarray, supply, demand, max_iter: int = 10000):
    """Optimal plan for cost matrix ``c``; returns ``(plan, u, v)``."""
    n, m = c.shape
    basis, t = _initial_basis(supply, demand)
    scale = max(1.0, float(np.max(np.abs(c))))
    for it in range(max_iter):
        u, v = _potentials(basis, n, m, c)
        reduced = c - u[:, None] - v[None, :]
        for i, j in basis:
            reduced[i, j] = 0.0
        # Dantzig's rule, switching to Bland's rule late to rule out cycling
        if it < max_iter // 2:
            i0, j0 = np.unravel_index(np.argmin(reduced), reduced.shape)
            if reduced[i0, j0] >= -1e-12 * scale:
                break
        else:
            neg = np.flatnonzero(reduced.reshape(-1) < -1e-12 * scale)
            if neg.size == 0:
                break
            i0, j0 = np.unravel_index(neg[0], reduced.shape)
        path = _tree_path(basis, n, int(i0), int(j0))
        # cells alternate -, +, -, ... along the path from row i0 to column j0
        minus = path[0::2]
        plus = path[1::2]
        theta = min(t[cell] for cell in minus)
        leave = min((cell for cell in minus if t[cell] == theta))
        for cell in minus:
            t[cell] -= theta
        for cell in plus:
            t[cell] += theta
        t[(int(i0), int(j0))] = theta
        basis.remove(leave)
        del t[leave]
        basis.append((int(i0), int(j0)))
    else:
        raise RuntimeError("transportation simplex did not terminate")
    plan = np.zeros((n, m))
    for (i, j), q in t.items():
        plan[i, j] = max(q, 0.0)
    return plan, u, v


def _split(m: PointMeasure):
    if m.size > MAX_ATOMS:
        raise ValueError(f"at most {MAX_ATOMS} atoms supported, got {m.size}")
    m = merge_atoms(m)
    if not m.balanced:
        raise ValueError(f"measure is not balanced (total mass {m.mass:.3g})")
    pos, neg = m.positive_part(), m.negative_part()
    return pos.points, pos.weights, neg.points, neg.weights


def w1_exact(m: PointMeasure, spec: NormSpec, check: bool = True) -> tuple[float, TransportPlan]:
    """Optimal transport cost from the positive to the negative part of ``m``.

    With ``check`` the plan's marginals, the dual feasibility of the
    potentials and complementary slackness are verified to 1e-10 (relative
    to the problem scale) and ``ArithmeticError`` is raised otherwise.
    """
    xs, a, ys, bdem = _split(m)
    if a.size == 0:
        return 0.0, TransportPlan(xs, a, ys, bdem, np.zeros((0, 0)), 0.0)
    # absorb the rounding left by the balance tolerance into the last sink
    bdem = bdem.copy()
    bdem[-1] += a.sum() - bdem.sum()
    c = cost_matrix(xs, ys, spec)
    plan, u, v = transport_simplex(c, a, bdem)
    cost = float(np.sum(plan * c))
    result = TransportPlan(xs, a, ys, bdem, plan, cost, u, v)
    if check:
        certify(result, c)
    return cost, result


def certify(p: TransportPlan, c: np.ndarray, tol: float = 1e-10) -> None:
    scale = max(1.0, float(np.max(c)) * float(p.supply.sum()))
    if p.marginal_error() > tol * max(1.0, float(p.supply.sum())):
        raise ArithmeticError("plan marginals do not match the measure")
    if np.min(p.plan) < 0:
        raise ArithmeticError("plan has negative entries")
    reduced = c - p.u[:, None] - p.v[None, :]
    if np.min(reduced) < -tol * max(1.0, float(np.max(c))):
        raise ArithmeticError("potentials are not dual feasible")
    if float(np.sum(p.plan * np.abs(reduced))) > tol * scale:
        raise ArithmeticError("complementary slackness violated")
    dual = float(p.u @ p.supply + p.v @ p.demand)
    if abs(dual - p.cost) > tol * scale:
        raise ArithmeticError("primal and dual transport values differ")


def w1_enumerate(m: PointMeasure, spec: NormSpec) -> float:
    """Minimum cost over all basic feasible plans; for at most 4 sources and 4 sinks."""
    xs, a, ys, bdem = _split(m)
    n, k = a.size, bdem.size
    if n == 0:
        return 0.0
    if n > 4 or k > 4:
        raise ValueError("enumeration is limited to 4 sources and 4 sinks")
    bdem = bdem.copy()
    bdem[-1] += a.sum() - bdem.sum()
    c = cost_matrix(xs, ys, spec)
    cells = [(i, j) for i in range(n) for j in range(k)]
    best = np.inf
    tol = 1e-12 * max(1.0, float(a.sum()))
    for basis in combinations(cells, n + k - 1):
        t = _tree_solve(list(basis), n, k, a, bdem)
        if t is None or min(t.values()) < -tol:
            continue
        plan = np.zeros((n, k))
        for (i, j), q in t.items():
            plan[i, j] = q
        if np.max(np.abs(plan.sum(axis=1) - a)) > 1e-9 or np.max(np.abs(plan.sum(axis=0) - bdem)) > 1e-9:
            continue
        best = min(best, float(np.sum(plan * c)))
    return best
