"""Compiled inner loops for the primal-dual solver.

Flows are stored compactly as ``(d, n_masked)`` arrays; potentials and
divergence data as flat arrays over all cells in C order.  ``cells`` holds
the flat index of every masked cell and ``strides`` the flat offset of a
unit step along each axis.  The prox code mirrors
:func:`freeflow.geometry.prox_norm` and is tested against it.
"""

import numba
import numpy as np

P1, P2, PINF = 0, 1, 2
KIND_CODES = {"p1": P1, "p2": P2, "pinf": PINF}


@numba.njit
def _prox_p1(v, w, tau):
    # dual ball is the box |u_i| <= tau w_i: soft thresholding
    d, n = v.shape
    for m in range(n):
        for i in range(d):
            x = v[i, m]
            t = abs(x) - tau * w[i]
            v[i, m] = (t if x > 0.0 else -t) if t > 0.0 else 0.0


@numba.njit(cache=True)
def _prox_p2(v, w, tau):
    d, n = v.shape
    unweighted = True
    for i in range(d):
        if w[i] != 1.0:
            unweighted = False
    for m in range(n):
        if unweighted:
            nrm = 0.0
            for i in range(d):
                nrm += v[i, m] * v[i, m]
            nrm = np.sqrt(nrm)
            scale = 1.0 - tau / nrm if nrm > tau else 0.0
            for i in range(d):
                v[i, m] *= scale
            continue
        # projection onto the ellipsoid sum (u_i / w_i)^2 <= tau^2, Newton on
        # the secular equation from mu = 0 (monotone)
        f0 = 0.0
        for i in range(d):
            f0 += (v[i, m] / w[i]) ** 2
        if f0 <= tau * tau:
            for i in range(d):
                v[i, m] = 0.0
            continue
        mu = 0.0
        for _ in range(100):
            f = -tau * tau
            df = 0.0
            for i in range(d):
                s2 = 1.0 / (w[i] * w[i])
                q = 1.0 + mu * s2
                x2 = v[i, m] * v[i, m]
                f += s2 * x2 / (q * q)
                df -= 2.0 * s2 * s2 * x2 / (q * q * q)
            if f <= 0.0:
                break
            mu_new = mu - f / df
            if abs(mu_new - mu) <= 1e-15 * max(1.0, mu_new):
                mu = mu_new
                break
            mu = mu_new
        for i in range(d):
            v[i, m] -= v[i, m] / (1.0 + mu / (w[i] * w[i]))


@numba.njit(cache=True)
def _prox_pinf(v, w, tau):
    # dual ball is sum |u_i| / w_i <= tau; the threshold is the max over the
    # d candidate active sets {i : |v_i| w_i >= |v_j| w_j}
    d, n = v.shape
    iw = 1.0 / w
    iw2 = iw * iw
    av = np.empty(d)
    ratio = np.empty(d)
    for m in range(n):
        tot = 0.0
        for i in range(d):
            av[i] = abs(v[i, m])
            ratio[i] = av[i] * w[i]
            tot += av[i] * iw[i]
        if tot <= tau:
            for i in range(d):
                v[i, m] = 0.0
            continue
        lam = 0.0
        for j in range(d):
            num = -tau
            den = 0.0
            for i in range(d):
                if ratio[i] >= ratio[j]:
                    num += av[i] * iw[i]
                    den += iw2[i]
            cand = num / den
            if cand > lam:
                lam = cand
        for i in range(d):
            t = av[i] - lam * iw[i]
            if t > 0.0:
                x = v[i, m]
                v[i, m] = x - t if x > 0.0 else x + t


@numba.njit(cache=True)
def prox_inplace(v, kind, w, tau):
    """Pointwise prox of ``tau ||.||`` on a ``(d, n)`` array, in place."""
    if kind == P1:
        _prox_p1(v, w, tau)
    elif kind == P2:
        _prox_p2(v, w, tau)
    else:
        _prox_pinf(v, w, tau)


def prox_many(v, kind, w, tau):
    out = np.array(v, dtype=float, order="C")
    prox_inplace(out, kind, np.asarray(w, dtype=float), float(tau))
    return out


@numba.njit(cache=True)
def divergence_flat(g, cells, strides, ncell, h):
    out = np.zeros(ncell)
    d, n = g.shape
    for m in range(n):
        c = cells[m]
        for k in range(d):
            out[c] += g[k, m]
            out[c + strides[k]] -= g[k, m]
    for i in range(ncell):
        out[i] /= h
    return out


@numba.njit(cache=True)
def cp_steps(g, gbar, phi, b, cells, strides, h, tau, sigma, theta, kind, w,
             nsteps, gsum, psum):
    """Run ``nsteps`` primal-dual iterations in place, accumulating iterate sums."""
    d, n = g.shape
    ncell = phi.shape[0]
    div = np.empty(ncell)
    v = np.empty((d, n))
    inv_h = 1.0 / h
    for _ in range(nsteps):
        for i in range(ncell):
            div[i] = 0.0
        for m in range(n):
            c = cells[m]
            for k in range(d):
                x = gbar[k, m]
                div[c] += x
                div[c + strides[k]] -= x
        for i in range(ncell):
            phi[i] += sigma * (div[i] * inv_h - b[i])
            psum[i] += phi[i]
        for m in range(n):
            c = cells[m]
            pc = phi[c]
            # D^T phi = -grad phi, so the primal step adds tau * grad phi
            for k in range(d):
                v[k, m] = g[k, m] + tau * (phi[c + strides[k]] - pc) * inv_h
        prox_inplace(v, kind, w, tau)
        for m in range(n):
            for k in range(d):
                x = v[k, m]
                gbar[k, m] = x + theta * (x - g[k, m])
                g[k, m] = x
                gsum[k, m] += x
