import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from freeflow.geometry import DomainSpec, NormSpec, norm_eval
from freeflow.grid import GridSpec, ScalarField, VectorField, curl_field, divergence
from freeflow.mollify import (
    Mollifier,
    Reconstructor,
    bump,
    convolve,
    interpolate,
    normalize_bump,
    reconstruct_potential,
)

INTERVAL = DomainSpec("box", 1, {"lo": (-2,), "hi": (2,)})
SQUARE = DomainSpec("box", 2, {"lo": (-2, -2), "hi": (2, 2)})


def gradient_samples(grid, grad):
    """Vector field whose value at each masked cell center is ``grad(center)``."""
    x = np.moveaxis(grid.centers(), 0, -1)
    return VectorField(grid, np.moveaxis(grad(x), -1, 0)).masked()


class TestNormalization:
    def test_one_dimensional_constant(self):
        # Independent midpoint quadrature with 10^6 nodes.
        n = 10**6
        t = -1 + (np.arange(n) + 0.5) * (2 / n)
        ref = 1.0 / (np.sum(np.exp(-1 / (1 - t**2))) * (2 / n))
        assert normalize_bump(1) == pytest.approx(ref, rel=1e-8)
        assert normalize_bump(1) == pytest.approx(2.2523, abs=1e-4)

    @pytest.mark.parametrize("d,samples", [(1, 4096), (2, 512), (3, 64)])
    def test_richardson(self, d, samples):
        assert abs(normalize_bump(d, 2 * samples) - normalize_bump(d, samples)) <= 1e-8 * normalize_bump(d)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            normalize_bump(2, 32)

    @pytest.mark.parametrize("n", [4, 16, 64])
    @pytest.mark.parametrize("d", [1, 2])
    def test_scaled_mass(self, n, d):
        mol = Mollifier(n, d)
        samples = {1: 4096, 2: 512}[d]
        h = 2.0 / (n * samples)
        t = -1.0 / n + (np.arange(samples) + 0.5) * h
        pts = np.stack(np.meshgrid(*([t] * d), indexing="ij"), axis=-1)
        assert float(np.sum(mol(pts))) * h**d == pytest.approx(1.0, abs=1e-8)

    def test_support_and_sign(self):
        mol = Mollifier(8, 2)
        rng = np.random.default_rng(0)
        x = rng.uniform(-0.3, 0.3, (2000, 2))
        vals = mol(x)
        assert np.all(vals >= 0)
        assert np.all(vals[np.linalg.norm(x, axis=1) >= 1 / 8] == 0)
        assert np.all(vals[np.linalg.norm(x, axis=1) < 0.9 / 8] > 0)

    def test_bump_profile(self):
        assert bump(np.zeros(3)) == pytest.approx(np.exp(-1))
        assert bump(np.array([1.0, 0.0])) == 0

    def test_kernel_unit_mass(self):
        for n, h in ((4, 0.01), (16, 1 / 256), (8, 0.05)):
            w = Mollifier(n, 2).kernel(h)
            assert w.sum() == pytest.approx(1.0, abs=1e-14)
            assert np.all(w >= 0)

    def test_invalid_scale(self):
        with pytest.raises(ValueError):
            Mollifier(0, 2)


class TestConvolve:
    grid = GridSpec.for_domain(SQUARE, 128)

    def test_constant_preserved_in_interior(self):
        g = self.grid
        f = VectorField(g, np.stack([np.full(g.dims, 1.5), np.full(g.dims, -0.25)])).masked()
        mol = Mollifier(8, 2)
        out = convolve(f, mol).values
        x = g.centers()
        deep = (np.abs(x[0]) < 2 - 2 * mol.radius) & (np.abs(x[1]) < 2 - 2 * mol.radius)
        assert np.allclose(out[0][deep], 1.5, atol=1e-10)
        assert np.allclose(out[1][deep], -0.25, atol=1e-10)

    def test_zero(self):
        assert np.all(convolve(self.grid.zeros_vector(), Mollifier(8, 2)).values == 0)

    def test_sup_non_expansive(self):
        rng = np.random.default_rng(1)
        g = GridSpec.for_domain(SQUARE, 48)
        mol = Mollifier(4, 2)
        for _ in range(100):
            f = ScalarField(g, rng.normal(size=g.dims) * g.mask)
            assert np.abs(convolve(f, mol).values).max() <= np.abs(f.values).max() * (1 + 1e-12)

    def test_commutes_with_divergence(self):
        rng = np.random.default_rng(2)
        g = self.grid
        f = VectorField(g, rng.normal(size=(2, *g.dims))).masked()
        mol = Mollifier(8, 2)
        lhs = divergence(convolve(f, mol)).values
        rhs = convolve(divergence(f), mol).values
        x = g.centers()
        deep = (np.abs(x[0]) < 2 - 3 * mol.radius) & (np.abs(x[1]) < 2 - 3 * mol.radius)
        scale = np.abs(rhs[deep]).max()
        assert np.max(np.abs(lhs[deep] - rhs[deep])) <= 1e-10 * max(1.0, scale)

    def test_divergence_free_stays_divergence_free(self):
        g = self.grid
        x = g.centers()
        r = np.sqrt(x[0] ** 2 + x[1] ** 2)
        psi = np.where(r < 1, np.cos(0.5 * np.pi * r) ** 2, 0.0)
        c = curl_field(ScalarField(g, psi))
        out = divergence(convolve(c, Mollifier(8, 2))).values
        assert np.abs(out).max() * g.cell_volume <= 1e-12

    def test_unresolved_kernel_is_skipped(self, caplog):
        g = self.grid
        f = ScalarField(g, np.random.default_rng(3).normal(size=g.dims) * g.mask)
        with caplog.at_level(logging.WARNING, logger="freeflow.mollify"):
            out = convolve(f, Mollifier(1 / (1.5 * g.h), 2))
        assert out is f
        assert "skipped" in caplog.text


class TestReconstruct:
    grid = GridSpec.for_domain(SQUARE, 128)

    def test_affine_exact(self):
        c = np.array([0.7, -1.3])
        f = gradient_samples(self.grid, lambda x: np.broadcast_to(c, x.shape))
        mol = Mollifier(16, 2)
        rec = Reconstructor(f, mol, SQUARE)
        for x in ([1.0, 0.0], [0.0, -1.2], [0.9, 1.1], [-1.5, 0.4]):
            assert rec(x) == pytest.approx(c @ np.array(x), abs=1e-10)

    def test_sign_function_1d(self):
        g = GridSpec.for_domain(INTERVAL, 4096)
        f = gradient_samples(g, np.sign)
        val = reconstruct_potential(f, [1.5], Mollifier(64, 1), dom=INTERVAL)
        assert val == pytest.approx(1.5, abs=0.05)

    def test_sign_function_1d_closed_form(self):
        # (u_n * sign)(t) = 2 U(n t) - 1 with U the bump's distribution function.
        g = GridSpec.for_domain(INTERVAL, 4096)
        f = gradient_samples(g, np.sign)
        mol = Mollifier(16, 1)
        s = np.linspace(-1, 1, 200001)
        cdf = np.cumsum(mol.rho(s[:, None])) * (s[1] - s[0])
        t = np.linspace(0, 1.5, 20001)
        conv = 2 * np.interp(16 * t, s, cdf, left=0, right=1) - 1
        closed = float(trapezoid(conv, t))
        assert reconstruct_potential(f, [1.5], mol, dom=INTERVAL) == pytest.approx(closed, abs=2e-3)

    @pytest.mark.parametrize("name,F,grad", [
        ("l1", lambda x: np.sum(np.abs(x), axis=-1), np.sign),
        ("l2", lambda x: np.linalg.norm(x, axis=-1), lambda x: x / np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), 1e-300)),
        ("relu", lambda x: np.maximum(0, x[..., 0]),
         lambda x: np.stack([(x[..., 0] > 0).astype(float), np.zeros(x.shape[:-1])], axis=-1)),
    ])
    def test_lipschitz_potentials_converge(self, name, F, grad):
        rng = np.random.default_rng(4)
        pts = rng.uniform(-1.4, 1.4, (10, 2))
        f = gradient_samples(self.grid, grad)
        errs = []
        for n in (4, 8, 16):
            rec = Reconstructor(f, Mollifier(n, 2), SQUARE)
            errs.append(max(abs(rec(p) - F(p)) for p in pts))
        assert errs[-1] <= 0.05
        for a, b in zip(errs, errs[1:]):
            assert b <= a * 1.1

    def test_lipschitz_bound(self):
        rng = np.random.default_rng(5)
        f = gradient_samples(self.grid, np.sign)
        spec = NormSpec("p1", 2)
        L = float(np.max(norm_eval(spec.dual(), f.values, axis=0)))
        rec = Reconstructor(f, Mollifier(16, 2), SQUARE)
        pts = rng.uniform(-1.4, 1.4, (30, 2))
        vals = [rec(p) for p in pts]
        for i in range(len(pts)):
            for j in range(i):
                dist = norm_eval(spec, pts[i] - pts[j])
                assert abs(vals[i] - vals[j]) <= L * dist * 1.02

    def test_clearance_violation(self):
        f = self.grid.zeros_vector()
        rec = Reconstructor(f, Mollifier(4, 2), SQUARE)
        assert not rec.clearance_ok([1.9, 0.0])
        with pytest.raises(ValueError, match="clearance"):
            rec([1.9, 0.0])
        assert not rec.clearance_ok([3.0, 0.0])

    def test_quadrature_node_minimum(self):
        with pytest.raises(ValueError):
            Reconstructor(self.grid.zeros_vector(), Mollifier(4, 2), SQUARE, quad_m=4)

    @settings(max_examples=20)
    @given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
    def test_interpolation_exact_for_affine(self, x, y):
        c = np.array([0.3, -2.0])
        vals = c[0] * self.grid.centers()[0] + c[1] * self.grid.centers()[1] + 0.5
        assert interpolate(vals, self.grid, np.array([[x, y]]))[0] == pytest.approx(c @ [x, y] + 0.5, abs=1e-12)
