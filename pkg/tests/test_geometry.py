import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from freeflow.geometry import (
    DomainSpec,
    NormSpec,
    boundary_distance,
    domain_contains,
    dual_norm_eval,
    norm_eval,
    project_dual_ball,
    prox_norm,
    segment_clearance,
)

KINDS = ("p1", "p2", "pinf")
finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
weights = st.floats(0.2, 5.0)


@st.composite
def specs(draw, dim=None):
    d = draw(st.integers(1, 3)) if dim is None else dim
    kind = draw(st.sampled_from(KINDS))
    w = tuple(draw(st.lists(weights, min_size=d, max_size=d)))
    return NormSpec(kind, d, w)


@st.composite
def spec_and_vector(draw):
    spec = draw(specs())
    v = draw(arrays(float, spec.dim, elements=finite))
    return spec, v


def unit_sphere_samples(spec, count=20000):
    """Dense samples of the unit sphere of ``spec``, obtained by radially rescaling Euclidean directions."""
    if spec.dim == 2:
        t = np.linspace(0, 2 * np.pi, count, endpoint=False)
        u = np.stack([np.cos(t), np.sin(t)], axis=1)
    else:
        # Lattice on the surface of the cube [-1, 1]^3; contains axes and diagonals exactly.
        k = 2 * int(np.sqrt(count / 6) / 2) + 1
        t = np.linspace(-1, 1, k)
        A, B = (x.ravel() for x in np.meshgrid(t, t, indexing="ij"))
        one = np.ones_like(A)
        faces = [np.stack(f, axis=1) for s in (1, -1)
                 for f in ((s * one, A, B), (A, s * one, B), (A, B, s * one))]
        u = np.concatenate(faces)
    n = norm_eval(spec, u)
    return u / n[:, None]


class TestNormEval:
    def test_examples(self):
        assert norm_eval(NormSpec("p1", 2), [1, -2]) == 3
        assert norm_eval(NormSpec("p2", 2), [3, 4]) == 5
        assert norm_eval(NormSpec("pinf", 2, (2, 1)), [1, 1.5]) == 2

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            norm_eval(NormSpec("p2", 2), [1, 2, 3])

    def test_invalid_specs(self):
        with pytest.raises(ValueError):
            NormSpec("p3", 2)
        with pytest.raises(ValueError):
            NormSpec("p2", 2, (1.0, 0.0))
        with pytest.raises(ValueError):
            NormSpec("p2", 2, (1.0,))

    @given(spec_and_vector(), st.floats(-10, 10))
    def test_homogeneity(self, sv, t):
        spec, v = sv
        assert norm_eval(spec, t * v) == pytest.approx(abs(t) * norm_eval(spec, v), rel=1e-12, abs=1e-12)

    @given(spec_and_vector())
    def test_nonnegative(self, sv):
        spec, v = sv
        assert norm_eval(spec, v) >= 0

    def test_vectorized_axis(self):
        spec = NormSpec("p2", 2)
        v = np.array([[3.0, 0.0], [4.0, 1.0]])
        assert np.allclose(norm_eval(spec, v, axis=0), [5.0, 1.0])


class TestDualNorm:
    def test_examples(self):
        assert dual_norm_eval(NormSpec("p1", 2), [2, -0.5]) == 2
        assert dual_norm_eval(NormSpec("p2", 2), [3, 4]) == 5

    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("w", [(1.0, 1.0), (2.0, 0.5)])
    def test_sphere_sampling_oracle(self, kind, w):
        spec = NormSpec(kind, 2, w)
        v = unit_sphere_samples(spec)
        rng = np.random.default_rng(1)
        for u in rng.normal(size=(100, 2)):
            brute = float(np.max(v @ u))
            assert dual_norm_eval(spec, u) == pytest.approx(brute, rel=0.01)

    @pytest.mark.parametrize("kind", KINDS)
    def test_sphere_sampling_oracle_3d(self, kind):
        spec = NormSpec(kind, 3, (1.0, 2.0, 0.5))
        v = unit_sphere_samples(spec, count=200000)
        rng = np.random.default_rng(2)
        for u in rng.normal(size=(20, 3)):
            brute = float(np.max(v @ u))
            # Sampling approaches the sup from below.
            assert brute <= dual_norm_eval(spec, u) * (1 + 1e-12)
            assert dual_norm_eval(spec, u) == pytest.approx(brute, rel=0.01)

    @given(spec_and_vector(), st.data())
    def test_holder(self, sv, data):
        spec, v = sv
        u = data.draw(arrays(float, spec.dim, elements=finite))
        assert abs(u @ v) <= dual_norm_eval(spec, u) * norm_eval(spec, v) * (1 + 1e-12) + 1e-12

    def test_dual_spec(self):
        spec = NormSpec("p1", 2, (2.0, 4.0))
        assert spec.dual() == NormSpec("pinf", 2, (0.5, 0.25))


class TestProjection:
    def test_examples(self):
        assert np.allclose(project_dual_ball(NormSpec("p2", 2), [3, 4], 1), [0.6, 0.8])
        assert np.allclose(project_dual_ball(NormSpec("p1", 2), [2, -0.5], 1), [1, -0.5])
        assert np.allclose(project_dual_ball(NormSpec("pinf", 2), [2, 1], 1), [1, 0])

    def test_pinf_example_grid_search(self):
        # Brute-force nearest point of the unit l1 ball to (2, 1).
        spec = NormSpec("pinf", 2)
        t = np.linspace(-1, 1, 2001)
        X, Y = np.meshgrid(t, t, indexing="ij")
        inside = np.abs(X) + np.abs(Y) <= 1 + 1e-12
        dist = (X - 2) ** 2 + (Y - 1) ** 2
        dist[~inside] = np.inf
        k = np.unravel_index(np.argmin(dist), dist.shape)
        brute = np.array([X[k], Y[k]])
        assert np.allclose(project_dual_ball(spec, [2, 1], 1), brute, atol=2e-3)

    def test_rejects_nonpositive_radius(self):
        with pytest.raises(ValueError):
            project_dual_ball(NormSpec("p2", 2), [1, 1], 0.0)

    @given(spec_and_vector(), st.floats(0.01, 20))
    def test_feasible_and_idempotent(self, sv, r):
        spec, v = sv
        w = project_dual_ball(spec, v, r)
        assert dual_norm_eval(spec, w) <= r * (1 + 1e-12)
        assert np.allclose(project_dual_ball(spec, w, r), w, rtol=0, atol=1e-12 * max(1.0, np.abs(w).max()))

    @given(spec_and_vector(), st.floats(0.01, 20), st.data())
    def test_variational_inequality(self, sv, r, data):
        # w = P(v) iff <v - w, z - w> <= 0 for every z in the ball.
        spec, v = sv
        w = project_dual_ball(spec, v, r)
        z = data.draw(arrays(float, spec.dim, elements=finite))
        dz = dual_norm_eval(spec, z)
        if dz > r:
            z = z * (r / dz)
        scale = max(1.0, float(np.abs(v).max())) ** 2
        assert (v - w) @ (z - w) <= 1e-9 * scale

    @given(spec_and_vector(), st.floats(0.01, 20))
    def test_inside_ball_is_fixed(self, sv, r):
        spec, v = sv
        dv = dual_norm_eval(spec, v)
        if dv > 0:
            v = v * (0.5 * r / dv)
        assert np.allclose(project_dual_ball(spec, v, r), v, atol=1e-12)


class TestProx:
    def test_examples(self):
        assert np.allclose(prox_norm(NormSpec("p2", 2), [3, 4], 1), [2.4, 3.2])
        for kind in KINDS:
            assert np.allclose(prox_norm(NormSpec(kind, 3), np.zeros(3), 0.7), 0)

    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("v", [(0.5, -2.0), (1.3, 0.4), (-0.2, 0.1)])
    def test_brute_force_minimization(self, kind, v):
        spec = NormSpec(kind, 2, (1.0, 1.5))
        v = np.array(v)
        t = np.linspace(-3, 3, 1201)
        U = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1)
        obj = 1.0 * norm_eval(spec, U) + 0.5 * np.sum((U - v) ** 2, axis=-1)
        k = np.unravel_index(np.argmin(obj), obj.shape)
        assert np.allclose(prox_norm(spec, v, 1.0), U[k], atol=1e-2)

    def test_p1_example(self):
        assert np.allclose(prox_norm(NormSpec("p1", 2), [0.5, -2], 1), [0, -1])

    def test_moreau_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            d = int(rng.integers(1, 4))
            spec = NormSpec(KINDS[rng.integers(3)], d, tuple(rng.uniform(0.2, 5, d)))
            v = rng.normal(scale=5, size=d)
            tau = float(rng.uniform(0.01, 5))
            total = prox_norm(spec, v, tau) + project_dual_ball(spec, v, tau)
            assert np.allclose(total, v, rtol=0, atol=1e-12)

    @given(spec_and_vector(), st.floats(0.01, 10), st.data())
    def test_prox_is_optimal(self, sv, tau, data):
        spec, v = sv
        u = prox_norm(spec, v, tau)
        other = data.draw(arrays(float, spec.dim, elements=finite))
        obj = lambda x: tau * norm_eval(spec, x) + 0.5 * np.sum((x - v) ** 2)
        assert obj(u) <= obj(other) + 1e-9 * (1 + obj(other))


class TestDomains:
    box = DomainSpec("box", 2, {"lo": (-2, -2), "hi": (2, 2)})

    def test_contains_examples(self):
        assert domain_contains(self.box, (0, 0))
        assert not domain_contains(self.box, (2, 0))
        ball = DomainSpec("ball", 2, {"center": (0, 0), "radius": 1})
        assert domain_contains(ball, (0.999, 0))
        assert not domain_contains(ball, (1.0, 0))

    def test_polytope_and_full(self):
        tri = DomainSpec("polytope", 2, {"normals": [(-1, 0), (0, -1), (1, 1)], "offsets": [1, 1, 1]})
        assert domain_contains(tri, (0, 0))
        assert not domain_contains(tri, (0.6, 0.6))
        full = DomainSpec("full", 3)
        assert domain_contains(full, (1e9, -1e9, 0))
        assert boundary_distance(full, (0, 0, 0)) == math.inf

    def test_invalid_domains(self):
        with pytest.raises(ValueError):
            DomainSpec("polytope", 2, {"normals": [(0, 0)], "offsets": [1]})
        with pytest.raises(ValueError):
            DomainSpec("box", 2, {"lo": (0, 0), "hi": (1, 1)}, basepoint=(2, 2))
        with pytest.raises(ValueError):
            DomainSpec("box", 2, {"lo": (1, 0), "hi": (0, 1)}, basepoint=(0.5, 0.5))
        with pytest.raises(ValueError):
            DomainSpec("ball", 2, {"center": (0, 0), "radius": 0})
        with pytest.raises(ValueError):
            DomainSpec("torus", 2)

    def test_json_round_trip(self):
        for dom in (self.box, DomainSpec("ball", 3, {"center": (0, 0, 1), "radius": 2}, (0, 0, 1))):
            assert DomainSpec.from_dict(dom.to_dict()) == dom

    def test_vectorized_contains(self):
        pts = np.array([[0, 0], [2, 0], [1.9, -1.9]])
        assert domain_contains(self.box, pts).tolist() == [True, False, True]

    def test_reflected(self):
        box = DomainSpec("box", 2, {"lo": (-1, 0), "hi": (3, 2)}, basepoint=(0.5, 1))
        r = box.reflected((-1, 1))
        assert r.params["lo"] == (-3, 0) and r.params["hi"] == (1, 2)
        assert r.basepoint == (-0.5, 1)
        rng = np.random.default_rng(4)
        pts = rng.uniform(-4, 4, (500, 2))
        tri = DomainSpec("polytope", 2, {"normals": [(-1, 0), (0, -1), (1, 1)], "offsets": [1, 1, 1]})
        for dom in (box, tri, DomainSpec("ball", 2, {"center": (1, -1), "radius": 2})):
            s = np.array([1, -1])
            assert np.array_equal(domain_contains(dom.reflected(s), pts * s), domain_contains(dom, pts))


def dense_segment_clearance(dom, a, b, n=2001):
    t = np.linspace(0, 1, n)[:, None]
    pts = np.asarray(a) + t * (np.asarray(b) - np.asarray(a))
    return float(np.min(boundary_distance(dom, pts)))


class TestSegmentClearance:
    def test_examples(self):
        box = DomainSpec("box", 2, {"lo": (-2, -2), "hi": (2, 2)})
        assert segment_clearance(box, (0, 0), (1, 0)) == pytest.approx(1.0)
        assert dense_segment_clearance(box, (0, 0), (1, 0)) == pytest.approx(1.0)
        ball = DomainSpec("ball", 2, {"center": (0, 0), "radius": 2})
        assert segment_clearance(ball, (0, 0), (1, 0)) == pytest.approx(1.0)
        assert dense_segment_clearance(ball, (0, 0), (1, 0)) == pytest.approx(1.0)
        assert segment_clearance(DomainSpec("full", 2), (0, 0), (5, 5)) == math.inf

    def test_endpoint_outside_rejected(self):
        box = DomainSpec("box", 2, {"lo": (-2, -2), "hi": (2, 2)})
        with pytest.raises(ValueError):
            segment_clearance(box, (0, 0), (2, 0))

    def test_dense_sampling_oracle(self):
        rng = np.random.default_rng(5)
        doms = [
            DomainSpec("box", 2, {"lo": (-2, -1), "hi": (2, 3)}),
            DomainSpec("ball", 2, {"center": (0.3, 0), "radius": 1.5}),
            DomainSpec("polytope", 2, {"normals": [(-1, 0), (0, -1), (1, 1)], "offsets": [1, 1, 1]}),
        ]
        for dom in doms:
            lo, hi = dom.bounds()
            lo, hi = np.maximum(lo, -1), np.minimum(hi, 1)
            found = 0
            while found < 20:
                a, b = rng.uniform(lo, hi, (2, 2))
                if not (domain_contains(dom, a) and domain_contains(dom, b)):
                    continue
                found += 1
                brute = dense_segment_clearance(dom, a, b)
                assert segment_clearance(dom, a, b) == pytest.approx(brute, rel=0.01)
