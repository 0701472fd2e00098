import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cplab.arrangement import enumerate_cells
from cplab.centralpath import continue_to, trace_path
from cplab.core import LpInstance, make_rng, sample_instance
from cplab.curvature import (
    FLAVORS,
    Flavor,
    HyperplaneSample,
    ZeroVelocityBlock,
    crofton_length,
    crossing_counts,
    curvature_vector,
    flavor_blocks,
    gauss_curve,
    gauss_matrix,
    gauss_rate,
    gauss_sample,
    max_crossings,
    polyline_length,
    random_normals,
    refine_crossing,
    sign_changes,
    total_curvature,
    transversality_residual,
)


def _cells(inst):
    return [trace_path(inst, r.eps, witness=r.witness_x) for r in enumerate_cells(inst).bounded_cells()]


@pytest.fixture(scope="module")
def traces52():
    return _cells(sample_instance(5, 2, 42, 1))


# curvature vector --------------------------------------------------------------

@pytest.mark.parametrize("radius", [0.5, 1.0, 3.0])
def test_circle_curvature(radius):
    th = 0.7
    cdot = radius * np.array([-math.sin(th), math.cos(th)])
    cddot = -radius * np.array([math.cos(th), math.sin(th)])
    k = curvature_vector(cdot, cddot)
    assert np.linalg.norm(k) == pytest.approx(1.0 / radius, rel=1e-14)
    # points to the centre
    np.testing.assert_allclose(k * radius, -np.array([math.cos(th), math.sin(th)]), atol=1e-14)


def test_reparametrised_circle():
    # theta = s^3 on the unit circle: speed and tangential acceleration change, curvature does not
    s = 1.3
    th, dth, ddth = s**3, 3 * s**2, 6 * s
    cdot = dth * np.array([-math.sin(th), math.cos(th)])
    cddot = ddth * np.array([-math.sin(th), math.cos(th)]) - dth**2 * np.array([math.cos(th), math.sin(th)])
    assert np.linalg.norm(curvature_vector(cdot, cddot)) == pytest.approx(1.0, rel=1e-12)


def test_line_has_zero_curvature():
    v = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(curvature_vector(v, 3.0 * v), 0.0, atol=1e-15)


def test_zero_velocity_raises():
    with pytest.raises(ZeroVelocityBlock):
        curvature_vector(np.zeros(3), np.ones(3))


@given(st.integers(2, 7), st.integers(0, 2**31 - 1))
def test_curvature_vector_orthogonal_to_velocity(d, seed):
    rng = np.random.default_rng(seed)
    v, a = rng.standard_normal(d), rng.standard_normal(d)
    k = curvature_vector(v, a)
    assert abs(k @ v) <= 1e-12 * np.linalg.norm(k) * np.linalg.norm(v) + 1e-15


# Gauss map along a real path ------------------------------------------------------

def test_gauss_directions_are_unit(traces52):
    for tr in traces52:
        for g in gauss_curve(tr)[::5]:
            for f in FLAVORS:
                assert np.linalg.norm(g.gamma(f)) == pytest.approx(1.0, abs=1e-14)
                assert g.speed(f) > 0


def test_flavor_blocks_are_restrictions(traces52):
    p = traces52[0].points[10]
    n, m = traces52[0].inst.n, traces52[0].inst.m
    pd_v, pd_a = flavor_blocks(p, "PD")
    p_v, p_a = flavor_blocks(p, Flavor.P)
    d_v, d_a = flavor_blocks(p, "d")
    np.testing.assert_array_equal(pd_v[:n + m], p_v)
    np.testing.assert_array_equal(pd_a[n + m:], d_a)
    np.testing.assert_array_equal(pd_v[n + m:], d_v)
    assert len(pd_v) == n + 2 * m


@pytest.mark.parametrize("k", [3, 20, 45])
def test_gauss_rate_matches_finite_differences(traces52, k):
    tr = traces52[1]
    p = tr.points[min(k, len(tr.points) - 1)]
    h = 1e-4
    lo = gauss_sample(continue_to(tr.inst, p, p.mu * math.exp(-h)))
    hi = gauss_sample(continue_to(tr.inst, p, p.mu * math.exp(h)))
    for f in FLAVORS:
        fd = np.linalg.norm(hi.gamma(f) - lo.gamma(f)) / (2 * h)
        assert fd == pytest.approx(gauss_rate(p, f), rel=1e-4, abs=1e-10)


def test_one_dimensional_primal_curve_is_straight():
    inst = sample_instance(4, 1, 5)
    for tr in _cells(inst):
        res = total_curvature(tr)
        assert res.K_p == pytest.approx(0.0, abs=1e-6)
        assert res.K_d > 0


def _seven_three_cell():
    # slowly turning primal curve at large mu; exposes absolute noise in xdot
    inst = sample_instance(7, 3, 20240601, 0)
    r = next(c for c in enumerate_cells(inst).bounded_cells() if str(c.eps) == "+-+++++")
    return trace_path(inst, r.eps, witness=r.witness_x)


@pytest.mark.parametrize("which", ["five_two", "seven_three"])
def test_quadrature_matches_dense_polyline(traces52, which):
    tr = traces52[2] if which == "five_two" else _seven_three_cell()
    res = total_curvature(tr)
    n_dense = 10 * res.n_samples
    ts = np.linspace(tr.ts[0], tr.ts[-1], n_dense)
    p = tr.points[0]
    samples = []
    for t in ts:
        p = continue_to(tr.inst, p, math.exp(t), G=tr.G)
        samples.append(gauss_sample(p))
    for f in FLAVORS:
        # polyline is a lower bound converging at second order
        L = polyline_length(gauss_matrix(samples, f))
        assert res.K(f) == pytest.approx(L, abs=1e-4)
        assert L <= res.K(f) + 1e-6
    assert res.quad_error_estimate <= 1e-6


def test_split_adds_up(traces52):
    res = total_curvature(traces52[0])
    left, right = res.split(0.0)
    np.testing.assert_allclose(left + right, [res.K_pd, res.K_p, res.K_d], rtol=1e-12)


# box symmetry ----------------------------------------------------------------------

def _box_K(c):
    box = LpInstance(np.vstack([np.eye(2), -np.eye(2)]), -np.ones(4), np.asarray(c, dtype=float))
    return total_curvature(trace_path(box, "++++"))


def test_box_reflection_invariance(box):
    base = total_curvature(trace_path(box, "++++"))
    swapped = _box_K([0.3, 1.0])
    mirrored = _box_K([-1.0, 0.3])
    for other in (swapped, mirrored):
        for f in FLAVORS:
            assert other.K(f) == pytest.approx(base.K(f), abs=1e-6)


def test_box_diagonal_objective_is_straight_in_primal():
    res = _box_K([1.0, 1.0])
    assert res.K_p == pytest.approx(0.0, abs=1e-6)


# Crofton -----------------------------------------------------------------------------

def _arc(theta0, theta1, k=2000, dim=2):
    th = np.linspace(theta0, theta1, k)
    G = np.zeros((k, dim))
    G[:, 0], G[:, 1] = np.cos(th), np.sin(th)
    return G


@pytest.mark.parametrize("dim", [2, 3, 5])
def test_crofton_full_great_circle(dim):
    est = crofton_length(_arc(0, 2 * math.pi, dim=dim), "PD", 500, make_rng(0))
    # every hyperplane through the origin meets a great circle exactly twice
    assert est.mean_crossings == 2.0
    assert est.length_estimate == pytest.approx(2 * math.pi)


def test_crofton_quarter_arc():
    est = crofton_length(_arc(0, math.pi / 2, dim=3), "P", 20000, make_rng(1))
    assert abs(est.length_estimate - math.pi / 2) <= 3 * est.std_error
    assert polyline_length(_arc(0, math.pi / 2)) == pytest.approx(math.pi / 2, rel=1e-12)


def test_crofton_standard_error_scaling():
    G = _arc(0, 2.0, dim=3)
    small = crofton_length(G, "D", 400, make_rng(2))
    large = crofton_length(G, "D", 6400, make_rng(2))
    assert small.std_error / large.std_error == pytest.approx(4.0, rel=0.25)
    assert large.std_error >= math.pi / 6400


def test_crofton_agrees_with_quadrature(traces52):
    tr = traces52[3]
    res = total_curvature(tr)
    gs = gauss_curve(tr)
    for i, f in enumerate(FLAVORS):
        est = crofton_length(gs, f, 5000, make_rng(3, i))
        assert abs(est.length_estimate - res.K(f)) <= 3 * est.std_error + 1e-3


def test_random_normals_unit_and_transversal():
    G = _arc(0, 1.0, k=50, dim=4)
    H = random_normals(make_rng(4), 300, 4, [G])
    np.testing.assert_allclose(np.linalg.norm(H, axis=1), 1.0, atol=1e-14)
    assert np.abs(H @ G.T).min() >= 1e-14


def test_sign_changes_small_case():
    G = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    assert list(sign_changes(G, np.array([[1.0, 0.0], [0.0, 1.0]]))) == [1, 0]


# crossings -----------------------------------------------------------------------------

def test_primal_crossings_vanish_for_n_one():
    traces = _cells(sample_instance(5, 1, 9))
    H = random_normals(make_rng(5), 200, 5 + 1, [])
    assert crossing_counts(traces, "P", H).max() == 0


def test_pd_crossings_respect_bound(traces52):
    dim = 2 + 2 * 5
    H = random_normals(make_rng(6), 2000, dim, [])
    counts = crossing_counts(traces52, "PD", H)
    assert counts.max() <= 2 * 2 * math.comb(4, 2)


def test_crossings_are_sign_symmetric(traces52):
    rng = make_rng(7)
    for _ in range(20):
        h = HyperplaneSample.from_normal(rng.standard_normal(12), "PD", 5, 2)
        assert max_crossings(traces52, "PD", h) == max_crossings(traces52, "PD", -h)


def test_hyperplane_embedding_round_trip():
    rng = make_rng(8)
    for f, d in ((Flavor.PD, 12), (Flavor.P, 7), (Flavor.D, 5)):
        h = rng.standard_normal(d)
        hs = HyperplaneSample.from_normal(h, f, 5, 2)
        np.testing.assert_allclose(hs.vector(f), h / np.linalg.norm(h), rtol=1e-14)
    with pytest.raises(ValueError):
        HyperplaneSample(np.zeros(2), np.zeros(5), np.zeros(5))


# transversality --------------------------------------------------------------------------

def _first_crossing(traces, flavor, h):
    for tr in traces:
        P = gauss_matrix(gauss_curve(tr), flavor) @ h.vector(flavor)
        idx = np.nonzero(np.signbit(P[1:]) != np.signbit(P[:-1]))[0]
        if len(idx):
            return tr, int(idx[0])
    return None, None


@pytest.mark.parametrize("flavor,dim", [("PD", 12), ("P", 7), ("D", 5)])
def test_refined_crossing_is_transversal(traces52, flavor, dim):
    rng = make_rng(10)
    for _ in range(20):
        h = HyperplaneSample.from_normal(rng.standard_normal(dim), flavor, 5, 2)
        tr, k = _first_crossing(traces52, flavor, h)
        if tr is not None:
            break
    assert tr is not None
    p = refine_crossing(tr, flavor, h, k)
    res, smin = transversality_residual(tr.inst, p, h)
    assert res <= 1e-8
    assert smin > 0
    # the same hyperplane away from the crossing leaves a visible residual
    far = tr.points[0] if k > len(tr.points) // 2 else tr.points[-1]
    res_far, _ = transversality_residual(tr.inst, far, h)
    assert res_far > 1e-6
