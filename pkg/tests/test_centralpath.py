import math

import numpy as np
import pytest
from scipy.optimize import linprog

from cplab.arrangement import apply_sign, enumerate_cells
from cplab.centralpath import (
    InfeasibleCell,
    LeftPositiveOrthant,
    TailFlag,
    UnboundedCell,
    acceleration_residual,
    analytic_center,
    barrier_point,
    continue_to,
    derivatives,
    kkt_residual,
    newton_correct,
    trace_path,
    velocity_residual,
)
from cplab.core import LpInstance, sample_instance

from _oracles import fd_velocity


@pytest.fixture(scope="module")
def cell52():
    inst = sample_instance(5, 2, 42, 1)
    s = enumerate_cells(inst)
    r = s.bounded_cells()[2]
    return inst, r


@pytest.fixture(scope="module")
def trace52(cell52):
    inst, r = cell52
    return trace_path(inst, r.eps, witness=r.witness_x)


# analytic center ----------------------------------------------------------------

def test_center_of_segment(segment):
    x, s = analytic_center(segment, "++")
    assert x[0] == pytest.approx(0.5, abs=1e-12)
    np.testing.assert_allclose(s, [0.5, 0.5])


def test_center_of_cube():
    cube = LpInstance(np.vstack([np.eye(3), -np.eye(3)]), -np.array([1, 2, 3, 1, 2, 3.0]), np.ones(3))
    x, _ = analytic_center(cube, "++++++")
    np.testing.assert_allclose(x, 0.0, atol=1e-12)


def test_center_gradient_vanishes(cell52):
    inst, r = cell52
    x, s = analytic_center(inst, r.eps, r.witness_x)
    norm = apply_sign(inst, r.eps)
    np.testing.assert_allclose(s, norm.A @ x - norm.b)
    assert np.linalg.norm(norm.A.T @ (1.0 / s)) <= 1e-10 * norm.norm2 * np.linalg.norm(1.0 / s)


def test_center_rejects_empty_cell(segment):
    with pytest.raises(InfeasibleCell):
        analytic_center(segment, "--")


# Newton corrector -----------------------------------------------------------------

def test_exact_start_is_fixed_point():
    A = np.array([[1.0], [-2.0], [0.5]])
    inst = LpInstance(A, -np.ones(3), A.T @ np.ones(3))
    p = newton_correct(inst, 1.0, np.zeros(1), np.ones(3), np.ones(3))
    np.testing.assert_array_equal(p.s * p.y, np.ones(3))
    np.testing.assert_array_equal(p.x, [0.0])
    assert p.residual == 0.0


def test_newton_residual_oracle(cell52):
    inst, r = cell52
    norm = apply_sign(inst, r.eps)
    x0, s0 = analytic_center(norm, None, r.witness_x)
    for mu in (1e-3, 1.0, 1e3):
        p = newton_correct(norm, mu, x0, s0, mu / s0)
        F = np.concatenate([norm.A @ p.x - p.s - norm.b, norm.A.T @ p.y - norm.c, p.s * p.y / mu - 1])
        assert np.linalg.norm(F[-norm.m:]) / math.sqrt(norm.m) <= 1e-10
        assert np.linalg.norm(F[:norm.m]) <= 1e-10 * max(1.0, np.linalg.norm(p.s), norm.norm2 * np.linalg.norm(p.x))
        assert np.all(p.s > 0) and np.all(p.y > 0)


def test_newton_rejects_non_interior_start(segment):
    with pytest.raises(LeftPositiveOrthant):
        newton_correct(segment, 1.0, np.zeros(1), np.array([1.0, -1.0]), np.ones(2))


# derivatives ---------------------------------------------------------------------------

def test_segment_primal_velocity_direction(segment):
    for mu in (1e-4, 1.0, 1e4):
        p = derivatives(segment, barrier_point(segment, mu, np.array([0.5])))
        v = np.concatenate([p.xdot, p.sdot])
        v = v / np.linalg.norm(v) * np.sign(v[0])
        np.testing.assert_allclose(v, np.array([1.0, 1.0, -1.0]) / math.sqrt(3), atol=1e-12)


@pytest.mark.parametrize("mu", [1e-10, 1e-6, 1e-2, 1.0, 1e2, 1e5])
def test_velocity_matches_finite_differences(cell52, mu):
    inst, r = cell52
    norm = apply_sign(inst, r.eps)
    x0, _ = analytic_center(norm, None, r.witness_x)
    p = derivatives(norm, barrier_point(norm, mu, x0))
    fd = fd_velocity(norm, p)
    assert np.linalg.norm(fd - p.velocity()) <= 1e-5 * np.linalg.norm(p.velocity())


@pytest.mark.parametrize("mu", [1e4, 1e7])
def test_small_primal_velocity_keeps_relative_accuracy(cell52, mu):
    # xdot shrinks like 1/mu^2; it must not pick up absolute rounding noise
    inst, r = cell52
    norm = apply_sign(inst, r.eps)
    x0, _ = analytic_center(norm, None, r.witness_x)
    p = derivatives(norm, barrier_point(norm, mu, x0))
    fd = fd_velocity(norm, p)[: norm.n]
    assert np.linalg.norm(fd - p.xdot) <= 1e-6 * np.linalg.norm(p.xdot)


def test_naive_difference_loses_precision_at_small_mu(cell52):
    # differencing full states at h = 1e-14 is rounding-dominated; the displacement oracle is not
    inst, r = cell52
    norm = apply_sign(inst, r.eps)
    x0, _ = analytic_center(norm, None, r.witness_x)
    p = derivatives(norm, barrier_point(norm, 1e-10, x0))
    h = 1e-4 * p.mu
    lo = newton_correct(norm, p.mu - h, p.x - h * p.xdot, p.s - h * p.sdot, p.y - h * p.ydot)
    hi = newton_correct(norm, p.mu + h, p.x + h * p.xdot, p.s + h * p.sdot, p.y + h * p.ydot)
    naive = (hi.state() - lo.state()) / (2 * h)
    v = p.velocity()
    assert np.linalg.norm(fd_velocity(norm, p) - v) < np.linalg.norm(naive - v)


def test_acceleration_matches_finite_differences(cell52):
    inst, r = cell52
    norm = apply_sign(inst, r.eps)
    x0, _ = analytic_center(norm, None, r.witness_x)
    mu = 0.3
    p = derivatives(norm, barrier_point(norm, mu, x0))
    h = 1e-3 * mu
    lo = continue_to(norm, p, mu - h)
    hi = continue_to(norm, p, mu + h)
    fd = (hi.velocity() - lo.velocity()) / (2 * h)
    assert np.linalg.norm(fd - p.acceleration()) <= 1e-5 * np.linalg.norm(p.acceleration())


@pytest.mark.parametrize("mu", [1e-10, 1e-6])
def test_derivatives_on_ill_conditioned_cell(mu):
    # normal matrices near 1e9 condition; refinement brings the residuals under the Newton tolerance
    inst = sample_instance(5, 3, 20240601, 4)
    r = next(c for c in enumerate_cells(inst).bounded_cells() if str(c.eps) == "-+++-")
    norm = apply_sign(inst, r.eps)
    x0, _ = analytic_center(norm, None, r.witness_x)
    p = derivatives(norm, barrier_point(norm, mu, x0))
    assert p.cond_estimate > 1e8
    assert velocity_residual(norm, p) <= 1e-9
    assert acceleration_residual(norm, p) <= 1e-9
    fd = fd_velocity(norm, p)
    assert np.linalg.norm(fd - p.velocity()) <= 1e-5 * np.linalg.norm(p.velocity())


def test_slack_and_dual_velocity_not_both_zero(trace52):
    for p in trace52.points:
        assert np.linalg.norm(p.sdot) + np.linalg.norm(p.ydot) > 0


# trace --------------------------------------------------------------------------------

def test_trace_residuals_at_every_point(trace52):
    inst = trace52.inst
    for p in trace52.points:
        assert p.residual <= 1e-10
        assert kkt_residual(inst, p.mu, p.x, p.s, p.y) <= 1e-8
        assert velocity_residual(inst, p) <= 1e-8
        assert acceleration_residual(inst, p) <= 1e-8
        assert np.all(p.s > 0) and np.all(p.y > 0)


def test_trace_is_sorted_and_gap_is_m_mu(trace52):
    mus = np.array([p.mu for p in trace52.points])
    assert np.all(np.diff(mus) > 0)
    assert trace52.mu_lo == mus[0] and trace52.mu_hi == mus[-1]
    m = trace52.inst.m
    for p in trace52.points:
        assert p.s @ p.y == pytest.approx(m * p.mu, rel=1e-8)


def test_trace_tail_flags(trace52):
    flags = trace52.truncation_flags
    assert (TailFlag.LO_CONVERGED in flags) != (TailFlag.LO_CAPPED in flags)
    assert (TailFlag.HI_CONVERGED in flags) != (TailFlag.HI_CAPPED in flags)


def test_large_mu_limit_is_analytic_center(cell52, trace52):
    inst, r = cell52
    xc, _ = analytic_center(inst, r.eps, r.witness_x)
    far = continue_to(trace52.inst, trace52.points[-1], 1e9)
    assert np.linalg.norm(far.x - xc) <= 1e-6


def test_small_mu_limit_is_lp_vertex(cell52, trace52):
    inst, r = cell52
    norm = trace52.inst
    lp = linprog(norm.c, A_ub=-norm.A, b_ub=-norm.b, bounds=[(None, None)] * norm.n, method="highs")
    near = continue_to(norm, trace52.points[0], 1e-12)
    assert np.linalg.norm(near.x - lp.x) <= 1e-6
    # n slacks vanish, the others stay away from zero
    s_sorted = np.sort(near.s)
    assert s_sorted[norm.n - 1] < 1e-9 and s_sorted[norm.n] > 1e-4


def test_segment_trace(segment):
    tr = trace_path(segment, "++")
    assert tr.mu_lo < 1e-6 and tr.mu_hi > 1e3
    # straight primal path: velocity blocks all parallel
    v0 = np.concatenate([tr.points[0].xdot, tr.points[0].sdot])
    for p in tr.points:
        v = np.concatenate([p.xdot, p.sdot])
        assert abs(abs(v @ v0) / (np.linalg.norm(v) * np.linalg.norm(v0)) - 1.0) < 1e-12


def test_c_rescaling_invariance(cell52, trace52):
    inst, r = cell52
    lam = 3.7
    scaled = LpInstance(inst.A, inst.b, lam * inst.c)
    tr2 = trace_path(scaled, r.eps, witness=r.witness_x)
    for q in tr2.points[::7]:
        p = continue_to(trace52.inst, trace52.nearest(q.mu / lam), q.mu / lam)
        assert np.linalg.norm(p.x - q.x) <= 1e-6
        assert np.linalg.norm(p.s - q.s) <= 1e-6
        np.testing.assert_allclose(q.y, lam * p.y, rtol=1e-6)


def _hermite(trace, t):
    """Quintic Hermite interpolant in t = ln mu of the path state."""
    ts = trace.ts
    k = int(np.clip(np.searchsorted(ts, t) - 1, 0, len(ts) - 2))
    a, b = trace.points[k], trace.points[k + 1]
    h = b.t - a.t
    u = (t - a.t) / h

    def jets(p):
        d1 = p.mu * p.velocity()
        d2 = p.mu**2 * p.acceleration() + d1
        return p.state(), h * d1, h * h * d2

    (f0, f1, f2), (g0, g1, g2) = jets(a), jets(b)
    u2, u3, u4, u5 = u**2, u**3, u**4, u**5
    H0 = 1 - 10 * u3 + 15 * u4 - 6 * u5
    H1 = u - 6 * u3 + 8 * u4 - 3 * u5
    H2 = 0.5 * (u2 - 3 * u3 + 3 * u4 - u5)
    K0 = 10 * u3 - 15 * u4 + 6 * u5
    K1 = -4 * u3 + 7 * u4 - 3 * u5
    K2 = 0.5 * (u3 - 2 * u4 + u5)
    return H0 * f0 + H1 * f1 + H2 * f2 + K0 * g0 + K1 * g1 + K2 * g2


def test_two_seeds_lie_on_the_same_curve(cell52, trace52):
    inst, r = cell52
    other = trace_path(inst, r.eps, witness=r.witness_x, seed_mu=37.0)
    inside = [q for q in other.points if trace52.mu_lo < q.mu < trace52.mu_hi]
    assert len(inside) > 20
    for q in inside:
        z = _hermite(trace52, q.t)
        assert np.max(np.abs(z - q.state()) / np.maximum(1.0, np.abs(q.state()))) <= 1e-6


def test_trace_rejects_non_polytope(segment):
    with pytest.raises(UnboundedCell):
        trace_path(segment, "+-")
    with pytest.raises(InfeasibleCell):
        trace_path(segment, "--")
