from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from cplab.arrangement import (
    CapExceeded,
    CellStatus,
    Feasibility,
    apply_sign,
    classify_cell,
    dual_strict_feasibility,
    enumerate_cells,
    is_bounded,
    primal_feasibility,
)
from cplab.core import DimensionMismatch, LpInstance, SignVector, null_space_basis, particular_solution, sample_instance


# apply_sign -------------------------------------------------------------------

def test_apply_sign_identity_and_involution():
    inst = sample_instance(5, 2, 1)
    assert apply_sign(inst, "+++++") == inst
    eps = SignVector.parse("+-+--")
    twice = apply_sign(apply_sign(inst, eps), eps)
    np.testing.assert_array_equal(twice.A, inst.A)
    np.testing.assert_array_equal(twice.b, inst.b)
    flipped = apply_sign(inst, "-----")
    np.testing.assert_array_equal(flipped.A, -inst.A)
    with pytest.raises(DimensionMismatch):
        apply_sign(inst, "++")


# primal feasibility and boundedness on the segment instance -----------------

def test_segment_cell_is_strict(segment):
    status, w = primal_feasibility(segment, "++")
    assert status is Feasibility.STRICT
    assert w[0] == pytest.approx(0.5, abs=1e-12)


def test_segment_opposite_cell_is_empty(segment):
    status, w = primal_feasibility(segment, "--")
    assert status is Feasibility.EMPTY
    assert w is None


def test_constructed_witness_cell_is_strict():
    inst = sample_instance(6, 3, 2)
    z = np.array([0.3, -0.2, 0.1])
    eps = np.sign(inst.A @ z - inst.b)
    status, w = primal_feasibility(inst, eps)
    assert status is Feasibility.STRICT
    assert np.all(eps * (inst.A @ w - inst.b) >= 1e-7)


def test_boundedness(segment):
    assert is_bounded(segment, "++")
    # eps = (+, -): x >= 0 and x >= 1, a ray
    assert not is_bounded(segment, "+-")
    cube = LpInstance(np.vstack([np.eye(3), -np.eye(3)]), -np.ones(6), np.ones(3))
    assert is_bounded(cube, "++++++")


def test_degenerate_cell_flagged():
    # x >= 0 and x <= 0: the cell {x = 0} has empty interior
    inst = LpInstance(np.array([[1.0], [-1.0], [1.0]]), np.array([0.0, 0.0, -1.0]), np.array([1.0]))
    status, _ = primal_feasibility(inst, "+++")
    assert status is Feasibility.DEGENERATE
    assert classify_cell(inst, "+++").condition_flag


# dual side -------------------------------------------------------------------

def test_segment_dual_cells(segment):
    # y1 - y2 = 1, y = (1 + t, t): only (-, +) is impossible
    expected = {"++": True, "+-": True, "-+": False, "--": True}
    for eps, ok in expected.items():
        strict, gamma = dual_strict_feasibility(segment, eps)
        assert strict is ok, eps
        if strict:
            G = null_space_basis(segment.A)
            f = particular_solution(segment.A, segment.c)
            assert np.all(SignVector.parse(eps).array * (f + G @ gamma) >= 1e-7)


# enumeration -------------------------------------------------------------------

def test_segment_enumeration(segment):
    s = enumerate_cells(segment)
    assert s.n_cells == 4
    assert s.bounded_strict_count == 1
    assert str(s.bounded_cells()[0].eps) == "++"


def test_generic_five_two_counts():
    s = enumerate_cells(sample_instance(5, 2, 42))
    assert not s.flagged
    assert s.bounded_strict_count == comb(4, 2) == 6
    assert s.joint_count == comb(5, 2) == 10


def test_enumeration_order_and_witnesses():
    inst = sample_instance(5, 3, 8)
    s = enumerate_cells(inst)
    assert [r.eps.index() for r in s.per_cell] == list(range(32))
    for r in s.per_cell:
        if r.primal_status is CellStatus.BOUNDED_STRICT:
            # independent recheck of the witness
            assert np.all(r.eps.array * (inst.A @ r.witness_x - inst.b) >= 1e-7)
        assert r.jointly_strict == (r.dual_strict and r.primal_status in
                                    (CellStatus.BOUNDED_STRICT, CellStatus.UNBOUNDED_FEASIBLE))


def test_cap():
    inst = sample_instance(21, 1, 0)
    with pytest.raises(CapExceeded):
        enumerate_cells(inst)


def _linprog_margin(A, b, eps):
    """Phase-one optimum by an independent solver."""
    m, n = A.shape
    SA = eps[:, None] * A
    # max t s.t. SA z - Sb >= t, |z| <= 1e6
    res = linprog(np.r_[np.zeros(n), -1.0], A_ub=np.c_[-SA, np.ones(m)], b_ub=-eps * b,
                  bounds=[(-1e6, 1e6)] * n + [(None, None)], method="highs")
    return -res.fun


@pytest.mark.parametrize("mn,seed", [((4, 2), 0), ((5, 2), 1), ((6, 3), 2)])
def test_classification_matches_linprog(mn, seed):
    inst = sample_instance(*mn, seed)
    s = enumerate_cells(inst)
    for r in s.per_cell:
        t = _linprog_margin(inst.A, inst.b, r.eps.array)
        strict = r.primal_status in (CellStatus.BOUNDED_STRICT, CellStatus.UNBOUNDED_FEASIBLE)
        assert strict == (t > 1e-7)
        if strict:
            assert r.primal_margin == pytest.approx(t, rel=1e-8, abs=1e-9)


@given(st.integers(0, 10**6), st.integers(0, 31))
def test_sign_action_equivariance(seed, k):
    inst = sample_instance(5, 2, seed)
    delta = SignVector.from_index(k, 5)
    base = {str(r.eps): r for r in enumerate_cells(inst).per_cell}
    moved = enumerate_cells(apply_sign(inst, delta))
    for r in moved.per_cell:
        orig = base[str(delta * r.eps)]
        assert r.primal_status is orig.primal_status
        assert r.dual_strict == orig.dual_strict


def test_stable_under_small_perturbation():
    inst = sample_instance(5, 2, 3)
    s = enumerate_cells(inst)
    rng = np.random.default_rng(0)
    pert = LpInstance(inst.A, inst.b + rng.uniform(-1, 1, 5) * 1e-8, inst.c)
    for r in s.per_cell[::3]:
        status, _ = primal_feasibility(pert, r.eps)
        was_strict = r.primal_status in (CellStatus.BOUNDED_STRICT, CellStatus.UNBOUNDED_FEASIBLE)
        if was_strict:
            assert status is not Feasibility.EMPTY
        elif r.primal_status is CellStatus.EMPTY:
            assert status is not Feasibility.STRICT
