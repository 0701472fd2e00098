"""Sign-condition cells of ``{A x - s = b}`` and their feasibility classes.

Each of the ``2^m`` sign vectors ``eps`` selects the polyhedron
``eps_i (A_i x - b_i) >= 0``. Cells are classified with small phase-one LPs
(maximise the common margin ``t``) solved by the Bland-rule simplex.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from math import comb
from typing import List, Optional

import numpy as np

from .core import (
    DEFAULT_TOLERANCES,
    CplabError,
    DimensionMismatch,
    LpInstance,
    SignVector,
    Tolerances,
    as_sign_vector,
    null_space_basis,
    particular_solution,
)
from .simplex import simplex_max


class BoxTooSmall(CplabError):
    """The phase-one optimum sits on the artificial box without a positive margin."""


class CapExceeded(CplabError):
    pass


class Feasibility(enum.Enum):
    EMPTY = "empty"
    DEGENERATE = "degenerate"
    STRICT = "strict"


class CellStatus(enum.Enum):
    EMPTY = "Empty"
    DEGENERATE = "Degenerate"
    UNBOUNDED_FEASIBLE = "UnboundedFeasible"
    BOUNDED_STRICT = "BoundedStrict"


BOX = 1e6
BOX_RETRY = 1e9
ENUMERATION_CAP = 20


@dataclass(frozen=True)
class PhaseOneResult:
    status: Feasibility
    witness: Optional[np.ndarray]
    margin: float  # min_i eps_i (A_i z - b_i) at the optimiser
    box_active: bool


@dataclass
class CellReport:
    eps: SignVector
    primal_status: CellStatus
    dual_strict: bool
    jointly_strict: bool
    witness_x: Optional[np.ndarray] = None
    witness_gamma: Optional[np.ndarray] = None
    condition_flag: bool = False
    primal_margin: float = float("nan")
    dual_margin: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "eps": str(self.eps),
            "primal_status": self.primal_status.value,
            "dual_strict": self.dual_strict,
            "jointly_strict": self.jointly_strict,
            "condition_flag": self.condition_flag,
            "primal_margin": self.primal_margin,
            "dual_margin": self.dual_margin,
            "witness_x": None if self.witness_x is None else self.witness_x.tolist(),
            "witness_gamma": None if self.witness_gamma is None else self.witness_gamma.tolist(),
        }


@dataclass
class ArrangementSummary:
    m: int
    n: int
    bounded_strict_count: int
    bounded_expected: int
    joint_count: int
    joint_expected: int
    per_cell: List[CellReport] = field(default_factory=list)

    @property
    def n_cells(self) -> int:
        return len(self.per_cell)

    @property
    def degenerate_count(self) -> int:
        return sum(r.primal_status is CellStatus.DEGENERATE for r in self.per_cell)

    @property
    def flagged_count(self) -> int:
        return sum(r.condition_flag for r in self.per_cell)

    @property
    def bounded_match(self) -> bool:
        return self.bounded_strict_count == self.bounded_expected

    @property
    def joint_match(self) -> bool:
        return self.joint_count == self.joint_expected

    @property
    def flagged(self) -> bool:
        """True when the instance looks non-generic (any cell flag or a count mismatch)."""
        return self.flagged_count > 0 or not (self.bounded_match and self.joint_match)

    def bounded_cells(self) -> List[CellReport]:
        return [r for r in self.per_cell if r.primal_status is CellStatus.BOUNDED_STRICT]

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "bounded_strict_count": self.bounded_strict_count,
            "bounded_expected": self.bounded_expected,
            "joint_count": self.joint_count,
            "joint_expected": self.joint_expected,
            "degenerate_count": self.degenerate_count,
            "flagged": self.flagged,
            "per_cell": [r.to_dict() for r in self.per_cell],
        }


def apply_sign(inst: LpInstance, eps) -> LpInstance:
    """Return ``(D A, D b, c)`` with ``D = diag(eps)``."""
    eps = as_sign_vector(eps)
    if len(eps) != inst.m:
        raise DimensionMismatch(f"sign vector of length {len(eps)} for m={inst.m}")
    d = eps.array
    return LpInstance(d[:, None] * inst.A, d * inst.b, inst.c, seed=inst.seed, rank_tol=inst.rank_tol)


def phase_one(A, b, eps, margin: float, box: float = BOX) -> PhaseOneResult:
    """Maximise ``t`` subject to ``eps_i (A_i z - b_i) >= t`` and ``|z_j| <= box``.

    Raises :class:`BoxTooSmall` when the optimiser touches the box while the
    achieved margin is not positive.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    d = np.asarray(eps, dtype=float)
    m, n = A.shape
    SA = d[:, None] * A
    Sb = d * b
    # Shift z' = z + box >= 0 and t' = t + T >= 0 so the origin is feasible.
    shift = Sb + box * SA.sum(axis=1)
    T = max(0.0, shift.max()) + 1.0
    G = np.zeros((m + n, n + 1))
    G[:m, :n] = -SA
    G[:m, n] = 1.0
    G[m:, :n] = np.eye(n)
    h = np.concatenate([T - shift, np.full(n, 2.0 * box)])
    obj = np.zeros(n + 1)
    obj[n] = 1.0
    res = simplex_max(G, h, obj)
    z = res.z[:n] - box
    achieved = float(np.min(SA @ z - Sb))
    box_active = bool(np.any(np.abs(z) >= box * (1.0 - 1e-9)))
    if achieved > margin:
        return PhaseOneResult(Feasibility.STRICT, z, achieved, box_active)
    if box_active:
        raise BoxTooSmall(f"phase-one optimum on the box |z| <= {box:g} with margin {achieved:.3e}")
    status = Feasibility.EMPTY if achieved < -margin else Feasibility.DEGENERATE
    return PhaseOneResult(status, None, achieved, box_active)


def _phase_one_with_retry(A, b, eps, margin):
    try:
        return phase_one(A, b, eps, margin, BOX)
    except BoxTooSmall:
        return phase_one(A, b, eps, margin, BOX_RETRY)


def primal_feasibility(inst: LpInstance, eps, tol: Tolerances = DEFAULT_TOLERANCES):
    """Classify the primal cell as empty, degenerate or strictly feasible.

    Returns
    -------
    status : Feasibility
    witness : ndarray or None
        Optimiser of the phase-one LP when the cell is strictly feasible.
    """
    eps = as_sign_vector(eps)
    if len(eps) != inst.m:
        raise DimensionMismatch(f"sign vector of length {len(eps)} for m={inst.m}")
    res = _phase_one_with_retry(inst.A, inst.b, eps.array, tol.feas_margin)
    return res.status, res.witness


def is_bounded(inst: LpInstance, eps, tol: Tolerances = DEFAULT_TOLERANCES) -> bool:
    """True iff the recession cone ``{d : eps_i A_i d >= 0}`` is ``{0}``.

    Solved as ``2n`` LPs maximising ``+-d_j`` over the cone cut by ``|d|_inf <= 1``,
    with ``d = d+ - d-`` so that the origin is an initial vertex.
    """
    eps = as_sign_vector(eps)
    SA = eps.array[:, None] * inst.A
    m, n = SA.shape
    G = np.zeros((m + 2 * n, 2 * n))
    G[:m, :n] = -SA
    G[:m, n:] = SA
    G[m:, :] = np.eye(2 * n)
    h = np.concatenate([np.zeros(m), np.ones(2 * n)])
    for j in range(n):
        for sign in (1.0, -1.0):
            obj = np.zeros(2 * n)
            obj[j] = sign
            obj[n + j] = -sign
            if simplex_max(G, h, obj).value > tol.feas_margin:
                return False
    return True


def dual_strict_feasibility(inst: LpInstance, eps, tol: Tolerances = DEFAULT_TOLERANCES,
                            G: Optional[np.ndarray] = None, f: Optional[np.ndarray] = None):
    """Decide whether some ``y = f + G gamma`` has ``eps_i y_i >= feas_margin`` for all ``i``.

    Returns ``(strict, witness_gamma)``.
    """
    strict, gamma, _, _ = _dual_phase_one(inst, as_sign_vector(eps), tol, G, f)
    return strict, gamma


def _dual_phase_one(inst, eps, tol, G=None, f=None):
    if G is None:
        G = null_space_basis(inst.A, inst.rank_tol)
    if f is None:
        f = particular_solution(inst.A, inst.c, inst.rank_tol)
    res = _phase_one_with_retry(G, -f, eps.array, tol.feas_margin)
    strict = res.status is Feasibility.STRICT
    return strict, res.witness, res.margin, res.status is Feasibility.DEGENERATE


def classify_cell(inst: LpInstance, eps, tol: Tolerances = DEFAULT_TOLERANCES,
                  G=None, f=None) -> CellReport:
    eps = as_sign_vector(eps)
    flag = False
    try:
        p = _phase_one_with_retry(inst.A, inst.b, eps.array, tol.feas_margin)
    except BoxTooSmall:
        p = None
        flag = True
    if p is None:
        status, witness_x, pmargin = CellStatus.DEGENERATE, None, float("nan")
    elif p.status is Feasibility.STRICT:
        witness_x, pmargin = p.witness, p.margin
        bounded = is_bounded(inst, eps, tol)
        status = CellStatus.BOUNDED_STRICT if bounded else CellStatus.UNBOUNDED_FEASIBLE
    else:
        status, witness_x, pmargin = (
            CellStatus.EMPTY if p.status is Feasibility.EMPTY else CellStatus.DEGENERATE,
            None,
            p.margin,
        )
    if status is CellStatus.DEGENERATE:
        flag = True
    try:
        dual_strict, gamma, dmargin, dual_degenerate = _dual_phase_one(inst, eps, tol, G, f)
    except BoxTooSmall:
        dual_strict, gamma, dmargin, dual_degenerate = False, None, float("nan"), True
    if dual_degenerate:
        flag = True
    primal_open = status in (CellStatus.BOUNDED_STRICT, CellStatus.UNBOUNDED_FEASIBLE)
    return CellReport(
        eps=eps,
        primal_status=status,
        dual_strict=dual_strict,
        jointly_strict=primal_open and dual_strict,
        witness_x=witness_x,
        witness_gamma=gamma if dual_strict else None,
        condition_flag=flag,
        primal_margin=pmargin,
        dual_margin=dmargin,
    )


def bounded_cell_count(m: int, n: int) -> int:
    """Generic number of bounded cells of ``m`` affine hyperplanes in ``R^n``."""
    return comb(m - 1, n)


def enumerate_cells(inst: LpInstance, tol: Tolerances = DEFAULT_TOLERANCES,
                    cap: int = ENUMERATION_CAP) -> ArrangementSummary:
    """Classify all ``2^m`` sign vectors in binary counting order."""
    m, n = inst.m, inst.n
    if m > cap:
        raise CapExceeded(f"m={m} exceeds the enumeration cap {cap}")
    G = null_space_basis(inst.A, inst.rank_tol)
    f = particular_solution(inst.A, inst.c, inst.rank_tol)
    reports = [classify_cell(inst, SignVector.from_index(k, m), tol, G, f) for k in range(2 ** m)]
    return ArrangementSummary(
        m=m,
        n=n,
        bounded_strict_count=sum(r.primal_status is CellStatus.BOUNDED_STRICT for r in reports),
        bounded_expected=bounded_cell_count(m, n),
        joint_count=sum(r.jointly_strict for r in reports),
        joint_expected=comb(m, n),
        per_cell=reports,
    )
