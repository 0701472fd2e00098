"""Primal/dual central path of one strictly feasible cell.

The path solves ``A x - s = b, A^T y = c, s*y = mu e`` with ``s, y > 0``. All
work happens on the sign-normalised instance ``(D A, D b, c)`` so that the cell
is ``{s > 0}``; the normalisation is an orthogonal change of the ``s`` and ``y``
coordinates and leaves curvature untouched.

Points carry first and second ``mu``-derivatives. The tracer is a
predictor-corrector in ``t = ln mu`` whose step is limited by how far the
Gauss directions turn between consecutive points.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .arrangement import Feasibility, apply_sign, is_bounded, primal_feasibility
from .core import (
    DEFAULT_TOLERANCES,
    CplabError,
    LpInstance,
    LUSolver,
    SignVector,
    SingularMatrix,
    Tolerances,
    as_sign_vector,
    null_space_basis,
)


class NotConverged(CplabError):
    pass


class LeftPositiveOrthant(CplabError):
    pass


class StepUnderflow(CplabError):
    pass


class InfeasibleCell(CplabError):
    pass


class UnboundedCell(CplabError):
    pass


class TailFlag(enum.Enum):
    LO_CONVERGED = "LoTailConverged"
    HI_CONVERGED = "HiTailConverged"
    LO_CAPPED = "LoTailCapped"
    HI_CAPPED = "HiTailCapped"


FRACTION_TO_BOUNDARY = 0.95
MAX_NEWTON = 60
TURN_MAX = 0.05
T_CAP = math.log(1e10)
MAX_STEP = 0.5
MIN_STEP = 1e-9


@dataclass
class PathPoint:
    mu: float
    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    xdot: Optional[np.ndarray] = None
    sdot: Optional[np.ndarray] = None
    ydot: Optional[np.ndarray] = None
    xddot: Optional[np.ndarray] = None
    sddot: Optional[np.ndarray] = None
    yddot: Optional[np.ndarray] = None
    residual: float = float("nan")
    cond_estimate: float = float("nan")

    @property
    def t(self) -> float:
        return math.log(self.mu)

    @property
    def has_derivatives(self) -> bool:
        return self.yddot is not None

    def state(self) -> np.ndarray:
        return np.concatenate([self.x, self.s, self.y])

    def velocity(self) -> np.ndarray:
        return np.concatenate([self.xdot, self.sdot, self.ydot])

    def acceleration(self) -> np.ndarray:
        return np.concatenate([self.xddot, self.sddot, self.yddot])


def kkt_residual(inst: LpInstance, mu: float, x, s, y) -> float:
    """Scaled residual of ``F_mu(x, s, y)``.

    Each block is measured relative to the size of the terms it balances, and
    the complementarity block as ``|s*y/mu - e| / sqrt(m)``. The largest of the
    three is returned.
    """
    A, b, c = inst.A, inst.b, inst.c
    normA = inst.norm2
    r1 = np.linalg.norm(A @ x - s - b) / max(1.0, normA * np.linalg.norm(x), np.linalg.norm(s), np.linalg.norm(b))
    r2 = np.linalg.norm(A.T @ y - c) / max(1.0, normA * np.linalg.norm(y), np.linalg.norm(c))
    r3 = np.linalg.norm(s * y / mu - 1.0) / math.sqrt(len(s))
    return float(max(r1, r2, r3))


def velocity_residual(inst: LpInstance, p: PathPoint) -> float:
    """Scaled residual of ``A xdot - sdot = 0, A^T ydot = 0, sdot*y + s*ydot = e``."""
    A = inst.A
    normA = inst.norm2
    r1 = np.linalg.norm(A @ p.xdot - p.sdot) / max(1e-300, normA * np.linalg.norm(p.xdot), np.linalg.norm(p.sdot))
    r2 = np.linalg.norm(A.T @ p.ydot) / max(1e-300, normA * np.linalg.norm(p.ydot))
    t1, t2 = p.sdot * p.y, p.s * p.ydot
    r3 = np.max(np.abs(t1 + t2 - 1.0) / np.maximum(1.0, np.abs(t1) + np.abs(t2)))
    return float(max(r1, r2, r3))


def acceleration_residual(inst: LpInstance, p: PathPoint) -> float:
    """Scaled residual of the differentiated velocity system."""
    A = inst.A
    normA = inst.norm2
    r1 = np.linalg.norm(A @ p.xddot - p.sddot) / max(1e-300, normA * np.linalg.norm(p.xddot), np.linalg.norm(p.sddot))
    r2 = np.linalg.norm(A.T @ p.yddot) / max(1e-300, normA * np.linalg.norm(p.yddot))
    t1, t2, t3 = p.sddot * p.y, 2.0 * p.sdot * p.ydot, p.s * p.yddot
    scale = np.maximum(np.abs(t1) + np.abs(t2) + np.abs(t3), 1e-300)
    r3 = np.max(np.abs(t1 + t2 + t3) / scale)
    return float(max(r1, r2, r3))


def jacobian(inst: LpInstance, s, y) -> np.ndarray:
    """``DF_mu`` for variables ``(x, s, y)`` and blocks ``(primal, dual, complementarity)``."""
    A = inst.A
    m, n = A.shape
    J = np.zeros((n + 2 * m, n + 2 * m))
    J[:m, :n] = A
    J[:m, n:n + m] = -np.eye(m)
    J[m:m + n, n + m:] = A.T
    J[m + n:, n:n + m] = np.diag(y)
    J[m + n:, n + m:] = np.diag(s)
    return J


class _ScaledSolver:
    """LU of a Ruiz-equilibrated matrix: ``J = R^-1 Jt C^-1``."""

    def __init__(self, J, cond_cap, sweeps=4):
        r = np.ones(J.shape[0])
        col = np.ones(J.shape[1])
        Jt = J.copy()
        for _ in range(sweeps):
            dr = 1.0 / np.sqrt(np.abs(Jt).max(axis=1))
            dc = 1.0 / np.sqrt(np.abs(Jt).max(axis=0))
            Jt = dr[:, None] * Jt * dc[None, :]
            r *= dr
            col *= dc
        self.r, self.col = r, col
        self.lu = LUSolver(Jt, cond_cap=math.inf)
        self.cond = self.lu.cond
        self.ill = self.cond > cond_cap

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.ndim == 1:
            return self.col * self.lu.solve(self.r * rhs)
        return self.col[:, None] * self.lu.solve(self.r[:, None] * rhs)


def _split(inst, z):
    m, n = inst.m, inst.n
    return z[:n], z[n:n + m], z[n + m:]


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return math.inf
    return float(np.min(-v[neg] / dv[neg]))


def newton_correct(inst: LpInstance, mu: float, x, s, y, tol: Tolerances = DEFAULT_TOLERANCES,
                   max_iter: int = MAX_NEWTON) -> PathPoint:
    """Damped Newton on ``F_mu`` keeping ``s, y > 0`` (fraction-to-boundary 0.95).

    Returns a :class:`PathPoint` without derivatives. A start that already meets
    ``newton_tol`` is returned after zero iterations.
    """
    x = np.array(x, dtype=float)
    s = np.array(s, dtype=float)
    y = np.array(y, dtype=float)
    if mu <= 0 or np.any(s <= 0) or np.any(y <= 0):
        raise LeftPositiveOrthant("newton_correct needs mu > 0 and a start with s, y > 0")
    A, b, c = inst.A, inst.b, inst.c
    res = kkt_residual(inst, mu, x, s, y)
    for _ in range(max_iter):
        if res <= tol.newton_tol:
            return PathPoint(mu, x, s, y, residual=res)
        F = np.concatenate([A @ x - s - b, A.T @ y - c, s * y - mu])
        try:
            step = _ScaledSolver(jacobian(inst, s, y), tol.cond_cap).solve(-F)
        except CplabError as exc:
            raise NotConverged(f"Newton system failed at mu={mu:.3e}: {exc}") from exc
        dx, ds, dy = _split(inst, step)
        alpha = min(1.0, FRACTION_TO_BOUNDARY * _max_step(s, ds), FRACTION_TO_BOUNDARY * _max_step(y, dy))
        for _ in range(40):
            xn, sn, yn = x + alpha * dx, s + alpha * ds, y + alpha * dy
            if np.all(sn > 0) and np.all(yn > 0):
                rn = kkt_residual(inst, mu, xn, sn, yn)
                if rn < res or rn <= tol.newton_tol:
                    break
            alpha *= 0.5
        else:
            raise NotConverged(f"no decrease of the residual at mu={mu:.3e} (residual {res:.3e})")
        x, s, y, res = xn, sn, yn, rn
    if res <= tol.newton_tol:
        return PathPoint(mu, x, s, y, residual=res)
    raise NotConverged(f"Newton did not reach {tol.newton_tol:.1e} at mu={mu:.3e} (residual {res:.3e})")


class _SPD:
    """Cholesky of a Jacobi-scaled symmetric positive definite matrix."""

    def __init__(self, M):
        d = 1.0 / np.sqrt(np.diag(M))
        Ms = d[:, None] * M * d[None, :]
        try:
            self.cf = cho_factor(Ms, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrix(str(exc)) from exc
        self.d = d
        self.cond = float(np.linalg.cond(Ms)) if Ms.size else 1.0

    def solve(self, rhs):
        return self.d * cho_solve(self.cf, self.d * rhs, check_finite=False)


def _refine(A, G, Fp, Fd, s, y, xv, yv, rhs, trigger, steps=2):
    """Iterative refinement of ``y*(A xv) + s*yv = rhs`` with ``yv`` in ``range G``.

    Reuses both factorizations. A step is taken only while the scaled
    componentwise residual exceeds ``trigger``. Below that level the residual
    mostly reflects the point's own Newton error, and correcting for it puts
    absolute noise of that size into blocks that are tiny but relatively
    accurate (``xdot`` at large ``mu``).
    """
    floor = np.maximum(np.abs(rhs), 1.0) if np.ndim(rhs) == 0 else np.abs(rhs)
    for _ in range(steps):
        t1, t2 = y * (A @ xv), s * yv
        r = rhs - t1 - t2
        if np.max(np.abs(r) / np.maximum(floor + np.abs(t1) + np.abs(t2), 1e-300)) <= trigger:
            break
        xv = xv + Fp.solve(A.T @ (r / s))
        yv = yv + G @ Fd.solve(G.T @ (r / y))
    return xv, yv


def derivatives(inst: LpInstance, point: PathPoint, tol: Tolerances = DEFAULT_TOLERANCES,
                G: Optional[np.ndarray] = None) -> PathPoint:
    """Fill first and second ``mu``-derivatives of the path at ``point``.

    ``DF_mu`` is factored by block elimination: the primal block reduces to
    ``A^T (y/s) A`` and the dual block to ``G^T (s/y) G`` with ``G`` a basis of
    ``ker A^T``. On the path ``A^T (1/s) = c/mu`` and ``G^T (1/y) = -G^T b/mu``;
    using those identities for the velocity right-hand sides keeps the small
    blocks (``xdot`` for large ``mu``, ``ydot`` on the optimal support for
    small ``mu``) free of cancellation. The second derivatives come from the
    same two matrices with right-hand sides ``-2 A^T(sdot ydot / s)`` and
    ``-2 G^T(sdot ydot / y)``. Both solutions are polished by iterative
    refinement against the complementarity rows when their residual exceeds
    ``tol.newton_tol``.
    """
    if G is None:
        G = null_space_basis(inst.A, inst.rank_tol)
    A, b, c = inst.A, inst.b, inst.c
    mu, s, y = point.mu, point.s, point.y
    w = y / s
    v = s / y
    Mp = A.T @ (w[:, None] * A)
    Md = G.T @ (v[:, None] * G)
    Gb = G.T @ b
    Fp, Fd = _SPD(Mp), _SPD(Md)
    xd = Fp.solve(c / mu)
    yd = G @ Fd.solve(-Gb / mu)
    xd, yd = _refine(A, G, Fp, Fd, s, y, xd, yd, 1.0, tol.newton_tol)
    sd = A @ xd
    sy2 = -2.0 * sd * yd
    xdd = Fp.solve(A.T @ (sy2 / s))
    ydd = G @ Fd.solve(G.T @ (sy2 / y))
    xdd, ydd = _refine(A, G, Fp, Fd, s, y, xdd, ydd, sy2, tol.newton_tol)
    sdd = A @ xdd
    cond = max(Fp.cond, Fd.cond)
    if not (np.all(np.isfinite(xd)) and np.all(np.isfinite(yd))):
        raise SingularMatrix(f"derivative solve produced non-finite values at mu={mu:.3e}")
    return replace(point, xdot=xd, sdot=sd, ydot=yd, xddot=xdd, sddot=sdd, yddot=ydd,
                   cond_estimate=cond)


def analytic_center(inst: LpInstance, eps=None, witness=None, tol: Tolerances = DEFAULT_TOLERANCES,
                    max_iter: int = 200):
    """Maximiser of ``sum(log s)`` over the cell ``eps`` (damped Newton).

    ``inst`` is the original instance; the returned ``s`` is sign-normalised,
    i.e. ``s = D (A x - b) > 0``. When ``eps`` is None the instance is assumed
    normalised already.
    """
    norm = inst if eps is None else apply_sign(inst, eps)
    if witness is None:
        status, witness = primal_feasibility(norm, [1] * norm.m, tol)
        if status is not Feasibility.STRICT:
            raise InfeasibleCell("cell has no strictly feasible point")
    x = np.array(witness, dtype=float)
    A, b = norm.A, norm.b
    s = A @ x - b
    if np.any(s <= 0):
        raise InfeasibleCell("witness is not strictly inside the cell")
    for _ in range(max_iter):
        g = A.T @ (1.0 / s)
        H = A.T @ (A / (s * s)[:, None])
        dx = np.linalg.solve(H, g)
        dec2 = float(g @ dx)
        gscale = norm.norm2 * np.linalg.norm(1.0 / s)
        if np.linalg.norm(g) <= tol.newton_tol * gscale:
            return x, s
        ds = A @ dx
        alpha = 1.0 if dec2 < 0.25 else 1.0 / (1.0 + math.sqrt(dec2))
        alpha = min(alpha, FRACTION_TO_BOUNDARY * _max_step(s, ds))
        f0 = np.sum(np.log(s))
        while alpha > 1e-16:
            sn = s + alpha * ds
            if np.all(sn > 0) and np.sum(np.log(sn)) >= f0 - 1e-14 * abs(f0):
                break
            alpha *= 0.5
        x = x + alpha * dx
        s = A @ x - b
    raise NotConverged(f"analytic center not found in {max_iter} iterations")


PRIMAL_MU_FLOOR = 1e-8


def _barrier_newton(inst, mu, x, max_iter, stop=1e-12):
    A, b, c = inst.A, inst.b, inst.c
    s = A @ x - b
    for _ in range(max_iter):
        g = c / mu - A.T @ (1.0 / s)
        H = A.T @ (A / (s * s)[:, None])
        dx = -np.linalg.solve(H, g)
        dec2 = float(-g @ dx)
        if dec2 < stop:
            return x, s
        ds = A @ dx
        alpha = 1.0 if dec2 < 0.25 else 1.0 / (1.0 + math.sqrt(dec2))
        alpha = min(alpha, FRACTION_TO_BOUNDARY * _max_step(s, ds))
        x = x + alpha * dx
        s = A @ x - b
        if np.any(s <= 0):
            raise LeftPositiveOrthant("barrier iterate left the cell")
    raise NotConverged(f"barrier Newton did not converge at mu={mu:.3e}")


def barrier_point(inst: LpInstance, mu: float, x0, tol: Tolerances = DEFAULT_TOLERANCES,
                  max_iter: int = 200) -> PathPoint:
    """Central point at ``mu`` by primal barrier Newton from an interior ``x0``.

    Minimises ``c.x / mu - sum(log s)`` (self-concordant, so damped Newton
    converges globally) and polishes with :func:`newton_correct`. Targets
    below ``mu = 1`` are reached through intermediate ``mu = 10^-k`` so that
    each damped phase starts close to its minimiser.
    """
    x = np.array(x0, dtype=float)
    primal_mu = max(mu, PRIMAL_MU_FLOOR)
    level = 1.0
    while level > primal_mu:
        x, _ = _barrier_newton(inst, level, x, max_iter, stop=1e-4)
        level /= 10.0
    x, s = _barrier_newton(inst, primal_mu, x, max_iter, stop=1e-8)
    p = newton_correct(inst, primal_mu, x, s, primal_mu / s, tol)
    if mu < primal_mu:
        # the primal Hessian degrades like 1/mu^2 near a vertex
        p = continue_to(inst, derivatives(inst, p), mu, tol)
    return p


def _predict(p: PathPoint, mu_new: float):
    d = mu_new - p.mu
    x = p.x + d * p.xdot + 0.5 * d * d * p.xddot
    s = p.s + d * p.sdot + 0.5 * d * d * p.sddot
    y = p.y + d * p.ydot + 0.5 * d * d * p.yddot
    return x, s, y


def step_to(inst: LpInstance, p: PathPoint, mu_new: float, tol: Tolerances = DEFAULT_TOLERANCES,
            G=None) -> PathPoint:
    """Predictor-corrector step from ``p`` (with derivatives) to ``mu_new``."""
    x, s, y = _predict(p, mu_new)
    if np.any(s <= 0) or np.any(y <= 0):
        # first-order fallback then clipping towards p
        x, s, y = p.x, p.s, p.y
        s = np.maximum(s * (mu_new / p.mu) ** 0.5, 1e-300)
        y = mu_new / s
    return derivatives(inst, newton_correct(inst, mu_new, x, s, y, tol), tol, G)


def continue_to(inst: LpInstance, p: PathPoint, mu_new: float, tol: Tolerances = DEFAULT_TOLERANCES,
                max_halvings: int = 30, G=None) -> PathPoint:
    """Reach ``mu_new`` from ``p``, subdividing the ``ln mu`` step when a single step fails."""
    t_target = math.log(mu_new)
    cur = p
    h = t_target - cur.t
    halvings = 0
    while True:
        remaining = t_target - cur.t
        if abs(remaining) <= 1e-15 * max(1.0, abs(t_target)):
            return cur
        step = remaining if abs(remaining) <= abs(h) else math.copysign(abs(h), remaining)
        target = mu_new if step == remaining else cur.mu * math.exp(step)
        try:
            cur = step_to(inst, cur, target, tol, G)
        except (NotConverged, LeftPositiveOrthant, CplabError):
            h = step / 2
            halvings += 1
            if halvings > max_halvings:
                raise StepUnderflow(f"could not continue the path to mu={mu_new:.3e}")


def gauss_vectors(p: PathPoint, n: int):
    """Unit tangents ``(PD, P, D)`` at ``p``; a zero block gives NaNs."""
    v = p.velocity()
    out = []
    for blk in (v, v[: n + len(p.s)], p.ydot):
        nrm = np.linalg.norm(blk)
        out.append(blk / nrm if nrm > 0 else np.full(blk.shape, np.nan))
    return out


def _turn(g1, g2) -> float:
    d = np.linalg.norm(g1 - g2)
    return 2.0 * math.asin(min(1.0, d / 2.0))


@dataclass
class PathTrace:
    eps: SignVector
    points: List[PathPoint]
    mu_lo: float
    mu_hi: float
    truncation_flags: set = field(default_factory=set)
    inst: Optional[LpInstance] = field(default=None, repr=False)  # sign-normalised
    tol: Tolerances = field(default=DEFAULT_TOLERANCES, repr=False)
    max_cond: float = 0.0
    G: Optional[np.ndarray] = field(default=None, repr=False)
    tail_movement: tuple = (math.nan, math.nan)  # Gauss movement over the last decade (lo, hi)

    @property
    def capped(self) -> bool:
        return bool({TailFlag.LO_CAPPED, TailFlag.HI_CAPPED} & self.truncation_flags)

    @property
    def ts(self) -> np.ndarray:
        return np.array([p.t for p in self.points])

    def nearest(self, mu: float) -> PathPoint:
        t = math.log(mu)
        k = int(np.argmin(np.abs(self.ts - t)))
        return self.points[k]

    def evaluate(self, mu: float) -> PathPoint:
        """Path point with derivatives at an arbitrary ``mu``, continued from the nearest sample."""
        return continue_to(self.inst, self.nearest(mu), mu, self.tol, G=self.G)


def trace_path(inst: LpInstance, eps, tol: Tolerances = DEFAULT_TOLERANCES, witness=None,
               turn_max: float = TURN_MAX, t_cap: float = T_CAP, seed_mu: float = 1.0,
               max_step: float = MAX_STEP, center=None) -> PathTrace:
    """Trace the central path of the (bounded, strictly feasible) cell ``eps``.

    Without a ``witness`` the cell is classified first and
    :class:`InfeasibleCell` or :class:`UnboundedCell` is raised when it is not a
    strictly feasible polytope.

    Starting at ``seed_mu`` the tracer walks outward in ``t = ln mu`` in both
    directions. A step is accepted when every Gauss direction (PD, P, D) turns
    by at most ``turn_max``; otherwise it is halved. A direction stops when the
    Gauss curves move less than ``tail_tol`` over the last decade of ``mu``
    (converged) or when ``|t| > t_cap`` (capped).
    """
    eps = as_sign_vector(eps)
    norm = apply_sign(inst, eps)
    if witness is None and center is None:
        status, witness = primal_feasibility(norm, [1] * norm.m, tol)
        if status is not Feasibility.STRICT:
            raise InfeasibleCell(f"cell {eps} has no strictly feasible point")
        if not is_bounded(norm, [1] * norm.m, tol):
            raise UnboundedCell(f"cell {eps} is unbounded")
    if center is None:
        xc, _ = analytic_center(norm, None, witness, tol)
    else:
        xc = np.asarray(center, dtype=float)
    G = null_space_basis(norm.A, norm.rank_tol)
    seed = derivatives(norm, barrier_point(norm, seed_mu, xc, tol), tol, G)
    n = norm.n
    ln10 = math.log(10.0)
    flags = set()
    max_cond = seed.cond_estimate

    branches = []
    moves = {}
    for direction in (+1, -1):
        pts = [seed]
        gs = [gauss_vectors(seed, n)]
        cum = [np.zeros(3)]
        h = 0.1
        while True:
            cur = pts[-1]
            if abs(cur.t) >= t_cap:
                flags.add(TailFlag.HI_CAPPED if direction > 0 else TailFlag.LO_CAPPED)
                break
            step = min(h, max_step)
            t_new = cur.t + direction * step
            if abs(t_new) > t_cap:
                t_new = direction * t_cap
                step = abs(t_new - cur.t)
            try:
                nxt = step_to(norm, cur, math.exp(t_new), tol, G)
                g_new = gauss_vectors(nxt, n)
                turns = np.array([_turn(a, b) for a, b in zip(gs[-1], g_new)])
                ok = np.all(np.isfinite(turns)) and turns.max() <= turn_max
            except (NotConverged, LeftPositiveOrthant):
                ok, turns = False, None
            except CplabError:
                ok, turns = False, None
            if not ok:
                h = step / 2
                if h < MIN_STEP:
                    raise StepUnderflow(f"step underflow at mu={cur.mu:.3e}")
                continue
            pts.append(nxt)
            gs.append(g_new)
            cum.append(cum[-1] + turns)
            max_cond = max(max_cond, nxt.cond_estimate)
            worst = turns.max()
            h = step * min(2.0, 0.8 * turn_max / worst) if worst > 0 else 2.0 * step
            # tail test: Gauss movement over the last full decade
            ts = np.array([p.t for p in pts])
            back = np.flatnonzero(np.abs(ts[-1] - ts) >= ln10)
            if back.size:
                j = back[-1]
                moved = (cum[-1] - cum[j]).max()
                moves[direction] = float(moved)
                if moved < tol.tail_tol:
                    flags.add(TailFlag.HI_CONVERGED if direction > 0 else TailFlag.LO_CONVERGED)
                    break
        branches.append(pts)

    hi, lo = branches
    points = lo[::-1] + hi[1:]
    return PathTrace(eps=eps, points=points, mu_lo=points[0].mu, mu_hi=points[-1].mu,
                     truncation_flags=flags, inst=norm, tol=tol, max_cond=max_cond, G=G,
                     tail_movement=(moves.get(-1, math.nan), moves.get(+1, math.nan)))
