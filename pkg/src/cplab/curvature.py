"""Gauss curves of a traced path, their lengths and hyperplane crossings.

For a flavor with velocity block ``cdot`` the Gauss curve is
``gamma = cdot / |cdot|`` and the total curvature is its spherical length,

    K = int |d gamma / dt| dt,   t = ln mu,

with ``|d gamma/dmu| = |cddot - gamma <gamma, cddot>| / |cdot|``. Flavors:

* ``PD``: ``(xdot, sdot, ydot)`` in ``R^(n+2m)``
* ``P``:  ``(xdot, sdot)`` in ``R^(n+m)``
* ``D``:  ``ydot`` in ``R^m``
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .centralpath import (
    PathPoint,
    PathTrace,
    continue_to,
    kkt_residual,
    step_to,
    velocity_residual,
)
from .core import CplabError, LpInstance, SignVector


class ZeroVelocityBlock(CplabError):
    """A flavor's velocity block vanished, so its Gauss direction is undefined."""


class Flavor(enum.Enum):
    PD = "PD"
    P = "P"
    D = "D"


FLAVORS = (Flavor.PD, Flavor.P, Flavor.D)
ZERO_PRODUCT = 1e-14
MAX_DEPTH = 12


def as_flavor(f) -> Flavor:
    return f if isinstance(f, Flavor) else Flavor(str(f).upper())


def flavor_blocks(p: PathPoint, flavor) -> tuple:
    """``(cdot, cddot)`` of one flavor at ``p``."""
    flavor = as_flavor(flavor)
    if flavor is Flavor.PD:
        return p.velocity(), p.acceleration()
    if flavor is Flavor.P:
        return np.concatenate([p.xdot, p.sdot]), np.concatenate([p.xddot, p.sddot])
    return p.ydot, p.yddot


def flavor_dim(flavor, m: int, n: int) -> int:
    return {Flavor.PD: n + 2 * m, Flavor.P: n + m, Flavor.D: m}[as_flavor(flavor)]


# --------------------------------------------------------------------------
# local geometry


def curvature_vector(cdot, cddot) -> np.ndarray:
    """Curvature vector ``(cddot |cdot|^2 - cdot <cdot, cddot>) / |cdot|^4``.

    Valid for any regular parametrisation; it is orthogonal to ``cdot``.

    Raises
    ------
    ZeroVelocityBlock
        If ``cdot`` is zero.
    """
    cdot = np.asarray(cdot, dtype=float)
    cddot = np.asarray(cddot, dtype=float)
    v2 = float(cdot @ cdot)
    if not v2 > 0.0:
        raise ZeroVelocityBlock("curvature of a curve with zero velocity")
    return (cddot * v2 - cdot * float(cdot @ cddot)) / (v2 * v2)


def point_curvature(p: PathPoint) -> Dict[Flavor, np.ndarray]:
    """Curvature vectors of the three flavors at a path point."""
    return {f: curvature_vector(*flavor_blocks(p, f)) for f in FLAVORS}


def gauss_rate(p: PathPoint, flavor) -> float:
    """``|d gamma / dt|`` at ``p`` (``t = ln mu``)."""
    cd, cdd = flavor_blocks(p, flavor)
    nv = np.linalg.norm(cd)
    if not nv > 0.0:
        raise ZeroVelocityBlock(f"{as_flavor(flavor).value} velocity vanishes at mu={p.mu:.3e}")
    g = cd / nv
    perp = cdd - g * float(g @ cdd)
    return p.mu * float(np.linalg.norm(perp)) / nv


def _rates(p: PathPoint) -> np.ndarray:
    return np.array([gauss_rate(p, f) for f in FLAVORS])


# --------------------------------------------------------------------------
# Gauss curve


@dataclass(frozen=True)
class GaussSample:
    mu: float
    gamma_pd: np.ndarray
    gamma_p: np.ndarray
    gamma_d: np.ndarray
    speed_pd: float
    speed_p: float
    speed_d: float

    def gamma(self, flavor) -> np.ndarray:
        return {Flavor.PD: self.gamma_pd, Flavor.P: self.gamma_p, Flavor.D: self.gamma_d}[as_flavor(flavor)]

    def speed(self, flavor) -> float:
        return {Flavor.PD: self.speed_pd, Flavor.P: self.speed_p, Flavor.D: self.speed_d}[as_flavor(flavor)]


def gauss_sample(p: PathPoint) -> GaussSample:
    gam, spd = [], []
    for f in FLAVORS:
        cd, _ = flavor_blocks(p, f)
        nv = float(np.linalg.norm(cd))
        if not nv > 0.0:
            raise ZeroVelocityBlock(f"{f.value} velocity vanishes at mu={p.mu:.3e}")
        gam.append(cd / nv)
        spd.append(nv)
    return GaussSample(p.mu, *gam, *spd)


def gauss_curve(trace: PathTrace) -> List[GaussSample]:
    """Gauss samples at every trace point, in increasing ``mu``."""
    return [gauss_sample(p) for p in trace.points]


def gauss_matrix(samples: Sequence[GaussSample], flavor) -> np.ndarray:
    """Stack the ``flavor`` directions of ``samples`` into a ``(k, d)`` array."""
    return np.array([s.gamma(flavor) for s in samples])


def polyline_length(gammas) -> float:
    """Sum of geodesic distances between consecutive unit vectors."""
    G = np.asarray(gammas, dtype=float)
    if len(G) < 2:
        return 0.0
    chord = np.linalg.norm(np.diff(G, axis=0), axis=1)
    return float(np.sum(2.0 * np.arcsin(np.minimum(1.0, chord / 2.0))))


# --------------------------------------------------------------------------
# total curvature


@dataclass
class CurvatureResult:
    eps: SignVector
    K_pd: float
    K_p: float
    K_d: float
    quad_error_estimate: float
    n_samples: int
    excluded: bool = False
    reason: Optional[str] = None
    panel_t: Optional[np.ndarray] = field(default=None, repr=False)  # (P, 2) panel ends in ln mu
    panel_K: Optional[np.ndarray] = field(default=None, repr=False)  # (P, 3) PD, P, D contributions

    def K(self, flavor) -> float:
        return {Flavor.PD: self.K_pd, Flavor.P: self.K_p, Flavor.D: self.K_d}[as_flavor(flavor)]

    def split(self, t0: float) -> tuple:
        """Curvature over panels left and right of ``ln mu = t0`` (split at the nearest panel end)."""
        left = self.panel_t[:, 1] <= t0 + 1e-12
        return self.panel_K[left].sum(axis=0), self.panel_K[~left].sum(axis=0)

    def to_dict(self) -> dict:
        return {
            "eps": str(self.eps),
            "K_pd": self.K_pd,
            "K_p": self.K_p,
            "K_d": self.K_d,
            "quad_error_estimate": self.quad_error_estimate,
            "n_samples": self.n_samples,
            "excluded": self.excluded,
            "reason": self.reason,
        }


class _Quad:
    """Adaptive Simpson on one trace with a Richardson error estimate per panel."""

    def __init__(self, trace: PathTrace):
        self.trace = trace
        self.evals = 0

    def point(self, base: PathPoint, t: float) -> PathPoint:
        self.evals += 1
        mu = math.exp(t)
        tr = self.trace
        try:
            return step_to(tr.inst, base, mu, tr.tol, tr.G)
        except CplabError:
            return continue_to(tr.inst, base, mu, tr.tol, G=tr.G)

    def panel(self, a, b, pa, pm, fa, fm, fb, tol, depth):
        """Integrate on ``[a, b]`` given the ends and the midpoint; returns ``(value, err)``."""
        h = b - a
        c = 0.5 * (a + b)
        pl = self.point(pa, 0.5 * (a + c))
        pr = self.point(pm, 0.5 * (c + b))
        fl, fr = _rates(pl), _rates(pr)
        s1 = h / 6.0 * (fa + 4.0 * fm + fb)
        s2 = h / 12.0 * (fa + 4.0 * fl + 2.0 * fm + 4.0 * fr + fb)
        err = np.abs(s2 - s1) / 15.0
        if err.max() <= tol or depth >= MAX_DEPTH:
            return s2 + (s2 - s1) / 15.0, err
        v1, e1 = self.panel(a, c, pa, pl, fa, fl, fm, tol / 2.0, depth + 1)
        v2, e2 = self.panel(c, b, pm, pr, fm, fr, fb, tol / 2.0, depth + 1)
        return v1 + v2, e1 + e2


def total_curvature(trace: PathTrace, quad_tol: Optional[float] = None) -> CurvatureResult:
    """Integrate ``|d gamma/dt|`` over the traced ``ln mu`` range for all flavors.

    Each interval between consecutive trace points is a panel, refined by
    adaptive Simpson until the Richardson estimate ``|S_2 - S_1| / 15`` is below
    its share of ``quad_tol`` (proportional to the panel width). The returned
    value is the extrapolated ``S_2 + (S_2 - S_1) / 15``.
    """
    tol = trace.tol.quad_tol if quad_tol is None else float(quad_tol)
    pts = trace.points
    ts = trace.ts
    span = max(ts[-1] - ts[0], 1e-300)
    q = _Quad(trace)
    f = [_rates(p) for p in pts]
    vals = np.zeros((len(pts) - 1, 3))
    errs = np.zeros((len(pts) - 1, 3))
    for k in range(len(pts) - 1):
        a, b = ts[k], ts[k + 1]
        pm = q.point(pts[k], 0.5 * (a + b))
        vals[k], errs[k] = q.panel(a, b, pts[k], pm, f[k], _rates(pm), f[k + 1],
                                   tol * (b - a) / span, 0)
    K = vals.sum(axis=0)
    return CurvatureResult(
        eps=trace.eps,
        K_pd=float(K[0]),
        K_p=float(K[1]),
        K_d=float(K[2]),
        quad_error_estimate=float(errs.sum(axis=0).max()),
        n_samples=len(pts) + q.evals,
        excluded=trace.capped,
        reason="tail capped" if trace.capped else None,
        panel_t=np.column_stack([ts[:-1], ts[1:]]),
        panel_K=vals,
    )


# --------------------------------------------------------------------------
# Crofton estimate and crossings


@dataclass(frozen=True)
class CroftonEstimate:
    flavor: Flavor
    n_hyperplanes: int
    mean_crossings: float
    length_estimate: float
    std_error: float

    def to_dict(self) -> dict:
        return {
            "flavor": self.flavor.value,
            "n_hyperplanes": self.n_hyperplanes,
            "mean_crossings": self.mean_crossings,
            "length_estimate": self.length_estimate,
            "std_error": self.std_error,
        }


def sign_changes(gammas, H) -> np.ndarray:
    """Number of sign changes of ``<h, gamma_k>`` along the polyline, for each row ``h`` of ``H``."""
    P = np.asarray(H) @ np.asarray(gammas).T
    return np.count_nonzero(np.signbit(P[:, 1:]) != np.signbit(P[:, :-1]), axis=1)


def random_normals(rng: np.random.Generator, n_hyperplanes: int, dim: int,
                   curves: Iterable = ()) -> np.ndarray:
    """Uniform unit normals in ``R^dim``; rows nearly orthogonal to a sample of ``curves`` are redrawn."""
    curves = [np.asarray(c) for c in curves]
    H = rng.standard_normal((n_hyperplanes, dim))
    H /= np.linalg.norm(H, axis=1)[:, None]
    for _ in range(100):
        bad = np.zeros(n_hyperplanes, dtype=bool)
        for C in curves:
            bad |= np.any(np.abs(H @ C.T) < ZERO_PRODUCT, axis=1)
        if not bad.any():
            return H
        R = rng.standard_normal((int(bad.sum()), dim))
        H[bad] = R / np.linalg.norm(R, axis=1)[:, None]
    raise CplabError("could not draw hyperplanes transversal to the sampled curves")


def crofton_length(gauss_samples, flavor, n_hyperplanes: int, rng: np.random.Generator) -> CroftonEstimate:
    """Crofton estimate ``pi * E[#(H ∩ gamma)]`` of the Gauss-curve length.

    ``gauss_samples`` is a list of :class:`GaussSample` or a ``(k, d)`` array of
    unit vectors. The reported standard error is never below ``pi / N``, the
    resolution of a single crossing in ``N`` draws.
    """
    flavor = as_flavor(flavor)
    if len(gauss_samples) and isinstance(gauss_samples[0], GaussSample):
        G = gauss_matrix(gauss_samples, flavor)
    else:
        G = np.asarray(gauss_samples, dtype=float)
    H = random_normals(rng, n_hyperplanes, G.shape[1], [G])
    counts = sign_changes(G, H)
    mean = float(counts.mean())
    sd = float(counts.std(ddof=1)) if n_hyperplanes > 1 else 0.0
    se = max(math.pi * sd / math.sqrt(n_hyperplanes), math.pi / n_hyperplanes)
    return CroftonEstimate(flavor, n_hyperplanes, mean, math.pi * mean, se)


@dataclass(frozen=True)
class HyperplaneSample:
    """Hyperplane ``u.xdot + v.sdot + w.ydot = 0`` with unit normal ``(u, v, w)``."""

    u: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        nrm = math.sqrt(float(self.u @ self.u + self.v @ self.v + self.w @ self.w))
        if not nrm > 0.0:
            raise ValueError("hyperplane normal must be non-zero")
        for name in ("u", "v", "w"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float) / nrm)

    @classmethod
    def from_normal(cls, h, flavor, m: int, n: int) -> "HyperplaneSample":
        """Embed a flavor-space normal into ``(u, v, w)``."""
        h = np.asarray(h, dtype=float)
        flavor = as_flavor(flavor)
        z_n, z_m = np.zeros(n), np.zeros(m)
        if flavor is Flavor.PD:
            return cls(h[:n], h[n:n + m], h[n + m:])
        if flavor is Flavor.P:
            return cls(h[:n], h[n:], z_m)
        return cls(z_n, z_m, h)

    def vector(self, flavor) -> np.ndarray:
        flavor = as_flavor(flavor)
        if flavor is Flavor.PD:
            return np.concatenate([self.u, self.v, self.w])
        if flavor is Flavor.P:
            return np.concatenate([self.u, self.v])
        return self.w.copy()

    def __neg__(self):
        return HyperplaneSample(-self.u, -self.v, -self.w)


def max_crossings(curves, flavor, h) -> int:
    """Crossings of ``h`` summed over the Gauss curves of all cells of one instance.

    ``curves`` holds one entry per cell: a :class:`PathTrace`, a list of
    :class:`GaussSample` or a ``(k, d)`` array for the flavor.
    """
    flavor = as_flavor(flavor)
    hv = h.vector(flavor) if isinstance(h, HyperplaneSample) else np.asarray(h, dtype=float)
    return int(crossing_counts(curves, flavor, hv[None, :])[0])


def _as_matrix(curve, flavor):
    if isinstance(curve, PathTrace):
        return gauss_matrix(gauss_curve(curve), flavor)
    if len(curve) and isinstance(curve[0], GaussSample):
        return gauss_matrix(curve, flavor)
    return np.asarray(curve, dtype=float)


def crossing_counts(curves, flavor, H) -> np.ndarray:
    """Summed crossings over cells for each row of ``H``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    total = np.zeros(len(H), dtype=np.int64)
    for c in curves:
        total += sign_changes(_as_matrix(c, flavor), H)
    return total


# --------------------------------------------------------------------------
# transversality


def refine_crossing(trace: PathTrace, flavor, h, k: int, xtol: float = 1e-13) -> PathPoint:
    """Locate the zero of ``<h, gamma(mu)>`` between trace points ``k`` and ``k+1``.

    Uses Brent's bracketing method in ``t = ln mu``; path points inside the
    bracket are obtained by continuation from point ``k``.
    """
    flavor = as_flavor(flavor)
    hv = h.vector(flavor) if isinstance(h, HyperplaneSample) else np.asarray(h, dtype=float)
    pa, pb = trace.points[k], trace.points[k + 1]
    cache = {}

    def point(t):
        if t not in cache:
            if t == pa.t:
                cache[t] = pa
            elif t == pb.t:
                cache[t] = pb
            else:
                cache[t] = continue_to(trace.inst, pa, math.exp(t), trace.tol, G=trace.G)
        return cache[t]

    def fn(t):
        cd, _ = flavor_blocks(point(t), flavor)
        return float(hv @ cd) / float(np.linalg.norm(cd))

    fa, fb = fn(pa.t), fn(pb.t)
    if fa == 0.0:
        return pa
    if fb == 0.0:
        return pb
    if np.sign(fa) == np.sign(fb):
        raise ValueError(f"no sign change of <h, gamma> between points {k} and {k + 1}")
    t = brentq(fn, pa.t, pb.t, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
    return point(t)


def phi_jacobian(inst: LpInstance, p: PathPoint, h: HyperplaneSample) -> np.ndarray:
    """Jacobian of the crossing system in ``(x, s, y, xdot, sdot, ydot, mu)``."""
    A = inst.A
    m, n = A.shape
    N = 2 * (n + 2 * m) + 1
    J = np.zeros((N, N))
    ix, is_, iy = slice(0, n), slice(n, n + m), slice(n + m, n + 2 * m)
    o = n + 2 * m
    jx, js, jy = slice(o, o + n), slice(o + n, o + n + m), slice(o + n + m, o + n + 2 * m)
    jmu = N - 1
    r = 0
    J[r:r + m, ix] = A
    J[r:r + m, is_] = -np.eye(m)
    r += m
    J[r:r + n, iy] = A.T
    r += n
    J[r:r + m, is_] = np.diag(p.y)
    J[r:r + m, iy] = np.diag(p.s)
    J[r:r + m, jmu] = -1.0
    r += m
    J[r:r + m, jx] = A
    J[r:r + m, js] = -np.eye(m)
    r += m
    J[r:r + n, jy] = A.T
    r += n
    J[r:r + m, is_] = np.diag(p.ydot)
    J[r:r + m, iy] = np.diag(p.sdot)
    J[r:r + m, js] = np.diag(p.y)
    J[r:r + m, jy] = np.diag(p.s)
    r += m
    J[r, jx] = h.u
    J[r, js] = h.v
    J[r, jy] = h.w
    return J


def _equilibrate(J, sweeps=6):
    for _ in range(sweeps):
        r = np.sqrt(np.abs(J).max(axis=1))
        c = np.sqrt(np.abs(J).max(axis=0))
        J = J / r[:, None] / c[None, :]
    return J


def transversality_residual(inst: LpInstance, p: PathPoint, h: HyperplaneSample) -> tuple:
    """Residual of the crossing system at ``p`` and the smallest singular value of its Jacobian.

    The residual is the largest of the scaled path residual, the scaled
    velocity residual and ``|<(u, v, w), cdot>| / |cdot|``. The singular value is
    taken after row and column equilibration, so it measures rank rather than
    the units of ``mu``.
    """
    cd = p.velocity()
    hv = np.concatenate([h.u, h.v, h.w])
    # the hyperplane only sees the blocks where the normal lives
    mask = np.concatenate([np.full(inst.n, np.any(h.u != 0) or np.any(h.v != 0)),
                           np.full(inst.m, np.any(h.u != 0) or np.any(h.v != 0)),
                           np.full(inst.m, np.any(h.w != 0))])
    nv = float(np.linalg.norm(cd[mask]))
    r_h = abs(float(hv @ cd)) / nv if nv > 0 else math.inf
    res = max(kkt_residual(inst, p.mu, p.x, p.s, p.y), velocity_residual(inst, p), r_h)
    sv = np.linalg.svd(_equilibrate(phi_jacobian(inst, p, h)), compute_uv=False)
    return float(res), float(sv[-1])
