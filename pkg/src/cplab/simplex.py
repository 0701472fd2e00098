"""Dense tableau simplex with Bland's rule.

Only the form ``max obj.z  s.t.  G z <= h, z >= 0`` with ``h >= 0`` is handled,
so the all-slack basis is an initial vertex and no phase-one pass is needed.
The problems solved here have a handful of rows, which keeps a dense tableau
cheap and Bland's rule makes the pivot sequence deterministic and cycle-free.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CplabError


class LpCycleGuard(CplabError):
    """Pivot budget exhausted. Bland's rule rules out cycling, so this signals a bug."""


class LpUnbounded(CplabError):
    pass


@dataclass
class SimplexResult:
    z: np.ndarray
    value: float
    basis: np.ndarray  # indices into [structural | slack] columns
    n_pivots: int


def simplex_max(G, h, obj, pivot_tol: float = 1e-11, max_pivots: int | None = None,
                polish: bool = True) -> SimplexResult:
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    obj = np.asarray(obj, dtype=float)
    p, q = G.shape
    if np.any(h < 0):
        raise ValueError("right-hand side must be non-negative")
    T = np.zeros((p + 1, q + p + 1))
    T[:p, :q] = G
    T[:p, q:q + p] = np.eye(p)
    T[:p, -1] = h
    T[p, :q] = -obj
    basis = np.arange(q, q + p)
    scale = max(1.0, np.abs(G).max(initial=0.0), np.abs(obj).max(initial=0.0))
    if max_pivots is None:
        max_pivots = 50 * (p + q) + 1000

    pivots = 0
    while True:
        reduced = T[p, :-1]
        candidates = np.flatnonzero(reduced < -pivot_tol * scale)
        if candidates.size == 0:
            break
        j = candidates[0]
        col = T[:p, j]
        rows = np.flatnonzero(col > pivot_tol * scale)
        if rows.size == 0:
            raise LpUnbounded(f"objective unbounded along column {j}")
        ratios = T[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
        i = ties[np.argmin(basis[ties])]
        pivot_row = T[i] / T[i, j]
        T -= np.outer(T[:, j], pivot_row)
        T[i] = pivot_row
        basis[i] = j
        pivots += 1
        if pivots > max_pivots:
            raise LpCycleGuard(f"simplex exceeded {max_pivots} pivots")

    z = np.zeros(q + p)
    z[basis] = T[:p, -1]
    z = np.maximum(z, 0.0)
    if polish:
        z = _polish(G, h, basis, z, q)
    zs = z[:q]
    return SimplexResult(z=zs, value=float(obj @ zs), basis=basis.copy(), n_pivots=pivots)


def _polish(G, h, basis, z, q):
    """Recompute the final vertex from the original data.

    Each non-basic column pins one equation: a structural variable at zero or a
    constraint row at equality. Solving those ``q`` equations directly removes
    the rounding accumulated in the tableau.
    """
    p = G.shape[0]
    nonbasic = np.setdiff1d(np.arange(q + p), basis)
    rows = []
    rhs = []
    for k in nonbasic:
        if k < q:
            e = np.zeros(q)
            e[k] = 1.0
            rows.append(e)
            rhs.append(0.0)
        else:
            rows.append(G[k - q])
            rhs.append(h[k - q])
    if len(rows) != q:
        return z
    M = np.array(rows)
    try:
        zs = np.linalg.solve(M, np.array(rhs))
    except np.linalg.LinAlgError:
        return z
    if not np.all(np.isfinite(zs)):
        return z
    # Keep the tableau answer if the polished point is visibly worse (degenerate bases).
    slack = h - G @ zs
    tol = 1e-9 * max(1.0, np.abs(h).max(initial=0.0))
    if np.any(zs < -tol) or np.any(slack < -tol):
        return z
    out = z.copy()
    out[:q] = np.maximum(zs, 0.0)
    out[q:] = np.maximum(slack, 0.0)
    return out
