"""Multi-homogeneous Bezout numbers in exact integer arithmetic.

For equations with multi-degrees ``d_i = (d_i1, ..., d_ig)`` over variable
groups of projective dimensions ``k_1, ..., k_g``, the Bezout number is the
coefficient of ``prod zeta_j^{k_j}`` in ``prod_i sum_j d_ij zeta_j``.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb, prod
from typing import List, Sequence, Tuple

import numpy as np

from .core import CplabError
from .curvature import Flavor, as_flavor


class NonSquare(CplabError):
    pass


class BadDims(CplabError):
    pass


@dataclass(frozen=True)
class MultiHomStructure:
    group_sizes: Tuple[int, ...]
    degree_rows: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        k = tuple(int(v) for v in self.group_sizes)
        rows = tuple(tuple(int(d) for d in r) for r in self.degree_rows)
        if any(v < 0 for v in k):
            raise ValueError("group sizes must be non-negative")
        if any(len(r) != len(k) for r in rows):
            raise ValueError("every degree row needs one entry per group")
        if any(d < 0 for r in rows for d in r):
            raise ValueError("degrees must be non-negative integers")
        object.__setattr__(self, "group_sizes", k)
        object.__setattr__(self, "degree_rows", rows)

    @property
    def n_equations(self) -> int:
        return len(self.degree_rows)

    @property
    def is_square(self) -> bool:
        return sum(self.group_sizes) == self.n_equations

    def to_dict(self) -> dict:
        return {"group_sizes": list(self.group_sizes), "degree_rows": [list(r) for r in self.degree_rows]}


@dataclass(frozen=True)
class BezoutResult:
    bezout_number: int
    structure: MultiHomStructure


def bezout_number(structure: MultiHomStructure) -> BezoutResult:
    """Extract the target coefficient from the product of linear forms.

    The product is kept as a dense array of Python integers indexed by
    exponent vectors and truncated at ``(k_1, ..., k_g)``, so there is no
    overflow regardless of size.
    """
    if not structure.is_square:
        raise NonSquare(f"sum of group sizes {sum(structure.group_sizes)} != "
                        f"{structure.n_equations} equations")
    k = structure.group_sizes
    g = len(k)
    shape = tuple(v + 1 for v in k)
    poly = np.zeros(shape, dtype=object)
    poly[(0,) * g] = 1
    zero = np.zeros(shape, dtype=object)
    for row in structure.degree_rows:
        nxt = zero.copy()
        for j, d in enumerate(row):
            if d == 0 or k[j] == 0:
                continue
            # multiply by d * zeta_j: shift along axis j, dropping the overflow slice
            dst = [slice(None)] * g
            src = [slice(None)] * g
            dst[j] = slice(1, None)
            src[j] = slice(None, -1)
            nxt[tuple(dst)] += d * poly[tuple(src)]
        poly = nxt
    return BezoutResult(int(poly[tuple(k)]), structure)


def crossing_structure(m: int, n: int, flavor) -> MultiHomStructure:
    """Bi-homogeneous structure of the eliminated crossing system.

    Groups have sizes ``(m, m - n)``. There are ``m - n`` rows of degree
    ``(1, 0)``, ``m - 1`` rows of degree ``(1, 1)`` and one flavor row:
    ``(1, 2n + 1)`` for PD, ``(0, 2n - 2)`` for P and ``(0, 2n + 1)`` for D.
    """
    _check_dims(m, n)
    last = {Flavor.PD: (1, 2 * n + 1), Flavor.P: (0, 2 * n - 2), Flavor.D: (0, 2 * n + 1)}[as_flavor(flavor)]
    rows: List[Tuple[int, int]] = [(1, 0)] * (m - n) + [(1, 1)] * (m - 1) + [last]
    return MultiHomStructure((m, m - n), tuple(rows))


def crossing_bounds(m: int, n: int) -> Tuple[int, int, int, int]:
    """``(B_PD, B_P, B_D, spurious)`` crossing bounds and the spurious-root count."""
    _check_dims(m, n)
    q = comb(m - 1, n)
    return 2 * n * q, 2 * (n - 1) * q, 2 * n * q, comb(m, n)


def raw_closed_forms(m: int, n: int) -> Tuple[int, int, int]:
    """Closed forms of the raw coefficients for PD, P and D."""
    _check_dims(m, n)
    q = comb(m - 1, n)
    return 2 * n * q + comb(m, n), (2 * n - 2) * q, (2 * n + 1) * q


def classical_bezout(degrees: Sequence[int]) -> int:
    return prod(int(d) for d in degrees)


def _check_dims(m, n):
    if not (isinstance(m, (int, np.integer)) and isinstance(n, (int, np.integer))) or not m > n >= 1:
        raise BadDims(f"need integers m > n >= 1, got m={m}, n={n}")


def bezout_table(m_range: Sequence[int], n_range: Sequence[int]) -> List[dict]:
    """Rows of raw coefficients, spurious count and bounds for every valid ``(m, n)``."""
    out = []
    for m in m_range:
        for n in n_range:
            if not m > n >= 1:
                continue
            raw = {f.value: bezout_number(crossing_structure(m, n, f)).bezout_number
                   for f in (Flavor.PD, Flavor.P, Flavor.D)}
            b_pd, b_p, b_d, spur = crossing_bounds(m, n)
            out.append({
                "m": m, "n": n,
                "raw_pd": raw["PD"], "raw_p": raw["P"], "raw_d": raw["D"],
                "spurious": spur,
                "bound_pd": b_pd, "bound_p": b_p, "bound_d": b_d,
            })
    return out
