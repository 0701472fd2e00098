"""Problem data, dense linear algebra and seeded sampling.

Everything in here is immutable once built and free of global state: tolerances
are carried around in a :class:`Tolerances` value and passed explicitly.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import lapack, lu_factor, lu_solve


class CplabError(Exception):
    """Base class for all errors raised by this package."""


class SingularMatrix(CplabError):
    pass


class RankDeficient(CplabError):
    pass


class DimensionMismatch(CplabError, ValueError):
    pass


class InvalidInstance(CplabError, ValueError):
    pass


class ExhaustedRetries(CplabError):
    pass


class IllConditioned(UserWarning):
    """Warning category emitted when a condition estimate exceeds ``cond_cap``."""


@dataclass(frozen=True)
class Tolerances:
    """Numeric tolerances shared by every stage of the pipeline.

    Attributes
    ----------
    newton_tol : float
        Scaled residual accepted for a central-path point.
    rank_tol : float
        Relative singular value threshold for the rank test on ``A``.
    feas_margin : float
        Strictness margin separating open cells from empty/degenerate ones.
    quad_tol : float
        Absolute error target of the curvature quadrature, per cell.
    tail_tol : float
        Gauss-curve movement per decade of ``mu`` below which a tail counts as converged.
    cond_cap : float
        Condition estimates above this flag a cell as ill-conditioned.
    solve_tol : float
        Relative residual accepted from a dense linear solve.
    """

    newton_tol: float = 1e-10
    rank_tol: float = 1e-10
    feas_margin: float = 1e-7
    quad_tol: float = 1e-6
    tail_tol: float = 1e-7
    cond_cap: float = 1e12
    solve_tol: float = 1e-10

    def __post_init__(self):
        for name, value in self.as_dict().items():
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"tolerance {name} must be positive and finite, got {value!r}")
        if not self.newton_tol < self.feas_margin:
            raise ValueError("newton_tol must be smaller than feas_margin")

    def as_dict(self) -> dict:
        return {
            "newton_tol": self.newton_tol,
            "rank_tol": self.rank_tol,
            "feas_margin": self.feas_margin,
            "quad_tol": self.quad_tol,
            "tail_tol": self.tail_tol,
            "cond_cap": self.cond_cap,
            "solve_tol": self.solve_tol,
        }


DEFAULT_TOLERANCES = Tolerances()


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise DimensionMismatch(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInstance(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LpInstance:
    """Linear program data ``min c.x  s.t.  A x - s = b, s >= 0`` (and its dual).

    The arrays are copied and made read-only on construction. Validation follows
    the standing assumptions: ``m > n >= 1``, ``A`` of full column rank, no zero
    row in ``A`` and ``c != 0``.
    """

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    seed: Optional[int] = None
    rank_tol: float = field(default=DEFAULT_TOLERANCES.rank_tol, repr=False)

    def __post_init__(self):
        A = _frozen(self.A, 2, "A")
        b = _frozen(self.b, 1, "b")
        c = _frozen(self.c, 1, "c")
        m, n = A.shape
        if b.shape != (m,) or c.shape != (n,):
            raise DimensionMismatch(f"A is {m}x{n} but b has shape {b.shape} and c has shape {c.shape}")
        if not m > n >= 1:
            raise InvalidInstance(f"need m > n >= 1, got m={m}, n={n}")
        sv = np.linalg.svd(A, compute_uv=False)
        if not sv[-1] > self.rank_tol * sv[0]:
            raise RankDeficient(f"A is numerically rank deficient (sigma_min/sigma_max = {sv[-1] / sv[0]:.3e})")
        if np.any(np.all(A == 0.0, axis=1)):
            raise InvalidInstance("A has an identically zero row")
        if not np.linalg.norm(c) > 0.0:
            raise InvalidInstance("c must be non-zero")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "_norm2", float(sv[0]))
        if self.seed is not None:
            object.__setattr__(self, "seed", int(self.seed))

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def norm2(self) -> float:
        """Spectral norm of ``A``."""
        return self._norm2

    def __eq__(self, other):
        if not isinstance(other, LpInstance):
            return NotImplemented
        return (
            self.seed == other.seed
            and np.array_equal(self.A, other.A)
            and np.array_equal(self.b, other.b)
            and np.array_equal(self.c, other.c)
        )

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "c": self.c.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LpInstance":
        inst = cls(np.asarray(d["A"], dtype=float), d["b"], d["c"], seed=d.get("seed"))
        if "m" in d and "n" in d and (inst.m, inst.n) != (d["m"], d["n"]):
            raise DimensionMismatch(f"declared m, n = {d['m']}, {d['n']} do not match A of shape {inst.A.shape}")
        return inst


@dataclass(frozen=True)
class SignVector:
    """A sign condition ``eps`` in ``{+1, -1}^m``."""

    eps: tuple

    def __post_init__(self):
        eps = tuple(int(e) for e in self.eps)
        if len(eps) == 0 or any(e not in (1, -1) for e in eps):
            raise ValueError(f"sign vector entries must be +1 or -1, got {self.eps!r}")
        object.__setattr__(self, "eps", eps)

    def __len__(self):
        return len(self.eps)

    def __iter__(self):
        return iter(self.eps)

    def __str__(self):
        return "".join("+" if e > 0 else "-" for e in self.eps)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.eps, dtype=float)

    def __mul__(self, other: "SignVector") -> "SignVector":
        if len(other) != len(self):
            raise DimensionMismatch("sign vectors of different length")
        return SignVector(tuple(a * b for a, b in zip(self.eps, other.eps)))

    @classmethod
    def parse(cls, text: str) -> "SignVector":
        """Parse ``"+-+"`` or ``"1,-1,1"``."""
        text = text.strip()
        if text and set(text) <= {"+", "-"}:
            return cls(tuple(1 if ch == "+" else -1 for ch in text))
        return cls(tuple(int(tok) for tok in text.split(",")))

    @classmethod
    def from_index(cls, k: int, m: int) -> "SignVector":
        """Binary counting order: bit ``i`` of ``k`` set means ``eps_i = -1``."""
        return cls(tuple(-1 if (k >> i) & 1 else 1 for i in range(m)))

    def index(self) -> int:
        return sum(1 << i for i, e in enumerate(self.eps) if e < 0)


def condition_number(M: np.ndarray) -> float:
    """1-norm condition estimate (LAPACK ``dgecon``) of a square matrix."""
    M = np.asarray(M, dtype=float)
    lu, piv = lu_factor(M, check_finite=False)
    return _cond_from_lu(lu, np.abs(M).sum(axis=0).max())


def _cond_from_lu(lu: np.ndarray, anorm: float) -> float:
    if np.any(np.diag(lu) == 0.0):
        return math.inf
    rcond, info = lapack.dgecon(lu, anorm, norm="1")
    return math.inf if rcond == 0.0 else 1.0 / rcond


class LUSolver:
    """LU factorization with partial pivoting, reusable for several right-hand sides."""

    def __init__(self, M: np.ndarray, cond_cap: float = DEFAULT_TOLERANCES.cond_cap):
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DimensionMismatch(f"matrix must be square, got shape {M.shape}")
        if not np.all(np.isfinite(M)):
            raise SingularMatrix("matrix has non-finite entries")
        self.M = M
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            self._lu = lu_factor(M, check_finite=False)
        diag = np.abs(np.diag(self._lu[0]))
        scale = np.abs(M).max() if M.size else 0.0
        if M.size == 0 or scale == 0.0 or diag.min() <= np.finfo(float).eps * scale * 1e-3:
            raise SingularMatrix("no usable pivot found during LU factorization")
        self.cond = _cond_from_lu(self._lu[0], np.abs(M).sum(axis=0).max())
        if self.cond > cond_cap:
            warnings.warn(f"condition estimate {self.cond:.3e} exceeds cap {cond_cap:.1e}", IllConditioned, stacklevel=2)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return lu_solve(self._lu, np.asarray(rhs, dtype=float), check_finite=False)


def linear_solve(M, rhs, cond_cap: float = DEFAULT_TOLERANCES.cond_cap):
    """Solve ``M z = rhs`` by LU with partial pivoting.

    Returns
    -------
    z : ndarray
        Solution, same trailing shape as ``rhs``.
    cond : float
        1-norm condition estimate of ``M``.

    Raises
    ------
    SingularMatrix
        If no usable pivot exists. An :class:`IllConditioned` warning is issued
        when the condition estimate exceeds ``cond_cap``.
    """
    solver = LUSolver(M, cond_cap=cond_cap)
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != solver.M.shape[0]:
        raise DimensionMismatch(f"rhs has {rhs.shape[0]} rows, matrix has {solver.M.shape[0]}")
    return solver.solve(rhs), solver.cond


def _svd_checked(A, rank_tol):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise DimensionMismatch("A must be a matrix")
    m, n = A.shape
    if m < n:
        raise RankDeficient(f"{m}x{n} matrix cannot have full column rank")
    U, sv, Vt = np.linalg.svd(A, full_matrices=True)
    if n and not sv[-1] > rank_tol * sv[0]:
        raise RankDeficient(f"sigma_min/sigma_max = {sv[-1] / sv[0]:.3e} below rank_tol")
    return U, sv, Vt


def null_space_basis(A, rank_tol: float = DEFAULT_TOLERANCES.rank_tol) -> np.ndarray:
    """Orthonormal basis ``G`` (m x (m-n)) of ``ker A^T``.

    Column signs are fixed so the entry of largest magnitude in each column is
    positive, which makes the output deterministic for a given input.
    """
    U, _, _ = _svd_checked(A, rank_tol)
    n = np.shape(A)[1]
    G = U[:, n:].copy()
    for j in range(G.shape[1]):
        k = np.argmax(np.abs(G[:, j]))
        if G[k, j] < 0:
            G[:, j] = -G[:, j]
    return G


def particular_solution(A, c, rank_tol: float = DEFAULT_TOLERANCES.rank_tol) -> np.ndarray:
    """Minimum-norm ``f`` with ``A^T f = c``."""
    U, sv, Vt = _svd_checked(A, rank_tol)
    n = np.shape(A)[1]
    c = np.asarray(c, dtype=float)
    if c.shape != (n,):
        raise DimensionMismatch(f"c must have length {n}")
    return U[:, :n] @ ((Vt @ c) / sv)


def make_rng(seed: int, *stream) -> np.random.Generator:
    """Philox (counter-based) generator keyed by ``seed`` and an optional stream path."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(s) for s in stream]])
    return np.random.Generator(np.random.Philox(ss))


def sample_instance(m: int, n: int, rng_seed: int, index: int = 0, max_retries: int = 100,
                    rank_tol: float = DEFAULT_TOLERANCES.rank_tol) -> LpInstance:
    """Draw ``A, b, c`` with i.i.d. standard Gaussian entries.

    The draw for ``(rng_seed, index)`` is deterministic. Draws that violate an
    instance invariant are discarded wholesale and redrawn from the same stream.
    """
    if not m > n >= 1:
        raise InvalidInstance(f"need m > n >= 1, got m={m}, n={n}")
    rng = make_rng(rng_seed, index)
    for _ in range(max_retries):
        A = rng.standard_normal((m, n))
        b = rng.standard_normal(m)
        c = rng.standard_normal(n)
        try:
            return LpInstance(A, b, c, seed=rng_seed, rank_tol=rank_tol)
        except (RankDeficient, InvalidInstance):
            continue
    raise ExhaustedRetries(f"no valid instance after {max_retries} draws")


def as_sign_vector(eps: Sequence[int] | SignVector | str) -> SignVector:
    if isinstance(eps, SignVector):
        return eps
    if isinstance(eps, str):
        return SignVector.parse(eps)
    return SignVector(tuple(eps))
