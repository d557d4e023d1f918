"""Symmetric m-lifts of vectors and the matrices acting on them.

The m-lift of ``x`` in R^n is the vector of weighted degree-m monomials

    x^[m]_alpha = sqrt(alpha!) * x_1^alpha_1 * ... * x_n^alpha_n,

where ``alpha!`` is the multinomial coefficient m! / (alpha_1! ... alpha_n!)
and the exponents are listed lexicographically with the power of the first
coordinate descending.  For n = 2 this gives

    x^[2] = [x1^2, sqrt(2) x1 x2, x2^2].

Two matrices are associated with a square ``A``:

* the induced matrix ``A^[m]`` with ``(A x)^[m] = A^[m] x^[m]``;
* the infinitesimal lift ``A_[m]`` with ``expm(A t)^[m] = expm(A_[m] t)``.

Both are evaluated from coefficient tables that are built once per
``(n, m)`` with exact integer arithmetic.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "DimensionError",
    "MultiIndexBasis",
    "LiftedMatrix",
    "multi_index_basis",
    "lift_vector",
    "induced_matrix",
    "infinitesimal_lift",
    "lift_matrix",
    "lifted_dimension",
]


class DimensionError(ValueError):
    """Raised for invalid dimensions or degrees."""


def _compositions(total: int, parts: int):
    """Yield exponent tuples of length ``parts`` summing to ``total``.

    Order is lexicographic with the first entry descending.
    """
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _multinomial(alpha: tuple[int, ...]) -> int:
    out = math.factorial(sum(alpha))
    for a in alpha:
        out //= math.factorial(a)
    return out


def lifted_dimension(n: int, m: int) -> int:
    """Return ``binomial(n + m - 1, m)``."""
    return math.comb(n + m - 1, m)


@dataclass(frozen=True)
class MultiIndexBasis:
    """Ordered exponent vectors indexing the coordinates of an m-lift.

    Attributes
    ----------
    n : int
        State dimension.
    m : int
        Lift degree.
    indices : tuple of tuple of int
        Exponent vectors in lexicographic order, ``(m, 0, ..., 0)`` first.
    position : dict
        Reverse map from exponent vector to its ordinal.
    """

    n: int
    m: int
    indices: tuple[tuple[int, ...], ...]
    position: dict[tuple[int, ...], int] = field(repr=False, compare=False)
    weights: tuple[int, ...] = field(repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def exponents(self) -> NDArray[np.int64]:
        """The indices as an ``(n_m, n)`` integer array."""
        return np.array(self.indices, dtype=np.int64).reshape(self.size, self.n)

    def monomial_label(self, k: int, var: str = "x") -> str:
        """Human-readable monomial for coordinate ``k``, e.g. ``x1^2*x3``."""
        parts = []
        for i, a in enumerate(self.indices[k], start=1):
            if a == 1:
                parts.append(f"{var}{i}")
            elif a > 1:
                parts.append(f"{var}{i}^{a}")
        return "*".join(parts)


@lru_cache(maxsize=None)
def multi_index_basis(n: int, m: int) -> MultiIndexBasis:
    """Build the lexicographic exponent basis for degree-``m`` lifts of R^n.

    Raises
    ------
    DimensionError
        If ``n < 1`` or ``m < 1``.
    """
    if int(n) != n or int(m) != m:
        raise DimensionError(f"n and m must be integers, got n={n!r}, m={m!r}")
    n, m = int(n), int(m)
    if n < 1:
        raise DimensionError(f"state dimension must be >= 1, got {n}")
    if m < 1:
        raise DimensionError(f"lift degree must be >= 1, got {m}")
    indices = tuple(_compositions(m, n))
    position = {alpha: k for k, alpha in enumerate(indices)}
    weights = tuple(_multinomial(alpha) for alpha in indices)
    return MultiIndexBasis(n=n, m=m, indices=indices, position=position, weights=weights)


@dataclass(frozen=True)
class LiftedMatrix:
    """A lifted matrix together with its basis and kind."""

    basis: MultiIndexBasis
    entries: NDArray[np.float64]
    kind: Literal["induced", "infinitesimal"]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


def lift_vector(x: ArrayLike, m: int) -> NDArray[np.float64]:
    """Return the m-lift of ``x``.

    ``x`` may be a single vector of shape ``(n,)`` or a stack ``(..., n)``;
    the lift is taken along the last axis.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        raise DimensionError("lift_vector expects at least a 1-d array")
    basis = multi_index_basis(x.shape[-1], m)
    expo = basis.exponents
    scale = np.sqrt(np.array(basis.weights, dtype=np.float64))
    monos = np.prod(x[..., None, :] ** expo, axis=-1)
    return scale * monos


@lru_cache(maxsize=None)
def _induced_table(n: int, m: int) -> tuple[NDArray[np.int64], NDArray[np.float64]]:
    """Coefficient table for the induced matrix.

    Row ``alpha`` of ``A^[m]`` comes from expanding prod_i ((A x)_i)^alpha_i.
    Each term of that expansion is indexed by a nonnegative integer matrix
    ``M`` whose row sums are ``alpha``: it contributes the monomial
    prod a_ij^M_ij with integer multiplicity prod alpha_i! / prod M_ij!,
    and lands in column ``beta`` = column sums of ``M``.

    Returns the stacked exponent matrices ``(T, n, n)`` and a ``(T, n_m^2)``
    matrix mapping term values to the flattened lifted matrix.
    """
    basis = multi_index_basis(n, m)
    nm = basis.size
    exps = []
    targets = []
    for row, alpha in enumerate(basis.indices):
        row_choices = [list(_compositions(a, n)) for a in alpha]
        fact_alpha = math.prod(math.factorial(a) for a in alpha)
        for rows in itertools.product(*row_choices):
            M = np.array(rows, dtype=np.int64)
            beta = tuple(int(v) for v in M.sum(axis=0))
            col = basis.position[beta]
            count = fact_alpha
            for v in M.ravel():
                count //= math.factorial(int(v))
            scale = math.sqrt(basis.weights[row] / basis.weights[col])
            exps.append(M)
            targets.append((row * nm + col, count * scale))
    exps_arr = np.array(exps, dtype=np.int64)
    scatter = np.zeros((len(targets), nm * nm))
    for t, (flat, coef) in enumerate(targets):
        scatter[t, flat] = coef
    return exps_arr, scatter


@lru_cache(maxsize=None)
def _infinitesimal_table(n: int, m: int) -> NDArray[np.float64]:
    """Linear map from ``vec(A)`` (row-major) to ``vec(A_[m])``."""
    basis = multi_index_basis(n, m)
    nm = basis.size
    table = np.zeros((n * n, nm * nm))
    for row, alpha in enumerate(basis.indices):
        for i in range(n):
            if alpha[i] == 0:
                continue
            for j in range(n):
                beta = list(alpha)
                beta[i] -= 1
                beta[j] += 1
                col = basis.position[tuple(beta)]
                coef = alpha[i] * math.sqrt(basis.weights[row] / basis.weights[col])
                table[i * n + j, row * nm + col] += coef
    return table


def _as_square(A: ArrayLike) -> NDArray[np.float64]:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise DimensionError(f"expected square matrix, got shape {A.shape}")
    return A


def induced_matrix(A: ArrayLike, m: int) -> NDArray[np.float64]:
    """Return the m-th induced matrix ``A^[m]``.

    Accepts a single ``(n, n)`` matrix or a stack ``(..., n, n)``.
    """
    A = _as_square(A)
    n = A.shape[-1]
    basis = multi_index_basis(n, m)
    if m == 1:
        return A.copy()
    exps, scatter = _induced_table(n, m)
    lead = A.shape[:-2]
    flat = A.reshape((-1, 1, n, n))
    terms = np.prod(flat ** exps[None], axis=(-2, -1))
    out = terms @ scatter
    return out.reshape(lead + (basis.size, basis.size))


def infinitesimal_lift(A: ArrayLike, m: int) -> NDArray[np.float64]:
    """Return ``A_[m]``, the generator of the lifted flow of ``dx/dt = A x``.

    Entry ``(alpha, beta)`` collects ``alpha_i * a_ij * sqrt(alpha!/beta!)``
    over moves ``beta = alpha - e_i + e_j``.  Accepts stacked input.
    """
    A = _as_square(A)
    n = A.shape[-1]
    basis = multi_index_basis(n, m)
    if m == 1:
        return A.copy()
    table = _infinitesimal_table(n, m)
    lead = A.shape[:-2]
    out = A.reshape((-1, n * n)) @ table
    return out.reshape(lead + (basis.size, basis.size))


def lift_matrix(
    A: ArrayLike, m: int, kind: Literal["induced", "infinitesimal"] = "induced"
) -> LiftedMatrix:
    """Wrap :func:`induced_matrix` or :func:`infinitesimal_lift` with its basis."""
    A = _as_square(A)
    if A.ndim != 2:
        raise DimensionError("lift_matrix expects a single matrix")
    if kind == "induced":
        entries = induced_matrix(A, m)
    elif kind == "infinitesimal":
        entries = infinitesimal_lift(A, m)
    else:
        raise ValueError(f"unknown lift kind {kind!r}")
    return LiftedMatrix(basis=multi_index_basis(A.shape[0], m), entries=entries, kind=kind)
