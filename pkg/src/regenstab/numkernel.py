"""Dense numerical kernels: matrix exponential, spectra, Gauss-Legendre rules."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "NumericalError",
    "SpectralSummary",
    "expm",
    "spectral_summary",
    "spectral_radius",
    "spectral_abscissa",
    "gauss_legendre",
    "gauss_legendre_adaptive",
    "DEFAULT_EIG_CAP",
]

DEFAULT_EIG_CAP = 2048


class NumericalError(ArithmeticError):
    """A kernel could not produce a result within its contract."""


def _square_finite(A: ArrayLike, name: str = "matrix") -> NDArray[np.float64]:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def expm(A: ArrayLike) -> NDArray[np.float64]:
    """Matrix exponential (Pade scaling and squaring, via SciPy)."""
    return scipy.linalg.expm(_square_finite(A))


@dataclass(frozen=True)
class SpectralSummary:
    """Eigenvalues of a square matrix, sorted by (Re, Im) descending."""

    eigenvalues: tuple[complex, ...]
    spectral_radius: float
    spectral_abscissa: float

    def __len__(self) -> int:
        return len(self.eigenvalues)


def spectral_summary(A: ArrayLike, cap: int = DEFAULT_EIG_CAP) -> SpectralSummary:
    """Compute all eigenvalues with spectral radius and abscissa.

    Raises
    ------
    ValueError
        Non-square or non-finite input, or dimension above ``cap``.
    NumericalError
        If the eigensolver fails to converge.
    """
    A = _square_finite(A)
    if A.shape[0] > cap:
        raise ValueError(f"dimension {A.shape[0]} exceeds eigensolver cap {cap}")
    if A.shape[0] == 0:
        raise ValueError("empty matrix has no spectrum")
    try:
        eig = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue computation did not converge: {exc}") from exc
    order = np.lexsort((-eig.imag, -eig.real))
    eig = eig[order]
    return SpectralSummary(
        eigenvalues=tuple(complex(v) for v in eig),
        spectral_radius=float(np.max(np.abs(eig))),
        spectral_abscissa=float(np.max(eig.real)),
    )


def spectral_radius(A: ArrayLike) -> float:
    return spectral_summary(A).spectral_radius


def spectral_abscissa(A: ArrayLike) -> float:
    return spectral_summary(A).spectral_abscissa


def gauss_legendre(
    f: Callable[[float], ArrayLike], a: float, b: float, nodes: int = 32
) -> NDArray[np.float64]:
    """Integrate a (possibly matrix-valued) function over ``[a, b]``.

    The ``nodes``-point Gauss-Legendre rule is applied entrywise; it is exact
    for polynomials of degree ``2 * nodes - 1``.
    """
    if not (np.isfinite(a) and np.isfinite(b)) or not a < b:
        raise ValueError(f"invalid integration interval [{a}, {b}]")
    if nodes < 1:
        raise ValueError(f"nodes must be >= 1, got {nodes}")
    x, w = np.polynomial.legendre.leggauss(nodes)
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    total = None
    for xi, wi in zip(x, w):
        val = np.asarray(f(mid + half * xi), dtype=np.float64) * wi
        total = val if total is None else total + val
    return half * total


def gauss_legendre_adaptive(
    f: Callable[[float], ArrayLike],
    a: float,
    b: float,
    nodes: int = 32,
    tol: float = 1e-10,
    max_nodes: int = 256,
    max_panels: int = 1024,
) -> NDArray[np.float64]:
    """Gauss-Legendre with node doubling until the entrywise change is below ``tol``.

    The change is measured relative to ``max(1, max|result|)``.  Once
    ``max_nodes`` is reached the interval is split into equal panels, doubling
    the panel count, so long intervals with fast-varying integrands still
    converge.
    """
    def composite(k: int, panels: int) -> NDArray[np.float64]:
        edges = np.linspace(a, b, panels + 1)
        out = gauss_legendre(f, edges[0], edges[1], k)
        for lo, hi in zip(edges[1:-1], edges[2:]):
            out = out + gauss_legendre(f, lo, hi, k)
        return out

    k, panels = nodes, 1
    prev = composite(k, panels)
    while True:
        if k < max_nodes:
            k = min(2 * k, max_nodes)
        elif panels < max_panels:
            panels *= 2
        else:
            raise NumericalError(
                f"quadrature on [{a}, {b}] did not reach tol={tol} "
                f"with {k} nodes x {panels} panels"
            )
        cur = composite(k, panels)
        scale = max(1.0, float(np.max(np.abs(cur))))
        if np.max(np.abs(cur - prev)) < tol * scale:
            return cur
        prev = cur
