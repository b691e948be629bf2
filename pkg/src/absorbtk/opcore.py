"""Dense complex-matrix kernel.

Everything downstream manipulates finite truncations of bounded operators as
plain ``numpy`` arrays. This module provides the few primitives those
truncations need: operator norms, Hermitian spectral decompositions, positive
square roots, and two independent ways of differentiating a function of a
Hermitian matrix along a direction ``dG``:

* :func:`calc_derivative_spectral` uses divided differences in the eigenbasis
  (the Daleckii-Krein formula);
* :func:`inv_sqrt_derivative_integral` evaluates the resolvent integral for the
  derivative of ``(1 + n G)^(-1/2)`` by quadrature, never diagonalizing ``G``.

The two engines are used to cross-check each other.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import ConvergenceError, DomainError, NotPositiveError

__all__ = [
    "SpectralDecomposition",
    "QuadratureSpec",
    "adjoint",
    "op_norm",
    "is_hermitian",
    "hermitian_residual",
    "spectral_decomposition",
    "herm_sqrt",
    "herm_function",
    "calc_derivative_spectral",
    "inv_sqrt_derivative_integral",
]

# relative threshold below which two eigenvalues are treated as equal
DEGENERACY_TOL = 1e-10
# negative eigenvalues down to -PSD_CLAMP * ||M|| are rounding noise
PSD_CLAMP = 1e-12


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigen-pairs of a Hermitian matrix, eigenvalues ascending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self, f=None):
        """Return ``U f(diag(lambda)) U*`` (``f`` defaults to the identity)."""
        lam = self.eigenvalues if f is None else f(self.eigenvalues)
        U = self.eigenvectors
        return (U * lam) @ U.conj().T


@dataclass(frozen=True)
class QuadratureSpec:
    """Gauss-Legendre doubling schedule for the resolvent integral.

    The half-line ``lambda in (0, inf)`` is mapped to ``theta in (0, pi/2)``
    with ``lambda = tan(theta)^2``; ``nodes`` is the initial rule size, doubled
    until two successive values agree to ``tol`` (relative to
    ``max(1, |value|)``) or ``max_nodes`` is exceeded.
    """

    nodes: int = 32
    tol: float = 1e-10
    max_nodes: int = 1 << 15


def adjoint(M):
    return np.conj(np.transpose(M))


def op_norm(M):
    """Largest singular value of ``M``."""
    M = np.asarray(M)
    if M.size == 0:
        raise DomainError("operator norm of an empty matrix")
    if M.ndim == 1:
        return float(np.linalg.norm(M))
    return float(np.linalg.norm(M, 2))


def hermitian_residual(M):
    """``||M - M*||``, the distance from selfadjointness."""
    return op_norm(M - adjoint(M))


def is_hermitian(M, tol=1e-12):
    return hermitian_residual(M) <= tol * max(1.0, op_norm(M))


def spectral_decomposition(M):
    """Hermitian eigendecomposition; the input is symmetrized first."""
    M = np.asarray(M)
    H = 0.5 * (M + adjoint(M))
    lam, U = np.linalg.eigh(H)
    return SpectralDecomposition(lam, U)


def _clamped_spectrum(M):
    sd = spectral_decomposition(M)
    scale = max(op_norm(M), np.finfo(float).tiny)
    lam = sd.eigenvalues
    if lam[0] < -PSD_CLAMP * scale:
        raise NotPositiveError(
            f"matrix has eigenvalue {lam[0]:.3e} below -{PSD_CLAMP:g}*||M||",
            float(lam[0]))
    return SpectralDecomposition(np.clip(lam, 0.0, None), sd.eigenvectors)


def herm_sqrt(M):
    """Positive square root of a positive semidefinite matrix."""
    return _clamped_spectrum(M).reconstruct(np.sqrt)


def herm_function(M, f):
    """Apply the scalar function ``f`` to a Hermitian matrix."""
    return spectral_decomposition(M).reconstruct(f)


def calc_derivative_spectral(G, dG, f: Callable, fprime: Callable):
    """Derivative of ``f(G)`` in direction ``dG`` by divided differences.

    In the eigenbasis ``G = U diag(lam) U*`` the derivative has entries
    ``f[lam_i, lam_j] * (U* dG U)_ij`` where ``f[a, b]`` is the first divided
    difference; nearly equal eigenvalues use ``fprime`` at their mean.
    """
    sd = spectral_decomposition(G)
    lam, U = sd.eigenvalues, sd.eigenvectors
    with np.errstate(all="ignore"):
        flam = np.asarray(f(lam), dtype=complex)
    if not np.all(np.isfinite(flam)):
        raise DomainError("function undefined on the spectrum")
    diff = lam[:, None] - lam[None, :]
    close = np.abs(diff) <= DEGENERACY_TOL * (1.0 + np.max(np.abs(lam)))
    with np.errstate(all="ignore"):
        mid = 0.5 * (lam[:, None] + lam[None, :])
        fp = np.asarray(fprime(mid[close]), dtype=complex)
        kernel = np.where(close, 0.0, (flam[:, None] - flam[None, :]) / np.where(close, 1.0, diff))
    if not np.all(np.isfinite(fp)):
        raise DomainError("derivative undefined on the spectrum")
    kernel = kernel.astype(complex)
    kernel[close] = fp
    inner = adjoint(U) @ dG @ U
    return U @ (kernel * inner) @ adjoint(U)


@lru_cache(maxsize=32)
def _gauss_legendre_quarter(k):
    x, w = np.polynomial.legendre.leggauss(k)
    theta = 0.25 * np.pi * (x + 1.0)
    return theta, 0.25 * np.pi * w


def _resolvent_quadrature(G, dG, n, k):
    # lambda = tan^2(theta): lambda^(-1/2) d lambda = 2 sec^2(theta) d theta and
    # (1 + lambda + nG)^(-1) = cos^2(theta) (1 + n cos^2(theta) G)^(-1)
    theta, w = _gauss_legendre_quarter(k)
    c = np.cos(theta) ** 2
    dim = G.shape[0]
    eye = np.eye(dim)
    R = np.linalg.inv(eye[None, :, :] + (n * c)[:, None, None] * G[None, :, :])
    integrand = R @ dG[None, :, :] @ R
    weights = 2.0 * c * w
    return -(n / np.pi) * np.tensordot(weights, integrand, axes=(0, 0))


def inv_sqrt_derivative_integral(G, dG, n, quad: QuadratureSpec | None = None):
    """Derivative of ``(1 + n G)^(-1/2)`` along ``dG`` from the resolvent integral.

    Evaluates ``-(n/pi) int_0^inf lambda^(-1/2) R dG R d lambda`` with
    ``R = (1 + lambda + n G)^(-1)``. Resolvents are formed by direct
    inversion, so the result is independent of any eigendecomposition of
    ``G``.
    """
    quad = quad or QuadratureSpec()
    G = np.asarray(G, dtype=complex)
    dG = np.asarray(dG, dtype=complex)
    if n <= 0:
        raise DomainError("n must be a positive integer")
    if not np.any(dG):
        return np.zeros_like(dG)
    k = quad.nodes
    prev = cur = _resolvent_quadrature(G, dG, n, k)
    while True:
        k *= 2
        if k > quad.max_nodes:
            raise ConvergenceError(
                f"resolvent quadrature not converged at {k // 2} nodes", prev, cur)
        cur = _resolvent_quadrature(G, dG, n, k)
        scale = max(1.0, op_norm(cur))
        if op_norm(cur - prev) <= quad.tol * scale:
            return cur
        prev = cur
