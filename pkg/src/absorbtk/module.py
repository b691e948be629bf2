"""Finitely generated presentations of Hilbert C*-modules.

A module X is presented by generators xi_1..xi_J inside the free module
A^m over the ambient matrix algebra. Generator ``j`` is stored as an array
of shape ``(m, d, d)``; stacking its entries vertically gives an ``(m d, d)``
column block, and ``X`` itself is never formed: an element of X is a
*coefficient vector* ``a`` (shape ``(J d, d)``) standing for
``sum_j xi_j a_j``. With this convention the inner product of two elements
is ``a* G b`` where ``G`` is the Gram block matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .cstar import MEMBERSHIP_TOL, AlgebraContext, delta_norm
from .errors import DomainError, NotInAlgebraError
from .opcore import hermitian_residual, op_norm

__all__ = [
    "BlockOperator",
    "ModulePresentation",
    "PairingTable",
    "gram",
    "rescale",
    "pairing_index",
    "normalization_excess",
]


@dataclass(frozen=True, eq=False)
class BlockOperator:
    """A ``(p d) x (q d)`` matrix read as a p x q array of d x d blocks."""

    data: np.ndarray
    d: int
    membership: np.ndarray | None = field(default=None, repr=False)

    @property
    def shape_blocks(self):
        return self.data.shape[0] // self.d, self.data.shape[1] // self.d

    def block(self, i, j):
        d = self.d
        return self.data[i * d:(i + 1) * d, j * d:(j + 1) * d]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


@dataclass(frozen=True, eq=False)
class ModulePresentation:
    ctx: AlgebraContext
    generators: tuple
    scale: tuple = ()

    def __post_init__(self):
        gens = tuple(np.asarray(g, dtype=complex) for g in self.generators)
        if not gens:
            raise DomainError("a presentation needs at least one generator")
        m = gens[0].shape[0]
        d = self.ctx.d
        for j, g in enumerate(gens):
            if g.shape != (m, d, d):
                raise DomainError(f"generator {j + 1} has shape {g.shape}, expected {(m, d, d)}")
        object.__setattr__(self, "generators", gens)
        if not self.scale:
            object.__setattr__(self, "scale", (1.0,) * len(gens))

    @property
    def J(self):
        return len(self.generators)

    @property
    def m(self):
        return self.generators[0].shape[0]

    @property
    def d(self):
        return self.ctx.d

    def stacked(self):
        """The ``(m d, J d)`` matrix whose column block j is xi_j."""
        cols = [g.reshape(self.m * self.d, self.d) for g in self.generators]
        return np.hstack(cols)

    def gram_matrix(self):
        S = self.stacked()
        return S.conj().T @ S

    def element(self, coeffs):
        """The element ``sum_j xi_j a_j`` of A^m as an ``(m d, d)`` matrix."""
        return self.stacked() @ coeffs

    def inner(self, a, b):
        """``<sum xi_j a_j, sum xi_j b_j> = a* G b``."""
        return a.conj().T @ self.gram_matrix() @ b

    def norm(self, a):
        return np.sqrt(op_norm(self.inner(a, a)))


@dataclass(frozen=True)
class PairingTable:
    """Row-major bijection between flat frame slots and (level, slot) pairs.

    Flat indices and pairs are both 1-based to match the usual notation.
    """

    N: int
    J: int
    forward: tuple
    inverse: dict

    def __call__(self, k):
        return self.forward[k - 1]

    def flat(self, n1, n2):
        return self.inverse[(n1, n2)]


def pairing_index(N, J):
    if N < 1 or J < 1:
        raise DomainError("pairing needs N, J >= 1")
    forward = tuple((n1, n2) for n1 in range(1, N + 1) for n2 in range(1, J + 1))
    inverse = {pair: k for k, pair in enumerate(forward, start=1)}
    return PairingTable(N, J, forward, inverse)


def gram(pres: ModulePresentation, tol=MEMBERSHIP_TOL):
    """Gram block matrix ``{<xi_i, xi_j>}`` with per-block membership residuals."""
    G = pres.gram_matrix()
    G = 0.5 * (G + G.conj().T)
    op = BlockOperator(G, pres.d)
    J = pres.J
    resid = np.zeros((J, J))
    for i in range(J):
        for j in range(J):
            resid[i, j] = pres.ctx.membership_residual(op.block(i, j))
            if resid[i, j] > tol:
                raise NotInAlgebraError(
                    f"not-in-algebra: Gram block ({i + 1},{j + 1}) has membership "
                    f"residual {resid[i, j]:.3e}", resid[i, j], (i + 1, j + 1))
    lam_min = np.linalg.eigvalsh(G)[0]
    if lam_min < -1e-10:
        raise DomainError(f"Gram matrix not positive (min eigenvalue {lam_min:.3e})")
    return BlockOperator(G, pres.d, resid)


def _pair_delta_norms(pres):
    G = pres.gram_matrix()
    d, J = pres.d, pres.J
    out = np.zeros((J, J))
    for i in range(J):
        for j in range(J):
            out[i, j] = delta_norm(pres.ctx, G[i * d:(i + 1) * d, j * d:(j + 1) * d])
    return out


def normalization_excess(pres):
    """``max_{n,m} ||<xi_n, xi_m>||_delta * n^2 m^2``; at most 1 when normalized."""
    norms = _pair_delta_norms(pres)
    idx = np.arange(1, pres.J + 1, dtype=float) ** 2
    return float(np.max(norms * np.outer(idx, idx)))


def rescale(pres: ModulePresentation):
    """Rescale xi_n by ``1/(n^2 sqrt(M))`` so ``||<xi_n, xi_m>||_delta <= 1/(n^2 m^2)``.

    ``M`` is the largest pairwise delta-norm (at least 1).
    """
    norms = _pair_delta_norms(pres)
    for n in range(pres.J):
        if norms[n, n] == 0.0:
            warnings.warn(f"degenerate generator {n + 1}: zero inner product", stacklevel=2)
    M = max(1.0, float(norms.max()))
    c = [1.0 / ((n * n) * np.sqrt(M)) for n in range(1, pres.J + 1)]
    gens = tuple(g * cn for g, cn in zip(pres.generators, c))
    scale = tuple(s * cn for s, cn in zip(pres.scale, c))
    return ModulePresentation(pres.ctx, gens, scale)


def gram_symmetry_residual(G):
    return hermitian_residual(np.asarray(G))
