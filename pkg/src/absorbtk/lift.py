"""Symmetric lifts, the regularizer, composition identities and GNS localization.

The interior tensor product ``X (x) Y`` with ``Y = C^d`` is modelled
isometrically on ``C^(J d)``: the simple tensor ``xi (x) y`` with coefficient
vector ``c`` is sent to ``G^(1/2) c y``. In this model ``W (x) 1`` is the
block column ``Wt = [sqrt(H_n) G^(1/2)]_n``, its adjoint is the plain
conjugate transpose, and ``Y^inf`` is truncated to ``C^(N J d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .absorb import AbsorptionSystem
from .connection import grassmann
from .cstar import AlgebraContext
from .errors import DomainError, InvalidStateError
from .opcore import adjoint, hermitian_residual, herm_sqrt, is_hermitian, op_norm

__all__ = [
    "LiftSystem",
    "RegularizedLift",
    "GnsSpace",
    "lift_system",
    "lift_operator",
    "lift_vs_connection",
    "regularized_lift",
    "composition_identities",
    "gns_localize",
    "localized_adjoint_residual",
]


@dataclass(frozen=True, eq=False)
class LiftSystem:
    sys: AbsorptionSystem
    D: np.ndarray
    Wt: np.ndarray
    Q: np.ndarray
    Delta: np.ndarray
    G_half: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def d(self):
        return self.sys.d

    def diag_D(self, x):
        """``diag(D)`` on an ``(N J d) x k`` array without forming it."""
        d = self.d
        return (self.D @ x.reshape(-1, d, x.shape[1])).reshape(x.shape)

    def diag_D_matrix(self):
        return np.kron(np.eye(self.Wt.shape[0] // self.d), self.D)

    def embed(self, xi, y):
        """Model vector of ``xi (x) y``."""
        return self.G_half @ (xi @ y)

    def compatibility_residual(self):
        """``max ||[D, b] - delta(b)||`` over the algebra basis."""
        ctx = self.sys.ctx
        return max(op_norm(self.D @ b - b @ self.D - ctx.commutator(b)) for b in ctx.basis)


def lift_system(sys: AbsorptionSystem, D=None):
    """Assemble the tensor-product model; ``D`` defaults to the derivation generator."""
    D = sys.ctx.D0 if D is None else np.asarray(D, dtype=complex)
    if D.shape != (sys.d, sys.d):
        raise DomainError(f"D must be {sys.d}x{sys.d}")
    if not is_hermitian(D):
        raise DomainError("D not selfadjoint")
    Gh = herm_sqrt(sys.G)
    Wt = np.vstack([s @ Gh for s in sys.chain.sqrtH[:sys.N]])
    Q = Wt @ adjoint(Wt)
    K2Wt = sys.K_apply(sys.K_apply(Wt))
    Delta = adjoint(Wt) @ K2Wt
    Delta = 0.5 * (Delta + adjoint(Delta))
    return LiftSystem(sys, D, Wt, Q, Delta, Gh)


def lift_operator(ls: LiftSystem):
    """``(W* (x) 1) diag(D) (W (x) 1)`` as a matrix on the model space."""
    if "lift" not in ls._cache:
        ls._cache["lift"] = adjoint(ls.Wt) @ ls.diag_D(ls.Wt)
    return ls._cache["lift"]


def lift_vs_connection(ls: LiftSystem, xi, eta):
    """Defect of ``lift(xi (x) eta) = grad(xi)(eta) + xi (x) D eta``."""
    eta = np.asarray(eta, dtype=complex).reshape(ls.d, -1)
    lhs = lift_operator(ls) @ ls.embed(xi, eta)
    grad = grassmann(ls.sys, xi).coefficients()
    rhs = ls.G_half @ (grad @ eta) + ls.embed(xi, ls.D @ eta)
    return float(np.linalg.norm(lhs - rhs))


@dataclass(frozen=True, eq=False)
class RegularizedLift:
    matrix: np.ndarray
    lambda_min: float
    commutator_residual: float
    hermitian_residual: float
    range_residual: float
    embedding_defect: float


def regularized_lift(ls: LiftSystem):
    """``Delta lift Delta`` with its diagnostics.

    ``commutator_residual`` is ``||[diag(D), T] - delta(T)||`` for
    ``T = P K^2`` acting blockwise on the ``Y^inf`` truncation.
    ``range_residual`` compares ``Delta_W = Wt Delta Wt*`` with the
    restriction ``T Q``; ``embedding_defect`` compares it with ``T`` itself,
    which only agrees up to the isometry defect.
    """
    sys = ls.sys
    L = lift_operator(ls)
    R = ls.Delta @ L @ ls.Delta
    lam = float(np.linalg.eigvalsh(ls.Delta)[0])
    T = adjoint(sys.K_apply(sys.K_apply(ls.Q)))  # P K^2, as K and P are Hermitian
    comm = ls.diag_D(T) - adjoint(ls.diag_D(adjoint(T)))
    resid = op_norm(comm - sys.ctx.commutator(T))
    DW = ls.Wt @ ls.Delta @ adjoint(ls.Wt)
    return RegularizedLift(R, lam, resid, hermitian_residual(R),
                           op_norm(DW - T @ ls.Q), op_norm(DW - T))


def composition_identities(D, x):
    """Residuals of the three composition formulas with ``delta(x) = [D, x]``.

    Returns a dict with keys ``adjoint`` for ``(Dx)* = Dx - delta(x)``,
    ``left`` for ``xD = Dx - delta(x)`` and ``sandwich`` for
    ``xDx = Dx^2 - delta(x) x``.
    """
    D = np.asarray(D, dtype=complex)
    x = np.asarray(x, dtype=complex)
    if not (is_hermitian(D) and is_hermitian(x)):
        raise DomainError("composition identities need Hermitian D and x")
    dx = D @ x - x @ D
    Dx = D @ x
    return {
        "adjoint": op_norm(adjoint(Dx) - (Dx - dx)),
        "left": op_norm(x @ D - (Dx - dx)),
        "sandwich": op_norm(x @ D @ x - (D @ x @ x - dx @ x)),
    }


@dataclass(frozen=True, eq=False)
class GnsSpace:
    """GNS space of a state on the algebra, with an orthonormal basis.

    ``coords`` holds, column by column, the coefficients of the basis
    vectors in terms of the algebra frame.
    """

    ctx: AlgebraContext
    state: np.ndarray
    coords: np.ndarray
    cyclic: np.ndarray

    @property
    def dimension(self):
        return self.coords.shape[1]

    def rep(self, a):
        """Matrix of left multiplication by ``a``."""
        a = np.asarray(a, dtype=complex)
        d = self.ctx.d
        B = self.ctx.frame.reshape(-1, d, d)
        # <B_b, a B_c sigma>_F = tr(sigma B_b* a B_c)
        right = (a @ B @ self.state).reshape(len(B), -1)
        gram_a = B.reshape(len(B), -1).conj() @ right.T
        return adjoint(self.coords) @ gram_a @ self.coords

    def vector(self, a):
        """Coordinates of the class of ``a``."""
        return self.rep(a) @ self.cyclic


GNS_CUTOFF = 1e-12


def gns_localize(ctx: AlgebraContext, sigma, ops=()):
    """GNS construction for the state ``tr(sigma .)`` and the images of ``ops``."""
    sigma = np.asarray(sigma, dtype=complex)
    if abs(np.trace(sigma) - 1.0) > 1e-12:
        raise InvalidStateError(f"state has trace {np.trace(sigma).real:.15g}, expected 1")
    if not is_hermitian(sigma) or np.linalg.eigvalsh(0.5 * (sigma + adjoint(sigma)))[0] < -1e-12:
        raise InvalidStateError("state is not positive semidefinite")
    d = ctx.d
    B = ctx.frame.reshape(-1, d, d)
    flat = B.reshape(len(B), -1)
    gram = flat.conj() @ (B @ sigma).reshape(len(B), -1).T
    gram = 0.5 * (gram + adjoint(gram))
    lam, V = np.linalg.eigh(gram)
    keep = lam > GNS_CUTOFF * max(1.0, lam[-1])
    coords = V[:, keep] / np.sqrt(lam[keep])
    # cyclic vector [I]: <e_k, [I]> = sum_b conj(C_bk) tr(sigma B_b*)
    cyclic = adjoint(coords) @ (flat.conj() @ sigma.ravel())
    space = GnsSpace(ctx, sigma, coords, cyclic)
    return space, [space.rep(a) for a in ops]


def localized_adjoint_residual(space: GnsSpace, D, x):
    """``||rep(Dx)* - (rep(Dx) - rep([D, x]))||``."""
    D = np.asarray(D, dtype=complex)
    x = np.asarray(x, dtype=complex)
    Dx = space.rep(D @ x)
    dx = space.rep(D @ x - x @ D)
    return op_norm(adjoint(Dx) - (Dx - dx))
