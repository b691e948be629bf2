"""The Grassmann connection induced by a truncated absorption isometry.

An element of ``X (x) Omega`` is stored through its frame expansion
``sum_k zeta_k (x) omega_k``: a :class:`ConnectionValue` keeps the ``N J``
slots ``omega_k`` (each a d x d matrix). The connection of a smooth element
``xi`` has slots ``delta(<zeta_k, xi>) = delta((W xi)_k)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .absorb import AbsorptionSystem
from .cstar import MEMBERSHIP_TOL, AlgebraContext, _orthonormal_span
from .errors import NotInAlgebraError
from .opcore import adjoint, op_norm

__all__ = [
    "OmegaAlgebra",
    "ConnectionValue",
    "omega_algebra",
    "smooth_sample",
    "random_smooth_input",
    "grassmann",
    "apply_pairing",
    "leibniz_residual",
    "hermitian_residual",
    "connection_bound",
]


@dataclass(frozen=True, eq=False)
class OmegaAlgebra:
    """Span of the *-algebra generated by the algebra and its derivatives."""

    ctx: AlgebraContext
    frame: np.ndarray
    iterations: int

    @property
    def dim(self):
        return self.frame.shape[0]

    def membership_residual(self, a):
        v = np.asarray(a, dtype=complex).ravel()
        r = np.linalg.norm(v - self.frame.T @ (self.frame.conj() @ v))
        return float(r / max(1.0, np.linalg.norm(v)))

    def block_residuals(self, blocks):
        V = np.asarray(blocks, dtype=complex).reshape(len(blocks), -1)
        r = np.linalg.norm(V - (V @ self.frame.conj().T) @ self.frame, axis=1)
        return r / np.maximum(1.0, np.linalg.norm(V, axis=1))


@lru_cache(maxsize=16)
def omega_algebra(ctx: AlgebraContext):
    """Close ``{a, delta(a)}`` under products and adjoints.

    Each round multiplies every pair of spanning elements; the loop stops
    once the dimension no longer grows (or reaches ``d^2``).
    """
    d = ctx.d
    mats = [np.eye(d, dtype=complex)] + list(ctx.basis) + [ctx.commutator(b) for b in ctx.basis]
    frame = _orthonormal_span(mats)
    rounds = 0
    for rounds in range(1, d * d + 1):
        if frame.shape[0] == d * d:
            break
        elems = [f.reshape(d, d) for f in frame]
        grown = elems + [adjoint(e) for e in elems] + [a @ b for a in elems for b in elems]
        new = _orthonormal_span(grown)
        if new.shape[0] == frame.shape[0]:
            break
        frame = new
    return OmegaAlgebra(ctx, frame, rounds)


def _blocks(col, d):
    """Split a ``(k d, d)`` block column into a ``(k, d, d)`` stack."""
    return col.reshape(-1, d, d)


def _require_blocks(ctx, col, what, tol=MEMBERSHIP_TOL):
    res = ctx.block_residuals(_blocks(col, ctx.d))
    k = int(np.argmax(res))
    if res[k] > tol:
        raise NotInAlgebraError(
            f"{what}: block {k + 1} not in algebra (residual {res[k]:.2e})", float(res[k]), k + 1)


def random_smooth_input(sys: AbsorptionSystem, rng, levels=1):
    """Random block column over the algebra supported on the first ``levels`` levels.

    With ``levels=1`` the resulting smooth element ``W* K^2 x`` does not
    depend on the truncation level, which makes N-sweeps comparable.
    """
    ctx, d = sys.ctx, sys.d
    nblocks = sys.N * sys.J
    x = np.zeros((nblocks, d, d), dtype=complex)
    coef = rng.standard_normal((levels * sys.J, ctx.dim)) + 1j * rng.standard_normal((levels * sys.J, ctx.dim))
    x[:levels * sys.J] = (coef @ ctx.frame).reshape(-1, d, d)
    return x.reshape(nblocks * d, d)


def smooth_sample(sys: AbsorptionSystem, x):
    """Coefficients of ``W* K^2 x`` for a block column ``x`` over the algebra."""
    x = np.asarray(x, dtype=complex)
    if x.shape != (sys.W.shape[0], sys.d):
        raise ValueError(f"expected a block column of shape {(sys.W.shape[0], sys.d)}")
    _require_blocks(sys.ctx, x, "smooth_sample input")
    return sys.apply_adjoint(sys.K_apply(sys.K_apply(x)))


@dataclass(frozen=True, eq=False)
class ConnectionValue:
    """``sum_k zeta_k (x) slots[k]`` for a fixed absorption system."""

    slots: np.ndarray  # (N J, d, d)
    sys: AbsorptionSystem

    def column(self):
        return self.slots.reshape(-1, self.sys.d)

    def coefficients(self):
        """Coefficient vector (entries in Omega) of the tensor ``sum zeta_k (x) omega_k``."""
        return self.sys.apply_adjoint(self.column())

    def norm(self):
        """``||sum_k omega_k* omega_k||^(1/2)``, the norm of the slot vector."""
        c = self.column()
        return float(np.sqrt(op_norm(adjoint(c) @ c)))

    def __add__(self, other):
        return ConnectionValue(self.slots + other.slots, self.sys)

    def __mul__(self, scalar):
        return ConnectionValue(self.slots * scalar, self.sys)

    __rmul__ = __mul__


def grassmann(sys: AbsorptionSystem, xi, check=True):
    """``(W* (x) 1) delta W`` on the coefficient vector ``xi``."""
    y = sys.apply(np.asarray(xi, dtype=complex))
    if check:
        _require_blocks(sys.ctx, y, "frame coefficients of xi")
    slots = _blocks(sys.ctx.commutator(y), sys.d)
    return ConnectionValue(slots.copy(), sys)


def apply_pairing(sys: AbsorptionSystem, eta, value: ConnectionValue):
    """``sum_k <eta, zeta_k> omega_k``."""
    y = sys.apply(np.asarray(eta, dtype=complex))
    return adjoint(y) @ value.column()


def _frame_norm(sys, u):
    """Norm of a tensor with coefficients ``u`` after embedding by ``W (x) 1``."""
    y = sys.apply(u)
    return float(np.sqrt(op_norm(adjoint(y) @ y)))


def leibniz_residual(sys: AbsorptionSystem, xi, a):
    """Defect of ``grad(xi a) = grad(xi) a + xi (x) delta(a)``.

    The three terms are formed independently and the defect is measured
    after embedding into the standard module.
    """
    a = np.asarray(a, dtype=complex)
    if not sys.ctx.contains(a):
        raise NotInAlgebraError("leibniz_residual: a not in algebra", sys.ctx.membership_residual(a))
    lhs = grassmann(sys, xi @ a).coefficients()
    rhs = grassmann(sys, xi).coefficients() @ a + xi @ sys.ctx.commutator(a)
    return _frame_norm(sys, lhs - rhs)


def hermitian_residual(sys: AbsorptionSystem, xi, eta):
    """Defect of ``delta(<xi, eta>) = <xi, grad eta> - <grad xi, eta>``."""
    inner = adjoint(xi) @ sys.G @ eta
    lhs = sys.ctx.commutator(inner)
    rhs = apply_pairing(sys, xi, grassmann(sys, eta)) - adjoint(apply_pairing(sys, eta, grassmann(sys, xi)))
    return op_norm(lhs - rhs)


def connection_bound(sys: AbsorptionSystem, xi, a_delta_norm):
    """``2 dfct(N) ||xi|| ||a||_delta kappa(G)`` (infinite for singular G)."""
    return 2.0 * sys.dfct * sys.coefficient_norm(xi) * a_delta_norm * sys.condition
