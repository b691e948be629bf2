"""Algebra contexts: a *-subalgebra of M_d(C) with a commutator derivation.

The derivation is always ``delta(a) = D0 a - a D0`` for a fixed Hermitian
``D0``; this makes ``delta(a*) = -delta(a)*`` automatic and, in finite
dimensions, closedness is trivial.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, NotInAlgebraError
from .opcore import adjoint, hermitian_residual, op_norm

__all__ = [
    "AlgebraContext",
    "InstanceSpec",
    "MEMBERSHIP_TOL",
    "derive",
    "delta_norm",
    "builtin_instance",
    "clock_matrix",
    "shift_matrix",
    "BUILTIN_KINDS",
]

MEMBERSHIP_TOL = 1e-8


def _orthonormal_span(mats, tol=1e-10):
    """Frobenius-orthonormal basis (rows) of the span of ``mats``."""
    if len(mats) == 0:
        return np.zeros((0, 0), dtype=complex)
    V = np.array([np.asarray(m, dtype=complex).ravel() for m in mats])
    u, s, vh = np.linalg.svd(V, full_matrices=False)
    rank = int(np.sum(s > tol * max(1.0, s[0])))
    return vh[:rank]


@dataclass(frozen=True, eq=False)
class AlgebraContext:
    """A unital *-subalgebra ``A`` of ``M_d(C)`` with ``delta = [D0, .]``.

    ``basis`` is kept exactly as supplied (so instance files round-trip
    bit for bit); ``frame`` is a Frobenius-orthonormal basis of its span used
    for membership tests.
    """

    name: str
    d: int
    basis: tuple
    D0: np.ndarray
    frame: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        D0 = np.asarray(self.D0, dtype=complex)
        if D0.shape != (self.d, self.d):
            raise DomainError(f"D0 must be {self.d}x{self.d}, got {D0.shape}")
        basis = tuple(np.asarray(b, dtype=complex) for b in self.basis)
        for b in basis:
            if b.shape != (self.d, self.d):
                raise DomainError(f"basis element of shape {b.shape}, expected {(self.d, self.d)}")
        object.__setattr__(self, "D0", D0)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "frame", _orthonormal_span(basis))

    @property
    def dim(self):
        return self.frame.shape[0]

    def membership_residual(self, a):
        """Frobenius distance from ``a`` to span(basis), relative to max(1, |a|)."""
        v = np.asarray(a, dtype=complex).ravel()
        proj = self.frame.conj() @ v
        r = np.linalg.norm(v - self.frame.T @ proj)
        return float(r / max(1.0, np.linalg.norm(v)))

    def block_residuals(self, blocks):
        """Membership residuals of a stack of d x d blocks, shape (k, d, d)."""
        V = np.asarray(blocks, dtype=complex).reshape(len(blocks), -1)
        proj = V @ self.frame.conj().T
        r = np.linalg.norm(V - proj @ self.frame, axis=1)
        return r / np.maximum(1.0, np.linalg.norm(V, axis=1))

    def contains(self, a, tol=MEMBERSHIP_TOL):
        return self.membership_residual(a) <= tol

    def commutator(self, a):
        """Blockwise ``[D0, a]`` for any array whose trailing axes are d-blocks.

        ``a`` may be a ``(p*d, q*d)`` block matrix; the generator acts
        diagonally on every block, which is how the derivation extends to
        matrices over the algebra.
        """
        a = np.asarray(a, dtype=complex)
        p, q = a.shape[0] // self.d, a.shape[1] // self.d
        left = np.kron(np.eye(p), self.D0) @ a
        right = a @ np.kron(np.eye(q), self.D0)
        return left - right

    @property
    def is_trivial_derivation(self):
        return all(op_norm(self.commutator(b)) == 0.0 for b in self.basis)

    def check(self, tol=1e-10):
        """Raise ``DomainError`` naming the first violated invariant."""
        if hermitian_residual(self.D0) > 1e-12 * max(1.0, op_norm(self.D0)):
            raise DomainError("D0 not selfadjoint")
        for i, a in enumerate(self.basis):
            if self.membership_residual(adjoint(a)) > tol:
                raise DomainError(f"basis not closed under adjoint (element {i})")
            for j, b in enumerate(self.basis):
                if self.membership_residual(a @ b) > tol:
                    raise DomainError(f"basis not closed under product ({i},{j})")


@dataclass(frozen=True)
class InstanceSpec:
    kind: str
    params: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, text):
        """``"clockshift:8"`` -> InstanceSpec("clockshift", {"d": 8})."""
        kind, _, arg = text.strip().partition(":")
        kind = kind.strip().lower()
        if kind not in BUILTIN_KINDS:
            raise ConfigError(f"unknown instance kind {kind!r}")
        params = {}
        if arg:
            key = "c" if kind == "scalar" else "d"
            try:
                params[key] = float(arg) if key == "c" else int(arg)
            except ValueError:
                raise ConfigError(f"bad instance parameter {arg!r} for {kind}") from None
        return cls(kind, params)

    def label(self):
        if self.kind == "scalar":
            c = self.params.get("c", 1.0)
            return "scalar" if c == 1.0 else f"scalar:{c:g}"
        if self.kind in ("clockshift", "projective"):
            return f"{self.kind}:{self.params.get('d', _DEFAULT_D[self.kind])}"
        return self.kind


def _require(ctx, a):
    r = ctx.membership_residual(a)
    if r > MEMBERSHIP_TOL:
        raise NotInAlgebraError(f"element not in algebra {ctx.name!r} (residual {r:.2e})", r)


def derive(ctx: AlgebraContext, a):
    """``delta(a) = D0 a - a D0`` for ``a`` in the subalgebra."""
    a = np.asarray(a, dtype=complex)
    _require(ctx, a)
    return ctx.D0 @ a - a @ ctx.D0


def delta_norm(ctx: AlgebraContext, a):
    """``||a|| + ||delta(a)||``."""
    return op_norm(a) + op_norm(derive(ctx, a))


# --- builtin catalog -------------------------------------------------------

BUILTIN_KINDS = ("scalar", "pauli", "clockshift", "projective")
_DEFAULT_D = {"clockshift": 8, "projective": 4}

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def clock_matrix(d):
    return np.diag(np.exp(2j * np.pi * np.arange(d) / d))


def shift_matrix(d):
    return np.roll(np.eye(d, dtype=complex), 1, axis=0)


def _matrix_units(d):
    out = []
    for i in range(d):
        for j in range(d):
            e = np.zeros((d, d), dtype=complex)
            e[i, j] = 1.0
            out.append(e)
    return out


def _scalar(c=1.0):
    from .module import ModulePresentation

    ctx = AlgebraContext("scalar", 1, (np.eye(1),), np.zeros((1, 1)))
    gens = (np.full((1, 1, 1), c, dtype=complex),)
    return ctx, ModulePresentation(ctx, gens)


def _split_columns(S, m, d):
    """Read the ``(m d, J d)`` matrix ``S`` as J generators of shape (m, d, d)."""
    J = S.shape[1] // d
    return tuple(S[:, j * d:(j + 1) * d].reshape(m, d, d) for j in range(J))


def _pauli():
    from .module import ModulePresentation
    from .opcore import herm_sqrt

    I = np.eye(2, dtype=complex)
    ctx = AlgebraContext("pauli", 2, tuple(_matrix_units(2)), np.diag([1.0, -1.0]))
    # Generators are the columns of the square root of a prescribed Gram
    # matrix. The second diagonal block is close to a multiple of the first
    # block's delta-norm, so after the 1/n^2 rescaling G stays invertible
    # with its spectrum as far from 0 as the normalization allows.
    cross = 0.2 * np.array([[0, 1], [0, 0]], dtype=complex) + 0.05 * PAULI_Y
    target = np.block([[I + 0.1 * PAULI_X, cross],
                       [adjoint(cross), 1.2 * I + 0.02 * PAULI_Y]])
    return ctx, ModulePresentation(ctx, _split_columns(herm_sqrt(target), 2, 2))


def _clockshift(d=8):
    from .module import ModulePresentation

    if d < 2:
        raise ConfigError("clockshift dimension must be >= 2")
    Z, X = clock_matrix(d), shift_matrix(d)
    I = np.eye(d, dtype=complex)
    basis = tuple(np.linalg.matrix_power(Z, a) @ np.linalg.matrix_power(X, b)
                  for a in range(d) for b in range(d))
    ctx = AlgebraContext(f"clockshift:{d}", d, basis, np.diag(np.arange(d, dtype=float)))
    # all generators factor through one isometry v : A -> A^2, xi_j = v b_j,
    # so G_ij = b_i* b_j; G is singular but its nonzero spectrum stays
    # close to that of b_1 b_1*
    v = np.linalg.qr(np.vstack([I + 0.3 * X, 0.5 * Z + 0.2j * X @ Z]))[0]
    gens = []
    for j in range(1, 5):
        Zj = np.linalg.matrix_power(Z, j)
        b = I + (0.08 / j) * (X + adjoint(X)) + 0.05 * (Zj @ X)
        gens.append((v @ b).reshape(2, d, d))
    return ctx, ModulePresentation(ctx, tuple(gens))


def _projective(d=4):
    from .module import ModulePresentation

    if d < 2:
        raise ConfigError("projective dimension must be >= 2")
    m = 2
    # rank-d projection p on C^(md) in general position w.r.t. the blocks
    t = np.linspace(0.3, 1.1, d)
    U = np.vstack([np.diag(np.cos(t)), np.diag(np.sin(t)) @ shift_matrix(d)])
    U = np.linalg.qr(U + 0.2j * np.vstack([shift_matrix(d), np.eye(d)]))[0]
    p = U @ adjoint(U)
    ctx = AlgebraContext(f"projective:{d}", d, tuple(_matrix_units(d)),
                         np.diag(np.arange(d, dtype=float)))
    gens = tuple(np.stack([p[k * d:(k + 1) * d, i * d:(i + 1) * d] for k in range(m)])
                 for i in range(m))
    return ctx, ModulePresentation(ctx, gens)


def builtin_instance(spec):
    """Context and (unnormalized) module presentation for a catalog entry.

    ``spec`` is an :class:`InstanceSpec` or a string such as ``"pauli"`` or
    ``"clockshift:8"``.
    """
    if isinstance(spec, str):
        spec = InstanceSpec.parse(spec)
    kind, params = spec.kind, dict(spec.params)
    if kind == "scalar":
        return _scalar(float(params.get("c", 1.0)))
    if kind == "pauli":
        return _pauli()
    if kind == "clockshift":
        return _clockshift(int(params.get("d", 8)))
    if kind == "projective":
        return _projective(int(params.get("d", 4)))
    raise ConfigError(f"unknown instance kind {kind!r}")


DEFAULT_INSTANCES = ("scalar", "pauli", "clockshift:8", "projective:4")
