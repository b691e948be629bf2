"""Finite-difference probes of the Dirac operator ``i d/dt`` on the half-line.

The half-line is truncated to ``(0, L)`` and sampled at the interior nodes
``t_j = j h`` (``h = L/(M+1)``). Operators are sparse ``M x M`` matrices.
The minimal operator is the central difference with zero boundary values.

Range defects use the sign convention ``sign = -1 -> ran(op - i)`` and
``sign = +1 -> ran(op + i)``. For the minimal operator ``e^{-t}`` is
orthogonal to ``ran(op - i)`` (it spans ``ker(op* + i)``), so the minus
defect of that probe stays near 1 while the plus defect tends to 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse as sp

from .errors import DomainViolationError, GridTooCoarseError, InvalidProfileError, NumericError

__all__ = [
    "Grid",
    "GridOperator",
    "WeightProfile",
    "ContrastRow",
    "build_dirac",
    "weight_profile",
    "default_profile_scale",
    "regularizer_profile",
    "regularized_dirac",
    "halfline_lift_apply",
    "lift_apply_error",
    "range_defect",
    "regularization_contrast",
    "fit_error_model",
    "bump",
    "exp_probe",
]

MIN_NODES = 8
BOUNDARY_NODES = 5


@dataclass(frozen=True)
class Grid:
    L: float
    M: int

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError("L must be positive")
        if self.M < 1:
            raise ValueError("M must be positive")

    @property
    def h(self):
        return self.L / (self.M + 1)

    @property
    def nodes(self):
        return self.h * np.arange(1, self.M + 1)

    @classmethod
    def with_spacing(cls, L, divisions):
        """Grid with ``h = L/divisions``, i.e. ``divisions - 1`` interior nodes."""
        return cls(L, divisions - 1)


@dataclass(frozen=True, eq=False)
class GridOperator:
    matrix: sp.csr_matrix
    grid: Grid
    label: str = "dirac"

    def __matmul__(self, g):
        return self.matrix @ g

    def symmetry_residual(self, g, f):
        """``|<op g, f> - <g, op f>|``."""
        return abs(np.vdot(self.matrix @ g, f) - np.vdot(g, self.matrix @ f))

    def hermitian_residual(self):
        diff = self.matrix - self.matrix.conj().T
        return float(abs(diff).max()) if diff.nnz else 0.0


def build_dirac(grid: Grid):
    """Central-difference ``i d/dt`` with zero boundary values."""
    if grid.M < MIN_NODES:
        raise GridTooCoarseError(f"need at least {MIN_NODES} interior nodes, got {grid.M}")
    c = 1j / (2.0 * grid.h)
    off = np.full(grid.M - 1, c)
    mat = sp.diags([-off, off], [-1, 1], format="csr", dtype=complex)
    return GridOperator(mat, grid, "dirac")


# --- weight profile -----------------------------------------------------------

# t(1 - t^2)/(1 + t^2)^3 peaks where 3t^4 - 8t^2 + 1 = 0
_T_PEAK = np.sqrt((4.0 - np.sqrt(13.0)) / 3.0)
_XI_DXI_PEAK = _T_PEAK * (1 - _T_PEAK ** 2) / (1 + _T_PEAK ** 2) ** 3


def default_profile_scale():
    """Largest ``c`` with ``sup xi^2 + 2 sup|xi xi'| <= 1`` for ``xi = c t/(1+t^2)``."""
    return 1.0 / np.sqrt(0.25 + 2.0 * _XI_DXI_PEAK)


@dataclass(frozen=True, eq=False)
class WeightProfile:
    xi: np.ndarray
    dxi: np.ndarray
    scale: float

    @property
    def normalization(self):
        """``sup xi^2 + 2 sup|xi xi'|`` on the grid."""
        return float(np.max(self.xi ** 2) + 2.0 * np.max(np.abs(self.xi * self.dxi)))


def weight_profile(grid: Grid, spec=None):
    """Sample a nowhere-vanishing weight and its derivative.

    ``spec`` is ``None`` for ``c t/(1+t^2)`` with the analytic scale, or a
    pair ``(f, fprime)`` of callables, which is rescaled on the grid so the
    normalization holds.
    """
    t = grid.nodes
    if spec is None or spec == "default":
        c = default_profile_scale()
        xi = c * t / (1 + t ** 2)
        dxi = c * (1 - t ** 2) / (1 + t ** 2) ** 2
    else:
        f, fp = spec
        xi0 = np.asarray(f(t), dtype=float)
        dxi0 = np.asarray(fp(t), dtype=float)
        if np.any(xi0 == 0):
            j = int(np.flatnonzero(xi0 == 0)[0]) + 1
            raise InvalidProfileError(f"profile vanishes at node {j}")
        c = 1.0 / np.sqrt(np.max(xi0 ** 2) + 2.0 * np.max(np.abs(xi0 * dxi0)))
        xi, dxi = c * xi0, c * dxi0
    if np.any(xi == 0):
        raise InvalidProfileError("profile vanishes at an interior node")
    return WeightProfile(xi, dxi, float(c))


def regularizer_profile(xi, N=None):
    """Diagonal of the regularizer ``Delta``: ``xi^4``, or ``xi^6/(xi^2 + 1/N)`` at level N."""
    xi = np.asarray(xi, dtype=float)
    if N is None:
        return xi ** 4
    return xi ** 6 / (xi ** 2 + 1.0 / N)


def regularized_dirac(op: GridOperator, xi, N=None):
    """``Delta op Delta`` with ``Delta`` the multiplication regularizer."""
    delta = sp.diags(regularizer_profile(xi, N))
    return GridOperator((delta @ op.matrix @ delta).tocsr(), op.grid, "regularized")


# --- lift action --------------------------------------------------------------

def _level_weights(xi, n):
    x2 = xi ** 2
    return xi / np.sqrt((1.0 + n[:, None] * x2) * (1.0 + (n[:, None] - 1.0) * x2))


def halfline_lift_apply(grid: Grid, xi, N, g, chunk=512):
    """``sum_{n<=N} w_n dirac(w_n g)`` with ``w_n = xi sqrt(H_n(xi^2))``.

    Because the stencil is tridiagonal the sum only needs the couplings
    ``sum_n w_n(t_j) w_n(t_(j+1))`` between neighbouring nodes, which are
    accumulated level by level.
    """
    g = np.asarray(g, dtype=complex)
    xi = np.asarray(xi, dtype=float)
    if g.shape != (grid.M,) or xi.shape != (grid.M,):
        raise ValueError("grid functions must have one value per node")
    scale = max(np.max(np.abs(g)), np.finfo(float).tiny)
    edge = np.concatenate([g[:BOUNDARY_NODES], g[-BOUNDARY_NODES:]])
    if np.any(np.abs(edge) > 1e-14 * scale):
        raise DomainViolationError(
            f"g must vanish on the {BOUNDARY_NODES} nodes next to each endpoint")
    couple = np.zeros(grid.M - 1)
    for start in range(1, N + 1, chunk):
        n = np.arange(start, min(N, start + chunk - 1) + 1, dtype=float)
        w = _level_weights(xi, n)
        couple += np.sum(w[:, :-1] * w[:, 1:], axis=0)
    out = np.zeros(grid.M, dtype=complex)
    c = 1j / (2.0 * grid.h)
    out[:-1] += c * couple * g[1:]
    out[1:] -= c * couple * g[:-1]
    return out


def bump(t, a=2.0, b=6.0):
    """Smooth bump supported on ``[a, b]`` and its derivative."""
    t = np.asarray(t, dtype=float)
    s = (2.0 * t - (a + b)) / (b - a)
    inside = np.abs(s) < 1
    g = np.zeros_like(t)
    dg = np.zeros_like(t)
    si = s[inside]
    q = 1.0 - si ** 2
    g[inside] = np.exp(1.0 - 1.0 / q)
    dg[inside] = g[inside] * (-2.0 * si / q ** 2) * (2.0 / (b - a))
    return g, dg


def exp_probe(grid: Grid):
    return np.exp(-grid.nodes).astype(complex)


def lift_apply_error(grid: Grid, N, probe=bump, profile=None):
    """``||lift(g) - i g'|| / ||g'||`` for the lift of the Dirac operator."""
    wp = weight_profile(grid, profile)
    g, dg = probe(grid.nodes)
    out = halfline_lift_apply(grid, wp.xi, N, g)
    return float(np.linalg.norm(out - 1j * dg) / np.linalg.norm(dg))


def fit_error_model(samples):
    """Non-negative fit of ``err = C1/N + C2 h^2`` to ``(N, h, err)`` samples."""
    samples = np.asarray(samples, dtype=float)
    A = np.column_stack([1.0 / samples[:, 0], samples[:, 1] ** 2])
    coef, _ = scipy.optimize.nnls(A, samples[:, 2])
    return float(coef[0]), float(coef[1])


# --- range defects --------------------------------------------------------------

def _banded_upper(S, bw):
    """Upper banded storage of a Hermitian sparse matrix for ``solveh_banded``."""
    n = S.shape[0]
    ab = np.zeros((bw + 1, n), dtype=complex)
    for k in range(bw + 1):
        diag = S.diagonal(k)
        ab[bw - k, k:] = diag
    return ab


def range_defect(op: GridOperator, sign, u):
    """``min_g ||(op + sign i) g - u|| / ||u||`` over g vanishing at both end nodes.

    ``sign = -1`` measures the distance to ``ran(op - i)`` and ``sign = +1``
    to ``ran(op + i)``.
    """
    if sign not in (-1, 1):
        raise ValueError("sign must be -1 or +1")
    u = np.asarray(u, dtype=complex)
    nu = np.linalg.norm(u)
    if nu == 0:
        raise ValueError("probe must be nonzero")
    M = op.grid.M
    A = (op.matrix + sign * 1j * sp.identity(M, format="csr"))[:, 1:M - 1].tocsc()
    S = (A.conj().T @ A).tocsr()
    half_bw = max(abs(int(k)) for k in sp.find(A)[0] - sp.find(A)[1]) if A.nnz else 0
    ab = _banded_upper(S, 2 * max(1, half_bw))
    try:
        g = scipy.linalg.solveh_banded(ab, A.conj().T @ u)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"least-squares normal equations not positive definite ({exc})") from None
    res = A @ g - u
    return float(np.linalg.norm(res) / nu)


@dataclass(frozen=True)
class ContrastRow:
    h: float
    M: int
    sign: int
    regularized: bool
    defect: float


def regularization_contrast(grids, probe=exp_probe, profile=None, N=None):
    """Range defects of the minimal and regularized operators along a ladder."""
    rows = []
    for grid in grids:
        op = build_dirac(grid)
        reg = regularized_dirac(op, weight_profile(grid, profile).xi, N)
        u = probe(grid)
        for regularized, o in ((False, op), (True, reg)):
            for sign in (-1, 1):
                rows.append(ContrastRow(grid.h, grid.M, sign, regularized, range_defect(o, sign, u)))
    return rows
