"""Truncated absorption isometry, the regularizing operator K, and decay data.

All operators act on coefficient vectors (see :mod:`absorbtk.module`). For a
Gram matrix ``G`` and level count ``N``:

* ``G_n = (G + 1/n)^(-1)`` and ``H_n = G_n - G_(n-1)`` with ``G_0 = 0``;
* ``W`` stacks the level blocks ``sqrt(H_n) G`` (an ``(N J d) x (J d)``
  matrix, rows ordered by :func:`~absorbtk.module.pairing_index`);
* ``W*`` is the row ``[sqrt(H_1), ..., sqrt(H_N)]``; it is the adjoint of
  ``W`` for the Gram inner product on X, not the plain conjugate transpose;
* ``K`` is ``G`` repeated on every level and ``P = W W*``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .module import ModulePresentation, PairingTable, gram, pairing_index
from .opcore import (
    QuadratureSpec,
    adjoint,
    calc_derivative_spectral,
    herm_function,
    inv_sqrt_derivative_integral,
    op_norm,
)

__all__ = [
    "ResolventChain",
    "AbsorptionSystem",
    "KReport",
    "DecayProfile",
    "resolvent_chain",
    "telescoping_residuals",
    "build_isometry",
    "build_K",
    "decay_profile",
    "diff_compact_tail",
    "tail_level_bound",
    "isometry_defect",
    "isometry_defects_by_level",
    "lowrank_norm",
]


def lowrank_norm(L, R):
    """``||L R*||`` computed from thin QR factors of ``L`` and ``R``."""
    _, rl = np.linalg.qr(L)
    _, rr = np.linalg.qr(R)
    return op_norm(rl @ adjoint(rr))


@dataclass(frozen=True, eq=False)
class ResolventChain:
    G: np.ndarray
    Gn: tuple
    H: tuple
    sqrtH: tuple

    @property
    def N(self):
        return len(self.H)


def resolvent_chain(G, N):
    """``G_n``, ``H_n`` and ``sqrt(H_n)`` for ``n = 1..N``.

    Everything is computed from one eigendecomposition of ``G``, which keeps
    the error of ``G_n = (G + 1/n)^(-1)`` near ``eps ||G_n||`` even when ``G``
    is singular. ``H_n`` uses the product ``(1 + nG)^(-1) (1 + (n-1)G)^(-1)``
    in that eigenbasis rather than the difference of consecutive ``G_n``, so
    the telescoping sum is a genuine check.
    """
    G = np.asarray(G, dtype=complex)
    if N < 1:
        raise ValueError("N must be >= 1")
    lam, V = np.linalg.eigh(0.5 * (G + adjoint(G)))
    lam = np.clip(lam, 0.0, None)
    Vh = adjoint(V)
    Gn, H, sqrtH = [], [], []
    for n in range(1, N + 1):
        Gn.append((V * (n / (1.0 + n * lam))) @ Vh)
        h = 1.0 / ((1.0 + n * lam) * (1.0 + (n - 1) * lam))
        H.append((V * h) @ Vh)
        sqrtH.append((V * np.sqrt(h)) @ Vh)
    return ResolventChain(G, tuple(Gn), tuple(H), tuple(sqrtH))


def telescoping_residuals(chain: ResolventChain):
    """``||sum_{n<=N} H_n - (G + 1/N)^(-1)||`` for every ``N`` in the chain."""
    acc = np.zeros_like(chain.G)
    out = np.empty(chain.N)
    for i, h in enumerate(chain.H):
        acc = acc + h
        out[i] = op_norm(acc - chain.Gn[i])
    return out


def isometry_defect(G, sqrtH):
    """``||W* W - 1||`` in Gram form, i.e. ``||sum_n G sqrt(H_n)^2 G - G||``."""
    acc = sum(G @ s @ s @ G for s in sqrtH)
    return op_norm(acc - G)


def isometry_defects_by_level(chain):
    """``dfct(N)`` for every ``N`` in the chain, accumulated level by level."""
    G = chain.G
    acc = np.zeros_like(G)
    out = np.empty(chain.N)
    for i, s in enumerate(chain.sqrtH):
        v = s @ G
        acc = acc + adjoint(v) @ v
        out[i] = op_norm(acc - G)
    return out


@dataclass(frozen=True, eq=False)
class AbsorptionSystem:
    pres: ModulePresentation
    N: int
    G: np.ndarray
    chain: ResolventChain
    W: np.ndarray
    Wstar: np.ndarray
    pairing: PairingTable
    dfct: float
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def d(self):
        return self.pres.d

    @property
    def J(self):
        return self.pres.J

    @property
    def ctx(self):
        return self.pres.ctx

    @property
    def size(self):
        return self.G.shape[0]

    def level(self, n):
        """Rows of ``W`` belonging to level ``n`` (1-based)."""
        s = self.size
        return slice((n - 1) * s, n * s)

    def frame_vector(self, k):
        """Coefficient vector of the frame element zeta_k (1-based flat index)."""
        d = self.d
        return self.Wstar[:, (k - 1) * d:k * d]

    def apply(self, coeffs):
        """``W`` on a coefficient vector; returns an H_A block column."""
        return self.W @ coeffs

    def apply_adjoint(self, x):
        """``W*`` on an H_A block column; returns a coefficient vector."""
        return self.Wstar @ x

    def K_apply(self, x):
        """``K`` on an ``(N J d) x k`` block column without forming ``K``."""
        s = self.size
        return (self.G @ x.reshape(self.N, s, -1)).reshape(x.shape)

    def K_matrix(self):
        return np.kron(np.eye(self.N), self.G)

    def P_matrix(self):
        if "P" not in self._cache:
            self._cache["P"] = self.W @ self.Wstar
        return self._cache["P"]

    def coefficient_norm(self, c):
        return np.sqrt(op_norm(adjoint(c) @ self.G @ c))

    @property
    def condition(self):
        lam = np.linalg.eigvalsh(self.G)
        return float(lam[-1] / lam[0]) if lam[0] > 0 else float("inf")

    @property
    def gram_extremes(self):
        lam = np.linalg.eigvalsh(self.G)
        return float(lam[0]), float(lam[-1])

    def frame_reconstruction_residual(self, c):
        """X-norm of ``sum_k zeta_k <zeta_k, eta> - eta`` for coefficients ``c``."""
        return self.coefficient_norm(self.Wstar @ (self.W @ c) - c)


def build_isometry(pres: ModulePresentation, N, chain: ResolventChain | None = None):
    """Assemble the truncated isometry with ``N`` levels.

    ``chain`` may be supplied (with at least ``N`` levels) to reuse work
    across truncation levels.
    """
    G = gram(pres).data
    if chain is None or chain.N < N:
        chain = resolvent_chain(G, N)
    sq = chain.sqrtH[:N]
    W = np.vstack([s @ G for s in sq])
    Wstar = np.hstack(sq)
    dfct = op_norm(adjoint(W) @ W - G)
    return AbsorptionSystem(pres, N, G, chain, W, Wstar, pairing_index(N, pres.J), dfct)


@dataclass(frozen=True, eq=False)
class KReport:
    K: np.ndarray | None
    P: np.ndarray | None
    commutator_residual: float
    lambda_min: float
    WKW: np.ndarray

    @property
    def dense_image_certified(self):
        return self.lambda_min > 1e-12


def build_K(sys: AbsorptionSystem, dense=None):
    """``K``, ``P``, ``||KP - PK||`` and the smallest eigenvalue of ``W* K W``.

    The commutator is evaluated through the rank-``2 J d`` factorization
    ``KP - PK = (K W) W* - W (W* K)``; the dense ``K`` and ``P`` are only
    materialized for small systems (or when ``dense`` is true).
    """
    W, Ws = sys.W, sys.Wstar
    KW = sys.K_apply(W)
    WsK = adjoint(sys.K_apply(adjoint(Ws)))  # K is Hermitian
    L = np.hstack([KW, W])
    R = np.hstack([adjoint(Ws), -adjoint(WsK)])
    resid = lowrank_norm(L, R)
    WKW = Ws @ KW
    lam = float(np.linalg.eigvalsh(0.5 * (WKW + adjoint(WKW)))[0])
    if dense is None:
        dense = W.shape[0] <= 2048
    K = sys.K_matrix() if dense else None
    P = sys.P_matrix() if dense else None
    return KReport(K, P, resid, lam, WKW)


# --- decay of delta(sqrt(H_n) G^2) ------------------------------------------

def _inv_sqrt(n):
    return (lambda lam: (1.0 + n * lam) ** -0.5,
            lambda lam: -0.5 * n * (1.0 + n * lam) ** -1.5)


def _delta_level(G, dG, sqrtH_n, n, engine, quad):
    """``delta(sqrt(H_n) G^2)`` from the product-rule expansion."""
    def d_inv_sqrt(k):
        if k == 0:
            return np.zeros_like(G)
        if engine == "spectral":
            return calc_derivative_spectral(G, dG, *_inv_sqrt(k))
        return inv_sqrt_derivative_integral(G, dG, k, quad)

    A = herm_function(G, _inv_sqrt(n)[0])
    B = herm_function(G, _inv_sqrt(n - 1)[0])
    out = dG @ sqrtH_n @ G + G @ sqrtH_n @ dG
    out = out + G @ d_inv_sqrt(n) @ B @ G + G @ A @ d_inv_sqrt(n - 1) @ G
    return out


@dataclass(frozen=True)
class DecayProfile:
    n: np.ndarray
    r: np.ndarray
    r_integral: np.ndarray | None
    agreement: float
    slope: float | None
    slope_full: float | None
    exact_zero: bool

    def rows(self):
        for i, n in enumerate(self.n):
            ri = None if self.r_integral is None else float(self.r_integral[i])
            yield int(n), float(self.r[i]), ri


def _loglog_slope(n, r):
    if len(n) < 2:
        return None
    return float(np.polyfit(np.log(n), np.log(r), 1)[0])


def decay_profile(sys: AbsorptionSystem, n_range, double_check=True,
                  quad: QuadratureSpec | None = None):
    """``r_n = ||delta(sqrt(H_n) G^2)||`` over ``n_range`` and its log-log slope.

    ``slope`` is fitted over the upper half of ``n_range`` and
    ``slope_full`` over all of it. With ``double_check`` every ``r_n`` is
    also computed with the resolvent-integral engine and the largest
    discrepancy between the two derivative matrices is reported.
    """
    n_range = np.asarray(sorted(set(int(n) for n in n_range)))
    if n_range.size == 0 or n_range[0] < 1 or n_range[-1] > sys.chain.N:
        raise ValueError(f"n_range must lie within 1..{sys.chain.N}")
    G = sys.G
    dG = sys.ctx.commutator(G)
    r = np.empty(n_range.size)
    ri = np.empty(n_range.size) if double_check else None
    agreement = 0.0
    for i, n in enumerate(n_range):
        sq = sys.chain.sqrtH[n - 1]
        spec = _delta_level(G, dG, sq, n, "spectral", quad)
        r[i] = op_norm(spec)
        if double_check:
            integ = _delta_level(G, dG, sq, n, "integral", quad)
            ri[i] = op_norm(integ)
            agreement = max(agreement, op_norm(spec - integ))
    if np.all(r < 1e-14):
        return DecayProfile(n_range, r, ri, agreement, None, None, True)
    half = n_range >= n_range[0] + (n_range[-1] - n_range[0]) / 2
    return DecayProfile(n_range, r, ri, agreement,
                        _loglog_slope(n_range[half], r[half]),
                        _loglog_slope(n_range, r), False)


# --- Cauchy tails of diag(G)^2 V_N V_N* ---------------------------------------

def _tail_factors(sys, N1, N2):
    """Factors ``L, R`` with ``T_N2 - T_N1 = L R*`` (``T_N1`` zero-padded)."""
    G = sys.G
    sq = sys.chain.sqrtH
    G2 = G @ G
    # T_N has blocks (G^2 sqrt(H_m)) (sqrt(H_n) G)^*
    A = [G2 @ sq[m] for m in range(N2)]
    B = [sq[m] @ G for m in range(N2)]
    A2, B2 = np.vstack(A), np.vstack(B)
    zero = np.zeros_like(G)
    A1 = np.vstack(A[:N1] + [zero] * (N2 - N1))
    B1 = np.vstack(B[:N1] + [zero] * (N2 - N1))
    return np.hstack([A2, A1]), np.hstack([B2, -B1])


def diff_compact_tail(sys: AbsorptionSystem, N1, N2, dense=False):
    """``||delta(T_N2 - T_N1)||`` with ``T_N = diag(G)^2 V_N V_N*``.

    The difference has rank at most ``2 J d`` and its derivative at most
    ``4 J d``, which keeps the norm cheap; ``dense=True`` forms the full
    matrix instead (used to validate the factorization).
    """
    if not 1 <= N1 < N2 <= sys.chain.N:
        raise ValueError("need 1 <= N1 < N2 <= chain length")
    L, R = _tail_factors(sys, N1, N2)
    comm = sys.ctx.commutator
    if dense:
        T = L @ adjoint(R)
        return op_norm(comm(T))
    DL = comm_blocks(sys, L)
    DR = comm_blocks(sys, R)
    return lowrank_norm(np.hstack([DL, L]), np.hstack([R, -DR]))


def comm_blocks(sys, X):
    """Left multiplication by the derivation generator on every d-block row."""
    d = sys.d
    rows = X.shape[0] // d
    return (sys.ctx.D0 @ X.reshape(rows, d, -1)).reshape(X.shape)


def tail_level_bound(sys: AbsorptionSystem, N1, N2):
    """Per-level upper bound for :func:`diff_compact_tail`.

    ``T_N2 - T_N1`` splits into strips ``S_n`` (blocks with ``max(m, n') = n``)
    for ``n = N1+1..N2``, each bounded by
    ``2 (r_n ||F_n|| + ||C_n|| ||delta(F_n)||)`` where ``C_n = sqrt(H_n) G^2``,
    ``r_n = ||delta(C_n)||`` and ``F_n`` is the row ``[G sqrt(H_m)]_{m<=n}``.
    Returns the summed bound and the per-level ``r_n``.
    """
    G = sys.G
    comm = sys.ctx.commutator
    sq = sys.chain.sqrtH
    FF = np.zeros_like(G)
    dFF = np.zeros_like(G)
    total = 0.0
    rs = []
    for n in range(1, N2 + 1):
        f = G @ sq[n - 1]
        FF = FF + f @ adjoint(f)
        df = comm(f)
        dFF = dFF + df @ adjoint(df)
        if n > N1:
            C = sq[n - 1] @ G @ G
            r_n = op_norm(comm(C))
            rs.append(r_n)
            total += 2.0 * (r_n * np.sqrt(op_norm(FF)) + op_norm(C) * np.sqrt(op_norm(dFF)))
    return total, np.array(rs)
