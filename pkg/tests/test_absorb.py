import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from absorbtk.absorb import (
    build_K,
    build_isometry,
    decay_profile,
    diff_compact_tail,
    isometry_defect,
    isometry_defects_by_level,
    resolvent_chain,
    tail_level_bound,
    telescoping_residuals,
)
from absorbtk.cstar import builtin_instance
from absorbtk.opcore import adjoint, op_norm

from conftest import INSTANCES, random_psd


def test_chain_identity_gram():
    chain = resolvent_chain(np.eye(3), 6)
    for n in range(1, 7):
        assert np.allclose(chain.Gn[n - 1], n / (n + 1) * np.eye(3))
        assert np.allclose(chain.H[n - 1], np.eye(3) / (n * (n + 1)))
        assert np.allclose(chain.sqrtH[n - 1], np.eye(3) / np.sqrt(n * (n + 1)))


def test_telescoping_identity_gram():
    chain = resolvent_chain(np.eye(2), 9)
    assert np.allclose(sum(chain.H), 0.9 * np.eye(2), atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_telescoping_random_psd(seed):
    G = random_psd(np.random.default_rng(seed), 8, 2.0)
    chain = resolvent_chain(G, 64)
    assert telescoping_residuals(chain).max() <= 1e-10
    for h in chain.H:
        assert np.linalg.eigvalsh(h)[0] > 0


def test_chain_rejects_zero_levels():
    with pytest.raises(ValueError):
        resolvent_chain(np.eye(2), 0)


def test_scalar_level_weights():
    _, pres = builtin_instance("scalar")
    sys = build_isometry(pres, 10)
    w = sys.W.ravel().real
    n = np.arange(1, 11)
    assert np.allclose(w, 1 / np.sqrt(n * (n + 1)))
    for N in (1, 5, 10):
        assert np.sum(w[:N] ** 2) == pytest.approx(N / (N + 1))


@pytest.mark.parametrize("N", [1, 4, 17, 100])
def test_identity_defect_exact(N):
    _, pres = builtin_instance("scalar")
    assert abs(build_isometry(pres, N).dfct - 1 / (N + 1)) <= 1e-12


def test_defect_law_pauli(systems):
    for N in (4, 8, 16, 32, 64, 128, 256):
        assert systems("pauli", N).dfct * N <= 1 + 1e-9


@pytest.mark.parametrize("name", INSTANCES)
def test_defect_by_level_matches_direct(name, normalized, systems):
    chain = normalized[name][2]
    by_level = isometry_defects_by_level(chain)
    for N in (3, 40):
        assert by_level[N - 1] == pytest.approx(systems(name, N).dfct, abs=1e-14)
        assert isometry_defect(chain.G, chain.sqrtH[:N]) == pytest.approx(systems(name, N).dfct, abs=1e-14)


def test_pairing_and_frame_vectors(systems):
    sys = systems("pauli", 3)
    assert len(sys.pairing.forward) == sys.N * sys.J
    eta = np.arange(8, dtype=complex).reshape(4, 2)
    y = sys.apply(eta)
    # <zeta_k, eta> is the k-th block of W eta
    for k in range(1, sys.N * sys.J + 1):
        z = sys.frame_vector(k)
        assert np.allclose(adjoint(z) @ sys.G @ eta, y[(k - 1) * 2:k * 2], atol=1e-14)


@pytest.mark.parametrize("name", ["pauli", "scalar"])
def test_frame_reconstruction(name, systems, rng):
    for N in (4, 16, 64):
        sys = systems(name, N)
        eta = rng.standard_normal((sys.size, sys.d)) + 1j * rng.standard_normal((sys.size, sys.d))
        g_min, g_max = sys.gram_extremes
        bound = sys.dfct * sys.coefficient_norm(eta) * sys.condition / min(1.0, g_max)
        assert sys.frame_reconstruction_residual(eta) <= bound * (1 + 1e-9)


def test_build_K_scalar(systems):
    for N in (1, 8, 32):
        kr = build_K(systems("scalar", N))
        assert kr.lambda_min == pytest.approx(N / (N + 1))
        assert kr.dense_image_certified


@pytest.mark.parametrize("name", INSTANCES)
def test_build_K_commutes(name, systems):
    sys = systems(name, 16)
    kr = build_K(sys)
    assert kr.commutator_residual <= 1e-10
    dense = op_norm(kr.K @ kr.P - kr.P @ kr.K)
    assert dense <= 1e-10
    assert np.allclose(kr.P, sys.W @ sys.Wstar)


def test_build_K_singular_gram_flagged(systems):
    kr = build_K(systems("projective:4", 16))
    assert abs(kr.lambda_min) <= 1e-12
    assert not kr.dense_image_certified
    assert build_K(systems("pauli", 16)).lambda_min > 0


def test_decay_zero_derivation(systems):
    prof = decay_profile(systems("scalar", 64), range(1, 65))
    assert prof.exact_zero
    assert prof.slope is None
    assert not np.any(prof.r)


def test_decay_range_validation(systems):
    with pytest.raises(ValueError):
        decay_profile(systems("pauli", 8), [0, 4])
    with pytest.raises(ValueError):
        decay_profile(systems("pauli", 8), [4, 10_000])


@pytest.mark.parametrize("name", ["pauli", "projective:4"])
def test_decay_engines_and_direct_commutator(name, systems):
    sys = systems(name, 128)
    prof = decay_profile(sys, [1, 2, 8, 32, 128])
    assert prof.agreement <= 1e-8
    G2 = sys.G @ sys.G
    for n, r, ri in prof.rows():
        direct = op_norm(sys.ctx.commutator(sys.chain.sqrtH[n - 1] @ G2))
        assert r == pytest.approx(direct, rel=1e-8, abs=1e-14)
        assert ri == pytest.approx(r, rel=1e-8, abs=1e-14)


def test_decay_slope_pauli(systems):
    prof = decay_profile(systems("pauli", 512), range(16, 513), double_check=False)
    assert -1.2 <= prof.slope <= -0.8


def test_tail_zero_derivation(systems):
    assert diff_compact_tail(systems("scalar", 64), 8, 16) == 0.0


@pytest.mark.parametrize("name", ["pauli", "projective:4", "clockshift:8"])
def test_tail_lowrank_matches_dense(name, systems):
    sys = systems(name, 16)
    assert diff_compact_tail(sys, 4, 8) == pytest.approx(diff_compact_tail(sys, 4, 8, dense=True), rel=1e-9)


def test_tail_decreasing_and_bounded(systems):
    sys = systems("pauli", 128)
    tails = [diff_compact_tail(sys, N, 2 * N) for N in (8, 16, 32, 64)]
    assert all(b < a for a, b in zip(tails, tails[1:]))
    for N, t in zip((8, 16, 32, 64), tails):
        bound, r = tail_level_bound(sys, N, 2 * N)
        assert t <= bound
        assert len(r) == N


def test_tail_argument_validation(systems):
    with pytest.raises(ValueError):
        diff_compact_tail(systems("pauli", 16), 8, 8)
