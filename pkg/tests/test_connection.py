import numpy as np
import pytest

from absorbtk.absorb import build_isometry
from absorbtk.connection import (
    ConnectionValue,
    apply_pairing,
    connection_bound,
    grassmann,
    hermitian_residual,
    leibniz_residual,
    omega_algebra,
    random_smooth_input,
    smooth_sample,
)
from absorbtk.cstar import AlgebraContext, builtin_instance, delta_norm, derive
from absorbtk.errors import NotInAlgebraError
from absorbtk.module import ModulePresentation
from absorbtk.opcore import adjoint, op_norm

from conftest import INSTANCES, random_element


def _smooth(sys, rng, levels=1):
    return smooth_sample(sys, random_smooth_input(sys, rng, levels))


def _frame_norm(sys, u):
    y = sys.apply(u)
    return np.sqrt(op_norm(adjoint(y) @ y))


@pytest.mark.parametrize("name, dim", [("scalar", 1), ("pauli", 4), ("clockshift:8", 64), ("projective:4", 16)])
def test_omega_dimension(name, dim):
    ctx, _ = builtin_instance(name)
    om = omega_algebra(ctx)
    assert om.dim == dim
    assert np.allclose(om.frame.conj() @ om.frame.T, np.eye(dim), atol=1e-12)


def test_omega_closed_under_products():
    ctx, _ = builtin_instance("projective:4")
    om = omega_algebra(ctx)
    rng = np.random.default_rng(3)
    a, b = [(rng.standard_normal(om.dim) @ om.frame).reshape(4, 4) for _ in range(2)]
    assert om.membership_residual(a @ b) <= 1e-10
    assert om.membership_residual(adjoint(a)) <= 1e-10
    for x in ctx.basis:
        assert om.membership_residual(ctx.commutator(x)) <= 1e-10


@pytest.mark.parametrize("name", INSTANCES)
def test_smooth_sample_zero(name, systems):
    sys = systems(name, 8)
    out = smooth_sample(sys, np.zeros((sys.W.shape[0], sys.d), dtype=complex))
    assert not np.any(out)


def _diagonal_system(N=4):
    ctx = AlgebraContext("diag", 2, (np.diag([1.0, 0.0]), np.diag([0.0, 1.0])), np.diag([1.0, -1.0]))
    pres = ModulePresentation(ctx, (0.5 * np.eye(2, dtype=complex)[None],))
    return build_isometry(pres, N)


def test_smooth_sample_rejects_non_algebra():
    sys = _diagonal_system()
    x = np.zeros((sys.W.shape[0], sys.d), dtype=complex)
    x[2, 1] = 1.0  # off-diagonal entry of block 2
    with pytest.raises(NotInAlgebraError) as exc:
        smooth_sample(sys, x)
    assert exc.value.index == 2


def test_smooth_sample_shape(systems):
    sys = systems("pauli", 4)
    with pytest.raises(ValueError):
        smooth_sample(sys, np.zeros((3, 2)))


def test_grassmann_linear(systems, rng):
    sys = systems("pauli", 16)
    xi, eta = _smooth(sys, rng), _smooth(sys, rng)
    s = 0.3 - 1.7j
    lhs = grassmann(sys, xi + s * eta)
    rhs = grassmann(sys, xi) + s * grassmann(sys, eta)
    assert np.allclose(lhs.slots, rhs.slots, atol=1e-13)
    assert isinstance(rhs, ConnectionValue)


def test_grassmann_slots_in_omega(systems, rng):
    sys = systems("clockshift:8", 8)
    om = omega_algebra(sys.ctx)
    val = grassmann(sys, _smooth(sys, rng))
    assert om.block_residuals(val.slots).max() <= 1e-10


def test_trivial_derivation_gives_zero(systems, rng):
    sys = systems("scalar", 32)
    xi, eta = _smooth(sys, rng), _smooth(sys, rng)
    a = random_element(sys.ctx, rng)
    assert grassmann(sys, xi).norm() == 0
    assert leibniz_residual(sys, xi, a) <= 1e-12
    assert hermitian_residual(sys, xi, eta) <= 1e-12


@pytest.mark.parametrize("name", ["pauli", "projective:4"])
def test_leibniz_with_identity(name, systems, rng):
    sys = systems(name, 16)
    xi = _smooth(sys, rng)
    assert leibniz_residual(sys, xi, np.eye(sys.d)) <= 1e-13


@pytest.mark.parametrize("name", ["pauli", "clockshift:8", "projective:4"])
def test_leibniz_closed_form(name, systems, rng):
    sys = systems(name, 16)
    xi = _smooth(sys, rng)
    a = random_element(sys.ctx, rng)
    # the defect is (sum_n H_n G - 1) xi delta(a)
    S = sum(sys.chain.H[:16]) @ sys.G
    expected = _frame_norm(sys, (S - np.eye(S.shape[0])) @ xi @ derive(sys.ctx, a))
    assert leibniz_residual(sys, xi, a) == pytest.approx(expected, rel=1e-6, abs=1e-14)


def test_leibniz_rejects_non_algebra(rng):
    sys = _diagonal_system()
    a = np.ones((2, 2))
    with pytest.raises(NotInAlgebraError):
        leibniz_residual(sys, _smooth(sys, rng), a)


def test_pairing_matches_inner_product_when_delta_trivial(systems, rng):
    sys = systems("pauli", 8)
    xi, eta = _smooth(sys, rng), _smooth(sys, rng)
    val = grassmann(sys, eta)
    # the pairing is conjugate-linear in its first argument
    assert np.allclose(apply_pairing(sys, 2j * xi, val), -2j * apply_pairing(sys, xi, val))


def test_bounds_on_invertible_gram(systems, rng):
    for N in (8, 16, 32, 64):
        sys = systems("pauli", N)
        xi, eta = _smooth(sys, rng), _smooth(sys, rng)
        a = random_element(sys.ctx, rng)
        an = delta_norm(sys.ctx, a)
        bound = connection_bound(sys, xi, an)
        assert leibniz_residual(sys, xi, a) <= bound
        assert hermitian_residual(sys, xi, eta) <= bound


def test_bound_infinite_on_singular_gram(systems, rng):
    sys = systems("projective:4", 8)
    assert connection_bound(sys, _smooth(sys, rng), 1.0) == np.inf


@pytest.mark.parametrize("name", ["pauli", "clockshift:8", "projective:4"])
def test_residuals_decrease_with_level(name, systems):
    leib, herm = [], []
    for N in (8, 16, 32, 64):
        sys = systems(name, N)
        r = np.random.default_rng(11)
        xi, eta = _smooth(sys, r), _smooth(sys, r)
        a = random_element(sys.ctx, r)
        leib.append(leibniz_residual(sys, xi, a))
        herm.append(hermitian_residual(sys, xi, eta))
    assert all(b < a for a, b in zip(leib, leib[1:]))
    assert all(b < a for a, b in zip(herm, herm[1:]))
