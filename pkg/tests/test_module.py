import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from absorbtk.cstar import AlgebraContext, InstanceSpec, builtin_instance
from absorbtk.errors import DomainError, NotInAlgebraError
from absorbtk.module import (
    ModulePresentation,
    gram,
    gram_symmetry_residual,
    normalization_excess,
    pairing_index,
    rescale,
)

from conftest import INSTANCES


def test_scalar_gram():
    _, pres = builtin_instance("scalar")
    assert np.array_equal(gram(pres).data, [[1.0]])


def test_orthonormal_generators_give_identity():
    ctx, _ = builtin_instance("pauli")
    I = np.eye(2)
    Z = np.zeros((2, 2))
    pres = ModulePresentation(ctx, (np.stack([I, Z]), np.stack([Z, I])))
    assert np.allclose(gram(pres).data, np.eye(4))


def test_gram_membership_failure_names_block():
    D0 = np.diag([0.0, 1.0])
    ctx = AlgebraContext("diag", 2, (np.diag([1.0, 0.0]), np.diag([0.0, 1.0])), D0)
    u = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
    pres = ModulePresentation(ctx, (np.stack([np.eye(2)]), np.stack([u])))
    with pytest.raises(NotInAlgebraError, match=r"\(1,2\)") as info:
        gram(pres)
    assert info.value.index == (1, 2)


def test_presentation_shape_validation():
    ctx, _ = builtin_instance("pauli")
    with pytest.raises(DomainError):
        ModulePresentation(ctx, (np.zeros((2, 3, 3)),))
    with pytest.raises(DomainError):
        ModulePresentation(ctx, ())


@pytest.mark.parametrize("name", INSTANCES)
def test_gram_symmetric_psd(name):
    _, pres = builtin_instance(name)
    G = gram(pres)
    assert gram_symmetry_residual(G.data) <= 1e-12
    assert np.linalg.eigvalsh(G.data)[0] >= -1e-10
    assert np.max(G.membership) <= 1e-8


def test_rescale_formula_when_already_small():
    ctx, _ = builtin_instance("pauli")
    gens = (0.1 * np.stack([np.eye(2), np.zeros((2, 2))]), 0.1 * np.stack([np.zeros((2, 2)), np.eye(2)]))
    pres = rescale(ModulePresentation(ctx, gens))
    assert pres.scale == pytest.approx((1.0, 0.25))


def test_rescale_scalar_two():
    _, pres = builtin_instance(InstanceSpec("scalar", {"c": 2.0}))
    out = rescale(pres)
    assert out.scale == pytest.approx((0.5,))
    assert np.allclose(gram(out).data, [[1.0]])


@pytest.mark.parametrize("name", INSTANCES)
def test_rescale_bound_and_idempotence(name):
    _, pres = builtin_instance(name)
    once = rescale(pres)
    assert normalization_excess(once) <= 1 + 1e-12
    assert normalization_excess(rescale(once)) <= 1 + 1e-12


def test_rescale_warns_on_zero_generator():
    ctx, _ = builtin_instance("pauli")
    gens = (np.stack([np.eye(2), np.eye(2)]), np.zeros((2, 2, 2)))
    with pytest.warns(UserWarning, match="degenerate generator 2"):
        out = rescale(ModulePresentation(ctx, gens))
    assert out.J == 2


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), J=st.integers(1, 4))
def test_rescale_random_presentation(seed, J):
    rng = np.random.default_rng(seed)
    ctx, _ = builtin_instance("pauli")
    gens = tuple(rng.uniform(0.1, 5) * (rng.standard_normal((2, 2, 2)) + 1j * rng.standard_normal((2, 2, 2)))
                 for _ in range(J))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert normalization_excess(rescale(ModulePresentation(ctx, gens))) <= 1 + 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_coefficient_faithfulness(seed):
    rng = np.random.default_rng(seed)
    _, pres = builtin_instance("pauli")
    G = gram(pres).data
    a = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
    lower = np.linalg.eigvalsh(G)[0] * np.linalg.norm(a, 2) ** 2
    elem = pres.element(a)
    assert np.linalg.norm(elem, 2) ** 2 == pytest.approx(np.linalg.norm(a.conj().T @ G @ a, 2), rel=1e-10)
    assert pres.norm(a) ** 2 >= lower * (1 - 1e-10) > 0


def test_pairing_examples():
    assert pairing_index(1, 3).forward == ((1, 1), (1, 2), (1, 3))
    assert pairing_index(2, 2).forward == ((1, 1), (1, 2), (2, 1), (2, 2))
    table = pairing_index(3, 2)
    assert table(5) == (3, 1)
    assert table.flat(3, 1) == 5
    with pytest.raises(DomainError):
        pairing_index(0, 1)


@settings(max_examples=50, deadline=None)
@given(N=st.integers(1, 32), J=st.integers(1, 32))
def test_pairing_is_bijective(N, J):
    table = pairing_index(N, J)
    for k in range(1, N * J + 1):
        assert table.flat(*table(k)) == k
        n1, n2 = table(k)
        assert k == (n1 - 1) * J + n2
