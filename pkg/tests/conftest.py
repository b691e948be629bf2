import numpy as np
import pytest

from absorbtk.absorb import build_isometry, resolvent_chain
from absorbtk.cstar import builtin_instance
from absorbtk.module import gram, rescale

INSTANCES = ("scalar", "pauli", "clockshift:8", "projective:4")


def random_hermitian(rng, k, scale=1.0):
    z = rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))
    h = z + z.conj().T
    return scale * h / np.linalg.norm(h, 2)


def random_psd(rng, k, top=10.0):
    z = rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))
    q, _ = np.linalg.qr(z)
    lam = rng.uniform(0.0, top, k)
    return (q * lam) @ q.conj().T


def random_element(ctx, rng):
    a = (rng.standard_normal(ctx.dim) + 1j * rng.standard_normal(ctx.dim)) @ ctx.frame
    return a.reshape(ctx.d, ctx.d)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


@pytest.fixture(scope="session")
def normalized():
    """Rescaled presentation and a 512-level chain for every builtin instance."""
    out = {}
    for name in INSTANCES:
        ctx, pres = builtin_instance(name)
        pres = rescale(pres)
        out[name] = (ctx, pres, resolvent_chain(gram(pres).data, 512))
    return out


@pytest.fixture(scope="session")
def systems(normalized):
    cache = {}

    def get(name, N):
        if (name, N) not in cache:
            ctx, pres, chain = normalized[name]
            cache[name, N] = build_isometry(pres, N, chain)
        return cache[name, N]
    return get


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
