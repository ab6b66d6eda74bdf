"""Shared oracles: brute-force Kronecker constructions independent of the package internals."""

from functools import reduce

import numpy as np
import pytest

X = np.array([[0.0, 1.0], [1.0, 0.0]])
Z = np.diag([-1.0, 1.0])  # local index 0 = down, 1 = up
I2 = np.eye(2)


def kron_sites(ops: dict, L: int) -> np.ndarray:
    """Operator on the full 2^L space with ``ops[site]`` on each listed site.

    Full-space index = mask with bit i for site i, so the Kronecker
    product runs from site L-1 (most significant) down to site 0.
    """
    return reduce(np.kron, [ops.get(s, I2) for s in reversed(range(L))])


def brute_hamiltonian(J, Jp, Jn, Jnp, L) -> np.ndarray:
    H = np.zeros((2**L, 2**L))
    for d, cx, cz in ((1, -J, Jp), (2, -Jn, Jnp)):
        for i in range(L - d):
            H += cx * kron_sites({i: X, i + d: X}, L) + cz * kron_sites({i: Z, i + d: Z}, L)
    return H


def sector_indices(L, p):
    return [m for m in range(2**L) if bin(m).count("1") == p]


def random_density(d, rng, rank=None):
    rank = rank or d
    a = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def random_pure(d, rng):
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return v / np.linalg.norm(v)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
