import numpy as np
import pytest
from scipy.linalg import expm


def skew(rng, n, scale=0.5):
    c = scale * (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    return 0.5 * (c - c.conj().T)


def random_unitary_loop(theta, seed=0, n=2, n_modes=3, scale=0.5):
    """Smooth unitary loop with value Id at theta = 0."""
    rng = np.random.default_rng(seed)
    nt = len(theta)
    K = np.zeros((nt, n, n), complex)
    K += skew(rng, n, scale)[None]
    for k in range(1, n_modes + 1):
        K += skew(rng, n, scale / k ** 2)[None] * np.cos(k * theta)[:, None, None]
        K += skew(rng, n, scale / k ** 2)[None] * np.sin(k * theta)[:, None, None]
    U = np.array([expm(M) for M in K])
    return U @ np.linalg.inv(U[0])


def random_holomorphic_loop(theta, seed=0, n=2, n_modes=4, scale=0.4):
    """exp of an analytic polynomial loop: holomorphic with holomorphic
    inverse."""
    rng = np.random.default_rng(seed)
    nt = len(theta)
    P = np.zeros((nt, n, n), complex)
    for k in range(n_modes):
        c = scale * (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
        P += (c / (1 + k) ** 2)[None] * np.exp(1j * k * theta)[:, None, None]
    return np.array([expm(M) for M in P])


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
