"""Random instances shared by the test modules."""

import numpy as np

from risbc.scenario import ChannelSet


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_channels(rng, k=3, n_t=4, n_r=2, n_el=6, n_k=None, scale=1.0):
    antennas = n_k or [n_r] * k
    D = [scale * crandn(rng, n, n_t) for n in antennas]
    U = crandn(rng, n_el, n_t)
    G = [scale * crandn(rng, n, n_el) for n in antennas]
    return ChannelSet.from_matrices(D, U, G)


def random_psd(rng, n, trace=1.0, rank=None):
    a = crandn(rng, n, rank or n)
    s = a @ a.conj().T
    return s * (trace / np.real(np.trace(s)))


def random_covariances(rng, antennas, power=1.0):
    S = [random_psd(rng, n) for n in antennas]
    w = rng.dirichlet(np.ones(len(S)))
    return [s * (power * wi) for s, wi in zip(S, w)]


def random_hermitian(rng, n):
    a = crandn(rng, n, n)
    return (a + a.conj().T) / 2


def random_theta(rng, n):
    return np.exp(1j * rng.uniform(0, 2 * np.pi, n))


def random_matrices(rng, k=3, n_t=4, n_r=2):
    return [crandn(rng, n_r, n_t) for _ in range(k)]
