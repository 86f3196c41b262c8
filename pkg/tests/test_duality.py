import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_covariances, random_hermitian, random_matrices
from risbc.duality import hpd_power, mac_to_bc, verify_duality
from risbc.mac_covariance import dual_decomposition
from risbc.model import bc_user_rates, mac_sum_rate


def test_zero_covariances():
    H = random_matrices(np.random.default_rng(0))
    S_bc = mac_to_bc(H, [np.zeros((2, 2))] * 3)
    assert all(not np.any(s) for s in S_bc)
    rep = verify_duality(H, [np.zeros((2, 2))] * 3, S_bc)
    assert rep.rate_gap == 0 and rep.power_gap == 0 and rep.ok


def test_single_user():
    rng = np.random.default_rng(1)
    H = random_matrices(rng, k=1, n_t=3)
    S = random_covariances(rng, [2], 1.5)
    (s_bc,) = mac_to_bc(H, S)
    h = H[0]
    bc = np.log2(np.linalg.det(np.eye(2) + h @ s_bc @ h.conj().T).real)
    assert bc == pytest.approx(mac_sum_rate(H, S), abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_converged_instance(seed):
    rng = np.random.default_rng(10 + seed)
    H = random_matrices(rng, k=3, n_t=4)
    S, _ = dual_decomposition(H, 2.0)
    S_bc = mac_to_bc(H, S)
    rep = verify_duality(H, S, S_bc)
    rate = mac_sum_rate(H, S)
    assert rep.rate_gap <= 1e-8 * (1 + rate)
    assert rep.power_gap <= 1e-8 * 2.0
    assert rep.ok
    for s in S_bc:
        assert np.max(np.abs(s - s.conj().T)) <= 1e-12
        assert np.linalg.eigvalsh(s)[0] >= -1e-12


def test_every_order_reaches_mac_rate():
    rng = np.random.default_rng(2)
    H = random_matrices(rng, k=3, n_t=3)
    S = random_covariances(rng, [2] * 3, 2.0)
    target = mac_sum_rate(H, S)
    for order in itertools.permutations(range(3)):
        S_bc = mac_to_bc(H, S, order)
        assert bc_user_rates(H, S_bc, order).sum() == pytest.approx(target, abs=1e-9)
        assert verify_duality(H, S, S_bc, order).ok


def test_reversed_order_same_sum_different_covariances():
    rng = np.random.default_rng(3)
    H = random_matrices(rng, k=3)
    S = random_covariances(rng, [2] * 3, 1.0)
    pi = [2, 0, 1]
    a = mac_to_bc(H, S, pi)
    b = mac_to_bc(H, S, pi[::-1])
    sa = bc_user_rates(H, a, pi).sum()
    sb = bc_user_rates(H, b, pi[::-1]).sum()
    assert sa == pytest.approx(sb, abs=1e-8)
    assert max(np.max(np.abs(x - y)) for x, y in zip(a, b)) > 1e-3


def test_detector_flags_perturbation():
    rng = np.random.default_rng(4)
    H = random_matrices(rng, k=2)
    S = random_covariances(rng, [2, 2], 1.0)
    S_bc = mac_to_bc(H, S)
    e = random_hermitian(rng, 4)
    S_bc[0] = S_bc[0] + 0.1 * e / np.linalg.norm(e)
    rep = verify_duality(H, S, S_bc)
    assert rep.rate_gap > 1e-6
    assert not rep.ok


def test_matrix_power_guard():
    assert np.allclose(hpd_power(np.diag([4.0, 1.0]), -0.5), np.diag([0.5, 1.0]))
    with pytest.raises(ValueError):
        hpd_power(np.diag([0.5, 2.0]), 0.5)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 4), n_t=st.integers(2, 5))
def test_duality_preserves_rate_and_power(seed, k, n_t):
    rng = np.random.default_rng(seed)
    H = random_matrices(rng, k=k, n_t=n_t)
    S = random_covariances(rng, [2] * k, float(rng.uniform(0.1, 10)))
    order = list(rng.permutation(k))
    rep = verify_duality(H, S, mac_to_bc(H, S, order), order)
    assert rep.ok, (rep.rate_gap, rep.power_gap)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 3))
def test_more_receive_than_transmit_antennas(seed, k):
    # MAC power in the null space of H_k^H carries no rate and has no BC image
    rng = np.random.default_rng(seed)
    H = random_matrices(rng, k=k, n_t=1, n_r=3)
    S = random_covariances(rng, [3] * k, 2.0)
    rep = verify_duality(H, S, mac_to_bc(H, S))
    assert rep.rate_gap <= 1e-8 * max(1.0, rep.mac_rate)
    assert rep.bc_power <= rep.mac_power + 1e-12
    S_opt, _ = dual_decomposition(H, 2.0)
    assert verify_duality(H, S_opt, mac_to_bc(H, S_opt)).ok
