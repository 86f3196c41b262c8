"""Composite channel, dual-MAC objective, BC rates and their gradients.

Solvers work with the natural-log objective ``ln|I + sum_k H_k^H S_k H_k|``;
the public rate functions report bits. Gradients follow the Wirtinger
convention d/d(conj z) = (d/dRe + j d/dIm) / 2, so a first-order change of
a real function is ``2 Re(g^H dz)`` for a complex vector and
``tr(G dS)`` for a Hermitian matrix argument.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy import linalg as sla

from .scenario import ChannelSet

LN2 = np.log(2.0)


class DimensionError(ValueError):
    pass


class CovarianceError(ValueError):
    pass


def herm(x: np.ndarray) -> np.ndarray:
    return x.conj().T


def hermitize(x: np.ndarray) -> np.ndarray:
    return (x + x.conj().T) / 2


def logdet_hpd(m: np.ndarray) -> float:
    """ln det of a Hermitian positive definite matrix via Cholesky."""
    c = sla.cholesky(hermitize(m), lower=True, check_finite=False)
    return 2.0 * float(np.sum(np.log(np.real(np.diag(c)))))


def hpd_inv(m: np.ndarray) -> np.ndarray:
    c = sla.cho_factor(hermitize(m), lower=True, check_finite=False)
    return hermitize(sla.cho_solve(c, np.eye(m.shape[0]), check_finite=False))


def random_phases(n: int, rng: np.random.Generator) -> np.ndarray:
    return np.exp(1j * rng.uniform(0, 2 * np.pi, n))


def is_unit_modulus(theta: np.ndarray, tol: float = 1e-12) -> bool:
    return bool(np.all(np.abs(np.abs(theta) - 1) <= tol))


def check_covariances(S: Sequence[np.ndarray], power: Optional[float] = None,
                      tol: float = 1e-10) -> None:
    """Raise CovarianceError unless every S_k is Hermitian PSD (and Σtr <= P)."""
    total = 0.0
    for k, s in enumerate(S):
        scale = max(1.0, float(np.max(np.abs(s))) if s.size else 1.0)
        if np.max(np.abs(s - herm(s)), initial=0.0) > tol * scale:
            raise CovarianceError(f"covariance {k} is not Hermitian")
        if s.size and np.linalg.eigvalsh(hermitize(s))[0] < -tol * scale:
            raise CovarianceError(f"covariance {k} is not positive semidefinite")
        total += float(np.real(np.trace(s)))
    if power is not None and total > power + 1e-9:
        raise CovarianceError(f"sum trace {total} exceeds the power budget {power}")


def composite_channel(channels: ChannelSet, theta: np.ndarray) -> list:
    """H_k = D_k + G_k diag(theta) U for every user."""
    theta = np.asarray(theta)
    if theta.shape != (channels.n_elements,):
        raise DimensionError(f"theta has shape {theta.shape}, expected ({channels.n_elements},)")
    fu = theta[:, None] * channels.U
    return [d + g @ fu for d, g in zip(channels.D, channels.G)]


def mac_matrix(H: Sequence[np.ndarray], S: Sequence[np.ndarray]) -> np.ndarray:
    """I + sum_k H_k^H S_k H_k (the H_sum of the dual MAC)."""
    if len(H) != len(S):
        raise DimensionError("one covariance per user is required")
    n_t = H[0].shape[1]
    m = np.eye(n_t, dtype=complex)
    for h, s in zip(H, S):
        if s.shape != (h.shape[0], h.shape[0]):
            raise DimensionError(f"covariance shape {s.shape} does not match channel {h.shape}")
        m += herm(h) @ s @ h
    return hermitize(m)


def mac_objective(H, S, m: Optional[np.ndarray] = None) -> float:
    """ln|I + sum_k H_k^H S_k H_k| in nats."""
    return logdet_hpd(mac_matrix(H, S) if m is None else m)


def mac_sum_rate(H, S, validate: bool = True) -> float:
    """Dual-MAC sum-rate log2|I + sum_k H_k^H S_k H_k| in bit/s/Hz."""
    if validate:
        check_covariances(S)
    return mac_objective(H, S) / LN2


def objective(channels: ChannelSet, theta, S) -> float:
    """f(theta, S) in nats."""
    return mac_objective(composite_channel(channels, theta), S)


def bc_user_rates(H, S_bc, order: Optional[Sequence[int]] = None) -> np.ndarray:
    """DPC rates (bits) of the BC covariances ``S_bc`` under encoding order pi.

    User ``order[i]`` sees interference from users ``order[j]``, j > i.
    The returned array is indexed by user, not by position in ``order``.
    """
    K = len(H)
    order = list(range(K)) if order is None else list(order)
    if sorted(order) != list(range(K)):
        raise ValueError("order must be a permutation of the users")
    n_t = H[0].shape[1]
    rates = np.zeros(K)
    tail = np.zeros((n_t, n_t), dtype=complex)
    for pos in range(K - 1, -1, -1):
        u = order[pos]
        h = H[u]
        eye = np.eye(h.shape[0])
        below = logdet_hpd(eye + h @ tail @ herm(h))
        tail = tail + S_bc[u]
        above = logdet_hpd(eye + h @ tail @ herm(h))
        rates[u] = (above - below) / LN2
    return rates


def grad_theta(channels: ChannelSet, theta, S, H=None, m_inv=None) -> np.ndarray:
    """Gradient of the natural-log objective with respect to conj(theta)."""
    if H is None:
        H = composite_channel(channels, theta)
    if m_inv is None:
        m_inv = hpd_inv(mac_matrix(H, S))
    x = sum(herm(g) @ s @ h for g, s, h in zip(channels.G, S, H)) @ m_inv
    return np.sum(x * channels.U.conj(), axis=1)


def grad_covariance(H, S, k: Optional[int] = None, m_inv=None):
    """H_k (I + sum_m H_m^H S_m H_m)^{-1} H_k^H; all users when ``k`` is None."""
    if m_inv is None:
        m_inv = hpd_inv(mac_matrix(H, S))
    if k is None:
        return [hermitize(h @ m_inv @ herm(h)) for h in H]
    return hermitize(H[k] @ m_inv @ herm(H[k]))


def lagrangian(mu: float, S, H, power: float) -> float:
    """ln|I + sum H^H S H| - mu (sum tr S - P)."""
    if mu < 0:
        raise ValueError("multiplier must be nonnegative")
    total = sum(float(np.real(np.trace(s))) for s in S)
    return mac_objective(H, S) - mu * (total - power)


def partial_grad_lagrangian(mu: float, S, H, k: int, m: Optional[np.ndarray] = None) -> np.ndarray:
    """H_k (Hbar_k + H_k^H S_k H_k)^{-1} H_k^H - mu I, with Hbar_k from the cached H_sum."""
    if m is None:
        m = mac_matrix(H, S)
    h = H[k]
    hbar = m - herm(h) @ S[k] @ h
    full = hbar + herm(h) @ S[k] @ h
    c = sla.cho_factor(hermitize(full), lower=True, check_finite=False)
    g = h @ sla.cho_solve(c, herm(h), check_finite=False)
    return hermitize(g) - mu * np.eye(h.shape[0])


def block_lipschitz_bound(h: np.ndarray) -> float:
    """lambda_max(H_k H_k^H)^2, a Lipschitz bound for the k-th partial gradient."""
    s = np.linalg.norm(h, 2)
    return float(s ** 4)
