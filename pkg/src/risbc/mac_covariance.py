"""Fixed-theta covariance optimization in the dual MAC.

The sum-power problem is solved by bisection on the multiplier mu of the
partial Lagrangian; for each mu the Lagrangian is maximized by block
coordinate maximization, one user covariance at a time, where each block
update is an exact water-filling solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import linalg as sla

from .model import (
    block_lipschitz_bound,
    herm,
    hermitize,
    hpd_inv,
    logdet_hpd,
    mac_matrix,
)
from .projections import project_psd

__all__ = [
    "DualState",
    "BlockResult",
    "block_update",
    "cbcm",
    "gbcm",
    "dual_decomposition",
    "uniform_covariances",
    "cbcm_gap_bound",
]

INNER_TOL = 1e-9
MAX_UPDATES = 500


@dataclass
class DualState:
    mu: float
    mu_min: float
    mu_max: float
    eps: float
    mu_bound: float
    T: int = 0
    inner_updates: List[int] = field(default_factory=list)

    @property
    def I(self) -> float:
        """Average number of block updates per bisection step."""
        return float(np.mean(self.inner_updates)) if self.inner_updates else 0.0


@dataclass
class BlockResult:
    S: List[np.ndarray]
    n_updates: int
    history: List[float]


def uniform_covariances(antennas: Sequence[int], power: float) -> List[np.ndarray]:
    """(P / sum n_k) I for every user: feasible, full rank, on the budget."""
    total = sum(antennas)
    return [np.eye(n, dtype=complex) * (power / total) for n in antennas]


def _trace_sum(S) -> float:
    return float(sum(np.real(np.trace(s)) for s in S))


def block_update(k: int, mu: float, H, S, m: Optional[np.ndarray] = None) -> np.ndarray:
    """Maximizer of the Lagrangian over S_k with the other users fixed.

    With Hbar_k = H_sum - H_k^H S_k H_k and the EVD
    H_k Hbar_k^{-1} H_k^H = V diag(sigma) V^H the answer is
    V diag((1/mu - 1/sigma)_+) V^H.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    if m is None:
        m = mac_matrix(H, S)
    h = H[k]
    hbar = hermitize(m - herm(h) @ S[k] @ h)
    c = sla.cho_factor(hbar, lower=True, check_finite=False)
    x = hermitize(h @ sla.cho_solve(c, herm(h), check_finite=False))
    sigma, v = np.linalg.eigh(x)
    smax = sigma[-1]
    p = np.zeros_like(sigma)
    live = sigma > max(1e-12 * smax, 0.0)
    p[live] = np.maximum(1.0 / mu - 1.0 / sigma[live], 0.0)
    return hermitize((v * p) @ v.conj().T)


def _lagrangian(m: np.ndarray, S, mu: float, power: float) -> float:
    return logdet_hpd(m) - mu * (_trace_sum(S) - power)


def _apply(k: int, s_new: np.ndarray, H, S, m: np.ndarray) -> np.ndarray:
    h = H[k]
    m = m + herm(h) @ (s_new - S[k]) @ h
    S[k] = s_new
    return hermitize(m)


def cbcm(S0, mu: float, H, power: float = 0.0, tol: float = INNER_TOL,
         max_updates: int = MAX_UPDATES) -> BlockResult:
    """Cyclic block coordinate maximization of the Lagrangian at fixed mu."""
    S = [np.array(s, dtype=complex) for s in S0]
    K = len(S)
    m = mac_matrix(H, S)
    history = [_lagrangian(m, S, mu, power)]
    n = 0
    while n < max_updates:
        start = history[-1]
        for k in range(K):
            m = _apply(k, block_update(k, mu, H, S, m), H, S, m)
            n += 1
            history.append(_lagrangian(m, S, mu, power))
        m = mac_matrix(H, S)
        if history[-1] - start <= tol * max(1.0, abs(start)):
            break
    return BlockResult(S, n, history)


def gbcm(S0, mu: float, H, power: float = 0.0, tol: float = INNER_TOL,
         max_updates: int = MAX_UPDATES, step_tol: float = 1e-9) -> BlockResult:
    """Greedy (Gauss-Southwell) block coordinate maximization at fixed mu.

    Each iteration takes a projected gradient step of length
    1 / lambda_max(H_i H_i^H)^2 for every user, picks the user whose step
    moves furthest and water-fills that user only.
    """
    S = [np.array(s, dtype=complex) for s in S0]
    K = len(S)
    lip = [block_lipschitz_bound(h) for h in H]
    m = mac_matrix(H, S)
    history = [_lagrangian(m, S, mu, power)]
    checkpoint = history[0]
    n = 0
    while n < max_updates:
        m_inv = hpd_inv(m)
        steps = np.zeros(K)
        for i, h in enumerate(H):
            if lip[i] == 0:
                continue
            g = h @ m_inv @ herm(h) - mu * np.eye(h.shape[0])
            cand = project_psd(hermitize(S[i] + g / lip[i]))
            steps[i] = np.linalg.norm(S[i] - cand)
        if steps.max() <= step_tol:
            break
        k = int(np.argmax(steps))
        m = _apply(k, block_update(k, mu, H, S, m), H, S, m)
        n += 1
        history.append(_lagrangian(m, S, mu, power))
        if n % K == 0:
            m = mac_matrix(H, S)
            if history[-1] - checkpoint <= tol * max(1.0, abs(checkpoint)):
                break
            checkpoint = history[-1]
    return BlockResult(S, n, history)


def dual_decomposition(H, power: float, eps: float = 1e-5, S0=None, inner: str = "gbcm",
                       tol: float = INNER_TOL, max_updates: int = MAX_UPDATES):
    """Solve max ln|I + sum H^H S H| s.t. sum tr S <= P by bisection on mu.

    The bracket starts at [0, K N_t / P]. The returned covariances come from
    the feasible end of the final bracket, rescaled onto the budget.

    Returns
    -------
    (S, DualState)
    """
    K = len(H)
    n_t = H[0].shape[1]
    solver = {"gbcm": gbcm, "cbcm": cbcm}[inner]
    mu_bound = K * n_t / power
    state = DualState(mu=mu_bound, mu_min=0.0, mu_max=mu_bound, eps=eps, mu_bound=mu_bound)
    S = uniform_covariances([h.shape[0] for h in H], power) if S0 is None else [np.array(s, dtype=complex) for s in S0]
    feasible = None
    while state.mu_max - state.mu_min >= eps:
        mu = (state.mu_max + state.mu_min) / 2
        total = _trace_sum(S)
        if total > power:
            S = [s * (power / total) for s in S]
        res = solver(S, mu, H, power, tol=tol, max_updates=max_updates)
        state.T += 1
        state.inner_updates.append(res.n_updates)
        S = res.S
        if power < _trace_sum(S):
            state.mu_min = mu
        else:
            state.mu_max = mu
            feasible = [s.copy() for s in S]
    if feasible is None:
        feasible = solver(S, state.mu_max, H, power, tol=tol, max_updates=max_updates).S
    state.mu = state.mu_max
    total = _trace_sum(feasible)
    if total > 0:
        feasible = [hermitize(s * (power / total)) for s in feasible]
    return feasible, state


def cbcm_gap_bound(l_star: float, l_first: float, M: float, K: int, R: float, n: int) -> float:
    """O(1/n) bound 2 c M K^2 R^2 / n on the CBCM Lagrangian gap.

    ``R`` is the sublevel-set radius, which has to be supplied by the caller.
    """
    base = M * K ** 2 * R ** 2
    c = max(2.0 / base - 2.0, 2.0, l_star - l_first)
    return 2.0 * c * base / n
