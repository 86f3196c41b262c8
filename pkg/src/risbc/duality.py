"""Map dual-MAC covariances to BC covariances with the same sum-rate and power."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .model import LN2, bc_user_rates, herm, hermitize, mac_objective

__all__ = ["mac_to_bc", "verify_duality", "DualityReport", "hpd_power"]


def hpd_power(a: np.ndarray, p: float) -> np.ndarray:
    """a^p for a = I + PSD through its EVD."""
    w, v = np.linalg.eigh(hermitize(a))
    if w[0] < 1 - 1e-9:
        raise ValueError(f"expected I + PSD, smallest eigenvalue {w[0]:.3g}")
    return hermitize((v * w ** p) @ v.conj().T)


def mac_to_bc(H, S_mac, order: Optional[Sequence[int]] = None) -> List[np.ndarray]:
    """BC covariances achieving the dual-MAC rate under DPC order ``order``.

    ``order`` is the BC encoding order pi as used by ``bc_user_rates``:
    user ``order[i]`` is interfered by ``order[j]`` for j > i. The
    recursion runs backwards through ``order``, so the user converted
    first sees no BC interference and is decoded last in the dual MAC.

    The sum-rate is always preserved. The sum power is preserved when no
    MAC power sits in the null space of H_k^H (always true for
    water-filled solutions); otherwise that power, which carries no rate,
    is dropped and the BC power is smaller.
    """
    K = len(H)
    order = list(range(K))[::-1] if order is None else list(order)
    seq = order[::-1]
    n_t = H[0].shape[1]
    S_bc: List[np.ndarray] = [None] * K
    done = np.zeros((n_t, n_t), dtype=complex)
    for pos, k in enumerate(seq):
        h = H[k]
        a = np.eye(h.shape[0]) + h @ done @ herm(h)
        b = np.eye(n_t, dtype=complex)
        for j in seq[pos + 1:]:
            b += herm(H[j]) @ S_mac[j] @ H[j]
        b_ih = hpd_power(b, -0.5)
        a_h = hpd_power(a, 0.5)
        a_ih = hpd_power(a, -0.5)
        f, _, gh = np.linalg.svd(b_ih @ herm(h) @ a_ih, full_matrices=False)
        t = b_ih @ f @ gh @ a_h
        S_bc[k] = hermitize(t @ S_mac[k] @ herm(t))
        done = done + S_bc[k]
    return S_bc


@dataclass
class DualityReport:
    mac_rate: float
    bc_rate: float
    mac_power: float
    bc_power: float
    per_user_rates: np.ndarray
    rate_tol: float
    power_tol: float

    @property
    def rate_gap(self) -> float:
        return abs(self.bc_rate - self.mac_rate)

    @property
    def power_gap(self) -> float:
        return abs(self.bc_power - self.mac_power)

    @property
    def ok(self) -> bool:
        return (self.rate_gap <= self.rate_tol * max(1.0, abs(self.mac_rate))
                and self.power_gap <= self.power_tol * max(1.0, abs(self.mac_power)))


def verify_duality(H, S_mac, S_bc, order: Optional[Sequence[int]] = None,
                   rate_tol: float = 1e-8, power_tol: float = 1e-8) -> DualityReport:
    """Compare MAC and BC rates (bits) and powers of a converted solution."""
    K = len(H)
    order = list(range(K))[::-1] if order is None else list(order)
    rates = bc_user_rates(H, S_bc, order)
    return DualityReport(
        mac_rate=mac_objective(H, S_mac) / LN2,
        bc_rate=float(np.sum(rates)),
        mac_power=float(sum(np.real(np.trace(s)) for s in S_mac)),
        bc_power=float(sum(np.real(np.trace(s)) for s in S_bc)),
        per_user_rates=rates,
        rate_tol=rate_tol,
        power_tol=power_tol,
    )
