"""Euclidean projections onto the PSD cone, the sum-power set and the unit circle."""

from typing import List, Sequence

import numpy as np

from .model import hermitize

__all__ = ["project_psd", "project_feasible_covariances", "project_unit_modulus", "water_level"]


def _checked_hermitian(x: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    x = np.asarray(x)
    drift = np.max(np.abs(x - x.conj().T), initial=0.0)
    if drift > tol * max(1.0, np.max(np.abs(x), initial=0.0)):
        raise ValueError(f"matrix is not Hermitian (drift {drift:.3g})")
    return hermitize(x)


def project_psd(x: np.ndarray) -> np.ndarray:
    """Clip the negative eigenvalues of a Hermitian matrix."""
    x = _checked_hermitian(x)
    w, v = np.linalg.eigh(x)
    if w[0] >= 0:
        return x
    w = np.maximum(w, 0.0)
    return hermitize((v * w) @ v.conj().T)


def water_level(e: np.ndarray, power: float) -> float:
    """eta >= 0 with sum(max(e - eta, 0)) = power, or 0 when the budget is slack."""
    if np.sum(np.maximum(e, 0.0)) <= power:
        return 0.0
    lo, hi = 0.0, float(np.max(e))
    # absolute tolerance cannot be met below one ulp of hi
    tol = 1e-12 * max(1.0, power, hi)
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = (lo + hi) / 2
        if np.sum(np.maximum(e - mid, 0.0)) > power:
            lo = mid
        else:
            hi = mid
    # exact level on the active set found by bisection
    active = e > hi
    if not np.any(active):
        active = e >= np.max(e)
    return float((np.sum(e[active]) - power) / np.count_nonzero(active))


def project_feasible_covariances(S: Sequence[np.ndarray], power: float) -> List[np.ndarray]:
    """Project (S_1..S_K) onto {S_k >= 0, sum_k tr S_k <= P}.

    Each S_k keeps its eigenvectors; the stacked eigenvalues are projected
    onto the capped simplex by a common water level.
    """
    if power <= 0:
        raise ValueError("power must be positive")
    eig = [np.linalg.eigh(_checked_hermitian(s)) for s in S]
    e = np.concatenate([w for w, _ in eig]) if eig else np.zeros(0)
    eta = water_level(e, power)
    out = []
    for w, v in eig:
        w_new = np.maximum(w - eta, 0.0)
        out.append(hermitize((v * w_new) @ v.conj().T))
    return out


def project_unit_modulus(theta: np.ndarray) -> np.ndarray:
    """theta_l / |theta_l|; zero entries map to 1 + 0j."""
    theta = np.asarray(theta, dtype=complex)
    mag = np.abs(theta)
    out = np.ones_like(theta)
    nz = mag > 0
    out[nz] = theta[nz] / mag[nz]
    return out
