"""Phase-shift updates for fixed covariances.

Two routes: an exact per-element maximizer swept over all elements (AO),
and a projected gradient ascent step on the unit circle with backtracking
on a quadratic minorant (Approximate AO, APGM).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg as sla

from .model import (
    composite_channel,
    grad_theta,
    herm,
    hermitize,
    hpd_inv,
    logdet_hpd,
    mac_matrix,
)
from .projections import project_unit_modulus

__all__ = [
    "SurrogateParams",
    "PhaseStep",
    "closed_form_element",
    "element_matrices",
    "sequential_sweep",
    "theta_gradient_step",
    "theta_surrogate",
    "riemann_project",
]

FLAT_TOL = 1e-14


@dataclass
class SurrogateParams:
    mu0: float = 1e4
    rho: float = 0.5
    max_backtracks: int = 100

    def __post_init__(self):
        if self.mu0 <= 0:
            raise ValueError("initial step must be positive")
        if not 0 < self.rho < 1:
            raise ValueError("backtracking factor must lie in (0, 1)")


@dataclass
class PhaseStep:
    theta: np.ndarray
    mu: float
    trials: int
    objective: float


def element_matrices(l: int, channels, theta, S, H=None, m=None):
    """(A_l, b_l) with B_l = b_l u_l.

    The objective restricted to theta_l is
    ln|A_l + theta_l B_l + conj(theta_l) B_l^H|.
    """
    if H is None:
        H = composite_channel(channels, theta)
    if m is None:
        m = mac_matrix(H, S)
    u = channels.U[l]
    t = theta[l]
    b = np.zeros(u.shape[0], dtype=complex)
    gsg = 0.0
    for gk, s, h in zip(channels.G, S, H):
        g = gk[:, l]
        sg = s @ g
        b += herm(h) @ sg
        gsg += float(np.real(np.vdot(g, sg)))
    # strip element l from H_k: C_k = H_k - theta_l g u
    b -= np.conj(t) * gsg * u.conj()
    B = np.outer(b, u)
    A = hermitize(m - t * B - np.conj(t) * herm(B))
    return A, b


def closed_form_element(l: int, channels, theta, S, H=None, m=None) -> complex:
    """Optimal theta_l with all other phases and the covariances fixed.

    sigma_l = tr(A_l^{-1} B_l) is the only non-zero eigenvalue of
    A_l^{-1} B_l; the optimum is exp(-j arg sigma_l). The current value is
    kept when the objective does not depend on theta_l.
    """
    A, b = element_matrices(l, channels, theta, S, H, m)
    u = channels.U[l]
    c = sla.cho_factor(A, lower=True, check_finite=False)
    sigma = complex(u @ sla.cho_solve(c, b, check_finite=False))
    if abs(sigma) <= FLAT_TOL:
        return complex(theta[l])
    return complex(np.exp(-1j * np.angle(sigma)))


def sequential_sweep(channels, theta, S, recompute: bool = False) -> np.ndarray:
    """One pass of closed-form updates over l = 1..N_s N_ris, in order.

    H_k and H_sum are updated by rank-one corrections after every element;
    ``recompute=True`` rebuilds them from scratch instead (debug path).
    """
    theta = np.array(theta, dtype=complex)
    H = composite_channel(channels, theta)
    m = mac_matrix(H, S)
    G, U = channels.G, channels.U
    for l in range(theta.size):
        if recompute:
            H = composite_channel(channels, theta)
            m = mac_matrix(H, S)
        new = closed_form_element(l, channels, theta, S, H, m)
        delta = new - theta[l]
        if delta == 0:
            continue
        theta[l] = new
        if not recompute:
            H = [h + delta * np.outer(g[:, l], U[l]) for h, g in zip(H, G)]
            m = mac_matrix(H, S)
    return theta


def theta_surrogate(f0: float, grad: np.ndarray, theta0, theta, mu: float) -> float:
    """Q_mu(theta; theta0) = f0 + 2 Re(g^H d) - ||d||^2 / mu."""
    d = theta - theta0
    return f0 + 2.0 * float(np.real(np.vdot(grad, d))) - float(np.real(np.vdot(d, d))) / mu


def theta_gradient_step(theta, S, channels, mu: float, rho: float = 0.5,
                        max_backtracks: int = 100, f0: Optional[float] = None) -> PhaseStep:
    """Projected gradient ascent step with backtracking.

    Proposes P_Theta(theta + mu grad) and shrinks mu by rho until the
    objective lies above the quadratic surrogate Q_mu. Objective values
    are in nats.
    """
    theta = np.asarray(theta, dtype=complex)
    H = composite_channel(channels, theta)
    m = mac_matrix(H, S)
    if f0 is None:
        f0 = logdet_hpd(m)
    g = grad_theta(channels, theta, S, H=H, m_inv=hpd_inv(m))
    if not np.any(g):
        return PhaseStep(theta.copy(), mu, 1, f0)
    slack = 1e-13 * max(1.0, abs(f0))
    trials = 0
    while True:
        trials += 1
        cand = project_unit_modulus(theta + mu * g)
        f_new = logdet_hpd(mac_matrix(composite_channel(channels, cand), S))
        if f_new >= theta_surrogate(f0, g, theta, cand, mu) - slack:
            return PhaseStep(cand, mu, trials, f_new)
        if trials > max_backtracks:
            return PhaseStep(theta.copy(), mu, trials, f0)
        mu *= rho


def riemann_project(theta: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Tangent-space component of ``g`` at ``theta`` on the unit circle."""
    return g - np.real(np.conj(g) * theta) * theta
