"""AO, Approximate AO and APGM drivers, run traces and the complexity model."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .mac_covariance import dual_decomposition, uniform_covariances
from .model import (
    LN2,
    CovarianceError,
    check_covariances,
    composite_channel,
    grad_covariance,
    hpd_inv,
    is_unit_modulus,
    logdet_hpd,
    mac_matrix,
    objective,
    random_phases,
)
from .projections import project_feasible_covariances
from .ris_phase import sequential_sweep, theta_gradient_step
from .scenario import ChannelSet

__all__ = [
    "ALGORITHMS",
    "Instance",
    "RunOptions",
    "TraceRow",
    "RunTrace",
    "CovStep",
    "ComplexityParams",
    "make_instance",
    "run_ao",
    "run_approx_ao",
    "run_apgm",
    "run_algorithm",
    "covariance_gradient_step",
    "covariance_surrogate",
    "predict_complexity",
    "complexity_terms",
    "stopping_check",
    "trace_counters",
]

ALGORITHMS = ("ao", "aao", "apgm")


@dataclass
class Instance:
    channels: ChannelSet
    theta0: np.ndarray
    S0: List[np.ndarray]
    power: float


def make_instance(channels: ChannelSet, power: float, rng: np.random.Generator,
                  random_covariance: bool = False) -> Instance:
    """Random phases and either (P / sum n_k) I or a random feasible PSD start."""
    theta0 = random_phases(channels.n_elements, rng)
    if random_covariance:
        S0 = []
        for n in channels.antennas:
            a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            S0.append(a @ a.conj().T)
        total = sum(np.real(np.trace(s)) for s in S0)
        S0 = [s * (power / total) for s in S0]
    else:
        S0 = uniform_covariances(channels.antennas, power)
    return Instance(channels, theta0, S0, power)


@dataclass
class RunOptions:
    tol: float = 1e-5
    max_outer: int = 30
    eps: float = 1e-5
    mu0: float = 1e4
    mu_bar0: float = 1e4
    rho: float = 0.5
    inner: str = "gbcm"
    max_backtracks: int = 100


@dataclass
class TraceRow:
    algo: str
    outer: int
    tag: str
    objective_bits: float
    wall_ms: float
    T: int = 0
    I: float = 0.0
    I_S: int = 0
    I_Theta: int = 0
    predicted_mults: float = 0.0


@dataclass
class RunTrace:
    algo: str
    rows: List[TraceRow] = field(default_factory=list)
    converged: bool = False
    theta: Optional[np.ndarray] = None
    S: Optional[List[np.ndarray]] = None

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective_bits for r in self.rows])

    @property
    def final_rate(self) -> float:
        return self.rows[-1].objective_bits

    @property
    def n_outer(self) -> int:
        return self.rows[-1].outer

    @property
    def n_subiterations(self) -> int:
        return len(self.rows) - 1


def stopping_check(history: Sequence[float], tol: float, max_outer: int) -> bool:
    """Stop on relative gain < tol over the last outer iteration, or at max_outer.

    ``history[0]`` is the initial objective and ``history[n]`` the objective
    after outer iteration n.
    """
    done = len(history) - 1
    if done >= max_outer:
        return True
    if done < 1:
        return False
    prev, cur = history[-2], history[-1]
    gain = (cur - prev) / max(abs(prev), 1e-300) if prev != 0 else (0.0 if cur == prev else np.inf)
    return gain < tol


@dataclass
class ComplexityParams:
    K: int
    N_t: int
    N_r: int
    N_s: int
    N_ris: int
    T: float = 0
    I: float = 0
    I_S: float = 0
    I_Theta: float = 0


def complexity_terms(algo: str, p: ComplexityParams):
    """(covariance part, phase part) of the per-iteration multiplication count."""
    K, nt, nr = p.K, p.N_t, p.N_r
    elements = p.N_s * p.N_ris
    gbcm_iter = K * (nt * nr ** 2 + nt ** 2 * nr + nr ** 3)
    grad_phase = p.I_Theta * K * elements * nt * nr
    if algo == "ao":
        return p.T * p.I * gbcm_iter, elements * (K * nt * nr ** 2 + K * nt ** 2 * nr + nt ** 3)
    if algo == "aao":
        return p.T * p.I * gbcm_iter, grad_phase
    if algo == "apgm":
        return p.I_S * (K * nt * nr ** 2 + K * nt ** 2 * nr + nt ** 3 + K ** 2 * nr ** 2), grad_phase
    raise ValueError(f"unknown algorithm {algo!r}")


def predict_complexity(algo: str, p: ComplexityParams):
    cov, phase = complexity_terms(algo, p)
    total = cov + phase
    return int(total) if float(total).is_integer() else total


def _start(inst: Instance):
    if not is_unit_modulus(inst.theta0):
        raise ValueError("initial phases are not unit-modulus")
    try:
        check_covariances(inst.S0, inst.power)
    except CovarianceError as exc:
        raise ValueError(f"infeasible initial covariances: {exc}") from exc
    theta = np.array(inst.theta0, dtype=complex)
    S = [np.array(s, dtype=complex) for s in inst.S0]
    return theta, S, objective(inst.channels, theta, S)


def _dims(channels: ChannelSet) -> ComplexityParams:
    return ComplexityParams(K=channels.k, N_t=channels.n_t, N_r=max(channels.antennas),
                            N_s=channels.n_s, N_ris=channels.n_elements // channels.n_s)


def _dd_step(inst, theta, S, f, opts):
    H = composite_channel(inst.channels, theta)
    S_new, state = dual_decomposition(H, inst.power, eps=opts.eps, S0=S, inner=opts.inner)
    f_new = logdet_hpd(mac_matrix(H, S_new))
    # bisection leaves O(eps) slack; never trade a feasible better point for it
    if f_new < f:
        return S, f, state
    return S_new, f_new, state


def _run(algo: str, inst: Instance, opts: RunOptions, cov_step, phase_step) -> RunTrace:
    theta, S, f = _start(inst)
    trace = RunTrace(algo)
    dims = _dims(inst.channels)
    t0 = time.perf_counter()
    trace.rows.append(TraceRow(algo, 0, "init", float(f / LN2), 0.0))
    history = [f]
    ctx: Dict[str, float] = {"mu": opts.mu0, "mu_bar": opts.mu_bar0}
    n = 0
    while True:
        n += 1
        S, f, cov_counts = cov_step(inst, theta, S, f, opts, ctx)
        p = ComplexityParams(**{**dims.__dict__, **cov_counts})
        trace.rows.append(TraceRow(algo, n, "covariance", float(f / LN2), 1e3 * (time.perf_counter() - t0),
                                   predicted_mults=complexity_terms(algo, p)[0], **cov_counts))
        theta, f, phase_counts = phase_step(inst, theta, S, f, opts, ctx)
        p = ComplexityParams(**{**dims.__dict__, **phase_counts})
        trace.rows.append(TraceRow(algo, n, "phase", float(f / LN2), 1e3 * (time.perf_counter() - t0),
                                   predicted_mults=complexity_terms(algo, p)[1], **phase_counts))
        history.append(f)
        if stopping_check(history, opts.tol, opts.max_outer):
            trace.converged = stopping_check(history, opts.tol, max_outer=len(history))
            break
    trace.theta, trace.S = theta, S
    return trace


def _cov_dd(inst, theta, S, f, opts, ctx):
    S, f, state = _dd_step(inst, theta, S, f, opts)
    return S, f, {"T": state.T, "I": state.I}


def _phase_sweep(inst, theta, S, f, opts, ctx):
    new = sequential_sweep(inst.channels, theta, S)
    f_new = objective(inst.channels, new, S)
    if f_new < f:
        return theta, f, {}
    return new, f_new, {}


def _phase_gradient(inst, theta, S, f, opts, ctx):
    step = theta_gradient_step(theta, S, inst.channels, ctx["mu"], opts.rho,
                               opts.max_backtracks, f0=f)
    ctx["mu"] = step.mu
    return step.theta, step.objective, {"I_Theta": step.trials}


def _cov_gradient(inst, theta, S, f, opts, ctx):
    step = covariance_gradient_step(S, theta, inst.channels, ctx["mu_bar"], inst.power,
                                    opts.rho, opts.max_backtracks, f0=f)
    ctx["mu_bar"] = step.mu
    return step.S, step.objective, {"I_S": step.trials}


def run_ao(inst: Instance, opts: Optional[RunOptions] = None) -> RunTrace:
    """Dual decomposition for the covariances, closed-form sweep for the phases."""
    return _run("ao", inst, opts or RunOptions(), _cov_dd, _phase_sweep)


def run_approx_ao(inst: Instance, opts: Optional[RunOptions] = None) -> RunTrace:
    """Dual decomposition for the covariances, one projected gradient step for the phases."""
    return _run("aao", inst, opts or RunOptions(), _cov_dd, _phase_gradient)


def run_apgm(inst: Instance, opts: Optional[RunOptions] = None) -> RunTrace:
    """Alternating projected gradient steps on the covariances and the phases."""
    return _run("apgm", inst, opts or RunOptions(), _cov_gradient, _phase_gradient)


def run_algorithm(algo: str, inst: Instance, opts: Optional[RunOptions] = None) -> RunTrace:
    runners = {"ao": run_ao, "aao": run_approx_ao, "apgm": run_apgm}
    if algo not in runners:
        raise ValueError(f"unknown algorithm {algo!r}; choose from {ALGORITHMS}")
    return runners[algo](inst, opts)


@dataclass
class CovStep:
    S: List[np.ndarray]
    mu: float
    trials: int
    objective: float


def covariance_surrogate(f0: float, grads, S0, S, mu_bar: float) -> float:
    """Qbar(S; S0) = f0 + sum tr(grad_k (S_k - S0_k)) - sum ||S_k - S0_k||^2 / (2 mu_bar)."""
    lin = sum(float(np.real(np.trace(g @ (s - s0)))) for g, s, s0 in zip(grads, S, S0))
    quad = sum(float(np.linalg.norm(s - s0) ** 2) for s, s0 in zip(S, S0))
    return f0 + lin - quad / (2 * mu_bar)


def covariance_gradient_step(S, theta, channels: ChannelSet, mu_bar: float, power: float,
                             rho: float = 0.5, max_backtracks: int = 100,
                             f0: Optional[float] = None) -> CovStep:
    """Projected gradient ascent on the covariances with backtracking on Qbar."""
    H = composite_channel(channels, theta)
    m = mac_matrix(H, S)
    if f0 is None:
        f0 = logdet_hpd(m)
    grads = grad_covariance(H, S, m_inv=hpd_inv(m))
    if not any(np.any(g) for g in grads):
        return CovStep([s.copy() for s in S], mu_bar, 1, f0)
    slack = 1e-13 * max(1.0, abs(f0))
    trials = 0
    while True:
        trials += 1
        cand = project_feasible_covariances([s + mu_bar * g for s, g in zip(S, grads)], power)
        f_new = logdet_hpd(mac_matrix(H, cand))
        if f_new >= covariance_surrogate(f0, grads, S, cand, mu_bar) - slack:
            return CovStep(cand, mu_bar, trials, f_new)
        if trials > max_backtracks:
            return CovStep([s.copy() for s in S], mu_bar, trials, f0)
        mu_bar *= rho


def trace_counters(trace: RunTrace, first: int = 5) -> Dict[str, float]:
    """Average T, I, I_S, I_Theta over the first ``first`` outer iterations."""
    out = {}
    for name in ("T", "I", "I_S", "I_Theta"):
        vals = [getattr(r, name) for r in trace.rows
                if r.tag != "init" and r.outer <= first and getattr(r, name)]
        out[name] = float(np.mean(vals)) if vals else 0.0
    return out
