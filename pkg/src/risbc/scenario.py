"""Geometry, path loss and random channel realizations for one problem instance.

All channels are noise-normalized: the direct link of user k carries the
factor sqrt(1 / (beta_DIR,k * N0)) and the RIS-to-user link carries
sqrt(1 / (beta_RIS,k * N0)), so the sum-rate objective uses identity noise.
The BS-to-RIS matrix U is left unscaled because the whole cascade loss is
folded into G_k.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

__all__ = [
    "SystemConfig",
    "PlacementSpec",
    "Geometry",
    "ChannelSet",
    "PlacementError",
    "make_rng",
    "build_geometry",
    "path_loss_direct",
    "path_loss_ris",
    "sample_channels",
    "apply_csi_error",
    "apply_blockage",
    "ris_shape",
]


class PlacementError(ValueError):
    """Raised for a placement that produces a degenerate instance."""


def db2lin(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    """Scalar system parameters.

    Defaults follow the single-RIS simulation setup: f = 2 GHz (lambda =
    15 cm), half-wavelength spacings, N_t = 8, N_r = 2, alpha_DIR = 3,
    P = 1 W, N0 = -110 dB and a 15x15 RIS.
    """

    n_t: int = 8
    n_r: int = 2
    k: int = 2
    n_s: int = 1
    n_ris: int = 225
    power: float = 1.0
    noise: float = 1e-11
    wavelength: float = 0.15
    s_t: Optional[float] = None
    s_r: Optional[float] = None
    s_ris: Optional[float] = None
    alpha_dir: float = 3.0
    g_t: float = 2.0
    g_r: float = 2.0
    rician_factor: float = 1.0
    n_k: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        for name in ("n_t", "n_r", "k", "n_s", "n_ris"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.power <= 0:
            raise ValueError("power must be positive")
        if self.noise <= 0:
            raise ValueError("noise must be positive")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be positive")
        if self.alpha_dir < 2:
            raise ValueError("alpha_dir must be >= 2")
        if self.rician_factor < 0:
            raise ValueError("rician_factor must be >= 0")
        if self.n_k is not None:
            if len(self.n_k) != self.k or min(self.n_k) < 1:
                raise ValueError("n_k must list one positive antenna count per user")
        half = self.wavelength / 2
        for name in ("s_t", "s_r", "s_ris"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, half)

    @classmethod
    def from_carrier(cls, f_c: float, **kwargs) -> "SystemConfig":
        return cls(wavelength=SPEED_OF_LIGHT / f_c, **kwargs)

    @property
    def antennas(self) -> Tuple[int, ...]:
        """Per-user antenna counts n_k."""
        if self.n_k is not None:
            return tuple(int(n) for n in self.n_k)
        return (self.n_r,) * self.k

    @property
    def n_elements(self) -> int:
        return self.n_s * self.n_ris

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class PlacementSpec:
    """BS/RIS coordinates and user sampling grids.

    User coordinates are drawn uniformly from the grids
    ``start, start + step, ..., stop`` (inclusive). ``ris_normal`` gives the
    side of the xz-plane each RIS faces (+1 faces +y, -1 faces -y).
    ``users`` pins the user midpoints and bypasses sampling.
    """

    bs: Tuple[float, float, float] = (0.0, 20.0, 10.0)
    ris: Tuple[Tuple[float, float, float], ...] = ((30.0, 0.0, 5.0),)
    ris_normal: Tuple[int, ...] = (1,)
    user_x: Tuple[float, float, float] = (200.0, 500.0, 2.0)
    user_y: Tuple[float, float, float] = (1.0, 70.0, 1.0)
    user_z: Tuple[float, float, float] = (1.5, 2.0, 0.01)
    users: Optional[Tuple[Tuple[float, float, float], ...]] = None

    def __post_init__(self):
        if len(self.ris_normal) != len(self.ris):
            raise ValueError("one normal sign per RIS is required")

    @classmethod
    def single_ris(cls, l_t=20.0, h_t=10.0, d_ris=30.0, h_ris=5.0, **kwargs) -> "PlacementSpec":
        return cls(bs=(0.0, l_t, h_t), ris=((d_ris, 0.0, h_ris),), ris_normal=(1,), **kwargs)

    @classmethod
    def multi_ris(cls, d_ris: float, active: Sequence[int] = (1, 2, 3, 4),
                  distance: float = 300.0, l_t: float = 30.0, h_t: float = 10.0,
                  h_ris: float = 5.0, width: float = 60.0) -> "PlacementSpec":
        """Four-RIS layout; ``active`` selects RIS 1..4 by number.

        RIS 1 at (d, 0), RIS 2 at (D - d, 0), RIS 3 at (d, 60), RIS 4 at
        (D - d, 60), all at height 5 m. Users sit in a 50x50 m square
        centred on (D, l_t).
        """
        spots = {
            1: ((d_ris, 0.0, h_ris), 1),
            2: ((distance - d_ris, 0.0, h_ris), 1),
            3: ((d_ris, width, h_ris), -1),
            4: ((distance - d_ris, width, h_ris), -1),
        }
        chosen = [spots[i] for i in active]
        return cls(
            bs=(0.0, l_t, h_t),
            ris=tuple(p for p, _ in chosen),
            ris_normal=tuple(s for _, s in chosen),
            user_x=(distance - 25.0, distance + 25.0, 1.0),
            user_y=(l_t - 25.0, l_t + 25.0, 1.0),
        )


def make_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Counter-based generator for realization ``index`` of master ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def _grid_draw(rng: np.random.Generator, spec: Tuple[float, float, float], size: int) -> np.ndarray:
    start, stop, step = spec
    n = int(round((stop - start) / step)) + 1
    return start + step * rng.integers(0, n, size=size)


@dataclass(frozen=True)
class Geometry:
    bs: np.ndarray
    ris: np.ndarray
    ris_normal: np.ndarray
    users: np.ndarray

    @property
    def d_t_ris(self) -> np.ndarray:
        return np.linalg.norm(self.ris - self.bs, axis=1)

    @property
    def d_ris_user(self) -> np.ndarray:
        """Distances RIS i -> user k, shape (N_s, K)."""
        return np.linalg.norm(self.ris[:, None, :] - self.users[None, :, :], axis=2)

    @property
    def d_t_user(self) -> np.ndarray:
        return np.linalg.norm(self.users - self.bs, axis=1)

    @property
    def cos_t(self) -> np.ndarray:
        """Cosine between the BS direction and each RIS normal."""
        return self.ris_normal * (self.bs[1] - self.ris[:, 1]) / self.d_t_ris

    @property
    def cos_r(self) -> np.ndarray:
        """Cosine between each RIS normal and the user direction, (N_s, K)."""
        dy = self.users[None, :, 1] - self.ris[:, None, 1]
        return self.ris_normal[:, None] * dy / self.d_ris_user


def build_geometry(config: SystemConfig, placement: PlacementSpec,
                   rng: Optional[np.random.Generator] = None) -> Geometry:
    """Place the BS, the RISs and ``config.k`` users.

    Raises
    ------
    PlacementError
        If any BS-RIS, RIS-user or BS-user distance is zero.
    """
    if placement.users is not None:
        users = np.asarray(placement.users, dtype=float)
        if users.shape != (config.k, 3):
            raise PlacementError(f"expected {config.k} user positions, got {users.shape}")
    else:
        if rng is None:
            raise ValueError("rng is required to sample user positions")
        users = np.column_stack([
            _grid_draw(rng, placement.user_x, config.k),
            _grid_draw(rng, placement.user_y, config.k),
            _grid_draw(rng, placement.user_z, config.k),
        ])
    ris = np.asarray(placement.ris, dtype=float).reshape(-1, 3)
    if ris.shape[0] != config.n_s:
        raise PlacementError(f"placement has {ris.shape[0]} RIS positions, config expects {config.n_s}")
    geo = Geometry(
        bs=np.asarray(placement.bs, dtype=float),
        ris=ris,
        ris_normal=np.asarray(placement.ris_normal, dtype=float),
        users=users,
    )
    if (np.any(geo.d_t_ris <= 0) or np.any(geo.d_ris_user <= 0)
            or np.any(geo.d_t_user <= 0)):
        raise PlacementError("degenerate placement: zero distance between nodes")
    return geo


def path_loss_direct(geometry: Geometry, k: int, config: SystemConfig) -> float:
    """beta_DIR,k = (4 pi / lambda)^2 d_{t,k}^alpha (dimensionless, >= 1 is a loss)."""
    d = geometry.d_t_user[k]
    return (4 * np.pi / config.wavelength) ** 2 * d ** config.alpha_dir


def path_loss_ris(geometry: Geometry, i: int, k: int, config: SystemConfig) -> float:
    """Far-field bistatic FSPL of the link BS -> RIS i -> user k.

    Returns beta (a loss); ``np.inf`` at grazing incidence/reflection.

    Raises
    ------
    PlacementError
        If the RIS is illuminated from behind (negative cosine).
    """
    inv = path_gain_ris(geometry, i, k, config)
    return np.inf if inv == 0 else 1.0 / inv


def path_gain_ris(geometry: Geometry, i: int, k: int, config: SystemConfig) -> float:
    """beta_RIS^-1 = G_t G_r lambda^4 cos_t cos_r / (256 pi^2 d1^2 d2^2)."""
    cos_t = geometry.cos_t[i]
    cos_r = geometry.cos_r[i, k]
    if cos_t < 0 or cos_r < 0:
        raise PlacementError(f"RIS {i} is illuminated from behind for user {k}")
    d1 = geometry.d_t_ris[i]
    d2 = geometry.d_ris_user[i, k]
    lam = config.wavelength
    return (config.g_t * config.g_r * lam ** 4 * cos_t * cos_r
            / (256 * np.pi ** 2 * d1 ** 2 * d2 ** 2))


def ris_shape(n_ris: int) -> Tuple[int, int]:
    """Rows x columns of a near-square URA with ``n_ris`` elements."""
    rows = int(np.floor(np.sqrt(n_ris)))
    while n_ris % rows:
        rows -= 1
    return rows, n_ris // rows


def _ula_offsets(n: int, spacing: float) -> np.ndarray:
    # ULA parallel to the y-axis, centred on its midpoint.
    pos = np.zeros((n, 3))
    pos[:, 1] = (np.arange(n) - (n - 1) / 2) * spacing
    return pos


def _ura_offsets(n: int, spacing: float) -> np.ndarray:
    # URA in the xz-plane, row-major (rows along z, columns along x).
    rows, cols = ris_shape(n)
    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    pos = np.zeros((n, 3))
    pos[:, 0] = ((c - (cols - 1) / 2) * spacing).ravel()
    pos[:, 2] = ((r - (rows - 1) / 2) * spacing).ravel()
    return pos


def los_matrix(tx: np.ndarray, tx_offsets: np.ndarray, rx: np.ndarray,
               rx_offsets: np.ndarray, wavelength: float) -> np.ndarray:
    """Planar-wave LoS matrix (rx elements x tx elements), unit-modulus entries."""
    delta = rx - tx
    d = np.linalg.norm(delta)
    u = delta / d
    k0 = 2 * np.pi / wavelength
    a_rx = np.exp(-1j * k0 * rx_offsets @ u)
    a_tx = np.exp(-1j * k0 * tx_offsets @ u)
    return np.exp(-1j * k0 * d) * np.outer(a_rx, a_tx.conj())


def _rician(los: np.ndarray, factor: float, rng: np.random.Generator) -> np.ndarray:
    nlos = (rng.standard_normal(los.shape) + 1j * rng.standard_normal(los.shape)) / np.sqrt(2)
    if np.isinf(factor):
        return los.copy()
    return np.sqrt(factor / (1 + factor)) * los + np.sqrt(1 / (1 + factor)) * nlos


@dataclass(frozen=True, eq=False)
class ChannelSet:
    """Noise-normalized channels of one realization.

    The unscaled fading and the path-loss scale factors are stored apart so
    that CSI errors can be added to the fading alone. Use the ``D``, ``U``
    and ``G`` properties for the matrices entering H_k = D_k + G_k F(theta) U.
    """

    d_fading: Tuple[np.ndarray, ...]
    u: np.ndarray
    g_fading: Tuple[np.ndarray, ...]
    d_scale: np.ndarray
    g_scale: np.ndarray
    blocked: np.ndarray = None
    csi_error_var: float = 0.0
    seed: Optional[int] = None
    true: Optional["ChannelSet"] = field(default=None, repr=False)

    def __post_init__(self):
        k = len(self.d_fading)
        if self.blocked is None:
            object.__setattr__(self, "blocked", np.zeros(k, dtype=bool))
        n_el, n_t = self.u.shape
        if self.g_scale.shape[0] != k or len(self.g_fading) != k:
            raise ValueError("inconsistent user count across channel parts")
        if n_el % self.g_scale.shape[1]:
            raise ValueError("RIS element count is not a multiple of the RIS count")
        for dk, gk in zip(self.d_fading, self.g_fading):
            if dk.shape[1] != n_t or gk.shape != (dk.shape[0], n_el):
                raise ValueError("channel dimensions are inconsistent")

    @classmethod
    def from_matrices(cls, D: Sequence[np.ndarray], U: np.ndarray,
                      G: Sequence[np.ndarray]) -> "ChannelSet":
        """Wrap already-scaled matrices (unit scale factors, one RIS)."""
        D = tuple(np.asarray(d, dtype=complex) for d in D)
        G = tuple(np.asarray(g, dtype=complex) for g in G)
        return cls(d_fading=D, u=np.asarray(U, dtype=complex), g_fading=G,
                   d_scale=np.ones(len(D)), g_scale=np.ones((len(D), 1)))

    @property
    def k(self) -> int:
        return len(self.d_fading)

    @property
    def n_t(self) -> int:
        return self.u.shape[1]

    @property
    def n_s(self) -> int:
        return self.g_scale.shape[1]

    @property
    def n_elements(self) -> int:
        return self.u.shape[0]

    @property
    def antennas(self) -> Tuple[int, ...]:
        return tuple(d.shape[0] for d in self.d_fading)

    @property
    def D(self) -> list:
        return [np.zeros_like(d) if b else s * d
                for d, s, b in zip(self.d_fading, self.d_scale, self.blocked)]

    @property
    def U(self) -> np.ndarray:
        return self.u

    @property
    def G(self) -> list:
        per_ris = self.n_elements // self.n_s
        return [g * np.repeat(s, per_ris)[None, :] for g, s in zip(self.g_fading, self.g_scale)]

    def with_links(self, direct: bool = True, ris: bool = True) -> "ChannelSet":
        """Copy with the direct and/or RIS links switched off."""
        changes = {}
        if not direct:
            changes["blocked"] = np.ones(self.k, dtype=bool)
        if not ris:
            changes["g_scale"] = np.zeros_like(self.g_scale)
        if self.true is not None:
            changes["true"] = self.true.with_links(direct, ris)
        return dataclasses.replace(self, **changes)


def sample_channels(config: SystemConfig, geometry: Geometry, rng: np.random.Generator,
                    seed: Optional[int] = None) -> ChannelSet:
    """Draw one Rician realization of D_k, U and G_k for the given geometry."""
    lam = config.wavelength
    n_ris = config.n_ris
    bs_off = _ula_offsets(config.n_t, config.s_t)
    ris_off = _ura_offsets(n_ris, config.s_ris)
    kr = config.rician_factor

    d_fading, d_scale = [], []
    for k, n_k in enumerate(config.antennas):
        user_off = _ula_offsets(n_k, config.s_r)
        los = los_matrix(geometry.bs, bs_off, geometry.users[k], user_off, lam)
        d_fading.append(_rician(los, kr, rng))
        d_scale.append(np.sqrt(1.0 / (path_loss_direct(geometry, k, config) * config.noise)))

    u_blocks = []
    for i in range(config.n_s):
        los = los_matrix(geometry.bs, bs_off, geometry.ris[i], ris_off, lam)
        u_blocks.append(_rician(los, kr, rng))

    g_fading = []
    g_scale = np.zeros((config.k, config.n_s))
    for k, n_k in enumerate(config.antennas):
        user_off = _ula_offsets(n_k, config.s_r)
        blocks = []
        for i in range(config.n_s):
            los = los_matrix(geometry.ris[i], ris_off, geometry.users[k], user_off, lam)
            blocks.append(_rician(los, kr, rng))
            g_scale[k, i] = np.sqrt(path_gain_ris(geometry, i, k, config) / config.noise)
        g_fading.append(np.hstack(blocks))

    return ChannelSet(
        d_fading=tuple(d_fading),
        u=np.vstack(u_blocks),
        g_fading=tuple(g_fading),
        d_scale=np.asarray(d_scale),
        g_scale=g_scale,
        seed=seed,
    )


def apply_csi_error(channels: ChannelSet, variance: float, rng: np.random.Generator) -> ChannelSet:
    """Estimated channels: unscaled fading plus i.i.d. CN(0, variance) errors.

    The path-loss scale factors are untouched. The returned set keeps the
    true channels in ``.true`` for evaluating estimate-optimized solutions.
    """
    if variance < 0:
        raise ValueError("variance must be >= 0")
    true = channels.true if channels.true is not None else channels
    if variance == 0:
        return dataclasses.replace(channels, true=true)

    def noisy(x):
        e = rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)
        return x + np.sqrt(variance / 2) * e

    return dataclasses.replace(
        channels,
        d_fading=tuple(noisy(d) for d in channels.d_fading),
        u=noisy(channels.u),
        g_fading=tuple(noisy(g) for g in channels.g_fading),
        csi_error_var=channels.csi_error_var + variance,
        true=true,
    )


def apply_blockage(channels: ChannelSet, p: float, rng: np.random.Generator) -> ChannelSet:
    """Keep each user's direct link independently with probability ``p``."""
    if not 0 <= p <= 1:
        raise ValueError("non-blockage probability must lie in [0, 1]")
    blocked = channels.blocked | (rng.random(channels.k) >= p)
    true = None
    if channels.true is not None:
        true = dataclasses.replace(channels.true, blocked=channels.true.blocked | blocked)
    return dataclasses.replace(channels, blocked=blocked, true=true)
