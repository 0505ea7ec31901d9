"""Clustered-scatterer environments, MIMO-OFDM channel synthesis and pilots.

Geometry is two-dimensional.  An array's ``axis`` is the unit vector along
which its elements are laid out; its broadside is the axis rotated by +90
degrees.  Angles are measured from broadside, positive towards ``-axis``,
which makes the element phase progression ``exp(-j 2 pi d/lambda sin(theta) n)``
match the steering-vector convention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import frobenius, mode_n_product

SPEED_OF_LIGHT = 299_792_458.0


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class ArrayConfig:
    n_elems: int
    spacing: float = 0.05
    wavelength: float = 0.1
    axis: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self):
        if self.n_elems < 1 or self.spacing <= 0 or self.wavelength <= 0:
            raise SceneError(f"invalid array config {self}")
        if abs(math.hypot(*self.axis) - 1.0) > 1e-9:
            raise SceneError(f"array axis must be a unit vector, got {self.axis}")

    @property
    def broadside(self) -> np.ndarray:
        ax, ay = self.axis
        return np.array([-ay, ax])

    @property
    def spacing_wl(self) -> float:
        return self.spacing / self.wavelength

    def angle_of(self, direction) -> np.ndarray:
        """Angle from broadside of direction vector(s) with shape ``(..., 2)``."""
        d = np.asarray(direction, dtype=float)
        along = -(d @ np.asarray(self.axis, dtype=float))
        across = d @ self.broadside
        return np.arctan2(along, across)

    def direction_of(self, theta) -> np.ndarray:
        """Unit vector(s) leaving the array at angle ``theta`` from broadside."""
        theta = np.asarray(theta, dtype=float)
        return (
            np.cos(theta)[..., None] * self.broadside
            - np.sin(theta)[..., None] * np.asarray(self.axis, dtype=float)
        )

    def spatial_freq(self, theta) -> np.ndarray:
        return self.spacing_wl * np.sin(theta)


@dataclass(frozen=True)
class OfdmConfig:
    n_sc: int
    delta_f: float

    def __post_init__(self):
        if self.n_sc < 1 or self.delta_f <= 0:
            raise SceneError(f"invalid OFDM config {self}")

    @classmethod
    def from_bandwidth(cls, n_sc: int, bandwidth: float) -> "OfdmConfig":
        return cls(n_sc=n_sc, delta_f=bandwidth / n_sc)


@dataclass
class ScattererCluster:
    positions: np.ndarray  # (L, 2) metres
    gains: np.ndarray  # (L,) complex

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        self.gains = np.asarray(self.gains, dtype=np.complex128).ravel()
        if self.positions.shape[0] != self.gains.shape[0] or self.gains.size < 1:
            raise SceneError("cluster needs matching, non-empty positions and gains")


@dataclass
class Environment:
    clusters: list[ScattererCluster] = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.clusters)

    def positions(self) -> np.ndarray:
        if not self.clusters:
            return np.zeros((0, 2))
        return np.concatenate([c.positions for c in self.clusters])

    def gains(self) -> np.ndarray:
        if not self.clusters:
            return np.zeros(0, dtype=np.complex128)
        return np.concatenate([c.gains for c in self.clusters])

    def subset(self, k: int) -> "Environment":
        return Environment([self.clusters[k]])


@dataclass(frozen=True)
class PathParams:
    aoa: float
    aod: float
    delay: float
    gain: complex = 0j


@dataclass(frozen=True)
class PilotConfig:
    X: np.ndarray  # N_tx x p
    p_f: int = 1

    @property
    def p(self) -> int:
        return int(self.X.shape[1])


def sample_environment(centers, n_scatterers: int, std: float, seed) -> Environment:
    """Gaussian scatterer clouds around ``centers`` with CN(0, 1) gains."""
    if std < 0:
        raise SceneError("cluster std must be non-negative")
    rng = np.random.default_rng(seed)
    clusters = []
    for c in np.asarray(centers, dtype=float).reshape(-1, 2):
        pos = c + std * rng.standard_normal((n_scatterers, 2))
        g = (rng.standard_normal(n_scatterers) + 1j * rng.standard_normal(n_scatterers)) / math.sqrt(2)
        clusters.append(ScattererCluster(pos, g))
    return Environment(clusters)


def path_geometry(p_tx, p_rx, points, tx_array: ArrayConfig, rx_array: ArrayConfig):
    """Vectorised AoA, AoD, delay and total length for scatterers ``points`` (L x 2)."""
    p_tx = np.asarray(p_tx, dtype=float)
    p_rx = np.asarray(p_rx, dtype=float)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    to_rx = pts - p_rx
    to_tx = pts - p_tx
    d_rx = np.hypot(to_rx[:, 0], to_rx[:, 1])
    d_tx = np.hypot(to_tx[:, 0], to_tx[:, 1])
    if np.any(d_rx == 0) or np.any(d_tx == 0):
        raise SceneError("scatterer coincides with a transceiver")
    length = d_rx + d_tx
    return rx_array.angle_of(to_rx), tx_array.angle_of(to_tx), length / SPEED_OF_LIGHT, length


def path_params(p_tx, p_rx, p_scat, tx_array: ArrayConfig, rx_array: ArrayConfig) -> PathParams:
    aoa, aod, tau, _ = path_geometry(p_tx, p_rx, [p_scat], tx_array, rx_array)
    return PathParams(float(aoa[0]), float(aod[0]), float(tau[0]))


def first_arrival(env: Environment, p_tx, p_rx) -> float:
    """Smallest scatterer-path delay of a link (ideal timing synchronisation)."""
    pts = env.positions()
    if pts.shape[0] == 0:
        return 0.0
    d = np.hypot(*(pts - np.asarray(p_rx)).T) + np.hypot(*(pts - np.asarray(p_tx)).T)
    return float(d.min() / SPEED_OF_LIGHT)


def assemble_channel(
    env: Environment,
    p_tx,
    p_rx,
    tx_array: ArrayConfig,
    rx_array: ArrayConfig,
    ofdm: OfdmConfig,
    delay_ref: float = 0.0,
) -> np.ndarray:
    """Channel tensor ``N_rx x N_tx x N_sc`` summing one path per scatterer.

    Each scatterer gain is divided by the total path length.  ``delay_ref``
    is subtracted from every delay, modelling the receiver's timing
    reference; 0 keeps absolute delays.
    """
    shape = (rx_array.n_elems, tx_array.n_elems, ofdm.n_sc)
    pts = env.positions()
    if pts.shape[0] == 0:
        return np.zeros(shape, dtype=np.complex128)
    aoa, aod, tau, length = path_geometry(p_tx, p_rx, pts, tx_array, rx_array)
    g = env.gains() / length
    return channel_from_paths(
        g, rx_array.spatial_freq(aoa), tx_array.spatial_freq(aod),
        ofdm.delta_f * (tau - delay_ref), shape,
    )


def channel_from_paths(gains, f_rx, f_tx, f_delay, shape) -> np.ndarray:
    """Sum of rank-1 steering tensors with the given digital frequencies."""
    n_rx, n_tx, n_sc = shape
    a = np.exp(-2j * np.pi * np.outer(np.arange(n_rx), f_rx))
    b = np.exp(-2j * np.pi * np.outer(np.arange(n_tx), f_tx))
    c = np.exp(-2j * np.pi * np.outer(np.arange(n_sc), f_delay))
    ab = (a * np.asarray(gains)[None, :])[:, None, :] * b[None, :, :]
    return (ab.reshape(n_rx * n_tx, -1) @ c.T).reshape(n_rx, n_tx, n_sc)


def pilot_matrix(n_tx: int, p: int, seed) -> np.ndarray:
    """Random ``n_tx x p`` pilot block with orthogonal rows and ``||X||_F^2 = p``."""
    if p < n_tx:
        raise SceneError(f"pilot length p={p} must be >= n_tx={n_tx}")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((p, n_tx)) + 1j * rng.standard_normal((p, n_tx))
    q, _ = np.linalg.qr(g)
    return math.sqrt(p / n_tx) * q.conj().T


def pilot_indices(n_sc: int, p_f: int) -> np.ndarray:
    if p_f < 1:
        raise SceneError("pilot period must be >= 1")
    return np.arange(0, n_sc, p_f)


def transmit(h: np.ndarray, pilots: PilotConfig, noise_var: float, seed):
    """Received pilot signal ``Y = Hbar x2 X^T + N`` and the pilot-grid channel ``Hbar``."""
    hbar = np.asarray(h)[:, :, pilot_indices(h.shape[2], pilots.p_f)]
    y = mode_n_product(hbar, pilots.X.T, 2)
    if noise_var > 0:
        rng = np.random.default_rng(seed)
        y = y + complex_noise(rng, y.shape, noise_var)
    return y, hbar


def complex_noise(rng: np.random.Generator, shape, var: float) -> np.ndarray:
    s = math.sqrt(var / 2)
    return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def perturb_channel(h: np.ndarray, error_db: float, seed) -> np.ndarray:
    """Add white complex Gaussian error ``error_db`` below the channel power."""
    h = np.asarray(h)
    if math.isinf(error_db) and error_db > 0:
        return h.copy()
    var = frobenius(h) ** 2 * 10 ** (-error_db / 10) / h.size
    return h + complex_noise(np.random.default_rng(seed), h.shape, var)


def snr_to_noise_var(h: np.ndarray, snr_db: float) -> float:
    power = frobenius(h) ** 2
    if power == 0:
        raise SceneError("SNR undefined for a zero channel")
    return power / (np.asarray(h).size * 10 ** (snr_db / 10))
