"""Steering vectors, single-snapshot MUSIC and band-limited DPSS bases.

Digital frequencies are in cycles per sample and follow the steering
convention ``gamma_N(w)[n] = exp(-j 2 pi w n)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal.windows import dpss

DEFAULT_GRID = 4096


class HarmonicsError(ValueError):
    pass


def wrap_freq(omega):
    """Map digital frequencies onto ``[-0.5, 0.5)``."""
    return (np.asarray(omega, dtype=float) + 0.5) % 1.0 - 0.5


def steering(n: int, omega: float) -> np.ndarray:
    if n < 1:
        raise HarmonicsError("steering length must be >= 1")
    return np.exp(-2j * np.pi * omega * np.arange(n))


@dataclass(frozen=True)
class FreqBand:
    """Closed digital-frequency interval ``[lo, hi]`` sampled over ``n`` points."""

    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if not self.hi > self.lo:
            raise HarmonicsError(f"degenerate band [{self.lo}, {self.hi}]")
        if self.hi - self.lo > 1.0 + 1e-12:
            raise HarmonicsError(f"band wider than one cycle: [{self.lo}, {self.hi}]")
        if self.n < 1:
            raise HarmonicsError("band length must be >= 1")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def center(self) -> float:
        return float(wrap_freq(0.5 * (self.lo + self.hi)))

    @property
    def n_dpss(self) -> int:
        return dpss_count(self.n, self.width)


def dpss_count(n: int, width: float) -> int:
    """Number of DPSS columns for a band of ``width`` cycles over ``n`` samples."""
    # round before ceil so that e.g. 16 * 0.25 stays 4 despite float noise
    return min(n, math.ceil(round(n * max(width, 0.0), 9)) + 1)


def music_freq(
    v: np.ndarray,
    grid_res: int = DEFAULT_GRID,
    subarray: int | None = None,
) -> float:
    """Dominant digital frequency of a single vector by smoothed MUSIC.

    A covariance is formed from forward-backward spatial smoothing over
    subarrays of length ``ceil(2N/3)`` (the whole vector for ``N < 4``);
    the signal subspace is its principal eigenvector.  The pseudo-spectrum
    peak is found on a ``grid_res`` point grid and refined by fitting a
    parabola through the three samples around it.
    """
    v = np.asarray(v, dtype=np.complex128).ravel()
    n = v.size
    if n < 2:
        raise HarmonicsError("MUSIC needs at least two samples")
    if not np.any(v):
        raise HarmonicsError("MUSIC of the zero vector is undefined")
    m = subarray or (math.ceil(2 * n / 3) if n >= 4 else n)
    m = min(max(m, 1), n)
    snaps = np.lib.stride_tricks.sliding_window_view(v, m)  # (L, m)
    r = snaps.T @ snaps.conj() / snaps.shape[0]
    r = 0.5 * (r + np.flip(r.conj()))
    _, vecs = np.linalg.eigh(r)
    e = vecs[:, -1]
    # |e^H a(w)|^2 on the grid w = k / grid_res; MUSIC with one signal dimension
    # peaks where this projection is largest
    q = np.abs(np.fft.fft(e.conj(), grid_res)) ** 2
    k = int(np.argmax(q))
    y0, y1, y2 = q[(k - 1) % grid_res], q[k], q[(k + 1) % grid_res]
    denom = y0 - 2.0 * y1 + y2
    delta = 0.5 * (y0 - y2) / denom if denom < 0 else 0.0
    delta = float(np.clip(delta, -0.5, 0.5))
    return float(wrap_freq((k + delta) / grid_res))


def dpss_band(band: FreqBand, n_cols: int | None = None) -> np.ndarray:
    """Orthonormal DPSS basis for ``band``: ``band.n x n_cols``.

    Baseband Slepian sequences with half bandwidth ``W = width / 2`` are
    modulated to the band centre.  Columns are ordered by decreasing
    in-band concentration.  ``n_cols`` defaults to ``ceil(N * width) + 1``.
    """
    if n_cols is None:
        n_cols = band.n_dpss
    return _dpss_cached(band.n, float(band.lo), float(band.hi), int(n_cols)).copy()


def band_basis(n: int, lo: float, hi: float, n_cols: int | None = None) -> np.ndarray:
    """Like :func:`dpss_band` but tolerant of zero-width and over-wide bands.

    A zero-width band yields the normalised steering vector at ``lo``; a
    band of one cycle or more is clamped to the full space.
    """
    width = min(max(hi - lo, 0.0), 1.0)
    if n_cols is None:
        n_cols = dpss_count(n, width)
    n_cols = int(min(max(n_cols, 1), n))
    center = 0.5 * (lo + hi)
    if width <= 0.0:
        return steering(n, center)[:, None] / math.sqrt(n)
    return _dpss_cached(n, center - width / 2, center + width / 2, n_cols).copy()


@lru_cache(maxsize=4096)
def _dpss_cached(n: int, lo: float, hi: float, n_cols: int) -> np.ndarray:
    n_cols = min(n_cols, n)
    width = hi - lo
    center = 0.5 * (lo + hi)
    half_bw = 0.5 * width
    mod = steering(n, center)[:, None]
    if n == 1:
        return mod.astype(np.complex128)
    if n_cols >= n or n * half_bw >= n / 2 - 1e-9:
        # band covers (almost) everything: any orthonormal basis ordered by
        # concentration will do, the unitary DFT centred on the band is one
        idx = np.arange(n) - n // 2
        order = np.argsort(np.abs(idx), kind="stable")
        cols = np.stack([steering(n, center + i / n) for i in idx[order]], axis=1)
        return cols[:, :n_cols] / math.sqrt(n)
    tapers = dpss(n, n * half_bw, Kmax=n_cols, sym=True, norm=2)
    tapers = np.atleast_2d(tapers).T
    basis = mod * tapers
    # re-orthonormalise to clean up eigen-solver round-off
    q, r = np.linalg.qr(basis)
    d = np.diag(r)
    q = q * (d / np.abs(d))[None, :]
    return q


def shifted_orthobasis(n: int, omega0: float, indices) -> np.ndarray:
    """Columns ``steering(n, omega0 + i/n) / sqrt(n)`` for ``i`` in ``indices``."""
    idx = np.asarray(list(indices), dtype=int)
    if idx.size == 0:
        return np.zeros((n, 0), dtype=np.complex128)
    wrapped = idx % n
    if np.unique(wrapped).size != wrapped.size:
        raise HarmonicsError("duplicate basis indices after wrapping")
    k = np.arange(n)[:, None]
    return np.exp(-2j * np.pi * k * (omega0 + idx[None, :] / n)) / math.sqrt(n)


def projection_power(basis_col: np.ndarray, unfolded: np.ndarray) -> float:
    """``||basis_col^H unfolded||_F^2``."""
    col = np.asarray(basis_col).ravel()
    m = np.asarray(unfolded)
    if m.ndim != 2 or m.shape[0] != col.size:
        raise HarmonicsError(f"basis length {col.size} does not match rows {m.shape}")
    return float(np.sum(np.abs(col.conj() @ m) ** 2))


def shifted_projection_powers(unfolded: np.ndarray, omega0: float) -> np.ndarray:
    """Projection power onto every column of the full shifted basis.

    Entry ``i`` (``0 <= i < N``) is the power on column ``i``; negative
    offsets are entry ``N + i``.  Computed with one FFT per unfolding column.
    """
    m = np.asarray(unfolded)
    n = m.shape[0]
    demod = m * np.exp(2j * np.pi * omega0 * np.arange(n))[:, None]
    # gamma^H x = sum_k x_k e^{+j2pi (w0 + i/N) k}  ->  N * ifft over k
    coeffs = np.fft.ifft(demod, axis=0) * math.sqrt(n)
    return np.sum(np.abs(coeffs) ** 2, axis=1)


def concentration(basis: np.ndarray, band: FreqBand) -> np.ndarray:
    """Fraction of each column's energy inside ``band`` (sinc-kernel quadratic form)."""
    n = band.n
    half_bw = band.width / 2
    d = np.arange(n)[:, None] - np.arange(n)[None, :]
    kernel = np.where(d == 0, 2 * half_bw, np.sin(2 * np.pi * half_bw * d) / (np.pi * np.where(d == 0, 1, d)))
    mod = steering(n, 0.5 * (band.lo + band.hi))
    base = basis * mod.conj()[:, None]
    return np.real(np.einsum("ni,nm,mi->i", base.conj(), kernel, base))
