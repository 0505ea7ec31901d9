"""Channel estimators: CKM-guided subspace estimation plus LS and OMP baselines.

All estimators take the received pilot tensor ``Y`` (``N_rx x p x n_pilot``)
and return a full-band channel estimate (``N_rx x N_tx x N_sc``).
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .ckm import ParamRange, SubspaceTriple, expand, project
from .harmonics import band_basis
from .scene import ArrayConfig, OfdmConfig, pilot_indices
from .tensor import TensorError, as_tensor3, frobenius, mode_n_product

log = logging.getLogger(__name__)

RMSE_FLOOR_DB = -300.0


@dataclass(frozen=True)
class EstimationConfig:
    refine_steps: int = 3
    refine_step_size: float = 0.1
    refine_passes: int = 1
    refine_noise_penalty: float = 2.0
    refine_max_growth: float = math.inf
    refine_backfit: bool = True
    min_angle_width: float = 0.02
    min_delay_width_bins: float = 1.0
    omp_oversample: tuple[int, int, int] = (2, 2, 2)
    omp_max_atoms: int = 256
    omp_resid_tol: float = 0.05

    def __post_init__(self):
        if self.refine_steps < 0 or self.refine_step_size <= 0 or self.omp_max_atoms < 1:
            raise ValueError(f"invalid estimation config {self}")


@dataclass(frozen=True)
class LinkGrid:
    """Array/OFDM geometry shared by the estimators for one target link."""

    rx_array: ArrayConfig
    tx_array: ArrayConfig
    ofdm: OfdmConfig
    p_f: int = 1
    delay_ref: float = 0.0

    @property
    def pilots(self) -> np.ndarray:
        return pilot_indices(self.ofdm.n_sc, self.p_f)

    @property
    def n_pilot(self) -> int:
        return int(self.pilots.size)


def sin_range(lo: float, hi: float) -> tuple[float, float]:
    """Extremes of ``sin`` over the angle interval ``[lo, hi]``."""
    if hi - lo >= 2 * math.pi:
        return -1.0, 1.0
    vals = [math.sin(lo), math.sin(hi)]
    # interior critical points pi/2 + k pi
    k0 = math.ceil((lo - math.pi / 2) / math.pi)
    k1 = math.floor((hi - math.pi / 2) / math.pi)
    for k in range(k0, k1 + 1):
        vals.append(math.sin(math.pi / 2 + k * math.pi))
    return min(vals), max(vals)


def range_bands(r: ParamRange, grid: LinkGrid):
    """Digital-frequency bands (lo, hi) for AoA, AoD and pilot-grid delay."""
    s_lo, s_hi = sin_range(r.aoa_min, r.aoa_max)
    aoa = (grid.rx_array.spacing_wl * s_lo, grid.rx_array.spacing_wl * s_hi)
    s_lo, s_hi = sin_range(r.aod_min, r.aod_max)
    aod = (grid.tx_array.spacing_wl * s_lo, grid.tx_array.spacing_wl * s_hi)
    scale = grid.p_f * grid.ofdm.delta_f
    delay = (scale * (r.tau_min - grid.delay_ref), scale * (r.tau_max - grid.delay_ref))
    return aoa, aod, delay


def _basis(n: int, band, n_cols=None, warn: bool = True) -> np.ndarray:
    lo, hi = band
    if warn and hi - lo > 1.0:
        warnings.warn(f"band of {hi - lo:.3f} cycles exceeds one cycle; clamped to the full space", stacklevel=3)
    return band_basis(n, lo, hi, n_cols)


def range_to_subspaces(r: ParamRange, grid: LinkGrid) -> SubspaceTriple:
    """DPSS subspace triple spanning the parameter box on the pilot grid."""
    aoa, aod, delay = range_bands(r, grid)
    return SubspaceTriple(
        _basis(grid.rx_array.n_elems, aoa),
        _basis(grid.tx_array.n_elems, aod),
        _basis(grid.n_pilot, delay),
    )


def ls_pilot_grid(y: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Per-subcarrier least squares ``Y x2 (X^T)^+``."""
    return mode_n_product(as_tensor3(y), np.linalg.pinv(np.asarray(X).T), 2)


def estimate_core(y: np.ndarray, sub: SubspaceTriple, X: np.ndarray) -> np.ndarray:
    """Core tensor ``Y x1 G1^H x2 G2^H (X^T)^+ x3 G3^H``."""
    y = as_tensor3(y)
    if y.shape[1] != np.asarray(X).shape[1]:
        raise TensorError(f"pilot length {np.asarray(X).shape[1]} does not match Y {y.shape}")
    return project(ls_pilot_grid(y, X), sub)


def reconstruct_cluster(core: np.ndarray, sub: SubspaceTriple) -> np.ndarray:
    core = as_tensor3(core)
    if core.shape != sub.ranks:
        raise TensorError(f"core {core.shape} does not match subspace ranks {sub.ranks}")
    return expand(core, sub)


def cancel_cluster(y: np.ndarray, h_k: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``Y - H_k x2 X^T``."""
    contrib = mode_n_product(as_tensor3(h_k), np.asarray(X).T, 2)
    if contrib.shape != np.shape(y):
        raise TensorError(f"cluster contribution {contrib.shape} does not match Y {np.shape(y)}")
    return np.asarray(y) - contrib


class _CorePower:
    """Core-power evaluator for range refinement on a fixed LS tensor.

    Caches the projections for the two modes that a single boundary move
    leaves untouched.
    """

    def __init__(self, z: np.ndarray, grid: LinkGrid):
        self.z = z
        self.grid = grid
        self.dims = (grid.rx_array.n_elems, grid.tx_array.n_elems, grid.n_pilot)

    def bases(self, r: ParamRange):
        return [_basis(n, b, warn=False) for n, b in zip(self.dims, range_bands(r, self.grid))]

    def power(self, bases) -> float:
        return frobenius(project(self.z, SubspaceTriple(*bases))) ** 2

    def partial(self, bases, axis: int) -> np.ndarray:
        t = self.z
        for mode in (1, 2, 3):
            if mode - 1 != axis:
                t = mode_n_product(t, bases[mode - 1].conj().T, mode)
        return t

    def power_with(self, partial: np.ndarray, axis: int, basis: np.ndarray) -> float:
        return frobenius(mode_n_product(partial, basis.conj().T, axis + 1)) ** 2


def _axis_step(r: ParamRange, axis: int, cfg: EstimationConfig, grid: LinkGrid) -> float:
    lo, hi = r.pairs()[axis]
    if axis < 2:
        floor = cfg.min_angle_width
    else:
        floor = cfg.min_delay_width_bins / (grid.ofdm.n_sc * grid.ofdm.delta_f)
    return cfg.refine_step_size * max(hi - lo, floor)


def refine_range_z(
    z: np.ndarray, r0: ParamRange, grid: LinkGrid, cfg: EstimationConfig, noise_var: float = 0.0
):
    """Greedy boundary search on the LS tensor ``z``; returns ``(range, objective)``.

    The objective is the core power less ``cfg.refine_noise_penalty *
    noise_var`` per core entry (``noise_var`` being the per-entry noise
    variance of ``z``); with no penalty it is the plain core power.
    """
    ev = _CorePower(z, grid)
    penalty = cfg.refine_noise_penalty * noise_var
    r = r0
    bases = ev.bases(r)
    best = ev.power(bases) - penalty * math.prod(b.shape[1] for b in bases)
    steps = [_axis_step(r0, ax, cfg, grid) for ax in range(3)]
    widths0 = r0.as_array() @ np.array([-1.0, 1.0])
    for _ in range(cfg.refine_passes):
        for axis in range(3):
            part = ev.partial(bases, axis)
            other_dims = math.prod(b.shape[1] for i, b in enumerate(bases) if i != axis)
            n = ev.dims[axis]
            for side in (0, 1):
                arr = r.as_array()
                origin = arr[axis, side]
                best_val = origin
                for k in range(-cfg.refine_steps, cfg.refine_steps + 1):
                    if k == 0:
                        continue
                    cand = arr.copy()
                    cand[axis, side] = origin + k * steps[axis]
                    if cand[axis, 0] > cand[axis, 1]:
                        continue
                    if cand[axis, 1] - cand[axis, 0] > cfg.refine_max_growth * widths0[axis] + 1e-15:
                        continue
                    band = range_bands(ParamRange.from_array(cand), grid)[axis]
                    if band[1] - band[0] > 1.0:
                        # wider than the aliasing-free span of the grid: not a usable subspace
                        continue
                    basis = _basis(n, band, warn=False)
                    val = ev.power_with(part, axis, basis) - penalty * other_dims * basis.shape[1]
                    if val > best + 1e-12 * abs(best):
                        best, best_val = val, cand[axis, side]
                arr[axis, side] = best_val
                r = ParamRange.from_array(arr)
            bases[axis] = _basis(n, range_bands(r, grid)[axis], warn=False)
    return r, best


def refine_range(y, r0: ParamRange, X, cfg: EstimationConfig, grid: LinkGrid, noise_var: float = 0.0) -> ParamRange:
    """Adjust the box boundaries in finite steps to maximise the (penalised) core power."""
    r, _ = refine_range_z(ls_pilot_grid(y, X), r0, grid, cfg, ls_noise_var(X, noise_var))
    return r


def ls_noise_var(X: np.ndarray, noise_var: float) -> float:
    """Per-entry noise variance of ``Y x2 (X^T)^+`` for white noise of variance ``noise_var``."""
    X = np.asarray(X)
    return noise_var * float(np.linalg.norm(np.linalg.pinv(X.T)) ** 2) / X.shape[0]


def interpolation_matrix(r: ParamRange, grid: LinkGrid, n_cols: int, rcond: float = 0.1) -> np.ndarray:
    """``N_sc x n_pilot`` operator taking pilot-grid delay content to the full band.

    The full-band DPSS basis over the same delay band is fitted to the pilot
    samples and re-evaluated on every subcarrier; for an integer number of
    pilot periods this equals ``sqrt(p_f) * G_full G_pilot^H``.
    """
    dfull = grid.ofdm.delta_f
    full = band_basis(
        grid.ofdm.n_sc, dfull * (r.tau_min - grid.delay_ref), dfull * (r.tau_max - grid.delay_ref), n_cols
    )
    sub = full[grid.pilots, :]
    # truncated pseudo-inverse: directions that nearly alias on the pilot grid are dropped
    return full @ np.linalg.pinv(sub, rcond=rcond)


def interpolate_cluster(h_k: np.ndarray, g_delay: np.ndarray, r: ParamRange, grid: LinkGrid) -> np.ndarray:
    """Interpolate a pilot-grid single-cluster estimate to all subcarriers."""
    h_k = as_tensor3(h_k)
    if h_k.shape[2] != grid.n_pilot or g_delay.shape[0] != grid.n_pilot:
        raise TensorError("pilot-grid tensor and delay basis disagree on the pilot count")
    m = interpolation_matrix(r, grid, g_delay.shape[1])
    proj = g_delay @ g_delay.conj().T
    return mode_n_product(h_k, m @ proj, 3)


def cluster_order(z: np.ndarray, ranges, grid: LinkGrid) -> list[int]:
    powers = [frobenius(project(z, range_to_subspaces(r, grid))) ** 2 for r in ranges]
    return sorted(range(len(ranges)), key=lambda i: (-powers[i], i))


def estimate_clusterckm(
    y: np.ndarray,
    ranges,
    X: np.ndarray,
    cfg: EstimationConfig,
    grid: LinkGrid,
    return_details: bool = False,
    noise_var: float = 0.0,
):
    """Sequential per-cluster subspace estimation guided by CKM ranges.

    Clusters run in descending order of their initial core power.  Each one
    refines its range, estimates its core, is cancelled from ``Y`` and is
    interpolated to the full band; the estimate is the sum over clusters.
    With ``cfg.refine_backfit`` an unrefined sequential pass runs first and
    each cluster is then refined against ``Z`` minus the other clusters'
    current estimates, so energy already explained elsewhere does not pull
    its boundaries outward.
    ``noise_var`` (per received sample) only feeds the refinement penalty.
    """
    ranges = list(ranges)
    if not ranges:
        raise ValueError("need at least one parameter range")
    y = as_tensor3(y)
    X = np.asarray(X)
    z0 = ls_pilot_grid(y, X)
    order = cluster_order(z0, ranges, grid)
    z_noise = ls_noise_var(X, noise_var)
    parts: dict[int, np.ndarray] = {}
    if cfg.refine_backfit:
        # unrefined sequential pass: every cluster gets a first estimate to cancel
        z = z0
        for i in order:
            sub = range_to_subspaces(ranges[i], grid)
            parts[i] = reconstruct_cluster(project(z, sub), sub)
            z = z - parts[i]
    out = np.zeros((grid.rx_array.n_elems, grid.tx_array.n_elems, grid.ofdm.n_sc), dtype=np.complex128)
    details = []
    z = z0
    for i in order:
        if cfg.refine_backfit:
            # refine against the clusters' own signal: the others' current estimates removed
            z = z0 - sum(p for j, p in parts.items() if j != i)
        r_star, power = refine_range_z(z, ranges[i], grid, cfg, z_noise)
        sub = range_to_subspaces(r_star, grid)
        core = project(z, sub)
        h_k = reconstruct_cluster(core, sub)
        parts[i] = h_k
        if not cfg.refine_backfit:
            z = z - h_k
        out += interpolate_cluster(h_k, sub.g_delay, r_star, grid)
        details.append({"index": i, "range": r_star, "objective": power, "core_power": frobenius(core) ** 2, "ranks": sub.ranks})
    if return_details:
        return out, details
    return out


def fft_interpolate(hp: np.ndarray, p_f: int, n_sc: int) -> np.ndarray:
    """Delay-domain zero-padding interpolation from the pilot grid to ``n_sc`` subcarriers.

    The ``n`` taps of the pilot-grid IDFT are read as causal delays
    ``k / (n p_f)`` (delays are measured from the first arrival), zeros are
    appended up to ``n p_f`` taps and the forward DFT gives the full band;
    a ragged tail beyond ``n_sc`` is dropped.
    """
    hp = as_tensor3(hp)
    n = hp.shape[2]
    if p_f == 1 and n == n_sc:
        return hp.copy()
    taps = np.fft.ifft(hp, axis=2)
    padded = np.zeros(hp.shape[:2] + (n * p_f,), dtype=np.complex128)
    padded[:, :, :n] = taps
    return np.fft.fft(padded, axis=2)[:, :, :n_sc]


def estimate_ls(y: np.ndarray, X: np.ndarray, p_f: int, n_sc: int) -> np.ndarray:
    return fft_interpolate(ls_pilot_grid(y, X), p_f, n_sc)


def _grid_atoms(n: int, g: int) -> np.ndarray:
    """Unit-norm steering vectors on the grid ``k / g`` (``n x g``)."""
    return np.exp(-2j * np.pi * np.outer(np.arange(n), np.arange(g) / g)) / math.sqrt(n)


def omp_pilot_grid(z: np.ndarray, oversample=(2, 2, 2), max_atoms: int = 64, resid_tol: float = 0.05):
    """OMP over the Kronecker dictionary of oversampled DFT steering vectors.

    Correlations with the whole dictionary are zero-padded inverse FFTs of
    the residual.  The least-squares coefficients come from a Cholesky
    factor of the atom Gram matrix grown by one row per iteration.  Returns
    ``(estimate, atoms, residual_norms)`` with atoms as grid-index triples.
    """
    z = as_tensor3(z)
    dims = z.shape
    grid = tuple(max(int(o * n), n) for o, n in zip(oversample, dims))
    atoms_1d = [_grid_atoms(n, g) for n, g in zip(dims, grid)]
    norm_z = frobenius(z)
    scale = math.prod(grid) / math.sqrt(math.prod(dims))

    def correlate(t):
        # a^H t = sum t e^{+j2pi k n/g} / sqrt(n) = g * ifft(t, g)[k] / sqrt(n)
        return np.fft.ifftn(t, s=grid, axes=(0, 1, 2)) * scale

    corr0 = correlate(z)
    resid = z.copy()
    chosen: list[tuple[int, int, int]] = []
    norms = [norm_z]
    if norm_z == 0:
        return np.zeros_like(z), chosen, norms
    chol = np.zeros((max_atoms, max_atoms), dtype=np.complex128)
    rhs = np.zeros(max_atoms, dtype=np.complex128)
    cols = [np.zeros((n, max_atoms), dtype=np.complex128) for n in dims]
    corr = corr0
    while len(chosen) < max_atoms and norms[-1] > resid_tol * norm_z:
        idx = tuple(int(i) for i in np.unravel_index(int(np.argmax(np.abs(corr))), grid))
        if idx in chosen:
            break
        k = len(chosen)
        new = [atoms_1d[m][:, idx[m]] for m in range(3)]
        # Gram entries of separable atoms are products of the 1-D inner products
        g = np.ones(k, dtype=np.complex128)
        for m in range(3):
            g *= cols[m][:, :k].conj().T @ new[m]
        w = scipy.linalg.solve_triangular(chol[:k, :k], g, lower=True) if k else g
        d2 = 1.0 - float(np.vdot(w, w).real)
        if d2 <= 1e-10:
            break
        chol[k, :k] = w.conj()
        chol[k, k] = math.sqrt(d2)
        for m in range(3):
            cols[m][:, k] = new[m]
        rhs[k] = corr0[idx]
        chosen.append(idx)
        n_at = k + 1
        coef = scipy.linalg.cho_solve((chol[:n_at, :n_at], True), rhs[:n_at])
        resid = z - _atoms_tensor([c[:, :n_at] for c in cols], coef)
        norms.append(frobenius(resid))
        corr = correlate(resid)
    return z - resid, chosen, norms


def _atoms_tensor(cols, coef) -> np.ndarray:
    """``sum_r coef_r a_r o b_r o c_r`` for column-stacked factors."""
    a, b, c = cols
    ab = (a[:, None, :] * coef[None, None, :]) * b[None, :, :]
    return (ab.reshape(-1, ab.shape[2]) @ c.T).reshape(a.shape[0], b.shape[0], c.shape[0])


def estimate_omp(
    y: np.ndarray, X: np.ndarray, cfg: EstimationConfig, p_f: int, n_sc: int, noise_var: float | None = None
) -> np.ndarray:
    """OMP on the pilot grid, then FFT interpolation.

    With ``noise_var`` the iterations also stop once the residual reaches the
    expected noise norm of the per-subcarrier LS tensor.
    """
    z = ls_pilot_grid(y, X)
    tol = cfg.omp_resid_tol
    nz = frobenius(z)
    if noise_var and nz > 0:
        tol = max(tol, math.sqrt(z.size * ls_noise_var(X, noise_var)) / nz)
    est, _, _ = omp_pilot_grid(z, cfg.omp_oversample, cfg.omp_max_atoms, tol)
    return fft_interpolate(est, p_f, n_sc)


def rmse_db(h_hat: np.ndarray, h_true: np.ndarray) -> float:
    """``10 log10(||h_hat - h_true||^2 / ||h_true||^2)`` floored at -300 dB."""
    h_true = np.asarray(h_true)
    if np.shape(h_hat) != h_true.shape:
        raise TensorError(f"shape mismatch: {np.shape(h_hat)} vs {h_true.shape}")
    ref = frobenius(h_true) ** 2
    if ref == 0:
        raise ValueError("RMSE undefined for a zero reference channel")
    err = frobenius(np.asarray(h_hat) - h_true) ** 2
    if err == 0:
        return RMSE_FLOOR_DB
    return max(10 * math.log10(err / ref), RMSE_FLOOR_DB)
