"""Cluster channel knowledge map: construction from historical channels and queries.

Construction runs per historical sample: split the channel into
single-cluster parts by subspace projection, fit each part with a CP model
whose components act as equivalent paths, and turn each component's AoA and
delay into an equivalent-scatterer position on the ray/ellipse intersection.
The pooled points are re-clustered; a query maps every group to the box of
path parameters it induces on a new Tx-Rx link.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.cluster import KMeans

from .harmonics import (
    DEFAULT_GRID,
    music_freq,
    shifted_orthobasis,
    shifted_projection_powers,
    wrap_freq,
)
from .scene import SPEED_OF_LIGHT, ArrayConfig, OfdmConfig, path_geometry
from .tensor import (
    MODES,
    TensorError,
    as_tensor3,
    best_rank1,
    compress,
    cp_decompose,
    frobenius,
    multi_mode_product,
    unfold,
)

log = logging.getLogger(__name__)

CKM_FORMAT = "clusterckm"
CKM_VERSION = 1


class CkmError(ValueError):
    pass


@dataclass
class HistoricalSample:
    """Noisy channel tensor with its Tx/Rx positions.

    ``delay_ref`` is the receiver timing reference the tensor's delays are
    measured against (0 for absolute delays).
    """

    h_hat: np.ndarray
    p_tx: np.ndarray
    p_rx: np.ndarray
    delay_ref: float = 0.0


@dataclass
class SubspaceTriple:
    g_aoa: np.ndarray
    g_aod: np.ndarray
    g_delay: np.ndarray

    @property
    def ranks(self) -> tuple[int, int, int]:
        return (self.g_aoa.shape[1], self.g_aod.shape[1], self.g_delay.shape[1])

    def as_tuple(self):
        return (self.g_aoa, self.g_aod, self.g_delay)


@dataclass(frozen=True)
class ParamRange:
    """Box of AoA (rad), AoD (rad) and delay (s) values for one cluster."""

    aoa_min: float
    aoa_max: float
    aod_min: float
    aod_max: float
    tau_min: float
    tau_max: float

    def __post_init__(self):
        for lo, hi in self.pairs():
            if lo > hi:
                raise CkmError(f"empty range [{lo}, {hi}]")

    def pairs(self):
        return (
            (self.aoa_min, self.aoa_max),
            (self.aod_min, self.aod_max),
            (self.tau_min, self.tau_max),
        )

    def as_array(self) -> np.ndarray:
        return np.array(self.pairs(), dtype=float)

    @classmethod
    def from_array(cls, a) -> "ParamRange":
        a = np.asarray(a, dtype=float).reshape(3, 2)
        return cls(*a.ravel().tolist())

    def expand(self, margin: float) -> "ParamRange":
        a = self.as_array()
        w = a[:, 1] - a[:, 0]
        a[:, 0] -= margin * w
        a[:, 1] += margin * w
        return ParamRange.from_array(a)

    def contains(self, other: "ParamRange") -> bool:
        a, b = self.as_array(), other.as_array()
        return bool(np.all(a[:, 0] <= b[:, 0]) and np.all(a[:, 1] >= b[:, 1]))

    def contains_point(self, aoa, aod, tau, atol=0.0) -> bool:
        pts = np.stack(np.broadcast_arrays(aoa, aod, tau), axis=-1).reshape(-1, 3)
        a = self.as_array()
        return bool(np.all((pts >= a[:, 0] - atol) & (pts <= a[:, 1] + atol)))


@dataclass
class ClusterCkm:
    """ES groups, one per cluster, with the spatial radius each group's points stand for.

    ``radii[k]`` is the estimated extent of cluster ``k`` around each of its
    ES points (metres); 0 means the points alone describe the cluster.
    """

    es_clusters: list[np.ndarray]
    metadata: dict = field(default_factory=dict)
    radii: list[float] | None = None

    def __post_init__(self):
        self.es_clusters = [np.asarray(g, dtype=float).reshape(-1, 2) for g in self.es_clusters]
        if any(g.shape[0] == 0 for g in self.es_clusters):
            raise CkmError("ES groups must be non-empty")
        if self.radii is None:
            self.radii = [0.0] * len(self.es_clusters)
        self.radii = [float(r) for r in self.radii]
        if len(self.radii) != len(self.es_clusters) or any(not r >= 0 for r in self.radii):
            raise CkmError("need one non-negative radius per ES group")

    @property
    def K(self) -> int:
        return len(self.es_clusters)

    @property
    def n_points(self) -> int:
        return int(sum(g.shape[0] for g in self.es_clusters))

    def all_points(self) -> np.ndarray:
        if not self.es_clusters:
            return np.zeros((0, 2))
        return np.concatenate(self.es_clusters)

    def centroids(self) -> np.ndarray:
        return np.array([g.mean(axis=0) for g in self.es_clusters]).reshape(-1, 2)

    def to_dict(self) -> dict:
        return {
            "format": CKM_FORMAT,
            "version": CKM_VERSION,
            "metadata": self.metadata,
            "clusters": [g.tolist() for g in self.es_clusters],
            "radii": list(self.radii),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterCkm":
        if d.get("format") != CKM_FORMAT:
            raise CkmError(f"not a {CKM_FORMAT} document")
        if d.get("version") != CKM_VERSION:
            raise CkmError(f"unsupported CKM version {d.get('version')!r}")
        return cls([np.array(g, dtype=float) for g in d["clusters"]], d.get("metadata", {}), d.get("radii"))

    def save(self, path) -> None:
        # json writes floats with repr(), which round-trips exactly
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ClusterCkm":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class CkmConfig:
    """Knobs for :func:`build_ckm`; defaults follow the documented design choices."""

    rx_array: ArrayConfig
    tx_array: ArrayConfig
    ofdm: OfdmConfig
    power_thresh: float = 0.05
    stop_frac: float = 0.02
    min_component_frac: float = 0.01
    min_part_snr: float = 10.0
    max_clusters: int = 8
    energy_frac: float = 0.95
    max_rank: int = 12
    min_rank_gain: float = 0.15
    cp_iters: int = 200
    cp_tol: float = 1e-8
    cp_restarts: int = 1
    grid_res: int = DEFAULT_GRID
    k_min: int = 1
    k_max: int = 6
    outlier_sigma: float = 3.0
    min_group_size: int = 3
    single_cluster_dbi: float = 1.0
    kmeans_restarts: int = 10
    delay_wrap: float = 0.05
    seed: int = 0

    def describe(self) -> dict:
        d = asdict(self)
        for key in ("rx_array", "tx_array", "ofdm"):
            d[key] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in d[key].items()}
        return d


# -- channel division --------------------------------------------------------


def estimate_cluster_center(h: np.ndarray, grid_res: int = DEFAULT_GRID) -> tuple[float, float, float]:
    """Digital frequencies (AoA, AoD, delay) of the dominant rank-1 component."""
    h = as_tensor3(h)
    if frobenius(h) == 0:
        raise CkmError("cannot locate a cluster in the zero tensor")
    f = best_rank1(h)
    return tuple(music_freq(v[:, 0], grid_res) for v in (f.A, f.B, f.C))


def _kept_run(powers: np.ndarray, thresh: float, max_gap: int = 0) -> np.ndarray:
    """Signed offsets of the circular run around the strongest bin above ``thresh * max``.

    The run may step over up to ``max_gap`` consecutive bins below the
    threshold when a bin above it follows.
    """
    n = powers.size
    k = int(np.argmax(powers))
    above = powers >= thresh * powers[k]

    def reach(direction: int) -> int:
        ext = 0
        while True:
            nxt = None
            for step in range(1, max_gap + 2):
                if ext + step >= n:
                    break
                if above[(k + direction * (ext + step)) % n]:
                    nxt = ext + step
                    break
            if nxt is None:
                return ext
            ext = nxt

    hi = reach(+1)
    lo = min(reach(-1), n - 1 - hi)
    offsets = np.arange(k - lo, k + hi + 1)
    # express offsets symmetrically around the centre frequency
    return (offsets + n // 2) % n - n // 2


def build_cluster_subspace(
    h: np.ndarray,
    center,
    power_thresh: float = 0.05,
    max_gap=(0, 0, 2),
    passes: int = 2,
) -> SubspaceTriple:
    """Per-mode DFT-shifted bases around ``center`` keeping the strong run of bins.

    Bin powers of one mode are measured on ``h`` projected onto the current
    bases of the other modes (full space before they are known), so other
    clusters sharing that mode's frequencies do not leak into the run.
    ``passes`` sweeps over the three modes are made.  ``max_gap`` gives the
    per-mode gap the kept run may bridge (see :func:`_kept_run`).
    """
    if not 0 < power_thresh <= 1:
        raise CkmError("power_thresh must lie in (0, 1]")
    h = as_tensor3(h)
    projs: list[np.ndarray | None] = [None, None, None]
    mats: list[np.ndarray | None] = [None, None, None]
    for _ in range(max(passes, 1)):
        for mode, omega0 in zip(MODES, center):
            others = [p if i != mode - 1 else None for i, p in enumerate(projs)]
            u = unfold(multi_mode_product(h, *others), mode)
            powers = shifted_projection_powers(u, omega0)
            idx = _kept_run(powers, power_thresh, max_gap[mode - 1])
            g = shifted_orthobasis(u.shape[0], omega0, idx)
            mats[mode - 1] = g
            projs[mode - 1] = g @ g.conj().T
    return SubspaceTriple(*mats)


def project(h: np.ndarray, sub: SubspaceTriple) -> np.ndarray:
    """Core coefficients of ``h`` in the subspace triple."""
    return multi_mode_product(h, *(g.conj().T for g in sub.as_tuple()))


def expand(core: np.ndarray, sub: SubspaceTriple) -> np.ndarray:
    return multi_mode_product(core, *sub.as_tuple())


def separate_cluster(h: np.ndarray, sub: SubspaceTriple) -> np.ndarray:
    """Orthogonal projection ``h x1 G1 G1^H x2 G2 G2^H x3 G3 G3^H``."""
    h = as_tensor3(h)
    for mode, g in zip(MODES, sub.as_tuple()):
        if g.shape[0] != h.shape[mode - 1]:
            raise TensorError(f"subspace for mode {mode} has {g.shape[0]} rows, tensor has {h.shape[mode - 1]}")
    return expand(project(h, sub), sub)


def noise_floor(h: np.ndarray, quantile: float = 0.25) -> float:
    """Per-entry noise power of ``h`` read off its angle-angle-delay spectrum.

    Clustered channels fill a small part of the unitary 3-D DFT, so a low
    quantile of the bin powers sees mostly noise; for white noise of power
    ``s`` the bin powers are exponential and the ``q`` quantile is
    ``-ln(1 - q) s``.
    """
    power = np.abs(np.fft.fftn(as_tensor3(h))) ** 2 / h.size
    return float(np.quantile(power, quantile)) / -math.log1p(-quantile)


def divide_channel(
    h: np.ndarray,
    power_thresh: float = 0.05,
    stop_frac: float = 0.02,
    max_clusters: int = 8,
    min_component_frac: float = 0.0,
    grid_res: int = DEFAULT_GRID,
    min_snr: float = 0.0,
    return_subspaces: bool = False,
):
    """Peel single-cluster channels off ``h`` in descending energy order.

    Stops when the residual energy falls below ``stop_frac * ||h||^2``, after
    ``max_clusters`` extractions, or when an extracted part carries less than
    ``min_component_frac`` of the input energy (it is then discarded).

    A part whose energy per subspace dimension is below ``min_snr`` times the
    noise floor of ``h`` (see :func:`noise_floor`) is mostly noise; it is
    removed from the residual but not returned.
    With ``return_subspaces`` the result is a list of ``(part, SubspaceTriple)``.
    """
    if not 0 < stop_frac < 1:
        raise CkmError("stop_frac must lie in (0, 1)")
    h = as_tensor3(h)
    total = frobenius(h) ** 2
    floor = noise_floor(h) if min_snr > 0 else 0.0
    parts: list[np.ndarray] = []
    resid = h.copy()
    for _ in range(max_clusters):
        if frobenius(resid) ** 2 < stop_frac * total:
            break
        center = estimate_cluster_center(resid, grid_res)
        sub = build_cluster_subspace(resid, center, power_thresh)
        part = separate_cluster(resid, sub)
        energy = frobenius(part) ** 2
        if energy < min_component_frac * total:
            break
        if energy >= min_snr * floor * math.prod(sub.ranks):
            parts.append((part, sub) if return_subspaces else part)
        else:
            log.debug("dropping diffuse part: %.3g of the energy over ranks %s", energy / total, sub.ranks)
        resid = resid - part
    return parts


# -- equivalent scatterers ---------------------------------------------------


def ep_rank(
    h: np.ndarray,
    energy_frac: float = 0.95,
    max_rank: int = 12,
    iters: int = 200,
    tol: float = 1e-8,
    restarts: int = 1,
    seed: int = 0,
    min_gain: float = 0.0,
):
    """Smallest CP rank whose residual energy is below ``(1 - energy_frac) ||h||^2``.

    The search also ends, keeping the previous rank, once one more component
    explains less than ``min_gain`` of ``||h||^2``; a noisy part cannot reach
    the energy target and would otherwise grow components that fit noise.
    Returns ``(rank, factors)``.  Each rank warm-starts from the previous fit
    extended by the best rank-1 term of its residual.
    """
    if not 0 < energy_frac < 1:
        raise CkmError("energy_frac must lie in (0, 1)")
    h = as_tensor3(h)
    core, bases = compress(h)
    n1, n2, n3 = core.shape
    cap = max(1, min(max_rank, n1 * n2, n2 * n3, n1 * n3))
    target = math.sqrt(1.0 - energy_frac)
    fit = None
    init = None
    for rank in range(1, cap + 1):
        cand = cp_decompose(core, rank, iters=iters, tol=tol, restarts=restarts, seed=seed + rank, init=init)
        res = cand.residual_history[-1]
        if fit is not None and fit.residual_history[-1] ** 2 - res**2 < min_gain:
            break
        fit = cand
        if res < target:
            break
        resid = core - fit.full()
        extra = best_rank1(resid) if frobenius(resid) > 0 else fit
        scaled = fit.A * fit.weights[None, :]
        init = (
            np.concatenate([scaled, extra.A * extra.weights[0]], axis=1),
            np.concatenate([fit.B, extra.B], axis=1),
            np.concatenate([fit.C, extra.C], axis=1),
        )
    # map factors back to the full tensor space; bases are orthonormal so norms are kept
    fit.A, fit.B, fit.C = bases[0] @ fit.A, bases[1] @ fit.B, bases[2] @ fit.C
    return fit.rank, fit


def ellipse_ray_point(p_tx, p_rx, u, path_len: float):
    """Point on the ray ``p_rx + r u`` whose distances to both foci sum to ``path_len``.

    Returns ``None`` when no intersection with positive ``r`` exists.
    """
    p_tx = np.asarray(p_tx, dtype=float)
    p_rx = np.asarray(p_rx, dtype=float)
    u = np.asarray(u, dtype=float)
    v = p_tx - p_rx
    base = float(np.hypot(*v))
    den = path_len - float(u @ v)
    if path_len <= base or den <= 0:
        return None
    r = (path_len**2 - base**2) / (2.0 * den)
    return p_rx + r * u


def delay_from_freq(f: float, delta_f: float, delay_ref: float = 0.0, wrap: float = 0.05) -> float:
    """Invert ``f = delta_f (tau - delay_ref)`` choosing the branch in ``[-wrap, 1 - wrap)``."""
    cycles = float(wrap_freq(f - (0.5 - wrap))) + (0.5 - wrap)
    return delay_ref + cycles / delta_f


def locate_es(
    h_k: np.ndarray,
    p_tx,
    p_rx,
    rank: int,
    rx_array: ArrayConfig,
    ofdm: OfdmConfig,
    delay_ref: float = 0.0,
    grid_res: int = DEFAULT_GRID,
    factors=None,
    delay_wrap: float = 0.05,
    seed: int = 0,
) -> np.ndarray:
    """Equivalent-scatterer positions of a single-cluster channel (``M x 2``).

    ``factors`` may carry an already computed rank-``rank`` CP fit.
    """
    if rank < 1:
        raise CkmError("rank must be >= 1")
    if factors is None:
        factors = cp_decompose(h_k, rank, restarts=1, seed=seed)
    pts = []
    for r in range(factors.rank):
        f_aoa = music_freq(factors.A[:, r], grid_res)
        s = f_aoa / rx_array.spacing_wl
        if abs(s) > 1:
            continue
        theta = math.asin(s)
        tau = delay_from_freq(music_freq(factors.C[:, r], grid_res), ofdm.delta_f, delay_ref, delay_wrap)
        p = ellipse_ray_point(p_tx, p_rx, rx_array.direction_of(theta), SPEED_OF_LIGHT * tau)
        if p is not None:
            pts.append(p)
    return np.array(pts, dtype=float).reshape(-1, 2)


# -- re-clustering -----------------------------------------------------------


def davies_bouldin(points: np.ndarray, labels: np.ndarray) -> float:
    """Mean over clusters of ``max_j (s_i + s_j) / d_ij`` with ``s`` the mean centroid distance."""
    ks = np.unique(labels)
    if ks.size < 2:
        return 0.0
    cents = np.array([points[labels == k].mean(axis=0) for k in ks])
    scat = np.array([np.mean(np.hypot(*(points[labels == k] - c).T)) for k, c in zip(ks, cents)])
    dist = np.hypot(*(cents[:, None, :] - cents[None, :, :]).transpose(2, 0, 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (scat[:, None] + scat[None, :]) / dist
    np.fill_diagonal(ratio, -np.inf)
    ratio = np.where(np.isnan(ratio), 0.0, ratio)
    return float(np.mean(np.max(ratio, axis=1)))


def recluster(
    points,
    k_min: int = 1,
    k_max: int = 6,
    outlier_sigma: float = 3.0,
    min_group_size: int = 3,
    single_cluster_dbi: float = 1.0,
    restarts: int = 10,
    seed: int = 0,
    radii=None,
) -> ClusterCkm:
    """Group ES points with k-means, choosing the count by Davies-Bouldin index.

    ``K = 1`` competes with a fixed index of ``single_cluster_dbi`` since the
    index is undefined for one cluster.  Points farther than
    ``outlier_sigma`` RMS radii from their centroid are dropped, centroids are
    recomputed once, and groups smaller than ``min_group_size`` are dropped
    as well.  ``radii`` holds a per-point extent; each group keeps the median
    over its retained points.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise CkmError("no equivalent scatterers to cluster")
    rad = np.zeros(pts.shape[0]) if radii is None else np.asarray(radii, dtype=float).ravel()
    if rad.shape[0] != pts.shape[0]:
        raise CkmError("need one radius per point")
    n_distinct = np.unique(pts, axis=0).shape[0]
    best_k, best_labels, best_score = 1, np.zeros(pts.shape[0], dtype=int), np.inf
    if k_min <= 1:
        best_score = single_cluster_dbi
    if pts.shape[0] < k_min or n_distinct < 2:
        best_k, best_labels = 1, np.zeros(pts.shape[0], dtype=int)
    else:
        for k in range(max(2, k_min), min(k_max, n_distinct) + 1):
            km = KMeans(n_clusters=k, n_init=restarts, random_state=seed).fit(pts)
            score = davies_bouldin(pts, km.labels_)
            if score < best_score:
                best_k, best_labels, best_score = k, km.labels_, score
    groups = []
    for k in range(best_k):
        members = np.flatnonzero(best_labels == k)
        if members.size == 0:
            continue
        g = pts[members]
        d = np.hypot(*(g - g.mean(axis=0)).T)
        rms = math.sqrt(float(np.mean(d**2)))
        keep = members[d <= outlier_sigma * rms] if rms > 0 else members
        if keep.size >= min(min_group_size, pts.shape[0]):
            groups.append((pts[keep], float(np.median(rad[keep]))))
    if not groups:
        groups = [(pts, float(np.median(rad)))]
    groups.sort(key=lambda g: (-g[0].shape[0], tuple(g[0].mean(axis=0))))
    return ClusterCkm(
        [g for g, _ in groups],
        {"dbi": None if not np.isfinite(best_score) else float(best_score)},
        [r for _, r in groups],
    )


# -- construction and query --------------------------------------------------


def delay_spread(sub: SubspaceTriple, ofdm: OfdmConfig) -> float:
    """Path-length spread (m) covered by a subspace's delay columns, less one bin."""
    n_cols = sub.g_delay.shape[1]
    return (n_cols - 1) * SPEED_OF_LIGHT / (ofdm.n_sc * ofdm.delta_f)


def es_extent(points, p_tx, p_rx, path_spread: float) -> np.ndarray:
    """Radius of a disc around each point whose path lengths span ``path_spread``.

    The bistatic path length grows at ``2 cos(beta / 2)`` metres per metre
    along its gradient, ``beta`` being the Tx-point-Rx angle, so a disc of
    radius ``a`` spans ``4 a cos(beta / 2)``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    u_rx = pts - np.asarray(p_rx, dtype=float)
    u_tx = pts - np.asarray(p_tx, dtype=float)
    u_rx /= np.linalg.norm(u_rx, axis=1, keepdims=True)
    u_tx /= np.linalg.norm(u_tx, axis=1, keepdims=True)
    grad = np.linalg.norm(u_rx + u_tx, axis=1)
    return path_spread / np.maximum(2.0 * grad, 1e-3)


def sample_es_points(sample: HistoricalSample, cfg: CkmConfig, coarse: bool = False, seed: int = 0):
    """ES positions contributed by one historical sample and the extent radius of each.

    The extent comes from the delay spread of the tensor the point was
    extracted from (the whole channel in coarse mode).
    """
    h = as_tensor3(sample.h_hat)
    if coarse:
        sub = build_cluster_subspace(h, estimate_cluster_center(h, cfg.grid_res), cfg.power_thresh)
        parts = [(h, sub)]
    else:
        parts = divide_channel(
            h, cfg.power_thresh, cfg.stop_frac, cfg.max_clusters, cfg.min_component_frac, cfg.grid_res,
            cfg.min_part_snr, return_subspaces=True,
        )
    pts, rad = [np.zeros((0, 2))], [np.zeros(0)]
    for j, (part, sub) in enumerate(parts):
        rank, fit = ep_rank(
            part, cfg.energy_frac, cfg.max_rank, cfg.cp_iters, cfg.cp_tol, cfg.cp_restarts, seed + 101 * j,
            cfg.min_rank_gain,
        )
        p = locate_es(
            part, sample.p_tx, sample.p_rx, rank, cfg.rx_array, cfg.ofdm, sample.delay_ref,
            cfg.grid_res, factors=fit, delay_wrap=cfg.delay_wrap,
        )
        pts.append(p)
        rad.append(es_extent(p, sample.p_tx, sample.p_rx, delay_spread(sub, cfg.ofdm)))
    return np.concatenate(pts), np.concatenate(rad)


def build_ckm(samples, cfg: CkmConfig, coarse: bool = False) -> ClusterCkm:
    """Construct the map from historical samples.

    ``coarse=True`` skips channel division and fits one CP model to each
    whole sample (the ablation without cluster separation).
    """
    samples = list(samples)
    if not samples:
        raise CkmError("need at least one historical sample")
    located = [sample_es_points(s, cfg, coarse, cfg.seed + 7919 * i) for i, s in enumerate(samples)]
    pool = np.concatenate([p for p, _ in located])
    radii = np.concatenate([r for _, r in located])
    if pool.shape[0] == 0:
        raise CkmError("no equivalent scatterer could be located")
    ckm = recluster(
        pool, cfg.k_min, cfg.k_max, cfg.outlier_sigma, cfg.min_group_size,
        cfg.single_cluster_dbi, cfg.kmeans_restarts, cfg.seed, radii,
    )
    ckm.metadata.update(
        {
            "n_samples": len(samples),
            "coarse": bool(coarse),
            "n_es_located": int(pool.shape[0]),
            "config": cfg.describe(),
        }
    )
    return ckm


def _unwrap_about_mean(angles: np.ndarray) -> np.ndarray:
    mean = np.angle(np.mean(np.exp(1j * angles)))
    return mean + np.angle(np.exp(1j * (angles - mean)))


def group_range(points, p_tx, p_rx, tx_array: ArrayConfig, rx_array: ArrayConfig) -> ParamRange:
    """Elementwise min/max of the path parameters through ``points``."""
    aoa, aod, tau, _ = path_geometry(p_tx, p_rx, points, tx_array, rx_array)
    aoa = _unwrap_about_mean(aoa)
    aod = _unwrap_about_mean(aod)
    return ParamRange(aoa.min(), aoa.max(), aod.min(), aod.max(), tau.min(), tau.max())


def _with_discs(points: np.ndarray, radius: float, n_rim: int = 32) -> np.ndarray:
    if radius <= 0:
        return points
    ang = np.linspace(0.0, 2 * np.pi, n_rim, endpoint=False)
    rim = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return np.concatenate([points, (points[:, None, :] + rim[None]).reshape(-1, 2)])


def query(
    ckm: ClusterCkm,
    p_tx,
    p_rx,
    tx_array: ArrayConfig,
    rx_array: ArrayConfig,
    margin: float = 0.1,
    use_extent: bool = True,
) -> list[ParamRange]:
    """Per-group parameter boxes for a link, widened by ``margin`` of each width.

    With ``use_extent`` each ES point stands for a disc of its group's radius
    (sampled on its rim); otherwise only the points themselves count.
    """
    out = []
    for g, radius in zip(ckm.es_clusters, ckm.radii):
        pts = _with_discs(g, radius if use_extent else 0.0)
        out.append(group_range(pts, p_tx, p_rx, tx_array, rx_array).expand(margin))
    return out
