"""Dense complex order-3 tensor algebra and low-rank decompositions.

Tensors are plain ``numpy`` arrays of shape ``(n1, n2, n3)``.  Modes are
numbered 1, 2, 3 as in the usual multilinear-algebra notation.  Unfoldings
follow the Kolda-Bader convention: the mode-n unfolding maps element
``(i1, i2, i3)`` to row ``i_n`` and orders the remaining indices with the
lowest mode varying fastest (Fortran layout), so results are deterministic
bit for bit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

MODES = (1, 2, 3)


class TensorError(ValueError):
    """Raised on shape mismatches or degenerate tensor inputs."""


def as_tensor3(t) -> np.ndarray:
    """Validate ``t`` as an order-3 tensor and return it as complex128."""
    arr = np.asarray(t, dtype=np.complex128)
    if arr.ndim != 3:
        raise TensorError(f"expected an order-3 tensor, got ndim={arr.ndim}")
    if min(arr.shape) < 1:
        raise TensorError(f"tensor dims must be positive, got {arr.shape}")
    return arr


def _axis(mode: int) -> int:
    if mode not in MODES:
        raise TensorError(f"mode must be one of {MODES}, got {mode!r}")
    return mode - 1


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding, shape ``dims[mode] x prod(other dims)``."""
    ax = _axis(mode)
    t = np.asarray(t)
    return np.moveaxis(t, ax, 0).reshape(t.shape[ax], -1, order="F")


def fold(m: np.ndarray, mode: int, dims: tuple[int, int, int]) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    ax = _axis(mode)
    dims = tuple(int(d) for d in dims)
    moved = (dims[ax],) + tuple(d for i, d in enumerate(dims) if i != ax)
    m = np.asarray(m)
    if m.shape != (moved[0], int(np.prod(moved[1:]))):
        raise TensorError(f"cannot fold matrix {m.shape} into dims {dims} along mode {mode}")
    return np.moveaxis(m.reshape(moved, order="F"), 0, ax)


def mode_n_product(t: np.ndarray, m: np.ndarray, mode: int) -> np.ndarray:
    """Tensor-matrix product along ``mode``: ``unfold(out) = m @ unfold(t)``."""
    ax = _axis(mode)
    t = np.asarray(t)
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[1] != t.shape[ax]:
        raise TensorError(
            f"matrix with shape {m.shape} incompatible with mode-{mode} dim {t.shape[ax]}"
        )
    out = np.tensordot(m, t, axes=([1], [ax]))
    return np.moveaxis(out, 0, ax)


def multi_mode_product(t: np.ndarray, m1=None, m2=None, m3=None) -> np.ndarray:
    """Apply up to three mode products; ``None`` skips a mode."""
    for mode, m in zip(MODES, (m1, m2, m3)):
        if m is not None:
            t = mode_n_product(t, m, mode)
    return t


def frobenius(t: np.ndarray) -> float:
    return float(np.linalg.norm(np.ravel(t)))


def subtract(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise TensorError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a - b


def scale(t: np.ndarray, s: complex) -> np.ndarray:
    return np.asarray(t) * s


def outer3(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Rank-1 tensor ``a o b o c``."""
    return np.einsum("i,j,k->ijk", a, b, c)


@dataclass
class CpFactors:
    """Weighted CP model ``sum_r g_r a_r o b_r o c_r`` with unit-norm factor columns."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    weights: np.ndarray
    converged: bool = True
    n_iter: int = 0
    residual_history: list[float] = field(default_factory=list)

    @property
    def rank(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.A.shape[0], self.B.shape[0], self.C.shape[0])

    def full(self) -> np.ndarray:
        return np.einsum("r,ir,jr,kr->ijk", self.weights, self.A, self.B, self.C)

    def component(self, r: int) -> np.ndarray:
        return self.weights[r] * outer3(self.A[:, r], self.B[:, r], self.C[:, r])


def _normalize(A, B, C, weights=None):
    na = np.linalg.norm(A, axis=0)
    nb = np.linalg.norm(B, axis=0)
    nc = np.linalg.norm(C, axis=0)
    w = na * nb * nc if weights is None else weights * na * nb * nc
    safe = lambda n: np.where(n > 0, n, 1.0)  # noqa: E731
    return A / safe(na), B / safe(nb), C / safe(nc), w.astype(np.complex128)


def best_rank1(t, iters: int = 200, tol: float = 1e-10) -> CpFactors:
    """Dominant rank-1 approximation by higher-order power iteration.

    Starts from the leading left singular vector of each unfolding and
    alternates ``a <- T x2 b^H x3 c^H`` (and cyclic) until the captured
    power ``|g|^2`` stops changing by more than ``tol`` relative.
    """
    t = as_tensor3(t)
    norm2 = frobenius(t) ** 2
    if norm2 == 0.0:
        raise TensorError("best_rank1 of the zero tensor is undefined")
    a, b, c = (_leading_left_singular(unfold(t, m)) for m in MODES)
    g_prev = 0.0
    converged = False
    hist = []
    best = None
    for it in range(1, iters + 1):
        a = np.einsum("ijk,j,k->i", t, b.conj(), c.conj())
        a /= np.linalg.norm(a)
        b = np.einsum("ijk,i,k->j", t, a.conj(), c.conj())
        b /= np.linalg.norm(b)
        c = np.einsum("ijk,i,j->k", t, a.conj(), b.conj())
        g = np.linalg.norm(c)
        c /= g
        g2 = g * g
        hist.append(float(np.sqrt(max(norm2 - g2, 0.0) / norm2)))
        if best is None or g2 >= best[0]:
            best = (g2, a.copy(), b.copy(), c.copy(), g)
        if abs(g2 - g_prev) <= tol * g2:
            converged = True
            break
        g_prev = g2
    if not converged:
        log.debug("best_rank1 hit %d iterations without converging", iters)
    _, a, b, c, g = best
    return CpFactors(
        A=a[:, None], B=b[:, None], C=c[:, None],
        weights=np.array([g], dtype=np.complex128),
        converged=converged, n_iter=it, residual_history=hist,
    )


def _leading_left_singular(m: np.ndarray) -> np.ndarray:
    # eigh on the small Gram matrix is much cheaper than a full SVD of a wide unfolding
    gram = m @ m.conj().T
    _, v = np.linalg.eigh(gram)
    return v[:, -1].copy()


def _left_singular(m: np.ndarray, k: int) -> np.ndarray:
    gram = m @ m.conj().T
    w, v = np.linalg.eigh(gram)
    return v[:, ::-1][:, :k]


def _hosvd_init(t, rank, rng):
    factors = []
    for mode in MODES:
        n = t.shape[mode - 1]
        u = _left_singular(unfold(t, mode), min(rank, n))
        if u.shape[1] < rank:
            extra = rng.standard_normal((n, rank - u.shape[1])) + 1j * rng.standard_normal(
                (n, rank - u.shape[1])
            )
            u = np.concatenate([u, extra], axis=1)
        factors.append(u.astype(np.complex128))
    return factors


def _random_init(t, rank, rng):
    return [
        rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank)) for n in t.shape
    ]


def _als(t, A, B, C, iters, tol, ridge):
    norm = frobenius(t)
    hist = []
    converged = False
    it = 0
    for it in range(1, iters + 1):
        # each update solves min ||T_(n) - F (KR)^T|| with a ridge term
        gram = (C.T @ C.conj()) * (B.T @ B.conj())
        A = np.einsum("ijk,jr,kr->ir", t, B.conj(), C.conj()) @ _ridge_inv(gram, ridge)
        gram = (C.T @ C.conj()) * (A.T @ A.conj())
        B = np.einsum("ijk,ir,kr->jr", t, A.conj(), C.conj()) @ _ridge_inv(gram, ridge)
        gram = (B.T @ B.conj()) * (A.T @ A.conj())
        mt = np.einsum("ijk,ir,jr->kr", t, A.conj(), B.conj())
        C = mt @ _ridge_inv(gram, ridge)
        # ||T - model||^2 = ||T||^2 - 2 Re<model, T> + ||model||^2, evaluated from small matrices
        gram_full = gram * (C.T @ C.conj())
        inner = np.sum(mt * C.conj()).real
        model2 = np.sum(gram_full).real
        res = np.sqrt(max(norm * norm - 2.0 * inner + model2, 0.0)) / norm
        if res < 1e-3:
            # the expansion above cancels catastrophically near an exact fit
            res = frobenius(t - np.einsum("ir,jr,kr->ijk", A, B, C)) / norm
        hist.append(float(res))
        if len(hist) > 1 and abs(hist[-2] - hist[-1]) < tol:
            converged = True
            break
    return A, B, C, hist, converged, it


def _ridge_inv(gram, ridge):
    r = gram.shape[0]
    return np.linalg.inv(gram + ridge * np.eye(r))


def cp_decompose(
    t,
    rank: int,
    iters: int = 200,
    tol: float = 1e-8,
    restarts: int = 3,
    seed: int = 0,
    init: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
) -> CpFactors:
    """Rank-``rank`` CP decomposition by alternating least squares.

    The first start is HOSVD-initialised (or ``init`` when given); each
    additional restart begins from random complex Gaussian factors.  The fit
    with the smallest final residual wins.  Least-squares steps carry a ridge
    term of ``1e-10 * ||t||^2`` so collinear factors never break the solve.
    """
    t = as_tensor3(t)
    if rank < 1:
        raise TensorError("rank must be >= 1")
    n1, n2, n3 = t.shape
    if rank > min(n1 * n2, n2 * n3, n1 * n3):
        raise TensorError(f"rank {rank} exceeds the mode-product bound for dims {t.shape}")
    norm2 = frobenius(t) ** 2
    if norm2 == 0.0:
        raise TensorError("cp_decompose of the zero tensor is undefined")
    ridge = 1e-10 * norm2
    rng = np.random.default_rng(seed)

    starts = [list(init) if init is not None else _hosvd_init(t, rank, rng)]
    starts += [_random_init(t, rank, rng) for _ in range(max(restarts, 1) - 1)]
    best = None
    for A, B, C in starts:
        A, B, C, hist, conv, it = _als(t, A, B, C, iters, tol, ridge)
        if best is None or hist[-1] < best[3][-1]:
            best = (A, B, C, hist, conv, it)
    A, B, C, hist, conv, it = best
    A, B, C, w = _normalize(A, B, C)
    order = np.argsort(-np.abs(w), kind="stable")
    return CpFactors(
        A=A[:, order], B=B[:, order], C=C[:, order], weights=w[order],
        converged=conv, n_iter=it, residual_history=hist,
    )


def relative_residual(t: np.ndarray, model: np.ndarray) -> float:
    return frobenius(t - model) / frobenius(t)


def compress(t: np.ndarray, rtol: float | None = None):
    """Lossless HOSVD compression.

    Returns ``(core, (U1, U2, U3))`` with orthonormal ``Un`` spanning the
    numerical column space of each unfolding, so ``t == core x1 U1 x2 U2 x3 U3``
    up to singular values below ``rtol`` relative (default: the usual
    numerical-rank cut, ``max(shape) * eps``).
    """
    t = as_tensor3(t)
    bases = []
    for mode in MODES:
        m = unfold(t, mode)
        u, s, _ = np.linalg.svd(m, full_matrices=False)
        tol = rtol if rtol is not None else max(m.shape) * np.finfo(float).eps
        keep = max(1, int(np.sum(s > tol * s[0]))) if s[0] > 0 else 1
        bases.append(u[:, :keep])
    core = multi_mode_product(t, *(u.conj().T for u in bases))
    return core, tuple(bases)
