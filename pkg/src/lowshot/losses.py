"""Pre-training losses (l2, Gaussian-kernel MMD) and image metrics."""

from math import comb

import numpy as np

from . import engine
from .errors import ConfigError, DegenerateInputError, ShapeError

PSNR_CAP = 100.0


def _as_batch(x):
    x = engine.as_tensor(x)
    return x.reshape(x.shape[0], -1)


def l2_loss(outputs, shots):
    """Mean over shots of the squared l2 distance, ``(1/S) sum ||G_i - x_i||^2``."""
    outputs = engine.as_tensor(outputs)
    shots = engine.as_tensor(shots, dtype=outputs.dtype)
    if outputs.shape != shots.shape:
        raise ShapeError(f"outputs {outputs.shape} and shots {shots.shape} differ")
    diff = _as_batch(outputs) - _as_batch(shots)
    return diff.square().sum() / outputs.shape[0]


def gaussian_kernel(x1, x2, alpha):
    """``exp(-||x1 - x2||^2 / alpha)`` for two flattened images."""
    if alpha <= 0:
        raise ConfigError(f"kernel bandwidth must be positive, got {alpha}")
    x1 = np.asarray(x1, dtype=np.float64).ravel()
    x2 = np.asarray(x2, dtype=np.float64).ravel()
    if x1.shape != x2.shape:
        raise ShapeError(f"kernel arguments differ in size: {x1.size} vs {x2.size}")
    d = x1 - x2
    return float(np.exp(-(d @ d) / alpha))


def kernel_matrix(a, b, alpha):
    """Gram matrix ``K[i, j] = k(a_i, b_j)`` as a differentiable (S, S') Tensor."""
    a = _as_batch(a)
    b = _as_batch(b)
    sq_a = a.square().sum(axis=1).reshape(a.shape[0], 1)
    sq_b = b.square().sum(axis=1).reshape(1, b.shape[0])
    sq = sq_a + sq_b - 2.0 * engine.matmul(a, b.T)
    return engine.exp(sq * (-1.0 / alpha))


def _offdiag_sum(k):
    mask = 1.0 - np.eye(k.shape[0], k.shape[1], dtype=k.dtype)
    return (k * mask).sum()


def mmd_loss(outputs, shots, alpha, estimator="literal"):
    """Kernel MMD between generated images and shots.

    ``estimator="literal"`` normalizes all three ordered-pair sums by
    C(S, 2) and drops the i == j pairs from the cross term.
    ``estimator="unbiased"`` is the usual unbiased MMD^2: within-set sums
    over S(S-1) ordered pairs, cross term over all S^2 pairs.
    """
    outputs = engine.as_tensor(outputs)
    shots = engine.as_tensor(shots, dtype=outputs.dtype)
    s = outputs.shape[0]
    if s < 2 or shots.shape[0] < 2:
        raise DegenerateInputError("MMD needs at least two samples per set")
    if outputs.shape[1:] != shots.shape[1:]:
        raise ShapeError(f"image shapes differ: {outputs.shape[1:]} vs {shots.shape[1:]}")
    if alpha <= 0:
        raise ConfigError(f"kernel bandwidth must be positive, got {alpha}")
    k_gg = kernel_matrix(outputs, outputs, alpha)
    k_xx = kernel_matrix(shots, shots, alpha)
    k_gx = kernel_matrix(outputs, shots, alpha)
    if estimator == "literal":
        if shots.shape[0] != s:
            raise ShapeError("literal estimator needs equally sized sets")
        c = comb(s, 2)
        return (_offdiag_sum(k_gg) + _offdiag_sum(k_xx) - 2.0 * _offdiag_sum(k_gx)) / c
    if estimator == "unbiased":
        n = shots.shape[0]
        return (
            _offdiag_sum(k_gg) / (s * (s - 1))
            + _offdiag_sum(k_xx) / (n * (n - 1))
            - k_gx.sum() * (2.0 / (s * n))
        )
    raise ConfigError(f"unknown MMD estimator {estimator!r}")


def median_bandwidth(shots):
    """Median of the pairwise squared distances between distinct shots."""
    x = np.asarray(shots, dtype=np.float64).reshape(len(shots), -1)
    if len(x) < 2:
        raise DegenerateInputError("median heuristic needs at least two shots")
    sq = (x * x).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    iu = np.triu_indices(len(x), k=1)
    alpha = float(np.median(np.maximum(d[iu], 0.0)))
    if alpha <= 0:
        raise DegenerateInputError("all shots are identical; bandwidth would be zero")
    return alpha


def mse(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(estimate, truth):
    """PSNR in dB with both images mapped from [-1, 1] to [0, 1] (peak 1).

    Capped at 100 dB when the MSE falls below 1e-10.
    """
    err = mse((np.asarray(estimate, dtype=np.float64) + 1) / 2, (np.asarray(truth, dtype=np.float64) + 1) / 2)
    if err < 1e-10:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / err))
