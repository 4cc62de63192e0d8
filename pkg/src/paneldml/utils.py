"""Shared numerical utilities: normal quantile, least squares, kernels, RNG streams."""

from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "normal_quantile",
    "normal_cdf",
    "ols",
    "bartlett_kernel",
    "toeplitz_gaussian",
    "RngStream",
]


def normal_quantile(q):
    """Standard normal quantile function.

    Parameters
    ----------
    q : float
        Probability level, strictly inside (0, 1).

    Returns
    -------
    float
        The value x with P(N(0,1) <= x) = q, accurate to well below 1e-9.
    """
    q = float(q)
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile level must lie strictly in (0, 1), got {q}")
    return float(special.ndtri(q))


def normal_cdf(x):
    """Standard normal distribution function."""
    return float(special.ndtr(float(x)))


def ols(design, response, return_rank=False):
    """Least-squares coefficients, minimum-norm under rank deficiency.

    Parameters
    ----------
    design : ndarray of shape (n, k)
    response : ndarray of shape (n,)
    return_rank : bool
        If True, also return the numerical rank of the design.

    Returns
    -------
    ndarray of shape (k,), or (coefficients, rank) if ``return_rank``.
    """
    design = np.asarray(design, dtype=np.float64)
    response = np.asarray(response, dtype=np.float64)
    if design.ndim == 1:
        design = design[:, None]
    if design.shape[0] != response.shape[0]:
        raise ValueError(
            f"design has {design.shape[0]} rows but response has {response.shape[0]}"
        )
    coef, _, rank, _ = np.linalg.lstsq(design, response, rcond=None)
    if return_rank:
        return coef, int(rank)
    return coef


def bartlett_kernel(lag, bandwidth):
    """Triangular lag window k(x) = max(1 - x, 0) evaluated at lag / bandwidth.

    Covers both uses in this package: continuous form k(|t-s|/M) for weight
    construction and the discrete form (1 - m/M for m < M, else 0) for
    long-run variance sums; they coincide because 1 - m/M <= 0 once m >= M.
    """
    if bandwidth < 1:
        raise ValueError(f"bandwidth must be >= 1, got {bandwidth}")
    x = np.abs(np.asarray(lag, dtype=np.float64)) / float(bandwidth)
    return np.maximum(1.0 - x, 0.0)


def toeplitz_gaussian(p, base, rng, size=None):
    """Draw centered Gaussian vectors with covariance base**|j-k|.

    Uses the AR(1) recursion x_1 = z_1, x_j = base * x_{j-1} +
    sqrt(1 - base^2) * z_j, which reproduces the Toeplitz correlation
    exactly in O(p) per draw.

    Parameters
    ----------
    p : int
        Vector dimension.
    base : float
        Correlation base, |base| < 1.
    rng : numpy Generator
    size : int, optional
        Number of draws. None returns shape (p,), otherwise (size, p).

    Returns
    -------
    ndarray
    """
    if p < 1:
        raise ValueError(f"dimension must be >= 1, got {p}")
    if not abs(base) < 1:
        raise ValueError(f"correlation base must satisfy |base| < 1, got {base}")
    n = 1 if size is None else int(size)
    z = rng.standard_normal((n, p))
    x = np.empty((n, p))
    x[:, 0] = z[:, 0]
    scale = np.sqrt(1.0 - base * base)
    for j in range(1, p):
        x[:, j] = base * x[:, j - 1] + scale * z[:, j]
    return x[0] if size is None else x


@dataclass(frozen=True)
class RngStream:
    """Reproducible, independent random stream keyed by (base_seed, stream_id).

    Distinct stream ids spawn statistically independent generators from the
    same base seed, so replications can run in any order or in parallel
    without sharing RNG state.
    """

    base_seed: int
    stream_id: int = 0

    def generator(self):
        seq = np.random.SeedSequence(self.base_seed, spawn_key=(self.stream_id,))
        return np.random.default_rng(seq)
