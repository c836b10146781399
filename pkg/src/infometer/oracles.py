"""Classical reference estimators used to cross-check the learned estimate."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma

__all__ = [
    "CountTable",
    "DegenerateInputWarning",
    "histogram_mi",
    "binned_mi",
    "ksg_mi",
    "gaussian_analytic_mi",
    "brute_force_entropy",
]


class DegenerateInputWarning(UserWarning):
    """Input for which the continuous MI is undefined or the estimator is unreliable."""


@dataclass(frozen=True)
class CountTable:
    """Joint counts over a finite alphabet pair; rows index x, columns index y."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.size == 0:
            raise ValueError("count table must be a non-empty 2-D array")
        if (c < 0).any() or not np.array_equal(c, np.round(c)):
            raise ValueError("counts must be non-negative integers")
        if c.sum() <= 0:
            raise ValueError("count table is empty (total count 0)")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_samples(cls, a, b, n_a: int | None = None, n_b: int | None = None) -> "CountTable":
        """Cross-tabulate two equal-length arrays of non-negative integer symbols."""
        a = np.asarray(a, dtype=np.int64).ravel()
        b = np.asarray(b, dtype=np.int64).ravel()
        if a.shape != b.shape:
            raise ValueError("symbol arrays must have equal length")
        n_a = int(a.max()) + 1 if n_a is None else n_a
        n_b = int(b.max()) + 1 if n_b is None else n_b
        flat = np.bincount(a * n_b + b, minlength=n_a * n_b)
        return cls(flat.reshape(n_a, n_b))


def histogram_mi(table) -> float:
    """Plug-in MI in bits: sum p(a,b) log2(p(a,b) / (p(a) p(b))), with 0 log 0 = 0."""
    if not isinstance(table, CountTable):
        table = CountTable(np.asarray(table))
    c = table.counts.astype(np.float64)
    n = c.sum()
    pa = c.sum(axis=1, keepdims=True) / n
    pb = c.sum(axis=0, keepdims=True) / n
    p = c / n
    nz = p > 0
    mi = float(np.sum(p[nz] * np.log2(p[nz] / (pa @ pb)[nz])))
    # rank-one tables give tiny negative rounding residue
    return max(mi, 0.0)


def binned_mi(x, y, bins: int = 16) -> float:
    """Plug-in MI of two real arrays after equal-width binning over each one's range."""
    def codes(v):
        v = np.asarray(v, dtype=np.float64).ravel()
        lo, hi = v.min(), v.max()
        if hi <= lo:
            return np.zeros(v.shape, dtype=np.int64)
        return np.minimum(((v - lo) / (hi - lo) * bins).astype(np.int64), bins - 1)

    return histogram_mi(CountTable.from_samples(codes(x), codes(y), bins, bins))


def ksg_mi(x, y, k: int = 3, seed: int = 0, jitter: float = 1e-10) -> float:
    """Kraskov-Stoegbauer-Grassberger MI estimate (algorithm 1, max-norm) in bits.

    Repeated points are separated by uniform jitter of relative size
    ``jitter`` drawn from a generator seeded with ``seed``. Exactly dependent
    input (``y`` a copy or affine image of ``x``) raises a
    :class:`DegenerateInputWarning`, since its continuous MI diverges.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x = x.reshape(len(x), -1)
    y = y.reshape(len(y), -1)
    n = len(x)
    if len(y) != n:
        raise ValueError("x and y need the same number of samples")
    if k < 1 or n < k + 2:
        raise ValueError(f"need k >= 1 and at least k + 2 samples, got k={k}, n={n}")

    if x.shape[1] == 1 and y.shape[1] == 1:
        xs, ys = x[:, 0], y[:, 0]
        if np.ptp(xs) > 0 and np.ptp(ys) > 0 and abs(np.corrcoef(xs, ys)[0, 1]) >= 1 - 1e-12:
            warnings.warn("y is an exact affine function of x; continuous MI diverges",
                          DegenerateInputWarning, stacklevel=2)

    joint = np.hstack([x, y])
    if len(np.unique(joint, axis=0)) < n or len(np.unique(x, axis=0)) < n or len(np.unique(y, axis=0)) < n:
        rng = np.random.default_rng(seed)
        scale = lambda a: jitter * np.maximum(a.std(axis=0), 1.0)
        x = x + scale(x) * rng.uniform(-1, 1, x.shape)
        y = y + scale(y) * rng.uniform(-1, 1, y.shape)
        joint = np.hstack([x, y])

    dist, _ = cKDTree(joint).query(joint, k=k + 1, p=np.inf)
    eps = dist[:, -1]
    # strict inequality: shrink radius to the next float below eps
    r = np.nextafter(eps, 0)
    nx = cKDTree(x).query_ball_point(x, r, p=np.inf, return_length=True) - 1
    ny = cKDTree(y).query_ball_point(y, r, p=np.inf, return_length=True) - 1
    nats = digamma(k) + digamma(n) - np.mean(digamma(nx + 1) + digamma(ny + 1))
    return float(nats / math.log(2))


def gaussian_analytic_mi(rho: float) -> float:
    """MI of a bivariate Gaussian with correlation ``rho``: -1/2 log2(1 - rho^2)."""
    if not -1.0 < rho < 1.0:
        raise ValueError(f"|rho| must be < 1, got {rho}")
    return -0.5 * math.log2(1.0 - rho * rho) + 0.0


def brute_force_entropy(pmf) -> float:
    """Shannon entropy in bits by direct summation."""
    p = np.asarray(pmf, dtype=np.float64).ravel()
    if p.size == 0 or (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"invalid pmf {pmf!r}")
    return math.fsum(-q * math.log2(q) for q in p if q > 0) + 0.0
