"""Rank and linear correlation coefficients with tie handling."""

import numpy as np

from .errors import ConfigError, UndefinedCorrelation


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ConfigError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 2:
        raise ConfigError("need at least 2 observations")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ConfigError("correlation inputs must be finite")
    return a, b


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def pearson(a, b) -> float:
    a, b = _pair(a, b)
    da, db = a - a.mean(), b - b.mean()
    ma, mb = float(np.max(np.abs(da))), float(np.max(np.abs(db)))
    if ma == 0.0 or mb == 0.0:
        raise UndefinedCorrelation("zero-variance input")
    da, db = da / ma, db / mb
    # one square root of the product makes identical inputs give exactly +-1
    return float(np.clip((da @ db) / np.sqrt((da @ da) * (db @ db)), -1.0, 1.0))


def spearman(a, b) -> float:
    a, b = _pair(a, b)
    return pearson(average_ranks(a), average_ranks(b))


def kendall(a, b) -> float:
    """Kendall tau-b."""
    a, b = _pair(a, b)
    sa = np.sign(a[:, None] - a[None, :])
    sb = np.sign(b[:, None] - b[None, :])
    iu = np.triu_indices(len(a), k=1)
    sa, sb = sa[iu], sb[iu]
    n_a = float(np.count_nonzero(sa))
    n_b = float(np.count_nonzero(sb))
    if n_a == 0.0 or n_b == 0.0:
        raise UndefinedCorrelation("zero-variance input")
    return float(np.clip(float(sa @ sb) / np.sqrt(n_a * n_b), -1.0, 1.0))
