"""Gaussian-process surrogate and expected improvement on the unit box."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import erf

from .errors import ConfigError, NumericFailure

LENGTHSCALE_GRID = (0.05, 0.1, 0.2, 0.4, 0.8)
VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class GpConfig:
    lengthscales: tuple[float, ...] = LENGTHSCALE_GRID
    signal_var: float = 1.0
    noise_var: float = 1e-4
    jitter_start: float = 1e-8
    jitter_max: float = 1e-2


@dataclass(frozen=True, eq=False)
class GpState:
    train_inputs: np.ndarray
    train_targets: np.ndarray  # standardized
    target_mean: float
    target_std: float
    lengthscale: float
    signal_var: float
    noise_var: float
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float
    log_marginal: dict

    @property
    def k(self) -> int:
        return self.train_inputs.shape[0]


def se_kernel(a: np.ndarray, b: np.ndarray, lengthscale: float, signal_var: float = 1.0) -> np.ndarray:
    d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    return signal_var * np.exp(-d2 / (2.0 * lengthscale * lengthscale))


def _cholesky(K: np.ndarray, config: GpConfig) -> tuple[np.ndarray, float]:
    try:
        return np.linalg.cholesky(K), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = config.jitter_start
    eye = np.eye(K.shape[0])
    while jitter <= config.jitter_max * (1 + 1e-9):
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericFailure(f"Cholesky failed with jitter up to {config.jitter_max}")


def _log_marginal(L: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    alpha = solve_triangular(L.T, solve_triangular(L, y, lower=True), lower=False)
    k = y.shape[0]
    lml = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * k * math.log(2.0 * math.pi)
    return lml, alpha


def gp_fit(points, targets, config: GpConfig = GpConfig()) -> GpState:
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if X.shape[0] < 1 or X.shape[0] != y.shape[0]:
        raise ConfigError("need k >= 1 points with one target each")
    if np.any(X < 0.0) or np.any(X > 1.0):
        raise ConfigError("GP inputs must lie in the unit box")
    mean = float(y.mean())
    std = math.sqrt(max(float(y.var()), VAR_FLOOR))
    ys = (y - mean) / std
    best = None
    lmls = {}
    for ell in config.lengthscales:
        K = se_kernel(X, X, ell, config.signal_var) + config.noise_var * np.eye(X.shape[0])
        L, jitter = _cholesky(K, config)
        lml, alpha = _log_marginal(L, ys)
        lmls[ell] = lml
        if best is None or lml > best[0]:
            best = (lml, ell, L, alpha, jitter)
    _, ell, L, alpha, jitter = best
    return GpState(X, ys, mean, std, ell, config.signal_var, config.noise_var, L, alpha, jitter, lmls)


def gp_posterior_batch(state: GpState, queries) -> tuple[np.ndarray, np.ndarray]:
    Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    ks = se_kernel(Q, state.train_inputs, state.lengthscale, state.signal_var)
    mean_s = ks @ state.alpha
    v = solve_triangular(state.chol, ks.T, lower=True)
    var_s = state.signal_var - np.sum(v * v, axis=0)
    var_s = np.where(var_s < 0.0, 0.0, var_s)
    return state.target_mean + state.target_std * mean_s, state.target_std ** 2 * var_s


def gp_posterior(state: GpState, query) -> tuple[float, float]:
    q = np.asarray(query, dtype=np.float64).reshape(1, -1)
    if np.any(q < 0.0) or np.any(q > 1.0):
        raise ConfigError("query must lie in the unit box")
    mean, var = gp_posterior_batch(state, q)
    return float(mean[0]), float(var[0])


def ei_from_moments(mean, std, best):
    """Expected improvement for maximization; ``max(mean - best, 0)`` when ``std < 1e-12``."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    gain = mean - best
    safe = np.where(std < 1e-12, 1.0, std)
    z = gain / safe
    cdf = 0.5 * (1.0 + erf(z / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    ei = gain * cdf + safe * pdf
    out = np.where(std < 1e-12, np.maximum(gain, 0.0), np.maximum(ei, 0.0))
    return out if out.ndim else float(out)


def expected_improvement(state: GpState, query, best_so_far: float) -> float:
    mean, var = gp_posterior(state, query)
    return float(ei_from_moments(mean, math.sqrt(var), best_so_far))
