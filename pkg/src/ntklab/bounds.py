"""Generalization-bound scores, the hybrid search objective, and linearized dynamics.

All scores follow "lower is better": they upper-bound test error up to
absorbed constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .eigen import jacobi_eigh
from .errors import ConfigError, NumericFailure
from .metrics import NtkSummary


@dataclass(frozen=True)
class BoundParams:
    eta: float
    c: float = 1.0
    t: int = 1
    m: int = 32

    def __post_init__(self):
        if not (self.eta > 0 and self.c > 0 and self.t >= 1 and self.m >= 1):
            raise ConfigError(f"invalid bound parameters {self}")

    @property
    def lam(self) -> float:
        """The combined step ``eta / (m c)`` that multiplies ``metric^2``."""
        return self.eta / (self.m * self.c)

    @classmethod
    def from_lambda(cls, lam: float, m: int, c: float = 1.0, t: int = 1) -> BoundParams:
        return cls(eta=lam * m * c, c=c, t=t, m=m)


@dataclass(frozen=True)
class ObjectiveParams:
    mu: float
    nu: float
    t: int = 1

    def __post_init__(self):
        if not self.mu >= 0 or self.t < 1:
            raise ConfigError(f"invalid objective parameters {self}")


def realizable_score(metric: float) -> float:
    if not metric > 0:
        raise ConfigError("realizable score needs metric > 0")
    return 1.0 / metric


def nonrealizable_score(metric: float, kappa: float, params: BoundParams) -> float:
    """``(m/2) (1 - eta metric^2 / (m c))^(2t) + kappa / metric``."""
    if not metric > 0:
        raise ConfigError("non-realizable score needs metric > 0")
    base = 1.0 - params.eta * metric * metric / (params.m * params.c)
    return 0.5 * params.m * base ** (2 * params.t) + kappa / metric


def hnas_objective(metric: float, kappa: float, params: ObjectiveParams) -> float:
    """``kappa / metric + mu (metric^2 - nu)^(2t)``."""
    if not metric > 0:
        raise ConfigError("objective needs metric > 0")
    return kappa / metric + params.mu * (metric * metric - params.nu) ** (2 * params.t)


def hnas_objective_array(metric: np.ndarray, kappa: np.ndarray, params: ObjectiveParams) -> np.ndarray:
    metric = np.asarray(metric, dtype=np.float64)
    if np.any(metric <= 0):
        raise ConfigError("objective needs metric > 0")
    return np.asarray(kappa) / metric + params.mu * (metric * metric - params.nu) ** (2 * params.t)


def _check_eta(ntk: NtkSummary, eta: float):
    if not (eta > 0 and eta * ntk.lambda_max < ntk.m):
        raise ConfigError(f"learning rate {eta} outside (0, m / lambda_max) = (0, {ntk.m / ntk.lambda_max:.6g})")


def linearized_residual(ntk: NtkSummary, resid0, eta: float, t: int) -> np.ndarray:
    """``(I - (eta/m) Theta_0)^t yhat`` by repeated multiplication."""
    _check_eta(ntk, eta)
    r = np.array(resid0, dtype=np.float64).reshape(-1)
    if r.shape[0] != ntk.m:
        raise ConfigError("residual length does not match the NTK size")
    step = np.eye(ntk.m) - (eta / ntk.m) * ntk.matrix
    for _ in range(t):
        r = step @ r
    return r


def linearized_loss_bound(trace_metric: float, eta: float, m: int, t: int) -> float:
    """``(m/2) (1 - eta trace_metric^2 / m)^(2t)``."""
    q = eta * trace_metric * trace_metric / m
    if not 0 < q < 2:
        raise ConfigError(f"eta * trace_metric^2 / m = {q:.6g} outside (0, 2)")
    return 0.5 * m * (1.0 - q) ** (2 * t)


def param_drift_bound(ntk: NtkSummary, resid0) -> float:
    """``sqrt(yhat^T Theta_0^{-1} yhat)`` through the eigendecomposition."""
    r = np.asarray(resid0, dtype=np.float64).reshape(-1)
    w, v = jacobi_eigh(ntk.matrix)
    if w[0] <= 0 or w[0] <= 1e-14 * w[-1]:
        raise NumericFailure("NTK is singular; drift bound undefined")
    proj = v.T @ r
    return math.sqrt(float(np.sum(proj * proj / w)))
