"""Cyclic Jacobi eigensolver for small dense symmetric matrices.

Sweeps use the round-robin (tournament) ordering so every rotation in a round
acts on disjoint index pairs and the whole round is applied as one vectorized
update.  Each sweep still visits every off-diagonal pair exactly once.
"""

import numpy as np

from .errors import ConfigError, ConvergenceError

MAX_SWEEPS = 100
OFF_TOL = 1e-12


def _round_robin(m: int) -> list[tuple[np.ndarray, np.ndarray]]:
    n = m + (m % 2)
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        ps, qs = [], []
        for k in range(n // 2):
            a, b = players[k], players[n - 1 - k]
            if a < m and b < m:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _off_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.linalg.norm(off))


def jacobi_eigh(matrix, want_vectors: bool = True):
    """Eigenvalues (ascending) and, optionally, orthonormal eigenvectors as columns."""
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError(f"expected a square matrix, got shape {a.shape}")
    m = a.shape[0]
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if a.size and float(np.max(np.abs(a - a.T))) > 1e-8 * scale:
        raise ConfigError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(m)
    total = float(np.linalg.norm(a))
    rounds = _round_robin(m) if m > 1 else []
    converged = _off_norm(a) <= OFF_TOL * total
    sweeps = 0
    while not converged:
        if sweeps >= MAX_SWEEPS:
            raise ConvergenceError(f"Jacobi did not converge in {MAX_SWEEPS} sweeps")
        for p, q in rounds:
            apq = a[p, q]
            active = apq != 0.0
            if not np.any(active):
                continue
            app, aqq = a[p, p], a[q, q]
            with np.errstate(over="ignore", divide="ignore"):
                theta = np.where(active, (aqq - app) / (2.0 * np.where(active, apq, 1.0)), 0.0)
                t = np.where(active, np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0)), 0.0)
            t = np.where(active & (theta == 0.0), 1.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            # A <- J^T A J with J[p,p]=J[q,q]=c, J[p,q]=s, J[q,p]=-s
            colp, colq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * colp - s * colq
            a[:, q] = s * colp + c * colq
            rowp, rowq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rowp - s[:, None] * rowq
            a[q, :] = s[:, None] * rowp + c[:, None] * rowq
            a[p, q] = 0.0
            a[q, p] = 0.0
            if want_vectors:
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        sweeps += 1
        converged = _off_norm(a) <= OFF_TOL * total
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    if want_vectors:
        return w[order], v[:, order]
    return w[order]


def sym_eigen(matrix) -> np.ndarray:
    return jacobi_eigh(matrix, want_vectors=False)
