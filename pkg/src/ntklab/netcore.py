"""Small deterministic network engine.

Supports the cell DAG networks of :mod:`ntklab.searchspace` plus three fixed
reference models used as analytic oracles:

* ``linear_probe``: ``f(x) = theta . x``
* ``wide``: ``f(x) = 1^T sum_i W_i x``
* ``deep``: ``f(x) = 1^T W_L ... W_1 x``

Cell networks use the NTK parameterization: weights are standard normal and
every linear map divides its pre-activation by ``sqrt(fan_in)``.  The
reference models use raw weights, no scaling.  No biases anywhere.

Loss is fixed to ``(f - y)^2 / 2``.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DivergenceError, NumericFailure
from .searchspace import EDGES, PARAMETRIC_OPS, CellArch

INIT_SCHEMES = ("lecun", "xavier", "he")
HVP_METHODS = ("finite_diff", "analytic_linear")


@dataclass(frozen=True)
class BuiltinArch:
    """One of the fixed reference models (``linear_probe``, ``wide``, ``deep``)."""

    kind: str
    layers: int = 1

    def __post_init__(self):
        if self.kind not in ("linear_probe", "wide", "deep"):
            raise ConfigError(f"unknown builtin model {self.kind!r}")
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")

    @property
    def arch_id(self) -> str:
        if self.kind == "linear_probe":
            return "builtin:linear_probe"
        return f"builtin:{self.kind}:L{self.layers}"


LINEAR_PROBE = BuiltinArch("linear_probe")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Inputs (m x n0) and labels (m,).

    ``strict`` enforces ``||x|| <= 1`` and labels in ``[0, 1]``; loaders always
    produce strict datasets.  ``meta`` records any normalization applied.
    """

    inputs: np.ndarray
    labels: np.ndarray
    name: str = "data"
    meta: dict = field(default_factory=dict)
    strict: bool = True

    def __post_init__(self):
        x = np.array(self.inputs, dtype=np.float64)
        y = np.array(self.labels, dtype=np.float64).reshape(-1)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ConfigError(f"inputs must be a non-empty m x n0 array, got shape {x.shape}")
        if y.shape[0] != x.shape[0]:
            raise ConfigError(f"{x.shape[0]} inputs but {y.shape[0]} labels")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ConfigError("dataset contains non-finite values")
        if self.strict:
            if np.max(np.linalg.norm(x, axis=1)) > 1.0 + 1e-12:
                raise ConfigError("input norm exceeds 1")
            if y.min() < 0.0 or y.max() > 1.0:
                raise ConfigError("labels must lie in [0, 1]")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    @property
    def m(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx, name: str | None = None) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(self.inputs[idx], self.labels[idx], name or self.name, dict(self.meta), self.strict)

    def with_labels(self, labels, strict: bool | None = None) -> Dataset:
        return Dataset(self.inputs, labels, self.name, dict(self.meta), self.strict if strict is None else strict)


def normalize_dataset(inputs, labels, name: str = "data") -> Dataset:
    """Rescale inputs so the largest norm is 1 and min-max labels into [0, 1]."""
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    max_norm = float(np.max(np.linalg.norm(x, axis=1)))
    scale = 1.0 / max_norm if max_norm > 0 else 1.0
    lo, hi = float(y.min()), float(y.max())
    span = hi - lo
    y01 = (y - lo) / span if span > 0 else np.zeros_like(y)
    meta = {"input_scale": scale, "label_min": lo, "label_max": hi}
    return Dataset(x * scale, np.clip(y01, 0.0, 1.0), name, meta)


def load_dataset_csv(path, name: str | None = None) -> Dataset:
    """Read ``x0,...,x{n0-1},y`` CSV and normalize it."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ConfigError(f"{path}: empty CSV") from None
        n0 = len(header) - 1
        expected = [f"x{i}" for i in range(n0)] + ["y"]
        if n0 < 1 or header != expected:
            raise ConfigError(f"{path}: header must be {','.join(expected) if n0 >= 1 else 'x0,...,y'}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n0 + 1:
                raise ConfigError(f"{path}:{lineno}: expected {n0 + 1} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    arr = np.array(rows)
    return normalize_dataset(arr[:, :-1], arr[:, -1], name or path.stem)


# ---------------------------------------------------------------------------
# Parameter layout


@dataclass(frozen=True)
class _Block:
    name: str
    shape: tuple[int, ...]
    fan_in: int
    fan_out: int
    offset: int

    @property
    def size(self) -> int:
        return math.prod(self.shape)


@functools.lru_cache(maxsize=4096)
def _layout(arch, width: int, input_dim: int) -> tuple[_Block, ...]:
    specs: list[tuple[str, tuple[int, ...], int, int]] = []
    if isinstance(arch, CellArch):
        specs.append(("stem", (width, input_dim), input_dim, width))
        for c in range(arch.cells):
            for (i, j), op in zip(EDGES, arch.edge_ops):
                if op in PARAMETRIC_OPS:
                    specs.append((f"cell{c}.{i}{j}", (width, width), width, width))
        specs.append(("head", (width,), width, 1))
    elif arch.kind == "linear_probe":
        specs.append(("theta", (input_dim,), input_dim, 1))
    else:
        for i in range(arch.layers):
            specs.append((f"W{i + 1}", (width, width), width, width))
    blocks, offset = [], 0
    for name, shape, fi, fo in specs:
        b = _Block(name, shape, fi, fo, offset)
        blocks.append(b)
        offset += b.size
    return tuple(blocks)


def param_count(arch, width: int, input_dim: int) -> int:
    return sum(b.size for b in _layout(arch, width, input_dim))


def _scheme_factor(scheme: str, fan_in: int, fan_out: int) -> float:
    # Std multiplier relative to LeCun; the 1/sqrt(fan_in) part lives in the forward pass.
    if scheme == "lecun":
        return 1.0
    if scheme == "xavier":
        return math.sqrt(2.0 * fan_in / (fan_in + fan_out))
    if scheme == "he":
        return math.sqrt(2.0)
    raise ConfigError(f"unknown init scheme {scheme!r}")


@dataclass(frozen=True, eq=False)
class ModelInstance:
    arch: CellArch | BuiltinArch
    params: np.ndarray
    width: int
    input_dim: int
    init_scheme: str = "lecun"
    seed: int = 0

    def __post_init__(self):
        p = np.array(self.params, dtype=np.float64).reshape(-1)
        expected = param_count(self.arch, self.width, self.input_dim)
        if p.shape[0] != expected:
            raise ConfigError(f"expected {expected} parameters, got {p.shape[0]}")
        p.flags.writeable = False
        object.__setattr__(self, "params", p)

    @property
    def arch_id(self) -> str:
        return self.arch.arch_id

    @property
    def d(self) -> int:
        return self.params.shape[0]

    def with_params(self, params) -> ModelInstance:
        return replace(self, params=np.asarray(params, dtype=np.float64))

    def blocks(self) -> dict[str, np.ndarray]:
        return {b.name: self.params[b.offset:b.offset + b.size].reshape(b.shape)
                for b in _layout(self.arch, self.width, self.input_dim)}


def init_params(arch, width: int, input_dim: int, scheme: str = "lecun", seed: int = 0) -> ModelInstance:
    if width < 1 or input_dim < 1:
        raise ConfigError("width and input_dim must be >= 1")
    if isinstance(arch, BuiltinArch) and arch.kind != "linear_probe" and width != input_dim:
        raise ConfigError("wide/deep reference models need width == input_dim")
    if scheme not in INIT_SCHEMES:
        raise ConfigError(f"unknown init scheme {scheme!r}")
    blocks = _layout(arch, width, input_dim)
    rng = np.random.default_rng(seed)
    params = rng.standard_normal(sum(b.size for b in blocks))
    if scheme != "lecun":
        for b in blocks:
            params[b.offset:b.offset + b.size] *= _scheme_factor(scheme, b.fan_in, b.fan_out)
    return ModelInstance(arch, params, width, input_dim, scheme, seed)


# ---------------------------------------------------------------------------
# Forward / reverse passes over a batch of rows


def _act(op: str, z: np.ndarray) -> np.ndarray:
    if op == "linear":
        return z
    if op == "linear_relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(op: str, z: np.ndarray, out: np.ndarray) -> np.ndarray:
    if op == "linear":
        return np.ones_like(z)
    if op == "linear_relu":
        return (z > 0.0).astype(np.float64)  # subgradient 0 at 0
    return 1.0 - out * out


def _forward_batch(model: ModelInstance, X: np.ndarray):
    W = model.blocks()
    arch = model.arch
    if isinstance(arch, BuiltinArch):
        if arch.kind == "linear_probe":
            return X @ W["theta"], (X,)
        if arch.kind == "wide":
            total = sum(W[f"W{i + 1}"] for i in range(arch.layers))
            return X @ total.sum(axis=0), (X,)
        hs = [X]
        for i in range(arch.layers):
            hs.append(hs[-1] @ W[f"W{i + 1}"].T)
        return hs[-1].sum(axis=1), (hs,)

    n = model.width
    sn, sn0 = math.sqrt(n), math.sqrt(model.input_dim)
    a = X @ W["stem"].T / sn0
    edge_cache = []
    for c in range(arch.cells):
        nodes = [a, None, None, None]
        for j in range(1, 4):
            acc = np.zeros_like(a)
            for i in range(j):
                op = arch.op(i, j)
                if op == "zero":
                    continue
                u = nodes[i]
                if op == "skip":
                    acc = acc + u
                    continue
                z = u @ W[f"cell{c}.{i}{j}"].T / sn
                out = _act(op, z)
                edge_cache.append((c, i, j, op, u, z, out))
                acc = acc + out
            nodes[j] = acc
        a = nodes[3]
    return a @ W["head"] / sn, (X, a, edge_cache)


def _vjp(model: ModelInstance, cache, coeffs: np.ndarray) -> np.ndarray:
    """Return ``sum_k coeffs[k] * grad_theta f(x_k)`` as a flat vector."""
    blocks = _layout(model.arch, model.width, model.input_dim)
    W = model.blocks()
    grads: dict[str, np.ndarray] = {}
    arch = model.arch
    if isinstance(arch, BuiltinArch):
        if arch.kind == "linear_probe":
            (X,) = cache
            grads["theta"] = X.T @ coeffs
        elif arch.kind == "wide":
            (X,) = cache
            row = X.T @ coeffs
            for i in range(arch.layers):
                grads[f"W{i + 1}"] = np.tile(row, (model.width, 1))
        else:
            (hs,) = cache
            g = np.outer(coeffs, np.ones(model.width))
            for i in reversed(range(arch.layers)):
                Wi = W[f"W{i + 1}"]
                grads[f"W{i + 1}"] = g.T @ hs[i]
                g = g @ Wi
    else:
        X, a_out, edge_cache = cache
        n = model.width
        sn, sn0 = math.sqrt(n), math.sqrt(model.input_dim)
        grads["head"] = a_out.T @ coeffs / sn
        da = np.outer(coeffs, W["head"]) / sn
        by_edge = {(c, i, j): (op, u, z, out) for c, i, j, op, u, z, out in edge_cache}
        for c in reversed(range(arch.cells)):
            dnodes = [np.zeros_like(da) for _ in range(4)]
            dnodes[3] = da
            for j in (3, 2, 1):
                for i in range(j):
                    op = arch.op(i, j)
                    if op == "zero":
                        continue
                    if op == "skip":
                        dnodes[i] = dnodes[i] + dnodes[j]
                        continue
                    _, u, z, out = by_edge[(c, i, j)]
                    name = f"cell{c}.{i}{j}"
                    dz = dnodes[j] * _act_grad(op, z, out)
                    grads[name] = dz.T @ u / sn
                    dnodes[i] = dnodes[i] + dz @ W[name] / sn
            da = dnodes[0]
        grads["stem"] = da.T @ X / sn0
    out = np.empty(model.d)
    for b in blocks:
        out[b.offset:b.offset + b.size] = grads[b.name].reshape(-1)
    return out


def _check_input(model: ModelInstance, X: np.ndarray):
    if X.shape[1] != model.input_dim:
        raise ConfigError(f"input dimension {X.shape[1]} does not match model input_dim {model.input_dim}")


def predict(model: ModelInstance, inputs) -> np.ndarray:
    X = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    _check_input(model, X)
    with np.errstate(over="ignore", invalid="ignore"):
        f, _ = _forward_batch(model, X)
    if not np.all(np.isfinite(f)):
        raise NumericFailure("non-finite forward output", model.arch_id)
    return f


def forward(model: ModelInstance, x) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != model.input_dim:
        raise ConfigError(f"input dimension {x.shape[0]} does not match model input_dim {model.input_dim}")
    return float(predict(model, x[None, :])[0])


@dataclass(frozen=True, eq=False)
class GradientBundle:
    outputs: np.ndarray  # f(x_i, theta_0)
    output_grads: np.ndarray
    loss_grads: np.ndarray | None = None
    mean_loss_grad: np.ndarray | None = None
    residuals: np.ndarray | None = None


def _sample_grad(model: ModelInstance, x: np.ndarray) -> tuple[float, np.ndarray]:
    # overflow surfaces as non-finite values, which callers turn into NumericFailure
    with np.errstate(over="ignore", invalid="ignore"):
        f, cache = _forward_batch(model, x[None, :])
        return float(f[0]), _vjp(model, cache, np.ones(1))


def output_gradients(model: ModelInstance, data: Dataset) -> GradientBundle:
    """Per-sample gradients of the scalar output; one backward pass per sample."""
    _check_input(model, data.inputs)
    m = data.m
    outputs = np.empty(m)
    rows = np.empty((m, model.d))
    for k in range(m):
        outputs[k], rows[k] = _sample_grad(model, data.inputs[k])
    if not (np.all(np.isfinite(outputs)) and np.all(np.isfinite(rows))):
        raise NumericFailure("non-finite values in forward/backward pass", model.arch_id)
    return GradientBundle(outputs, rows)


def loss_gradients(model: ModelInstance, data: Dataset, bundle: GradientBundle | None = None) -> GradientBundle:
    if bundle is None:
        bundle = output_gradients(model, data)
    resid = bundle.outputs - data.labels
    loss_grads = resid[:, None] * bundle.output_grads
    return GradientBundle(bundle.outputs, bundle.output_grads, loss_grads, loss_grads.mean(axis=0), resid)


def _sample_loss_grad(model: ModelInstance, x: np.ndarray, y: float) -> np.ndarray:
    f, g = _sample_grad(model, x)
    return (f - y) * g


def hvp(model: ModelInstance, data: Dataset, index: int, v, method: str = "finite_diff") -> np.ndarray:
    """Hessian of the per-sample loss at ``index`` applied to ``v``."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape[0] != model.d:
        raise ConfigError(f"v has length {v.shape[0]}, expected {model.d}")
    vnorm = float(np.linalg.norm(v))
    if vnorm == 0.0:
        raise ConfigError("hvp direction must be non-zero")
    x, y = data.inputs[index], float(data.labels[index])
    if method == "analytic_linear":
        if not (isinstance(model.arch, BuiltinArch) and model.arch.kind == "linear_probe"):
            raise ConfigError("analytic_linear HVP is only defined for the linear probe")
        out = x * float(x @ v)
    elif method == "finite_diff":
        eps = 1e-4 * (1.0 + float(np.linalg.norm(model.params))) / vnorm
        plus = _sample_loss_grad(model.with_params(model.params + eps * v), x, y)
        minus = _sample_loss_grad(model.with_params(model.params - eps * v), x, y)
        out = (plus - minus) / (2.0 * eps)
    else:
        raise ConfigError(f"unknown hvp method {method!r}")
    if not np.all(np.isfinite(out)):
        raise NumericFailure("non-finite Hessian-vector product", model.arch_id)
    return out


def mean_loss(model: ModelInstance, data: Dataset) -> float:
    r = predict(model, data.inputs) - data.labels
    return float(0.5 * np.mean(r * r))


def mse(model: ModelInstance, data: Dataset) -> float:
    r = predict(model, data.inputs) - data.labels
    return float(np.mean(r * r))


def train_gd(model: ModelInstance, data: Dataset, lr: float, steps: int) -> tuple[ModelInstance, list[float]]:
    """Full-batch gradient descent on the mean of ``(f - y)^2 / 2``.

    The returned trace holds the loss after each update.
    """
    if not lr > 0:
        raise ConfigError("learning rate must be positive")
    if steps < 0:
        raise ConfigError("steps must be >= 0")
    _check_input(model, data.inputs)
    X, y, m = data.inputs, data.labels, data.m
    theta = model.params.copy()
    trace: list[float] = []
    current = model
    with np.errstate(over="ignore", invalid="ignore"):
        f, cache = _forward_batch(current, X)
        for step in range(steps):
            resid = f - y
            grad = _vjp(current, cache, resid / m)
            theta = theta - lr * grad
            current = model.with_params(theta)
            f, cache = _forward_batch(current, X)
            r = f - y
            loss = float(0.5 * np.mean(r * r))
            if not math.isfinite(loss):
                raise DivergenceError(step, model.arch_id)
            trace.append(loss)
    return current, trace
