"""Objectives with analytic gradients: quadratic testbed, softmax regression, one-hidden-layer MLP.

Per-sample losses are averaged over the batch. For the quadratic kind each
sample row is a noise vector ``e`` and the per-sample loss is
``0.5 (theta - theta*)^T A (theta - theta*) + e^T (theta - theta*)``; dataset
builders center the noise so the full-data objective is the exact quadratic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, UnsupportedKindError
from .params import ParamVector, make_layout

KINDS = ("quadratic", "logistic", "mlp")
ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class QuadraticPayload:
    A: np.ndarray
    theta_star: np.ndarray


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    class_count: int = 0
    hidden_dim: int = 0
    activation: str = "tanh"
    init_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedKindError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1:
            raise DimensionError("input_dim must be >= 1")
        if self.kind != "quadratic" and self.class_count < 2:
            raise DimensionError("classification models need class_count >= 2")
        if self.kind == "mlp" and self.hidden_dim < 1:
            raise DimensionError("mlp needs hidden_dim >= 1")
        if self.activation not in ACTIVATIONS:
            raise UnsupportedKindError(f"unknown activation {self.activation!r}")

    @property
    def is_classifier(self) -> bool:
        return self.kind != "quadratic"


@dataclass(frozen=True, eq=False)
class Batch:
    inputs: np.ndarray
    targets: np.ndarray
    quad: QuadraticPayload | None = field(default=None, repr=False)

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        if inputs.ndim == 1:
            inputs = inputs.reshape(-1, 1)
        targets = np.asarray(self.targets)
        if inputs.shape[0] != targets.shape[0]:
            raise DimensionError(
                f"batch has {inputs.shape[0]} input rows but {targets.shape[0]} targets")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.targets[idx], self.quad)

    @staticmethod
    def concat(batches) -> "Batch":
        batches = list(batches)
        return Batch(np.concatenate([b.inputs for b in batches]),
                     np.concatenate([b.targets for b in batches]), batches[0].quad)


def layer_shapes(spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
    d, c, h = spec.input_dim, spec.class_count, spec.hidden_dim
    if spec.kind == "quadratic":
        return [("theta", (d,))]
    if spec.kind == "logistic":
        return [("W", (c, d)), ("b", (c,))]
    return [("W1", (h, d)), ("b1", (h,)), ("W2", (c, h)), ("b2", (c,))]


def output_layers(spec: ModelSpec) -> frozenset[str]:
    """Layers that feed the class scores directly."""
    return {"quadratic": frozenset(), "logistic": frozenset({"W", "b"}),
            "mlp": frozenset({"W2", "b2"})}[spec.kind]


def model_layout(spec: ModelSpec):
    return make_layout((name, int(np.prod(shape))) for name, shape in layer_shapes(spec))


def parameter_count(spec: ModelSpec) -> int:
    return sum(int(np.prod(shape)) for _, shape in layer_shapes(spec))


def init_params(spec: ModelSpec) -> ParamVector:
    """Glorot-uniform weights seeded by ``spec.init_seed``; biases start at zero."""
    rng = np.random.default_rng(spec.init_seed)
    parts = []
    for name, shape in layer_shapes(spec):
        if len(shape) == 2:
            fan_out, fan_in = shape
        elif spec.kind == "quadratic":
            fan_in, fan_out = shape[0], 1
        else:
            parts.append(np.zeros(shape[0]))
            continue
        a = np.sqrt(6.0 / (fan_in + fan_out))
        parts.append(rng.uniform(-a, a, size=int(np.prod(shape))))
    return ParamVector(np.concatenate(parts), model_layout(spec))


def _unpack(spec: ModelSpec, theta: ParamVector):
    if len(theta) != parameter_count(spec):
        raise DimensionError(
            f"theta has {len(theta)} entries, {spec.kind} model needs {parameter_count(spec)}")
    out = {}
    for (name, shape), s in zip(layer_shapes(spec), theta.layout):
        out[name] = theta.values[s.as_slice()].reshape(shape)
    return out


def _check_batch(spec: ModelSpec, batch: Batch) -> None:
    if batch.inputs.shape[1] != spec.input_dim:
        raise DimensionError(
            f"batch inputs have {batch.inputs.shape[1]} columns, model expects {spec.input_dim}")
    if spec.kind == "quadratic" and batch.quad is None:
        raise DimensionError("quadratic batch carries no (A, theta*) payload")


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _act(spec, z):
    if spec.activation == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_grad(spec, z, a):
    if spec.activation == "tanh":
        return 1.0 - a * a
    return (z > 0).astype(np.float64)


def _logits(spec, p, x):
    if spec.kind == "logistic":
        return x @ p["W"].T + p["b"], None
    z1 = x @ p["W1"].T + p["b1"]
    a1 = _act(spec, z1)
    return a1 @ p["W2"].T + p["b2"], (z1, a1)


def loss(spec: ModelSpec, theta: ParamVector, batch: Batch) -> float:
    _check_batch(spec, batch)
    if spec.kind == "quadratic":
        _unpack(spec, theta)
        diff = theta.values - batch.quad.theta_star
        noise = batch.inputs.mean(axis=0) if len(batch) else 0.0
        return float(0.5 * diff @ batch.quad.A @ diff + np.dot(noise, diff))
    p = _unpack(spec, theta)
    z, _ = _logits(spec, p, batch.inputs)
    logp = _log_softmax(z)
    y = batch.targets.astype(np.intp)
    return float(-logp[np.arange(len(y)), y].mean())


def gradient(spec: ModelSpec, theta: ParamVector, batch: Batch) -> ParamVector:
    _check_batch(spec, batch)
    p = _unpack(spec, theta)
    if spec.kind == "quadratic":
        g = batch.quad.A @ (theta.values - batch.quad.theta_star)
        if len(batch):
            g = g + batch.inputs.mean(axis=0)
        return ParamVector._trusted(g, theta.layout)

    x = batch.inputs
    n = x.shape[0]
    y = batch.targets.astype(np.intp)
    z, cache = _logits(spec, p, x)
    dz = np.exp(_log_softmax(z))
    dz[np.arange(n), y] -= 1.0
    dz /= n
    if spec.kind == "logistic":
        parts = [(dz.T @ x).ravel(), dz.sum(axis=0)]
    else:
        z1, a1 = cache
        da1 = dz @ p["W2"]
        dz1 = da1 * _act_grad(spec, z1, a1)
        parts = [(dz1.T @ x).ravel(), dz1.sum(axis=0), (dz.T @ a1).ravel(), dz.sum(axis=0)]
    return ParamVector._trusted(np.concatenate(parts), theta.layout)


def predict(spec: ModelSpec, theta: ParamVector, inputs: np.ndarray) -> np.ndarray:
    if not spec.is_classifier:
        raise UnsupportedKindError("prediction needs a classification model")
    z, _ = _logits(spec, _unpack(spec, theta), np.asarray(inputs, dtype=np.float64))
    # argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(z, axis=1)


def accuracy(spec: ModelSpec, theta: ParamVector, batch: Batch) -> float:
    if not spec.is_classifier:
        raise UnsupportedKindError("accuracy is undefined for the quadratic kind")
    _check_batch(spec, batch)
    if len(batch) == 0:
        return 0.0
    return float(np.mean(predict(spec, theta, batch.inputs) == batch.targets))


def power_iteration(A: np.ndarray, rtol: float = 1e-8, max_iter: int = 200_000,
                    seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric positive semi-definite matrix."""
    A = np.asarray(A, dtype=np.float64)
    v = np.random.default_rng(seed).standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = A @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        new = float(v @ w)
        v = w / norm
        if abs(new - lam) <= rtol * abs(new):
            return new
        lam = new
    return lam


def probe_smoothness(spec: ModelSpec, theta_like: ParamVector, dataset: Batch,
                     probes: int, seed: int, scale: float = 1.0) -> float:
    """Max of ``||grad(a) - grad(b)|| / ||a - b||`` over random probe pairs."""
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(max(1, probes)):
        a = theta_like.values + scale * rng.standard_normal(len(theta_like))
        b = theta_like.values + scale * rng.standard_normal(len(theta_like))
        ta, tb = theta_like.with_values(a), theta_like.with_values(b)
        num = np.linalg.norm(gradient(spec, ta, dataset).values - gradient(spec, tb, dataset).values)
        den = np.linalg.norm(a - b)
        if den > 0:
            best = max(best, float(num / den))
    return best


def smoothness_estimate(spec: ModelSpec, dataset: Batch, probes: int = 8, seed: int = 0,
                        exact: bool = True) -> float:
    """Estimate the Lipschitz constant of the gradient over ``dataset``.

    The quadratic kind returns the top eigenvalue of A (power iteration)
    unless ``exact`` is False; other kinds, and the quadratic with
    ``exact=False``, return a random-probe lower estimate.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    if spec.kind == "quadratic" and exact:
        _check_batch(spec, dataset)
        return power_iteration(dataset.quad.A)
    return probe_smoothness(spec, init_params(spec), dataset, probes, seed)
