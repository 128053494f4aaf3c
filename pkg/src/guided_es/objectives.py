"""Black-box objectives, optionally carrying an exact gradient."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .linalg import DimensionError, sample_orthonormal

# Rows per call when an objective is evaluated on a stack of parameter vectors.
EVAL_CHUNK = 32


class DegenerateObjectiveError(ValueError):
    pass


@dataclass(frozen=True)
class Objective:
    """Scalar loss over ``R^dim``.

    ``batch_fn`` maps a ``(m, dim)`` stack to ``m`` losses; it must give the
    same value for a row regardless of which other rows share the stack.
    """

    dim: int
    fn: Callable[[np.ndarray], float]
    grad_fn: Callable[[np.ndarray], np.ndarray] | None = None
    batch_fn: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "objective"

    def __call__(self, theta) -> float:
        return float(self.fn(self._check(theta)))

    def _check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape[-1] != self.dim:
            raise DimensionError(f"{self.name} expects length {self.dim}, got {theta.shape[-1]}")
        return theta

    @property
    def has_gradient(self) -> bool:
        return self.grad_fn is not None

    def gradient(self, theta) -> np.ndarray:
        if self.grad_fn is None:
            raise NotImplementedError(f"{self.name} has no exact gradient")
        return np.asarray(self.grad_fn(self._check(theta)), dtype=np.float64)

    def evaluate_many(self, thetas) -> np.ndarray:
        thetas = np.atleast_2d(self._check(thetas))
        if self.batch_fn is None:
            return np.array([self.fn(t) for t in thetas], dtype=np.float64)
        out = np.empty(thetas.shape[0])
        for s in range(0, thetas.shape[0], EVAL_CHUNK):
            out[s:s + EVAL_CHUNK] = self.batch_fn(thetas[s:s + EVAL_CHUNK])
        return out


def linear_objective(c) -> Objective:
    c = np.array(c, dtype=np.float64)
    if not np.any(c):
        raise DegenerateObjectiveError("linear objective needs a nonzero coefficient vector")
    c.setflags(write=False)
    return Objective(
        dim=c.shape[0],
        fn=lambda t: float(t @ c),
        grad_fn=lambda t: c.copy(),
        batch_fn=lambda ts: ts @ c,
        name="linear",
    )


@dataclass(frozen=True)
class QuadraticSpec:
    hessian_eigenvalues: Sequence[float]
    rotation_seed: int = 0
    linear_term: Sequence[float] | None = None

    def hessian(self) -> np.ndarray:
        lam = np.asarray(self.hessian_eigenvalues, dtype=np.float64)
        if not np.all(np.isfinite(lam)):
            raise ValueError("eigenvalues must be finite")
        n = lam.shape[0]
        q = sample_orthonormal(n, n, self.rotation_seed).directions
        h = (q.T * lam) @ q
        return 0.5 * (h + h.T)


def quadratic_objective(spec: QuadraticSpec) -> Objective:
    """f(x) = 1/2 x'Hx + b'x with H = Q diag(eigenvalues) Q' for a seeded rotation Q."""
    h = spec.hessian()
    n = h.shape[0]
    b = np.zeros(n) if spec.linear_term is None else np.asarray(spec.linear_term, dtype=np.float64)
    if b.shape != (n,):
        raise DimensionError("linear term length must match the eigenvalue count")
    h.setflags(write=False)
    b.setflags(write=False)

    def batch(ts):
        return 0.5 * np.einsum("mi,mi->m", ts @ h, ts) + ts @ b

    return Objective(
        dim=n,
        fn=lambda t: float(0.5 * t @ h @ t + b @ t),
        grad_fn=lambda t: h @ t + b,
        batch_fn=batch,
        name="quadratic",
    )


# --- tanh MLP with softmax cross-entropy ----------------------------------


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {self.layer_sizes}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @property
    def num_params(self) -> int:
        return sum((i + 1) * o for i, o in self.shapes)

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]


def flatten_params(spec: MlpSpec, layers) -> np.ndarray:
    """Layer-major: each layer's (fan_in, fan_out) weight matrix row-major, then its bias."""
    if len(layers) != len(spec.shapes):
        raise DimensionError(f"expected {len(spec.shapes)} layers, got {len(layers)}")
    parts = []
    for (w, b), (i, o) in zip(layers, spec.shapes):
        w, b = np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64)
        if w.shape != (i, o) or b.shape != (o,):
            raise DimensionError(f"layer shapes {w.shape}, {b.shape} do not match ({i}, {o})")
        parts += [w.ravel(), b]
    return np.concatenate(parts)


def unflatten_params(spec: MlpSpec, flat) -> list[tuple[np.ndarray, np.ndarray]]:
    """Inverse of :func:`flatten_params`. Leading batch axes are kept."""
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape[-1] != spec.num_params:
        raise DimensionError(f"expected {spec.num_params} parameters, got {flat.shape[-1]}")
    lead = flat.shape[:-1]
    layers, pos = [], 0
    for i, o in spec.shapes:
        w = flat[..., pos:pos + i * o].reshape(*lead, i, o)
        pos += i * o
        b = flat[..., pos:pos + o]
        pos += o
        layers.append((w, b))
    return layers


def init_params(spec: MlpSpec, rng=None) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(rng)
    layers = []
    for i, o in spec.shapes:
        bound = 1.0 / np.sqrt(i)
        layers.append((rng.uniform(-bound, bound, (i, o)), np.zeros(o)))
    return flatten_params(spec, layers)


def _nll(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    # logits (..., B, C); mean negative log-likelihood over B.
    shift = logits.max(axis=-1, keepdims=True)
    z = logits - shift
    lse = np.log(np.exp(z).sum(axis=-1))
    picked = z[..., np.arange(labels.shape[0]), labels]
    return (lse - picked).mean(axis=-1)


def mlp_loss_many(spec: MlpSpec, thetas: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    layers = unflatten_params(spec, thetas)
    h = x
    for j, (w, b) in enumerate(layers):
        h = np.matmul(h, w) + b[:, None, :]
        if j < len(layers) - 1:
            h = np.tanh(h)
    return _nll(h, y)


def mlp_loss(spec: MlpSpec, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    return float(mlp_loss_many(spec, theta[None, :], x, y)[0])


def mlp_gradient(spec: MlpSpec, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    layers = unflatten_params(spec, theta)
    acts = [x]
    h = x
    for j, (w, b) in enumerate(layers):
        h = h @ w + b
        if j < len(layers) - 1:
            h = np.tanh(h)
        acts.append(h)
    logits = acts[-1]
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    delta = p
    delta[np.arange(y.shape[0]), y] -= 1.0
    delta /= y.shape[0]
    grads = []
    for j in range(len(layers) - 1, -1, -1):
        w, _ = layers[j]
        grads.append((acts[j].T @ delta, delta.sum(axis=0)))
        if j > 0:
            delta = (delta @ w.T) * (1.0 - acts[j] ** 2)
    return flatten_params(spec, grads[::-1])


def mlp_objective(spec: MlpSpec, batch) -> Objective:
    """Mean softmax cross-entropy of the MLP on ``batch = (features, labels)``.

    All evaluations of the returned objective share this one batch.
    """
    x, y = batch
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if x.ndim != 2 or x.shape[1] != spec.layer_sizes[0]:
        raise DimensionError(f"features of shape {x.shape} do not fit input size {spec.layer_sizes[0]}")
    if y.shape != (x.shape[0],):
        raise DimensionError("one label per feature row required")
    if y.size and (y.min() < 0 or y.max() >= spec.num_classes):
        raise DimensionError(f"labels outside [0, {spec.num_classes})")
    return Objective(
        dim=spec.num_params,
        fn=lambda t: mlp_loss(spec, t, x, y),
        grad_fn=lambda t: mlp_gradient(spec, t, x, y),
        batch_fn=lambda ts: mlp_loss_many(spec, ts, x, y),
        name="mlp",
    )


def mlp_accuracy(spec: MlpSpec, theta, x, y) -> float:
    layers = unflatten_params(spec, np.asarray(theta, dtype=np.float64))
    h = np.asarray(x, dtype=np.float64)
    for j, (w, b) in enumerate(layers):
        h = h @ w + b
        if j < len(layers) - 1:
            h = np.tanh(h)
    return float(np.mean(h.argmax(axis=1) == np.asarray(y)))
