"""Dense 12-9-6-9-12 autoencoder in plain numpy.

Hidden layers use ReLU (with optional inverted dropout while training), the
output layer is a sigmoid so reconstructions stay in (0, 1) like the
features. Gradients are exact backprop of

    MSE(x, x') + l2 * sum ||W||^2 + (mu / 2) * ||theta - theta_global||^2

where the L2 term covers weight matrices only and the proximal term covers
every parameter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

HIDDEN_SIZES = (12, 9, 6, 9, 12)
MODEL_FORMAT = "frba-autoencoder"
MODEL_VERSION = 1


@dataclass
class ModelWeights:
    """Per-layer weight matrices (fan_in x fan_out) and bias vectors."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int | None = None
    manifest_hash: str = ""

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must have the same number of layers")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: bias shape {b.shape} does not fit weight {w.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: input size does not match previous output")

    @classmethod
    def init(
        cls,
        n_inputs: int,
        seed: int | None = 0,
        hidden: Sequence[int] = HIDDEN_SIZES,
        manifest_hash: str = "",
    ) -> "ModelWeights":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        sizes = [n_inputs, *hidden, n_inputs]
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return cls(ws, bs, seed=seed, manifest_hash=manifest_hash)

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    def params(self) -> list[np.ndarray]:
        """Parameters interleaved as W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "ModelWeights":
        return ModelWeights(
            list(params[0::2]), list(params[1::2]), seed=self.seed, manifest_hash=self.manifest_hash
        )

    def copy(self) -> "ModelWeights":
        return self.with_params([p.copy() for p in self.params()])

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def from_flat(self, vec: np.ndarray) -> "ModelWeights":
        out, i = [], 0
        for p in self.params():
            out.append(np.asarray(vec[i : i + p.size], dtype=np.float64).reshape(p.shape))
            i += p.size
        if i != vec.size:
            raise ValueError("flat vector length does not match architecture")
        return self.with_params(out)

    def same_shape(self, other: "ModelWeights") -> bool:
        return [p.shape for p in self.params()] == [p.shape for p in other.params()]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    # -- serialization (JSON text; float repr round-trips exactly) --

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "sizes": list(self.sizes),
            "activations": {"hidden": "relu", "output": "sigmoid"},
            "manifest_hash": self.manifest_hash,
            "seed": self.seed,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelWeights":
        if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
            raise ValueError("not a supported model document")
        m = cls(
            [np.array(w, dtype=np.float64) for w in doc["weights"]],
            [np.array(b, dtype=np.float64) for b in doc["biases"]],
            seed=doc.get("seed"),
            manifest_hash=doc.get("manifest_hash", ""),
        )
        if list(m.sizes) != list(doc["sizes"]):
            raise ValueError("declared sizes do not match stored arrays")
        return m

    @classmethod
    def from_json(cls, text: str) -> "ModelWeights":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "ModelWeights":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 5
    learning_rate: float = 0.15
    l2_lambda: float = 1e-4
    proximal_mu: float = 0.01
    dropout_rate: float = 0.1
    update_threshold: int = 50
    sample_cap: int = 500
    rng_seed: int = 0
    # None means every hidden layer
    dropout_layers: tuple[int, ...] | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")
        if self.proximal_mu < 0:
            raise ValueError("proximal_mu must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.sample_cap < 1:
            raise ValueError("batch_size and sample_cap must be >= 1, epochs >= 0")
        if self.update_threshold < 1:
            raise ValueError("update_threshold must be >= 1")


@dataclass
class ForwardCache:
    activations: list[np.ndarray]  # input to each layer, after dropout
    pre_activations: list[np.ndarray]
    masks: list[np.ndarray | None]
    output: np.ndarray = field(default=None)  # type: ignore[assignment]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _as_batch(x) -> tuple[np.ndarray, bool]:
    if hasattr(x, "values") and not isinstance(x, np.ndarray):
        x = x.values
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :], True
    return arr, False


def forward(
    weights: ModelWeights,
    x,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    dropout_rate: float = 0.0,
    dropout_layers: tuple[int, ...] | None = None,
    masks: list[np.ndarray | None] | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Reconstruct ``x`` (one vector or a batch of rows).

    In train mode, hidden layer ``i`` gets an inverted-dropout mask if ``i``
    is in ``dropout_layers`` (all hidden layers when None). Pre-drawn
    ``masks`` can be passed to replay an earlier pass exactly.
    """
    X, single = _as_batch(x)
    if X.shape[1] != weights.n_inputs:
        raise ValueError(f"expected {weights.n_inputs} features, got {X.shape[1]}")
    n_hidden = len(weights.weights) - 1
    use_dropout = train_mode and (dropout_rate > 0.0 or masks is not None)
    if use_dropout and masks is None and rng is None:
        raise ValueError("train_mode with dropout needs an rng")

    acts, pres, used_masks = [X], [], []
    a = X
    for i, (w, b) in enumerate(zip(weights.weights, weights.biases)):
        z = a @ w + b
        pres.append(z)
        if i == n_hidden:
            a = _sigmoid(z)
            break
        h = np.maximum(z, 0.0)
        mask = None
        if use_dropout:
            if masks is not None:
                mask = masks[i]
            elif dropout_layers is None or i in dropout_layers:
                keep = 1.0 - dropout_rate
                mask = (rng.random(h.shape) < keep) / keep
        if mask is not None:
            h = h * mask
        used_masks.append(mask)
        acts.append(h)
        a = h
    cache = ForwardCache(acts, pres, used_masks, a)
    return (a[0] if single else a), cache


def _l2_sum(weights: ModelWeights) -> float:
    return float(sum(np.sum(w * w) for w in weights.weights))


def _prox_sum(weights: ModelWeights, global_weights: ModelWeights) -> float:
    return float(
        sum(np.sum((p - q) ** 2) for p, q in zip(weights.params(), global_weights.params()))
    )


def loss(
    weights: ModelWeights,
    x,
    reconstruction,
    global_weights: ModelWeights | None = None,
    l2_lambda: float = 0.0,
    proximal_mu: float = 0.0,
) -> float:
    X, _ = _as_batch(x)
    R, _ = _as_batch(reconstruction)
    if X.shape != R.shape:
        raise ValueError("input and reconstruction shapes differ")
    value = float(np.mean((R - X) ** 2))
    value += l2_lambda * _l2_sum(weights)
    if global_weights is not None:
        value += 0.5 * proximal_mu * _prox_sum(weights, global_weights)
    return value


def backward(
    weights: ModelWeights,
    x,
    cache: ForwardCache,
    global_weights: ModelWeights | None = None,
    l2_lambda: float = 0.0,
    proximal_mu: float = 0.0,
) -> ModelWeights:
    """Exact gradient of :func:`loss`, returned in the shape of ``weights``."""
    X, _ = _as_batch(x)
    out = cache.output
    n_layers = len(weights.weights)
    delta = 2.0 * (out - X) / X.size * out * (1.0 - out)
    grads_w = [None] * n_layers
    grads_b = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        a_in = cache.activations[i]
        grads_w[i] = a_in.T @ delta + 2.0 * l2_lambda * weights.weights[i]
        grads_b[i] = delta.sum(axis=0)
        if i == 0:
            break
        da = delta @ weights.weights[i].T
        mask = cache.masks[i - 1]
        if mask is not None:
            da = da * mask
        delta = da * (cache.pre_activations[i - 1] > 0.0)
    if global_weights is not None:
        for i in range(n_layers):
            grads_w[i] = grads_w[i] + proximal_mu * (weights.weights[i] - global_weights.weights[i])
            grads_b[i] = grads_b[i] + proximal_mu * (weights.biases[i] - global_weights.biases[i])
    return ModelWeights(grads_w, grads_b, seed=weights.seed, manifest_hash=weights.manifest_hash)


def reconstruction_error(weights: ModelWeights, x) -> float | np.ndarray:
    """Per-record MSE in inference mode: a float for one vector, an array for a batch."""
    X, single = _as_batch(x)
    R, _ = forward(weights, X, train_mode=False)
    err = np.mean((R - X) ** 2, axis=1)
    return float(err[0]) if single else err


def stack_vectors(data) -> np.ndarray:
    if isinstance(data, np.ndarray):
        return np.atleast_2d(np.asarray(data, dtype=np.float64))
    return np.vstack([np.asarray(getattr(v, "values", v), dtype=np.float64) for v in data])


def train_local(
    weights_init: ModelWeights,
    data,
    cfg: TrainConfig,
    global_weights: ModelWeights | None = None,
) -> tuple[ModelWeights, int]:
    """Mini-batch gradient descent on the most recent ``sample_cap`` records.

    The proximal term is active whenever ``global_weights`` is given. Returns
    the trained weights and the number of samples used.
    """
    X = stack_vectors(data) if len(data) else np.empty((0, weights_init.n_inputs))
    if X.shape[0] == 0:
        raise ValueError("train_local needs at least one record")
    if X.shape[1] != weights_init.n_inputs:
        raise ValueError(f"data has {X.shape[1]} features, model expects {weights_init.n_inputs}")
    X = X[-cfg.sample_cap :]
    n = X.shape[0]
    rng = np.random.default_rng(cfg.rng_seed)
    w = weights_init.copy()
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = X[order[start : start + cfg.batch_size]]
            _, cache = forward(
                w,
                batch,
                train_mode=True,
                rng=rng,
                dropout_rate=cfg.dropout_rate,
                dropout_layers=cfg.dropout_layers,
            )
            g = backward(w, batch, cache, global_weights, cfg.l2_lambda, cfg.proximal_mu)
            w = w.with_params(
                [p - cfg.learning_rate * dp for p, dp in zip(w.params(), g.params())]
            )
    return w, n
