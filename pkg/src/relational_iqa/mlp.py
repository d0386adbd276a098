"""Dense networks with analytic backpropagation, momentum SGD and checkpoints.

Inputs are row-major batches (n x fan_in); a layer computes x @ W.T + b.
Hidden layers use a leaky rectifier, the last layer ``sigmoid`` or ``identity``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import ValidationError
from .imagecore import DTYPE_F64, Rng, TensorFormatError, read_tensor, write_tensor

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01
OUTPUT_ACTIVATIONS = ("sigmoid", "identity")
CHECKPOINT_SCHEMA_VERSION = 1
HEADER_NAME = "header.json"


class CheckpointError(ValidationError):
    """Raised when a checkpoint directory is missing, malformed or incompatible."""


def leaky_relu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def sigmoid(z: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(z)
    positive = z >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-z[positive]))
    ez = np.exp(z[~positive])
    out[~positive] = ez / (1.0 + ez)
    return out


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre_activations: list[np.ndarray] = field(default_factory=list)
    output: np.ndarray | None = None


class Mlp:
    """Fully connected network; parameters are float64 arrays owned by the instance."""

    def __init__(
        self,
        sizes: Sequence[int],
        weights: Sequence[np.ndarray],
        biases: Sequence[np.ndarray],
        output: str = "sigmoid",
    ) -> None:
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValidationError(f"Invalid layer sizes {sizes}.")
        if output not in OUTPUT_ACTIVATIONS:
            raise ValidationError(f"Output activation must be one of {OUTPUT_ACTIVATIONS}, got {output!r}.")
        if len(weights) != len(sizes) - 1 or len(biases) != len(sizes) - 1:
            raise ValidationError("One weight matrix and one bias vector are needed per layer.")
        self.sizes = sizes
        self.output = output
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for layer, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            if self.weights[layer].shape != (fan_out, fan_in) or self.biases[layer].shape != (fan_out,):
                raise ValidationError(
                    f"Layer {layer} expects W {(fan_out, fan_in)} and b {(fan_out,)}, got "
                    f"{self.weights[layer].shape} and {self.biases[layer].shape}."
                )

    @classmethod
    def initialize(cls, sizes: Sequence[int], rng: Rng, output: str = "sigmoid") -> "Mlp":
        """Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)); zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            generator = rng.numpy_generator()
            weights.append(generator.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(sizes, weights, biases, output)

    @classmethod
    def zeros(cls, sizes: Sequence[int], output: str = "sigmoid") -> "Mlp":
        return cls(
            sizes,
            [np.zeros((o, i)) for i, o in zip(sizes, sizes[1:])],
            [np.zeros(o) for o in sizes[1:]],
            output,
        )

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        """Live parameter arrays in the order W0, b0, W1, b1, ..."""
        params: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, self.weights, self.biases, self.output)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())

    def forward(self, x: np.ndarray, keep_cache: bool = False) -> tuple[np.ndarray, ForwardCache | None]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ValidationError(f"Expected an n x {self.sizes[0]} input, got shape {x.shape}.")
        cache = ForwardCache() if keep_cache else None
        activation = x
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = activation @ w.T + b
            if cache is not None:
                cache.inputs.append(activation)
                cache.pre_activations.append(z)
            if layer < self.n_layers - 1:
                activation = leaky_relu(z)
            elif self.output == "sigmoid":
                activation = sigmoid(z)
            else:
                activation = z
        if cache is not None:
            cache.output = activation
        return activation, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: ForwardCache, grad_output: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Parameter gradients (same order as ``parameters``) and the input gradient."""
        if cache.output is None:
            raise ValidationError("backward needs a cache from forward(keep_cache=True).")
        grad = np.asarray(grad_output, dtype=np.float64)
        if grad.shape != cache.output.shape:
            raise ValidationError(f"Output gradient {grad.shape} does not match output {cache.output.shape}.")
        if self.output == "sigmoid":
            grad = grad * cache.output * (1.0 - cache.output)
        grads: list[np.ndarray] = [np.empty(0)] * (2 * self.n_layers)
        for layer in range(self.n_layers - 1, -1, -1):
            if layer < self.n_layers - 1:
                z = cache.pre_activations[layer]
                grad = grad * np.where(z > 0, 1.0, LEAKY_SLOPE)
            grads[2 * layer] = grad.T @ cache.inputs[layer]
            grads[2 * layer + 1] = grad.sum(axis=0)
            grad = grad @ self.weights[layer]
        return grads, grad

    def describe(self) -> dict[str, Any]:
        return {"sizes": self.sizes, "hidden": "leaky_relu", "output": self.output}


class MomentumSgd:
    """v <- mu v + g; p <- p - lr v, for a fixed list of parameter arrays."""

    def __init__(self, params: Sequence[np.ndarray], learning_rate: float, momentum: float = 0.9) -> None:
        if learning_rate < 0:
            raise ValidationError(f"Learning rate must be non-negative, got {learning_rate}.")
        if not 0.0 <= momentum < 1.0:
            raise ValidationError(f"Momentum must lie in [0, 1), got {momentum}.")
        self.params = list(params)
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p in self.params]

    def step(self, grads: Sequence[np.ndarray], learning_rate: float | None = None) -> None:
        lr = self.learning_rate if learning_rate is None else learning_rate
        if len(grads) != len(self.params):
            raise ValidationError(f"Got {len(grads)} gradients for {len(self.params)} parameters.")
        for param, velocity, grad in zip(self.params, self.velocity, grads):
            velocity *= self.momentum
            velocity += grad
            param -= lr * velocity


def scheduled_rate(base: float, schedule: str, epoch: int, epochs: int) -> float:
    """Learning rate for a 0-based epoch under ``constant`` or ``cosine`` annealing."""
    if schedule == "constant":
        return base
    if schedule == "cosine":
        if epochs <= 1:
            return base
        return base * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))
    raise ValidationError(f"Unknown learning-rate schedule {schedule!r}.")


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(
    directory: Path | str,
    kind: str,
    networks: dict[str, Mlp],
    metadata: dict[str, Any] | None = None,
    force: bool = False,
) -> Path:
    """Write header.json plus one f64 DQTF file per weight and bias."""
    directory = Path(directory)
    header_path = directory / HEADER_NAME
    if header_path.exists() and not force:
        raise CheckpointError(f"{directory} already holds a checkpoint; pass force to overwrite.")
    directory.mkdir(parents=True, exist_ok=True)
    header: dict[str, Any] = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "kind": kind,
        "networks": {},
        "metadata": metadata or {},
    }
    for name, net in networks.items():
        files = []
        for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
            w_name, b_name = f"{name}_{layer}_W.dqtf", f"{name}_{layer}_b.dqtf"
            write_tensor(w, directory / w_name, dtype=DTYPE_F64)
            write_tensor(b, directory / b_name, dtype=DTYPE_F64)
            files.append({"weight": w_name, "bias": b_name})
        header["networks"][name] = {**net.describe(), "files": files}
    header_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("Saved %s checkpoint to %s", kind, directory)
    return directory


def load_checkpoint(directory: Path | str, kind: str) -> tuple[dict[str, Mlp], dict[str, Any]]:
    directory = Path(directory)
    header_path = directory / HEADER_NAME
    if not header_path.exists():
        raise CheckpointError(f"{directory} is not a checkpoint (missing {HEADER_NAME}).")
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{header_path} is not valid JSON: {exc}") from exc
    if header.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise CheckpointError(
            f"{directory} has schema version {header.get('schema_version')}, "
            f"expected {CHECKPOINT_SCHEMA_VERSION}."
        )
    if header.get("kind") != kind:
        raise CheckpointError(f"{directory} holds a {header.get('kind')!r} checkpoint, expected {kind!r}.")
    networks: dict[str, Mlp] = {}
    for name, spec in header.get("networks", {}).items():
        try:
            weights = [read_tensor(directory / f["weight"]) for f in spec["files"]]
            biases = [read_tensor(directory / f["bias"]) for f in spec["files"]]
        except (KeyError, TypeError) as exc:
            raise CheckpointError(f"{header_path}: malformed entry for network {name!r}.") from exc
        except TensorFormatError as exc:
            raise CheckpointError(f"{directory}: {exc}") from exc
        networks[name] = Mlp(spec["sizes"], weights, biases, spec.get("output", "sigmoid"))
    return networks, header.get("metadata", {})
