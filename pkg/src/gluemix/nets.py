"""Deterministic MLP engine over flat parameter vectors.

All state lives in a single 1-D float64 array per network. The layout is
fixed: for each layer, the weight matrix (fan_in x fan_out, row-major)
followed by its bias vector. There is no dropout and no batch statistics,
so two forward passes with identical inputs are bit-identical.

Backpropagation exists only for the full-gradient baseline and for
validating the variance analysis; the forward-only optimizer never calls
it.
"""

from __future__ import annotations

import numpy as np

from .counters import OpCounters
from .errors import ConfigError, LabelError, NumericError, ShapeError

ACTIVATIONS = ("relu", "tanh")
OUTPUT_KINDS = ("logits", "scalar")
LOSS_KINDS = ("cross_entropy", "squared_error")


class ArchSpec:
    """Fully-connected architecture description.

    Parameters
    ----------
    layer_sizes : sequence of int
        Input dimension, hidden widths, and output dimension, in order.
        Needs at least one weight layer (two entries).
    activation : {'relu', 'tanh'}
        Hidden-layer nonlinearity. The output layer is always affine.
    output : {'logits', 'scalar'}
        'logits' marks the outputs as unnormalized class scores,
        'scalar' as raw regression outputs.
    """

    def __init__(self, layer_sizes, activation: str = "relu", output: str = "logits"):
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2:
            raise ConfigError("layer_sizes needs an input and an output dimension")
        if any(s < 1 for s in sizes):
            raise ConfigError(f"layer sizes must be positive, got {sizes}")
        if activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
        if output not in OUTPUT_KINDS:
            raise ConfigError(f"output must be one of {OUTPUT_KINDS}, got {output!r}")
        self.layer_sizes = sizes
        self.activation = activation
        self.output = output
        # Precompute per-layer slice offsets into the flat vector.
        self._layout = []
        offset = 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w_slice = slice(offset, offset + fan_in * fan_out)
            b_slice = slice(w_slice.stop, w_slice.stop + fan_out)
            self._layout.append((w_slice, b_slice, fan_in, fan_out))
            offset = b_slice.stop
        self.param_count = offset

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self._layout)

    def unpack(self, params: np.ndarray):
        """Views of a flat vector as per-layer (W, b) pairs. No copies."""
        out = []
        for w_slice, b_slice, fan_in, fan_out in self._layout:
            out.append((params[w_slice].reshape(fan_in, fan_out), params[b_slice]))
        return out

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "output": self.output,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        try:
            return cls(d["layer_sizes"], d.get("activation", "relu"), d.get("output", "logits"))
        except KeyError as exc:
            raise ConfigError(f"architecture dict missing key {exc}") from exc

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ArchSpec)
            and self.layer_sizes == other.layer_sizes
            and self.activation == other.activation
            and self.output == other.output
        )

    def __hash__(self):
        return hash((self.layer_sizes, self.activation, self.output))

    def __repr__(self):
        return (
            f"ArchSpec({list(self.layer_sizes)}, activation={self.activation!r}, "
            f"output={self.output!r})"
        )


class Batch:
    """A minibatch (or whole split): inputs plus labels/targets.

    Labels are integer class indices for classification and real targets
    (shape ``(b,)`` or ``(b, C)``) for regression.
    """

    def __init__(self, inputs, labels):
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim != 2:
            raise ShapeError(f"inputs must be 2-D (b, d_in), got shape {x.shape}")
        if x.shape[0] < 1:
            raise ShapeError("batch size must be at least 1")
        y = np.asarray(labels)
        if y.shape[0] != x.shape[0]:
            raise ShapeError(f"{y.shape[0]} labels for {x.shape[0]} inputs")
        if np.issubdtype(y.dtype, np.integer):
            y = y.astype(np.int64)
        else:
            y = y.astype(np.float64)
        self.inputs = x
        self.labels = y

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.labels[idx])

    @property
    def is_classification(self) -> bool:
        return np.issubdtype(self.labels.dtype, np.integer)


def check_params(arch: ArchSpec, params) -> np.ndarray:
    """Validate a flat parameter vector against its architecture."""
    p = np.asarray(params, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] != arch.param_count:
        raise ShapeError(
            f"parameter vector has shape {p.shape}, arch requires ({arch.param_count},)"
        )
    if not np.all(np.isfinite(p)):
        raise NumericError("parameter vector contains non-finite entries")
    return p


def check_loss_kind(arch: ArchSpec, kind: str) -> None:
    if kind not in LOSS_KINDS:
        raise ConfigError(f"loss kind must be one of {LOSS_KINDS}, got {kind!r}")
    if kind == "cross_entropy" and arch.output != "logits":
        raise ConfigError("cross_entropy requires a logits output head")
    if kind == "squared_error" and arch.output != "scalar":
        raise ConfigError("squared_error requires a scalar output head")


def init_params(arch: ArchSpec, rng: np.random.Generator) -> np.ndarray:
    """He init for relu, Xavier for tanh; zero biases."""
    params = np.zeros(arch.param_count)
    for (w_slice, _, fan_in, _) in arch._layout:
        if arch.activation == "relu":
            std = np.sqrt(2.0 / fan_in)
        else:
            std = np.sqrt(1.0 / fan_in)
        params[w_slice] = rng.normal(0.0, std, w_slice.stop - w_slice.start)
    return params


def _check_batch(arch: ArchSpec, batch: Batch) -> None:
    if batch.inputs.shape[1] != arch.in_dim:
        raise ShapeError(
            f"batch has d_in={batch.inputs.shape[1]}, arch expects {arch.in_dim}"
        )


def forward(arch: ArchSpec, params, batch: Batch, counters: OpCounters | None = None) -> np.ndarray:
    """Evaluate the network, returning the (b, C) output matrix.

    Deterministic: identical inputs give bit-identical outputs. Adds one
    to the owning context's forward counter.
    """
    p = check_params(arch, params)
    _check_batch(arch, batch)
    h = batch.inputs
    layers = arch.unpack(p)
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        if i < len(layers) - 1:
            h = np.maximum(z, 0.0) if arch.activation == "relu" else np.tanh(z)
        else:
            h = z
    if counters is not None:
        counters.forwards += 1
    return h


def _check_class_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    if not np.issubdtype(labels.dtype, np.integer):
        raise LabelError("cross_entropy needs integer class labels")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise LabelError(
            f"labels must lie in [0, {n_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels


def _regression_targets(labels: np.ndarray, shape) -> np.ndarray:
    t = np.asarray(labels, dtype=np.float64)
    if t.ndim == 1:
        t = t[:, None]
    if t.shape != shape:
        raise ShapeError(f"targets have shape {t.shape}, predictions {shape}")
    return t


def loss_eval(predictions: np.ndarray, batch: Batch, kind: str = "cross_entropy") -> float:
    """Mean per-example loss over the batch."""
    if kind not in LOSS_KINDS:
        raise ConfigError(f"loss kind must be one of {LOSS_KINDS}, got {kind!r}")
    z = np.asarray(predictions, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] != len(batch):
        raise ShapeError(f"predictions shape {z.shape} does not match batch size {len(batch)}")
    if kind == "cross_entropy":
        y = _check_class_labels(batch.labels, z.shape[1])
        # max-subtraction keeps exp() in range for any finite logits
        zmax = z.max(axis=1, keepdims=True)
        lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
        return float(np.mean(lse - z[np.arange(len(batch)), y]))
    t = _regression_targets(batch.labels, z.shape)
    return float(np.mean(np.sum((z - t) ** 2, axis=1)))


def _output_grad(z: np.ndarray, batch: Batch, kind: str) -> np.ndarray:
    """d(mean loss)/d(predictions), shape (b, C)."""
    b = len(batch)
    if kind == "cross_entropy":
        y = _check_class_labels(batch.labels, z.shape[1])
        zmax = z.max(axis=1, keepdims=True)
        ez = np.exp(z - zmax)
        probs = ez / ez.sum(axis=1, keepdims=True)
        probs[np.arange(b), y] -= 1.0
        return probs / b
    t = _regression_targets(batch.labels, z.shape)
    return 2.0 * (z - t) / b


def _loss_and_grad(
    arch: ArchSpec,
    params,
    batch: Batch,
    kind: str = "cross_entropy",
    counters: OpCounters | None = None,
) -> tuple[float, np.ndarray]:
    """One forward plus one reverse sweep; returns (loss, flat gradient)."""
    p = check_params(arch, params)
    _check_batch(arch, batch)
    layers = arch.unpack(p)
    acts = [batch.inputs]  # inputs to each layer
    zs = []
    h = batch.inputs
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        zs.append(z)
        if i < len(layers) - 1:
            h = np.maximum(z, 0.0) if arch.activation == "relu" else np.tanh(z)
            acts.append(h)
        else:
            h = z
    loss = loss_eval(h, batch, kind)

    grad = np.zeros_like(p)
    grad_layers = arch.unpack(grad)
    delta = _output_grad(zs[-1], batch, kind)
    for i in range(len(layers) - 1, -1, -1):
        gw, gb = grad_layers[i]
        gw[...] = acts[i].T @ delta
        gb[...] = delta.sum(axis=0)
        if i > 0:
            w, _ = layers[i]
            dh = delta @ w.T
            if arch.activation == "relu":
                delta = dh * (zs[i - 1] > 0.0)
            else:
                delta = dh * (1.0 - np.tanh(zs[i - 1]) ** 2)
    if counters is not None:
        counters.forwards += 1
        counters.backwards += 1
    return loss, grad


def grad_params(
    arch: ArchSpec,
    params,
    batch: Batch,
    kind: str = "cross_entropy",
    counters: OpCounters | None = None,
) -> np.ndarray:
    """Exact reverse-mode gradient of ``loss_eval(forward(...))`` w.r.t. params.

    Adds one forward and one backward to the counters.
    """
    _, grad = _loss_and_grad(arch, params, batch, kind, counters)
    return grad
