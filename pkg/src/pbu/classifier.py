"""MLP softmax classifier on a flat parameter vector.

Parameters are stored layer-major; within a layer the ``fan_in x fan_out``
weight matrix (row-major) precedes the bias.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .errors import (
    ContractError,
    IntegrityError,
    ParseError,
    ShapeError,
    TrainingError,
    UnsupportedVersionError,
)
from .rng import Rng

CKPT_MAGIC = "PBUCKPT"
CKPT_VERSION = "v1"


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_dims: tuple = ()
    num_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ContractError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_classes < 2:
            raise ContractError(f"num_classes must be >= 2, got {self.num_classes}")
        if any(h < 1 for h in self.hidden_dims):
            raise ContractError(f"hidden widths must be >= 1, got {self.hidden_dims}")

    @property
    def widths(self):
        return (self.input_dim, *self.hidden_dims, self.num_classes)

    @property
    def layout(self):
        """List of ``((w_offset, w_shape), (b_offset, b_shape))`` per layer."""
        out, offset = [], 0
        w = self.widths
        for fan_in, fan_out in zip(w[:-1], w[1:]):
            wblock = (offset, (fan_in, fan_out))
            offset += fan_in * fan_out
            bblock = (offset, (fan_out,))
            offset += fan_out
            out.append((wblock, bblock))
        return out

    @property
    def num_params(self):
        w = self.widths
        return sum((a + 1) * b for a, b in zip(w[:-1], w[1:]))

    def bias_mask(self):
        mask = np.zeros(self.num_params, dtype=bool)
        for _, (off, (n,)) in self.layout:
            mask[off:off + n] = True
        return mask


class LabeledExample(NamedTuple):
    x: np.ndarray
    y: int


@dataclass
class Dataset:
    """Feature matrix ``X`` (n x d) with integer labels ``y``."""

    X: np.ndarray
    y: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if self.X.shape[0] != self.y.shape[0]:
            raise ShapeError(f"{self.X.shape[0]} feature rows but {self.y.shape[0]} labels")
        if self.X.size and not np.all(np.isfinite(self.X)):
            raise ContractError("features must be finite")
        if np.any(self.y < 0):
            raise ContractError("labels must be non-negative")

    def __len__(self):
        return self.y.shape[0]

    def __iter__(self):
        for x, y in zip(self.X, self.y):
            yield LabeledExample(x, int(y))

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def class_index(self):
        return {int(c): np.flatnonzero(self.y == c) for c in np.unique(self.y)}

    def subset(self, idx, name=None):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], name or self.name)

    def split_by_class(self, s):
        """Return ``(S_n, S_p)``: examples with label ``s`` and all others."""
        mask = self.y == s
        return (
            Dataset(self.X[mask], self.y[mask], f"{self.name}[y={s}]"),
            Dataset(self.X[~mask], self.y[~mask], f"{self.name}[y!={s}]"),
        )

    def concat(self, other, name=None):
        return Dataset(
            np.vstack([self.X, other.X]),
            np.concatenate([self.y, other.y]),
            name or self.name,
        )


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 200
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ContractError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")


@dataclass
class Checkpoint:
    spec: ModelSpec
    theta: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.spec.num_params,):
            raise IntegrityError(
                f"theta has {self.theta.size} values, spec needs {self.spec.num_params}"
            )

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.theta.tobytes() == other.theta.tobytes()
            and self.meta == other.meta
        )


class Adam:
    """Adam moment state over a flat parameter vector."""

    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def init_params(spec, seed):
    """He-normal weights, zero biases."""
    rng = Rng(seed)
    theta = np.zeros(spec.num_params)
    for (woff, (fan_in, fan_out)), _ in spec.layout:
        n = fan_in * fan_out
        theta[woff:woff + n] = rng.normal(n, std=np.sqrt(2.0 / fan_in))
    return theta


def _check_input(spec, X):
    if X.data.ndim != 2 or X.data.shape[1] != spec.input_dim:
        raise ShapeError(f"expected inputs with {spec.input_dim} features, got {X.shape}")


def forward_tensor(spec, theta, X):
    """Batched log-probabilities (n x C) as a Tensor; differentiable in ``theta``."""
    X = ad._as_tensor(np.atleast_2d(X) if not isinstance(X, ad.Tensor) else X)
    _check_input(spec, X)
    theta = ad._as_tensor(theta)
    if theta.data.shape != (spec.num_params,):
        raise ShapeError(f"theta shape {theta.shape} does not match m={spec.num_params}")
    h = X
    layers = spec.layout
    for i, ((woff, wshape), (boff, bshape)) in enumerate(layers):
        W = ad.take_block(theta, woff, wshape)
        b = ad.take_block(theta, boff, bshape)
        h = ad.add(ad.matmul(h, W), b)
        if i < len(layers) - 1:
            h = ad.relu(h)
    return ad.log_softmax(h)


def forward(spec, theta, x):
    """Log-probability vector for one example, or an (n x C) matrix for a batch."""
    x = np.asarray(x, dtype=np.float64)
    out = forward_tensor(spec, theta, np.atleast_2d(x)).data
    return out[0] if x.ndim == 1 else out


def _one_hot(y, C):
    out = np.zeros((y.shape[0], C))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def _check_labels(spec, data):
    if len(data) and data.y.max() >= spec.num_classes:
        raise ContractError(f"label {data.y.max()} out of range for {spec.num_classes} classes")


def log_likelihood_tensor(spec, theta, data):
    """Sum of ``log P(y_i | x_i, theta)`` as a scalar Tensor."""
    if len(data) == 0:
        raise ContractError("log-likelihood of an empty dataset is undefined")
    _check_labels(spec, data)
    logp = forward_tensor(spec, theta, data.X)
    return ad.reduce_sum(ad.mul(logp, _one_hot(data.y, spec.num_classes)))


def log_likelihood(spec, theta, data):
    return log_likelihood_tensor(spec, theta, data).item()


def predict(spec, theta, X):
    # np.argmax returns the first maximum, i.e. ties go to the lowest index
    return np.argmax(forward(spec, theta, np.atleast_2d(X)), axis=1)


def accuracy(spec, theta, data):
    if len(data) == 0:
        raise ContractError("accuracy of an empty dataset is undefined")
    return float(np.mean(predict(spec, theta, data.X) == data.y))


def train(spec, data, cfg, theta0=None):
    """Minimise mean cross-entropy over shuffled mini-batches.

    Starts from He initialisation unless ``theta0`` is given (fine-tuning).
    """
    if len(data) == 0:
        raise ContractError("cannot train on an empty dataset")
    _check_labels(spec, data)
    theta = init_params(spec, cfg.seed) if theta0 is None else np.array(theta0, dtype=np.float64)
    rng = Rng(cfg.seed ^ 0x5DEECE66D)
    n = len(data)
    opt = Adam(theta.size, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    onehot = _one_hot(data.y, spec.num_classes)
    final_loss = float("nan")
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            Xb, Yb = data.X[idx], onehot[idx]
            scale = -1.0 / len(idx)

            def loss_fn(t, Xb=Xb, Yb=Yb, scale=scale):
                logp = forward_tensor(spec, t, Xb)
                return ad.scale(ad.reduce_sum(ad.mul(logp, Yb)), scale)

            loss, grad = ad.value_and_grad(loss_fn, theta)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingError("non-finite training loss", epoch, b)
            if cfg.optimizer == "adam":
                theta = opt.step(theta, grad)
            else:
                theta = theta - cfg.learning_rate * grad
            total += loss * len(idx)
        final_loss = total / n
    return Checkpoint(
        spec, theta, {"seed": int(cfg.seed), "epochs": int(cfg.epochs), "final_loss": final_loss}
    )


# --------------------------------------------------------------------------
# text persistence
# --------------------------------------------------------------------------

def format_float(v):
    return format(float(v), ".17g")


def _spec_line(spec):
    hidden = ",".join(str(h) for h in spec.hidden_dims)
    return f"d={spec.input_dim} hidden={hidden} classes={spec.num_classes}"


def _parse_spec_line(line, lineno):
    try:
        fields = dict(tok.split("=", 1) for tok in line.split())
        hidden = tuple(int(h) for h in fields["hidden"].split(",") if h)
        return ModelSpec(int(fields["d"]), hidden, int(fields["classes"]))
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ContractError):
            raise ParseError(str(exc), lineno) from None
        raise ParseError(f"malformed spec line {line!r}", lineno) from None


def save_checkpoint(ckpt, path):
    """Write the ``PBUCKPT v1`` text format.

    An optional trailing ``meta`` line records seed, epochs and final loss.
    """
    lines = [
        f"{CKPT_MAGIC} {CKPT_VERSION}",
        _spec_line(ckpt.spec),
        f"m={ckpt.theta.size}",
    ]
    lines.extend(format_float(v) for v in ckpt.theta)
    if ckpt.meta:
        lines.append("meta " + " ".join(f"{k}={_meta_str(v)}" for k, v in sorted(ckpt.meta.items())))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _meta_str(v):
    return format_float(v) if isinstance(v, float) else str(v)


def _meta_val(s):
    try:
        return int(s)
    except ValueError:
        return float(s)


def read_header(lines, magic):
    """Validate a ``<MAGIC> v1`` first line."""
    if not lines:
        raise ParseError("empty file", 1)
    parts = lines[0].split()
    if len(parts) != 2 or parts[0] != magic:
        raise ParseError(f"expected header '{magic} v1'", 1)
    if parts[1] != CKPT_VERSION:
        raise UnsupportedVersionError(f"unsupported version {parts[1]!r}", 1)


def parse_floats(lines, start, count):
    """Parse ``count`` float lines beginning at 0-based index ``start``."""
    if len(lines) < start + count:
        raise ParseError(
            f"truncated: expected {count} values, found {max(0, len(lines) - start)}",
            len(lines) + 1,
        )
    out = np.empty(count)
    for i in range(count):
        try:
            out[i] = float(lines[start + i])
        except ValueError:
            raise ParseError(f"not a number: {lines[start + i]!r}", start + i + 1) from None
    return out


def load_checkpoint(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    read_header(lines, CKPT_MAGIC)
    if len(lines) < 3:
        raise ParseError("truncated header", len(lines) + 1)
    spec = _parse_spec_line(lines[1], 2)
    if not lines[2].startswith("m="):
        raise ParseError("expected 'm=<int>'", 3)
    try:
        m = int(lines[2][2:])
    except ValueError:
        raise ParseError("expected 'm=<int>'", 3) from None
    if m != spec.num_params:
        raise IntegrityError(f"m={m} but spec implies {spec.num_params} parameters")
    theta = parse_floats(lines, 3, m)
    meta = {}
    rest = [ln for ln in lines[3 + m:] if ln.strip()]
    if rest:
        if len(rest) > 1 or not rest[0].startswith("meta"):
            raise ParseError("unexpected trailing content", 4 + m)
        try:
            meta = {k: _meta_val(v) for k, v in (t.split("=", 1) for t in rest[0].split()[1:])}
        except ValueError:
            raise ParseError("malformed meta line", 4 + m) from None
    return Checkpoint(spec, theta, meta)
