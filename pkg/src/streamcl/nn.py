"""Dense multilayer perceptrons in numpy: forward/backward passes, MSE, Adam
and a mini-batch trainer.

All parameters of a network live in one flat float64 vector. Per-layer weight
matrices and bias vectors are views into it, so the flattening order is fixed
by the layer list and gradient, Fisher and Adam vectors all share one index
space: layer 0 weights (row-major, ``input_dim x output_dim``), layer 0 bias,
layer 1 weights, and so on.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InputShapeError, NumericOverflowError

# callable(params) -> (value, gradient)
PenaltyHook = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


class Activation(str, enum.Enum):
    LEAKY_RELU = "leaky_relu"
    TANH = "tanh"
    IDENTITY = "identity"


class Mode(str, enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: Activation = Activation.LEAKY_RELU
    slope: float = 0.05
    dropout_rate: float = 0.0
    bias: bool = True

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("layer dimensions must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def n_params(self) -> int:
        return self.input_dim * self.output_dim + (self.output_dim if self.bias else 0)


def dense_stack(dims: Sequence[int], activations, slope: float = 0.05,
                dropout_rate: float = 0.0) -> list[LayerSpec]:
    """Layer specs for a chain ``dims[0] -> dims[1] -> ... -> dims[-1]``.

    ``activations`` is either one activation for every layer or a sequence with
    one entry per layer. ``dropout_rate`` is stored on every layer but only
    applied to hidden outputs (see :func:`forward`).
    """
    n = len(dims) - 1
    if n < 1:
        raise ValueError("need at least two dims")
    if isinstance(activations, (str, Activation)):
        activations = [activations] * n
    if len(activations) != n:
        raise ValueError("one activation per layer expected")
    return [LayerSpec(dims[i], dims[i + 1], Activation(activations[i]), slope, dropout_rate)
            for i in range(n)]


class MLP:
    """Parameters and layer layout of a dense network."""

    def __init__(self, layers: Sequence[LayerSpec], params: Optional[np.ndarray] = None):
        layers = tuple(layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.output_dim != b.input_dim:
                raise ValueError(f"layer dims do not chain: {a.output_dim} -> {b.input_dim}")
        self.layers = layers
        self._slices = []
        offset = 0
        for spec in layers:
            w = slice(offset, offset + spec.input_dim * spec.output_dim)
            offset = w.stop
            b = None
            if spec.bias:
                b = slice(offset, offset + spec.output_dim)
                offset = b.stop
            self._slices.append((w, b))
        self.n_params = offset
        self.params = np.zeros(offset)
        if params is not None:
            self.set_params(params)
        self._bind_views()

    def _bind_views(self):
        self.weights = [self.params[w].reshape(s.input_dim, s.output_dim)
                        for (w, _), s in zip(self._slices, self.layers)]
        self.biases = [None if b is None else self.params[b] for (_, b) in self._slices]

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].output_dim

    def param_slices(self, index: int):
        """(weight slice, bias slice or None) of layer ``index`` in the flat vector."""
        return self._slices[index]

    def set_params(self, params: np.ndarray) -> None:
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise InputShapeError(f"expected {self.n_params} parameters, got {params.shape}")
        self.params[:] = params

    def init_params(self, rng: np.random.Generator) -> "MLP":
        """Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)) weights, zero biases."""
        for w, spec in zip(self.weights, self.layers):
            limit = np.sqrt(6.0 / spec.input_dim)
            w[...] = rng.uniform(-limit, limit, size=w.shape)
        for b in self.biases:
            if b is not None:
                b[...] = 0.0
        return self

    def with_dropout(self, rate: float) -> "MLP":
        """Copy of this network whose layers carry ``rate`` as dropout rate."""
        layers = [LayerSpec(s.input_dim, s.output_dim, s.activation, s.slope, rate, s.bias)
                  for s in self.layers]
        return MLP(layers, self.params)

    def copy(self) -> "MLP":
        return MLP(self.layers, self.params.copy())

    def __deepcopy__(self, memo):
        return self.copy()

    def __getstate__(self):
        return {"layers": self.layers, "params": self.params}

    def __setstate__(self, state):
        self.__init__(state["layers"], state["params"])

    def __repr__(self):
        dims = [self.layers[0].input_dim] + [s.output_dim for s in self.layers]
        return f"MLP({'-'.join(map(str, dims))}, n_params={self.n_params})"


def _activate(spec: LayerSpec, z: np.ndarray):
    """Return ``(activation, derivative or None)``; identity has no derivative."""
    if spec.activation is Activation.LEAKY_RELU:
        d = np.where(z > 0, 1.0, spec.slope)
        return z * d, d
    if spec.activation is Activation.TANH:
        h = np.tanh(z)
        return h, 1.0 - h * h
    return z, None


@dataclass
class _Trace:
    inputs: list = field(default_factory=list)    # input of each layer (after dropout)
    dact: list = field(default_factory=list)      # activation derivatives at z
    masks: list = field(default_factory=list)     # scaled dropout mask or None
    output: Optional[np.ndarray] = None


def _as_batch(net: MLP, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise InputShapeError(f"expected input of width {net.input_dim}, got shape {x.shape}")
    return x, single


def _run(net: MLP, x: np.ndarray, train: bool, rng, upto: Optional[int] = None,
         keep: bool = False) -> _Trace:
    trace = _Trace()
    a = x
    n_layers = len(net.layers) if upto is None else upto
    for i in range(n_layers):
        spec = net.layers[i]
        if keep:
            trace.inputs.append(a)
        z = a @ net.weights[i]
        if net.biases[i] is not None:
            z += net.biases[i]
        h, d = _activate(spec, z)
        mask = None
        # dropout on hidden outputs only; the network output is never masked
        if train and spec.dropout_rate > 0.0 and i < len(net.layers) - 1:
            keep_p = 1.0 - spec.dropout_rate
            mask = (rng.random(h.shape) < keep_p) / keep_p
            a = h * mask
        else:
            a = h
        if keep:
            trace.dact.append(d)
            trace.masks.append(mask)
    trace.output = a
    return trace


def forward(net: MLP, x, mode: Mode = Mode.EVAL, rng: Optional[np.random.Generator] = None,
            upto: Optional[int] = None) -> np.ndarray:
    """Network output for one sample (1-D) or a batch (2-D, one row per sample).

    In ``Mode.TRAIN`` every hidden unit is zeroed with its layer's dropout
    probability and survivors are scaled by ``1 / (1 - rate)``. ``upto`` stops
    after that many layers, which is how an autoencoder's encoder half is run.
    """
    x, single = _as_batch(net, x)
    train = Mode(mode) is Mode.TRAIN
    if train and rng is None:
        rng = np.random.default_rng()
    out = _run(net, x, train, rng, upto).output
    return out[0] if single else out


def mse(predictions, targets) -> float:
    """Mean over samples of the squared Euclidean error."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    if p.size == 0 or p.shape[0] == 0:
        raise ValueError("mse of an empty sequence")
    if p.ndim == 1:
        p = p[:, None]
        t = t[:, None]
    d = p - t
    return float(np.sum(d * d) / p.shape[0])


def _backprop(net: MLP, trace: _Trace, d_out: np.ndarray):
    """Yield ``(layer_index, layer_input, dL/dz)`` from the last layer to the first."""
    delta = d_out
    for i in range(len(net.layers) - 1, -1, -1):
        if trace.masks[i] is not None:
            delta = delta * trace.masks[i]
        if trace.dact[i] is not None:
            delta = delta * trace.dact[i]
        yield i, trace.inputs[i], delta
        if i:
            delta = delta @ net.weights[i].T


def backward(net: MLP, x, y=None, penalty: Optional[PenaltyHook] = None,
             mode: Mode = Mode.TRAIN, rng: Optional[np.random.Generator] = None,
             batch_index: Optional[int] = None) -> tuple[np.ndarray, float]:
    """Gradient of ``mse(net(x), y) + penalty(params)`` w.r.t. the flat parameters.

    ``y=None`` selects the reconstruction loss (targets are the inputs).
    Returns ``(gradient, loss)`` where ``loss`` includes the penalty value.
    """
    x, _ = _as_batch(net, x)
    target = x if y is None else np.asarray(y, dtype=np.float64).reshape(x.shape[0], -1)
    if target.shape[1] != net.output_dim:
        raise InputShapeError(f"target width {target.shape[1]} != output width {net.output_dim}")
    train = Mode(mode) is Mode.TRAIN
    if train and rng is None:
        rng = np.random.default_rng()
    trace = _run(net, x, train, rng, keep=True)
    n = x.shape[0]
    diff = trace.output - target
    loss = float(np.sum(diff * diff) / n)
    grad = np.empty(net.n_params)
    for i, a_in, delta in _backprop(net, trace, (2.0 / n) * diff):
        w_sl, b_sl = net.param_slices(i)
        grad[w_sl] = (a_in.T @ delta).ravel()
        if b_sl is not None:
            grad[b_sl] = delta.sum(axis=0)
    if penalty is not None:
        value, pgrad = penalty(net.params)
        loss += value
        grad += pgrad
    if not np.isfinite(loss):
        raise NumericOverflowError(f"non-finite loss {loss}", batch_index=batch_index)
    return grad, loss


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, **kw)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray):
    """One bias-corrected Adam update. ``params`` and ``state`` are updated in place."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError("params, grads and optimizer moments must have equal length")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * grads * grads
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    early_stopping_patience: Optional[int] = None
    dropout_enabled: bool = True
    shuffle_seed: int = 0
    lr: float = 1e-3

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.early_stopping_patience is not None and self.early_stopping_patience < 1:
            raise ValueError("early_stopping_patience must be positive")


@dataclass
class TrainResult:
    net: MLP
    history: list
    best_epoch: int
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.history)


def train(net: MLP, x, y=None, config: TrainConfig = None,
          penalty: Optional[PenaltyHook] = None) -> TrainResult:
    """Shuffled mini-batch Adam on ``net`` (modified in place).

    The epoch loss is the sample-weighted mean of the batch objectives. With
    early stopping, training ends once the epoch loss has not strictly
    decreased for ``patience`` epochs and the lowest-loss parameters are
    restored.
    """
    if config is None:
        raise ValueError("a TrainConfig is required")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("training data must be a non-empty 2-D array")
    if y is not None:
        y = np.asarray(y, dtype=np.float64).reshape(x.shape[0], -1)
    n = x.shape[0]
    rng = np.random.default_rng(config.shuffle_seed)
    mode = Mode.TRAIN if config.dropout_enabled else Mode.EVAL
    opt = AdamState.fresh(net.n_params, lr=config.lr)
    patience = config.early_stopping_patience
    history = []
    best_loss, best_epoch, best_params = np.inf, 0, None
    stale = 0
    stopped = False
    batch_counter = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            grad, loss = backward(net, x[idx], None if y is None else y[idx], penalty,
                                  mode=mode, rng=rng, batch_index=batch_counter)
            batch_counter += 1
            adam_step(opt, net.params, grad)
            total += loss * len(idx)
        epoch_loss = total / n
        history.append(epoch_loss)
        if patience is None:
            continue
        if epoch_loss < best_loss:
            best_loss, best_epoch, best_params = epoch_loss, epoch, net.params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                stopped = True
                break
    if patience is not None and best_params is not None:
        net.set_params(best_params)
    else:
        best_epoch = int(np.argmin(history))
    return TrainResult(net, history, best_epoch, stopped)
