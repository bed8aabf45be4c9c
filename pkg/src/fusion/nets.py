"""Small dense networks with hand-written backpropagation.

Every network keeps its parameters in one flat float64 vector (``.params``); the
per-layer weight matrices are views into it, so an in-place update such as
``net.params -= lr * grad`` is all an optimizer needs. Networks can be re-bound
onto a slice of a larger buffer (see :class:`JointModel`).

Inputs are batches of shape ``(n, d)``; a 1-D input is treated as a single row
and the output is squeezed back.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import BackwardBeforeForwardError, DimensionError, InvalidTreatmentError

ACTIVATIONS = ("tanh", "relu", "identity")


@dataclass(frozen=True)
class Layer:
    fan_in: int
    fan_out: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.fan_in < 1 or self.fan_out < 1:
            raise ValueError("layer sizes must be positive")

    @property
    def n_params(self) -> int:
        return self.fan_in * self.fan_out + self.fan_out


Layout = tuple  # tuple[Layer, ...]


def make_layout(sizes: Sequence[int], activation: str = "tanh",
                final_activation: str = "identity") -> Layout:
    """Layout for a chain ``sizes[0] -> sizes[1] -> ... -> sizes[-1]``."""
    sizes = list(sizes)
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output size")
    layers = []
    for i in range(len(sizes) - 1):
        act = final_activation if i == len(sizes) - 2 else activation
        layers.append(Layer(sizes[i], sizes[i + 1], act))
    return tuple(layers)


def n_params(layout: Layout) -> int:
    return sum(layer.n_params for layer in layout)


@dataclass
class ParamVector:
    """Flat parameter values together with the layer layout they belong to."""

    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size != n_params(self.layout):
            raise DimensionError(
                f"expected {n_params(self.layout)} parameters, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameters must be finite")


def init_params(layout: Layout, scheme: str = "scaled-uniform", seed: int = 0) -> np.ndarray:
    """Initial flat parameter vector.

    ``scaled-uniform`` draws every weight from U(-a, a) with
    a = sqrt(6 / (fan_in + fan_out)); biases start at zero.
    """
    out = np.zeros(n_params(layout))
    if scheme == "zeros":
        return out
    if scheme != "scaled-uniform":
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    pos = 0
    for layer in layout:
        bound = np.sqrt(6.0 / (layer.fan_in + layer.fan_out))
        nw = layer.fan_in * layer.fan_out
        out[pos:pos + nw] = rng.uniform(-bound, bound, size=nw)
        pos += layer.n_params
    return out


def _activate(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(pre)
    if name == "relu":
        return np.maximum(pre, 0.0)
    return pre


def _activation_grad(name: str, pre: np.ndarray, post: np.ndarray) -> np.ndarray | None:
    if name == "tanh":
        return 1.0 - post * post
    if name == "relu":
        return (pre > 0.0).astype(np.float64)
    return None  # identity


def _as_batch(x, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise DimensionError(f"expected input with {dim} columns, got shape {x.shape}")
    return x, single


class MLP:
    """Feed-forward chain of dense layers."""

    def __init__(self, layout: Layout, params: np.ndarray | None = None, *,
                 seed: int = 0, scheme: str = "scaled-uniform"):
        self.layout = tuple(layout)
        if params is None:
            params = init_params(self.layout, scheme, seed)
        self.params = ParamVector(np.array(params, dtype=np.float64), self.layout).values
        self._make_views()
        self._cache = None

    @property
    def input_dim(self) -> int:
        return self.layout[0].fan_in

    @property
    def output_dim(self) -> int:
        return self.layout[-1].fan_out

    @property
    def n_params(self) -> int:
        return self.params.size

    def bind(self, buffer: np.ndarray) -> None:
        """Move parameters into ``buffer`` (a 1-D view) and alias them there."""
        buffer[:] = self.params
        self.params = buffer
        self._make_views()

    def _make_views(self) -> None:
        self._W, self._b = [], []
        pos = 0
        for layer in self.layout:
            nw = layer.fan_in * layer.fan_out
            self._W.append(self.params[pos:pos + nw].reshape(layer.fan_in, layer.fan_out))
            self._b.append(self.params[pos + nw:pos + layer.n_params])
            pos += layer.n_params

    def forward(self, x) -> np.ndarray:
        x, single = _as_batch(x, self.input_dim)
        inputs, pres, posts = [], [], []
        a = x
        for layer, W, b in zip(self.layout, self._W, self._b):
            inputs.append(a)
            pre = a @ W + b
            a = _activate(layer.activation, pre)
            pres.append(pre)
            posts.append(a)
        self._cache = (inputs, pres, posts, single)
        return a[0] if single else a

    def backward(self, upstream) -> tuple[np.ndarray, np.ndarray]:
        """Contract d(output)/d(params) and d(output)/d(input) with ``upstream``.

        The parameter gradient is summed over the batch rows.
        """
        if self._cache is None:
            raise BackwardBeforeForwardError("backward() called before forward()")
        inputs, pres, posts, single = self._cache
        delta = np.asarray(upstream, dtype=np.float64)
        if single:
            delta = delta.reshape(1, -1)
        if delta.shape != posts[-1].shape:
            raise DimensionError(f"upstream shape {delta.shape} != output shape {posts[-1].shape}")
        grad = np.empty_like(self.params)
        pos = self.params.size
        for i in range(len(self.layout) - 1, -1, -1):
            layer = self.layout[i]
            d_act = _activation_grad(layer.activation, pres[i], posts[i])
            if d_act is not None:
                delta = delta * d_act
            nb, nw = layer.fan_out, layer.fan_in * layer.fan_out
            grad[pos - nb:pos] = delta.sum(axis=0)
            grad[pos - nb - nw:pos - nb] = (inputs[i].T @ delta).ravel()
            pos -= layer.n_params
            delta = delta @ self._W[i].T
        return grad, (delta[0] if single else delta)


class RepresentationNet(MLP):
    """phi: covariates -> representation; tanh hidden layers, linear output."""

    def __init__(self, input_dim: int, output_dim: int, hidden: Sequence[int] = (64, 64),
                 activation: str = "tanh", *, params=None, seed: int = 0,
                 scheme: str = "scaled-uniform"):
        layout = make_layout([input_dim, *hidden, output_dim], activation, "identity")
        super().__init__(layout, params, seed=seed, scheme=scheme)


def one_hot(t, n_treatments: int) -> np.ndarray:
    t = np.asarray(t)
    if t.size and (t.min() < 0 or t.max() >= n_treatments or not np.all(t == np.round(t))):
        raise InvalidTreatmentError(f"treatments must be integers in [0, {n_treatments - 1}]")
    out = np.zeros((t.size, n_treatments))
    out[np.arange(t.size), t.astype(np.intp).ravel()] = 1.0
    return out


class PredictorNet:
    """m(z, t): shared trunk over z and one linear output head per treatment.

    Head ``t`` is column ``t`` of the head weight matrix plus bias ``t``; with
    ``hidden=()`` there is no trunk and each head is linear in z.
    """

    def __init__(self, input_dim: int, n_treatments: int, hidden: Sequence[int] = (64,),
                 activation: str = "tanh", *, params=None, seed: int = 0,
                 scheme: str = "scaled-uniform", tied_heads: bool = False):
        self.n_treatments = n_treatments
        self.trunk = None
        width = input_dim
        trunk_n = 0
        if hidden:
            self.trunk = MLP(make_layout([input_dim, *hidden], activation, activation),
                             seed=seed, scheme=scheme)
            width = hidden[-1]
            trunk_n = self.trunk.n_params
        self.head_layer = Layer(width, n_treatments, "identity")
        self.layout = (self.trunk.layout if self.trunk else ()) + (self.head_layer,)
        self._input_dim = input_dim
        self._trunk_n = trunk_n
        buf = np.empty(trunk_n + self.head_layer.n_params)
        if self.trunk is not None:
            self.trunk.bind(buf[:trunk_n])
        buf[trunk_n:] = init_params((self.head_layer,), scheme, seed + 7919)
        if tied_heads:
            # every head starts as a copy of head 0, so initial effects are exactly zero
            heads = buf[trunk_n:trunk_n + width * n_treatments].reshape(width, n_treatments)
            heads[:] = heads[:, :1]
        if params is not None:
            buf[:] = ParamVector(params, self.layout).values
        self.params = buf
        self._make_views()
        self._cache = None

    @property
    def input_dim(self) -> int:
        return self._input_dim

    @property
    def n_params(self) -> int:
        return self.params.size

    def _make_views(self) -> None:
        if self.trunk is not None:
            self.trunk.params = self.params[:self._trunk_n]
            self.trunk._make_views()
        width = self.head_layer.fan_in
        nw = width * self.n_treatments
        self._Wh = self.params[self._trunk_n:self._trunk_n + nw].reshape(width, self.n_treatments)
        self._bh = self.params[self._trunk_n + nw:]

    def bind(self, buffer: np.ndarray) -> None:
        buffer[:] = self.params
        self.params = buffer
        self._make_views()

    def head_indices(self, k: int) -> np.ndarray:
        """Positions in ``params`` that belong to output head ``k`` only."""
        width = self.head_layer.fan_in
        w_idx = self._trunk_n + np.arange(width) * self.n_treatments + k
        b_idx = self._trunk_n + width * self.n_treatments + k
        return np.append(w_idx, b_idx)

    def _features(self, z) -> tuple[np.ndarray, bool]:
        z, single = _as_batch(z, self._input_dim)
        h = self.trunk.forward(z) if self.trunk is not None else z
        return h, single

    def forward_all(self, z) -> np.ndarray:
        """All heads at once, shape ``(n, n_treatments)``. Does not touch the backward cache."""
        h, single = self._features(z)
        out = h @ self._Wh + self._bh
        return out[0] if single else out

    def forward(self, z, t) -> np.ndarray:
        h, single = self._features(z)
        t = np.atleast_1d(np.asarray(t))
        if t.shape[0] != h.shape[0]:
            raise DimensionError("z and t have different numbers of rows")
        onehot = one_hot(t, self.n_treatments)
        t = t.astype(np.intp)
        out = np.einsum("ij,ji->i", h, self._Wh[:, t]) + self._bh[t]
        self._cache = (h, t, onehot, single)
        return out[0] if single else out

    def backward(self, upstream) -> tuple[np.ndarray, np.ndarray]:
        if self._cache is None:
            raise BackwardBeforeForwardError("backward() called before forward()")
        h, t, onehot, single = self._cache
        up = np.atleast_1d(np.asarray(upstream, dtype=np.float64))
        if up.shape != (h.shape[0],):
            raise DimensionError(f"upstream shape {up.shape} != ({h.shape[0]},)")
        scattered = onehot * up[:, None]
        grad = np.empty_like(self.params)
        nw = self._Wh.size
        grad[self._trunk_n:self._trunk_n + nw] = (h.T @ scattered).ravel()
        grad[self._trunk_n + nw:] = scattered.sum(axis=0)
        dh = up[:, None] * self._Wh[:, t].T
        if self.trunk is not None:
            grad[:self._trunk_n], dz = self.trunk.backward(dh)
        else:
            dz = dh
        return grad, (dz[0] if single else dz)


class CriticNet:
    """d(z, t) on concat(z, one-hot(t)); tanh output keeps it in [-1, 1]."""

    def __init__(self, input_dim: int, n_treatments: int, hidden: Sequence[int] = (64, 64),
                 activation: str = "tanh", final_activation: str = "tanh", *, params=None,
                 seed: int = 0, scheme: str = "scaled-uniform"):
        self.n_treatments = n_treatments
        self._input_dim = input_dim
        self.net = MLP(make_layout([input_dim + n_treatments, *hidden, 1], activation,
                                   final_activation), params, seed=seed, scheme=scheme)
        self.layout = self.net.layout

    @property
    def params(self) -> np.ndarray:
        return self.net.params

    @property
    def input_dim(self) -> int:
        return self._input_dim

    @property
    def n_params(self) -> int:
        return self.net.n_params

    def bind(self, buffer: np.ndarray) -> None:
        self.net.bind(buffer)

    def forward(self, z, t) -> np.ndarray:
        z, single = _as_batch(z, self._input_dim)
        t = np.atleast_1d(np.asarray(t))
        if t.shape[0] != z.shape[0]:
            raise DimensionError("z and t have different numbers of rows")
        out = self.net.forward(np.hstack([z, one_hot(t, self.n_treatments)]))[:, 0]
        return out[0] if single else out

    def backward(self, upstream) -> tuple[np.ndarray, np.ndarray]:
        up = np.atleast_1d(np.asarray(upstream, dtype=np.float64))
        grad, dinp = self.net.backward(up[:, None])
        return grad, dinp[:, :self._input_dim]


class JointModel:
    """m(phi(x), t) with a single flat parameter vector ``[phi | predictor]``.

    ``phi=None`` means the predictor reads the raw covariates.
    """

    def __init__(self, phi: RepresentationNet | None, predictor: PredictorNet):
        if phi is not None and phi.output_dim != predictor.input_dim:
            raise DimensionError("representation output does not match predictor input")
        self.phi = phi
        self.predictor = predictor
        n_phi = phi.n_params if phi is not None else 0
        buf = np.empty(n_phi + predictor.n_params)
        if phi is not None:
            phi.bind(buf[:n_phi])
        predictor.bind(buf[n_phi:])
        self.params = buf
        self.n_phi = n_phi

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def n_treatments(self) -> int:
        return self.predictor.n_treatments

    @property
    def input_dim(self) -> int:
        return self.phi.input_dim if self.phi is not None else self.predictor.input_dim

    def represent(self, x) -> np.ndarray:
        """phi(x) without disturbing the backward cache."""
        if self.phi is None:
            return np.asarray(x, dtype=np.float64)
        saved = self.phi._cache
        z = self.phi.forward(x)
        self.phi._cache = saved
        return z

    def forward(self, x, t) -> np.ndarray:
        z = self.phi.forward(x) if self.phi is not None else x
        return self.predictor.forward(z, t)

    def predict(self, x, t) -> np.ndarray:
        saved = (self.phi._cache if self.phi is not None else None, self.predictor._cache)
        out = self.forward(x, t)
        if self.phi is not None:
            self.phi._cache = saved[0]
        self.predictor._cache = saved[1]
        return out

    def predict_all(self, x) -> np.ndarray:
        return self.predictor.forward_all(self.represent(x))

    def effects(self, x) -> np.ndarray:
        """m(x, k) - m(x, 0) for k = 1..K, shape ``(n, K)``; a vector when K = 1."""
        heads = self.predict_all(x)
        eff = heads[..., 1:] - heads[..., :1]
        return eff[..., 0] if eff.shape[-1] == 1 else eff

    def backward(self, upstream) -> tuple[np.ndarray, np.ndarray]:
        grad = np.empty_like(self.params)
        g_pred, dz = self.predictor.backward(upstream)
        grad[self.n_phi:] = g_pred
        if self.phi is not None:
            grad[:self.n_phi], dx = self.phi.backward(dz)
        else:
            dx = dz
        return grad, dx


def finite_diff_grad(net, inputs: tuple, loss_fn: Callable[[np.ndarray], float],
                     h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``loss_fn(net.forward(*inputs))`` w.r.t. ``net.params``."""
    if h <= 0:
        raise ValueError("step h must be positive")
    params = net.params
    grad = np.empty_like(params)
    for i in range(params.size):
        orig = params[i]
        params[i] = orig + h
        up = loss_fn(net.forward(*inputs))
        params[i] = orig - h
        down = loss_fn(net.forward(*inputs))
        params[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return grad
