"""Minimal deterministic training substrate (NumPy, float64).

Parameters of every trainable layer live in one flat vector so that pruning
code can address them with a single global index. Layer ``l`` owns the
half-open range ``net.slices[l]``; weights come first, then the bias.
A mask is applied multiplicatively on every forward pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DTYPE = np.float64


class ConfigError(ValueError):
    """Invalid network or experiment configuration."""


@dataclass(frozen=True)
class FullyConnected:
    in_features: int
    out_features: int
    has_bias: bool = True

    trainable = True

    @property
    def n_weights(self) -> int:
        return self.in_features * self.out_features

    @property
    def n_params(self) -> int:
        return self.n_weights + (self.out_features if self.has_bias else 0)

    @property
    def fan_in(self) -> int:
        return self.in_features

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise ValueError(f"expected input ({self.in_features},), got {tuple(in_shape)}")
        return (self.out_features,)

    def forward(self, x, w):
        weight = w[: self.n_weights].reshape(self.out_features, self.in_features)
        y = x @ weight.T
        if self.has_bias:
            y = y + w[self.n_weights:]
        return y, x

    def backward(self, dy, w, cache):
        x = cache
        weight = w[: self.n_weights].reshape(self.out_features, self.in_features)
        dw = np.empty_like(w)
        dw[: self.n_weights] = (dy.T @ x).ravel()
        if self.has_bias:
            dw[self.n_weights:] = dy.sum(axis=0)
        return dy @ weight, dw


@dataclass(frozen=True)
class Conv2D:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    has_bias: bool = True

    trainable = True

    @property
    def n_weights(self) -> int:
        return self.in_channels * self.out_channels * self.kernel_h * self.kernel_w

    @property
    def n_params(self) -> int:
        return self.n_weights + (self.out_channels if self.has_bias else 0)

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel_h * self.kernel_w

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ValueError(f"expected input ({self.in_channels}, H, W), got {tuple(in_shape)}")
        _, h, w = in_shape
        ho = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"kernel {self.kernel_h}x{self.kernel_w} does not fit input {h}x{w}")
        return (self.out_channels, ho, wo)

    def _geometry(self, x):
        b, _, h, w = x.shape
        ho = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        return b, ho, wo

    def forward(self, x, w):
        b, ho, wo = self._geometry(x)
        p, s = self.padding, self.stride
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = np.empty((b, self.in_channels, self.kernel_h, self.kernel_w, ho, wo), dtype=x.dtype)
        for i in range(self.kernel_h):
            for j in range(self.kernel_w):
                cols[:, :, i, j] = xp[:, :, i: i + s * ho: s, j: j + s * wo: s]
        cols = cols.reshape(b, -1, ho * wo)
        weight = w[: self.n_weights].reshape(self.out_channels, -1)
        y = np.matmul(weight, cols)
        if self.has_bias:
            y = y + w[self.n_weights:, None]
        return y.reshape(b, self.out_channels, ho, wo), (x.shape, cols)

    def backward(self, dy, w, cache):
        x_shape, cols = cache
        b, _, h, wd = x_shape
        ho, wo = dy.shape[2:]
        p, s = self.padding, self.stride
        dy2 = dy.reshape(b, self.out_channels, ho * wo)
        weight = w[: self.n_weights].reshape(self.out_channels, -1)

        dw = np.empty_like(w)
        dw[: self.n_weights] = np.tensordot(dy2, cols, axes=([0, 2], [0, 2])).ravel()
        if self.has_bias:
            dw[self.n_weights:] = dy2.sum(axis=(0, 2))

        dcols = np.matmul(weight.T, dy2).reshape(b, self.in_channels, self.kernel_h, self.kernel_w, ho, wo)
        dxp = np.zeros((b, self.in_channels, h + 2 * p, wd + 2 * p), dtype=dy.dtype)
        for i in range(self.kernel_h):
            for j in range(self.kernel_w):
                dxp[:, :, i: i + s * ho: s, j: j + s * wo: s] += dcols[:, :, i, j]
        dx = dxp[:, :, p: p + h, p: p + wd] if p else dxp
        return dx, dw


@dataclass(frozen=True)
class ReLU:
    trainable = False
    n_params = 0

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x, w):
        return np.maximum(x, 0.0), x > 0

    def backward(self, dy, w, cache):
        return dy * cache, None


@dataclass(frozen=True)
class Flatten:
    trainable = False
    n_params = 0

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, w):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, w, cache):
        return dy.reshape(cache), None


LayerSpec = FullyConnected | Conv2D | ReLU | Flatten


@dataclass
class Batch:
    inputs: np.ndarray
    labels: np.ndarray


class Network:
    """Ordered layer list over a flat parameter store.

    Shapes are validated once at construction; a mismatch raises
    ``ConfigError`` naming the offending layer index.
    """

    def __init__(self, layers: Sequence[LayerSpec], input_shape: Sequence[int]):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.shapes = [self.input_shape]
        for idx, layer in enumerate(self.layers):
            try:
                self.shapes.append(tuple(layer.output_shape(self.shapes[-1])))
            except ValueError as exc:
                raise ConfigError(f"layer {idx} ({type(layer).__name__}): {exc}") from None
        if len(self.shapes[-1]) != 1:
            raise ConfigError(f"network output must be flat logits, got shape {self.shapes[-1]}")
        self.num_classes = self.shapes[-1][0]

        self.slices: list[slice | None] = []
        offset = 0
        for layer in self.layers:
            if layer.trainable:
                self.slices.append(slice(offset, offset + layer.n_params))
                offset += layer.n_params
            else:
                self.slices.append(None)
        self.n_params = offset
        self.params = np.zeros(offset, dtype=DTYPE)
        self.grads = np.zeros(offset, dtype=DTYPE)

    @property
    def trainable_layers(self) -> list[int]:
        return [i for i, s in enumerate(self.slices) if s is not None]

    def layer_names(self) -> list[str]:
        names = []
        counts: dict[str, int] = {}
        for i in self.trainable_layers:
            kind = "conv" if isinstance(self.layers[i], Conv2D) else "fc"
            names.append(f"{kind}{counts.get(kind, 0)}")
            counts[kind] = counts.get(kind, 0) + 1
        return names

    def layer_bounds(self) -> np.ndarray:
        """Start offsets of trainable layers followed by the total count."""
        starts = [s.start for s in self.slices if s is not None]
        return np.array(starts + [self.n_params], dtype=np.int64)


def _effective(net: Network, mask) -> np.ndarray:
    if mask is None:
        return net.params
    m = np.asarray(mask, dtype=DTYPE)
    if m.shape != net.params.shape:
        raise ConfigError(f"mask length {m.size} != parameter count {net.n_params}")
    return net.params * m


def _check_inputs(net: Network, x: np.ndarray) -> None:
    if tuple(x.shape[1:]) != net.input_shape:
        raise ConfigError(f"layer 0: batch input shape {tuple(x.shape[1:])} != network input {net.input_shape}")


def _forward(net, w_eff, x):
    caches = []
    for layer, sl in zip(net.layers, net.slices):
        w = w_eff[sl] if sl is not None else None
        x, cache = layer.forward(x, w)
        caches.append(cache)
    return x, caches


def forward(net: Network, mask, batch: Batch | np.ndarray) -> np.ndarray:
    """Logits of shape ``(B, num_classes)`` under effective parameters ``params * mask``."""
    x = batch.inputs if isinstance(batch, Batch) else batch
    x = np.asarray(x, dtype=DTYPE)
    _check_inputs(net, x)
    logits, _ = _forward(net, _effective(net, mask), x)
    return logits


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    n = logits.shape[0]
    loss = -float(log_probs[np.arange(n), labels].mean())
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss}")
    dlogits = exp / denom
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


def loss_and_backward(net: Network, mask, batch: Batch) -> tuple[float, np.ndarray]:
    """Forward, mean softmax cross-entropy, and backprop into ``net.grads``.

    Gradients flow through the multiplicative mask, so entries of pruned
    parameters come out exactly zero. Returns ``(loss, logits)``.
    """
    x = np.asarray(batch.inputs, dtype=DTYPE)
    labels = np.asarray(batch.labels, dtype=np.int64)
    _check_inputs(net, x)
    if labels.size and (labels.min() < 0 or labels.max() >= net.num_classes):
        raise ConfigError(f"labels must lie in [0, {net.num_classes})")
    w_eff = _effective(net, mask)
    logits, caches = _forward(net, w_eff, x)
    loss, dy = softmax_cross_entropy(logits, labels)

    grads = net.grads
    for layer, sl, cache in zip(reversed(net.layers), reversed(net.slices), reversed(caches)):
        w = w_eff[sl] if sl is not None else None
        dy, dw = layer.backward(dy, w, cache)
        if sl is not None:
            grads[sl] = dw
    if mask is not None:
        grads *= np.asarray(mask, dtype=DTYPE)
    return loss, logits


@dataclass
class OptimizerState:
    momentum_buffers: np.ndarray
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay_epochs: tuple[int, ...] = (80, 120)
    lr_decay_factor: float = 0.1
    applied_decays: set[int] = field(default_factory=set)

    @classmethod
    def for_network(cls, net: Network, **kwargs) -> "OptimizerState":
        return cls(momentum_buffers=np.zeros(net.n_params, dtype=DTYPE), **kwargs)


def sgd_step(net: Network, mask, opt: OptimizerState) -> np.ndarray:
    """SGD with heavy-ball momentum and L2 decay; pruned entries stay at zero."""
    buf = opt.momentum_buffers
    buf *= opt.momentum
    buf += net.grads + opt.weight_decay * net.params
    if mask is not None:
        m = np.asarray(mask, dtype=DTYPE)
        buf *= m
        net.params -= opt.lr * buf
        net.params *= m
    else:
        net.params -= opt.lr * buf
    return net.params


def apply_lr_schedule(opt: OptimizerState, completed_epoch: int) -> float:
    # Idempotent per listed epoch.
    if completed_epoch in opt.lr_decay_epochs and completed_epoch not in opt.applied_decays:
        opt.lr *= opt.lr_decay_factor
        opt.applied_decays.add(completed_epoch)
    return opt.lr


def init_params(net: Network, seed: int) -> np.ndarray:
    """He-uniform weights (bound ``sqrt(6 / fan_in)``), zero biases."""
    rng = np.random.default_rng(seed)
    for layer, sl in zip(net.layers, net.slices):
        if sl is None:
            continue
        bound = math.sqrt(6.0 / layer.fan_in)
        block = net.params[sl]
        block[: layer.n_weights] = rng.uniform(-bound, bound, size=layer.n_weights)
        block[layer.n_weights:] = 0.0
    net.grads[:] = 0.0
    return net.params


def build_mlp(sizes: Sequence[int]) -> list[LayerSpec]:
    """``[784, 256, 128, 10]`` -> Flatten, FC, ReLU, FC, ReLU, FC."""
    layers: list[LayerSpec] = [Flatten()]
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        if i:
            layers.append(ReLU())
        layers.append(FullyConnected(a, b))
    return layers


def build_cnn(in_channels: int, channels: Sequence[int], image_hw: tuple[int, int], num_classes: int) -> list[LayerSpec]:
    """3x3 stride-2 conv stack followed by one fully-connected classifier."""
    layers: list[LayerSpec] = []
    c, (h, w) = in_channels, image_hw
    for out in channels:
        layers += [Conv2D(c, out, 3, 3, stride=2, padding=1), ReLU()]
        c, h, w = out, (h - 1) // 2 + 1, (w - 1) // 2 + 1
    layers += [Flatten(), FullyConnected(c * h * w, num_classes)]
    return layers
