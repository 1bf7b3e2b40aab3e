"""Layers used by the crack segmentation network.

Feature maps are laid out ``(batch, channels, time, sensors)``. Every layer
exposes ``params`` (trainable Tensors), ``buffers`` (plain arrays such as
running statistics) and ``forward(x, train)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

SELU_LAMBDA = 1.0507
SELU_ALPHA = 1.67326
_SQRT2 = math.sqrt(2.0)

ACTIVATIONS = ("relu", "selu", "gelu", "elu")


@dataclass(frozen=True)
class ActivationKind:
    tag: str = "gelu"
    alpha: float = 1.0

    def __post_init__(self):
        tag = self.tag.lower()
        if tag not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.tag!r}; expected one of {ACTIVATIONS}")
        object.__setattr__(self, "tag", tag)
        if self.alpha <= 0:
            raise ValueError("ELU alpha must be positive")

    @property
    def selu_lambda(self):
        return SELU_LAMBDA

    @property
    def selu_alpha(self):
        return SELU_ALPHA


def relu(x):
    return T.where(T.gt(x), x, 0.0)


def _neg_branch(x, alpha):
    # exp on the clipped input keeps the unused branch finite for large x
    return (T.exp(T.clip(x, hi=0.0)) - 1.0) * alpha


def elu(x, alpha=1.0):
    return T.where(T.gt(x), x, _neg_branch(x, alpha))


def selu(x):
    return T.where(T.gt(x), x, _neg_branch(x, SELU_ALPHA)) * SELU_LAMBDA


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with the erf form of the normal CDF."""
    return x * (1.0 + T.erf(x * (1.0 / _SQRT2))) * 0.5


def activate(kind, x):
    if isinstance(kind, str):
        kind = ActivationKind(kind)
    if kind.tag == "relu":
        return relu(x)
    if kind.tag == "selu":
        return selu(x)
    if kind.tag == "gelu":
        return gelu(x)
    return elu(x, kind.alpha)


def kaiming_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Layer:
    name = "layer"

    def __init__(self):
        self.params = {}
        self.buffers = {}

    def forward(self, x, train=False):
        raise NotImplementedError

    def __call__(self, x, train=False):
        return self.forward(x, train)

    def out_shape(self, shape):
        return shape

    def __repr__(self):
        return f"{type(self).__name__}({self.describe()})"

    def describe(self):
        return ""


class Conv2d(Layer):
    name = "conv"

    def __init__(self, rng, c_in, c_out, kernel, padding=(0, 0), bias=True):
        super().__init__()
        kh, kw = kernel
        self.kernel, self.padding = (kh, kw), tuple(padding)
        self.c_in, self.c_out = c_in, c_out
        self.params["weight"] = kaiming_uniform(rng, (c_out, c_in, kh, kw), c_in * kh * kw)
        if bias:
            self.params["bias"] = Tensor(np.zeros(c_out), requires_grad=True)

    def forward(self, x, train=False):
        return T.conv2d(x, self.params["weight"], self.params.get("bias"), 1, self.padding)

    def out_shape(self, shape):
        B, C, H, W = shape
        return (B, self.c_out, H + 2 * self.padding[0] - self.kernel[0] + 1,
                W + 2 * self.padding[1] - self.kernel[1] + 1)

    def describe(self):
        return f"{self.c_in}->{self.c_out}, k={self.kernel}, pad={self.padding}"


class ConvTranspose2d(Layer):
    name = "convT"

    def __init__(self, rng, c_in, c_out, kernel=(2, 2), stride=(2, 2), bias=True):
        super().__init__()
        self.kernel, self.stride = tuple(kernel), tuple(stride)
        self.c_in, self.c_out = c_in, c_out
        self.params["weight"] = kaiming_uniform(rng, (c_in, c_out) + self.kernel, c_out * kernel[0] * kernel[1])
        if bias:
            self.params["bias"] = Tensor(np.zeros(c_out), requires_grad=True)

    def forward(self, x, train=False):
        return T.conv_transpose2d(x, self.params["weight"], self.params.get("bias"), self.stride, 0)

    def out_shape(self, shape):
        B, C, H, W = shape
        return (B, self.c_out, (H - 1) * self.stride[0] + self.kernel[0], (W - 1) * self.stride[1] + self.kernel[1])

    def describe(self):
        return f"{self.c_in}->{self.c_out}, k={self.kernel}, stride={self.stride}"


class MaxPool(Layer):
    name = "maxpool"

    def __init__(self, kernel):
        super().__init__()
        self.kernel = tuple(kernel)

    def forward(self, x, train=False):
        return T.max_pool2d(x, self.kernel)

    def out_shape(self, shape):
        B, C, H, W = shape
        return (B, C, H // self.kernel[0], W // self.kernel[1])

    def describe(self):
        return f"k={self.kernel}"


class Activation(Layer):
    name = "act"

    def __init__(self, kind):
        super().__init__()
        self.kind = kind

    def forward(self, x, train=False):
        return activate(self.kind, x)

    def describe(self):
        return self.kind.tag


class Sigmoid(Layer):
    name = "sigmoid"

    def forward(self, x, train=False):
        return T.sigmoid(x)


class Reshape(Layer):
    name = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def forward(self, x, train=False):
        return T.reshape(x, (x.shape[0],) + self.shape)

    def out_shape(self, shape):
        return (shape[0],) + self.shape

    def describe(self):
        return str(self.shape)


class Flatten(Layer):
    name = "flatten"

    def forward(self, x, train=False):
        return T.flatten(x)

    def out_shape(self, shape):
        return (shape[0], int(np.prod(shape[1:])))


class BatchNorm2d(Layer):
    """Batch statistics in training, running statistics in eval."""

    name = "batchnorm"

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.params["scale"] = Tensor(np.ones(channels), requires_grad=True)
        self.params["shift"] = Tensor(np.zeros(channels), requires_grad=True)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)

    def forward(self, x, train=False):
        if x.shape[1] != self.channels:
            raise ShapeError(f"batchnorm: expected {self.channels} channels, got {x.shape[1]}")
        c = (1, self.channels, 1, 1)
        if train:
            mu = x.mean(axis=(0, 2, 3), keepdims=True)
            xc = x - mu
            var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
            xhat = xc * (var + self.eps) ** -0.5
            n = x.size // self.channels
            unbiased = var.data.reshape(-1) * (n / (n - 1) if n > 1 else 1.0)
            m = self.momentum
            self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mu.data.reshape(-1)
            self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * unbiased
        else:
            rm = self.buffers["running_mean"].reshape(c)
            rv = self.buffers["running_var"].reshape(c)
            xhat = (x - rm) * (1.0 / np.sqrt(rv + self.eps))
        return xhat * self.params["scale"].reshape(c) + self.params["shift"].reshape(c)

    def describe(self):
        return str(self.channels)


class GroupNorm(Layer):
    name = "groupnorm"

    def __init__(self, channels, groups=4, eps=1e-5):
        super().__init__()
        if channels % groups:
            raise ValueError(f"groupnorm: {channels} channels not divisible into {groups} groups")
        self.channels, self.groups, self.eps = channels, groups, eps
        self.params["scale"] = Tensor(np.ones(channels), requires_grad=True)
        self.params["shift"] = Tensor(np.zeros(channels), requires_grad=True)

    def normalize(self, x):
        B, C, H, W = x.shape
        if C != self.channels:
            raise ShapeError(f"groupnorm: expected {self.channels} channels, got {C}")
        g = x.reshape(B, self.groups, -1)
        gc = g - g.mean(axis=2, keepdims=True)
        var = (gc * gc).mean(axis=2, keepdims=True)
        return (gc * (var + self.eps) ** -0.5).reshape(B, C, H, W)

    def forward(self, x, train=False):
        c = (1, self.channels, 1, 1)
        return self.normalize(x) * self.params["scale"].reshape(c) + self.params["shift"].reshape(c)

    def describe(self):
        return f"{self.channels}, groups={self.groups}"


class SqueezeExcite(Layer):
    """Channel gate: pool over (time, sensors), bottleneck MLP, sigmoid, rescale."""

    name = "se"

    def __init__(self, rng, channels, reduction=4, kind=None):
        super().__init__()
        if channels % reduction:
            raise ValueError(f"SE reduction {reduction} does not divide {channels} channels")
        hidden = channels // reduction
        self.channels, self.kind = channels, kind or ActivationKind()
        self.params["w1"] = kaiming_uniform(rng, (channels, hidden), channels)
        self.params["b1"] = Tensor(np.zeros(hidden), requires_grad=True)
        self.params["w2"] = kaiming_uniform(rng, (hidden, channels), hidden)
        self.params["b2"] = Tensor(np.zeros(channels), requires_grad=True)

    def gate(self, x):
        if x.shape[1] != self.channels:
            raise ShapeError(f"se: expected {self.channels} channels, got {x.shape[1]}")
        pooled = x.mean(axis=(2, 3))
        h = activate(self.kind, pooled @ self.params["w1"] + self.params["b1"])
        return T.sigmoid(h @ self.params["w2"] + self.params["b2"])

    def forward(self, x, train=False):
        g = self.gate(x)
        return x * g.reshape(x.shape[0], self.channels, 1, 1)

    def describe(self):
        return f"{self.channels}, hidden={self.params['w1'].shape[1]}"


class TemporalAttention(Layer):
    """Single-head self-attention across time, run independently per sensor.

    Tokens are the time steps, embedded by their channel vector. The residual
    is part of the layer: ``out = x + softmax(Q K^T / sqrt(C)) V``.
    """

    name = "attention"

    def __init__(self, rng, channels):
        super().__init__()
        self.channels = channels
        for key in ("q", "k", "v"):
            self.params[f"w{key}"] = kaiming_uniform(rng, (channels, channels), channels)
            self.params[f"b{key}"] = Tensor(np.zeros(channels), requires_grad=True)

    def attend(self, x):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"attention: expected (B, {self.channels}, T, S), got {x.shape}")
        p = self.params
        tokens = x.transpose(0, 3, 2, 1)  # (B, S, T, C)
        q = tokens @ p["wq"] + p["bq"]
        k = tokens @ p["wk"] + p["bk"]
        v = tokens @ p["wv"] + p["bv"]
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.channels))
        return (T.softmax(scores, axis=-1) @ v).transpose(0, 3, 2, 1)

    def forward(self, x, train=False):
        return x + self.attend(x)

    def describe(self):
        return str(self.channels)
