"""Neural network layers with explicit forward and backward passes.

Activations flow as float64 NHWC arrays (batch, height, width, channels);
dense layers operate on (batch, features). Every layer caches what its
backward pass needs during forward, writes parameter gradients into
pre-allocated arrays (so optimizers can hold on to them), and returns the
gradient with respect to its input.

Freezing a layer (``set_frozen``) switches it to inference behaviour even
inside a training step: batch norm uses running statistics and stops
updating them, dropout becomes the identity, and ``trainable_params``
skips the layer's parameters. Gradients still flow through frozen layers
to whatever sits upstream.
"""

import math

import numpy as np

from ..errors import (
    BatchTooSmallError,
    ConfigError,
    DimensionError,
    StateError,
)
from . import kernels


def _pair(value, name):
    if isinstance(value, (tuple, list)):
        if len(value) != 2:
            raise ConfigError(f"{name} must be an int or a pair, got {value!r}")
        pair = (int(value[0]), int(value[1]))
    else:
        pair = (int(value), int(value))
    return pair


def xavier_uniform(fan_in, fan_out, rng, shape=None):
    """Draw from U(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ConfigError(f"fan_in and fan_out must be positive, got {fan_in}, {fan_out}")
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base class for all layers."""

    def __init__(self):
        self.frozen = False

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def named_params(self):
        """Yield (name, value, grad) triples with stable array identities."""
        return iter(())

    def named_state(self):
        """Yield (name, array) pairs of non-trainable state (e.g. BN stats)."""
        return iter(())

    def trainable_params(self):
        if self.frozen:
            return iter(())
        return self.named_params()

    def set_frozen(self, flag=True):
        self.frozen = bool(flag)

    def _require(self, condition, message):
        if not condition:
            raise StateError(f"{type(self).__name__}: {message}")


class Conv2D(Layer):
    """Strided 2-D convolution with zero padding.

    Output height is floor((h + 2*ph - kh) / sh) + 1 and likewise for width.
    Weights are (kh, kw, c_in, c_out); each output channel has a bias.
    """

    def __init__(self, c_in, c_out, kernel=3, stride=1, padding=0, *, rng):
        super().__init__()
        self.c_in = int(c_in)
        self.c_out = int(c_out)
        self.kh, self.kw = _pair(kernel, "kernel")
        self.sh, self.sw = _pair(stride, "stride")
        self.ph, self.pw = _pair(padding, "padding")
        if self.c_in < 1 or self.c_out < 1:
            raise ConfigError("channel counts must be positive")
        if self.kh < 1 or self.kw < 1 or self.sh < 1 or self.sw < 1:
            raise ConfigError("kernel and stride must be positive")
        if self.ph < 0 or self.pw < 0:
            raise ConfigError("padding must be non-negative")
        fan_in = self.kh * self.kw * self.c_in
        fan_out = self.kh * self.kw * self.c_out
        self.w = xavier_uniform(fan_in, fan_out, rng,
                                shape=(self.kh, self.kw, self.c_in, self.c_out))
        self.b = np.zeros(self.c_out)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._xpad = None
        self._in_shape = None

    def output_size(self, h, w):
        ho = (h + 2 * self.ph - self.kh) // self.sh + 1
        wo = (w + 2 * self.pw - self.kw) // self.sw + 1
        return ho, wo

    def forward(self, x, training=False, rng=None):
        if x.ndim != 4 or x.shape[3] != self.c_in:
            raise DimensionError(
                f"Conv2D expects (n, h, w, {self.c_in}), got {x.shape}")
        n, h, w, _ = x.shape
        ho, wo = self.output_size(h, w)
        if ho < 1 or wo < 1:
            raise DimensionError(
                f"Conv2D input {h}x{w} too small for kernel "
                f"{self.kh}x{self.kw} at stride {self.sh}x{self.sw}")
        xpad = np.pad(x, ((0, 0), (self.ph, self.ph), (self.pw, self.pw), (0, 0)))
        self._xpad = xpad
        self._in_shape = x.shape
        return kernels.gather(xpad, self.w, self.sh, self.sw) + self.b

    def backward(self, dy):
        self._require(self._xpad is not None, "backward before forward")
        n, h, w, _ = self._in_shape
        hp = h + 2 * self.ph
        wp = w + 2 * self.pw
        dxpad = kernels.scatter(dy, self.w, self.sh, self.sw, hp, wp)
        self.gw[...] = kernels.patch_outer(self._xpad, dy, self.sh, self.sw, self.kh, self.kw)
        self.gb[...] = dy.sum(axis=(0, 1, 2))
        return dxpad[:, self.ph:self.ph + h, self.pw:self.pw + w, :]

    def named_params(self):
        yield "w", self.w, self.gw
        yield "b", self.b, self.gb


class ConvTranspose2D(Layer):
    """Strided transposed convolution (the adjoint of Conv2D).

    Output height is (h - 1)*sh - 2*ph + kh + oph where the output padding
    oph must be smaller than the stride; same for width. Weights are
    (kh, kw, c_out, c_in) so that the scatter/gather kernel pair serves
    both convolution kinds.
    """

    def __init__(self, c_in, c_out, kernel=3, stride=1, padding=0,
                 output_padding=0, *, rng):
        super().__init__()
        self.c_in = int(c_in)
        self.c_out = int(c_out)
        self.kh, self.kw = _pair(kernel, "kernel")
        self.sh, self.sw = _pair(stride, "stride")
        self.ph, self.pw = _pair(padding, "padding")
        self.oph, self.opw = _pair(output_padding, "output_padding")
        if self.c_in < 1 or self.c_out < 1:
            raise ConfigError("channel counts must be positive")
        if self.kh < 1 or self.kw < 1 or self.sh < 1 or self.sw < 1:
            raise ConfigError("kernel and stride must be positive")
        if self.ph < 0 or self.pw < 0:
            raise ConfigError("padding must be non-negative")
        if not (0 <= self.oph < self.sh and 0 <= self.opw < self.sw):
            raise ConfigError("output padding must lie in [0, stride)")
        fan_in = self.kh * self.kw * self.c_in
        fan_out = self.kh * self.kw * self.c_out
        self.w = xavier_uniform(fan_in, fan_out, rng,
                                shape=(self.kh, self.kw, self.c_out, self.c_in))
        self.b = np.zeros(self.c_out)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._x = None

    def output_size(self, h, w):
        ho = (h - 1) * self.sh - 2 * self.ph + self.kh + self.oph
        wo = (w - 1) * self.sw - 2 * self.pw + self.kw + self.opw
        return ho, wo

    def _buffer_size(self, h, w):
        return (h - 1) * self.sh + self.kh + self.oph, (w - 1) * self.sw + self.kw + self.opw

    def forward(self, x, training=False, rng=None):
        if x.ndim != 4 or x.shape[3] != self.c_in:
            raise DimensionError(
                f"ConvTranspose2D expects (n, h, w, {self.c_in}), got {x.shape}")
        n, h, w, _ = x.shape
        ho, wo = self.output_size(h, w)
        if ho < 1 or wo < 1:
            raise DimensionError(
                f"ConvTranspose2D output would be {ho}x{wo} for input {h}x{w}")
        hp, wp = self._buffer_size(h, w)
        ypad = kernels.scatter(x, self.w, self.sh, self.sw, hp, wp)
        self._x = x
        return ypad[:, self.ph:self.ph + ho, self.pw:self.pw + wo, :] + self.b

    def backward(self, dy):
        self._require(self._x is not None, "backward before forward")
        x = self._x
        n, h, w, _ = x.shape
        ho, wo = self.output_size(h, w)
        hp, wp = self._buffer_size(h, w)
        dypad = np.zeros((n, hp, wp, self.c_out))
        dypad[:, self.ph:self.ph + ho, self.pw:self.pw + wo, :] = dy
        dx = kernels.gather(dypad, self.w, self.sh, self.sw)
        self.gw[...] = kernels.patch_outer(dypad, x, self.sh, self.sw, self.kh, self.kw)
        self.gb[...] = dy.sum(axis=(0, 1, 2))
        return dx

    def named_params(self):
        yield "w", self.w, self.gw
        yield "b", self.b, self.gb


class BatchNorm(Layer):
    """Per-channel batch normalization over (batch, height, width).

    Training mode normalizes by biased batch statistics and folds them into
    running estimates with the given momentum; inference (and frozen) mode
    normalizes by the running estimates. A training-mode forward needs at
    least two samples in the batch.
    """

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        if channels < 1:
            raise ConfigError("channels must be positive")
        if eps <= 0:
            raise ConfigError("eps must be positive")
        if not 0 < momentum <= 1:
            raise ConfigError("momentum must lie in (0, 1]")
        self.channels = int(channels)
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.gamma = np.ones(self.channels)
        self.beta = np.zeros(self.channels)
        self.ggamma = np.zeros_like(self.gamma)
        self.gbeta = np.zeros_like(self.beta)
        self.running_mean = np.zeros(self.channels)
        self.running_var = np.ones(self.channels)
        self._cache = None

    def forward(self, x, training=False, rng=None):
        if x.ndim != 4 or x.shape[3] != self.channels:
            raise DimensionError(
                f"BatchNorm expects (n, h, w, {self.channels}), got {x.shape}")
        axes = (0, 1, 2)
        batch_stats = training and not self.frozen
        if batch_stats:
            if x.shape[0] < 2:
                raise BatchTooSmallError(
                    f"BatchNorm needs a batch of at least 2 in training mode, got {x.shape[0]}")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean += self.momentum * (mean - self.running_mean)
            self.running_var += self.momentum * (var - self.running_var)
        else:
            mean = self.running_mean
            var = self.running_var
        ivar = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * ivar
        self._cache = (xhat, ivar, batch_stats)
        return self.gamma * xhat + self.beta

    def backward(self, dy):
        self._require(self._cache is not None, "backward before forward")
        xhat, ivar, batch_stats = self._cache
        self.ggamma[...] = (dy * xhat).sum(axis=(0, 1, 2))
        self.gbeta[...] = dy.sum(axis=(0, 1, 2))
        if not batch_stats:
            return dy * (self.gamma * ivar)
        m = dy.shape[0] * dy.shape[1] * dy.shape[2]
        dxhat = dy * self.gamma
        term = m * dxhat - dxhat.sum(axis=(0, 1, 2)) - xhat * (dxhat * xhat).sum(axis=(0, 1, 2))
        return (ivar / m) * term

    def named_params(self):
        yield "gamma", self.gamma, self.ggamma
        yield "beta", self.beta, self.gbeta

    def named_state(self):
        yield "running_mean", self.running_mean
        yield "running_var", self.running_var


class Activation(Layer):
    """Element-wise nonlinearity: tanh, relu, sigmoid, or linear."""

    KINDS = ("tanh", "relu", "sigmoid", "linear")

    def __init__(self, kind):
        super().__init__()
        if kind not in self.KINDS:
            raise ConfigError(f"unknown activation {kind!r}, expected one of {self.KINDS}")
        self.kind = kind
        self._cache = None

    def forward(self, x, training=False, rng=None):
        if self.kind == "tanh":
            y = np.tanh(x)
            self._cache = y
        elif self.kind == "relu":
            y = np.maximum(x, 0.0)
            self._cache = x > 0
        elif self.kind == "sigmoid":
            y = 1.0 / (1.0 + np.exp(-x))
            self._cache = y
        else:
            y = x
            self._cache = True
        return y

    def backward(self, dy):
        self._require(self._cache is not None, "backward before forward")
        if self.kind == "tanh":
            return dy * (1.0 - self._cache ** 2)
        if self.kind == "relu":
            return dy * self._cache
        if self.kind == "sigmoid":
            return dy * self._cache * (1.0 - self._cache)
        return dy


class AvgPool(Layer):
    """Non-overlapping average pooling; kernel equals stride."""

    def __init__(self, kernel):
        super().__init__()
        self.kh, self.kw = _pair(kernel, "kernel")
        if self.kh < 1 or self.kw < 1:
            raise ConfigError("pool kernel must be positive")
        self._in_shape = None

    def forward(self, x, training=False, rng=None):
        if x.ndim != 4:
            raise DimensionError(f"AvgPool expects a 4-d input, got {x.shape}")
        n, h, w, c = x.shape
        if h % self.kh or w % self.kw:
            raise DimensionError(
                f"AvgPool {self.kh}x{self.kw} does not tile input {h}x{w}")
        self._in_shape = x.shape
        blocks = x.reshape(n, h // self.kh, self.kh, w // self.kw, self.kw, c)
        return blocks.mean(axis=(2, 4))

    def backward(self, dy):
        self._require(self._in_shape is not None, "backward before forward")
        scale = 1.0 / (self.kh * self.kw)
        dx = np.repeat(np.repeat(dy, self.kh, axis=1), self.kw, axis=2)
        return dx * scale


class Upsample(Layer):
    """Nearest-neighbour upsampling by integer factors."""

    def __init__(self, factor):
        super().__init__()
        self.fh, self.fw = _pair(factor, "factor")
        if self.fh < 1 or self.fw < 1:
            raise ConfigError("upsample factor must be positive")
        self._in_shape = None

    def forward(self, x, training=False, rng=None):
        if x.ndim != 4:
            raise DimensionError(f"Upsample expects a 4-d input, got {x.shape}")
        self._in_shape = x.shape
        return np.repeat(np.repeat(x, self.fh, axis=1), self.fw, axis=2)

    def backward(self, dy):
        self._require(self._in_shape is not None, "backward before forward")
        n, h, w, c = self._in_shape
        blocks = dy.reshape(n, h, self.fh, w, self.fw, c)
        return blocks.sum(axis=(2, 4))


class Dropout(Layer):
    """Inverted dropout: active only in training mode and when not frozen."""

    def __init__(self, prob):
        super().__init__()
        if not 0.0 <= prob < 1.0:
            raise ConfigError(f"dropout probability must lie in [0, 1), got {prob}")
        self.prob = float(prob)
        self._mask = None
        self._identity = None

    def forward(self, x, training=False, rng=None):
        if training and not self.frozen and self.prob > 0.0:
            if rng is None:
                raise StateError("Dropout needs an rng in training mode")
            keep = 1.0 - self.prob
            self._mask = (rng.random(x.shape) < keep) / keep
            self._identity = False
            return x * self._mask
        self._mask = None
        self._identity = True
        return x

    def backward(self, dy):
        self._require(self._identity is not None, "backward before forward")
        if self._identity:
            return dy
        return dy * self._mask


class Flatten(Layer):
    """Collapse (n, h, w, c) to (n, h*w*c)."""

    def __init__(self):
        super().__init__()
        self._in_shape = None

    def forward(self, x, training=False, rng=None):
        if x.ndim < 2:
            raise DimensionError(f"Flatten expects a batched input, got {x.shape}")
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        self._require(self._in_shape is not None, "backward before forward")
        return dy.reshape(self._in_shape)


class Reshape(Layer):
    """Reshape each sample to a fixed target shape (batch dim untouched)."""

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in self.shape):
            raise ConfigError(f"target shape must be positive, got {self.shape}")
        self._in_shape = None

    def forward(self, x, training=False, rng=None):
        per_sample = int(np.prod(x.shape[1:]))
        if per_sample != int(np.prod(self.shape)):
            raise DimensionError(
                f"cannot reshape {x.shape[1:]} to {self.shape}")
        self._in_shape = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dy):
        self._require(self._in_shape is not None, "backward before forward")
        return dy.reshape(self._in_shape)


class Dense(Layer):
    """Affine map y = x W^T + b with W of shape (f_out, f_in)."""

    def __init__(self, f_in, f_out, *, rng):
        super().__init__()
        if f_in < 1 or f_out < 1:
            raise ConfigError("feature counts must be positive")
        self.f_in = int(f_in)
        self.f_out = int(f_out)
        self.w = xavier_uniform(self.f_in, self.f_out, rng, shape=(self.f_out, self.f_in))
        self.b = np.zeros(self.f_out)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._x = None

    def forward(self, x, training=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.f_in:
            raise DimensionError(f"Dense expects (n, {self.f_in}), got {x.shape}")
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, dy):
        self._require(self._x is not None, "backward before forward")
        self.gw[...] = dy.T @ self._x
        self.gb[...] = dy.sum(axis=0)
        return dy @ self.w

    def named_params(self):
        yield "w", self.w, self.gw
        yield "b", self.b, self.gb


class Sequential(Layer):
    """A chain of layers, itself a layer. Children get dotted param names."""

    def __init__(self, layers, names=None):
        super().__init__()
        layers = list(layers)
        if names is None:
            names = [f"layer{i}" for i in range(len(layers))]
        names = list(names)
        if len(names) != len(layers):
            raise ConfigError("one name per layer required")
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate layer names in {names}")
        self.children = list(zip(names, layers))

    def __getitem__(self, name):
        for child_name, layer in self.children:
            if child_name == name:
                return layer
        raise KeyError(name)

    def forward(self, x, training=False, rng=None):
        for _, layer in self.children:
            x = layer.forward(x, training=training, rng=rng)
        return x

    def backward(self, dy):
        for _, layer in reversed(self.children):
            dy = layer.backward(dy)
        return dy

    def named_params(self):
        for name, layer in self.children:
            for pname, p, g in layer.named_params():
                yield f"{name}.{pname}", p, g

    def named_state(self):
        for name, layer in self.children:
            for sname, s in layer.named_state():
                yield f"{name}.{sname}", s

    def trainable_params(self):
        if self.frozen:
            return
        for name, layer in self.children:
            for pname, p, g in layer.trainable_params():
                yield f"{name}.{pname}", p, g

    def set_frozen(self, flag=True):
        super().set_frozen(flag)
        for _, layer in self.children:
            layer.set_frozen(flag)


class ResidualBlock(Layer):
    """Two 3x3 same-shape convolutions with a skip connection.

    The branch is conv-bn-relu-conv-bn; the block input is added to the
    branch output and the sum passes through a final relu.
    """

    def __init__(self, channels, *, rng):
        super().__init__()
        self.body = Sequential(
            [
                Conv2D(channels, channels, kernel=3, stride=1, padding=1, rng=rng),
                BatchNorm(channels),
                Activation("relu"),
                Conv2D(channels, channels, kernel=3, stride=1, padding=1, rng=rng),
                BatchNorm(channels),
            ],
            names=["conv1", "bn1", "act1", "conv2", "bn2"],
        )
        self.act = Activation("relu")

    def forward(self, x, training=False, rng=None):
        h = self.body.forward(x, training=training, rng=rng)
        return self.act.forward(h + x, training=training, rng=rng)

    def backward(self, dy):
        dsum = self.act.backward(dy)
        dbranch = self.body.backward(dsum)
        return dbranch + dsum

    def named_params(self):
        for name, p, g in self.body.named_params():
            yield f"body.{name}", p, g

    def named_state(self):
        for name, s in self.body.named_state():
            yield f"body.{name}", s

    def trainable_params(self):
        if self.frozen:
            return
        for name, p, g in self.body.trainable_params():
            yield f"body.{name}", p, g

    def set_frozen(self, flag=True):
        super().set_frozen(flag)
        self.body.set_frozen(flag)
        self.act.set_frozen(flag)
