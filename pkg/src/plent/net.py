"""Dense/convolutional network engine with exact backpropagation.

Every network exposes its synaptic weights as a single flat vector so that
weight-subset machinery (masks, displacements) can address layers by
contiguous coordinate ranges. Biases are kept in a separate flat vector:
they are trained but never part of the smoothed weight space.

Arithmetic runs in the dtype the network was built with (float32 by
default; float64 is used by the gradient-verification tests).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Tensor geometry does not match the network's declared layout."""


@dataclass
class FlatGradient:
    """Loss gradient split into flat synaptic weights and flat biases.

    ``wgrad`` is aligned with ``Network.weight_index``; ``bgrad`` with
    ``Network.bias_index``.
    """

    wgrad: np.ndarray
    bgrad: np.ndarray

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.wgrad)) and np.all(np.isfinite(self.bgrad)))


# ---------------------------------------------------------------------------
# Layers
#
# Each layer implements:
#   out_shape(in_shape)  -- shape inference + validation (no batch axis)
#   forward(x)           -- batched forward pass
#   backward(x, gy)      -- returns (gx, gw, gb); gw/gb are None for
#                           parameterless layers
# ---------------------------------------------------------------------------


class Dense:
    kind = "dense"

    def __init__(self, n_in: int, n_out: int):
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self.weights = None  # (n_out, n_in)
        self.bias = None  # (n_out,)

    @property
    def fan_in(self) -> int:
        return self.n_in

    @property
    def weight_shape(self):
        return (self.n_out, self.n_in)

    @property
    def bias_shape(self):
        return (self.n_out,)

    def alloc(self, dtype):
        self.weights = np.zeros(self.weight_shape, dtype=dtype)
        self.bias = np.zeros(self.bias_shape, dtype=dtype)

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.n_in:
            raise ShapeError(
                f"dense layer expects flat input of width {self.n_in}, got {in_shape}"
            )
        return (self.n_out,)

    def forward(self, x):
        return x @ self.weights.T + self.bias

    def backward(self, x, gy):
        gx = gy @ self.weights
        gw = gy.T @ x
        gb = gy.sum(axis=0)
        return gx, gw, gb

    def __repr__(self):
        return f"Dense({self.n_in}, {self.n_out})"


def _im2col3(x):
    """Unfold zero-padded 3x3 patches: (B,C,H,W) -> (B*H*W, C*9)."""
    b, c, h, w = x.shape
    img = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    col = np.empty((b, c, 3, 3, h, w), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            col[:, :, i, j] = img[:, :, i : i + h, j : j + w]
    return col.transpose(0, 4, 5, 1, 2, 3).reshape(b * h * w, c * 9)


def _col2im3(cols, x_shape):
    """Fold patch gradients back onto the padded image (adjoint of _im2col3)."""
    b, c, h, w = x_shape
    col = cols.reshape(b, h, w, c, 3, 3).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((b, c, h + 2, w + 2), dtype=cols.dtype)
    for i in range(3):
        for j in range(3):
            img[:, :, i : i + h, j : j + w] += col[:, :, i, j]
    return img[:, :, 1 : 1 + h, 1 : 1 + w]


class Conv3x3:
    """3x3 convolution, stride 1, zero padding 1 (spatial size preserved)."""

    kind = "conv3x3"

    def __init__(self, in_ch: int, out_ch: int):
        self.in_ch = int(in_ch)
        self.out_ch = int(out_ch)
        self.weights = None  # (out_ch, in_ch, 3, 3)
        self.bias = None  # (out_ch,)

    @property
    def fan_in(self) -> int:
        return self.in_ch * 9

    @property
    def weight_shape(self):
        return (self.out_ch, self.in_ch, 3, 3)

    @property
    def bias_shape(self):
        return (self.out_ch,)

    def alloc(self, dtype):
        self.weights = np.zeros(self.weight_shape, dtype=dtype)
        self.bias = np.zeros(self.bias_shape, dtype=dtype)

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_ch:
            raise ShapeError(
                f"conv3x3 layer expects (C={self.in_ch}, H, W) input, got {in_shape}"
            )
        return (self.out_ch,) + tuple(in_shape[1:])

    def forward(self, x):
        b, c, h, w = x.shape
        cols = _im2col3(x)
        wmat = self.weights.reshape(self.out_ch, -1)
        y = cols @ wmat.T + self.bias
        return y.reshape(b, h, w, self.out_ch).transpose(0, 3, 1, 2)

    def backward(self, x, gy):
        b, c, h, w = x.shape
        cols = _im2col3(x)
        wmat = self.weights.reshape(self.out_ch, -1)
        gy2 = gy.transpose(0, 2, 3, 1).reshape(b * h * w, self.out_ch)
        gw = (gy2.T @ cols).reshape(self.weight_shape)
        gb = gy2.sum(axis=0)
        gx = _col2im3(gy2 @ wmat, x.shape)
        return gx, gw, gb

    def __repr__(self):
        return f"Conv3x3({self.in_ch}, {self.out_ch})"


class MaxPool2x2:
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""

    kind = "maxpool2x2"
    weights = None
    bias = None

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool2x2 expects (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        return (c, h // 2, w // 2)

    @staticmethod
    def _windows(x):
        b, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        t = x[:, :, : h2 * 2, : w2 * 2].reshape(b, c, h2, 2, w2, 2)
        return t.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2, w2, 4)

    def forward(self, x):
        return self._windows(x).max(axis=-1)

    def backward(self, x, gy):
        b, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        win = self._windows(x)
        idx = win.argmax(axis=-1)  # ties routed to the first occurrence
        gwin = np.zeros_like(win)
        np.put_along_axis(gwin, idx[..., None], gy[..., None], axis=-1)
        gx = np.zeros_like(x)
        gx[:, :, : h2 * 2, : w2 * 2] = (
            gwin.reshape(b, c, h2, w2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, h2 * 2, w2 * 2)
        )
        return gx, None, None

    def __repr__(self):
        return "MaxPool2x2()"


class ReLU:
    kind = "relu"
    weights = None
    bias = None

    def out_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x):
        return np.maximum(x, 0)

    def backward(self, x, gy):
        return gy * (x > 0), None, None

    def __repr__(self):
        return "ReLU()"


class TanH:
    kind = "tanh"
    weights = None
    bias = None

    def out_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x):
        return np.tanh(x)

    def backward(self, x, gy):
        y = np.tanh(x)
        return gy * (1 - y * y), None, None

    def __repr__(self):
        return "TanH()"


class Flatten:
    kind = "flatten"
    weights = None
    bias = None

    def out_shape(self, in_shape):
        n = 1
        for d in in_shape:
            n *= d
        return (n,)

    def forward(self, x):
        return x.reshape(x.shape[0], -1)

    def backward(self, x, gy):
        return gy.reshape(x.shape), None, None

    def __repr__(self):
        return "Flatten()"


PARAM_KINDS = ("dense", "conv3x3")


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


class Network:
    """Ordered layer stack with flat-weight addressing.

    Parameterized layers (dense, conv3x3) receive 1-based ordinals in
    network order. ``weight_index[ordinal]`` is the slice of that layer's
    synaptic weights inside the flat weight vector; bias coordinates live
    in a separate flat vector indexed by ``bias_index``.

    Shape inference runs at construction: every layer's input shape is
    validated against the declared ``input_shape``, so geometry errors
    surface at build time rather than mid-training.
    """

    def __init__(self, layers, input_shape, dtype=DEFAULT_DTYPE):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.dtype = np.dtype(dtype)

        shape = self.input_shape
        self.layer_in_shapes = []
        for pos, layer in enumerate(self.layers):
            self.layer_in_shapes.append(shape)
            try:
                shape = layer.out_shape(shape)
            except ShapeError as e:
                raise ShapeError(f"layer {pos} ({layer!r}): {e}") from None
        self.output_shape = shape

        self.weight_index = {}
        self.bias_index = {}
        self._param_layers = []
        w_off = b_off = 0
        ordinal = 0
        for layer in self.layers:
            if layer.kind not in PARAM_KINDS:
                continue
            ordinal += 1
            layer.alloc(self.dtype)
            nw = int(np.prod(layer.weight_shape))
            nb = int(np.prod(layer.bias_shape))
            self.weight_index[ordinal] = slice(w_off, w_off + nw)
            self.bias_index[ordinal] = slice(b_off, b_off + nb)
            self._param_layers.append((ordinal, layer))
            w_off += nw
            b_off += nb
        self.n_weights = w_off
        self.n_biases = b_off

    # -- parameter plumbing -------------------------------------------------

    @property
    def param_layers(self):
        """List of (ordinal, layer) for layers that carry weights."""
        return list(self._param_layers)

    @property
    def n_params(self) -> int:
        return self.n_weights + self.n_biases

    def flat_weights(self) -> np.ndarray:
        if not self._param_layers:
            return np.zeros(0, dtype=self.dtype)
        return np.concatenate([l.weights.ravel() for _, l in self._param_layers])

    def set_flat_weights(self, w):
        w = np.asarray(w)
        if w.shape != (self.n_weights,):
            raise ShapeError(f"expected weight vector of length {self.n_weights}, got {w.shape}")
        for ordinal, layer in self._param_layers:
            chunk = w[self.weight_index[ordinal]]
            layer.weights = chunk.reshape(layer.weight_shape).astype(self.dtype)

    def flat_biases(self) -> np.ndarray:
        if not self._param_layers:
            return np.zeros(0, dtype=self.dtype)
        return np.concatenate([l.bias.ravel() for _, l in self._param_layers])

    def set_flat_biases(self, b):
        b = np.asarray(b)
        if b.shape != (self.n_biases,):
            raise ShapeError(f"expected bias vector of length {self.n_biases}, got {b.shape}")
        for ordinal, layer in self._param_layers:
            chunk = b[self.bias_index[ordinal]]
            layer.bias = chunk.reshape(layer.bias_shape).astype(self.dtype)

    # -- evaluation ---------------------------------------------------------

    def _check_batch(self, batch):
        batch = np.asarray(batch, dtype=self.dtype)
        if batch.ndim != len(self.input_shape) + 1 or batch.shape[1:] != self.input_shape:
            raise ShapeError(
                f"batch shape {batch.shape} does not match input shape "
                f"(B,)+{self.input_shape}"
            )
        return batch

    def forward(self, batch) -> np.ndarray:
        """Logits for a batch; deterministic given weights and input."""
        x = self._check_batch(batch)
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, batch, labels):
        """Cross-entropy loss and its exact gradient at the current weights.

        Returns ``(loss, FlatGradient)``.
        """
        x = self._check_batch(batch)
        acts = []
        for layer in self.layers:
            acts.append(x)
            x = layer.forward(x)
        loss, g = _softmax_ce_with_grad(x, labels)

        gws = {}
        gbs = {}
        ord_iter = len(self._param_layers)
        for pos in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[pos]
            if layer.kind in PARAM_KINDS:
                g, gw, gb = layer.backward(acts[pos], g)
                gws[ord_iter] = gw
                gbs[ord_iter] = gb
                ord_iter -= 1
            else:
                g, _, _ = layer.backward(acts[pos], g)

        wgrad = np.empty(self.n_weights, dtype=self.dtype)
        bgrad = np.empty(self.n_biases, dtype=self.dtype)
        for ordinal, _ in self._param_layers:
            wgrad[self.weight_index[ordinal]] = gws[ordinal].ravel()
            bgrad[self.bias_index[ordinal]] = gbs[ordinal].ravel()
        return loss, FlatGradient(wgrad, bgrad)

    def __repr__(self):
        inner = ", ".join(repr(l) for l in self.layers)
        return f"Network([{inner}], input_shape={self.input_shape}, dtype={self.dtype.name})"


# ---------------------------------------------------------------------------
# Loss and initialization
# ---------------------------------------------------------------------------


def _check_labels(logits, labels):
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ValueError(f"labels shape {labels.shape} does not match batch of {logits.shape[0]}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(
            f"labels must lie in [0, {logits.shape[1]}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels


def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)  # max-subtraction for stability
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits, labels) -> float:
    """Mean over the batch of -log softmax(logits)[label]."""
    logits = np.asarray(logits)
    labels = _check_labels(logits, labels)
    logp = _log_softmax(logits)
    return float(-logp[np.arange(logits.shape[0]), labels].mean())


def _softmax_ce_with_grad(logits, labels):
    labels = _check_labels(logits, labels)
    b = logits.shape[0]
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(b), labels].mean())
    g = np.exp(logp)
    g[np.arange(b), labels] -= 1
    g /= b
    return loss, g


def kaiming_init(net: Network, rng: np.random.Generator) -> Network:
    """Fan-in-scaled normal init: weights ~ N(0, 2/fan_in), biases zero."""
    for _, layer in net.param_layers:
        std = np.sqrt(2.0 / layer.fan_in)
        layer.weights = rng.normal(0.0, std, layer.weight_shape).astype(net.dtype)
        layer.bias = np.zeros(layer.bias_shape, dtype=net.dtype)
    return net
