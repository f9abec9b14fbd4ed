"""Dense layers with hand-written forward and backward passes.

Arrays are plain numpy arrays, batch-first. Every layer caches what its
backward pass needs during ``forward`` and fills ``self.grads`` (one entry per
entry of ``self.params``, same shape) during ``backward``. Gradients are
overwritten, not accumulated, on each backward call.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError, LabelError


def glorot_uniform(rng, fan_in, fan_out, shape, dtype=np.float64):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Base class: named parameters, their gradients, optional sublayers."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.sublayers: dict[str, Layer] = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    __call__ = forward

    def named_parameters(self, prefix=""):
        """Yield ``(qualified_name, owner_layer, key)`` in a fixed order."""
        for key in self.params:
            yield prefix + key, self, key
        for name, sub in self.sublayers.items():
            yield from sub.named_parameters(prefix + name + ".")

    def state_dict(self):
        return {name: owner.params[key] for name, owner, key in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        for name, owner, key in self.named_parameters():
            if name not in state:
                if strict:
                    raise KeyError(f"missing parameter {name!r}")
                continue
            value = np.asarray(state[name])
            if value.shape != owner.params[key].shape:
                raise DimensionError(
                    f"parameter {name!r}: expected shape {owner.params[key].shape}, got {value.shape}"
                )
            owner.params[key] = value.astype(owner.params[key].dtype)

    def astype(self, dtype):
        for _, owner, key in self.named_parameters():
            owner.params[key] = owner.params[key].astype(dtype)
        return self

    def zero_grads(self):
        for _, owner, key in self.named_parameters():
            owner.grads[key] = np.zeros_like(owner.params[key])

    def n_params(self):
        return int(sum(owner.params[key].size for _, owner, key in self.named_parameters()))


class Sequential(Layer):
    def __init__(self, *layers):
        super().__init__()
        for i, layer in enumerate(layers):
            self.sublayers[str(i)] = layer

    def forward(self, x):
        for layer in self.sublayers.values():
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(list(self.sublayers.values())):
            dy = layer.backward(dy)
            if dy is None:
                break
        return dy


# ---------------------------------------------------------------------------
# primitive functions


def matmul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    return a @ b


def matmul_backward(a, b, dc):
    """Return ``(dA, dB)`` for ``C = A @ B`` (2-D or batched over leading axes)."""
    da = dc @ np.swapaxes(b, -1, -2)
    db = np.swapaxes(a, -1, -2) @ dc
    # reduce broadcast batch axes of b
    while db.ndim > b.ndim:
        db = db.sum(axis=0)
    return da, db


def softmax(x, axis=-1):
    x = np.asarray(x)
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(y, dy, axis=-1):
    return y * (dy - (dy * y).sum(axis=axis, keepdims=True))


def cross_entropy(logits, labels):
    """Mean negative log-likelihood over the batch.

    Returns ``(loss, dlogits)`` where ``dlogits = (softmax - onehot) / B``.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise LabelError(f"labels must lie in [0, {c}); got range [{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad /= n
    return float(loss), grad.astype(logits.dtype)


# ---------------------------------------------------------------------------
# layers


class Linear(Layer):
    """``y = x @ W + b`` over the last axis."""

    def __init__(self, n_in, n_out, rng=None, dtype=np.float64, bias=True, zero_init=False):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        if zero_init:
            self.params["W"] = np.zeros((n_in, n_out), dtype=dtype)
        else:
            self.params["W"] = glorot_uniform(rng, n_in, n_out, (n_in, n_out), dtype)
        if bias:
            self.params["b"] = np.zeros(n_out, dtype=dtype)
        self._x = None

    def forward(self, x):
        W = self.params["W"]
        if x.shape[-1] != W.shape[0]:
            raise DimensionError(f"Linear: input {x.shape} does not match weight {W.shape}")
        self._x = x
        y = x @ W
        if "b" in self.params:
            y = y + self.params["b"]
        return y

    def backward(self, dy):
        x = self._x
        W = self.params["W"]
        x2 = x.reshape(-1, x.shape[-1])
        d2 = dy.reshape(-1, dy.shape[-1])
        self.grads["W"] = x2.T @ d2
        if "b" in self.params:
            self.grads["b"] = d2.sum(axis=0)
        return dy @ W.T


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dy):
        return dy * self._mask


class Softmax(Layer):
    def __init__(self, axis=-1):
        super().__init__()
        self.axis = axis

    def forward(self, x):
        self._y = softmax(x, self.axis)
        return self._y

    def backward(self, dy):
        return softmax_backward(self._y, dy, self.axis)


class LayerNorm(Layer):
    """Normalize each vector along the last axis, then scale and shift."""

    def __init__(self, d, eps=1e-5, dtype=np.float64):
        super().__init__()
        if d < 1 or eps <= 0:
            raise ValueError("LayerNorm needs d >= 1 and eps > 0")
        self.eps = eps
        self.params["gamma"] = np.ones(d, dtype=dtype)
        self.params["beta"] = np.zeros(d, dtype=dtype)

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv
        self._xhat, self._inv = xhat, inv
        return xhat * self.params["gamma"] + self.params["beta"]

    def backward(self, dy):
        xhat, inv = self._xhat, self._inv
        d = xhat.shape[-1]
        lead = tuple(range(dy.ndim - 1))
        self.grads["gamma"] = (dy * xhat).sum(axis=lead)
        self.grads["beta"] = dy.sum(axis=lead)
        g = dy * self.params["gamma"]
        return inv / d * (d * g - g.sum(axis=-1, keepdims=True)
                          - xhat * (g * xhat).sum(axis=-1, keepdims=True))


def conv_output_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


class Conv2d(Layer):
    """Cross-correlation via im2col.

    ``layout="NCHW"`` (default) takes ``(N, C, H, W)`` or ``(C, H, W)``;
    ``layout="NHWC"`` takes channels-last input and avoids transposes, which
    is what the encoders use. With ``input_grad=False`` backward skips the
    input gradient (first layer on raw data).
    """

    def __init__(self, c_in, c_out, k=3, stride=1, pad=None, rng=None, dtype=np.float64, bias=True,
                 layout="NCHW", input_grad=True):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c_in, self.c_out, self.k, self.stride = c_in, c_out, k, stride
        self.pad = k // 2 if pad is None else pad
        if layout not in ("NCHW", "NHWC"):
            raise ValueError("layout must be NCHW or NHWC")
        self.layout, self.input_grad = layout, input_grad
        fan_in, fan_out = c_in * k * k, c_out * k * k
        self.params["W"] = glorot_uniform(rng, fan_in, fan_out, (c_out, c_in, k, k), dtype)
        if bias:
            self.params["b"] = np.zeros(c_out, dtype=dtype)

    def forward(self, x):
        squeeze = x.ndim == 3
        if squeeze:
            x = x[None]
        if self.layout == "NCHW":
            if x.shape[1] != self.c_in:
                raise DimensionError(f"Conv2d: expected {self.c_in} input channels, got shape {x.shape}")
            y = self._forward_nhwc(x.transpose(0, 2, 3, 1)).transpose(0, 3, 1, 2)
        else:
            y = self._forward_nhwc(x)
        self._squeeze = squeeze
        return y[0] if squeeze else y

    def backward(self, dy):
        if self._squeeze:
            dy = dy[None]
        if self.layout == "NCHW":
            dx = self._backward_nhwc(dy.transpose(0, 2, 3, 1))
            dx = None if dx is None else dx.transpose(0, 3, 1, 2)
        else:
            dx = self._backward_nhwc(dy)
        if dx is not None and self._squeeze:
            dx = dx[0]
        return dx

    def _forward_nhwc(self, x):
        n, h, w, c = x.shape
        k, s, p = self.k, self.stride, self.pad
        if c != self.c_in:
            raise DimensionError(f"Conv2d: expected {self.c_in} input channels, got shape {x.shape}")
        if h + 2 * p < k or w + 2 * p < k:
            raise DimensionError(f"Conv2d: kernel {k}x{k} larger than padded input {(h + 2 * p, w + 2 * p)}")
        ho, wo = conv_output_size(h, k, s, p), conv_output_size(w, k, s, p)
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]  # (n, ho, wo, c, k, k)
        cols = win.reshape(n * ho * wo, c * k * k)
        Wm = self.params["W"].reshape(self.c_out, -1)
        y = cols @ Wm.T
        if "b" in self.params:
            y += self.params["b"]
        self._cache = (x.shape, xp.shape, cols, ho, wo)
        return y.reshape(n, ho, wo, self.c_out)

    def _backward_nhwc(self, dy):
        xshape, xpshape, cols, ho, wo = self._cache
        n, h, w, c = xshape
        k, s, p = self.k, self.stride, self.pad
        d2 = dy.reshape(-1, self.c_out)
        Wm = self.params["W"].reshape(self.c_out, -1)
        self.grads["W"] = (d2.T @ cols).reshape(self.params["W"].shape)
        if "b" in self.params:
            self.grads["b"] = d2.sum(axis=0)
        if not self.input_grad:
            return None
        dcols = (d2 @ Wm).reshape(n, ho, wo, c, k, k)
        dxp = np.zeros(xpshape, dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += dcols[..., i, j]
        if p:
            dxp = dxp[:, p:p + h, p:p + w, :]
        return dxp


class MaxPool2(Layer):
    """2x2 stride-2 max pooling over two spatial axes (the last two by default,
    ``channels_last=True`` pools axes -3 and -2).

    Odd extents are padded by replicating the last row/column. Backward routes
    each window's gradient to its first maximal element in row-major order.
    """

    def __init__(self, channels_last=False):
        super().__init__()
        self.channels_last = channels_last

    def forward(self, x):
        if self.channels_last:
            x = np.moveaxis(x, -1, 0)
        h, w = x.shape[-2:]
        ph, pw = h % 2, w % 2
        if ph or pw:
            pad = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
            x = np.pad(x, pad, mode="edge")
        q = (x[..., 0::2, 0::2], x[..., 0::2, 1::2], x[..., 1::2, 0::2], x[..., 1::2, 1::2])
        y = np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3]))
        taken = np.zeros(y.shape, dtype=bool)
        masks = []
        for part in q:
            m = (part == y) & ~taken
            taken |= m
            masks.append(m)
        self._cache = ((h, w), x.shape, masks)
        return np.moveaxis(y, 0, -1) if self.channels_last else y

    def backward(self, dy):
        (h, w), pshape, masks = self._cache
        if self.channels_last:
            dy = np.moveaxis(dy, -1, 0)
        dxp = np.zeros(pshape, dtype=dy.dtype)
        for (a, b), m in zip(((0, 0), (0, 1), (1, 0), (1, 1)), masks):
            dxp[..., a::2, b::2] = np.where(m, dy, 0)
        H, W = pshape[-2:]
        if H != h:
            dxp[..., h - 1, :] += dxp[..., h, :]
        if W != w:
            dxp[..., :, w - 1] += dxp[..., :, w]
        dx = dxp[..., :h, :w]
        return np.ascontiguousarray(np.moveaxis(dx, 0, -1) if self.channels_last else dx)


def bilinear_matrix(n_in, factor, dtype=np.float64):
    """Row-interpolation matrix ``(factor*n_in, n_in)``, align-corners false."""
    n_out = n_in * factor
    src = (np.arange(n_out) + 0.5) / factor - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    U = np.zeros((n_out, n_in), dtype=dtype)
    rows = np.arange(n_out)
    np.add.at(U, (rows, i0), 1 - t)
    np.add.at(U, (rows, i1), t)
    return U


class BilinearUpsample(Layer):
    """Fixed (non-learned) bilinear upsampling of the last two axes."""

    def __init__(self, factor):
        super().__init__()
        if factor not in (2, 4, 8):
            raise ValueError(f"upsample factor must be 2, 4 or 8, got {factor}")
        self.factor = factor

    def forward(self, x):
        h, w = x.shape[-2:]
        self._Uh = bilinear_matrix(h, self.factor, x.dtype)
        self._Uw = bilinear_matrix(w, self.factor, x.dtype)
        return self._Uh @ x @ self._Uw.T

    def backward(self, dy):
        return self._Uh.T @ dy @ self._Uw


class Flatten(Layer):
    def __init__(self, start=1):
        super().__init__()
        self.start = start

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(*x.shape[:self.start], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)
