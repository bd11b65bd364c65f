"""Hand-written layers for the engagement CNN, forward and backward.

Tensors are plain numpy arrays in NCHW layout.  Each layer caches what its
backward pass needs during ``forward(x, training=True)``; ``backward`` takes
the upstream gradient, fills ``layer.grads`` and returns the input gradient.
Layers compute in the dtype of their parameters (float32 for training,
float64 for gradient checks).
"""

from __future__ import annotations

import numpy as np
from . import _kernels


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def __call__(self, x, training=False):
        return self.forward(x, training)


class Conv2d(Layer):
    """Stride-1 cross-correlation with zero "same" padding.

    Columns are built one sample at a time, which keeps the im2col buffer at
    ``C_in * kh * kw * H * W`` elements regardless of batch size.
    """

    def __init__(self, in_channels, out_channels, kernel_size=(3, 5), rng=None,
                 dtype=np.float32, input_grad=True):
        super().__init__()
        kh, kw = kernel_size
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("same padding needs odd kernel sizes")
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kh * kw
        self.kernel_size = (kh, kw)
        self.padding = (kh // 2, kw // 2)
        self.input_grad = input_grad
        self.params["weight"] = (rng.standard_normal((out_channels, in_channels, kh, kw))
                                 * np.sqrt(2.0 / fan_in)).astype(dtype)
        self.params["bias"] = np.zeros(out_channels, dtype=dtype)
        self._x = None

    def _pad(self, x):
        ph, pw = self.padding
        return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))

    def _columns(self, xp_n, cols):
        # xp_n: (C, H+2ph, W+2pw) -> cols: (C, kh, kw, H, W)
        _kernels.im2col(xp_n, *self.kernel_size, cols)
        return cols

    def forward(self, x, training=False):
        w, b = self.params["weight"], self.params["bias"]
        O, C, kh, kw = w.shape
        if x.ndim != 4 or x.shape[1] != C:
            raise ValueError(f"expected (N, {C}, H, W) input, got {x.shape}")
        x = x.astype(w.dtype, copy=False)
        N, _, H, W = x.shape
        xp = self._pad(x)
        out = np.empty((N, O, H, W), dtype=w.dtype)
        wm = w.reshape(O, -1)
        cols = np.empty((C, kh, kw, H, W), dtype=w.dtype)
        for n in range(N):
            self._columns(xp[n], cols)
            np.matmul(wm, cols.reshape(C * kh * kw, H * W), out=out[n].reshape(O, H * W))
        out += b[None, :, None, None]
        self._x = x if training else None
        return out

    def backward(self, dout):
        x = self._x
        w = self.params["weight"]
        O, C, kh, kw = w.shape
        N, _, H, W = x.shape
        xp = self._pad(x)
        wm = w.reshape(O, -1)
        dw = np.zeros_like(wm)
        dxp = np.zeros_like(xp) if self.input_grad else None
        cols = np.empty((C, kh, kw, H, W), dtype=w.dtype)
        for n in range(N):
            self._columns(xp[n], cols)
            d = dout[n].reshape(O, H * W)
            dw += d @ cols.reshape(C * kh * kw, H * W).T
            if dxp is not None:
                _kernels.col2im((wm.T @ d).reshape(C, kh, kw, H, W), dxp[n])
        self.grads["weight"] = dw.reshape(w.shape)
        self.grads["bias"] = dout.sum(axis=(0, 2, 3)).astype(w.dtype)
        self._x = None
        if dxp is None:
            return None
        ph, pw = self.padding
        return dxp[:, :, ph:ph + H, pw:pw + W]


class BatchNorm2d(Layer):
    """Per-feature-map normalization; running stats follow
    ``running = momentum * running + (1 - momentum) * batch``."""

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self._cache = None

    @staticmethod
    def _channel_sum(a):
        # contiguous per-(n, c) reductions first, then a float64 sum over the batch
        N, C = a.shape[:2]
        return a.reshape(N, C, -1).sum(axis=2).sum(axis=0, dtype=np.float64)

    @staticmethod
    def _channel_dot(a, b):
        N, C = a.shape[:2]
        return np.einsum("ncl,ncl->nc", a.reshape(N, C, -1), b.reshape(N, C, -1)).sum(axis=0, dtype=np.float64)

    def forward(self, x, training=False):
        gamma, beta = self.params["gamma"], self.params["beta"]
        dt = gamma.dtype
        x = x.astype(dt, copy=False)
        if not training:
            scale = (gamma / np.sqrt(self.buffers["running_var"].astype(np.float64) + self.eps)).astype(dt)
            shift = (beta - self.buffers["running_mean"] * scale).astype(dt)
            out = x * scale[None, :, None, None]
            out += shift[None, :, None, None]
            return out
        N, C, H, W = x.shape
        m = N * H * W
        if m < 2:
            raise ValueError("batch norm in training mode needs N*H*W >= 2 per feature map")
        mean = self._channel_sum(x) / m
        xhat = x - mean.astype(dt)[None, :, None, None]
        var = self._channel_dot(xhat, xhat) / m
        inv_std = (1.0 / np.sqrt(var + self.eps)).astype(dt)
        xhat *= inv_std[None, :, None, None]
        rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
        rm[...] = self.momentum * rm + (1 - self.momentum) * mean
        rv[...] = self.momentum * rv + (1 - self.momentum) * var * m / (m - 1)
        self._cache = (xhat, inv_std)
        out = xhat * gamma[None, :, None, None]
        out += beta[None, :, None, None]
        return out

    def backward(self, dout):
        xhat, inv_std = self._cache
        gamma = self.params["gamma"]
        dt = gamma.dtype
        N, C, H, W = dout.shape
        m = N * H * W
        dbeta = self._channel_sum(dout)
        dgamma = self._channel_dot(dout, xhat)
        self.grads["gamma"] = dgamma.astype(dt)
        self.grads["beta"] = dbeta.astype(dt)
        # dx = gamma * inv_std * (dout - mean(dout) - xhat * mean(dout * xhat))
        dx = xhat * (-dgamma / m).astype(dt)[None, :, None, None]
        dx += dout
        dx -= (dbeta / m).astype(dt)[None, :, None, None]
        dx *= (gamma * inv_std)[None, :, None, None]
        self._cache = None
        return dx


class ReLU(Layer):
    def forward(self, x, training=False):
        out = np.maximum(x, 0)
        self._mask = out > 0 if training else None
        return out

    def backward(self, dout):
        dx = dout * self._mask
        self._mask = None
        return dx


def relu(x):
    return np.maximum(np.asarray(x), 0)


class MaxPool2d(Layer):
    """Non-overlapping max pooling; trailing rows/cols that do not fill a window are dropped.

    Ties route the gradient to the first maximum in row-major window order.
    """

    def __init__(self, window=(2, 3)):
        super().__init__()
        self.window = tuple(window)

    def _views(self, x, Ho, Wo):
        ph, pw = self.window
        for i in range(ph):
            for j in range(pw):
                yield i, j, x[:, :, i:Ho * ph:ph, j:Wo * pw:pw]

    def forward(self, x, training=False):
        ph, pw = self.window
        N, C, H, W = x.shape
        Ho, Wo = H // ph, W // pw
        if Ho < 1 or Wo < 1:
            raise ValueError(f"input {H}x{W} smaller than pooling window {ph}x{pw}")
        out = None
        for _, _, v in self._views(x, Ho, Wo):
            out = v.copy() if out is None else np.maximum(out, v, out=out)
        self._cache = (x, out) if training else None
        return out

    def backward(self, dout):
        x, out = self._cache
        Ho, Wo = out.shape[2:]
        dx = np.zeros(x.shape, dtype=dout.dtype)
        free = np.ones(out.shape, dtype=bool)
        for i, j, v in self._views(x, Ho, Wo):
            hit = v == out
            hit &= free
            free &= ~hit
            dx[:, :, i:Ho * self.window[0]:self.window[0], j:Wo * self.window[1]:self.window[1]] = dout * hit
        self._cache = None
        return dx


class BatchNormReluPool(Layer):
    """Batch norm, ReLU and max pooling in one pass, sharing state with the separate layers.

    Batch norm is a per-channel affine map, so pooling can run on the raw
    input: a window's maximum after the map is its maximum (or minimum, when
    the channel's scale is negative) before it, and ReLU commutes with max.
    Only the pooled tensor is normalized, and the backward pass touches the
    full-resolution input twice instead of once per stage.  Outputs and
    gradients match ``pool(relu(bn(x)))`` up to float rounding.
    """

    def __init__(self, bn: BatchNorm2d, pool: MaxPool2d):
        super().__init__()
        self.bn, self.pool = bn, pool
        self.params, self.grads, self.buffers = bn.params, bn.grads, bn.buffers
        self._cache = None

    def _stats(self, x):
        # exact two-pass mean/variance; per-sample temporaries stay cache sized
        N, C = x.shape[:2]
        flat = x.reshape(N, C, -1)
        m = flat.shape[0] * flat.shape[2]
        mean = BatchNorm2d._channel_sum(x) / m
        mean_t = mean.astype(x.dtype)[:, None]
        ss = np.zeros(C)
        for n in range(N):
            xc = flat[n] - mean_t
            ss += np.einsum("cl,cl->c", xc, xc)
        return mean, ss / m, m

    def _pool_select(self, x, scale):
        ph, pw = self.pool.window
        H, W = x.shape[2:]
        if H < ph or W < pw:
            raise ValueError(f"input {H}x{W} smaller than pooling window {ph}x{pw}")
        return _kernels.pool_select(np.ascontiguousarray(x), scale.astype(x.dtype), ph, pw)

    def forward(self, x, training=False):
        bn = self.bn
        gamma, beta = bn.params["gamma"], bn.params["beta"]
        dt = gamma.dtype
        x = x.astype(dt, copy=False)
        if training:
            mean, var, m = self._stats(x)
            if m < 2:
                raise ValueError("batch norm in training mode needs N*H*W >= 2 per feature map")
            rm, rv = bn.buffers["running_mean"], bn.buffers["running_var"]
            rm[...] = bn.momentum * rm + (1 - bn.momentum) * mean
            rv[...] = bn.momentum * rv + (1 - bn.momentum) * var * m / (m - 1)
        else:
            mean = bn.buffers["running_mean"].astype(np.float64)
            var = bn.buffers["running_var"].astype(np.float64)
        inv_std = 1.0 / np.sqrt(var + bn.eps)
        scale = gamma * inv_std
        best, arg = self._pool_select(x, scale)
        xhat_p = (best - mean.astype(dt)[None, :, None, None]) * inv_std.astype(dt)[None, :, None, None]
        out = xhat_p * gamma[None, :, None, None]
        out += beta[None, :, None, None]
        np.maximum(out, 0, out=out)
        self._cache = (x, arg, xhat_p, out > 0, mean, inv_std) if training else None
        return out

    def backward(self, dout):
        x, arg, xhat_p, active, mean, inv_std = self._cache
        gamma = self.bn.params["gamma"]
        dt = gamma.dtype
        N, C, H, W = x.shape
        m = N * H * W
        g = dout * active
        dbeta = g.sum(axis=(0, 2, 3), dtype=np.float64)
        dgamma = np.einsum("nchw,nchw->c", g, xhat_p, dtype=np.float64)
        self.grads["gamma"] = dgamma.astype(dt)
        self.grads["beta"] = dbeta.astype(dt)
        # dx = s * (scatter(g) - dbeta/m - xhat * dgamma/m) with s = gamma * inv_std,
        # xhat = (x - mean) * inv_std, rewritten as a per-channel affine map of x
        s = gamma.astype(np.float64) * inv_std
        a = -s * inv_std * dgamma / m
        b = s * (-dbeta / m + mean * inv_std * dgamma / m)
        gs = g * s.astype(dt)[None, :, None, None]
        ph, pw = self.pool.window
        dx = _kernels.affine_scatter(np.ascontiguousarray(x), a.astype(dt), b.astype(dt), gs, arg, ph, pw)
        self._cache = None
        return dx


class Dropout(Layer):
    """Inverted dropout: identity in eval mode, survivors scaled by ``1/(1-rate)`` in training."""

    def __init__(self, rate=0.5, rng=None):
        super().__init__()
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)

    @property
    def rate(self):
        return self._rate

    @rate.setter
    def rate(self, value):
        if not 0.0 <= value < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {value}")
        self._rate = float(value)

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape, dtype=np.float32) < keep).astype(x.dtype) / x.dtype.type(keep)
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask


class Flatten(Layer):
    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Linear(Layer):
    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["weight"] = (rng.standard_normal((out_features, in_features))
                                 * np.sqrt(2.0 / in_features)).astype(dtype)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)

    def forward(self, x, training=False):
        w = self.params["weight"]
        if x.ndim != 2 or x.shape[1] != w.shape[1]:
            raise ValueError(f"expected (N, {w.shape[1]}) input, got {x.shape}")
        x = x.astype(w.dtype, copy=False)
        self._x = x if training else None
        return x @ w.T + self.params["bias"]

    def backward(self, dout):
        self.grads["weight"] = dout.T @ self._x
        self.grads["bias"] = dout.sum(axis=0)
        dx = dout @ self.params["weight"]
        self._x = None
        return dx


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bce(logits, labels):
    """Mean cross entropy of softmax probabilities against integer labels.

    Returns ``(loss, probabilities, dloss/dlogits)``.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    if z.ndim != 2 or z.shape[1] != 2:
        raise ValueError(f"expected (N, 2) logits, got {z.shape}")
    if y.shape != (z.shape[0],) or not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be a length-N vector of 0/1")
    y = y.astype(np.intp)
    n = z.shape[0]
    m = z.max(axis=1, keepdims=True)
    logp = z - (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))
    loss = -logp[np.arange(n), y].mean()
    p = np.exp(logp)
    grad = p.copy()
    grad[np.arange(n), y] -= 1.0
    return float(loss), p, grad / n


class Adam:
    """Bias-corrected Adam over a dict of parameter arrays, updated in place."""

    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        for k, g in grads.items():
            if k not in self.params or np.shape(g) != self.params[k].shape:
                raise ValueError(f"gradient for {k!r} has shape {np.shape(g)}, "
                                 f"parameter is {self.params[k].shape if k in self.params else 'missing'}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            p, m, v = self.params[k], self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * np.square(g)
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)
