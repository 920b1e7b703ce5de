"""Primitive layers with explicit forward and backward passes.

All activations are ``(N, C, D, H, W)`` arrays.  Layers keep their
parameters in a ``params`` dict and accumulate gradients into a parallel
``grads`` dict during ``backward``; dtype follows the inputs/parameters so
the same code runs in float32 for training and float64 for gradient
checks.  Convolutions use zero "same" padding, so spatial extent is
governed purely by stride.
"""

from __future__ import annotations

import numpy as np

NAN_CHECKS = False  # debug hook: verify every layer output is finite


def _check(arr: np.ndarray) -> np.ndarray:
    if NAN_CHECKS and not np.all(np.isfinite(arr)):
        raise FloatingPointError("non-finite values in layer output")
    return arr


def _same_padding(size: int, k: int, s: int) -> tuple[int, int, int]:
    out = -(-size // s)
    pad = max((out - 1) * s + k - size, 0)
    return out, pad // 2, pad - pad // 2


class Layer:
    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def zero_grads(self) -> None:
        for k in self.params:
            self.grads[k] = np.zeros_like(self.params[k])

    def cast(self, dtype: type) -> None:
        for k in self.params:
            self.params[k] = self.params[k].astype(dtype)


class Conv3d(Layer):
    """Strided 3D convolution with zero same-padding (im2col + GEMM)."""

    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: tuple[int, int, int],
        stride: tuple[int, int, int] = (1, 1, 1),
        rng: np.random.Generator | None = None,
    ) -> None:
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride = kernel, stride
        rng = rng or np.random.default_rng(0)
        fan_in = c_in * int(np.prod(kernel))
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, *kernel))
        self.params = {"W": w.astype(np.float32), "b": np.zeros(c_out, dtype=np.float32)}
        self.zero_grads()
        self._cache: tuple | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, c, d, h, w = x.shape
        kz, ky, kx = self.kernel
        sz, sy, sx = self.stride
        do, plz, phz = _same_padding(d, kz, sz)
        ho, ply, phy = _same_padding(h, ky, sy)
        wo, plx, phx = _same_padding(w, kx, sx)
        xp = np.pad(x, ((0, 0), (0, 0), (plz, phz), (ply, phy), (plx, phx)))
        k = kz * ky * kx
        cols = np.empty((n, do, ho, wo, k, c), dtype=x.dtype)
        idx = 0
        for i in range(kz):
            for j in range(ky):
                for l in range(kx):
                    xs = xp[:, :, i : i + sz * do : sz, j : j + sy * ho : sy, l : l + sx * wo : sx]
                    cols[..., idx, :] = np.moveaxis(xs, 1, -1)
                    idx += 1
        x2 = cols.reshape(n * do * ho * wo, k * c)
        wmat = self.params["W"].transpose(2, 3, 4, 1, 0).reshape(k * c, self.c_out)
        y2 = x2 @ wmat + self.params["b"]
        y = np.moveaxis(y2.reshape(n, do, ho, wo, self.c_out), -1, 1)
        self._cache = (x2, x.shape, xp.shape, (do, ho, wo), (plz, ply, plx))
        return _check(np.ascontiguousarray(y))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        assert self._cache is not None, "forward must run before backward"
        x2, x_shape, xp_shape, outs, pads = self._cache
        n, c, d, h, w = x_shape
        do, ho, wo = outs
        kz, ky, kx = self.kernel
        sz, sy, sx = self.stride
        k = kz * ky * kx
        dy2 = np.moveaxis(dy, 1, -1).reshape(n * do * ho * wo, self.c_out)
        dwmat = x2.T @ dy2
        self.grads["W"] += dwmat.reshape(kz, ky, kx, c, self.c_out).transpose(4, 3, 0, 1, 2)
        self.grads["b"] += dy2.sum(axis=0)
        wmat = self.params["W"].transpose(2, 3, 4, 1, 0).reshape(k * c, self.c_out)
        dcols = (dy2 @ wmat.T).reshape(n, do, ho, wo, k, c)
        dxp = np.zeros(xp_shape, dtype=dy.dtype)
        idx = 0
        for i in range(kz):
            for j in range(ky):
                for l in range(kx):
                    sl = (
                        slice(None),
                        slice(None),
                        slice(i, i + sz * do, sz),
                        slice(j, j + sy * ho, sy),
                        slice(l, l + sx * wo, sx),
                    )
                    dxp[sl] += np.moveaxis(dcols[..., idx, :], -1, 1)
                    idx += 1
        plz, ply, plx = pads
        return dxp[:, :, plz : plz + d, ply : ply + h, plx : plx + w]


class Deconv3d(Layer):
    """Transposed convolution restricted to kernel == stride (non-overlapping)."""

    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: tuple[int, int, int],
        rng: np.random.Generator | None = None,
    ) -> None:
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.kernel = kernel
        rng = rng or np.random.default_rng(0)
        fan_in = c_in
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_in, c_out, *kernel))
        self.params = {"W": w.astype(np.float32), "b": np.zeros(c_out, dtype=np.float32)}
        self.zero_grads()
        self._cache: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, c, d, h, w = x.shape
        kz, ky, kx = self.kernel
        t = np.tensordot(x, self.params["W"], axes=([1], [0]))  # (N,D,H,W,O,kz,ky,kx)
        y = t.transpose(0, 4, 1, 5, 2, 6, 3, 7).reshape(n, self.c_out, d * kz, h * ky, w * kx)
        y = y + self.params["b"][None, :, None, None, None]
        self._cache = x
        return _check(np.ascontiguousarray(y))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x = self._cache
        assert x is not None, "forward must run before backward"
        n, c, d, h, w = x.shape
        kz, ky, kx = self.kernel
        dt = dy.reshape(n, self.c_out, d, kz, h, ky, w, kx).transpose(0, 2, 4, 6, 1, 3, 5, 7)
        self.grads["W"] += np.tensordot(x, dt, axes=([0, 2, 3, 4], [0, 1, 2, 3]))
        self.grads["b"] += dy.sum(axis=(0, 2, 3, 4))
        dx = np.tensordot(dt, self.params["W"], axes=([4, 5, 6, 7], [1, 2, 3, 4]))
        return np.moveaxis(dx, -1, 1)


class InstanceNorm3d(Layer):
    """Per-sample, per-channel normalization with learnable affine."""

    def __init__(self, channels: int, eps: float = 1e-5) -> None:
        super().__init__()
        self.eps = eps
        self.params = {
            "gamma": np.ones(channels, dtype=np.float32),
            "beta": np.zeros(channels, dtype=np.float32),
        }
        self.zero_grads()
        self._cache: tuple | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        mu = x.mean(axis=(2, 3, 4), keepdims=True)
        var = x.var(axis=(2, 3, 4), keepdims=True)
        inv = 1.0 / np.sqrt(var + np.asarray(self.eps, dtype=x.dtype))
        xhat = (x - mu) * inv
        g = self.params["gamma"][None, :, None, None, None]
        b = self.params["beta"][None, :, None, None, None]
        self._cache = (xhat, inv)
        return _check(g * xhat + b)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv = self._cache  # type: ignore[misc]
        self.grads["gamma"] += (dy * xhat).sum(axis=(0, 2, 3, 4))
        self.grads["beta"] += dy.sum(axis=(0, 2, 3, 4))
        dxhat = dy * self.params["gamma"][None, :, None, None, None]
        m1 = dxhat.mean(axis=(2, 3, 4), keepdims=True)
        m2 = (dxhat * xhat).mean(axis=(2, 3, 4), keepdims=True)
        return inv * (dxhat - m1 - xhat * m2)


class ReLU(Layer):
    def __init__(self) -> None:
        super().__init__()
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return _check(np.where(self._mask, x, np.zeros((), dtype=x.dtype)))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return np.where(self._mask, dy, np.zeros((), dtype=dy.dtype))


class MaxPool3d(Layer):
    """Max pooling with kernel == stride; ties route gradient to the first max."""

    def __init__(self, kernel: tuple[int, int, int]) -> None:
        super().__init__()
        self.kernel = kernel
        self._cache: tuple | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, c, d, h, w = x.shape
        kz, ky, kx = self.kernel
        if d % kz or h % ky or w % kx:
            raise ValueError(f"pool kernel {self.kernel} does not divide spatial dims {(d, h, w)}")
        dz, hy, wx = d // kz, h // ky, w // kx
        xw = x.reshape(n, c, dz, kz, hy, ky, wx, kx).transpose(0, 1, 2, 4, 6, 3, 5, 7)
        xw = xw.reshape(n, c, dz, hy, wx, kz * ky * kx)
        idx = xw.argmax(axis=-1)
        y = np.take_along_axis(xw, idx[..., None], axis=-1)[..., 0]
        self._cache = (idx, x.shape)
        return _check(y)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        idx, x_shape = self._cache  # type: ignore[misc]
        n, c, d, h, w = x_shape
        kz, ky, kx = self.kernel
        dz, hy, wx = d // kz, h // ky, w // kx
        dxw = np.zeros((n, c, dz, hy, wx, kz * ky * kx), dtype=dy.dtype)
        np.put_along_axis(dxw, idx[..., None], dy[..., None], axis=-1)
        dxw = dxw.reshape(n, c, dz, hy, wx, kz, ky, kx).transpose(0, 1, 2, 5, 3, 6, 4, 7)
        return dxw.reshape(n, c, d, h, w)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

PROB_CLAMP = 1e-7


def softmax(logits: np.ndarray) -> np.ndarray:
    """Channel-axis softmax, numerically stabilized."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def weighted_ce(
    probs: np.ndarray,
    target: np.ndarray,
    weights: tuple[float, float],
) -> tuple[float, np.ndarray]:
    """Mean weighted cross-entropy and its gradient w.r.t. the logits.

    ``probs`` must be softmax outputs, which makes the logit gradient the
    analytic ``w * (p - onehot) / n``; the probability entering the log is
    clamped below by PROB_CLAMP.
    """
    n, c = probs.shape[:2]
    if target.shape != (n, *probs.shape[2:]):
        raise ValueError(f"target shape {target.shape} does not match probs {probs.shape}")
    wvec = np.asarray(weights, dtype=probs.dtype)
    wvox = wvec[target]
    count = target.size
    pt = np.take_along_axis(probs, target[:, None], axis=1)[:, 0]
    loss = float((wvox * -np.log(np.maximum(pt, PROB_CLAMP))).sum() / count)
    dlogits = probs.copy()
    np.put_along_axis(
        dlogits,
        target[:, None],
        np.take_along_axis(dlogits, target[:, None], axis=1) - 1.0,
        axis=1,
    )
    dlogits *= wvox[:, None] / count
    return loss, dlogits
