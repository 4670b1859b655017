"""Reverse-mode automatic differentiation over numpy arrays.

Deliberately minimal: exactly the operations the forecast network needs.
A Tensor wraps an ndarray and records its parents plus a vector-Jacobian
closure; backward() walks the graph once in reverse topological order and
then frees it, so a second backward on the same graph raises.
"""

from __future__ import annotations

import numpy as np

PROB_FLOOR = 1e-12  # probability floor applied before logs in the CE loss


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_consumed")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._vjp = _vjp
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, " \
               f"requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, c):
        return mul_scalar(self, c)

    __rmul__ = __mul__

    def backward(self):
        """Accumulate gradients of this scalar into every reachable tensor."""
        if self.data.size != 1:
            raise ValueError("backward requires a scalar loss")
        if self._consumed:
            raise RuntimeError("backward already called on this graph; re-run forward")

        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._vjp is not None and node.grad is not None:
                for parent, g in zip(node._parents, node._vjp(node.grad)):
                    if g is None or not parent.requires_grad:
                        continue
                    if g.dtype != parent.data.dtype:
                        g = g.astype(parent.data.dtype)
                    if parent.grad is None:
                        parent.grad = g
                    else:
                        parent.grad = parent.grad + g
            node._vjp = None
            node._consumed = True


def _as_const(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def add(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors (the skip connection)."""
    if x.data.shape != y.data.shape:
        raise ValueError(f"add shape mismatch {x.data.shape} vs {y.data.shape}")
    return Tensor(x.data + y.data, _parents=(x, y), _vjp=lambda g: (g, g))


def mul_scalar(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor(x.data * c, _parents=(x,), _vjp=lambda g: (g * c,))


def square(x: Tensor) -> Tensor:
    return Tensor(x.data ** 2, _parents=(x,), _vjp=lambda g: (2.0 * x.data * g,))


def tensor_sum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(dtype=np.float64))
    return Tensor(out, _parents=(x,),
                  _vjp=lambda g: (np.broadcast_to(g, x.data.shape).copy(),))


def leaky_relu(x: Tensor, alpha: float = 0.3) -> Tensor:
    """y = x for x >= 0 else alpha*x; the slope at exactly 0 is 1."""
    pos = x.data >= 0
    out = np.where(pos, x.data, alpha * x.data)
    return Tensor(out, _parents=(x,),
                  _vjp=lambda g: (np.where(pos, g, alpha * g),))


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None,
            enabled: bool = True) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate); disabled is identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not enabled or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("enabled dropout needs an rng stream")
    keep = (rng.random(x.data.shape) >= rate)
    scale = 1.0 / (1.0 - rate)
    mask = keep.astype(x.data.dtype) * np.asarray(scale, dtype=x.data.dtype)
    return Tensor(x.data * mask, _parents=(x,), _vjp=lambda g: (g * mask,))


def _pad_periodic(x: np.ndarray, p: int) -> np.ndarray:
    """Wrap-pad the longitude axis, zero-pad the latitude axis of (B,C,H,W)."""
    if p == 0:
        return x
    xw = np.concatenate([x[..., -p:], x, x[..., :p]], axis=-1)
    zeros = np.zeros(xw.shape[:2] + (p, xw.shape[3]), dtype=x.dtype)
    return np.concatenate([zeros, xw, zeros], axis=2)


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-size 2-D convolution, periodic in longitude and zero-padded in latitude.

    x: (B, C_in, H, W); w: (C_out, C_in, k, k) with k odd; b: (C_out,).
    """
    B, C, H, W = x.data.shape
    C_out, C_in, k, k2 = w.data.shape
    if k != k2 or k % 2 == 0:
        raise ValueError("kernel must be square with odd size")
    if C_in != C:
        raise ValueError(f"channel mismatch: input {C}, kernel expects {C_in}")
    p = k // 2
    if p > W:
        raise ValueError("kernel too wide for the longitude dimension")

    xpad = _pad_periodic(x.data, p)
    win = np.lib.stride_tricks.sliding_window_view(xpad, (k, k), axis=(2, 3))
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(B, C * k * k, H * W)
    w2 = w.data.reshape(C_out, C * k * k)
    out = np.matmul(w2, cols) + b.data[:, None]
    out = out.reshape(B, C_out, H, W)

    def vjp(g):
        gflat = g.reshape(B, C_out, H * W)
        dw = np.einsum("bij,bkj->ik", gflat, cols).reshape(w.data.shape)
        db = gflat.sum(axis=(0, 2))
        dx = None
        if x.requires_grad:
            dcols = np.matmul(w2.T, gflat)  # (B, C*k*k, H*W)
            d6 = dcols.reshape(B, C, k, k, H, W)
            dxpad = np.zeros_like(xpad)
            for di in range(k):
                for dj in range(k):
                    dxpad[:, :, di:di + H, dj:dj + W] += d6[:, :, di, dj]
            main = dxpad[:, :, p:p + H, :] if p else dxpad
            if p:
                dx = main[..., p:p + W].copy()
                dx[..., :p] += main[..., p + W:]
                dx[..., W - p:] += main[..., :p]
            else:
                dx = main.copy()
        return dx, dw, db

    return Tensor(out, _parents=(x, w, b), _vjp=vjp)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map for row features: (M, F) @ (F, U) + (U,)."""
    out = x.data @ w.data + b.data

    def vjp(g):
        dx = g @ w.data.T if x.requires_grad else None
        return dx, x.data.T @ g, g.sum(axis=0)

    return Tensor(out, _parents=(x, w, b), _vjp=vjp)


def softmax(x: Tensor, axis: int = 1) -> Tensor:
    """Numerically stable softmax along one axis."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * probs).sum(axis=axis, keepdims=True)
        return (probs * (g - inner),)

    return Tensor(probs, _parents=(x,), _vjp=vjp)


def sparse_categorical_cross_entropy(probs: Tensor, true_bins: np.ndarray,
                                     bin_axis: int = 1) -> Tensor:
    """Mean of -log p(true bin), with p floored at PROB_FLOOR before the log.

    true_bins has the shape of probs with the bin axis removed.
    """
    bins = np.asarray(true_bins)
    n_bins = probs.data.shape[bin_axis]
    if bins.min() < 0 or bins.max() >= n_bins:
        raise ValueError(f"bin index out of range [0, {n_bins})")
    take = np.expand_dims(bins, bin_axis)
    p_true = np.take_along_axis(probs.data, take, axis=bin_axis)
    floored = np.maximum(p_true, PROB_FLOOR)
    n = p_true.size
    loss = np.asarray(-np.log(floored, dtype=np.float64).sum() / n)

    def vjp(g):
        local = np.where(p_true >= PROB_FLOOR, -1.0 / floored, 0.0) * (float(g) / n)
        dprobs = np.zeros_like(probs.data)
        np.put_along_axis(dprobs, take, local.astype(probs.data.dtype), axis=bin_axis)
        return (dprobs,)

    return Tensor(loss, _parents=(probs,), _vjp=vjp)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared difference against a constant target."""
    t = _as_const(target)
    if pred.data.shape != t.shape:
        raise ValueError(f"mse shape mismatch {pred.data.shape} vs {t.shape}")
    diff = pred.data - t
    n = diff.size
    loss = np.asarray((diff.astype(np.float64) ** 2).sum() / n)
    return Tensor(loss, _parents=(pred,),
                  _vjp=lambda g: ((2.0 * float(g) / n) * diff,))


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, mean: np.ndarray,
               var: np.ndarray, eps: float = 1e-5, stats_from_batch: bool = True) -> Tensor:
    """Per-channel normalization of (B, C, H, W).

    With stats_from_batch the supplied mean/var must be the batch statistics
    of x (the backward pass differentiates through them); otherwise they are
    treated as constants (inference with running statistics).
    """
    mu = mean.reshape(1, -1, 1, 1)
    v = var.reshape(1, -1, 1, 1)
    inv = 1.0 / np.sqrt(v + eps)
    xhat = (x.data - mu) * inv
    ga = gamma.data.reshape(1, -1, 1, 1)
    out = ga * xhat + beta.data.reshape(1, -1, 1, 1)

    axes = (0, 2, 3)

    def vjp(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dx = None
        if x.requires_grad:
            dxhat = g * ga
            if stats_from_batch:
                term = (dxhat - dxhat.mean(axis=axes, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
                dx = inv * term
            else:
                dx = dxhat * inv
        return dx, dgamma, dbeta

    return Tensor(out, _parents=(x, gamma, beta), _vjp=vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each sample over (C, H, W), then scale/shift per channel."""
    axes = (1, 2, 3)
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    ga = gamma.data.reshape(1, -1, 1, 1)
    out = ga * xhat + beta.data.reshape(1, -1, 1, 1)

    def vjp(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dx = None
        if x.requires_grad:
            dxhat = g * ga
            term = (dxhat - dxhat.mean(axis=axes, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
            dx = inv * term
        return dx, dgamma, dbeta

    return Tensor(out, _parents=(x, gamma, beta), _vjp=vjp)
