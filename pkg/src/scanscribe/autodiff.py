"""Small reverse-mode autodiff engine on dense numpy arrays.

Tensors wrap float arrays (float32 for training, float64 for gradient
checks), record their parents, and backpropagate through a topological
sort of the tape.  Only the operations the stack-regression networks need
are implemented; convolutions go through an im2col/matmul path so the hot
loops stay inside BLAS.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericError, ShapeError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def backward(self):
        if self.data.size != 1:
            raise NumericError("backward requires a scalar loss")
        if not self._parents and self._backward is None:
            raise NumericError("backward before forward: no recorded graph")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self):
        self.grad = None


def _accum(t: Tensor, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to the original shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, _parents=(a, b))

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, _parents=(a, b))

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    out._backward = backward
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), _parents=(a,))

    def backward(g):
        _accum(a, g.reshape(a.shape))

    out._backward = backward
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0), _parents=(a,))

    def backward(g):
        _accum(a, g * mask)

    out._backward = backward
    return out


def softmax(a: Tensor) -> Tensor:
    """Numerically stabilized softmax over a 1D tensor."""
    if a.data.ndim != 1 or a.data.size == 0:
        raise ShapeError(f"softmax expects a non-empty vector, got shape {a.shape}")
    z = a.data - a.data.max()
    e = np.exp(z)
    s = e / e.sum()
    out = Tensor(s, _parents=(a,))

    def backward(g):
        _accum(a, s * (g - float(np.dot(g, s))))

    out._backward = backward
    return out


def fully_connected(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w.T + b for x of shape (N, F) or (F,), w of shape (O, F)."""
    squeeze = x.data.ndim == 1
    xd = x.data[None, :] if squeeze else x.data
    if xd.ndim != 2 or w.data.ndim != 2 or xd.shape[1] != w.data.shape[1]:
        raise ShapeError(f"fully_connected shapes {x.shape} and {w.shape} do not match")
    y = xd @ w.data.T + b.data
    out = Tensor(y[0] if squeeze else y, _parents=(x, w, b))

    def backward(g):
        gd = g[None, :] if squeeze else g
        _accum(x, (gd @ w.data)[0] if squeeze else gd @ w.data)
        _accum(w, gd.T @ xd)
        _accum(b, gd.sum(axis=0))

    out._backward = backward
    return out


def mse_loss(pred: Tensor, target) -> Tensor:
    t = np.asarray(target, dtype=pred.data.dtype)
    if pred.shape != t.shape:
        raise ShapeError(f"mse shapes {pred.shape} and {t.shape} do not match")
    diff = pred.data.astype(np.float64) - t.astype(np.float64)
    out = Tensor(np.array((diff ** 2).mean(), dtype=pred.data.dtype), _parents=(pred,))

    def backward(g):
        _accum(pred, (2.0 / diff.size) * diff * g)

    out._backward = backward
    return out


def sum_weighted(features: Tensor, alpha: Tensor) -> Tensor:
    """Weighted sum over the leading axis: (S, ...) x (S,) -> (...)."""
    if alpha.data.ndim != 1 or features.data.shape[0] != alpha.data.shape[0]:
        raise ShapeError(
            f"weighted sum shapes {features.shape} and {alpha.shape} do not match"
        )
    out = Tensor(np.tensordot(alpha.data, features.data, axes=1), _parents=(features, alpha))

    def backward(g):
        _accum(features, alpha.data.reshape((-1,) + (1,) * g.ndim) * g[None])
        _accum(alpha, np.tensordot(features.data, g, axes=g.ndim))

    out._backward = backward
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over all axes after the channel axis: (N, C, *spatial) -> (N, C)."""
    if x.data.ndim < 3:
        raise ShapeError(f"global_avg_pool expects (N, C, ...), got shape {x.shape}")
    axes = tuple(range(2, x.data.ndim))
    n = int(np.prod([x.data.shape[i] for i in axes]))
    out = Tensor(x.data.mean(axis=axes), _parents=(x,))

    def backward(g):
        _accum(x, np.broadcast_to(g.reshape(g.shape + (1,) * len(axes)), x.shape) / n)

    out._backward = backward
    return out


def _out_and_pad(size, k, stride, padding):
    if padding == "same":
        o = -(-size // stride)
        total = max((o - 1) * stride + k - size, 0)
    elif padding == "valid":
        if size < k:
            raise ShapeError(f"valid padding: input {size} smaller than kernel {k}")
        o = (size - k) // stride + 1
        total = 0
    else:
        raise NumericError(f"unknown padding {padding!r}")
    return o, total // 2, total - total // 2


def convolution(x: Tensor, w: Tensor, b: Tensor, stride=1, padding="same") -> Tensor:
    """N-d cross-correlation; rank inferred from the kernel (2D or 3D).

    x: (N, C, *spatial), w: (O, C, *kernel), b: (O,).  stride may be an int
    or a per-axis tuple; padding is "same" (ceil(in/stride) output) or
    "valid".
    """
    nd = w.data.ndim - 2
    if nd not in (2, 3):
        raise ShapeError(f"kernel must be rank 4 or 5, got shape {w.shape}")
    if x.data.ndim != nd + 2 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"convolution shapes {x.shape} and {w.shape} do not match")
    strides = (stride,) * nd if np.isscalar(stride) else tuple(stride)
    if any(s < 1 for s in strides):
        raise NumericError(f"stride must be >= 1, got {strides}")
    n, c = x.data.shape[:2]
    spatial = x.data.shape[2:]
    kdims = w.data.shape[2:]
    o = w.data.shape[0]

    outs, pads = [], []
    for size, k, s in zip(spatial, kdims, strides):
        osz, p0, p1 = _out_and_pad(size, k, s, padding)
        outs.append(osz)
        pads.append((p0, p1))
    xp = np.pad(x.data, [(0, 0), (0, 0)] + pads)

    # gather patches: (N, C, *kdims, *outs)
    patches = np.empty((n, c) + tuple(kdims) + tuple(outs), dtype=x.data.dtype)
    for kidx in np.ndindex(*kdims):
        sl = tuple(
            slice(ki, ki + (osz - 1) * s + 1, s)
            for ki, osz, s in zip(kidx, outs, strides)
        )
        patches[(slice(None), slice(None)) + kidx] = xp[(slice(None), slice(None)) + sl]

    ckk = c * int(np.prod(kdims))
    p = int(np.prod(outs))
    cols = patches.reshape(n, ckk, p)
    wmat = w.data.reshape(o, ckk)
    y = np.matmul(wmat, cols) + b.data[:, None]
    out = Tensor(y.reshape((n, o) + tuple(outs)), _parents=(x, w, b))

    def backward(g):
        gm = g.reshape(n, o, p)
        _accum(w, np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape))
        _accum(b, gm.sum(axis=(0, 2)))
        dcols = np.matmul(wmat.T, gm)  # (N, CKK, P)
        dpatch = dcols.reshape((n, c) + tuple(kdims) + tuple(outs))
        dxp = np.zeros_like(xp)
        for kidx in np.ndindex(*kdims):
            sl = tuple(
                slice(ki, ki + (osz - 1) * s + 1, s)
                for ki, osz, s in zip(kidx, outs, strides)
            )
            dxp[(slice(None), slice(None)) + sl] += dpatch[(slice(None), slice(None)) + kidx]
        crop = tuple(
            slice(p0, p0 + size) for (p0, _), size in zip(pads, spatial)
        )
        _accum(x, dxp[(slice(None), slice(None)) + crop])

    out._backward = backward
    return out


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str = "train",
    eps: float = 1e-5,
    momentum: float = 0.9,
) -> Tensor:
    """Per-channel normalization over batch and spatial axes.

    Train mode uses batch statistics and updates the running arrays in
    place; infer mode uses the running statistics only; batch mode uses
    batch statistics without touching the running arrays (for models whose
    inference batch is a whole input stack).
    """
    if x.data.ndim < 2:
        raise ShapeError(f"batch_norm expects (N, C, ...), got shape {x.shape}")
    ch = x.data.shape[1]
    if gamma.data.shape != (ch,) or beta.data.shape != (ch,):
        raise ShapeError(
            f"batch_norm channel mismatch: input {x.shape}, gamma {gamma.shape}"
        )
    axes = (0,) + tuple(range(2, x.data.ndim))
    m = x.data.size // ch
    if m == 0:
        raise NumericError("batch_norm: zero elements per channel")
    bshape = (1, ch) + (1,) * (x.data.ndim - 2)

    if mode in ("train", "batch"):
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if mode == "train":
            running_mean *= momentum
            running_mean += (1 - momentum) * mean
            running_var *= momentum
            running_var += (1 - momentum) * var
    elif mode == "infer":
        mean = running_mean
        var = running_var
    else:
        raise NumericError(f"unknown batch_norm mode {mode!r}")

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = Tensor(gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape), _parents=(x, gamma, beta))

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        _accum(gamma, dgamma)
        _accum(beta, dbeta)
        scale = (gamma.data * inv_std).reshape(bshape)
        if mode in ("train", "batch"):
            dx = scale * (
                g
                - dbeta.reshape(bshape) / m
                - xhat * dgamma.reshape(bshape) / m
            )
        else:
            dx = scale * g
        _accum(x, dx)

    out._backward = backward
    return out


class Adam:
    """Standard first/second-moment optimizer with bias correction."""

    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        b1t = 1 - self.beta1 ** self.t
        b2t = 1 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} vs parameter {p.data.shape}")
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def uniform_init(rng: np.random.Generator, shape, fan_in, dtype=np.float32) -> np.ndarray:
    """Fan-in-scaled uniform initialization."""
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def numerical_gradient(f, param: Tensor, indices, eps=1e-3):
    """Central finite differences of scalar-valued f at selected entries."""
    flat = param.data.reshape(-1)
    grads = []
    for i in indices:
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f())
        flat[i] = orig - eps
        lo = float(f())
        flat[i] = orig
        grads.append((hi - lo) / (2 * eps))
    return np.array(grads)
