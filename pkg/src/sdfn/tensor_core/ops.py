"""Differentiable operations used by the two networks and their losses."""
import numpy as np

from .. import kernels
from .tensor import Tensor, _as_tensor

BCE_EPS = 1e-7


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv_output_extent(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def conv2d(x, weight, bias=None, stride=1, pad=0):
    """Cross-correlation of (N,C,H,W) with (K,C,kh,kw) weights, plus bias."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weights, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    k, wc, kh, kw = weight.shape
    if wc != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, weights expect {wc}")
    if bias is not None and bias.shape != (k,):
        raise ShapeError(f"conv2d bias shape {bias.shape} != ({k},)")
    if stride < 1 or pad < 0:
        raise ConfigError(f"invalid stride={stride} pad={pad}")
    ho = conv_output_extent(h, kh, stride, pad)
    wo = conv_output_extent(w, kw, stride, pad)
    if ho < 1 or wo < 1:
        raise ConfigError(f"conv2d output extent would be {ho}x{wo}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    if kh == 1 and kw == 1 and stride == 1:
        cols = x.data.transpose(1, 0, 2, 3).reshape(c, n * h * w)
    else:
        cols = kernels.im2col(xp, kh, kw, stride, ho, wo)
    wmat = weight.data.reshape(k, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(k, n, ho, wo).transpose(1, 0, 2, 3)

    padded_shape = xp.shape

    def backward(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(k, -1)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=1) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = wmat.T @ g2
            if kh == 1 and kw == 1 and stride == 1:
                gx = gcols.reshape(c, n, h, w).transpose(1, 0, 2, 3)
            else:
                gxp = kernels.col2im(gcols, padded_shape, kh, kw, stride, ho, wo)
                gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(np.ascontiguousarray(out), parents, backward, "conv2d")


# ---------------------------------------------------------------------------
# activations and pooling
# ---------------------------------------------------------------------------

def relu(x):
    x = _as_tensor(x)
    keep = x.data > 0

    def backward(g):
        return (g * keep,)

    return Tensor.from_op(np.where(keep, x.data, 0.0), (x,), backward, "relu")


def sigmoid_array(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    x = _as_tensor(x)
    s = sigmoid_array(x.data)

    def backward(g):
        return (g * s * (1.0 - s),)

    return Tensor.from_op(s, (x,), backward, "sigmoid")


def avg_pool2d(x, window):
    """Non-overlapping window x window mean pooling (trailing rows/cols dropped)."""
    x = _as_tensor(x)
    n, c, h, w = x.shape
    ho, wo = h // window, w // window
    if ho < 1 or wo < 1:
        raise ConfigError(f"avg_pool2d window {window} larger than input {h}x{w}")
    crop = x.data[:, :, :ho * window, :wo * window]
    out = crop.reshape(n, c, ho, window, wo, window).mean(axis=(3, 5))

    def backward(g):
        gx = np.zeros(x.shape)
        share = np.repeat(np.repeat(g, window, axis=2), window, axis=3) / (window * window)
        gx[:, :, :ho * window, :wo * window] = share
        return (gx,)

    return Tensor.from_op(out, (x,), backward, "avg_pool2d")


def global_avg_pool(x):
    """(N,C,H,W) -> (N,C) spatial means."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise ShapeError("global_avg_pool on empty plane")
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return Tensor.from_op(out, (x,), backward, "global_avg_pool")


def upsample2x(x):
    """Nearest-neighbour doubling of both spatial axes."""
    x = _as_tensor(x)
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return Tensor.from_op(out, (x,), backward, "upsample2x")


def linear(x, weight, bias=None):
    """Fully connected: (N,F) @ (O,F)^T + (O,)."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear shape mismatch: input {x.shape}, weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear bias shape {bias.shape}")
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, backward, "linear")


def concat(tensors, axis=1):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of nothing")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis):
            raise ShapeError(f"concat shape mismatch: {[t.shape for t in tensors]}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def backward(g):
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            parts.append(g[tuple(idx)])
        return tuple(parts)

    return Tensor.from_op(out, tuple(tensors), backward, "concat")


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.9, eps=1e-5):
    """Per-channel normalize-scale-shift.

    In training mode the batch statistics are used and the running buffers
    (plain arrays) are updated in place:
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    x = _as_tensor(x)
    n, c = x.shape[0], x.shape[1]
    if n == 0:
        raise ShapeError("batch_norm on an empty batch")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm parameter shape mismatch for {c} channels")
    axes = (0, 2, 3) if x.ndim == 4 else (0,)
    bshape = (1, c, 1, 1) if x.ndim == 4 else (1, c)
    m = x.data.size // c

    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        unbiased = var * m / (m - 1) if m > 1 else var
        running_var *= momentum
        running_var += (1.0 - momentum) * unbiased
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(bshape)) * inv.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(bshape)
            if training:
                s1 = gxhat.sum(axis=axes).reshape(bshape)
                s2 = (gxhat * xhat).sum(axis=axes).reshape(bshape)
                gx = inv.reshape(bshape) / m * (m * gxhat - s1 - xhat * s2)
            else:
                gx = gxhat * inv.reshape(bshape)
        return gx, ggamma, gbeta

    return Tensor.from_op(out, (x, gamma, beta), backward, "batch_norm")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _bce(truth, predicted, what):
    predicted = _as_tensor(predicted)
    y = np.asarray(truth.data if isinstance(truth, Tensor) else truth, dtype=np.float64)
    if y.shape != predicted.shape:
        if y.size == predicted.size and y.squeeze().shape == predicted.data.squeeze().shape:
            y = y.reshape(predicted.shape)
        else:
            raise ShapeError(f"{what}: truth shape {y.shape} != prediction shape {predicted.shape}")
    p = predicted.data
    q = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    count = p.size
    loss = -np.sum(y * np.log(q) + (1.0 - y) * np.log(1.0 - q)) / count
    inside = (p >= BCE_EPS) & (p <= 1.0 - BCE_EPS)

    def backward(g):
        gp = -(y / q - (1.0 - y) / (1.0 - q)) / count
        return (g.reshape(()) * gp * inside,)

    return Tensor.from_op(np.array([loss]), (predicted,), backward, what)


def bce_loss(truth, predicted):
    """Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7]."""
    return _bce(truth, predicted, "bce_loss")


def pixelwise_ce(truth_mask, predicted):
    """Mean per-pixel binary cross-entropy against a 0/1 mask."""
    return _bce(truth_mask, predicted, "pixelwise_ce")
