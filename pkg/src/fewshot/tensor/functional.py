"""Neural-network primitives with hand-written backward passes."""
import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import DimensionError, LabelError
from .core import Tensor, as_tensor, make_result

KERNEL = 3


def conv_output_size(size, stride, pad):
    span = size + 2 * pad - KERNEL
    if span < 0 or span % stride:
        raise DimensionError(
            f"conv2d: input size {size} with pad={pad}, stride={stride} gives a non-integral output"
        )
    return span // stride + 1


def conv2d(x, weight, bias=None, stride=1, pad=1):
    """3x3 cross-correlation on NCHW input.

    Internally the padded input is moved to channels-last so each im2col row
    is gathered from contiguous (kw, C) runs; columns are ordered (kh, kw, C).
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-d input and weight, got {x.shape} and {weight.shape}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = weight.shape
    if (kh, kw) != (KERNEL, KERNEL):
        raise DimensionError(f"conv2d: only 3x3 kernels are supported, got {kh}x{kw}")
    if Cw != C:
        raise DimensionError(f"conv2d: input shape {x.shape} does not match weight shape {weight.shape}")
    if pad not in (0, 1) or stride not in (1, 2):
        raise DimensionError(f"conv2d: unsupported pad={pad} / stride={stride}")
    Ho, Wo = conv_output_size(H, stride, pad), conv_output_size(W, stride, pad)

    xl = np.zeros((B, H + 2 * pad, W + 2 * pad, C), dtype=x.data.dtype)
    xl[:, pad:pad + H, pad:pad + W, :] = x.data.transpose(0, 2, 3, 1)
    sb, sh, sw, sc = xl.strides
    windows = as_strided(
        xl, (B, Ho, Wo, KERNEL, KERNEL, C), (sb, stride * sh, stride * sw, sh, sw, sc), writeable=False
    )
    cols = windows.reshape(B * Ho * Wo, KERNEL * KERNEL * C)
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(O, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2))

    parents = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, O)
        gw = None
        if weight.requires_grad:
            gw = (g2.T @ cols).reshape(O, KERNEL, KERNEL, C).transpose(0, 3, 1, 2).copy()
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(B, Ho, Wo, KERNEL, KERNEL, C)
            gxl = np.zeros(xl.shape, dtype=xl.dtype)
            for i in range(KERNEL):
                for j in range(KERNEL):
                    gxl[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :] += dcols[:, :, :, i, j, :]
            gx = np.ascontiguousarray(gxl[:, pad:pad + H, pad:pad + W, :].transpose(0, 3, 1, 2))
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_result(out, parents, vjp, "conv2d")


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` for x of shape (B, in)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input shape {x.shape} does not match weight shape {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return make_result(out, parents, vjp, "linear")


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Batch normalization over all axes but the channel axis (axis 1).

    Works on (B, C) and (B, C, H, W) inputs. In training mode the running
    statistics (plain arrays) are updated in place, with the unbiased batch
    variance feeding the running variance.
    """
    if x.ndim not in (2, 4):
        raise DimensionError(f"batch_norm: expected 2-d or 4-d input, got {x.shape}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"batch_norm: affine shape {gamma.shape} does not match input {x.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, C) if x.ndim == 2 else (1, C, 1, 1)
    n = x.data.size // C

    if training:
        if n < 2:
            raise DimensionError(f"batch_norm: degenerate batch, {n} value(s) per channel in train mode")
        mu = x.data.mean(axis=axes)
        centered = x.data - mu.reshape(bshape)
        var = (centered * centered).mean(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / (n - 1))
    else:
        mu, var = running_mean, running_var
        centered = x.data - mu.reshape(bshape).astype(x.data.dtype)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.data.dtype)
    xhat = centered * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def vjp(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(bshape)
        if training:
            gx = (inv_std / n).reshape(bshape) * (
                n * gxhat
                - gxhat.sum(axis=axes).reshape(bshape)
                - xhat * (gxhat * xhat).sum(axis=axes).reshape(bshape)
            )
        else:
            gx = gxhat * inv_std.reshape(bshape)
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), vjp, "batch_norm")


def max_pool2x2(x, floor=False):
    """Non-overlapping 2x2 max pooling.

    Odd spatial sizes are an error unless ``floor`` is set, in which case the
    trailing row/column is dropped. Gradients go to the first maximum of each
    window in row-major order.
    """
    if x.ndim != 4:
        raise DimensionError(f"max_pool2x2: expected 4-d input, got {x.shape}")
    B, C, H, W = x.shape
    if (H % 2 or W % 2) and not floor:
        raise DimensionError(f"max_pool2x2: spatial size {H}x{W} is not even")
    Ho, Wo = H // 2, W // 2
    if Ho == 0 or Wo == 0:
        raise DimensionError(f"max_pool2x2: spatial size {H}x{W} is too small")
    xc = x.data[:, :, : 2 * Ho, : 2 * Wo]
    corners = (xc[:, :, 0::2, 0::2], xc[:, :, 0::2, 1::2], xc[:, :, 1::2, 0::2], xc[:, :, 1::2, 1::2])
    out = np.maximum(np.maximum(corners[0], corners[1]), np.maximum(corners[2], corners[3]))

    def vjp(g):
        gx = np.zeros_like(x.data)
        taken = np.zeros(out.shape, dtype=bool)
        for k, (di, dj) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            hit = (corners[k] == out) & ~taken
            taken |= hit
            gx[:, :, di:2 * Ho:2, dj:2 * Wo:2] = g * hit
        return (gx,)

    return make_result(out, (x,), vjp, "max_pool2x2")


def global_avg_pool(x):
    """Mean over the spatial axes: (B, C, H, W) -> (B, C)."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool: expected 4-d input, got {x.shape}")
    B, C, H, W = x.shape

    def vjp(g):
        return (np.broadcast_to((g / (H * W))[:, :, None, None], x.shape).copy(),)

    return make_result(x.data.mean(axis=(2, 3)), (x,), vjp, "global_avg_pool")


def l2norm(x, axis=-1, keepdims=True):
    """Euclidean norm along ``axis``; the gradient is finite at zero."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * x.data / np.maximum(norm, 1e-12),)

    out = norm if keepdims else np.squeeze(norm, axis)
    return make_result(out, (x,), vjp, "l2norm")


def _log_softmax_np(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def log_softmax(x):
    """Log-softmax over the last axis (max-subtracted)."""
    out = _log_softmax_np(x.data)
    probs = np.exp(out)

    def vjp(g):
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return make_result(out, (x,), vjp, "log_softmax")


def softmax(x):
    """Softmax over the last axis (max-subtracted)."""
    out = np.exp(_log_softmax_np(x.data))

    def vjp(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return make_result(out, (x,), vjp, "softmax")


def softmax_cross_entropy(logits, targets):
    """Mean over the batch of ``-log softmax(logits)[target]``."""
    logits = as_tensor(logits)
    targets = np.asarray(targets.data if isinstance(targets, Tensor) else targets)
    if logits.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy: expected (B, C) logits, got {logits.shape}")
    B, C = logits.shape
    if targets.shape != (B,):
        raise DimensionError(f"softmax_cross_entropy: targets shape {targets.shape} != ({B},)")
    if B == 0:
        raise DimensionError("softmax_cross_entropy: empty batch")
    if targets.min() < 0 or targets.max() >= C:
        bad = int(np.flatnonzero((targets < 0) | (targets >= C))[0])
        raise LabelError(f"target {int(targets[bad])} at position {bad} is outside [0, {C})")
    targets = targets.astype(np.intp)
    logp = _log_softmax_np(logits.data)
    rows = np.arange(B)
    loss = -logp[rows, targets].mean()

    def vjp(g):
        grad = np.exp(logp)
        grad[rows, targets] -= 1.0
        return (grad * (g / B),)

    return make_result(np.asarray(loss, dtype=logits.data.dtype), (logits,), vjp, "softmax_cross_entropy")
