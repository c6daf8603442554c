"""Differentiable operations on (batch, height, width, channel) tensors.

All convolutions use zero padding. Reductions run in a fixed order so the
same inputs always give bit-identical forward and backward results.
"""

from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.core.errors import ShapeError
from src.core.tensor import Tensor


# Plain-array helpers shared with losses and metrics

def np_softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + exp(x)) without overflow."""
    return np.logaddexp(0.0, x)


def np_sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function in the stable exp(-softplus(-x)) form."""
    return np.exp(-np.logaddexp(0.0, -x))


def _require_rank(t: Tensor, rank: int, op: str) -> None:
    if t.ndim != rank:
        raise ShapeError(f"{op}: expected a rank-{rank} tensor, got shape {t.shape}")


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# Elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return Tensor.record(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    return Tensor.record(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    a_data, b_data = a.data, b.data
    return Tensor.record(a_data * b_data, (a, b), lambda g: (g * b_data, g * a_data), "mul")


def scale(a: Tensor, factor: float) -> Tensor:
    return Tensor.record(a.data * factor, (a,), lambda g: (g * factor,), "scale")


def relu(a: Tensor) -> Tensor:
    # Subgradient at exactly 0 is 0
    active = a.data > 0
    return Tensor.record(np.where(active, a.data, 0.0), (a,), lambda g: (g * active,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    s = np_sigmoid(a.data)
    return Tensor.record(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


# Reductions and indexing

def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return Tensor.record(
        np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum"
    )


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return Tensor.record(
        np.array(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, shape).copy(),), "mean"
    )


def take(a: Tensor, index: tuple[int, ...]) -> Tensor:
    """Select a single element as a scalar tensor."""
    if len(index) != a.ndim:
        raise ShapeError(f"take: index {index} does not address a single element of {a.shape}")
    shape = a.shape

    def backward(g: np.ndarray):
        grad = np.zeros(shape)
        grad[index] = g
        return (grad,)

    return Tensor.record(np.array(a.data[index]), (a,), backward, "take")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    original = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot view {original} as {shape}") from e
    return Tensor.record(data, (a,), lambda g: (g.reshape(original),), "reshape")


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    """Concatenate rank-4 tensors along the channel axis, in argument order."""
    if not inputs:
        raise ShapeError("concat_channels: no inputs")
    for t in inputs:
        _require_rank(t, 4, "concat_channels")
        if t.shape[:3] != inputs[0].shape[:3]:
            raise ShapeError(
                f"concat_channels: spatial mismatch {t.shape[:3]} vs {inputs[0].shape[:3]}"
            )
    splits = np.cumsum([t.shape[3] for t in inputs])[:-1]

    def backward(g: np.ndarray):
        return tuple(np.ascontiguousarray(part) for part in np.split(g, splits, axis=3))

    return Tensor.record(
        np.concatenate([t.data for t in inputs], axis=3), tuple(inputs), backward, "concat"
    )


def global_avg_pool(a: Tensor) -> Tensor:
    """Mean over height and width: (B, H, W, C) -> (B, C)."""
    _require_rank(a, 4, "global_avg_pool")
    if a.shape[1] * a.shape[2] == 0:
        raise ShapeError("global_avg_pool: empty spatial extent")
    shape = a.shape
    area = shape[1] * shape[2]

    def backward(g: np.ndarray):
        return (np.broadcast_to(g[:, None, None, :] / area, shape).copy(),)

    return Tensor.record(a.data.mean(axis=(1, 2)), (a,), backward, "global_avg_pool")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map (B, F) @ (F, O) + (O,)."""
    _require_rank(x, 2, "linear")
    if weight.ndim != 2 or weight.shape[0] != x.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")

    x_data, w_data = x.data, weight.data
    out = x_data @ w_data
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g: np.ndarray):
        grads = [g @ w_data.T, x_data.T @ g]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return Tensor.record(out, parents, backward, "linear")


# Convolutions

def _im2col(padded: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(B, Hp, Wp, C) -> (B*Ho*Wo, kh*kw*C), columns ordered (row, col, channel)."""
    windows = sliding_window_view(padded, (kh, kw), axis=(1, 2))  # B, Ho, Wo, C, kh, kw
    b, ho, wo, c = windows.shape[:4]
    return windows.transpose(0, 1, 2, 4, 5, 3).reshape(b * ho * wo, kh * kw * c)


def _col2im(cols: np.ndarray, padded_shape: tuple, kh: int, kw: int) -> np.ndarray:
    b, hp, wp, c = padded_shape
    ho, wo = hp - kh + 1, wp - kw + 1
    patches = cols.reshape(b, ho, wo, kh, kw, c)
    out = np.zeros(padded_shape)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + ho, j:j + wo, :] += patches[:, :, :, i, j, :]
    return out


def _expand_mask(mask: Optional[np.ndarray], weight_shape: tuple) -> Optional[np.ndarray]:
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim == 2:
        mask = mask[:, :, None, None]
    try:
        return np.broadcast_to(mask, weight_shape)
    except ValueError as e:
        raise ShapeError(f"conv2d: mask {mask.shape} does not fit kernel {weight_shape}") from e


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    padding: Union[str, int] = "same",
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Stride-1 cross-correlation with zero padding.

    Args:
        x: Input (B, H, W, Cin)
        weight: Kernel (kH, kW, Cin, Cout)
        bias: Optional (Cout,)
        padding: ``"same"`` (odd kernels only) or an explicit pad width
        mask: Optional binary (kH, kW) or full-kernel mask; the effective
            kernel is ``weight * mask`` and masked gradient entries are 0

    Returns:
        Output (B, Ho, Wo, Cout); Ho == H and Wo == W for ``"same"``
    """
    _require_rank(x, 4, "conv2d")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be (kH, kW, Cin, Cout), got {weight.shape}")
    kh, kw, cin, cout = weight.shape
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d: input has {x.shape[3]} channels, kernel expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match {cout} output channels")

    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"conv2d: 'same' padding needs an odd kernel, got {kh}x{kw}")
        ph, pw = kh // 2, kw // 2
    else:
        ph = pw = int(padding)

    full_mask = _expand_mask(mask, weight.shape)
    w_eff = weight.data if full_mask is None else weight.data * full_mask
    w_mat = w_eff.reshape(kh * kw * cin, cout)

    b, h, w, _ = x.shape
    padded = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    ho, wo = padded.shape[1] - kh + 1, padded.shape[2] - kw + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {padded.shape[1:3]}")

    cols = _im2col(padded, kh, kw)
    out = cols @ w_mat
    if bias is not None:
        out = out + bias.data
    out = out.reshape(b, ho, wo, cout)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g: np.ndarray):
        g2 = g.reshape(-1, cout)
        grad_x = None
        if x.requires_grad:
            grad_padded = _col2im(g2 @ w_mat.T, padded.shape, kh, kw)
            grad_x = grad_padded[:, ph:ph + h, pw:pw + w, :]
        grad_w = None
        if weight.requires_grad:
            grad_w = (cols.T @ g2).reshape(weight.shape)
            if full_mask is not None:
                grad_w = np.where(full_mask > 0, grad_w, 0.0)
        grads = [grad_x, grad_w]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return Tensor.record(out, parents, backward, "conv2d")


def conv_transpose2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 2,
    padding: int = 1,
) -> Tensor:
    """Transposed convolution; kernel 4, stride 2, padding 1 doubles H and W.

    Args:
        x: Input (B, H, W, Cin)
        weight: Kernel (kH, kW, Cin, Cout)
        bias: Optional (Cout,)
    """
    _require_rank(x, 4, "conv_transpose2d")
    kh, kw, cin, cout = weight.shape
    if x.shape[3] != cin:
        raise ShapeError(f"conv_transpose2d: input has {x.shape[3]} channels, kernel expects {cin}")

    b, h, w, _ = x.shape
    x2 = x.data.reshape(-1, cin)
    w_mat = weight.data.transpose(2, 0, 1, 3).reshape(cin, kh * kw * cout)
    patches = (x2 @ w_mat).reshape(b, h, w, kh, kw, cout)

    hf, wf = (h - 1) * stride + kh, (w - 1) * stride + kw
    full = np.zeros((b, hf, wf, cout))
    for i in range(kh):
        for j in range(kw):
            full[:, i:i + stride * (h - 1) + 1:stride, j:j + stride * (w - 1) + 1:stride, :] += (
                patches[:, :, :, i, j, :]
            )
    out = full[:, padding:hf - padding, padding:wf - padding, :]
    if bias is not None:
        out = out + bias.data

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g: np.ndarray):
        grad_full = np.zeros((b, hf, wf, cout))
        grad_full[:, padding:hf - padding, padding:wf - padding, :] = g
        grad_patches = np.empty((b, h, w, kh, kw, cout))
        for i in range(kh):
            for j in range(kw):
                grad_patches[:, :, :, i, j, :] = grad_full[
                    :, i:i + stride * (h - 1) + 1:stride, j:j + stride * (w - 1) + 1:stride, :
                ]
        gp2 = grad_patches.reshape(-1, kh * kw * cout)
        grad_x = (gp2 @ w_mat.T).reshape(x.shape)
        grad_w = (x2.T @ gp2).reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
        grads = [grad_x, grad_w]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1, 2)))
        return grads

    return Tensor.record(np.ascontiguousarray(out), parents, backward, "conv_transpose2d")


# Pooling and resampling

def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; ties route to the first maximum in scan order."""
    _require_rank(x, 4, "max_pool2d")
    b, h, w, c = x.shape
    if h % size or w % size:
        raise ShapeError(f"max_pool2d: {h}x{w} not divisible by {size}")
    ho, wo = h // size, w // size

    windows = (
        x.data.reshape(b, ho, size, wo, size, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(b, ho, wo, c, size * size)
    )
    winner = windows.argmax(axis=-1)[..., None]
    out = np.take_along_axis(windows, winner, axis=-1)[..., 0]

    def backward(g: np.ndarray):
        grad_windows = np.zeros_like(windows)
        np.put_along_axis(grad_windows, winner, g[..., None], axis=-1)
        grad = (
            grad_windows.reshape(b, ho, wo, c, size, size)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(b, h, w, c)
        )
        return (grad,)

    return Tensor.record(out, (x,), backward, "max_pool2d")


def adaptive_pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i averages input cells floor(i*n_in/n_out) .. floor((i+1)*n_in/n_out) - 1."""
    matrix = np.zeros((n_out, n_in))
    for i in range(n_out):
        start = (i * n_in) // n_out
        end = ((i + 1) * n_in) // n_out
        matrix[i, start:end] = 1.0 / (end - start)
    return matrix


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Half-pixel-center bilinear weights with edge clamping."""
    matrix = np.zeros((n_out, n_in))
    scale_factor = n_in / n_out
    for d in range(n_out):
        src = min(max((d + 0.5) * scale_factor - 0.5, 0.0), n_in - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        matrix[d, lo] += 1.0 - frac
        matrix[d, hi] += frac
    return matrix


def _separable(x: Tensor, rows: np.ndarray, cols: np.ndarray, op: str) -> Tensor:
    """Apply ``rows`` along the height axis and ``cols`` along the width axis."""

    def apply(data: np.ndarray, mh: np.ndarray, mw: np.ndarray) -> np.ndarray:
        out = np.einsum("ih,bhwc->biwc", mh, data)
        return np.einsum("jw,biwc->bijc", mw, out)

    out = apply(x.data, rows, cols)
    return Tensor.record(out, (x,), lambda g: (apply(g, rows.T, cols.T),), op)


def adaptive_avg_pool(x: Tensor, out_h: int, out_w: int) -> Tensor:
    _require_rank(x, 4, "adaptive_avg_pool")
    _, h, w, _ = x.shape
    if out_h <= 0 or out_w <= 0:
        raise ShapeError(f"adaptive_avg_pool: zero-sized output {out_h}x{out_w}")
    if out_h > h or out_w > w:
        raise ShapeError(f"adaptive_avg_pool: output {out_h}x{out_w} exceeds input {h}x{w}")
    return _separable(x, adaptive_pool_matrix(h, out_h), adaptive_pool_matrix(w, out_w),
                      "adaptive_avg_pool")


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    _require_rank(x, 4, "bilinear_upsample")
    _, h, w, _ = x.shape
    if out_h < h or out_w < w:
        raise ShapeError(f"bilinear_upsample: output {out_h}x{out_w} smaller than input {h}x{w}")
    return _separable(x, bilinear_matrix(h, out_h), bilinear_matrix(w, out_w),
                      "bilinear_upsample")
