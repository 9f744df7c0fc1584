"""Independent reference implementations used to cross-check the fast paths.

Every function here deliberately takes a different route from the module it
checks: patch gathering by index arithmetic instead of line-buffer streaming,
one big im2col matmul instead of per-tap accumulation, float64 dequantized
arithmetic instead of integer shifts, divmod-based rounding instead of bit
shifts. Tests and the CLI selftest compare the two routes.
"""
from __future__ import annotations

import numpy as np

from .tensor import QuantSpec, quantize_array, round_half_away

# ---------------------------------------------------------------------------
# convolution references
# ---------------------------------------------------------------------------


def same_pad(kernel: int, dilation: int = 1) -> int:
    """Top/left padding of the centered same-padding convention."""
    eff = dilation * (kernel - 1) + 1
    return (eff - 1) // 2


def out_dim(in_dim: int, stride: int) -> int:
    return -(-in_dim // stride)


def naive_patch(
    x: np.ndarray, y: int, xx: int, kernel: int, stride: int = 1, dilation: int = 1
) -> np.ndarray:
    """K x K x C window at output position (y, xx), zero-padded, by scalar loops."""
    h, w, c = x.shape
    pad = same_pad(kernel, dilation)
    patch = np.zeros((kernel, kernel, c), dtype=x.dtype)
    for ky in range(kernel):
        for kx in range(kernel):
            r = y * stride + dilation * ky - pad
            s = xx * stride + dilation * kx - pad
            if 0 <= r < h and 0 <= s < w:
                patch[ky, kx] = x[r, s]
    return patch


def im2col(
    x: np.ndarray, kernel: int, stride: int = 1, dilation: int = 1
) -> np.ndarray:
    """Gather all padded windows into (out_H, out_W, K*K*C) by index arrays."""
    h, w, c = x.shape
    pad = same_pad(kernel, dilation)
    oh, ow = out_dim(h, stride), out_dim(w, stride)
    rows = np.arange(oh)[:, None] * stride + np.arange(kernel)[None, :] * dilation - pad
    cols = np.arange(ow)[:, None] * stride + np.arange(kernel)[None, :] * dilation - pad
    rvalid = (rows >= 0) & (rows < h)
    cvalid = (cols >= 0) & (cols < w)
    r = np.clip(rows, 0, h - 1)
    s = np.clip(cols, 0, w - 1)
    gathered = x[r[:, None, :, None], s[None, :, None, :], :]
    mask = (rvalid[:, None, :, None] & cvalid[None, :, None, :])[..., None]
    gathered = np.where(mask, gathered, np.zeros((), dtype=x.dtype))
    return gathered.reshape(oh, ow, kernel * kernel * c)


def conv_im2col(
    x: np.ndarray,
    weights: np.ndarray,
    bias: np.ndarray | None = None,
    stride: int = 1,
    dilation: int = 1,
    mode: str = "standard",
) -> np.ndarray:
    """Convolution as patch-gather followed by one dot product.

    weights: (K, K, C_in, C_out) for standard/pointwise, (K, K, C) depthwise.
    Arithmetic happens in the dtype of ``x`` (float64 for exact references).
    """
    if mode == "depthwise":
        k = weights.shape[0]
        cols = im2col(x, k, stride, dilation)
        oh, ow, _ = cols.shape
        c = x.shape[2]
        cols = cols.reshape(oh, ow, k * k, c)
        out = np.einsum("hwkc,kc->hwc", cols, weights.reshape(k * k, c))
    else:
        k = weights.shape[0]
        cols = im2col(x, k, stride, dilation)
        oh, ow, _ = cols.shape
        w2 = weights.reshape(-1, weights.shape[3])
        out = cols.reshape(oh * ow, -1) @ w2
        out = out.reshape(oh, ow, w2.shape[1])
    if bias is not None:
        out = out + np.asarray(bias, dtype=out.dtype)
    return out


def quantized_conv_oracle(
    x_int: np.ndarray,
    w_int: np.ndarray,
    in_spec: QuantSpec,
    w_spec: QuantSpec,
    out_spec: QuantSpec,
    bias_int: np.ndarray | None = None,
    relu: bool = False,
    stride: int = 1,
    dilation: int = 1,
    mode: str = "standard",
) -> np.ndarray:
    """Reference for the integer engines: dequantize, convolve at float64,
    re-quantize with the shared rounding rule.

    Products and sums stay integer-valued; float64 represents them exactly up
    to 2**53, far past the 32-bit accumulator bound the engines assert.
    """
    xr = np.asarray(x_int, dtype=np.float64) * in_spec.step
    wr = np.asarray(w_int, dtype=np.float64) * w_spec.step
    acc_scale = 2.0 ** (in_spec.scale_exp + w_spec.scale_exp)
    real = conv_im2col(xr, wr, None, stride, dilation, mode)
    if bias_int is not None:
        real = real + np.asarray(bias_int, dtype=np.float64) * acc_scale
    if relu:
        real = np.maximum(real, 0.0)
    return quantize_array(real, out_spec)


def pw_matmul_oracle(
    x_int: np.ndarray,
    w_int: np.ndarray,
    in_spec: QuantSpec,
    w_spec: QuantSpec,
    out_spec: QuantSpec,
    bias_int: np.ndarray | None = None,
    relu: bool = False,
) -> np.ndarray:
    """Pointwise layer as a plain integer matmul with divmod rounding."""
    h, w, ci = x_int.shape
    acc = np.matmul(
        np.asarray(x_int, dtype=np.int64).reshape(h * w, ci),
        np.asarray(w_int, dtype=np.int64).reshape(ci, -1),
    )
    if bias_int is not None:
        acc = acc + np.asarray(bias_int, dtype=np.int64)
    shift = out_spec.scale_exp - in_spec.scale_exp - w_spec.scale_exp
    if shift < 0:
        raise ValueError(f"negative requantize shift {shift}")
    den = 1 << shift
    mag = (np.abs(acc) + (den >> 1)) // den if shift > 0 else np.abs(acc)
    q = np.where(acc < 0, -mag, mag)
    q = np.clip(q, out_spec.int_min, out_spec.int_max)
    if relu:
        q = np.maximum(q, 0)
    return q.reshape(h, w, -1).astype(np.int32)


# ---------------------------------------------------------------------------
# elementwise / pooling / resize references
# ---------------------------------------------------------------------------


def gap_running_sum(x: np.ndarray) -> np.ndarray:
    """Global average by an explicit running sum in float64, row by row."""
    h, w, c = x.shape
    total = np.zeros(c, dtype=np.float64)
    for y in range(h):
        for s in range(w):
            total += x[y, s].astype(np.float64)
    return (total / (h * w)).reshape(1, 1, c)


def sigmoid_exact(x: np.ndarray | float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bilinear_point(src: np.ndarray, y: float, x: float) -> np.ndarray:
    """Sample src at fractional (y, x) with edge clamping, scalar formula."""
    h, w, _ = src.shape
    y = min(max(y, 0.0), h - 1.0)
    x = min(max(x, 0.0), w - 1.0)
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    fy, fx = y - y0, x - x0
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def resize_reference(src: np.ndarray, scale: float) -> np.ndarray:
    """Per-pixel half-pixel-center bilinear resize, all scalar sampling."""
    h, w, c = src.shape
    oh = max(1, int(round_half_away(h * scale)))
    ow = max(1, int(round_half_away(w * scale)))
    out = np.zeros((oh, ow, c), dtype=np.float64)
    for y in range(oh):
        sy = (y + 0.5) / scale - 0.5
        for x in range(ow):
            sx = (x + 0.5) / scale - 0.5
            out[y, x] = bilinear_point(src.astype(np.float64), sy, sx)
    return out


# ---------------------------------------------------------------------------
# structural references
# ---------------------------------------------------------------------------


def receptive_extent(chain: list[tuple[int, int, int]]) -> int:
    """Receptive-field extent of a conv chain given [(kernel, stride, dilation)].

    Walks from a single output element back to the input, the textbook
    recurrence: extent = (extent - 1) * stride + effective_kernel.
    """
    extent = 1
    for kernel, stride, dilation in reversed(chain):
        eff = dilation * (kernel - 1) + 1
        extent = (extent - 1) * stride + eff
    return extent


def best_f1_brute_force(prob: np.ndarray, gt: np.ndarray) -> float:
    """Best F1 over the 256-threshold grid by direct confusion counting."""
    best = 0.0
    gt = gt.astype(bool)
    for k in range(256):
        pred = prob > (k / 256.0)
        tp = int(np.sum(pred & gt))
        fp = int(np.sum(pred & ~gt))
        fn = int(np.sum(~pred & gt))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = (
            2.0 * precision * recall / (precision + recall)
            if precision + recall
            else 0.0
        )
        best = max(best, f1)
    return best
