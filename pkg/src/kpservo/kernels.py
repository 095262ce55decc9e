"""Layer kernels: conv / transposed conv / dense, softmax-family reductions,
and the loss heads.  Each kernel validates its shapes, computes the forward
with one BLAS matmul where possible, and registers an exact backward for its
forward definition.

Everything here is tuned for a memory-bound single-core box: patch gathers
write straight from the unpadded input (no np.pad copies), im2col buffers are
cached for the weight gradient, 1x1 convs skip the gather entirely, and an
optional fused relu avoids an extra full-buffer pass per layer.
"""
from __future__ import annotations

import numpy as np

from .autodiff import ShapeError, Tensor, _accum, _tracked

__all__ = [
    "conv2d", "conv_transpose2d", "dense", "spatial_softmax", "channel_max",
    "mse_loss", "bce_loss", "cross_entropy_logits", "unit_rows",
]

BCE_EPS = 1e-7


def _conv_geometry(H, W, kh, kw, stride, pad, dil):
    eh, ew = (kh - 1) * dil + 1, (kw - 1) * dil + 1
    Hout = (H + 2 * pad - eh) // stride + 1
    Wout = (W + 2 * pad - ew) // stride + 1
    if Hout <= 0 or Wout <= 0:
        raise ShapeError(f"conv kernel {kh}x{kw} (dil {dil}) too large for input {H}x{W} with pad {pad}")
    return Hout, Wout


def _tap_ranges(n_in, n_out, tap_off, stride, pad):
    """Valid (input, output) index ranges for one kernel tap.

    Output o reads input r = o*stride + tap_off - pad; clip o to keep r in
    [0, n_in).
    """
    o_lo = max(0, -(-(pad - tap_off) // stride))           # ceil((pad-tap)/stride)
    o_hi = min(n_out, (n_in - 1 - tap_off + pad) // stride + 1)
    r_lo = o_lo * stride + tap_off - pad
    return o_lo, o_hi, r_lo


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int, dil: int):
    """(B,C,H,W) -> (B, C*kh*kw, Hout*Wout) patch matrix, zero-padded borders."""
    B, C, H, W = x.shape
    Hout, Wout = _conv_geometry(H, W, kh, kw, stride, pad, dil)
    cols = np.empty((B, C, kh, kw, Hout, Wout), dtype=x.dtype)
    full = pad == 0
    for i in range(kh):
        oi_lo, oi_hi, ri_lo = _tap_ranges(H, Hout, i * dil, stride, pad)
        for j in range(kw):
            oj_lo, oj_hi, rj_lo = _tap_ranges(W, Wout, j * dil, stride, pad)
            dst = cols[:, :, i, j]
            if not full and (oi_lo > 0 or oi_hi < Hout or oj_lo > 0 or oj_hi < Wout):
                dst[:, :, :oi_lo] = 0
                dst[:, :, oi_hi:] = 0
                dst[:, :, :, :oj_lo] = 0
                dst[:, :, :, oj_hi:] = 0
            dst[:, :, oi_lo:oi_hi, oj_lo:oj_hi] = x[
                :, :, ri_lo:ri_lo + stride * (oi_hi - oi_lo):stride,
                rj_lo:rj_lo + stride * (oj_hi - oj_lo):stride]
    return cols.reshape(B, C * kh * kw, Hout * Wout), Hout, Wout


def _col2im(cols: np.ndarray, B, C, H, W, kh, kw, stride, pad, dil, Hout, Wout):
    """Scatter-add inverse of _im2col, straight into an unpadded buffer."""
    cols = cols.reshape(B, C, kh, kw, Hout, Wout)
    x = np.zeros((B, C, H, W), dtype=cols.dtype)
    for i in range(kh):
        oi_lo, oi_hi, ri_lo = _tap_ranges(H, Hout, i * dil, stride, pad)
        for j in range(kw):
            oj_lo, oj_hi, rj_lo = _tap_ranges(W, Wout, j * dil, stride, pad)
            x[:, :, ri_lo:ri_lo + stride * (oi_hi - oi_lo):stride,
              rj_lo:rj_lo + stride * (oj_hi - oj_lo):stride] += \
                cols[:, :, i, j, oi_lo:oi_hi, oj_lo:oj_hi]
    return x


def _finish(out_data: np.ndarray, parents: tuple, relu: bool):
    """Optionally fuse a relu; returns (node, pre-activation mask or None)."""
    mask = None
    if relu:
        np.maximum(out_data, 0, out=out_data)
    out = Tensor._node(out_data, parents)
    if relu and out._parents:
        mask = out_data > 0
    return out, mask


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding: int = 0, dilation: int = 1,
           relu: bool = False) -> Tensor:
    """2D cross-correlation, NCHW input, OIHW weight, optional fused relu."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: need 4D input and weight, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if C != Cw:
        raise ShapeError(f"conv2d: input channels {C} != weight channels {Cw}")
    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        return _conv1x1(x, w, b, B, C, H, W, O, relu)
    cols, Hout, Wout = _im2col(x.data, kh, kw, stride, padding, dilation)
    W2 = w.data.reshape(O, -1)
    y = np.matmul(W2, cols)
    if b is not None:
        y += b.data.reshape(1, O, 1)
    parents = (x, w) + ((b,) if b is not None else ())
    out, mask = _finish(y.reshape(B, O, Hout, Wout), parents, relu)
    if out._parents:
        keep_cols = cols if _tracked(w) else None
        def _bw():
            # out.grad is dead after this closure; mask it in place
            gy = out.grad if mask is None else np.multiply(out.grad, mask, out=out.grad)
            gy = gy.reshape(B, O, -1)
            if b is not None and _tracked(b):
                _accum(b, gy.sum(axis=(0, 2)))
            if keep_cols is not None:
                _accum(w, np.matmul(gy, keep_cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape))
            if _tracked(x):
                dcols = np.matmul(W2.T, gy)
                _accum(x, _col2im(dcols, B, C, H, W, kh, kw, stride, padding, dilation, Hout, Wout))
        out._backward = _bw
    return out


def _conv1x1(x: Tensor, w: Tensor, b: Tensor | None, B, C, H, W, O, relu: bool) -> Tensor:
    """1x1 conv: pure channel mix, no patch gather."""
    xf = x.data.reshape(B, C, H * W)
    W2 = w.data.reshape(O, C)
    y = np.matmul(W2, xf)
    if b is not None:
        y += b.data.reshape(1, O, 1)
    parents = (x, w) + ((b,) if b is not None else ())
    out, mask = _finish(y.reshape(B, O, H, W), parents, relu)
    if out._parents:
        def _bw():
            gy = out.grad if mask is None else np.multiply(out.grad, mask, out=out.grad)
            gy = gy.reshape(B, O, -1)
            if b is not None and _tracked(b):
                _accum(b, gy.sum(axis=(0, 2)))
            if _tracked(w):
                _accum(w, np.matmul(gy, xf.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape))
            if _tracked(x):
                _accum(x, np.matmul(W2.T, gy).reshape(B, C, H, W))
        out._backward = _bw
    return out


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None,
                     stride: int = 2, padding: int = 1, relu: bool = False) -> Tensor:
    """Transposed conv (fractionally strided), weight layout (Cin, Cout, kh, kw)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv_transpose2d: need 4D input and weight, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    Cw, O, kh, kw = w.shape
    if C != Cw:
        raise ShapeError(f"conv_transpose2d: input channels {C} != weight channels {Cw}")
    Hout = (H - 1) * stride - 2 * padding + kh
    Wout = (W - 1) * stride - 2 * padding + kw
    W2 = w.data.reshape(C, -1)          # (C, O*kh*kw)
    xf = x.data.reshape(B, C, H * W)
    cols = np.matmul(W2.T, xf)          # (B, O*kh*kw, H*W)
    y = _col2im(cols, B, O, Hout, Wout, kh, kw, stride, padding, 1, H, W)
    if b is not None:
        y += b.data.reshape(1, O, 1, 1)
    parents = (x, w) + ((b,) if b is not None else ())
    out, mask = _finish(y, parents, relu)
    if out._parents:
        def _bw():
            gy = out.grad if mask is None else np.multiply(out.grad, mask, out=out.grad)
            gcols, _, _ = _im2col(gy, kh, kw, stride, padding, 1)  # (B, O*k2, H*W)
            if b is not None and _tracked(b):
                _accum(b, gy.sum(axis=(0, 2, 3)))
            if _tracked(w):
                gW = np.matmul(xf, gcols.transpose(0, 2, 1)).sum(axis=0)  # (C, O*k2)
                _accum(w, gW.reshape(w.shape))
            if _tracked(x):
                _accum(x, np.matmul(W2, gcols).reshape(B, C, H, W))
        out._backward = _bw
    return out


def dense(x: Tensor, w: Tensor, b: Tensor | None = None, relu: bool = False) -> Tensor:
    """Affine layer: (B, F) @ (F, O) + (O,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: incompatible shapes {x.shape} @ {w.shape}")
    y = x.data @ w.data
    if b is not None:
        y = y + b.data
    parents = (x, w) + ((b,) if b is not None else ())
    out, mask = _finish(y, parents, relu)
    if out._parents:
        def _bw():
            gy = out.grad if mask is None else np.multiply(out.grad, mask, out=out.grad)
            if b is not None and _tracked(b):
                _accum(b, gy.sum(axis=0))
            if _tracked(w):
                _accum(w, x.data.T @ gy)
            if _tracked(x):
                _accum(x, gy @ w.data.T)
        out._backward = _bw
    return out


def spatial_softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis (the flattened keypoint grid)."""
    m = x.data.max(axis=-1, keepdims=True)
    e = np.exp(x.data - m)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor._node(p, (x,))
    if out._parents:
        def _bw():
            g = out.grad
            dot = (p * g).sum(axis=-1, keepdims=True)
            _accum(x, p * (g - dot))
        out._backward = _bw
    return out


def channel_max(x: Tensor) -> Tensor:
    """Max over the last axis; ties route the gradient to the first hit."""
    return x.max(axis=-1)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error over all elements."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if t.shape != pred.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs target {t.shape}")
    d = pred.data - t
    out = Tensor._node(np.asarray((d * d).mean(), dtype=pred.dtype), (pred,))
    if out._parents:
        def _bw():
            _accum(pred, out.grad * 2.0 * d / d.size)
        out._backward = _bw
    return out


def bce_loss(p: Tensor, target) -> Tensor:
    """Binary cross-entropy on probabilities, mean over elements.

    Probabilities are clamped to [eps, 1-eps]; the gradient uses the clamped
    value so it stays bounded when a sigmoid saturates in float32.
    """
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=p.dtype)
    if t.shape != p.shape:
        raise ShapeError(f"bce_loss: prediction {p.shape} vs target {t.shape}")
    pc = np.clip(p.data, BCE_EPS, 1.0 - BCE_EPS)
    val = -(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc)).mean()
    out = Tensor._node(np.asarray(val, dtype=p.dtype), (p,))
    if out._parents:
        def _bw():
            _accum(p, out.grad * (-(t / pc) + (1.0 - t) / (1.0 - pc)) / pc.size)
        out._backward = _bw
    return out


def cross_entropy_logits(logits: Tensor, target_idx: np.ndarray) -> Tensor:
    """Multi-class CE with logits on axis 1, mean over batch and pixels."""
    z = logits.data
    idx = np.asarray(target_idx)
    if idx.shape != z.shape[:1] + z.shape[2:]:
        raise ShapeError(f"cross_entropy: logits {z.shape} vs target {idx.shape}")
    idx_e = np.expand_dims(idx, 1)
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    logp = z - m - np.log(s)
    picked = np.take_along_axis(logp, idx_e, axis=1)
    n = picked.size
    out = Tensor._node(np.asarray(-picked.mean(), dtype=z.dtype), (logits,))
    if out._parents:
        def _bw():
            soft = e / s
            np.put_along_axis(soft, idx_e, np.take_along_axis(soft, idx_e, axis=1) - 1.0, axis=1)
            _accum(logits, out.grad * soft / n)
        out._backward = _bw
    return out


def unit_rows(x: Tensor, eps: float = 1e-8) -> tuple[Tensor, np.ndarray]:
    """Normalize each row of (B, d) to unit length.

    Returns the normalized tensor and a boolean mask of rows whose raw norm
    was degenerate (< 1e-6) and got the eps guard; callers surface that in
    diagnostics.
    """
    n = (x * x).sum(axis=1, keepdims=True).sqrt()
    degenerate = (n.data < 1e-6).reshape(-1)
    return x / (n + eps), degenerate
