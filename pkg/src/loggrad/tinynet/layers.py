"""Forward and backward passes for the layer types used by the toy CNNs.

Activations are NHWC float64 arrays; conv weights are (kh, kw, Cin, Cout).
All convolutions are stride-1 cross-correlations.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft
from numpy.lib.stride_tricks import sliding_window_view

PADDINGS = ("valid", "same-zero", "same-replicate")

# kernels with more taps than this go through the FFT path
FFT_MIN_TAPS = 64


def _same_pad(k: int) -> tuple[int, int]:
    # even kernels put the extra pixel before: k=16 pads 8 then 7
    before = k // 2
    return before, k - 1 - before


def pad_input(x: np.ndarray, kh: int, kw: int, padding: str) -> np.ndarray:
    if padding == "valid":
        return x
    if padding not in PADDINGS:
        raise ValueError(f"unknown padding {padding!r}")
    widths = ((0, 0), _same_pad(kh), _same_pad(kw), (0, 0))
    mode = "constant" if padding == "same-zero" else "edge"
    return np.pad(x, widths, mode=mode)


def unpad_grad(gxp: np.ndarray, kh: int, kw: int, padding: str) -> np.ndarray:
    """Adjoint of ``pad_input``."""
    if padding == "valid":
        return gxp
    (t, b), (l, r) = _same_pad(kh), _same_pad(kw)
    H = gxp.shape[1] - t - b
    W = gxp.shape[2] - l - r
    if padding == "same-zero":
        return gxp[:, t:t + H, l:l + W].copy()
    # replicate: fold padded columns, then padded rows, onto the edges
    g = gxp[:, :, l:l + W].copy()
    g[:, :, 0] += gxp[:, :, :l].sum(axis=2)
    g[:, :, -1] += gxp[:, :, l + W:].sum(axis=2)
    out = g[:, t:t + H].copy()
    out[:, 0] += g[:, :t].sum(axis=1)
    out[:, -1] += g[:, t + H:].sum(axis=1)
    return out


def _check_conv_shapes(x, w):
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d expects NHWC input and (kh, kw, Cin, Cout) weights")
    if x.shape[3] != w.shape[2]:
        raise ValueError(f"channel mismatch: input has {x.shape[3]}, kernel expects {w.shape[2]}")


def _im2col(xp, kh, kw):
    N, Hp, Wp, C = xp.shape
    Ho, Wo = Hp - kh + 1, Wp - kw + 1
    if Ho < 1 or Wo < 1:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))   # N,Ho,Wo,C,kh,kw
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(N * Ho * Wo, kh * kw * C), (N, Ho, Wo)


def _use_fft(w) -> bool:
    return w.shape[0] * w.shape[1] > FFT_MIN_TAPS


def _fft_forward(xp, w):
    kh, kw, _, cout = w.shape
    N, Hp, Wp, _ = xp.shape
    X = sfft.rfft2(xp, axes=(1, 2))
    K = sfft.rfft2(w, s=(Hp, Wp), axes=(0, 1)).conj()
    Y = np.matmul(X[:, :, :, None, :], K[None])[:, :, :, 0, :]
    y = sfft.irfft2(Y, s=(Hp, Wp), axes=(1, 2))
    return y[:, :Hp - kh + 1, :Wp - kw + 1]


def conv2d_forward(x, w, bias, padding: str = "valid", keep_cols: bool = False):
    """Stride-1 cross-correlation plus bias.

    With ``keep_cols`` the im2col matrix (or None on the FFT path) is
    returned as well, for reuse by ``conv2d_backward``.
    """
    _check_conv_shapes(x, w)
    kh, kw, cin, cout = w.shape
    if bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} does not match {cout} output channels")
    xp = pad_input(x, kh, kw, padding)
    cols = None
    if _use_fft(w):
        if xp.shape[1] < kh or xp.shape[2] < kw:
            raise ValueError("kernel larger than padded input")
        y = _fft_forward(xp, w) + bias
    else:
        cols, (N, Ho, Wo) = _im2col(xp, kh, kw)
        y = (cols @ w.reshape(kh * kw * cin, cout)).reshape(N, Ho, Wo, cout) + bias
    return (y, cols) if keep_cols else y


def conv2d_backward(x, w, grad_out, padding: str = "valid", need_input_grad: bool = True,
                    cols=None):
    """Return (grad_x, grad_w, grad_bias); grad_x is None if not requested."""
    _check_conv_shapes(x, w)
    kh, kw, cin, cout = w.shape
    xp = pad_input(x, kh, kw, padding)
    Ho, Wo = xp.shape[1] - kh + 1, xp.shape[2] - kw + 1
    if grad_out.shape != (x.shape[0], Ho, Wo, cout):
        raise ValueError(f"grad_out shape {grad_out.shape} inconsistent with forward output")
    grad_b = grad_out.sum(axis=(0, 1, 2))
    grad_x = None
    if _use_fft(w):
        N, Hp, Wp, _ = xp.shape
        X = sfft.rfft2(xp, axes=(1, 2))
        G = sfft.rfft2(grad_out, s=(Hp, Wp), axes=(1, 2))
        # sum_n X^T conj(G) per frequency
        C = np.einsum("nyxi,nyxo->yxio", X, G.conj())
        grad_w = sfft.irfft2(C, s=(Hp, Wp), axes=(0, 1))[:kh, :kw]
        if need_input_grad:
            K = sfft.rfft2(w, s=(Hp, Wp), axes=(0, 1))
            GX = np.matmul(G[:, :, :, None, :], K.transpose(0, 1, 3, 2)[None])[:, :, :, 0, :]
            gxp = sfft.irfft2(GX, s=(Hp, Wp), axes=(1, 2))
            grad_x = unpad_grad(gxp, kh, kw, padding)
        return grad_x, grad_w, grad_b
    if cols is None:
        cols, _ = _im2col(xp, kh, kw)
    g2 = grad_out.reshape(-1, cout)
    grad_w = (cols.T @ g2).reshape(kh, kw, cin, cout)
    if need_input_grad:
        gcols = (g2 @ w.reshape(kh * kw * cin, cout).T).reshape(x.shape[0], Ho, Wo, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for dy in range(kh):
            for dx in range(kw):
                gxp[:, dy:dy + Ho, dx:dx + Wo] += gcols[:, :, :, dy, dx]
        grad_x = unpad_grad(gxp, kh, kw, padding)
    return grad_x, grad_w, grad_b


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(x, grad_out):
    return grad_out * (x > 0)


def maxpool_forward(x, p: int):
    """Non-overlapping p x p max pooling (trailing rows/cols dropped).

    Returns (output, argmax) where argmax is the row-major position of the
    first maximum inside each window.
    """
    if p < 1:
        raise ValueError("pool factor must be >= 1")
    N, H, W, C = x.shape
    Ho, Wo = H // p, W // p
    if Ho == 0 or Wo == 0:
        raise ValueError(f"pool factor {p} larger than input {H}x{W}")
    win = x[:, :Ho * p, :Wo * p].reshape(N, Ho, p, Wo, p, C)
    out = win.max(axis=(2, 4))
    idx = np.full(out.shape, p * p - 1, dtype=np.int16)
    # descending sweep leaves the first (lowest) matching position
    for k in range(p * p - 2, -1, -1):
        py, px = divmod(k, p)
        np.copyto(idx, k, where=win[:, :, py, :, px, :] == out)
    return out, idx


def maxpool_backward(grad_out, idx, input_shape, p: int):
    N, H, W, C = input_shape
    Ho, Wo = H // p, W // p
    if grad_out.shape != (N, Ho, Wo, C):
        raise ValueError("grad_out shape inconsistent with pooled output")
    covered = np.zeros((N, Ho * p, Wo * p, C))
    win = covered.reshape(N, Ho, p, Wo, p, C)
    for k in range(p * p):
        py, px = divmod(k, p)
        win[:, :, py, :, px, :] = np.where(idx == k, grad_out, 0.0)
    if covered.shape == tuple(input_shape):
        return covered
    grad = np.zeros(input_shape)
    grad[:, :Ho * p, :Wo * p] = covered
    return grad


def flatten(x):
    return x.reshape(x.shape[0], -1)


def dense_forward(x, w, bias):
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"dense input {x.shape} incompatible with weights {w.shape}")
    return x @ w + bias


def dense_backward(x, w, grad_out):
    if grad_out.shape != (x.shape[0], w.shape[1]):
        raise ValueError("grad_out shape inconsistent with dense output")
    return grad_out @ w.T, x.T @ grad_out, grad_out.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits.

    Accepts a single logit vector with an integer label, or a batch
    (N, K) with N labels.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    z = np.atleast_2d(logits)
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n = z.shape[0]
    if y.shape != (n,):
        raise ValueError("one label per logit row required")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_norm - shifted[np.arange(n), y]))
    grad = np.exp(shifted - log_norm[:, None])
    grad[np.arange(n), y] -= 1.0
    grad /= n
    return loss, (grad[0] if single else grad)


def mse_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size
