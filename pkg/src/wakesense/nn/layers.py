"""Forward/backward kernels for the layers used by the wake estimator.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)`` and returns gradients in argument order. Arrays are
float64 numpy arrays; the batch axis always comes first.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class NonFiniteError(FloatingPointError):
    """Raised when NaN or Inf shows up in a training-mode computation."""


def check_finite(name: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            bad = np.size(a) - int(np.isfinite(a).sum())
            raise NonFiniteError(f"{name}: {bad} non-finite value(s)")


# --------------------------------------------------------------------------
# convolution

def conv1d_forward(x, w, b, stride=1, padding=0):
    """Cross-correlation of ``x`` (B, C_in, L) with ``w`` (C_out, C_in, K).

    A 2-D ``x`` of shape (C_in, L) is treated as a batch of one and the
    output is returned without the batch axis.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or w.ndim != 3:
        raise ValueError(f"conv1d expects x (B,C,L) and w (O,C,K), got {x.shape}, {w.shape}")
    B, C, L = x.shape
    O, Cw, K = w.shape
    if Cw != C:
        raise ValueError(f"conv1d channel mismatch: input has {C}, kernel expects {Cw}")
    if b.shape != (O,):
        raise ValueError(f"conv1d bias shape {b.shape} != ({O},)")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    if L + 2 * padding < K:
        raise ValueError(f"conv1d input length {L} (+2*{padding}) shorter than kernel {K}")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    cols = sliding_window_view(xp, K, axis=2)[:, :, ::stride, :]  # (B, C, Lout, K)
    Lout = cols.shape[2]
    cols = cols.transpose(0, 2, 1, 3).reshape(B * Lout, C * K)
    out = (cols @ w.reshape(O, C * K).T).reshape(B, Lout, O).transpose(0, 2, 1) + b[None, :, None]
    cache = (xp.shape, cols, w, stride, padding, squeeze)
    return (out[0] if squeeze else out), cache


def conv1d_backward(dout, cache):
    xp_shape, cols, w, stride, padding, squeeze = cache
    if squeeze:
        dout = dout[None]
    O, C, K = w.shape
    B, _, Lout = dout.shape
    d2 = dout.transpose(0, 2, 1).reshape(B * Lout, O)
    dw = (d2.T @ cols).reshape(O, C, K)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(O, C * K)).reshape(B, Lout, C, K)
    dxp = np.zeros(xp_shape)
    span = (Lout - 1) * stride + 1
    for k in range(K):
        dxp[:, :, k:k + span:stride] += dcols[:, :, :, k].transpose(0, 2, 1)
    dx = dxp[:, :, padding:xp_shape[2] - padding] if padding else dxp
    return (dx[0] if squeeze else dx), dw, db


def conv1d_out_len(length: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (length + 2 * padding - kernel) // stride + 1


# --------------------------------------------------------------------------
# batch normalisation

def batchnorm1d_forward(x, gamma, beta, running_mean, running_var, mode="train",
                        momentum=0.1, eps=1e-5):
    """Per-channel batch norm over the batch and length axes of (B, C, L).

    In train mode ``running_mean``/``running_var`` are updated in place.
    """
    if x.ndim != 3:
        raise ValueError(f"batchnorm1d expects (B, C, L), got {x.shape}")
    if mode == "train":
        n = x.shape[0] * x.shape[2]
        if n <= 1:
            raise ValueError("batchnorm1d in train mode needs more than one value per channel")
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * n / (n - 1)
    elif mode == "eval":
        mean, var = running_mean, running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    out = gamma[None, :, None] * xhat + beta[None, :, None]
    return out, (xhat, inv_std, gamma, mode)


def batchnorm1d_backward(dout, cache):
    xhat, inv_std, gamma, mode = cache
    dgamma = (dout * xhat).sum(axis=(0, 2))
    dbeta = dout.sum(axis=(0, 2))
    dxhat = dout * gamma[None, :, None]
    if mode == "eval":
        return dxhat * inv_std[None, :, None], dgamma, dbeta
    n = dout.shape[0] * dout.shape[2]
    dx = (inv_std[None, :, None] / n) * (
        n * dxhat
        - dxhat.sum(axis=(0, 2))[None, :, None]
        - xhat * (dxhat * xhat).sum(axis=(0, 2))[None, :, None]
    )
    return dx, dgamma, dbeta


# --------------------------------------------------------------------------
# pooling

def maxpool1d_forward(x, window, stride=None):
    """Max over sliding windows on the last axis; ties go to the first index."""
    if window <= 0:
        raise ValueError(f"pool window must be positive, got {window}")
    stride = window if stride is None else stride
    if stride <= 0:
        raise ValueError(f"pool stride must be positive, got {stride}")
    if x.shape[-1] < window:
        raise ValueError(f"pool input length {x.shape[-1]} shorter than window {window}")
    n_out = (x.shape[-1] - window) // stride + 1
    if stride == window == 2:
        first, second = x[..., 0:2 * n_out:2], x[..., 1:2 * n_out:2]
        arg = second > first  # strict, so ties keep index 0
        return np.where(arg, second, first), (x.shape, arg, window, stride)
    if stride == window:
        wins = x[..., :n_out * window].reshape(*x.shape[:-1], n_out, window)
    else:
        wins = sliding_window_view(x, window, axis=-1)[..., ::stride, :]
    arg = wins.argmax(axis=-1)
    out = np.take_along_axis(wins, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg, window, stride)


def maxpool1d_backward(dout, cache):
    shape, arg, window, stride = cache
    n_out = arg.shape[-1]
    if stride == window == 2:
        dx = np.zeros(shape)
        dx[..., 0:2 * n_out:2] = np.where(arg, 0.0, dout)
        dx[..., 1:2 * n_out:2] = np.where(arg, dout, 0.0)
        return dx
    if stride == window:
        dw = np.zeros((*shape[:-1], n_out, window))
        np.put_along_axis(dw, arg[..., None], dout[..., None], axis=-1)
        dx = np.zeros(shape)
        dx[..., :n_out * window] = dw.reshape(*shape[:-1], n_out * window)
        return dx
    dx = np.zeros(shape)
    idx = arg + stride * np.arange(n_out)
    lead = np.indices(arg.shape)[:-1]
    np.add.at(dx, (*lead, idx), dout)
    return dx


# --------------------------------------------------------------------------
# recurrent

def sigmoid(z):
    # tanh form never overflows
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def lstm_forward(x, W, U, b, check=False):
    """Unidirectional LSTM over ``x`` (B, T, F), zero initial state.

    ``W`` (F, 4H), ``U`` (H, 4H) and ``b`` (4H,) hold the gates in the order
    input, forget, candidate, output. Returns hidden states (B, T, H).
    """
    B, T, F = x.shape
    H = U.shape[0]
    if W.shape != (F, 4 * H) or U.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ValueError(f"lstm parameter shapes {W.shape}, {U.shape}, {b.shape} "
                         f"do not match F={F}, H={H}")
    if T < 1:
        raise ValueError("lstm needs at least one time step")
    xw = (x.reshape(B * T, F) @ W).reshape(B, T, 4 * H) + b
    hs = np.zeros((B, T, H))
    cs = np.zeros((B, T, H))
    gates = np.zeros((B, T, 4 * H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        z = xw[:, t] + h @ U
        a = sigmoid(z)
        a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[:, t] = a
        hs[:, t], cs[:, t] = h, c
    if check:
        check_finite("lstm activations", hs, cs)
    return hs, (x, W, U, hs, cs, gates)


def lstm_backward(dhs, cache):
    x, W, U, hs, cs, gates = cache
    B, T, H = hs.shape
    dz = np.zeros((B, T, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in reversed(range(T)):
        i, f = gates[:, t, :H], gates[:, t, H:2 * H]
        g, o = gates[:, t, 2 * H:3 * H], gates[:, t, 3 * H:]
        c = cs[:, t]
        c_prev = cs[:, t - 1] if t > 0 else np.zeros((B, H))
        tc = np.tanh(c)
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz[:, t, :H] = dc * g * i * (1.0 - i)
        dz[:, t, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, t, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[:, t, 3 * H:] = dh * tc * o * (1.0 - o)
        dh_next = dz[:, t] @ U.T
        dc_next = dc * f
    h_prev = np.concatenate([np.zeros((B, 1, H)), hs[:, :-1]], axis=1)
    F = x.shape[2]
    dz2 = dz.reshape(B * T, 4 * H)
    dW = x.reshape(B * T, F).T @ dz2
    dU = h_prev.reshape(B * T, H).T @ dz2
    db = dz2.sum(axis=0)
    dx = (dz2 @ W.T).reshape(B, T, F)
    return dx, dW, dU, db


def bilstm_forward(x, fwd, bwd, check=False):
    """Bidirectional LSTM; ``fwd``/``bwd`` are (W, U, b) triples.

    Output (B, T, 2H) is time-aligned: row t holds the forward state after
    step t and the backward state after it has consumed steps T-1 .. t.
    """
    hf, cf = lstm_forward(x, *fwd, check=check)
    hb, cb = lstm_forward(x[:, ::-1], *bwd, check=check)
    return np.concatenate([hf, hb[:, ::-1]], axis=2), (cf, cb, hf.shape[2])


def bilstm_backward(dout, cache):
    cf, cb, H = cache
    dxf, *gf = lstm_backward(dout[:, :, :H], cf)
    dxb, *gb = lstm_backward(np.ascontiguousarray(dout[:, ::-1, H:]), cb)
    return dxf + dxb[:, ::-1], tuple(gf), tuple(gb)


# --------------------------------------------------------------------------
# dense, activations, dropout

def dense_forward(x, w, b):
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ValueError(f"dense shape mismatch: x {x.shape}, w {w.shape}, b {b.shape}")
    return x @ w + b, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(dout, y):
    return dout * (1.0 - y * y)


def sigmoid_forward(x):
    y = sigmoid(x)
    return y, y


def sigmoid_backward(dout, y):
    return dout * y * (1.0 - y)


def dropout_forward(x, rate, mode="train", rng=None, mask=None):
    """Inverted dropout. Pass ``mask`` to replay a fixed draw."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x, None
    if mask is None:
        if rng is None:
            raise ValueError("dropout in train mode needs an rng or a mask")
        mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


# --------------------------------------------------------------------------
# losses

def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_crossentropy(logits, targets):
    """Batch-mean cross-entropy of integer ``targets`` under softmax(logits).

    Returns ``(loss, dlogits)`` with ``dlogits = (softmax - onehot) / B``.
    """
    logits = np.asarray(logits, dtype=float)
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ValueError(f"logits {logits.shape} and targets {targets.shape} disagree")
    B, C = logits.shape
    if B == 0:
        raise ValueError("empty batch")
    if targets.min() < 0 or targets.max() >= C:
        raise ValueError(f"targets must lie in [0, {C})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(B)
    loss = float(np.mean(logsumexp - z[rows, targets]))
    grad = np.exp(z - logsumexp[:, None])
    grad[rows, targets] -= 1.0
    return loss, grad / B
