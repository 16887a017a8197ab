"""Minimal reverse-mode kernels: conv2d, max-pool, ELU, dropout, GRU, dense,
softmax cross-entropy, and Adam.

Every op is a plain function returning (output, cache); the matching
``*_backward`` consumes the cache and an upstream gradient and returns exact
gradients. There is no graph tape: callers chain backwards by hand, which is
all the fixed architectures here need.

Ops accept either a single item (e.g. conv input ``[C, H, W]``) or a leading
batch axis (``[B, C, H, W]``); gradients mirror whichever form went in.
Computations stay in the dtype of the input, so the same code runs float32
for training and float64 for finite-difference checks.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import LabelOutOfRange, ShapeMismatch


class Tensor:
    """A parameter array paired with a gradient buffer of identical shape."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.asarray(value)
        if self.value.ndim > 4:
            raise ShapeMismatch(f"rank {self.value.ndim} > 4")
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0


class RngStream:
    """Named, seeded, counter-based random stream.

    Each draw derives a fresh Philox generator from (seed, name, counter),
    so the same triple always yields the same numbers regardless of what
    other streams did in between.
    """

    def __init__(self, seed: int, name: str, counter: int = 0):
        self.seed = int(seed)
        self.name = name
        self.counter = int(counter)

    def child(self, suffix: str) -> "RngStream":
        return RngStream(self.seed, f"{self.name}/{suffix}")

    def _next_generator(self) -> np.random.Generator:
        token = f"{self.seed}\x1f{self.name}\x1f{self.counter}".encode()
        digest = hashlib.sha256(token).digest()
        key = np.frombuffer(digest[:16], dtype=np.uint64)
        self.counter += 1
        return np.random.Generator(np.random.Philox(key=key))

    def uniform(self, shape=(), low=0.0, high=1.0) -> np.ndarray:
        return self._next_generator().uniform(low, high, size=shape)

    def normal(self, shape=()) -> np.ndarray:
        return self._next_generator().standard_normal(size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._next_generator().permutation(n)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._next_generator().integers(low, high, size=shape)


def glorot_uniform(stream: RngStream, shape, fan_in: int, fan_out: int,
                   dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return stream.uniform(shape, -limit, limit).astype(dtype)


def _as_batch(x, item_ndim):
    x = np.asarray(x)
    if x.ndim == item_ndim:
        return x[None], True
    if x.ndim == item_ndim + 1:
        return x, False
    raise ShapeMismatch(f"expected rank {item_ndim} or {item_ndim + 1}, got {x.ndim}")


# ---------------------------------------------------------------------------
# conv2d: 3x3 cross-correlation, zero padding 1, stride 1, via im2col + GEMM.
# ---------------------------------------------------------------------------

def _im2col(xp, kh, kw, out_h, out_w):
    # xp: [B, C, H+2p, W+2p] -> col [B*out_h*out_w, C*kh*kw]
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    col = windows[:, :, :out_h, :out_w].transpose(0, 2, 3, 1, 4, 5)
    return np.ascontiguousarray(col).reshape(-1, xp.shape[1] * kh * kw)


def conv2d(x, kernels, bias):
    """Cross-correlate ``x`` [(B,)C,H,W] with ``kernels`` [C_out,C_in,3,3]."""
    xb, squeeze = _as_batch(x, 3)
    kernels = np.asarray(kernels)
    bias = np.asarray(bias)
    if kernels.ndim != 4:
        raise ShapeMismatch(f"kernels must be rank 4, got {kernels.ndim}")
    c_out, c_in, kh, kw = kernels.shape
    if xb.shape[1] != c_in:
        raise ShapeMismatch(f"input channels {xb.shape[1]} != kernel C_in {c_in}")
    if bias.shape != (c_out,):
        raise ShapeMismatch(f"bias shape {bias.shape} != ({c_out},)")
    b, _, h, w = xb.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(xb, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    col = _im2col(xp, kh, kw, h, w)
    k_mat = kernels.reshape(c_out, -1)
    y = col @ k_mat.T + bias
    y = y.reshape(b, h, w, c_out).transpose(0, 3, 1, 2)
    y = np.ascontiguousarray(y)
    cache = (col, kernels, xb.shape, squeeze)
    return (y[0] if squeeze else y), cache


def conv2d_backward(dy, cache):
    """Gradients (dx, dkernels, dbias) for conv2d."""
    col, kernels, x_shape, squeeze = cache
    dyb, _ = _as_batch(dy, 3)
    b, c_in, h, w = x_shape
    c_out, _, kh, kw = kernels.shape
    ph, pw = kh // 2, kw // 2
    dy_mat = np.ascontiguousarray(dyb.transpose(0, 2, 3, 1)).reshape(-1, c_out)
    db = dy_mat.sum(axis=0)
    dk = (dy_mat.T @ col).reshape(kernels.shape)
    dcol = (dy_mat @ kernels.reshape(c_out, -1)).reshape(b, h, w, c_in, kh, kw)
    dxp = np.zeros((b, c_in, h + 2 * ph, w + 2 * pw), dtype=dyb.dtype)
    for u in range(kh):
        for v in range(kw):
            dxp[:, :, u:u + h, v:v + w] += dcol[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    dx = dxp[:, :, ph:h + ph, pw:w + pw]
    return (dx[0] if squeeze else dx), dk, db


# ---------------------------------------------------------------------------
# 2x2 max-pool, stride 2. Odd trailing rows/columns are dropped, which is
# what lets the 157-frame time axis pool down 157 -> 78 -> 39 -> 19 -> 9.
# Ties route the gradient to the first element in row-major window order.
# ---------------------------------------------------------------------------

def maxpool2d(x):
    xb, squeeze = _as_batch(x, 3)
    b, c, h, w = xb.shape
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        raise ShapeMismatch(f"input {h}x{w} too small for 2x2 pooling")
    xr = xb[:, :, :2 * h2, :2 * w2].reshape(b, c, h2, 2, w2, 2)
    xr = np.ascontiguousarray(xr.transpose(0, 1, 2, 4, 3, 5)).reshape(b, c, h2, w2, 4)
    idx = xr.argmax(axis=-1)
    y = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    cache = (idx, (b, c, h, w), squeeze)
    return (y[0] if squeeze else y), cache


def maxpool2d_backward(dy, cache):
    idx, (b, c, h, w), squeeze = cache
    dyb, _ = _as_batch(dy, 3)
    h2, w2 = h // 2, w // 2
    dxr = np.zeros((b, c, h2, w2, 4), dtype=dyb.dtype)
    np.put_along_axis(dxr, idx[..., None], dyb[..., None], axis=-1)
    dx = np.zeros((b, c, h, w), dtype=dyb.dtype)
    dx[:, :, :2 * h2, :2 * w2] = (
        dxr.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * h2, 2 * w2)
    )
    return dx[0] if squeeze else dx


# ---------------------------------------------------------------------------
# ELU
# ---------------------------------------------------------------------------

def elu(x):
    x = np.asarray(x)
    neg = np.expm1(np.minimum(x, 0.0))
    y = np.where(x > 0.0, x, neg)
    return y, (x > 0.0, neg)


def elu_backward(dy, cache):
    pos, neg = cache
    # d/dx = 1 for x > 0, exp(x) = elu(x) + 1 otherwise
    return np.asarray(dy) * np.where(pos, 1.0, neg + 1.0)


# ---------------------------------------------------------------------------
# Inverted dropout
# ---------------------------------------------------------------------------

def dropout(x, rate, stream=None, training=False):
    x = np.asarray(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return x, None
    keep = (stream.uniform(x.shape) >= rate)
    scale = 1.0 / (1.0 - rate)
    mask = keep.astype(x.dtype) * x.dtype.type(scale)
    return x * mask, mask


def dropout_backward(dy, cache):
    if cache is None:
        return np.asarray(dy)
    return np.asarray(dy) * cache


# ---------------------------------------------------------------------------
# GRU with separate input and hidden biases per gate:
#   z = sigmoid(x Wz + h Uz + bz_in + bz_hid)
#   r = sigmoid(x Wr + h Ur + br_in + br_hid)
#   n = tanh(x Wn + bn_in + r * (h Un + bn_hid))
#   h' = (1 - z) * n + z * h
# ---------------------------------------------------------------------------

GRU_PARAM_KEYS = (
    "w_z", "w_r", "w_n", "u_z", "u_r", "u_n",
    "b_in_z", "b_in_r", "b_in_n", "b_hid_z", "b_hid_r", "b_hid_n",
)


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def _check_gru_params(params, d, hdim):
    shapes = {
        "w_z": (d, hdim), "w_r": (d, hdim), "w_n": (d, hdim),
        "u_z": (hdim, hdim), "u_r": (hdim, hdim), "u_n": (hdim, hdim),
    }
    for key in GRU_PARAM_KEYS:
        want = shapes.get(key, (hdim,))
        if params[key].shape != want:
            raise ShapeMismatch(f"gru param {key}: {params[key].shape} != {want}")


def gru_sequence(x, params, h0=None):
    """Run the GRU over ``x`` [(B,)T,D]; returns hidden states [(B,)T,H].

    ``h0`` defaults to zeros.
    """
    xb, squeeze = _as_batch(x, 2)
    b, t_len, d = xb.shape
    hdim = params["u_z"].shape[0]
    h0 = np.zeros(hdim, dtype=xb.dtype) if h0 is None else np.asarray(h0)
    _check_gru_params(params, d, hdim)
    if h0.shape not in ((hdim,), (b, hdim)):
        raise ShapeMismatch(f"h0 shape {h0.shape} incompatible with H={hdim}")
    h = np.broadcast_to(h0, (b, hdim)).astype(xb.dtype)
    hs = np.empty((b, t_len, hdim), dtype=xb.dtype)
    steps = []
    for t in range(t_len):
        xt = xb[:, t]
        z = _sigmoid(xt @ params["w_z"] + h @ params["u_z"]
                     + params["b_in_z"] + params["b_hid_z"])
        r = _sigmoid(xt @ params["w_r"] + h @ params["u_r"]
                     + params["b_in_r"] + params["b_hid_r"])
        hu_n = h @ params["u_n"] + params["b_hid_n"]
        n = np.tanh(xt @ params["w_n"] + params["b_in_n"] + r * hu_n)
        h_new = (1.0 - z) * n + z * h
        steps.append((xt, h, z, r, n, hu_n))
        hs[:, t] = h_new
        h = h_new
    cache = (steps, params, squeeze)
    return (hs[0] if squeeze else hs), cache


def gru_backward(dhs, cache):
    """BPTT. ``dhs`` holds upstream gradients for every hidden state.

    Returns (dx, dparams, dh0).
    """
    steps, params, squeeze = cache
    dhsb, _ = _as_batch(dhs, 2)
    b, t_len, hdim = dhsb.shape
    d = params["w_z"].shape[0]
    dparams = {k: np.zeros_like(v) for k, v in params.items()}
    dx = np.empty((b, t_len, d), dtype=dhsb.dtype)
    dh = np.zeros((b, hdim), dtype=dhsb.dtype)
    for t in range(t_len - 1, -1, -1):
        xt, h_prev, z, r, n, hu_n = steps[t]
        dh = dh + dhsb[:, t]
        dz_pre = dh * (h_prev - n) * z * (1.0 - z)
        dn_pre = dh * (1.0 - z) * (1.0 - n * n)
        dr_pre = dn_pre * hu_n * r * (1.0 - r)
        dn_hid = dn_pre * r          # gradient into (h Un + bn_hid)
        dparams["w_z"] += xt.T @ dz_pre
        dparams["w_r"] += xt.T @ dr_pre
        dparams["w_n"] += xt.T @ dn_pre
        dparams["u_z"] += h_prev.T @ dz_pre
        dparams["u_r"] += h_prev.T @ dr_pre
        dparams["u_n"] += h_prev.T @ dn_hid
        dparams["b_in_z"] += dz_pre.sum(axis=0)
        dparams["b_hid_z"] += dz_pre.sum(axis=0)
        dparams["b_in_r"] += dr_pre.sum(axis=0)
        dparams["b_hid_r"] += dr_pre.sum(axis=0)
        dparams["b_in_n"] += dn_pre.sum(axis=0)
        dparams["b_hid_n"] += dn_hid.sum(axis=0)
        dx[:, t] = (dz_pre @ params["w_z"].T + dr_pre @ params["w_r"].T
                    + dn_pre @ params["w_n"].T)
        dh = (dh * z + dz_pre @ params["u_z"].T + dr_pre @ params["u_r"].T
              + dn_hid @ params["u_n"].T)
    if squeeze:
        return dx[0], dparams, dh[0]
    return dx, dparams, dh


# ---------------------------------------------------------------------------
# Dense
# ---------------------------------------------------------------------------

def dense(x, w, b):
    xb, squeeze = _as_batch(x, 1)
    w = np.asarray(w)
    b = np.asarray(b)
    if w.ndim != 2 or xb.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeMismatch(
            f"dense shapes: x {xb.shape}, w {w.shape}, b {b.shape}")
    y = xb @ w + b
    return (y[0] if squeeze else y), (xb, w, squeeze)


def dense_backward(dy, cache):
    xb, w, squeeze = cache
    dyb, _ = _as_batch(dy, 1)
    dx = dyb @ w.T
    dw = xb.T @ dyb
    db = dyb.sum(axis=0)
    return (dx[0] if squeeze else dx), dw, db


# ---------------------------------------------------------------------------
# Softmax cross-entropy (log-sum-exp stabilized)
# ---------------------------------------------------------------------------

def softmax_cross_entropy(logits, label):
    """Loss, probabilities, and dloss/dlogits for one item or a batch.

    Single item: ``logits`` [K], integer ``label`` -> scalar loss.
    Batch: ``logits`` [B,K], ``label`` [B] -> mean loss; dlogits already
    carries the 1/B factor.
    """
    logits = np.asarray(logits)
    lb, squeeze = _as_batch(logits, 1)
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    k = lb.shape[1]
    if labels.shape[0] != lb.shape[0]:
        raise ShapeMismatch(f"{labels.shape[0]} labels for {lb.shape[0]} logit rows")
    if np.any(labels < 0) or np.any(labels >= k):
        raise LabelOutOfRange(f"label outside [0, {k})")
    shifted = lb - lb.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    probs = np.exp(log_probs)
    rows = np.arange(lb.shape[0])
    losses = -log_probs[rows, labels]
    dlogits = probs.copy()
    dlogits[rows, labels] -= 1.0
    if squeeze:
        return losses[0], probs[0], dlogits[0]
    return losses.mean(), probs, dlogits / lb.shape[0]


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    def __init__(self):
        self.m = {}
        self.v = {}
        self.t = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Bias-corrected Adam update, applied in place to ``params`` values."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} != param {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)
    return state
