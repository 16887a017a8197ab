"""Model assembly: conv-recurrent singer classifiers.

Three variants share one skeleton: four conv blocks (3x3 conv, ELU,
2x2 max-pool, dropout 0.1) per input branch, channel-wise concatenation
of branches, two GRU layers of width 32 over the pooled time axis,
dropout 0.3, and a dense head. "crnn" runs one branch on the log-mel
image; "crnnm" adds an identical branch on the one-hot melody plane;
"crnn_wide" widens the conv ladder so its size roughly matches crnnm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import N_FRAMES, N_MELS
from .errors import MissingMelodyPlane, ShapeMismatch, UnknownVariant
from .nnet import (GRU_PARAM_KEYS, RngStream, Tensor, conv2d, conv2d_backward,
                   dense, dense_backward, dropout, dropout_backward, elu,
                   elu_backward, glorot_uniform, gru_backward, gru_sequence,
                   maxpool2d, maxpool2d_backward)

N_CLASSES = 20
GRU_HIDDEN = 32
N_CONV_BLOCKS = 4
CONV_DROPOUT = 0.1
HEAD_DROPOUT = 0.3

_LADDERS = {
    "crnn": (64, 128, 128, 128),
    "crnn_wide": (96, 192, 192, 192),
    "crnnm": (64, 128, 128, 128),
}


@dataclass(frozen=True)
class ModelSpec:
    variant: str
    conv_channels: tuple = ()
    n_branches: int = 1
    n_classes: int = N_CLASSES
    gru_hidden: int = GRU_HIDDEN
    n_mels: int = N_MELS
    n_frames: int = N_FRAMES

    @staticmethod
    def for_variant(variant: str, n_classes: int = N_CLASSES) -> "ModelSpec":
        if variant not in _LADDERS:
            raise UnknownVariant(
                f"variant must be one of {tuple(_LADDERS)}, got {variant!r}")
        return ModelSpec(variant, _LADDERS[variant],
                         n_branches=2 if variant == "crnnm" else 1,
                         n_classes=n_classes)

    @property
    def pooled_height(self) -> int:
        h = self.n_mels
        for _ in range(N_CONV_BLOCKS):
            h //= 2
        return h

    @property
    def pooled_width(self) -> int:
        w = self.n_frames
        for _ in range(N_CONV_BLOCKS):
            w //= 2
        return w

    @property
    def gru_input_size(self) -> int:
        return self.n_branches * self.conv_channels[-1] * self.pooled_height

    def param_shapes(self) -> dict:
        """Full tensor schema: name -> shape."""
        shapes = {}
        for b in range(self.n_branches):
            c_in = 1
            for i, c_out in enumerate(self.conv_channels):
                shapes[f"branch{b}.conv{i}.kernel"] = (c_out, c_in, 3, 3)
                shapes[f"branch{b}.conv{i}.bias"] = (c_out,)
                c_in = c_out
        for layer, d_in in ((0, self.gru_input_size), (1, self.gru_hidden)):
            h = self.gru_hidden
            for key in GRU_PARAM_KEYS:
                if key.startswith("w_"):
                    shapes[f"gru{layer}.{key}"] = (d_in, h)
                elif key.startswith("u_"):
                    shapes[f"gru{layer}.{key}"] = (h, h)
                else:
                    shapes[f"gru{layer}.{key}"] = (h,)
        shapes["dense.w"] = (self.gru_hidden, self.n_classes)
        shapes["dense.b"] = (self.n_classes,)
        return shapes

    def parameter_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())


@dataclass
class ModelParams:
    spec: ModelSpec
    tensors: dict = field(default_factory=dict)

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()


def build_model(variant: str, seed: int, n_classes: int = N_CLASSES) -> ModelParams:
    """Initialize parameters: Glorot-uniform weights, zero biases.

    Each tensor draws from its own name-keyed stream, so initialization
    is independent of construction order.
    """
    spec = ModelSpec.for_variant(variant, n_classes)
    tensors = {}
    for name, shape in spec.param_shapes().items():
        stream = RngStream(seed, f"init:{name}")
        if name.endswith(".bias") or name.endswith(".b") or ".b_" in name:
            value = np.zeros(shape, dtype=np.float32)
        elif ".conv" in name:
            fan_in = shape[1] * shape[2] * shape[3]
            fan_out = shape[0] * shape[2] * shape[3]
            value = glorot_uniform(stream, shape, fan_in, fan_out)
        else:
            value = glorot_uniform(stream, shape, shape[0], shape[1])
        tensors[name] = Tensor(value)
    return ModelParams(spec, tensors)


def _branch_forward(params, branch, x, training, stream, drop_rate):
    """One conv stack over [B, 1, H, W]; returns [B, C, H', W'] + caches."""
    caches = []
    for i in range(N_CONV_BLOCKS):
        k = params.tensors[f"branch{branch}.conv{i}.kernel"].value
        b = params.tensors[f"branch{branch}.conv{i}.bias"].value
        x, c_conv = conv2d(x, k, b)
        x, c_elu = elu(x)
        x, c_pool = maxpool2d(x)
        x, c_drop = dropout(x, drop_rate, stream, training)
        caches.append((c_conv, c_elu, c_pool, c_drop))
    return x, caches


def _branch_backward(branch, dx, caches, grads):
    for i in reversed(range(N_CONV_BLOCKS)):
        c_conv, c_elu, c_pool, c_drop = caches[i]
        dx = dropout_backward(dx, c_drop)
        dx = maxpool2d_backward(dx, c_pool)
        dx = elu_backward(dx, c_elu)
        dx, dk, db = conv2d_backward(dx, c_conv)
        grads[f"branch{branch}.conv{i}.kernel"] = dk
        grads[f"branch{branch}.conv{i}.bias"] = db
    return dx


def _check_inputs(spec, mel, melody):
    if mel.ndim != 3:
        raise ShapeMismatch(f"expected mel batch [B, H, W], got {mel.shape}")
    if mel.shape[1] != spec.n_mels or mel.shape[2] != spec.n_frames:
        raise ShapeMismatch(
            f"mel plane must be [{spec.n_mels}, {spec.n_frames}], got {mel.shape[1:]}")
    if spec.n_branches == 2:
        if melody is None:
            raise MissingMelodyPlane(f"{spec.variant} requires a melody plane")
        if melody.shape != mel.shape:
            raise ShapeMismatch(
                f"melody plane {melody.shape} does not match mel {mel.shape}")
    elif melody is not None:
        raise ShapeMismatch(f"{spec.variant} takes no melody plane")


def forward_batch(params: ModelParams, mel: np.ndarray, melody=None,
                  training: bool = False, stream: RngStream | None = None,
                  conv_dropout: float = CONV_DROPOUT,
                  head_dropout: float = HEAD_DROPOUT):
    """Forward pass over a batch.

    mel: [B, n_mels, n_frames]; melody: same shape, only for crnnm.
    Returns (logits [B, n_classes], embedding [B, gru_hidden], cache).
    """
    spec = params.spec
    mel = np.asarray(mel)
    _check_inputs(spec, mel, melody)
    batch = mel.shape[0]
    inputs = [mel[:, None, :, :]]
    if spec.n_branches == 2:
        inputs.append(np.asarray(melody)[:, None, :, :])
    feats = []
    branch_caches = []
    for b, x in enumerate(inputs):
        y, caches = _branch_forward(params, b, x, training, stream, conv_dropout)
        feats.append(y)
        branch_caches.append(caches)
    merged = np.concatenate(feats, axis=1) if len(feats) > 1 else feats[0]
    # [B, C, H, W] -> sequence over W with C*H features per step
    b_, c_, h_, w_ = merged.shape
    seq = np.ascontiguousarray(merged.transpose(0, 3, 1, 2)).reshape(b_, w_, c_ * h_)
    hs1, c_gru1 = gru_sequence(seq, {k: params.tensors[f"gru0.{k}"].value
                                     for k in GRU_PARAM_KEYS})
    hs2, c_gru2 = gru_sequence(hs1, {k: params.tensors[f"gru1.{k}"].value
                                     for k in GRU_PARAM_KEYS})
    embedding = hs2[:, -1, :]
    head_in, c_head_drop = dropout(embedding, head_dropout, stream, training)
    logits, c_dense = dense(head_in, params.tensors["dense.w"].value,
                            params.tensors["dense.b"].value)
    cache = (spec, batch, (c_, h_, w_), branch_caches, c_gru1, c_gru2,
             c_head_drop, c_dense, hs2.shape)
    return logits, embedding, cache


def backward_batch(dlogits: np.ndarray, cache) -> dict:
    """Gradients for every parameter tensor, keyed like the schema."""
    (spec, batch, merged_dims, branch_caches, c_gru1, c_gru2,
     c_head_drop, c_dense, hs2_shape) = cache
    grads = {}
    dhead_in, dw, db = dense_backward(dlogits, c_dense)
    grads["dense.w"], grads["dense.b"] = dw, db
    dembed = dropout_backward(dhead_in, c_head_drop)
    dhs2 = np.zeros(hs2_shape, dtype=dembed.dtype)
    dhs2[:, -1, :] = dembed
    dhs1, dg2, _ = gru_backward(dhs2, c_gru2)
    for k in GRU_PARAM_KEYS:
        grads[f"gru1.{k}"] = dg2[k]
    dseq, dg1, _ = gru_backward(dhs1, c_gru1)
    for k in GRU_PARAM_KEYS:
        grads[f"gru0.{k}"] = dg1[k]
    c_, h_, w_ = merged_dims
    dmerged = dseq.reshape(batch, w_, c_, h_).transpose(0, 2, 3, 1)
    dmerged = np.ascontiguousarray(dmerged)
    per_branch = c_ // spec.n_branches
    for b in range(spec.n_branches):
        dx = dmerged[:, b * per_branch:(b + 1) * per_branch]
        _branch_backward(b, dx, branch_caches[b], grads)
    return grads


def forward(params: ModelParams, mel: np.ndarray, melody=None,
            training: bool = False, stream: RngStream | None = None) -> dict:
    """Single-example forward: returns {"logits": [K], "embedding": [H]}."""
    mel = np.asarray(mel)
    if mel.ndim != 2:
        raise ShapeMismatch(f"expected a single [H, W] mel plane, got {mel.shape}")
    mel_b = mel[None]
    melody_b = None if melody is None else np.asarray(melody)[None]
    logits, embedding, _ = forward_batch(params, mel_b, melody_b, training, stream)
    return {"logits": logits[0], "embedding": embedding[0]}
