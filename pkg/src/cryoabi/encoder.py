"""Compact convolutional pose encoder with independent multi-pose heads.

Forward and backward passes are written directly in numpy so every gradient
is hand-verifiable against finite differences.  Only the winning head of the
multi-choice loss receives gradient; the shared backbone is reached solely
through that head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import StaleCache
from .geometry import rotation_from_s2s2, rotation_from_s2s2_vjp
from .optim import AdamState, adam_step

CONV_CHANNELS = (16, 32, 64, 128)
FEATURE_DIM = 128
HEAD_HIDDEN = 64
HEAD_OUT = 8  # 6 rotation values + 2 translation logits
LEAK = 0.1
# nudges raw head outputs away from the measure-zero parallel configuration
S2S2_JITTER = 1e-6 * np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def preprocess(image: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance normalization with an epsilon guard."""
    image = np.asarray(image, dtype=float)
    mean = image.mean(axis=(-2, -1), keepdims=True)
    std = image.std(axis=(-2, -1), keepdims=True)
    return (image - mean) / (std + 1e-8)


@dataclass
class EncoderParams:
    """All learnable tensors plus their Adam state, keyed by name."""

    n_heads: int
    t_max: float
    tensors: dict[str, np.ndarray]
    adam: dict[str, AdamState] = field(default=None)

    def __post_init__(self):
        if self.adam is None:
            self.adam = {k: AdamState.like(v) for k, v in self.tensors.items()}

    def head_names(self, j: int) -> list[str]:
        return [f"head{j}.w1", f"head{j}.b1", f"head{j}.w2", f"head{j}.b2"]

    @property
    def backbone_names(self) -> list[str]:
        return [k for k in self.tensors if k.startswith("conv")]


def _fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_encoder(n_heads: int, t_max: float, seed: int) -> EncoderParams:
    """Fan-in uniform initialization; every head draws from its own stream."""
    root = np.random.SeedSequence(seed)
    backbone_seq, *head_seqs = root.spawn(1 + n_heads)
    rng = np.random.default_rng(backbone_seq)
    tensors: dict[str, np.ndarray] = {}
    c_in = 1
    for i, c_out in enumerate(CONV_CHANNELS):
        fan = c_in * 9
        tensors[f"conv{i}.w"] = _fan_in_uniform(rng, (c_out, c_in, 3, 3), fan)
        tensors[f"conv{i}.b"] = _fan_in_uniform(rng, (c_out,), fan)
        c_in = c_out
    for j, seq in enumerate(head_seqs):
        hrng = np.random.default_rng(seq)
        tensors[f"head{j}.w1"] = _fan_in_uniform(hrng, (HEAD_HIDDEN, FEATURE_DIM), FEATURE_DIM)
        tensors[f"head{j}.b1"] = _fan_in_uniform(hrng, (HEAD_HIDDEN,), FEATURE_DIM)
        tensors[f"head{j}.w2"] = _fan_in_uniform(hrng, (HEAD_OUT, HEAD_HIDDEN), HEAD_HIDDEN)
        tensors[f"head{j}.b2"] = _fan_in_uniform(hrng, (HEAD_OUT,), HEAD_HIDDEN)
    return EncoderParams(n_heads=n_heads, t_max=float(t_max), tensors=tensors)


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """3x3 convolution, stride 2, zero padding 1."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::2, ::2]
    out = np.einsum("bcxyij,ocij->boxy", win, w, optimize=True) + b[None, :, None, None]
    return out, win


def _conv_backward(gout: np.ndarray, win: np.ndarray, w: np.ndarray, x_shape):
    gw = np.einsum("boxy,bcxyij->ocij", gout, win, optimize=True)
    gb = gout.sum(axis=(0, 2, 3))
    B, C, H, W = x_shape
    gx = np.zeros((B, C, H + 2, W + 2))
    ho, wo = gout.shape[2], gout.shape[3]
    for i in range(3):
        for j in range(3):
            gx[:, :, i:i + 2 * ho:2, j:j + 2 * wo:2] += np.einsum(
                "boxy,oc->bcxy", gout, w[:, :, i, j], optimize=True)
    return gw, gb, gx[:, :, 1:-1, 1:-1]


def _leaky(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, LEAK * x)


def _leaky_grad(pre: np.ndarray) -> np.ndarray:
    return np.where(pre > 0, 1.0, LEAK)


@dataclass
class PoseCandidates:
    """M candidate poses per image in a batch."""

    rotations: np.ndarray     # (B, M, 3, 3)
    translations: np.ndarray  # (B, M, 2)

    @property
    def n_heads(self) -> int:
        return self.rotations.shape[1]


@dataclass
class EncoderCache:
    images: np.ndarray
    conv_pre: list
    conv_windows: list
    conv_in_shapes: list
    features: np.ndarray
    head_pre: np.ndarray      # (M, B, HEAD_HIDDEN)
    head_act: np.ndarray
    head_out: np.ndarray      # (M, B, HEAD_OUT)
    s2s2_raw: np.ndarray      # (B, M, 6)
    pool_hw: tuple


def encode_forward(images: np.ndarray, params: EncoderParams
                   ) -> tuple[PoseCandidates, EncoderCache]:
    """Candidate poses for a batch of preprocessed images."""
    images = np.asarray(images, dtype=float)
    if images.ndim == 2:
        images = images[None]
    B = images.shape[0]
    x = images[:, None, :, :]

    conv_pre, conv_windows, conv_in_shapes = [], [], []
    for i in range(len(CONV_CHANNELS)):
        conv_in_shapes.append(x.shape)
        pre, win = _conv_forward(x, params.tensors[f"conv{i}.w"], params.tensors[f"conv{i}.b"])
        conv_pre.append(pre)
        conv_windows.append(win)
        x = _leaky(pre)
    pool_hw = x.shape[2:]
    features = x.mean(axis=(2, 3))

    M = params.n_heads
    head_pre = np.empty((M, B, HEAD_HIDDEN))
    head_act = np.empty((M, B, HEAD_HIDDEN))
    head_out = np.empty((M, B, HEAD_OUT))
    for j in range(M):
        w1, b1 = params.tensors[f"head{j}.w1"], params.tensors[f"head{j}.b1"]
        w2, b2 = params.tensors[f"head{j}.w2"], params.tensors[f"head{j}.b2"]
        pre = features @ w1.T + b1
        act = _leaky(pre)
        head_pre[j], head_act[j] = pre, act
        head_out[j] = act @ w2.T + b2

    s2s2_raw = head_out[:, :, :6].transpose(1, 0, 2) + S2S2_JITTER
    rotations = np.empty((B, M, 3, 3))
    for b in range(B):
        for j in range(M):
            rotations[b, j] = rotation_from_s2s2(s2s2_raw[b, j])
    translations = params.t_max * np.tanh(head_out[:, :, 6:8].transpose(1, 0, 2))

    cache = EncoderCache(images=images, conv_pre=conv_pre, conv_windows=conv_windows,
                         conv_in_shapes=conv_in_shapes, features=features,
                         head_pre=head_pre, head_act=head_act, head_out=head_out,
                         s2s2_raw=s2s2_raw, pool_hw=pool_hw)
    return PoseCandidates(rotations=rotations, translations=translations), cache


def encode_backward(grad_rotations: np.ndarray, grad_translations: np.ndarray,
                    winners: np.ndarray, cache: EncoderCache, params: EncoderParams
                    ) -> dict[str, np.ndarray]:
    """Parameter gradients of the batch loss through the winning heads only.

    grad_rotations (B, 3, 3) and grad_translations (B, 2) are the upstream
    gradients w.r.t. each image's winning pose.  Losing heads receive exactly
    zero; the backbone is reached only through the winners.
    """
    B = cache.features.shape[0]
    if grad_rotations.shape[0] != B or len(winners) != B:
        raise StaleCache("upstream batch size does not match the forward cache")
    M = params.n_heads
    grads = {k: np.zeros_like(v) for k, v in params.tensors.items()}

    dout = np.zeros((B, HEAD_OUT))
    for b in range(B):
        j = winners[b]
        dout[b, :6] = rotation_from_s2s2_vjp(cache.s2s2_raw[b, j], grad_rotations[b])
        th = np.tanh(cache.head_out[j, b, 6:8])
        dout[b, 6:8] = grad_translations[b] * params.t_max * (1.0 - th * th)

    dfeat = np.zeros((B, FEATURE_DIM))
    winners = np.asarray(winners)
    for j in range(M):
        sel = np.nonzero(winners == j)[0]
        if sel.size == 0:
            continue
        w1, w2 = params.tensors[f"head{j}.w1"], params.tensors[f"head{j}.w2"]
        do = dout[sel]
        act = cache.head_act[j, sel]
        grads[f"head{j}.w2"] = do.T @ act
        grads[f"head{j}.b2"] = do.sum(axis=0)
        dact = do @ w2
        dpre = dact * _leaky_grad(cache.head_pre[j, sel])
        grads[f"head{j}.w1"] = dpre.T @ cache.features[sel]
        grads[f"head{j}.b1"] = dpre.sum(axis=0)
        dfeat[sel] = dpre @ w1

    hw = cache.pool_hw
    gx = np.broadcast_to(dfeat[:, :, None, None] / (hw[0] * hw[1]),
                         (B, FEATURE_DIM, hw[0], hw[1])).copy()
    for i in reversed(range(len(CONV_CHANNELS))):
        gx = gx * _leaky_grad(cache.conv_pre[i])
        gw, gb, gx = _conv_backward(gx, cache.conv_windows[i],
                                    params.tensors[f"conv{i}.w"], cache.conv_in_shapes[i])
        grads[f"conv{i}.w"] = gw
        grads[f"conv{i}.b"] = gb
    return grads


def encoder_step(params: EncoderParams, grads: dict[str, np.ndarray], lr: float) -> None:
    """Adam update over every tensor, in a fixed name order."""
    for name in sorted(params.tensors):
        adam_step(params.tensors[name], grads[name], params.adam[name], lr)


def parameter_count(params: EncoderParams) -> dict[str, int]:
    backbone = sum(params.tensors[k].size for k in params.backbone_names)
    heads = sum(v.size for k, v in params.tensors.items() if k.startswith("head"))
    return {"backbone": backbone, "heads": heads}
