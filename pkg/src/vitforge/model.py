"""The Vision Transformer: patch extraction, embeddings, encoder, head.

The forward functions are written against the autodiff ops, so the same code
runs taped (parameters wrapped as ``autodiff.param``) during training and
untaped (plain arrays) during inference.

Parameter naming is dotted and canonical, e.g. ``encoder.3.attn.w_q``; the
full list for a config comes from ``parameter_shapes``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from vitforge import autodiff as ad
from vitforge.ops import Rng, ShapeError

LN_EPS = 1e-6
INIT_STD = 0.02


@dataclass(frozen=True)
class ViTConfig:
    """Architecture hyperparameters. The defaults are the ViT-Base profile."""

    image_size: int = 224
    channels: int = 3
    patch_size: int = 16
    hidden_dim: int = 768
    mlp_dim: int = 3072
    num_heads: int = 12
    num_layers: int = 12
    num_classes: int = 2

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        for field in ("image_size", "channels", "patch_size", "hidden_dim",
                      "mlp_dim", "num_heads", "num_layers", "num_classes"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be positive")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


def parameter_shapes(config: ViTConfig) -> dict:
    """Canonical (name -> shape) map for every model parameter."""
    d = config.hidden_dim
    shapes: dict[str, tuple] = {
        "embed.patch.weight": (config.patch_dim, d),
        "embed.patch.bias": (d,),
        "embed.cls": (1, d),
        "embed.pos": (config.num_patches + 1, d),
    }
    for l in range(config.num_layers):
        p = f"encoder.{l}"
        shapes[f"{p}.ln1.gamma"] = (d,)
        shapes[f"{p}.ln1.beta"] = (d,)
        for proj in ("w_q", "w_k", "w_v", "w_o"):
            shapes[f"{p}.attn.{proj}"] = (d, d)
        for bias in ("b_q", "b_k", "b_v", "b_o"):
            shapes[f"{p}.attn.{bias}"] = (d,)
        shapes[f"{p}.ln2.gamma"] = (d,)
        shapes[f"{p}.ln2.beta"] = (d,)
        shapes[f"{p}.mlp.w1"] = (d, config.mlp_dim)
        shapes[f"{p}.mlp.b1"] = (config.mlp_dim,)
        shapes[f"{p}.mlp.w2"] = (config.mlp_dim, d)
        shapes[f"{p}.mlp.b2"] = (d,)
    shapes["final_ln.gamma"] = (d,)
    shapes["final_ln.beta"] = (d,)
    shapes["head.weight"] = (d, config.num_classes)
    shapes["head.bias"] = (config.num_classes,)
    return shapes


HEAD_NAMES = ("head.weight", "head.bias")


class ModelParams:
    """Named parameter tensors plus a per-name trainable flag."""

    def __init__(self, tensors: Mapping[str, np.ndarray], trainable=None):
        self.tensors = dict(tensors)
        if trainable is None:
            trainable = {name: True for name in self.tensors}
        self.trainable = dict(trainable)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray):
        self.tensors[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list:
        """All parameter names in canonical (sorted) order."""
        return sorted(self.tensors)

    def trainable_names(self) -> list:
        return [n for n in self.names() if self.trainable.get(n, False)]

    def copy(self) -> "ModelParams":
        return ModelParams(
            {n: t.copy() for n, t in self.tensors.items()}, dict(self.trainable)
        )

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            {n: t.astype(dtype) for n, t in self.tensors.items()}, dict(self.trainable)
        )


def init_params(config: ViTConfig, rng: Rng, dtype=np.float32) -> ModelParams:
    """Fresh parameters: truncated-normal (std 0.02) projections and
    embeddings, unit layer-norm scales, zero biases and zero head."""
    tensors = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            t = np.ones(shape)
        elif leaf in ("beta", "bias") or leaf.startswith("b_") or leaf in ("b1", "b2"):
            t = np.zeros(shape)
        elif name in HEAD_NAMES:
            t = np.zeros(shape)
        else:
            t = rng.trunc_normal(shape, std=INIT_STD)
        tensors[name] = np.ascontiguousarray(t, dtype=dtype)
    return ModelParams(tensors)


def count_parameters(params: ModelParams, trainable_only: bool = False) -> int:
    names = params.trainable_names() if trainable_only else params.names()
    return sum(int(params[n].size) for n in names)


def _tensors_of(params):
    return params.tensors if isinstance(params, ModelParams) else params


# ---------------------------------------------------------------------------
# Forward pieces
# ---------------------------------------------------------------------------

def patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """Cut a C x H x W image into N x (P*P*C) flattened patches.

    Patches are enumerated row-major over the patch grid; within a patch the
    layout is (channel, row, column), i.e. the natural row-major order of the
    C x P x P sub-block.
    """
    image = np.asarray(image)
    if image.ndim != 3:
        raise ShapeError(f"patchify expects C x H x W, got {image.shape}")
    c, h, w = image.shape
    p = patch_size
    if h % p != 0 or w % p != 0:
        raise ShapeError(f"image {h}x{w} not divisible by patch size {p}")
    grid = image.reshape(c, h // p, p, w // p, p)
    patches = grid.transpose(1, 3, 0, 2, 4).reshape((h // p) * (w // p), c * p * p)
    return np.ascontiguousarray(patches)


def embed(patches, params):
    """Project patches, prepend the class token, add positional embeddings."""
    t = _tensors_of(params)
    projected = ad.add(ad.matmul(patches, t["embed.patch.weight"]), t["embed.patch.bias"])
    tokens = ad.concat([t["embed.cls"], projected], axis=0)
    return ad.add(tokens, t["embed.pos"])


def attention_head(x, w_q, w_k, w_v, b_q=None, b_k=None, b_v=None):
    """One scaled dot-product attention head: softmax(QK^T / sqrt(d_k)) V."""
    d_k = ad.value_of(w_q).shape[-1]
    q = ad.matmul(x, w_q)
    k = ad.matmul(x, w_k)
    v = ad.matmul(x, w_v)
    if b_q is not None:
        q = ad.add(q, b_q)
    if b_k is not None:
        k = ad.add(k, b_k)
    if b_v is not None:
        v = ad.add(v, b_v)
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(d_k))
    return ad.attention_context(ad.softmax_rows(scores), v)


def multi_head_self_attention(z, params, layer: int, num_heads: int):
    """Concatenate per-head attention outputs, then apply the output projection."""
    t = _tensors_of(params)
    prefix = f"encoder.{layer}.attn"
    d = ad.value_of(t[f"{prefix}.w_q"]).shape[0]
    if d % num_heads != 0:
        raise ShapeError(f"hidden dim {d} not divisible by {num_heads} heads")
    d_k = d // num_heads

    heads = []
    for h in range(num_heads):
        lo, hi = h * d_k, (h + 1) * d_k
        heads.append(
            attention_head(
                z,
                ad.narrow(t[f"{prefix}.w_q"], 1, lo, hi),
                ad.narrow(t[f"{prefix}.w_k"], 1, lo, hi),
                ad.narrow(t[f"{prefix}.w_v"], 1, lo, hi),
                ad.narrow(t[f"{prefix}.b_q"], 0, lo, hi),
                ad.narrow(t[f"{prefix}.b_k"], 0, lo, hi),
                ad.narrow(t[f"{prefix}.b_v"], 0, lo, hi),
            )
        )
    merged = ad.concat(heads, axis=1)
    return ad.add(ad.matmul(merged, t[f"{prefix}.w_o"]), t[f"{prefix}.b_o"])


def mlp_block(x, params, layer: int):
    """Position-wise feed-forward: linear -> GELU -> linear."""
    t = _tensors_of(params)
    prefix = f"encoder.{layer}.mlp"
    hidden = ad.gelu(ad.add(ad.matmul(x, t[f"{prefix}.w1"]), t[f"{prefix}.b1"]))
    return ad.add(ad.matmul(hidden, t[f"{prefix}.w2"]), t[f"{prefix}.b2"])


def encoder_block(z_prev, params, layer: int, num_heads: int):
    """Pre-norm transformer block: attention residual, then MLP residual."""
    t = _tensors_of(params)
    p = f"encoder.{layer}"
    normed = ad.layer_norm(z_prev, t[f"{p}.ln1.gamma"], t[f"{p}.ln1.beta"], eps=LN_EPS)
    z_mid = ad.add(multi_head_self_attention(normed, params, layer, num_heads), z_prev)
    normed2 = ad.layer_norm(z_mid, t[f"{p}.ln2.gamma"], t[f"{p}.ln2.beta"], eps=LN_EPS)
    return ad.add(mlp_block(normed2, params, layer), z_mid)


def forward_features(image, params, config: ViTConfig):
    """Single image -> final-layer-normed token matrix, shape (N+1) x D."""
    t = _tensors_of(params)
    patches = patchify(ad.value_of(image), config.patch_size)
    z = embed(patches, t)
    for layer in range(config.num_layers):
        z = encoder_block(z, t, layer, config.num_heads)
    return ad.layer_norm(z, t["final_ln.gamma"], t["final_ln.beta"], eps=LN_EPS)


def forward_one(image, params, config: ViTConfig):
    """Single image -> 1 x K logits from the class-token representation."""
    t = _tensors_of(params)
    tokens = forward_features(image, t, config)
    cls = ad.narrow(tokens, 0, 0, 1)
    return ad.add(ad.matmul(cls, t["head.weight"]), t["head.bias"])


def forward(images, params, config: ViTConfig):
    """Batch of B x C x H x W images -> B x K logits.

    Samples are processed independently, so batch composition cannot change
    any row bitwise. Shape problems carry the offending sample index.
    """
    images = np.asarray(images) if not isinstance(images, np.ndarray) else images
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4:
        raise ShapeError(f"forward expects B x C x H x W images, got {images.shape}")
    if images.shape[0] < 1:
        raise ShapeError("forward requires a non-empty batch")

    rows = []
    for i in range(images.shape[0]):
        try:
            rows.append(forward_one(images[i], params, config))
        except ShapeError as exc:
            raise ShapeError(f"sample {i}: {exc}") from exc
    return ad.concat(rows, axis=0)
