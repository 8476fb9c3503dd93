"""Visuo-tactile attention encoder.

Pipeline: patch both modalities, prepend learned contact/alignment tokens,
add the position/modality embedding, run a stack of attention fusion layers
(each decomposable into self and cross-modal parts), then compress the fused
heads into a flat latent code.

All forward functions accept either a single observation (tokens shaped
[R, d]) or a batch ([B, R, d]); parameters are shared, immutable dicts of
name -> Tensor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, ValidationError
from .params import embedding_init, linear_init, ones_param, zeros_param
from .rng import SeededRng
from .tensor import (Tensor, add, bce_with_logits, broadcast_rows, concat,
                     layer_norm, linear, linear_gelu, linear_relu, matmul,
                     mul, narrow, reshape, softmax_rows, swapaxes)

N_TACTILE_PATCHES = 2  # force row + torque row


@dataclass(frozen=True)
class VttConfig:
    """Architecture dimensions for the fusion encoder."""

    image_hw: int = 24
    patch_px: int = 4
    d: int = 64
    heads: int = 4
    n_layers: int = 2
    c: int = 8
    z_dim: int = 64
    compress_hidden: int = 40
    z_hidden: int = 0  # 0 means "use z_dim"
    use_contact_token: bool = True  # ablations drop the token and its loss together
    use_align_token: bool = True

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ConfigError(f"d={self.d} must be divisible by heads={self.heads}")
        if self.image_hw % self.patch_px != 0:
            raise ConfigError(f"image_hw={self.image_hw} must be divisible by patch_px={self.patch_px}")
        if self.c <= 4:
            raise ConfigError(f"compression divisor c must exceed 4, got {self.c}")
        if self.d % self.c != 0:
            raise ConfigError(f"d={self.d} must be divisible by c={self.c}")

    @property
    def grid(self) -> int:
        return self.image_hw // self.patch_px

    @property
    def n_image_patches(self) -> int:
        return self.grid * self.grid

    @property
    def n_embed_tokens(self) -> int:
        return int(self.use_contact_token) + int(self.use_align_token)

    @property
    def n_tokens(self) -> int:
        return self.n_embed_tokens + self.n_image_patches + N_TACTILE_PATCHES

    @property
    def d_k(self) -> int:
        return self.d // self.heads

    @property
    def token_width_compressed(self) -> int:
        return self.d // self.c

    @property
    def z_hidden_width(self) -> int:
        return self.z_hidden if self.z_hidden > 0 else self.z_dim

    def layout(self) -> "TokenLayout":
        return TokenLayout(self.n_image_patches, N_TACTILE_PATCHES,
                           self.use_contact_token, self.use_align_token)


def paper_config() -> VttConfig:
    """The full-scale reference dimensions (84px/14px, d=384, h=8, N=6, c=12)."""
    return VttConfig(image_hw=84, patch_px=14, d=384, heads=8, n_layers=6,
                     c=12, z_dim=288, compress_hidden=40)


@dataclass(frozen=True)
class TokenLayout:
    """Fixed row order: [contact?; alignment?; image patches; tactile patches]."""

    n_image: int
    n_tactile: int = N_TACTILE_PATCHES
    has_contact: bool = True
    has_align: bool = True

    @property
    def n_embed(self) -> int:
        return int(self.has_contact) + int(self.has_align)

    @property
    def n_tokens(self) -> int:
        return self.n_embed + self.n_image + self.n_tactile

    @property
    def contact_index(self) -> int | None:
        return 0 if self.has_contact else None

    @property
    def align_index(self) -> int | None:
        if not self.has_align:
            return None
        return 1 if self.has_contact else 0

    @property
    def image_slice(self) -> slice:
        return slice(self.n_embed, self.n_embed + self.n_image)

    @property
    def tactile_slice(self) -> slice:
        return slice(self.n_embed + self.n_image, self.n_tokens)


@dataclass
class TokenSequence:
    tokens: Tensor  # [..., R, d]
    layout: TokenLayout


@dataclass
class AttentionDecomposition:
    """Row-stochastic heatmaps plus the exact self/cross split of their output.

    `full` holds the per-head softmax weights; self_out + cross_out equals the
    concatenated head outputs exactly (the split is a block partition of the
    S @ V product).  Block masses are mean attention weights, embedding tokens
    excluded.
    """

    full: Tensor            # [..., h, R, R]
    self_out: Tensor        # [..., R, d]
    cross_out: Tensor       # [..., R, d]
    mass_image_self: float
    mass_tactile_self: float
    mass_image_from_tactile: float   # image queries attending tactile keys
    mass_tactile_from_image: float
    layout: TokenLayout


@dataclass
class LatentCode:
    z: Tensor  # [..., z_dim]


# ---------------------------------------------------------------------------
# parameters


def init_vtt_params(cfg: VttConfig, rng: SeededRng) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    patch_dim = cfg.patch_px * cfg.patch_px * 3
    p["patch/img_w"], p["patch/img_b"] = linear_init(rng, patch_dim, cfg.d)
    p["patch/tac_w"], p["patch/tac_b"] = linear_init(rng, 3, cfg.d)
    if cfg.use_contact_token:
        p["embed/contact"] = embedding_init(rng, (1, cfg.d))
    if cfg.use_align_token:
        p["embed/align"] = embedding_init(rng, (1, cfg.d))
    p["embed/pos"] = embedding_init(rng, (cfg.n_tokens, cfg.d))
    for i in range(cfg.n_layers):
        pre = f"layer{i}/"
        p[pre + "ln1_g"] = ones_param(cfg.d)
        p[pre + "ln1_b"] = zeros_param(cfg.d)
        for proj in ("q", "k", "v"):
            p[pre + proj + "1_w"], p[pre + proj + "1_b"] = linear_init(rng, cfg.d, cfg.d)
            p[pre + proj + "2_w"], p[pre + proj + "2_b"] = linear_init(rng, cfg.d, cfg.d)
        p[pre + "mix_w"], p[pre + "mix_b"] = linear_init(rng, cfg.d, cfg.d)
        p[pre + "ln2_g"] = ones_param(cfg.d)
        p[pre + "ln2_b"] = zeros_param(cfg.d)
        p[pre + "ff1_w"], p[pre + "ff1_b"] = linear_init(rng, cfg.d, cfg.d)
        p[pre + "ff2_w"], p[pre + "ff2_b"] = linear_init(rng, cfg.d, cfg.d)
    if cfg.use_contact_token:
        p["head/contact_w"], p["head/contact_b"] = linear_init(rng, cfg.d, 1)
    if cfg.use_align_token:
        p["head/align_w"], p["head/align_b"] = linear_init(rng, cfg.d, 1)
    ch = cfg.compress_hidden
    p["compress/tok1_w"], p["compress/tok1_b"] = linear_init(rng, cfg.d, ch)
    p["compress/tok2_w"], p["compress/tok2_b"] = linear_init(rng, ch, cfg.token_width_compressed)
    flat = cfg.n_tokens * cfg.token_width_compressed
    zh = cfg.z_hidden_width
    p["compress/z1_w"], p["compress/z1_b"] = linear_init(rng, flat, zh)
    p["compress/z2_w"], p["compress/z2_b"] = linear_init(rng, zh, cfg.z_dim)
    return p


# ---------------------------------------------------------------------------
# patching


def extract_patches(img: np.ndarray, image_hw: int, patch_px: int) -> np.ndarray:
    """[..., H, W, 3] -> [..., P_I, patch_px*patch_px*3] in row-major patch order."""
    g = image_hw // patch_px
    if img.shape[-3:] != (image_hw, image_hw, 3):
        raise ShapeError(f"expected image of shape (..., {image_hw}, {image_hw}, 3), got {img.shape}")
    lead = img.shape[:-3]
    x = img.reshape(lead + (g, patch_px, g, patch_px, 3))
    x = np.moveaxis(x, -4, -3)  # [..., g, g, px, px, 3]
    return np.ascontiguousarray(x).reshape(lead + (g * g, patch_px * patch_px * 3))


def patch_image(img, cfg: VttConfig, params: dict[str, Tensor]) -> Tensor:
    """Project non-overlapping square patches to width d.

    Equivalent to a strided convolution with kernel = stride = patch size.
    """
    data = img.data if isinstance(img, Tensor) else np.asarray(img, dtype=np.float32)
    patches = extract_patches(data, cfg.image_hw, cfg.patch_px)
    return linear(Tensor(patches), params["patch/img_w"], params["patch/img_b"])


def _patch_tactile_batch(wrenches: np.ndarray, params: dict[str, Tensor]) -> Tensor:
    """[B, 6] -> [B, 2, d] with rows [force, torque] sharing one projection."""
    if wrenches.ndim != 2 or wrenches.shape[-1] != 6:
        raise ShapeError(f"expected wrenches of shape (B, 6), got {wrenches.shape}")
    if not np.all(np.isfinite(wrenches)):
        raise ValidationError("wrench contains non-finite values")
    rows = wrenches.reshape(-1, 2, 3)
    return linear(Tensor(rows), params["patch/tac_w"], params["patch/tac_b"])


def patch_tactile(wrench, params: dict[str, Tensor]) -> Tensor:
    """Split one 6-D wrench into force and torque rows, shared linear projection.

    Accepts [1, 6] or [6]; returns [2, d].
    """
    data = wrench.data if isinstance(wrench, Tensor) else np.asarray(wrench, dtype=np.float32)
    out = _patch_tactile_batch(data.reshape(1, 6), params)
    return reshape(out, (2, out.shape[-1]))


def assemble_tokens(x_img: Tensor, x_tac: Tensor, params: dict[str, Tensor]) -> TokenSequence:
    """Stack [contact; alignment; image; tactile] and add the position embedding.

    Embedding tokens are included exactly when their parameters exist (the
    ablated variants drop token, head and loss together).
    """
    d = params["embed/pos"].shape[-1]
    if x_img.shape[-1] != d or x_tac.shape[-1] != d:
        raise ShapeError(f"token widths disagree: image {x_img.shape[-1]}, tactile "
                         f"{x_tac.shape[-1]}, embeddings {d}")
    layout = TokenLayout(n_image=x_img.shape[-2], n_tactile=x_tac.shape[-2],
                         has_contact="embed/contact" in params,
                         has_align="embed/align" in params)
    parts = []
    for key, present in (("embed/contact", layout.has_contact),
                         ("embed/align", layout.has_align)):
        if present:
            tok = params[key]
            if x_img.ndim == 3:
                tok = broadcast_rows(tok, (x_img.shape[0], 1))
            parts.append(tok)
    parts.extend([x_img, x_tac])
    stacked = concat(parts, axis=-2)
    if stacked.shape[-2] != params["embed/pos"].shape[0]:
        raise ShapeError(f"token count {stacked.shape[-2]} does not match position "
                         f"embedding rows {params['embed/pos'].shape[0]}")
    return TokenSequence(add(stacked, params["embed/pos"]), layout)


# ---------------------------------------------------------------------------
# attention layers


def _mlp2_gelu(x: Tensor, params, pre: str, stem: str) -> Tensor:
    h = linear_gelu(x, params[pre + stem + "1_w"], params[pre + stem + "1_b"])
    return linear_gelu(h, params[pre + stem + "2_w"], params[pre + stem + "2_b"])


def _split_heads(x: Tensor, heads: int) -> Tensor:
    """[..., R, d] -> [..., h, R, d/h]."""
    r, d = x.shape[-2], x.shape[-1]
    lead = x.shape[:-2]
    x = reshape(x, lead + (r, heads, d // heads))
    return swapaxes(x, -3, -2)


def _merge_heads(x: Tensor) -> Tensor:
    """[..., h, R, d/h] -> [..., R, d] (concatenation over heads)."""
    h, r, dk = x.shape[-3], x.shape[-2], x.shape[-1]
    lead = x.shape[:-3]
    return reshape(swapaxes(x, -3, -2), lead + (r, h * dk))


def attention_layer_forward(seq: TokenSequence, params: dict[str, Tensor], layer: int,
                            cfg: VttConfig, want_decomposition: bool = True):
    """One attention fusion layer.

    Pre-normalization residual block: the normalized tokens feed three
    two-layer GELU projection maps whose d-wide outputs are split across
    heads; scaled dot-product scores use the regularization factor sqrt(d);
    head outputs are concatenated, linearly mixed and added back, then a
    normalized two-layer feed-forward block is added on top.
    """
    pre = f"layer{layer}/"
    x = seq.tokens
    u = layer_norm(x, params[pre + "ln1_g"], params[pre + "ln1_b"])
    q = _split_heads(_mlp2_gelu(u, params, pre, "q"), cfg.heads)
    k = _split_heads(_mlp2_gelu(u, params, pre, "k"), cfg.heads)
    v = _split_heads(_mlp2_gelu(u, params, pre, "v"), cfg.heads)
    scores = mul(matmul(q, swapaxes(k, -1, -2)), 1.0 / math.sqrt(cfg.d))
    s = softmax_rows(scores)                      # [..., h, R, R]
    att = _merge_heads(matmul(s, v))              # [..., R, d]
    mixed = linear(att, params[pre + "mix_w"], params[pre + "mix_b"])
    x1 = add(x, mixed)
    f = _mlp2_gelu(layer_norm(x1, params[pre + "ln2_g"], params[pre + "ln2_b"]),
                   params, pre, "ff")
    out = TokenSequence(add(x1, f), seq.layout)
    decomp = decompose_attention(s, v, seq.layout) if want_decomposition else None
    return out, decomp


def _cross_mask(layout: TokenLayout) -> np.ndarray:
    r = layout.n_tokens
    img, tac = layout.image_slice, layout.tactile_slice
    m = np.zeros((r, r), dtype=np.float32)
    m[img, tac] = 1.0
    m[tac, img] = 1.0
    return m


def decompose_attention(s: Tensor, v: Tensor, layout: TokenLayout) -> AttentionDecomposition:
    """Split attention output into self and cross-modal parts.

    Cross = image queries reading tactile keys and vice versa; everything
    else (including the embedding tokens' rows and columns) counts as self,
    so self_out + cross_out reconstructs the full S @ V product exactly.
    """
    cross = _cross_mask(layout)
    self_mask = 1.0 - cross
    self_out = _merge_heads(matmul(mul(s, Tensor(self_mask)), v))
    cross_out = _merge_heads(matmul(mul(s, Tensor(cross)), v))
    sd = s.data
    img, tac = layout.image_slice, layout.tactile_slice

    def block_mean(rows, cols):
        block = sd[..., rows, cols]
        return float(block.mean()) if block.size else 0.0

    return AttentionDecomposition(
        full=s,
        self_out=self_out,
        cross_out=cross_out,
        mass_image_self=block_mean(img, img),
        mass_tactile_self=block_mean(tac, tac),
        mass_image_from_tactile=block_mean(img, tac),
        mass_tactile_from_image=block_mean(tac, img),
        layout=layout,
    )


# ---------------------------------------------------------------------------
# full encoder


def _obs_arrays(obs):
    if hasattr(obs, "image") and hasattr(obs, "wrench"):
        return obs.image, obs.wrench
    img, wrench = obs
    return img, wrench


def encoder_forward(obs, params: dict[str, Tensor], cfg: VttConfig,
                    want_decomposition: bool = True):
    """Patch, assemble and run the attention stack for one observation.

    Returns the final [R, d] head tokens and the per-layer decompositions.
    """
    img, wrench = _obs_arrays(obs)
    heads, decomps = encoder_forward_batch(
        np.asarray(img, dtype=np.float32)[None],
        np.asarray(wrench, dtype=np.float32).reshape(1, 6),
        params, cfg, want_decomposition)
    heads = reshape(heads, heads.shape[1:])
    decomps = [
        AttentionDecomposition(
            full=reshape(d.full, d.full.shape[1:]),
            self_out=reshape(d.self_out, d.self_out.shape[1:]),
            cross_out=reshape(d.cross_out, d.cross_out.shape[1:]),
            mass_image_self=d.mass_image_self,
            mass_tactile_self=d.mass_tactile_self,
            mass_image_from_tactile=d.mass_image_from_tactile,
            mass_tactile_from_image=d.mass_tactile_from_image,
            layout=d.layout,
        ) for d in decomps
    ]
    return heads, decomps


def encoder_forward_batch(images: np.ndarray, wrenches: np.ndarray,
                          params: dict[str, Tensor], cfg: VttConfig,
                          want_decomposition: bool = False):
    """Batched forward: images [B, H, W, 3], wrenches [B, 6] -> ([B, R, d], decomps)."""
    x_img = patch_image(images, cfg, params)
    x_tac = _patch_tactile_batch(np.asarray(wrenches, dtype=np.float32), params)
    seq = assemble_tokens(x_img, x_tac, params)
    decomps = []
    for i in range(cfg.n_layers):
        seq, dec = attention_layer_forward(seq, params, i, cfg, want_decomposition)
        if dec is not None:
            decomps.append(dec)
    return seq.tokens, decomps


def compress_tokens(heads: Tensor, params: dict[str, Tensor], cfg: VttConfig) -> Tensor:
    """Per-token two-layer reduction d -> d/c with a ReLU in between."""
    h = linear_relu(heads, params["compress/tok1_w"], params["compress/tok1_b"])
    return linear(h, params["compress/tok2_w"], params["compress/tok2_b"])


def compress(heads: Tensor, params: dict[str, Tensor], cfg: VttConfig) -> LatentCode:
    """Reduce every fused head, flatten, and map to the final latent width."""
    small = compress_tokens(heads, params, cfg)       # [..., R, d/c]
    r, w = small.shape[-2], small.shape[-1]
    lead = small.shape[:-2]
    flat = reshape(small, lead + (r * w,) if lead else (1, r * w))
    h = linear_relu(flat, params["compress/z1_w"], params["compress/z1_b"])
    z = linear(h, params["compress/z2_w"], params["compress/z2_b"])
    return LatentCode(z=z)


def predict_contact(c_head: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Single linear map from the contact head token to one logit."""
    return linear(c_head, params["head/contact_w"], params["head/contact_b"])


def predict_alignment(al_head: Tensor, params: dict[str, Tensor]) -> Tensor:
    return linear(al_head, params["head/align_w"], params["head/align_b"])


def vtt_loss(contact_logit: Tensor, alignment_logit: Tensor, contact_gt,
             alignment_gt) -> Tensor:
    """Sum of the contact and alignment binary cross entropies."""
    return add(bce_with_logits(contact_logit, contact_gt),
               bce_with_logits(alignment_logit, alignment_gt))


def encode(obs, params: dict[str, Tensor], cfg: VttConfig) -> Tensor:
    """Full path: observation -> fused heads -> latent code z [1, z_dim]."""
    heads, _ = encoder_forward(obs, params, cfg, want_decomposition=False)
    code = compress(heads, params, cfg)
    return code.z


def encode_batch(images: np.ndarray, wrenches: np.ndarray, params, cfg: VttConfig):
    """Batched path returning (z [B, z_dim], contact logits, align logits).

    Logits are None for variants whose embedding token is ablated.
    """
    heads, _ = encoder_forward_batch(images, wrenches, params, cfg, want_decomposition=False)
    layout = cfg.layout()
    z = compress(heads, params, cfg).z
    b = heads.shape[0]
    contact = align = None
    if layout.contact_index is not None:
        c_head = narrow(heads, -2, layout.contact_index, 1)
        contact = reshape(predict_contact(c_head, params), (b, 1))
    if layout.align_index is not None:
        al_head = narrow(heads, -2, layout.align_index, 1)
        align = reshape(predict_alignment(al_head, params), (b, 1))
    return z, contact, align
