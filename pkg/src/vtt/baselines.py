"""Concatenation and product-of-experts fusion baselines.

Both share per-modality encoders (a strided patch projection plus a
two-layer map for the image, a two-layer map for the wrench) and the
contact/alignment heads, so they plug into the same training pipeline as
the attention encoder.  Only the fusion module differs: concatenation
stacks the two features, PoE turns each into a diagonal Gaussian expert
and fuses by precision weighting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .params import linear_init
from .rng import SeededRng
from .tensor import (Tensor, add, clamp, concat, exp, linear, linear_relu,
                     log, mul, reshape, sqrt, sub, sum_, mean_)
from .encoder import extract_patches


@dataclass(frozen=True)
class BaselineConfig:
    """Capacity knobs for the baseline encoders.

    The defaults (set in the experiment config) keep the baselines roughly
    5x smaller than the attention encoder at full scale; `adjust_factor`
    scales the image hidden width up to produce the size-matched variants.
    """

    image_hw: int
    patch_px: int
    patch_dim: int
    hidden: int
    image_dim: int
    tactile_hidden: int
    tactile_dim: int
    poe_dim: int
    adjusted: bool = False
    adjust_factor: float = 5.3

    @property
    def grid(self) -> int:
        return self.image_hw // self.patch_px

    @property
    def n_patches(self) -> int:
        return self.grid * self.grid

    @property
    def hidden_width(self) -> int:
        return int(round(self.hidden * self.adjust_factor)) if self.adjusted else self.hidden

    @property
    def concat_dim(self) -> int:
        return self.image_dim + self.tactile_dim


@dataclass
class GaussianExpert:
    mu: Tensor   # [B, j]
    var: Tensor  # [B, j], strictly positive


def init_modality_params(bcfg: BaselineConfig, rng: SeededRng) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    patch_in = bcfg.patch_px * bcfg.patch_px * 3
    p["img/patch_w"], p["img/patch_b"] = linear_init(rng, patch_in, bcfg.patch_dim)
    p["img/fc1_w"], p["img/fc1_b"] = linear_init(rng, bcfg.n_patches * bcfg.patch_dim,
                                                 bcfg.hidden_width)
    p["img/fc2_w"], p["img/fc2_b"] = linear_init(rng, bcfg.hidden_width, bcfg.image_dim)
    p["tac/fc1_w"], p["tac/fc1_b"] = linear_init(rng, 6, bcfg.tactile_hidden)
    p["tac/fc2_w"], p["tac/fc2_b"] = linear_init(rng, bcfg.tactile_hidden, bcfg.tactile_dim)
    return p


def init_concat_params(bcfg: BaselineConfig, rng: SeededRng) -> dict[str, Tensor]:
    p = init_modality_params(bcfg, rng)
    p["head/contact_w"], p["head/contact_b"] = linear_init(rng, bcfg.concat_dim, 1)
    p["head/align_w"], p["head/align_b"] = linear_init(rng, bcfg.concat_dim, 1)
    return p


def init_poe_params(bcfg: BaselineConfig, rng: SeededRng) -> dict[str, Tensor]:
    p = init_modality_params(bcfg, rng)
    j = bcfg.poe_dim
    p["poe/img_mu_w"], p["poe/img_mu_b"] = linear_init(rng, bcfg.image_dim, j)
    p["poe/img_lv_w"], p["poe/img_lv_b"] = linear_init(rng, bcfg.image_dim, j)
    p["poe/tac_mu_w"], p["poe/tac_mu_b"] = linear_init(rng, bcfg.tactile_dim, j)
    p["poe/tac_lv_w"], p["poe/tac_lv_b"] = linear_init(rng, bcfg.tactile_dim, j)
    p["head/contact_w"], p["head/contact_b"] = linear_init(rng, j, 1)
    p["head/align_w"], p["head/align_b"] = linear_init(rng, j, 1)
    return p


def image_feature(images: np.ndarray, params, bcfg: BaselineConfig) -> Tensor:
    """[B, H, W, 3] -> E_I [B, image_dim]."""
    patches = extract_patches(np.asarray(images, dtype=np.float32),
                              bcfg.image_hw, bcfg.patch_px)
    h = linear_relu(Tensor(patches), params["img/patch_w"], params["img/patch_b"])
    b = h.shape[0]
    h = reshape(h, (b, bcfg.n_patches * bcfg.patch_dim))
    h = linear_relu(h, params["img/fc1_w"], params["img/fc1_b"])
    return linear(h, params["img/fc2_w"], params["img/fc2_b"])


def tactile_feature(wrenches: np.ndarray, params) -> Tensor:
    """[B, 6] -> E_T [B, tactile_dim]."""
    w = np.asarray(wrenches, dtype=np.float32).reshape(-1, 6)
    if not np.all(np.isfinite(w)):
        raise ValidationError("wrench contains non-finite values")
    h = linear_relu(Tensor(w), params["tac/fc1_w"], params["tac/fc1_b"])
    return linear(h, params["tac/fc2_w"], params["tac/fc2_b"])


# ---------------------------------------------------------------------------
# fusion modules


def fuse_concat(e_img: Tensor, e_tac: Tensor) -> Tensor:
    """z = [E_I; E_T], width d_I + d_T."""
    if e_img.ndim != e_tac.ndim:
        raise ShapeError(f"rank mismatch: {e_img.shape} vs {e_tac.shape}")
    return concat([e_img, e_tac], axis=-1)


def fuse_poe(experts: list[GaussianExpert], noise: np.ndarray | None = None,
             rng: SeededRng | None = None):
    """Precision-weighted product of diagonal Gaussian experts.

    var_j = (sum_i 1/var_ij)^-1 and mu_j = var_j * sum_i mu_ij/var_ij,
    sampled with the reparameterization trick.  Returns (mu, var, sample).
    With the usual two experts the result is exactly permutation-invariant
    (float addition commutes); longer lists reduce in argument order.
    """
    if not experts:
        raise ValidationError("fuse_poe needs at least one expert")
    shape = experts[0].mu.shape
    for e in experts:
        if e.mu.shape != shape or e.var.shape != shape:
            raise ShapeError(f"expert shapes disagree: {e.mu.shape} vs {shape}")
        if np.any(e.var.data <= 0):
            raise ValidationError("expert variances must be strictly positive")
    precision = None
    weighted_mu = None
    for e in experts:
        prec = 1.0 / e.var
        pm = mul(e.mu, prec)
        precision = prec if precision is None else add(precision, prec)
        weighted_mu = pm if weighted_mu is None else add(weighted_mu, pm)
    var = 1.0 / precision
    mu = mul(var, weighted_mu)
    if noise is None:
        if rng is None:
            raise ValidationError("fuse_poe needs `noise` or `rng` for sampling")
        noise = rng.normal(shape).astype(np.float32)
    sample = add(mu, mul(sqrt(var), Tensor(np.asarray(noise, dtype=np.float32))))
    return mu, var, sample


def poe_kl_regularizer(expert: GaussianExpert) -> Tensor:
    """KL(N(mu, var) || N(0, I)) summed over features, averaged over the batch."""
    v, m = expert.var, expert.mu
    per_feature = mul(add(sub(add(v, mul(m, m)), 1.0), -log(v)), 0.5)
    per_row = sum_(per_feature, axis=-1)
    return mean_(per_row)


def make_expert(feature: Tensor, params, prefix: str) -> GaussianExpert:
    """Map a modality feature to a Gaussian expert (log-variance clamped to [-10, 4])."""
    mu = linear(feature, params[f"poe/{prefix}_mu_w"], params[f"poe/{prefix}_mu_b"])
    lv = clamp(linear(feature, params[f"poe/{prefix}_lv_w"], params[f"poe/{prefix}_lv_b"]),
               -10.0, 4.0)
    return GaussianExpert(mu=mu, var=exp(lv))


# ---------------------------------------------------------------------------
# full baseline paths (same outputs as the attention encoder's encode_batch)


def _heads(z: Tensor, params):
    b = z.shape[0]
    contact = reshape(linear(z, params["head/contact_w"], params["head/contact_b"]), (b, 1))
    align = reshape(linear(z, params["head/align_w"], params["head/align_b"]), (b, 1))
    return contact, align


def concat_encode_batch(images, wrenches, params, bcfg: BaselineConfig):
    """Returns (z [B, d_I+d_T], contact logits, align logits)."""
    z = fuse_concat(image_feature(images, params, bcfg), tactile_feature(wrenches, params))
    contact, align = _heads(z, params)
    return z, contact, align


def poe_encode_batch(images, wrenches, params, bcfg: BaselineConfig,
                     noise: np.ndarray | None = None, rng: SeededRng | None = None):
    """Returns (z sample [B, j], contact logits, align logits, expert KL term)."""
    e_img = image_feature(images, params, bcfg)
    e_tac = tactile_feature(wrenches, params)
    experts = [make_expert(e_img, params, "img"), make_expert(e_tac, params, "tac")]
    _, _, z = fuse_poe(experts, noise=noise, rng=rng)
    contact, align = _heads(z, params)
    kl = add(poe_kl_regularizer(experts[0]), poe_kl_regularizer(experts[1]))
    return z, contact, align, kl
