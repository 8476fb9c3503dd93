"""Uniform interface over the fusion variants.

A FusionModel bundles one of {attention encoder, concatenation, PoE} with
its parameters so the dynamics model, policy, and CLI can stay agnostic to
which representation is being trained.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import baselines, encoder
from .baselines import BaselineConfig
from .encoder import VttConfig
from .errors import ConfigError
from .rng import SeededRng
from .tensor import Tensor

FUSION_KINDS = ("vtt", "concat", "poe", "vtt-no-contact", "vtt-no-align", "vtt-no-both")


def is_vtt_kind(kind: str) -> bool:
    return kind.startswith("vtt")


@dataclass
class FusionModel:
    kind: str
    params: dict[str, Tensor]
    cfg: VttConfig
    bcfg: BaselineConfig | None = None

    @property
    def z_width(self) -> int:
        if self.kind == "concat":
            return self.bcfg.concat_dim
        if self.kind == "poe":
            return self.bcfg.poe_dim
        return self.cfg.z_dim

    @property
    def use_contact_loss(self) -> bool:
        return self.kind not in ("vtt-no-contact", "vtt-no-both")

    @property
    def use_align_loss(self) -> bool:
        return self.kind not in ("vtt-no-align", "vtt-no-both")

    def encode_batch(self, images: np.ndarray, wrenches: np.ndarray,
                     noise: np.ndarray | None = None, rng: SeededRng | None = None):
        """Returns (z, contact_logits, align_logits, extra_regularizer).

        `noise` is consumed only by the PoE sample; the attention and concat
        paths are deterministic.  Logits are None where the variant has no
        corresponding head.
        """
        if self.kind == "concat":
            z, c, a = baselines.concat_encode_batch(images, wrenches, self.params, self.bcfg)
            return z, c, a, None
        if self.kind == "poe":
            z, c, a, kl = baselines.poe_encode_batch(images, wrenches, self.params,
                                                     self.bcfg, noise=noise, rng=rng)
            return z, c, a, kl
        z, c, a = encoder.encode_batch(images, wrenches, self.params, self.cfg)
        return z, c, a, None

    def encode_one(self, image: np.ndarray, wrench: np.ndarray,
                   noise: np.ndarray | None = None, rng: SeededRng | None = None) -> Tensor:
        z, _, _, _ = self.encode_batch(np.asarray(image, dtype=np.float32)[None],
                                       np.asarray(wrench, dtype=np.float32).reshape(1, 6),
                                       noise=noise, rng=rng)
        return z


def ablated_vtt_config(cfg: VttConfig, kind: str) -> VttConfig:
    from dataclasses import replace
    if kind in ("vtt-no-contact", "vtt-no-both") and cfg.use_contact_token:
        cfg = replace(cfg, use_contact_token=False)
    if kind in ("vtt-no-align", "vtt-no-both") and cfg.use_align_token:
        cfg = replace(cfg, use_align_token=False)
    return cfg


def init_fusion(kind: str, cfg: VttConfig, bcfg: BaselineConfig | None,
                rng: SeededRng) -> FusionModel:
    if kind not in FUSION_KINDS:
        raise ConfigError(f"unknown fusion kind '{kind}' (expected one of {FUSION_KINDS})")
    if kind == "concat":
        return FusionModel(kind, baselines.init_concat_params(bcfg, rng), cfg, bcfg)
    if kind == "poe":
        return FusionModel(kind, baselines.init_poe_params(bcfg, rng), cfg, bcfg)
    vcfg = ablated_vtt_config(cfg, kind)
    return FusionModel(kind, encoder.init_vtt_params(vcfg, rng), vcfg, bcfg)
