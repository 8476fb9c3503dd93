"""Experiment configuration: a flat key=value text format.

Lines are ``key = value`` with ``#`` comments; unknown keys are rejected
and every load re-validates the derived architecture/environment configs.
The canonical serialization (`config_to_text`) is written alongside every
command output so any run can be reproduced from its sidecar.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .baselines import BaselineConfig
from .encoder import VttConfig
from .env import EnvConfig
from .errors import ConfigError
from .fusion import FUSION_KINDS
from .latent import LatentConfig
from .policy import PolicyConfig


@dataclass
class ExperimentConfig:
    seed: int = 0
    fusion: str = "vtt"

    # fusion encoder
    image_hw: int = 24
    patch_px: int = 4
    d: int = 64
    heads: int = 4
    n_layers: int = 2
    c: int = 8
    z_dim: int = 64
    compress_hidden: int = 40
    z_hidden: int = 0

    # baseline capacities (paper-scale values mirror the reported size ratio)
    baseline_patch_dim: int = 16
    baseline_hidden: int = 64
    baseline_image_dim: int = 48
    baseline_tactile_hidden: int = 32
    baseline_tactile_dim: int = 16
    poe_dim: int = 64
    baseline_adjusted: bool = False
    baseline_adjust_factor: float = 5.3

    # environment
    dt: float = 0.05
    v_max: float = 0.2
    r_ee: float = 0.03
    block_half: float = 0.05
    k_contact: float = 200.0
    success_radius: float = 0.05
    horizon: int = 100
    mass_min: float = 0.5
    mass_max: float = 2.0
    goal_min_dist: float = 0.3
    goal_max_dist: float = 0.45
    yaw_gain: float = 0.15
    render_ss: int = 8

    # latent dynamics
    d_z: int = 32
    latent_hidden: int = 128
    dec_hidden: int = 256
    reward_hidden: int = 64
    kl_beta: float = 1.0
    seq_len: int = 8

    # representation training
    model_lr: float = 0.0001
    model_batch: int = 32
    repr_steps: int = 2000
    eval_every: int = 250
    holdout_frac: float = 0.2
    weight_decay: float = 0.0

    # policy (soft actor-critic)
    policy_lr: float = 0.0003
    policy_batch: int = 256
    gamma: float = 0.99
    polyak: float = 0.005
    alpha: float = 0.1
    actor_hidden: int = 64
    critic_hidden: int = 128
    act_dim: int = 2

    # reinforcement-learning loop
    rl_env_steps: int = 20000
    rl_warmup_random: int = 500
    rl_warmup_scripted: int = 15
    rl_update_every: int = 2
    critic_to_encoder: bool = True

    # data generation / evaluation
    episodes: int = 50
    scripted_frac: float = 0.8
    policy_noise: float = 0.15
    action_jitter: float = 0.1
    eval_episodes: int = 10
    heatmap_layers: str = "final"

    def validate(self) -> "ExperimentConfig":
        if self.fusion not in FUSION_KINDS:
            raise ConfigError(f"fusion must be one of {FUSION_KINDS}, got {self.fusion!r}")
        if self.heatmap_layers not in ("final", "all"):
            raise ConfigError(f"heatmap_layers must be 'final' or 'all', got {self.heatmap_layers!r}")
        if not 0.0 < self.holdout_frac < 1.0:
            raise ConfigError("holdout_frac must be in (0, 1)")
        if self.seq_len < 2:
            raise ConfigError("seq_len must be at least 2")
        for name in ("episodes", "horizon", "repr_steps", "model_batch"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        self.vtt_config()   # raises ConfigError on bad dimensions
        self.env_config()
        return self

    # ------------------------------------------------------------------
    # derived module configs

    def vtt_config(self) -> VttConfig:
        return VttConfig(image_hw=self.image_hw, patch_px=self.patch_px, d=self.d,
                         heads=self.heads, n_layers=self.n_layers, c=self.c,
                         z_dim=self.z_dim, compress_hidden=self.compress_hidden,
                         z_hidden=self.z_hidden)

    def baseline_config(self) -> BaselineConfig:
        return BaselineConfig(image_hw=self.image_hw, patch_px=self.patch_px,
                              patch_dim=self.baseline_patch_dim, hidden=self.baseline_hidden,
                              image_dim=self.baseline_image_dim,
                              tactile_hidden=self.baseline_tactile_hidden,
                              tactile_dim=self.baseline_tactile_dim, poe_dim=self.poe_dim,
                              adjusted=self.baseline_adjusted,
                              adjust_factor=self.baseline_adjust_factor)

    def env_config(self) -> EnvConfig:
        return EnvConfig(dt=self.dt, v_max=self.v_max, r_ee=self.r_ee,
                         block_half=self.block_half, k_contact=self.k_contact,
                         success_radius=self.success_radius, horizon=self.horizon,
                         mass_min=self.mass_min, mass_max=self.mass_max,
                         goal_min_dist=self.goal_min_dist, goal_max_dist=self.goal_max_dist,
                         yaw_gain=self.yaw_gain, image_hw=self.image_hw,
                         render_ss=self.render_ss)

    @property
    def fused_width(self) -> int:
        if self.fusion == "concat":
            return self.baseline_image_dim + self.baseline_tactile_dim
        if self.fusion == "poe":
            return self.poe_dim
        return self.z_dim

    def latent_config(self) -> LatentConfig:
        return LatentConfig(d_z=self.d_z, hidden=self.latent_hidden,
                            dec_hidden=self.dec_hidden, reward_hidden=self.reward_hidden,
                            act_dim=self.act_dim, image_hw=self.image_hw,
                            z_in=self.fused_width, kl_beta=self.kl_beta)

    def policy_config(self) -> PolicyConfig:
        return PolicyConfig(obs_dim=self.fused_width + self.act_dim, latent_dim=self.d_z,
                            act_dim=self.act_dim, actor_hidden=self.actor_hidden,
                            critic_hidden=self.critic_hidden, gamma=self.gamma,
                            alpha=self.alpha, polyak=self.polyak)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _parse_value(name: str, raw: str):
    ftype = _FIELDS[name].type
    raw = raw.strip()
    try:
        if ftype == "bool" or isinstance(_FIELDS[name].default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(_FIELDS[name].default, int):
            return int(raw)
        if isinstance(_FIELDS[name].default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = dataclasses.replace(base) if base is not None else ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line.rstrip()!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _parse_value(key, raw))
    return cfg.validate()


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path, "r") as fh:
        return parse_config_text(fh.read(), base=base)


def config_to_text(cfg: ExperimentConfig) -> str:
    lines = ["# effective configuration (defaults merged)"]
    for f in dataclasses.fields(ExperimentConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(config_to_text(cfg))
