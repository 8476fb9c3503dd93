"""Attention analysis runs and parameter accounting for the CLI."""

from __future__ import annotations

import os

import numpy as np

from . import env as pushenv
from .baselines import init_concat_params, init_poe_params
from .config import ExperimentConfig
from .dataset import load_dataset
from .encoder import encoder_forward, init_vtt_params, paper_config
from .errors import ValidationError
from .fusion import is_vtt_kind
from .heatmap import (AttentionRecord, average_heads, contact_shift,
                      image_attention_map, overlay_export, proportion_series,
                      write_proportion_csv)
from .params import count_parameters
from .rng import SeededRng
from .training import build_fusion, load_checkpoint

# full-scale baseline widths; sized so the attention/concat parameter ratio
# mirrors the reported ~5.35x gap
PAPER_BASELINE_WIDTHS = dict(patch_dim=64, hidden=640, image_dim=192,
                             tactile_hidden=256, tactile_dim=96, poe_dim=288)


def episode_records(fusion, images: np.ndarray, wrenches: np.ndarray) -> list[AttentionRecord]:
    """Per-step attention records for a stored episode."""
    records = []
    for t in range(len(images)):
        _, decomps = encoder_forward((images[t], wrenches[t]), fusion.params, fusion.cfg,
                                     want_decomposition=True)
        records.append(AttentionRecord.from_decompositions(decomps))
    return records


def analyze_episode(fusion, images: np.ndarray, wrenches: np.ndarray,
                    contacts: np.ndarray, out_dir: str, tag: str,
                    layer_select: str = "final") -> dict:
    """Write one overlay PPM per step plus the proportion CSV (and figure)."""
    os.makedirs(out_dir, exist_ok=True)
    records = episode_records(fusion, images, wrenches)
    for t, rec in enumerate(records):
        avg = average_heads(rec, layer_select)
        grid = image_attention_map(avg, rec.layout)
        overlay_export(images[t], grid, os.path.join(out_dir, f"{tag}_t{t:03d}.ppm"))
    series = proportion_series(records, contacts, layer_select)
    write_proportion_csv(series, os.path.join(out_dir, f"{tag}_proportions.csv"))
    try:
        from .figures import proportion_plot
        proportion_plot(series, os.path.join(out_dir, f"{tag}_proportions.png"))
    except Exception:
        pass
    return {"series": series, "shift": contact_shift(series), "steps": len(records)}


def run_heatmap(cfg: ExperimentConfig, ckpt_path: str, out_dir: str,
                data_path: str | None = None, index: int = 0,
                n_episodes: int = 1) -> list[dict]:
    """Heatmap export for stored episodes (or fresh scripted rollouts)."""
    if not is_vtt_kind(cfg.fusion):
        raise ValidationError(f"attention analysis requires an attention encoder, "
                              f"not fusion '{cfg.fusion}'")
    rng = SeededRng(cfg.seed)
    groups = load_checkpoint(ckpt_path, cfg)
    fusion = build_fusion(cfg, rng.split(1), params=groups["fusion"])
    results = []
    if data_path is not None:
        episodes = load_dataset(data_path)
        for k in range(n_episodes):
            i = index + k
            if i >= len(episodes):
                break
            ep = episodes[i]
            results.append(analyze_episode(fusion, ep.images, ep.wrenches, ep.contacts,
                                           out_dir, f"ep{i:03d}", cfg.heatmap_layers))
    else:
        ecfg = cfg.env_config()
        for k in range(n_episodes):
            ep_rng = rng.split(500 + k)
            rolled, _, _ = pushenv.rollout(
                lambda st, ob: pushenv.scripted_action(st, ecfg), ep_rng, ecfg,
                render_frames=True)
            results.append(analyze_episode(fusion, rolled["images"], rolled["wrenches"],
                                           rolled["contacts"], out_dir,
                                           f"roll{k:03d}", cfg.heatmap_layers))
    return results


def attention_shift_stats(cfg: ExperimentConfig, ckpt_path: str,
                          n_episodes: int = 10) -> list[dict]:
    """Pre-contact vs in-contact attention shares on fresh scripted episodes."""
    rng = SeededRng(cfg.seed)
    groups = load_checkpoint(ckpt_path, cfg)
    fusion = build_fusion(cfg, rng.split(1), params=groups["fusion"])
    ecfg = cfg.env_config()
    stats = []
    for k in range(n_episodes):
        ep_rng = rng.split(900 + k)
        rolled, _, _ = pushenv.rollout(
            lambda st, ob: pushenv.scripted_action(st, ecfg), ep_rng, ecfg,
            render_frames=True)
        records = episode_records(fusion, rolled["images"], rolled["wrenches"])
        series = proportion_series(records, rolled["contacts"], cfg.heatmap_layers)
        stats.append(contact_shift(series))
    return stats


# ---------------------------------------------------------------------------
# parameter accounting


def params_report(cfg: ExperimentConfig, paper_scale: bool = False) -> list[tuple[str, int]]:
    """Parameter counts for every fusion variant at the configured (or paper) scale."""
    import dataclasses
    rng = SeededRng(0)
    if paper_scale:
        vcfg = paper_config()
        bcfg = dataclasses.replace(cfg.baseline_config(), image_hw=vcfg.image_hw,
                                   patch_px=vcfg.patch_px, **PAPER_BASELINE_WIDTHS)
    else:
        vcfg = cfg.vtt_config()
        bcfg = cfg.baseline_config()
    rows = [("vtt", count_parameters(init_vtt_params(vcfg, rng)))]
    rows.append(("concat", count_parameters(init_concat_params(bcfg, rng))))
    rows.append(("poe", count_parameters(init_poe_params(bcfg, rng))))
    adj = dataclasses.replace(bcfg, adjusted=True)
    rows.append(("concat-adjusted", count_parameters(init_concat_params(adj, rng))))
    rows.append(("poe-adjusted", count_parameters(init_poe_params(adj, rng))))
    return rows
