"""Attention analysis: head averaging, spatial maps, modality proportions,
and overlay export.

All analysis runs on recorded row-stochastic heatmaps (plain numpy), so it
never touches the autodiff graph.
"""

from __future__ import annotations

import csv as _csv
from dataclasses import dataclass

import numpy as np

from .encoder import AttentionDecomposition, TokenLayout
from .errors import ShapeError, ValidationError


@dataclass
class AttentionRecord:
    """Per-layer, per-head heatmaps for one observation."""

    layers: list[np.ndarray]  # each [h, R, R], rows sum to 1
    layout: TokenLayout

    @classmethod
    def from_decompositions(cls, decomps: list[AttentionDecomposition]) -> "AttentionRecord":
        if not decomps:
            raise ValidationError("no attention layers recorded")
        return cls(layers=[np.asarray(d.full.data, dtype=np.float64) for d in decomps],
                   layout=decomps[0].layout)


def average_heads(rec: AttentionRecord, layer_select: str = "final") -> np.ndarray:
    """Arithmetic mean over heads of the selected layer ('final' or 'all').

    'all' additionally averages over layers.
    """
    if layer_select == "final":
        return rec.layers[-1].mean(axis=0)
    if layer_select == "all":
        return np.stack([lay.mean(axis=0) for lay in rec.layers]).mean(axis=0)
    raise ValidationError(f"layer_select must be 'final' or 'all', got {layer_select!r}")


def image_attention_map(avg: np.ndarray, layout: TokenLayout) -> np.ndarray:
    """Attention received by each image patch, on the patch grid in [0, 1].

    Column masses over the image tokens (summed over all query rows) are
    reshaped row-major to the sqrt(P_I) x sqrt(P_I) grid and min-max
    normalized; a constant map (e.g. from a uniform heatmap) normalizes to
    all zeros by convention.
    """
    r = layout.n_tokens
    if avg.shape != (r, r):
        raise ShapeError(f"expected averaged heatmap of shape ({r}, {r}), got {avg.shape}")
    mass = avg[:, layout.image_slice].sum(axis=0)
    g = int(round(np.sqrt(layout.n_image)))
    grid = mass.reshape(g, g)
    lo, hi = grid.min(), grid.max()
    if hi - lo <= 1e-12:
        return np.zeros_like(grid)
    return (grid - lo) / (hi - lo)


def modality_proportion(avg: np.ndarray, layout: TokenLayout) -> tuple[float, float]:
    """(visual, tactile) attention shares over the modality columns.

    Embedding-token columns are excluded; the two shares sum to 1.
    """
    vis = float(avg[:, layout.image_slice].sum())
    tac = float(avg[:, layout.tactile_slice].sum())
    total = vis + tac
    if total <= 0:
        return 1.0, 0.0
    return vis / total, tac / total


@dataclass
class ProportionSeries:
    """Per-timestep (visual, tactile) attention shares for one episode."""

    visual: np.ndarray
    tactile: np.ndarray
    contact: np.ndarray  # ground-truth contact flag per step

    def __len__(self) -> int:
        return len(self.visual)


def proportion_series(records: list[AttentionRecord], contacts,
                      layer_select: str = "final") -> ProportionSeries:
    vis, tac = [], []
    for rec in records:
        v, t = modality_proportion(average_heads(rec, layer_select), rec.layout)
        vis.append(v)
        tac.append(t)
    return ProportionSeries(visual=np.asarray(vis), tactile=np.asarray(tac),
                            contact=np.asarray(contacts, dtype=np.float64))


def write_proportion_csv(series: ProportionSeries, path) -> None:
    """CSV `t,visual,tactile` with fixed 6-decimal formatting."""
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["t", "visual", "tactile"])
        for t in range(len(series)):
            writer.writerow([t, f"{series.visual[t]:.6f}", f"{series.tactile[t]:.6f}"])


def contact_shift(series: ProportionSeries) -> dict:
    """Summarize the attention shift around first contact.

    Returns pre-contact/in-contact means of the tactile share (and the
    pre-contact visual share) for one episode; NaN when a phase is empty.
    """
    contact = series.contact > 0.5
    if contact.any():
        first = int(np.argmax(contact))
    else:
        first = len(series)
    pre_t = series.tactile[:first]
    in_t = series.tactile[contact]
    return {
        "pre_tactile": float(pre_t.mean()) if len(pre_t) else float("nan"),
        "in_tactile": float(in_t.mean()) if len(in_t) else float("nan"),
        "pre_visual": float(series.visual[:first].mean()) if first > 0 else float("nan"),
        "n_pre": int(first),
        "n_contact": int(contact.sum()),
    }


# ---------------------------------------------------------------------------
# overlay export (binary PPM)


def blend_overlay(image: np.ndarray, attn_grid: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Alpha-blend a red intensity layer over an RGB image, as uint8.

    Per pixel the effective alpha is `alpha * attention`, so zero attention
    leaves the (rounded) input pixel untouched.  The grid is upsampled to
    image size with nearest-neighbor indexing.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[0], img.shape[1]
    g0, g1 = attn_grid.shape
    rows = (np.arange(h) * g0) // h
    cols = (np.arange(w) * g1) // w
    up = attn_grid[np.ix_(rows, cols)]
    a = alpha * up[..., None]
    red = np.zeros_like(img)
    red[..., 0] = 1.0
    out = img * (1.0 - a) + red * a
    return np.clip(np.rint(out * 255.0), 0, 255).astype(np.uint8)


def write_ppm(pixels: np.ndarray, path) -> None:
    """Binary PPM (P6, maxval 255)."""
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise ShapeError(f"write_ppm expects uint8 [H, W, 3], got {pixels.shape} {pixels.dtype}")
    h, w = pixels.shape[:2]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(pixels.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P6"):
        raise ValidationError(f"{path}: not a binary PPM (P6) file")
    fields, idx = [], 2
    while len(fields) < 3:
        while idx < len(data) and data[idx:idx + 1].isspace():
            idx += 1
        start = idx
        while idx < len(data) and not data[idx:idx + 1].isspace():
            idx += 1
        fields.append(int(data[start:idx]))
    idx += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValidationError(f"{path}: unsupported maxval {maxval}")
    body = data[idx:idx + w * h * 3]
    if len(body) != w * h * 3:
        raise ValidationError(f"{path}: truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


def overlay_export(image: np.ndarray, attn_grid: np.ndarray, path,
                   alpha: float = 0.5) -> None:
    """Blend the normalized attention grid over the image and write a P6 PPM."""
    write_ppm(blend_overlay(image, attn_grid, alpha=alpha), path)
