"""Episode storage and training-window sampling.

Episodes are stored in the binary tensor container under reserved names
``ep{index:05d}/{field}``.  Window sampling also constructs the misaligned
wrench pairs used as alignment negatives: each image is paired with a
wrench from a different timestep (>= 3 steps away) of the same episode,
preferring timesteps whose contact flag differs so the negative is
genuinely discordant; steps of episodes with no usable partner carry zero
alignment weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import load_tensors, save_tensors
from .errors import ValidationError
from .rng import SeededRng

FIELDS = ("images", "wrenches", "actions", "rewards", "contacts", "dones")
MIN_MISALIGN_GAP = 3


@dataclass
class Episode:
    images: np.ndarray    # [T, H, W, 3]
    wrenches: np.ndarray  # [T, 6]
    actions: np.ndarray   # [T, 2], action taken at step t
    rewards: np.ndarray   # [T], reward produced by actions[t]
    contacts: np.ndarray  # [T]
    dones: np.ndarray     # [T]

    def __len__(self) -> int:
        return len(self.rewards)


def save_dataset(path, episodes: list[Episode]) -> None:
    entries: dict[str, np.ndarray] = {"meta/episode_count": np.array(float(len(episodes)))}
    for i, ep in enumerate(episodes):
        for f in FIELDS:
            entries[f"ep{i:05d}/{f}"] = getattr(ep, f)
    save_tensors(path, entries)


def load_dataset(path) -> list[Episode]:
    entries = load_tensors(path)
    if "meta/episode_count" not in entries:
        raise ValidationError(f"{path}: not an episode dataset (missing meta)")
    n = int(entries["meta/episode_count"])
    episodes = []
    for i in range(n):
        fields = {}
        for f in FIELDS:
            key = f"ep{i:05d}/{f}"
            if key not in entries:
                raise ValidationError(f"{path}: missing field {key}")
            fields[f] = entries[key]
        episodes.append(Episode(**fields))
    return episodes


def split_holdout(episodes: list[Episode], frac: float = 0.2):
    """Deterministic split by episode index: last `frac` of episodes held out."""
    n_hold = max(1, int(round(len(episodes) * frac)))
    return episodes[:-n_hold], episodes[-n_hold:]


def _misaligned_index(ep: Episode, t: int, rng: SeededRng) -> tuple[int, float]:
    """Pick a wrench timestep for the alignment negative of step t.

    Candidates are >= MIN_MISALIGN_GAP steps away; those with a different
    contact flag are preferred.  Returns (index, weight); weight 0 means the
    episode offers no discordant partner and the pair is skipped.
    """
    n = len(ep)
    idx = np.arange(n)
    far = np.abs(idx - t) >= MIN_MISALIGN_GAP
    if not far.any():
        return t, 0.0
    discordant = far & (ep.contacts != ep.contacts[t])
    pool = np.flatnonzero(discordant) if discordant.any() else np.flatnonzero(far)
    weight = 1.0 if discordant.any() else 0.0
    return int(pool[rng.integers(len(pool))]), weight


def sample_windows(episodes: list[Episode], batch: int, tau: int, rng: SeededRng) -> dict:
    """Draw `batch` windows of `tau` consecutive steps for model training.

    Windows start at t0 >= 1 so every step has a preceding action/reward.
    Returns stacked arrays: images, wrenches, act_prev, rew_prev, done_prev,
    contacts, mis_wrenches, align_weight.
    """
    usable = [ep for ep in episodes if len(ep) >= tau + 1]
    if not usable:
        raise ValidationError(f"no episode is long enough for tau={tau} windows")
    ims, wrs, acts, rews, dns, cons, mis, aw = [], [], [], [], [], [], [], []
    for _ in range(batch):
        ep = usable[rng.integers(len(usable))]
        t0 = 1 + rng.integers(len(ep) - tau)
        sl = slice(t0, t0 + tau)
        ims.append(ep.images[sl])
        wrs.append(ep.wrenches[sl])
        acts.append(ep.actions[t0 - 1:t0 + tau - 1])
        rews.append(ep.rewards[t0 - 1:t0 + tau - 1])
        dns.append(ep.dones[t0 - 1:t0 + tau - 1])
        cons.append(ep.contacts[sl])
        m = np.empty((tau, 6), dtype=np.float32)
        w = np.empty(tau, dtype=np.float32)
        for u in range(tau):
            j, weight = _misaligned_index(ep, t0 + u, rng)
            m[u] = ep.wrenches[j]
            w[u] = weight
        mis.append(m)
        aw.append(w)
    return {
        "images": np.stack(ims),
        "wrenches": np.stack(wrs),
        "act_prev": np.stack(acts),
        "rew_prev": np.stack(rews),
        "done_prev": np.stack(dns),
        "contacts": np.stack(cons),
        "mis_wrenches": np.stack(mis),
        "align_weight": np.stack(aw),
    }


def alignment_eval_pairs(episodes: list[Episode], rng: SeededRng, max_pairs: int = 2000):
    """Balanced aligned/misaligned evaluation pairs over whole episodes.

    Returns (images, wrenches, labels, contact_labels) where labels mark
    alignment (1 aligned / 0 misaligned) and contact_labels carry the
    ground-truth contact flag of each aligned pair.
    """
    ims, wrs, labels = [], [], []
    c_ims, c_wrs, c_labels = [], [], []
    steps = [(ei, t) for ei, ep in enumerate(episodes) for t in range(len(ep))]
    order = rng.shuffle(len(steps))
    for k in order[:max_pairs]:
        ei, t = steps[k]
        ep = episodes[ei]
        c_ims.append(ep.images[t])
        c_wrs.append(ep.wrenches[t])
        c_labels.append(ep.contacts[t])
        j, weight = _misaligned_index(ep, t, rng)
        if weight > 0:
            ims.append(ep.images[t])
            wrs.append(ep.wrenches[t])
            labels.append(1.0)
            ims.append(ep.images[t])
            wrs.append(ep.wrenches[j])
            labels.append(0.0)
    return {
        "align_images": np.asarray(ims, dtype=np.float32),
        "align_wrenches": np.asarray(wrs, dtype=np.float32),
        "align_labels": np.asarray(labels, dtype=np.float32),
        "contact_images": np.asarray(c_ims, dtype=np.float32),
        "contact_wrenches": np.asarray(c_wrs, dtype=np.float32),
        "contact_labels": np.asarray(c_labels, dtype=np.float32),
    }
