"""Training loops and experiment orchestration.

Everything here is deterministic under the experiment seed: all randomness
flows from split-off counter-based streams, one per concern (initialization,
data order, sampling noise, environment), so reruns are bit-identical.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from . import env as pushenv
from . import policy as sac
from .config import ExperimentConfig, save_config
from .checkpoint import entries_to_params, load_tensors, save_tensors
from .dataset import (Episode, alignment_eval_pairs, load_dataset,
                      sample_windows, save_dataset, split_holdout)
from .errors import ConfigError, ValidationError
from .fusion import FUSION_KINDS, FusionModel, init_fusion
from .latent import draw_model_noise, init_latent_params, model_loss
from .optim import AdamState, adam_step
from .rng import SeededRng
from .tensor import Tensor, backward
from .params import count_parameters


# ---------------------------------------------------------------------------
# data generation


def _noisy_scripted_policy(ecfg, rng: SeededRng, noise_p: float, jitter: float,
                           random_prefix: int = 0):
    state_box = {"left": random_prefix}

    def act(state, obs):
        if state_box["left"] > 0:
            state_box["left"] -= 1
            return rng.uniform((2,), -1.0, 1.0)
        if rng.uniform(()) < noise_p:
            return rng.uniform((2,), -1.0, 1.0)
        a = pushenv.scripted_action(state, ecfg)
        return np.clip(a + rng.normal((2,), 0.0, jitter), -1.0, 1.0)
    return act


def _probing_policy(ecfg, rng: SeededRng):
    """Touch-and-retreat cycles from random bearings around the block.

    Covers far more contact positions and directions per episode than a
    single push, which is what the contact/alignment heads must generalize
    over.
    """
    box = {"phase": "approach", "theta": float(rng.uniform((), 0.0, 2 * np.pi)),
           "count": 0}

    def act(state, obs):
        standoff = state.block_half + ecfg.r_ee
        direction = np.array([np.cos(box["theta"]), np.sin(box["theta"])])
        if box["phase"] == "approach":
            target = state.block_pos + direction * (standoff + 0.02)
            err = target - state.ee_pos
            dist = float(np.linalg.norm(err))
            if dist < 0.015:
                box["phase"] = "press"
                # half the cycles push long enough to relocate the block, so
                # one episode probes several block positions
                long_push = rng.uniform(()) < 0.5
                box["count"] = int(rng.integers(7)) + 10 if long_push else int(rng.integers(4)) + 3
            else:
                return err / max(dist, 1e-9) * min(1.0, dist / ecfg.step_len)
        if box["phase"] == "press":
            box["count"] -= 1
            if box["count"] <= 0:
                box["phase"] = "retreat"
                # retreat far enough that contact-free frames are visually
                # unambiguous, with a sideways drift to vary the geometry
                box["count"] = int(rng.integers(7)) + 8
                perp = np.array([-direction[1], direction[0]])
                drift = perp * float(rng.uniform((), -0.5, 0.5))
                box["retreat_dir"] = (direction + drift) / np.linalg.norm(direction + drift)
            return -direction * float(rng.uniform((), 0.6, 1.0))
        # retreat, then pick a fresh bearing
        box["count"] -= 1
        if box["count"] <= 0:
            box["phase"] = "approach"
            box["theta"] = float(rng.uniform((), 0.0, 2 * np.pi))
        return box["retreat_dir"] * float(rng.uniform((), 0.7, 1.0))
    return act


def _random_policy(rng: SeededRng):
    def act(state, obs):
        return rng.uniform((2,), -1.0, 1.0)
    return act


def _episode_from_rollout(ep: dict) -> Episode:
    return Episode(images=ep["images"], wrenches=ep["wrenches"], actions=ep["actions"],
                   rewards=ep["rewards"], contacts=ep["contacts"], dones=ep["dones"])


def gen_data(cfg: ExperimentConfig, out_path: str) -> dict:
    """Roll out a policy mixture and save the episode dataset.

    The mixture interleaves goal-directed pushes (with a random-walk prefix
    so approaches vary), contact-probing touch-and-retreat episodes, and
    uniformly random episodes.  Per-episode streams are split off the root
    seed, so the output is independent of rollout order (and reproducible
    byte-for-byte).
    """
    ecfg = cfg.env_config()
    root = SeededRng(cfg.seed)
    episodes, n_scripted = [], 0
    scripted_count = int(round(cfg.scripted_frac * 10))
    for i in range(cfg.episodes):
        ep_rng = root.split(1000 + i)
        slot = i % 10
        if slot < scripted_count:
            n_scripted += 1
            if slot % 2 == 0:
                prefix = int(ep_rng.split(3).integers(13))
                policy = _noisy_scripted_policy(ecfg, ep_rng.split(1), cfg.policy_noise,
                                                cfg.action_jitter, random_prefix=prefix)
            else:
                policy = _probing_policy(ecfg, ep_rng.split(1))
        else:
            policy = _random_policy(ep_rng.split(1))
        rolled, _, _ = pushenv.rollout(policy, ep_rng.split(2), ecfg, render_frames=True)
        episodes.append(_episode_from_rollout(rolled))
    save_dataset(out_path, episodes)
    save_config(cfg, out_path + ".cfg")
    steps = sum(len(e) for e in episodes)
    contact_frac = float(np.concatenate([e.contacts for e in episodes]).mean())
    return {"episodes": len(episodes), "steps": steps, "scripted": n_scripted,
            "contact_fraction": contact_frac}


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str, cfg: ExperimentConfig,
                    groups: dict[str, dict[str, Tensor]]) -> None:
    entries = {"meta/fusion_kind": np.array(float(FUSION_KINDS.index(cfg.fusion)))}
    for group, params in groups.items():
        for name, p in params.items():
            entries[f"{group}/{name}"] = p.data
    save_tensors(path, entries)
    save_config(cfg, path + ".cfg")


def load_checkpoint(path: str, cfg: ExperimentConfig) -> dict[str, dict[str, Tensor]]:
    entries = load_tensors(path)
    if "meta/fusion_kind" not in entries:
        raise ValidationError(f"{path}: missing fusion kind header")
    kind = FUSION_KINDS[int(entries["meta/fusion_kind"])]
    if kind != cfg.fusion:
        raise ConfigError(f"checkpoint was trained with fusion '{kind}' but the "
                          f"config requests '{cfg.fusion}'")
    groups = {}
    for name in entries:
        g = name.split("/", 1)[0]
        if g != "meta" and g not in groups:
            groups[g] = entries_to_params(entries, g)
    return groups


def build_fusion(cfg: ExperimentConfig, rng: SeededRng,
                 params: dict[str, Tensor] | None = None) -> FusionModel:
    model = init_fusion(cfg.fusion, cfg.vtt_config(), cfg.baseline_config(), rng)
    if params is not None:
        expected = set(model.params)
        if set(params) != expected:
            raise ConfigError("checkpoint parameters do not match the configured "
                              f"architecture (missing: {sorted(expected - set(params))[:3]}...)")
        model.params = params
    return model


# ---------------------------------------------------------------------------
# representation training


def _union(groups: dict[str, dict[str, Tensor]]) -> dict[str, Tensor]:
    flat = {}
    for g, params in groups.items():
        for k, p in params.items():
            flat[f"{g}/{k}"] = p
    return flat


def evaluate_heads(fusion: FusionModel, episodes, rng: SeededRng,
                   chunk: int = 256, max_pairs: int = 1500) -> dict:
    """Held-out contact/alignment accuracies of the fusion heads."""
    pairs = alignment_eval_pairs(episodes, rng, max_pairs=max_pairs)

    def _predict(images, wrenches):
        logits_c, logits_a = [], []
        for i in range(0, len(images), chunk):
            z, c, a, _ = fusion.encode_batch(images[i:i + chunk], wrenches[i:i + chunk],
                                             rng=rng)
            logits_c.append(None if c is None else c.data)
            logits_a.append(None if a is None else a.data)
        cat = lambda xs: None if xs and xs[0] is None else np.concatenate(xs)
        return cat(logits_c), cat(logits_a)

    out = {}
    c_logits, _ = _predict(pairs["contact_images"], pairs["contact_wrenches"])
    if c_logits is not None and len(pairs["contact_labels"]):
        pred = (c_logits.reshape(-1) > 0).astype(np.float32)
        out["contact_acc"] = float((pred == pairs["contact_labels"]).mean())
    if len(pairs["align_labels"]):
        _, a_logits = _predict(pairs["align_images"], pairs["align_wrenches"])
        if a_logits is not None:
            pred = (a_logits.reshape(-1) > 0).astype(np.float32)
            out["align_acc"] = float((pred == pairs["align_labels"]).mean())
    return out


def train_repr(cfg: ExperimentConfig, dataset_path: str, out_ckpt: str,
               log=print) -> dict:
    """Optimize the composite model loss on sequence windows; save everything.

    Writes the checkpoint, a per-step metrics CSV, the effective config, and
    a loss-curve figure; returns the metrics rows and held-out accuracies.
    """
    episodes = load_dataset(dataset_path)
    train_eps, hold_eps = split_holdout(episodes, cfg.holdout_frac)
    rng = SeededRng(cfg.seed)
    fusion = build_fusion(cfg, rng.split(1))
    lcfg = cfg.latent_config()
    lat = init_latent_params(lcfg, rng.split(2))
    groups = {"fusion": fusion.params, "latent": lat}
    union = _union(groups)
    opt = AdamState(union, lr=cfg.model_lr, weight_decay=cfg.weight_decay)
    data_rng, noise_rng = rng.split(3), rng.split(4)
    poe_dim = cfg.poe_dim if cfg.fusion == "poe" else None

    rows = []
    term_keys = None
    for step in range(cfg.repr_steps):
        batch = sample_windows(train_eps, cfg.model_batch, cfg.seq_len, data_rng)
        noise = draw_model_noise(cfg.model_batch, cfg.seq_len, cfg.d_z, poe_dim, noise_rng)
        total, terms, _ = model_loss(fusion, lat, batch, lcfg, noise)
        if not np.isfinite(terms["total"]):
            raise ValidationError(f"non-finite model loss at step {step}")
        backward(total, clear_graph_first=True)
        opt.step(union)
        if term_keys is None:
            term_keys = sorted(terms)
        rows.append({"step": step, **terms})
        if log and (step % max(1, cfg.eval_every) == 0 or step == cfg.repr_steps - 1):
            log(f"step {step}: " + " ".join(f"{k}={terms[k]:.4f}" for k in term_keys))

    accs = evaluate_heads(fusion, hold_eps, rng.split(5))
    save_checkpoint(out_ckpt, cfg, groups)
    _write_metrics_csv(out_ckpt + ".metrics.csv", rows, ["step"] + term_keys)
    _write_eval_csv(out_ckpt + ".eval.csv", accs)
    _maybe_figure("loss_curve", rows, out_ckpt + ".loss.png")
    if log:
        log("held-out: " + " ".join(f"{k}={v:.4f}" for k, v in sorted(accs.items())))
    return {"rows": rows, "accuracies": accs}


def _write_metrics_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row["step"] if c == "step" else f"{row.get(c, float('nan')):.6f}"
                             for c in columns])


def _write_eval_csv(path, accs: dict):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for k in sorted(accs):
            writer.writerow([k, f"{accs[k]:.6f}"])


def _maybe_figure(kind: str, rows, path):
    try:
        from . import figures
    except Exception:
        return
    getattr(figures, kind)(rows, path)


# ---------------------------------------------------------------------------
# reinforcement learning


class ReplayBuffer:
    def __init__(self, capacity_episodes: int = 400):
        self.episodes: list[Episode] = []
        self.capacity = capacity_episodes

    def add(self, ep: Episode):
        self.episodes.append(ep)
        if len(self.episodes) > self.capacity:
            self.episodes.pop(0)

    def __len__(self):
        return len(self.episodes)


def _sac_batch_from_windows(batch: dict, aux: dict):
    """Pick the final transition of each window for the Bellman update."""
    posts = aux["posteriors"]
    z_seq = aux["z_seq"]
    t = z_seq.shape[1]
    latent = posts[t - 2].sample
    latent_next = posts[t - 1].sample
    action = batch["act_prev"][:, t - 1]
    reward = batch["rew_prev"][:, t - 1]
    done = batch["done_prev"][:, t - 1]
    z_now = z_seq.data[:, t - 2]
    z_next = z_seq.data[:, t - 1]
    obs_now = np.concatenate([z_now, batch["act_prev"][:, t - 2]], axis=-1)
    obs_next = np.concatenate([z_next, action], axis=-1)
    return {"latent": latent, "latent_next": latent_next, "action": action,
            "reward": reward, "done": done, "actor_obs": obs_now,
            "actor_obs_next": obs_next}


def train_rl(cfg: ExperimentConfig, ckpt_in: str, out_ckpt: str, log=print) -> dict:
    """Alternate environment steps with model/critic/actor updates.

    The replay buffer is seeded with noisy scripted episodes; each update
    runs one shared forward (model loss + SAC losses on the same filtered
    graph), takes per-loss gradients at the same parameter point, then
    applies the three optimizers and the Polyak target update.
    """
    ecfg = cfg.env_config()
    lcfg = cfg.latent_config()
    pcfg = cfg.policy_config()
    rng = SeededRng(cfg.seed)
    groups = load_checkpoint(ckpt_in, cfg)
    fusion = build_fusion(cfg, rng.split(1), params=groups["fusion"])
    lat = groups["latent"]
    actor = sac.init_actor_params(pcfg, rng.split(10))
    critic = sac.init_critic_params(pcfg, rng.split(11))
    target = sac.init_target_params(critic)

    model_union = _union({"fusion": fusion.params, "latent": lat})
    critic_union = dict(critic)
    if cfg.critic_to_encoder:
        critic_union.update({f"enc/{k}": p for k, p in fusion.params.items()})
    opt_model = AdamState(model_union, lr=cfg.model_lr)
    opt_critic = AdamState(critic_union, lr=cfg.policy_lr)
    opt_actor = AdamState(actor, lr=cfg.policy_lr)

    buffer = ReplayBuffer()
    warm_rng = rng.split(2)
    for i in range(cfg.rl_warmup_scripted):
        ep_rng = warm_rng.split(i)
        policy = _noisy_scripted_policy(ecfg, ep_rng.split(1), cfg.policy_noise,
                                        cfg.action_jitter)
        rolled, _, _ = pushenv.rollout(policy, ep_rng.split(2), ecfg, render_frames=True)
        buffer.add(_episode_from_rollout(rolled))

    env_rng, act_rng, data_rng, noise_rng = (rng.split(3), rng.split(4),
                                             rng.split(5), rng.split(6))
    tau = cfg.seq_len + 1
    poe_dim = cfg.poe_dim if cfg.fusion == "poe" else None

    state = pushenv.reset(env_rng.split(0), ecfg)
    obs = pushenv.observe(state, ecfg)
    a_prev = np.zeros(cfg.act_dim, dtype=np.float32)
    cur = {k: [] for k in ("images", "wrenches", "actions", "rewards", "contacts", "dones")}
    ep_return, ep_index, episode_rows = 0.0, 0, []
    updates = 0

    for env_step in range(cfg.rl_env_steps):
        if env_step < cfg.rl_warmup_random:
            action = act_rng.uniform((cfg.act_dim,), -1.0, 1.0)
        else:
            z = fusion.encode_one(obs.image, obs.wrench, rng=act_rng).data.reshape(-1)
            inp = np.concatenate([z, a_prev])[None]
            a_t, _ = sac.actor_sample(actor, inp, cfg.act_dim, rng=act_rng)
            action = a_t.data.reshape(-1).astype(np.float64)
        cur["images"].append(obs.image)
        cur["wrenches"].append(obs.wrench.reshape(6))
        cur["contacts"].append(float(obs.contact_gt))
        state, reward, done, info = pushenv.physics_step(state, action, ecfg)
        obs = pushenv.observe(state, ecfg)
        cur["actions"].append(np.asarray(action, dtype=np.float32))
        cur["rewards"].append(float(reward))
        cur["dones"].append(float(done))
        ep_return += reward
        a_prev = np.asarray(action, dtype=np.float32)

        if done:
            buffer.add(Episode(images=np.asarray(cur["images"], dtype=np.float32),
                               wrenches=np.asarray(cur["wrenches"], dtype=np.float32),
                               actions=np.asarray(cur["actions"], dtype=np.float32),
                               rewards=np.asarray(cur["rewards"], dtype=np.float32),
                               contacts=np.asarray(cur["contacts"], dtype=np.float32),
                               dones=np.asarray(cur["dones"], dtype=np.float32)))
            episode_rows.append({"episode": ep_index, "return": ep_return,
                                 "success": int(info["success"])})
            if log and ep_index % 20 == 0:
                recent = [r["return"] for r in episode_rows[-20:]]
                log(f"episode {ep_index}: return={ep_return:.1f} "
                    f"recent_mean={np.mean(recent):.1f} env_step={env_step}")
            ep_index += 1
            ep_return = 0.0
            cur = {k: [] for k in cur}
            state = pushenv.reset(env_rng.split(ep_index), ecfg)
            obs = pushenv.observe(state, ecfg)
            a_prev = np.zeros(cfg.act_dim, dtype=np.float32)

        ready = env_step >= cfg.rl_warmup_random and len(buffer) >= 2
        if ready and env_step % cfg.rl_update_every == 0:
            batch = sample_windows(buffer.episodes, cfg.policy_batch, tau, data_rng)
            noise = draw_model_noise(cfg.policy_batch, tau, cfg.d_z, poe_dim, noise_rng)
            skip_align = updates % 4 != 0  # alignment negatives every 4th update
            total, terms, aux = model_loss(fusion, lat, batch, lcfg, noise,
                                           skip_align=skip_align)
            sb = _sac_batch_from_windows(batch, aux)
            j_q = sac.critic_loss(critic, target, actor, pcfg, sb["latent"],
                                  sb["action"], sb["reward"], sb["done"],
                                  sb["latent_next"], sb["actor_obs_next"],
                                  eps_next=noise_rng.normal((cfg.policy_batch, cfg.act_dim)).astype(np.float32))
            j_pi = sac.actor_loss(critic, actor, pcfg, sb["latent_next"], sb["actor_obs_next"],
                                  eps=noise_rng.normal((cfg.policy_batch, cfg.act_dim)).astype(np.float32))
            # per-loss gradients at the same parameter point, then apply
            backward(total, clear_graph_first=True)
            g_model = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                       for k, p in model_union.items()}
            backward(j_q, clear_graph_first=True)
            g_critic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                        for k, p in critic_union.items()}
            backward(j_pi, clear_graph_first=True)
            g_actor = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                       for k, p in actor.items()}
            adam_step(model_union, g_model, opt_model)
            adam_step(critic_union, g_critic, opt_critic)
            adam_step(actor, g_actor, opt_actor)
            sac.target_update(critic, target, cfg.polyak)
            updates += 1

    groups_out = {"fusion": fusion.params, "latent": lat, "actor": actor,
                  "critic": critic, "critic_target": target}
    save_checkpoint(out_ckpt, cfg, groups_out)
    with open(out_ckpt + ".metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "return", "success"])
        for row in episode_rows:
            writer.writerow([row["episode"], f"{row['return']:.6f}", row["success"]])
    _maybe_figure("return_curve", episode_rows, out_ckpt + ".returns.png")
    return {"episodes": episode_rows, "updates": updates}


def eval_policy(cfg: ExperimentConfig, ckpt: str, n_episodes: int | None = None,
                deterministic: bool = True) -> list[dict]:
    """Roll out the trained policy (mean action by default)."""
    ecfg = cfg.env_config()
    rng = SeededRng(cfg.seed)
    groups = load_checkpoint(ckpt, cfg)
    if "actor" not in groups:
        raise ValidationError(f"{ckpt}: no actor parameters (train-rl output required)")
    fusion = build_fusion(cfg, rng.split(1), params=groups["fusion"])
    actor = groups["actor"]
    n = n_episodes if n_episodes is not None else cfg.eval_episodes
    rows = []
    for i in range(n):
        ep_rng = rng.split(100 + i)
        sample_rng = ep_rng.split(3)
        a_prev = np.zeros(cfg.act_dim, dtype=np.float32)

        def policy(state, obs):
            nonlocal a_prev
            z = fusion.encode_one(obs.image, obs.wrench, rng=sample_rng).data.reshape(-1)
            inp = np.concatenate([z, a_prev])[None]
            if deterministic:
                a = sac.actor_mean_action(actor, inp, cfg.act_dim).data.reshape(-1)
            else:
                a_t, _ = sac.actor_sample(actor, inp, cfg.act_dim, rng=sample_rng)
                a = a_t.data.reshape(-1)
            a_prev = a.astype(np.float32)
            return a.astype(np.float64)

        _, total, success = pushenv.rollout(policy, ep_rng.split(2), ecfg,
                                            render_frames=True)
        rows.append({"episode": i, "return": total, "success": int(success)})
    return rows


def random_policy_returns(cfg: ExperimentConfig, n_episodes: int = 50,
                          seed_offset: int = 777000) -> np.ndarray:
    """Reference returns of the uniform-random policy (no rendering)."""
    ecfg = cfg.env_config()
    out = []
    for i in range(n_episodes):
        rng = SeededRng(cfg.seed + seed_offset + i)
        _, total, _ = pushenv.rollout(_random_policy(rng.split(1)), rng.split(2), ecfg,
                                      render_frames=False)
        out.append(total)
    return np.asarray(out)
