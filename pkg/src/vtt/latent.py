"""Sequential latent dynamics over the fused representation.

A diagonal-Gaussian prior propagates the dynamics latent from the previous
latent and action; the posterior additionally conditions on the previous
fused code, so observation information enters the filter through the fusion
encoder (and gradients flow back into it).  The latent is decoded to the
image and to a reward estimate; training minimizes reconstruction + reward
+ KL + the contact/alignment fusion loss.

Reconstruction and reward terms are Gaussian negative log-likelihoods with
fixed unit output variance, with the additive log(2*pi) normalization
constant omitted: the implemented losses are the pure 0.5 * squared-error
parts, which carry the full gradient signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .fusion import FusionModel
from .params import linear_init, zeros_param
from .rng import SeededRng
from .tensor import (Tensor, add, bce_with_logits, clamp, concat, exp,
                     linear, linear_relu, log, mean_, mul, narrow, reshape,
                     sqrt, sub, sum_)

LOGVAR_MIN, LOGVAR_MAX = -10.0, 4.0


@dataclass(frozen=True)
class LatentConfig:
    d_z: int = 32
    hidden: int = 128
    dec_hidden: int = 256
    reward_hidden: int = 64
    act_dim: int = 2
    image_hw: int = 24
    z_in: int = 64          # fused code width feeding the posterior
    kl_beta: float = 1.0

    @property
    def image_dim(self) -> int:
        return self.image_hw * self.image_hw * 3


@dataclass
class LatentBelief:
    mu: Tensor      # [B, d_z]
    var: Tensor     # [B, d_z], > 0
    sample: Tensor  # mu + sqrt(var) * eps
    eps: np.ndarray


def init_latent_params(lcfg: LatentConfig, rng: SeededRng) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    dz, da = lcfg.d_z, lcfg.act_dim
    p["prior/fc1_w"], p["prior/fc1_b"] = linear_init(rng, dz + da, lcfg.hidden)
    p["prior/fc2_w"], p["prior/fc2_b"] = linear_init(rng, lcfg.hidden, 2 * dz)
    # learned initial belief, standard normal at initialization
    p["prior/mu0"] = zeros_param((1, dz))
    p["prior/logvar0"] = zeros_param((1, dz))
    p["post/fc1_w"], p["post/fc1_b"] = linear_init(rng, dz + lcfg.z_in + da, lcfg.hidden)
    p["post/fc2_w"], p["post/fc2_b"] = linear_init(rng, lcfg.hidden, 2 * dz)
    p["dec/fc1_w"], p["dec/fc1_b"] = linear_init(rng, dz, lcfg.dec_hidden)
    p["dec/fc2_w"], p["dec/fc2_b"] = linear_init(rng, lcfg.dec_hidden, lcfg.image_dim)
    p["rew/fc1_w"], p["rew/fc1_b"] = linear_init(rng, dz + da, lcfg.reward_hidden)
    p["rew/fc2_w"], p["rew/fc2_b"] = linear_init(rng, lcfg.reward_hidden, 1)
    return p


def _belief_from_stats(mu: Tensor, logvar: Tensor, eps: np.ndarray) -> LatentBelief:
    var = exp(clamp(logvar, LOGVAR_MIN, LOGVAR_MAX))
    eps = np.asarray(eps, dtype=np.float32)
    sample = add(mu, mul(sqrt(var), Tensor(eps)))
    return LatentBelief(mu=mu, var=var, sample=sample, eps=eps)


def _gaussian_net(params, prefix: str, inp: Tensor, d_z: int, eps: np.ndarray) -> LatentBelief:
    h = linear_relu(inp, params[prefix + "/fc1_w"], params[prefix + "/fc1_b"])
    stats = linear(h, params[prefix + "/fc2_w"], params[prefix + "/fc2_b"])
    mu = narrow(stats, -1, 0, d_z)
    logvar = narrow(stats, -1, d_z, d_z)
    return _belief_from_stats(mu, logvar, eps)


def initial_belief(params, batch: int, d_z: int, eps: np.ndarray) -> LatentBelief:
    """Learned initial prior, broadcast over the batch."""
    from .tensor import broadcast_rows
    mu = broadcast_rows(params["prior/mu0"], (batch,)) if batch > 1 else params["prior/mu0"]
    lv = broadcast_rows(params["prior/logvar0"], (batch,)) if batch > 1 else params["prior/logvar0"]
    return _belief_from_stats(mu, lv, eps)


def prior_step(params, z_prev: Tensor, action: np.ndarray | Tensor, d_z: int,
               eps: np.ndarray) -> LatentBelief:
    """p(z_t | z_{t-1}, a_{t-1}) as a two-layer Gaussian net."""
    a = action if isinstance(action, Tensor) else Tensor(np.asarray(action, dtype=np.float32))
    return _gaussian_net(params, "prior", concat([z_prev, a], axis=-1), d_z, eps)


def posterior_step(params, z_prev: Tensor, z_fused_prev: Tensor,
                   action: np.ndarray | Tensor, d_z: int, eps: np.ndarray) -> LatentBelief:
    """q(z_t | z_{t-1}, code_{t-1}, a_{t-1}); the extra input is the fused code."""
    a = action if isinstance(action, Tensor) else Tensor(np.asarray(action, dtype=np.float32))
    return _gaussian_net(params, "post", concat([z_prev, z_fused_prev, a], axis=-1), d_z, eps)


def kl_gaussians(q: LatentBelief, p: LatentBelief) -> Tensor:
    """Closed-form KL(q || p) for diagonal Gaussians, summed over dims, batch-mean."""
    if q.mu.shape != p.mu.shape:
        raise ShapeError(f"belief widths disagree: {q.mu.shape} vs {p.mu.shape}")
    dm = sub(q.mu, p.mu)
    ratio = add(q.var, mul(dm, dm)) / p.var
    term = add(add(sub(log(p.var), log(q.var)), ratio), -1.0)
    return mean_(sum_(mul(term, 0.5), axis=-1))


def decode_image(params, z: Tensor) -> Tensor:
    """[B, d_z] -> flat pixel predictions [B, H*W*3] (linear output)."""
    h = linear_relu(z, params["dec/fc1_w"], params["dec/fc1_b"])
    return linear(h, params["dec/fc2_w"], params["dec/fc2_b"])


def predict_reward(params, z: Tensor, action_prev) -> Tensor:
    a = action_prev if isinstance(action_prev, Tensor) else Tensor(np.asarray(action_prev, dtype=np.float32))
    h = linear_relu(concat([z, a], axis=-1), params["rew/fc1_w"], params["rew/fc1_b"])
    return linear(h, params["rew/fc2_w"], params["rew/fc2_b"])


def reconstruction_loss(decoded: Tensor, target: np.ndarray) -> Tensor:
    """Unit-variance Gaussian NLL up to its additive constant: 0.5*sum sq error."""
    t = np.asarray(target, dtype=np.float32).reshape(decoded.shape)
    if t.shape != decoded.shape:
        raise ShapeError(f"decoder output {decoded.shape} does not match target {t.shape}")
    err = sub(decoded, Tensor(t))
    return mean_(mul(sum_(mul(err, err), axis=-1), 0.5))


def reward_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    t = np.asarray(target, dtype=np.float32).reshape(pred.shape)
    err = sub(pred, Tensor(t))
    return mean_(mul(sum_(mul(err, err), axis=-1), 0.5))


# ---------------------------------------------------------------------------
# composite model loss


def draw_model_noise(batch: int, steps: int, d_z: int, poe_dim: int | None,
                     rng: SeededRng) -> dict[str, np.ndarray]:
    """Pre-draw every stochastic input of model_loss so the loss is a pure function."""
    noise = {"post_eps": rng.normal((steps, batch, d_z)).astype(np.float32)}
    if poe_dim is not None:
        noise["poe"] = rng.normal((batch * steps, poe_dim)).astype(np.float32)
        noise["poe_mis"] = rng.normal((batch * steps, poe_dim)).astype(np.float32)
    return noise


def filter_beliefs(lat_params: dict[str, Tensor], z_seq: Tensor, act_prev: np.ndarray,
                   lcfg: LatentConfig, eps: np.ndarray,
                   want_priors: bool = True):
    """Run the prior/posterior filter along a window of fused codes.

    z_seq is [B, T, z_in]; eps is [T, B, d_z].  Returns (posteriors, priors)
    as lists of LatentBelief (priors[0] is None: the shared learned initial
    belief serves both, so the step-0 KL vanishes).
    """
    b, t_steps = z_seq.shape[0], z_seq.shape[1]
    dz = lcfg.d_z
    post = initial_belief(lat_params, b, dz, eps[0])
    posts, priors = [post], [None]
    for u in range(1, t_steps):
        a_prev = act_prev[:, u]
        z_fused_prev = reshape(narrow(z_seq, 1, u - 1, 1), (b, z_seq.shape[-1]))
        prior = prior_step(lat_params, post.sample, a_prev, dz, eps[u]) if want_priors else None
        post = posterior_step(lat_params, post.sample, z_fused_prev, a_prev, dz, eps[u])
        posts.append(post)
        priors.append(prior)
    return posts, priors


def model_loss(fusion: FusionModel, lat_params: dict[str, Tensor], batch: dict,
               lcfg: LatentConfig, noise: dict[str, np.ndarray],
               skip_align: bool = False):
    """Composite sequence loss: reconstruction + reward + KL + fusion loss.

    `batch` carries numpy arrays:
      images [B,T,H,W,3], wrenches [B,T,6], act_prev [B,T,da], rew_prev [B,T],
      contacts [B,T], mis_wrenches [B,T,6], align_weight [B,T].
    act_prev[b,0] is the action that led to the first window step and
    rew_prev[b,t] the reward it produced; misaligned wrenches pair each image
    with a wrench from a different timestep of the same episode and feed only
    the alignment term.

    Returns (total, terms, aux); terms maps each component to a float and aux
    exposes the fused codes and posterior beliefs for reuse by the policy
    losses.
    """
    images, wrenches = batch["images"], batch["wrenches"]
    b, t_steps = images.shape[0], images.shape[1]
    flat_images = images.reshape(b * t_steps, *images.shape[2:])
    flat_wrench = wrenches.reshape(b * t_steps, 6)

    z_all, contact_logits, align_logits, extra_kl = fusion.encode_batch(
        flat_images, flat_wrench, noise=noise.get("poe"))

    terms: dict[str, float] = {}
    total = Tensor(np.zeros((), dtype=np.float32))

    # fusion losses: contact on aligned pairs, alignment on aligned vs misaligned
    if fusion.use_contact_loss and contact_logits is not None:
        contact_bce = bce_with_logits(contact_logits,
                                      batch["contacts"].reshape(b * t_steps, 1))
        total = add(total, contact_bce)
        terms["contact"] = contact_bce.item()
    if fusion.use_align_loss and align_logits is not None and not skip_align:
        mis_flat = batch["mis_wrenches"].reshape(b * t_steps, 6)
        _, _, mis_align, _ = fusion.encode_batch(flat_images, mis_flat,
                                                 noise=noise.get("poe_mis"))
        w = batch["align_weight"].reshape(b * t_steps, 1)
        logits = concat([align_logits, mis_align], axis=0)
        labels = np.concatenate([np.ones((b * t_steps, 1), dtype=np.float32),
                                 np.zeros((b * t_steps, 1), dtype=np.float32)])
        align_bce = bce_with_logits(logits, labels, weights=np.concatenate([w, w]))
        total = add(total, align_bce)
        terms["align"] = align_bce.item()
    if extra_kl is not None:
        total = add(total, extra_kl)
        terms["poe_kl"] = extra_kl.item()

    # latent filtering over the window
    z_seq = reshape(z_all, (b, t_steps, z_all.shape[-1]))
    posts, priors = filter_beliefs(lat_params, z_seq, batch["act_prev"], lcfg,
                                   noise["post_eps"])
    recon_terms, reward_terms, kl_terms = [], [], []
    for u, post in enumerate(posts):
        dec = decode_image(lat_params, post.sample)
        recon_terms.append(reconstruction_loss(dec, images[:, u].reshape(b, -1)))
        if u >= 1:
            kl_terms.append(kl_gaussians(post, priors[u]))
            rew = predict_reward(lat_params, post.sample, batch["act_prev"][:, u])
            reward_terms.append(reward_loss(rew, batch["rew_prev"][:, u]))

    recon = mul(_sum_list(recon_terms), 1.0 / len(recon_terms))
    total = add(total, recon)
    terms["recon"] = recon.item()
    if reward_terms:
        rew_total = mul(_sum_list(reward_terms), 1.0 / len(reward_terms))
        total = add(total, rew_total)
        terms["reward"] = rew_total.item()
    if kl_terms:
        kl_total = mul(_sum_list(kl_terms), lcfg.kl_beta / len(kl_terms))
        total = add(total, kl_total)
        terms["kl"] = kl_total.item()

    terms["total"] = total.item()
    aux = {"z_seq": z_seq, "posteriors": posts}
    return total, terms, aux


def _sum_list(ts):
    out = ts[0]
    for t in ts[1:]:
        out = add(out, t)
    return out
