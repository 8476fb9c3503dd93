"""Soft actor-critic over the latent state.

Actor: two-layer map from [fused code, previous action] to the mean and
log-std of a tanh-squashed diagonal Gaussian.  Critic: twin Q networks on
(dynamics latent, action) with Polyak-averaged delayed copies providing the
bootstrap value.  The temperature is fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import clone_params, linear_init
from .rng import SeededRng
from .tensor import (Tensor, add, clamp, concat, exp, linear, linear_relu,
                     log, mean_, mul, narrow, sub, sum_, tanh)

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class PolicyConfig:
    obs_dim: int          # actor conditioning width (fused code + prev action)
    latent_dim: int       # critic latent input width
    act_dim: int = 2
    actor_hidden: int = 64
    critic_hidden: int = 128
    gamma: float = 0.99
    alpha: float = 0.1    # fixed entropy temperature
    polyak: float = 0.005


def init_actor_params(pcfg: PolicyConfig, rng: SeededRng) -> dict[str, Tensor]:
    p = {}
    p["actor/fc1_w"], p["actor/fc1_b"] = linear_init(rng, pcfg.obs_dim, pcfg.actor_hidden)
    p["actor/fc2_w"], p["actor/fc2_b"] = linear_init(rng, pcfg.actor_hidden, 2 * pcfg.act_dim)
    return p


def init_critic_params(pcfg: PolicyConfig, rng: SeededRng) -> dict[str, Tensor]:
    p = {}
    for q in ("q1", "q2"):
        p[f"{q}/fc1_w"], p[f"{q}/fc1_b"] = linear_init(rng, pcfg.latent_dim + pcfg.act_dim,
                                                       pcfg.critic_hidden)
        p[f"{q}/fc2_w"], p[f"{q}/fc2_b"] = linear_init(rng, pcfg.critic_hidden, 1)
    return p


def init_target_params(critic_params: dict[str, Tensor]) -> dict[str, Tensor]:
    """Delayed copies start exactly equal to the live critic."""
    return clone_params(critic_params)


def actor_stats(params, obs: Tensor, act_dim: int):
    h = linear_relu(obs, params["actor/fc1_w"], params["actor/fc1_b"])
    out = linear(h, params["actor/fc2_w"], params["actor/fc2_b"])
    mu = narrow(out, -1, 0, act_dim)
    log_std = clamp(narrow(out, -1, act_dim, act_dim), LOG_STD_MIN, LOG_STD_MAX)
    return mu, log_std


def actor_sample(params, obs, act_dim: int, eps: np.ndarray | None = None,
                 rng: SeededRng | None = None):
    """Reparameterized tanh-squashed sample with its log-density.

    log pi includes the tanh change-of-variables term
    sum log(1 - a^2 + 1e-6); actions land strictly inside (-1, 1)^act_dim.
    """
    obs = obs if isinstance(obs, Tensor) else Tensor(np.asarray(obs, dtype=np.float32))
    mu, log_std = actor_stats(params, obs, act_dim)
    if eps is None:
        if rng is None:
            raise ValueError("actor_sample needs `eps` or `rng`")
        eps = rng.normal(mu.shape).astype(np.float32)
    eps = np.asarray(eps, dtype=np.float32)
    std = exp(log_std)
    pre = add(mu, mul(std, Tensor(eps)))
    action = tanh(pre)
    # Gaussian log-density of the pre-squash sample ...
    gauss = mul(add(add(Tensor(eps * eps), mul(log_std, 2.0)), _LOG_2PI), -0.5)
    # ... minus the tanh Jacobian
    jac = log(add(sub(1.0, mul(action, action)), 1e-6))
    log_prob = sum_(sub(gauss, jac), axis=-1, keepdims=True)
    return action, log_prob


def actor_mean_action(params, obs, act_dim: int) -> Tensor:
    """Deterministic evaluation action: tanh of the mean."""
    obs = obs if isinstance(obs, Tensor) else Tensor(np.asarray(obs, dtype=np.float32))
    mu, _ = actor_stats(params, obs, act_dim)
    return tanh(mu)


def q_value(params, which: str, latent: Tensor, action: Tensor) -> Tensor:
    h = linear_relu(concat([latent, action], axis=-1), params[f"{which}/fc1_w"],
                    params[f"{which}/fc1_b"])
    return linear(h, params[f"{which}/fc2_w"], params[f"{which}/fc2_b"])


def _min_q(params, latent: Tensor, action: Tensor) -> np.ndarray:
    q1 = q_value(params, "q1", latent, action)
    q2 = q_value(params, "q2", latent, action)
    return np.minimum(q1.data, q2.data)


def critic_loss(critic_params, target_params, actor_params, pcfg: PolicyConfig,
                latent: Tensor, action: np.ndarray, reward: np.ndarray,
                done: np.ndarray, latent_next: Tensor, actor_obs_next: np.ndarray,
                eps_next: np.ndarray) -> Tensor:
    """Bellman residual 0.5 * (Q(z, a) - (r + gamma * V(z')))^2 over both twins.

    V(z') = min(Q1_bar, Q2_bar)(z', a' ~ pi) - alpha * log pi(a'|.), with the
    target entirely detached; gradients flow through Q(z, a) only, including
    back into whatever network produced `latent`.
    """
    a_next, logp_next = actor_sample(actor_params, actor_obs_next, pcfg.act_dim, eps=eps_next)
    q_min = _min_q(target_params, latent_next.detach(), a_next.detach())
    v_next = q_min - pcfg.alpha * logp_next.data
    y = reward.reshape(-1, 1) + pcfg.gamma * (1.0 - done.reshape(-1, 1)) * v_next
    a = Tensor(np.asarray(action, dtype=np.float32))
    total = None
    for which in ("q1", "q2"):
        q = q_value(critic_params, which, latent, a)
        err = sub(q, Tensor(y.astype(np.float32)))
        term = mean_(mul(mul(err, err), 0.5))
        total = term if total is None else add(total, term)
    return total


def actor_loss(critic_params, actor_params, pcfg: PolicyConfig, latent: Tensor,
               actor_obs: np.ndarray, eps: np.ndarray) -> Tensor:
    """E[alpha * log pi(a|s) - min Q(z, a)] with one reparameterized sample.

    The latent fed to Q is detached so policy gradients never reach the
    dynamics model or encoder.
    """
    a, logp = actor_sample(actor_params, actor_obs, pcfg.act_dim, eps=eps)
    z = latent.detach() if isinstance(latent, Tensor) else Tensor(np.asarray(latent, dtype=np.float32))
    q1 = q_value(critic_params, "q1", z, a)
    q2 = q_value(critic_params, "q2", z, a)
    # row-wise min of the twins, keeping the graph through the selected one
    take1 = (q1.data <= q2.data).astype(np.float32)
    q_min = add(mul(q1, Tensor(take1)), mul(q2, Tensor(1.0 - take1)))
    return mean_(sub(mul(logp, pcfg.alpha), q_min))


def target_update(critic_params: dict[str, Tensor], target_params: dict[str, Tensor],
                  polyak: float = 0.005):
    """beta_bar <- (1 - rho) * beta_bar + rho * beta."""
    for k, p in critic_params.items():
        t = target_params[k]
        t.data = (1.0 - polyak) * t.data + polyak * p.data
