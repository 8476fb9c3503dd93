"""End-to-end gradient verification at toy dimensions.

Each entry builds a deterministic scalar loss over a small parameter set
and compares analytic gradients against 64-bit central differences: the
attention encoder loss, the composite model loss for every fusion variant,
and both soft actor-critic objectives.
"""

from __future__ import annotations

import numpy as np

from . import policy as sac
from .baselines import BaselineConfig
from .encoder import VttConfig, encode_batch, init_vtt_params, vtt_loss
from .fusion import FusionModel, init_fusion
from .gradcheck import GradCheckReport, finite_diff_check
from .latent import LatentConfig, draw_model_noise, init_latent_params, model_loss
from .rng import SeededRng
from .tensor import Tensor, mean_, mul, sum_, add

TOY_VTT = VttConfig(image_hw=8, patch_px=4, d=8, heads=2, n_layers=1, c=8,
                    z_dim=8, compress_hidden=6, z_hidden=6)
TOY_BASELINE = BaselineConfig(image_hw=8, patch_px=4, patch_dim=6, hidden=10,
                              image_dim=8, tactile_hidden=8, tactile_dim=6, poe_dim=6)
TOY_LATENT = LatentConfig(d_z=4, hidden=8, dec_hidden=10, reward_hidden=6,
                          act_dim=2, image_hw=8, z_in=8)


def _off_kink(params: dict[str, Tensor], seed: int) -> dict[str, Tensor]:
    """Nudge all parameters so no ReLU pre-activation sits on the kink.

    Central differences are only two-sided away from piecewise boundaries;
    fresh zero biases would otherwise park units exactly there.
    """
    rng = SeededRng(seed)
    return {k: Tensor((p.data + rng.uniform(p.shape, -0.05, 0.05)).astype(np.float32),
                      requires_grad=True) for k, p in params.items()}


def _toy_batch(rng: SeededRng, b: int = 1, t: int = 3) -> dict:
    return {
        "images": rng.uniform((b, t, 8, 8, 3)).astype(np.float32),
        "wrenches": rng.normal((b, t, 6), 0.0, 0.5).astype(np.float32),
        "act_prev": rng.uniform((b, t, 2), -1.0, 1.0).astype(np.float32),
        "rew_prev": rng.normal((b, t), 0.0, 1.0).astype(np.float32),
        "done_prev": np.zeros((b, t), dtype=np.float32),
        "contacts": (rng.uniform((b, t)) > 0.5).astype(np.float32),
        "mis_wrenches": rng.normal((b, t, 6), 0.0, 0.5).astype(np.float32),
        "align_weight": np.ones((b, t), dtype=np.float32),
    }


def check_vtt_loss(step: float = 1e-4) -> GradCheckReport:
    """Contact/alignment loss plus ||z||^2 through the full attention stack."""
    rng = SeededRng(11)
    params = _off_kink(init_vtt_params(TOY_VTT, rng), 101)
    images = rng.uniform((2, 8, 8, 3)).astype(np.float32)
    wrenches = rng.normal((2, 6), 0.0, 0.5).astype(np.float32)
    c_gt = np.array([[1.0], [0.0]], dtype=np.float32)
    a_gt = np.array([[0.0], [1.0]], dtype=np.float32)

    def f(p):
        z, c, a = encode_batch(images, wrenches, p, TOY_VTT)
        return add(vtt_loss(c, a, c_gt, a_gt), sum_(mul(z, z)))

    return finite_diff_check(f, params, step=step)


def _model_loss_fn(kind: str):
    rng = SeededRng(23)
    lcfg = TOY_LATENT if kind.startswith("vtt") else (
        LatentConfig(d_z=4, hidden=8, dec_hidden=10, reward_hidden=6, act_dim=2,
                     image_hw=8, z_in=TOY_BASELINE.concat_dim if kind == "concat"
                     else TOY_BASELINE.poe_dim))
    fusion = init_fusion(kind, TOY_VTT, TOY_BASELINE, rng.split(1))
    fusion.params = _off_kink(fusion.params, 102)
    lat = _off_kink(init_latent_params(lcfg, rng.split(2)), 103)
    batch = _toy_batch(rng.split(3))
    poe_dim = TOY_BASELINE.poe_dim if kind == "poe" else None
    noise = draw_model_noise(1, 3, lcfg.d_z, poe_dim, rng.split(4))
    n_fusion = len(fusion.params)
    all_params = {**{f"fusion/{k}": v for k, v in fusion.params.items()},
                  **{f"latent/{k}": v for k, v in lat.items()}}

    def f(p):
        fus = FusionModel(kind, {k[len("fusion/"):]: v for k, v in p.items()
                                 if k.startswith("fusion/")}, fusion.cfg, TOY_BASELINE)
        lp = {k[len("latent/"):]: v for k, v in p.items() if k.startswith("latent/")}
        total, _, _ = model_loss(fus, lp, batch, lcfg, noise)
        return total

    return f, all_params


def check_model_loss(kind: str = "vtt", step: float = 1e-4) -> GradCheckReport:
    f, params = _model_loss_fn(kind)
    return finite_diff_check(f, params, step=step)


def check_sac_losses(step: float = 1e-4) -> tuple[GradCheckReport, GradCheckReport]:
    rng = SeededRng(31)
    pcfg = sac.PolicyConfig(obs_dim=6, latent_dim=4, act_dim=2, actor_hidden=6,
                            critic_hidden=8)
    actor = _off_kink(sac.init_actor_params(pcfg, rng.split(1)), 104)
    critic = _off_kink(sac.init_critic_params(pcfg, rng.split(2)), 105)
    target = sac.init_target_params(critic)
    b = 3
    latent = rng.normal((b, 4)).astype(np.float32)
    latent_next = rng.normal((b, 4)).astype(np.float32)
    action = rng.uniform((b, 2), -0.9, 0.9).astype(np.float32)
    reward = rng.normal((b,)).astype(np.float32)
    done = np.zeros(b, dtype=np.float32)
    obs = rng.normal((b, 6), 0.0, 0.5).astype(np.float32)
    eps = rng.normal((b, 2)).astype(np.float32)

    def f_q(p):
        return sac.critic_loss(p, target, actor, pcfg, Tensor(latent), action, reward,
                               done, Tensor(latent_next), obs, eps_next=eps)

    rep_q = finite_diff_check(f_q, critic, step=step)

    def f_pi(p):
        return sac.actor_loss(critic, p, pcfg, Tensor(latent), obs, eps=eps)

    rep_pi = finite_diff_check(f_pi, actor, step=step)
    return rep_q, rep_pi


def run_suite(tolerance: float = 1e-3, log=print) -> dict[str, GradCheckReport]:
    """The full verification sweep used by the CLI; returns all reports."""
    reports: dict[str, GradCheckReport] = {}
    reports["vtt_loss"] = check_vtt_loss()
    for kind in ("vtt", "concat", "poe"):
        reports[f"model_loss[{kind}]"] = check_model_loss(kind)
    rep_q, rep_pi = check_sac_losses()
    reports["critic_loss"] = rep_q
    reports["actor_loss"] = rep_pi
    if log:
        for name, rep in reports.items():
            status = "ok" if rep.passed(tolerance) else "FAIL"
            log(f"{name:20s} max_rel_err={rep.max_rel_err:.3e} "
                f"worst={rep.worst_param}  [{status}]")
    return reports
