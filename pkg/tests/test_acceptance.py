"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Criteria 7, 8, 10, and parts of 11 train real models and take tens of
minutes combined on one core; dataset and checkpoints are produced once per
session and shared.  Run `pytest -s tests/test_acceptance.py` to watch the
per-criterion lines.
"""

import csv
import dataclasses
import os
import time

import numpy as np
import pytest

from vtt.baselines import GaussianExpert, fuse_poe
from vtt.config import ExperimentConfig, load_config
from vtt.encoder import (VttConfig, compress, compress_tokens,
                         decompose_attention, encoder_forward,
                         init_vtt_params, paper_config)
from vtt.latent import LatentBelief, kl_gaussians
from vtt.rng import SeededRng
from vtt.tensor import softmax_rows, tensor

DESK_CFG_PATH = os.path.join(os.path.dirname(__file__), "..", "configs", "desk.cfg")
WRENCH = np.array([[1.0, -2.0, 0.5, 0.05, -0.02, 0.1]], dtype=np.float32)


def report(criterion: str, ok: bool, detail: str):
    line = f"{'PASS' if ok else 'FAIL'} {criterion}: {detail}"
    print(line)
    assert ok, line


@pytest.fixture(scope="session")
def desk_cfg():
    return load_config(DESK_CFG_PATH)


@pytest.fixture(scope="session")
def run_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def desk_dataset(desk_cfg, run_dir):
    from vtt.training import gen_data
    path = str(run_dir / "desk.vttc")
    stats = gen_data(desk_cfg, path)
    assert stats["episodes"] == desk_cfg.episodes
    return path


@pytest.fixture(scope="session")
def repr_ckpt(desk_cfg, desk_dataset, run_dir):
    from vtt.training import train_repr
    path = str(run_dir / "repr.vttc")
    result = train_repr(desk_cfg, desk_dataset, path, log=None)
    return path, result


@pytest.fixture(scope="session")
def rl_ckpt(desk_cfg, repr_ckpt, run_dir):
    from vtt.training import train_rl
    path = str(run_dir / "rl.vttc")
    result = train_rl(desk_cfg, repr_ckpt[0], path, log=None)
    return path, result


class TestCriterion1ShapeFidelity:
    def test_paper_scale_dimensions(self):
        t0 = time.time()
        cfg = paper_config()
        assert (cfg.image_hw, cfg.patch_px, cfg.d, cfg.heads, cfg.n_layers, cfg.c) == \
            (84, 14, 384, 8, 6, 12)
        params = init_vtt_params(cfg, SeededRng(0))
        img = SeededRng(1).uniform((84, 84, 3)).astype(np.float32)
        heads, decomps = encoder_forward((img, WRENCH), params, cfg)
        n_image = cfg.n_image_patches
        block = compress_tokens(heads, params, cfg)
        z = compress(heads, params, cfg).z
        elapsed = time.time() - t0
        ok = (n_image == 36 and cfg.n_tokens == 40 and heads.shape == (40, 384)
              and block.shape == (40, 32) and z.shape == (1, 288) and elapsed < 10.0)
        report("criterion 1 (shape fidelity)",
               ok, f"36 image + 2 tactile + 2 embedding tokens, block {block.shape}, "
                   f"z {z.shape}, {elapsed:.1f}s")


class TestCriterion2DecompositionIdentity:
    def test_self_plus_cross_reconstructs(self):
        t0 = time.time()
        worst = 0.0
        for cfg in (VttConfig(), paper_config()):
            layout = cfg.layout()
            r, dk = layout.n_tokens, cfg.d_k
            for seed in range(20):
                rng = SeededRng(seed)
                s = softmax_rows(tensor(rng.normal((cfg.heads, r, r)).astype(np.float32)))
                v = tensor(rng.normal((cfg.heads, r, dk)).astype(np.float32))
                dec = decompose_attention(s, v, layout)
                full = np.swapaxes(np.matmul(s.data, v.data), 0, 1).reshape(r, cfg.heads * dk)
                err = np.abs(dec.self_out.data + dec.cross_out.data - full).max()
                worst = max(worst, float(err))
        elapsed = time.time() - t0
        ok = worst < 1e-5 and elapsed < 30.0
        report("criterion 2 (decomposition identity)", ok,
               f"max |self+cross - S@V| = {worst:.2e} over 20 seeds x 2 configs, "
               f"{elapsed:.1f}s")


class TestCriterion3RowStochasticity:
    def test_heatmap_rows_sum_to_one(self):
        t0 = time.time()
        cfg = VttConfig()
        params = init_vtt_params(cfg, SeededRng(3))
        rng = SeededRng(4)
        worst = 0.0
        for _ in range(100):
            img = rng.uniform((24, 24, 3)).astype(np.float32)
            wr = rng.normal((1, 6)).astype(np.float32)
            _, decomps = encoder_forward((img, wr), params, cfg)
            for dec in decomps:
                worst = max(worst, float(np.abs(dec.full.data.sum(axis=-1) - 1.0).max()))
        elapsed = time.time() - t0
        ok = worst < 1e-6 and elapsed < 30.0
        report("criterion 3 (row-stochasticity)", ok,
               f"max row-sum deviation {worst:.2e} over 100 inputs x {cfg.n_layers} "
               f"layers x {cfg.heads} heads, {elapsed:.1f}s")


class TestCriterion4GradientIntegrity:
    def test_finite_difference_sweep(self):
        from vtt.gradcheck_suite import run_suite
        t0 = time.time()
        reports = run_suite(log=None)
        worst_name, worst = max(((k, r.max_rel_err) for k, r in reports.items()),
                                key=lambda kv: kv[1])
        elapsed = time.time() - t0
        ok = worst < 1e-3 and elapsed < 120.0
        report("criterion 4 (gradient integrity)", ok,
               f"max relative error {worst:.2e} ({worst_name}) across "
               f"{len(reports)} loss paths, {elapsed:.1f}s")


class TestCriterion5PoeOracle:
    def test_fused_moments_match_grid_product(self):
        t0 = time.time()
        rng = SeededRng(5)
        worst = 0.0
        for _ in range(50):
            mu = rng.normal((2,), 0.0, 1.5)
            var = np.exp(rng.normal((2,), 0.0, 0.7))
            e1 = GaussianExpert(tensor([[mu[0]]]), tensor([[var[0]]]))
            e2 = GaussianExpert(tensor([[mu[1]]]), tensor([[var[1]]]))
            fm, fv, _ = fuse_poe([e1, e2], noise=np.zeros((1, 1)))
            # grid-product oracle
            lo = min(mu) - 12 * np.sqrt(max(var))
            hi = max(mu) + 12 * np.sqrt(max(var))
            x = np.linspace(lo, hi, 30001)
            logp = -0.5 * ((x - mu[0]) ** 2 / var[0] + (x - mu[1]) ** 2 / var[1])
            p = np.exp(logp - logp.max())
            p /= np.trapezoid(p, x)
            g_mean = np.trapezoid(p * x, x)
            g_var = np.trapezoid(p * (x - g_mean) ** 2, x)
            worst = max(worst, abs(fm.item() - g_mean), abs(fv.item() - g_var))
        elapsed = time.time() - t0
        ok = worst < 1e-4 and elapsed < 10.0
        report("criterion 5 (product-of-experts oracle)", ok,
               f"max |moment - grid oracle| = {worst:.2e} over 50 cases "
               f"(precision-weighted form), {elapsed:.1f}s")


class TestCriterion6KlOracle:
    def test_closed_form_matches_monte_carlo(self):
        t0 = time.time()
        rng = SeededRng(6)
        worst_rel = 0.0
        for case in range(10):
            mu_q = rng.normal((1, 8), 0.0, 0.8)
            var_q = np.exp(rng.normal((1, 8), 0.0, 0.5))
            mu_p = rng.normal((1, 8), 0.0, 0.8)
            var_p = np.exp(rng.normal((1, 8), 0.0, 0.5))

            def belief(mu, var):
                return LatentBelief(mu=tensor(mu.astype(np.float32)),
                                    var=tensor(var.astype(np.float32)),
                                    sample=tensor(mu.astype(np.float32)),
                                    eps=np.zeros_like(mu))

            closed = kl_gaussians(belief(mu_q, var_q), belief(mu_p, var_p)).item()
            z = SeededRng(100 + case).normal((1_000_000, 8)) * np.sqrt(var_q) + mu_q
            log_q = -0.5 * ((z - mu_q) ** 2 / var_q + np.log(2 * np.pi * var_q)).sum(axis=1)
            log_p = -0.5 * ((z - mu_p) ** 2 / var_p + np.log(2 * np.pi * var_p)).sum(axis=1)
            mc = float((log_q - log_p).mean())
            worst_rel = max(worst_rel, abs(closed - mc) / abs(mc))
        elapsed = time.time() - t0
        ok = worst_rel < 0.02 and elapsed < 60.0
        report("criterion 6 (KL oracle)", ok,
               f"max relative gap to 1e6-sample Monte Carlo {worst_rel:.4f} "
               f"over 10 8-D cases, {elapsed:.1f}s")


class TestCriterion7ContactAlignmentLearning:
    def test_heldout_accuracies(self, desk_cfg, repr_ckpt):
        _, result = repr_ckpt
        accs = result["accuracies"]
        ok = (desk_cfg.repr_steps <= 5000
              and accs.get("contact_acc", 0.0) > 0.95
              and accs.get("align_acc", 0.0) > 0.90)
        report("criterion 7 (contact/alignment learning)", ok,
               f"held-out contact={accs.get('contact_acc', 0):.4f} (>0.95), "
               f"alignment={accs.get('align_acc', 0):.4f} (>0.90) after "
               f"{desk_cfg.repr_steps} steps")

    def test_ablated_variants_run_to_completion(self, desk_cfg, desk_dataset, run_dir):
        from vtt.training import train_repr
        for kind in ("vtt-no-contact", "vtt-no-align", "vtt-no-both"):
            cfg = dataclasses.replace(desk_cfg, fusion=kind, repr_steps=40)
            out = str(run_dir / f"ablate_{kind}.vttc")
            result = train_repr(cfg, desk_dataset, out, log=None)
            assert os.path.exists(out)
            assert np.isfinite(result["rows"][-1]["total"])
        report("criterion 7 (ablation variants)", True,
               "no-contact / no-align / no-both variants trained to completion")


class TestCriterion8AttentionShift:
    def test_tactile_share_rises_on_contact(self, desk_cfg, repr_ckpt):
        from vtt.analysis import attention_shift_stats
        t0 = time.time()
        stats = attention_shift_stats(desk_cfg, repr_ckpt[0], n_episodes=10)
        usable = [s for s in stats if s["n_pre"] > 0 and s["n_contact"] > 0]
        pre_t = float(np.mean([s["pre_tactile"] for s in usable]))
        in_t = float(np.mean([s["in_tactile"] for s in usable]))
        pre_v = float(np.mean([s["pre_visual"] for s in usable]))
        elapsed = time.time() - t0
        ok = len(usable) >= 10 and in_t > pre_t and pre_v > 0.5 and elapsed < 300.0
        report("criterion 8 (attention shift)", ok,
               f"tactile share pre-contact {pre_t:.4f} -> in-contact {in_t:.4f} "
               f"over {len(usable)} episodes; pre-contact visual {pre_v:.4f} (>0.5), "
               f"{elapsed:.0f}s")


class TestCriterion9ParameterAccounting:
    def test_paper_scale_ratio(self):
        from vtt.analysis import params_report
        t0 = time.time()
        rows = dict(params_report(ExperimentConfig(), paper_scale=True))
        ratio = rows["vtt"] / rows["concat"]
        elapsed = time.time() - t0
        ok = (3.0 <= ratio <= 8.0 and rows["concat-adjusted"] > 3 * rows["concat"]
              and rows["poe-adjusted"] > 3 * rows["poe"] and elapsed < 10.0)
        report("criterion 9 (parameter accounting)", ok,
               f"paper-scale vtt/concat = {rows['vtt']}/{rows['concat']} = {ratio:.2f} "
               f"(band [3, 8]); adjusted variants {rows['concat-adjusted']}, "
               f"{rows['poe-adjusted']}, {elapsed:.1f}s")


class TestCriterion10RlImprovement:
    def test_returns_beat_random_and_success(self, desk_cfg, rl_ckpt):
        from vtt.training import random_policy_returns
        _, result = rl_ckpt
        rows = result["episodes"]
        last = rows[-50:]
        mean_ret = float(np.mean([r["return"] for r in last]))
        success = float(np.mean([r["success"] for r in last]))
        rand = random_policy_returns(desk_cfg, n_episodes=50)
        rand_mean = float(rand.mean())
        rand_se = float(rand.std(ddof=1) / np.sqrt(len(rand)))
        ok = (desk_cfg.rl_env_steps <= 30000
              and mean_ret > rand_mean + 2.0 * rand_se
              and success > 0.5)
        report("criterion 10 (RL improvement)", ok,
               f"last-{len(last)} mean return {mean_ret:.1f} vs random "
               f"{rand_mean:.1f} + 2se ({rand_se:.1f}); success rate {success:.2f} "
               f"(>0.5) within {desk_cfg.rl_env_steps} env steps")


class TestCriterion11Determinism:
    def test_gen_data_bitwise(self, run_dir):
        from vtt.training import gen_data
        cfg = ExperimentConfig(episodes=3, seed=11).validate()
        a, b = str(run_dir / "det_a.vttc"), str(run_dir / "det_b.vttc")
        gen_data(cfg, a)
        gen_data(cfg, b)
        ok = open(a, "rb").read() == open(b, "rb").read()
        report("criterion 11 (determinism: gen-data)", ok,
               "identical seed/config produce bit-identical datasets")

    def test_train_repr_bitwise(self, run_dir):
        from vtt.training import gen_data, train_repr
        cfg = ExperimentConfig(episodes=3, seed=12, repr_steps=15, model_batch=4,
                               d=32, z_dim=32, d_z=8, n_layers=1, seq_len=6,
                               latent_hidden=32, dec_hidden=48).validate()
        data = str(run_dir / "det_data.vttc")
        gen_data(cfg, data)
        outs = []
        for tag in ("x", "y"):
            out = str(run_dir / f"det_repr_{tag}.vttc")
            train_repr(cfg, data, out, log=None)
            outs.append(out)
        same_ckpt = open(outs[0], "rb").read() == open(outs[1], "rb").read()
        same_csv = (open(outs[0] + ".metrics.csv", "rb").read()
                    == open(outs[1] + ".metrics.csv", "rb").read())
        report("criterion 11 (determinism: train-repr)", same_ckpt and same_csv,
               "bit-identical checkpoint and metrics CSV across reruns")

    def test_train_rl_bitwise(self, run_dir):
        from vtt.training import gen_data, train_repr, train_rl
        cfg = ExperimentConfig(episodes=3, seed=13, repr_steps=8, model_batch=4,
                               d=32, z_dim=32, d_z=8, n_layers=1, seq_len=6,
                               latent_hidden=32, dec_hidden=48, rl_env_steps=260,
                               rl_warmup_random=60, rl_warmup_scripted=2,
                               rl_update_every=25, policy_batch=4).validate()
        data = str(run_dir / "det_rl_data.vttc")
        gen_data(cfg, data)
        repr_out = str(run_dir / "det_rl_repr.vttc")
        train_repr(cfg, data, repr_out, log=None)
        outs = []
        for tag in ("x", "y"):
            out = str(run_dir / f"det_rl_{tag}.vttc")
            train_rl(cfg, repr_out, out, log=None)
            outs.append(out)
        same = (open(outs[0], "rb").read() == open(outs[1], "rb").read()
                and open(outs[0] + ".metrics.csv", "rb").read()
                == open(outs[1] + ".metrics.csv", "rb").read())
        report("criterion 11 (determinism: train-rl)", same,
               "bit-identical checkpoint and episode log across reruns")

    def test_heatmap_bitwise(self, desk_cfg, repr_ckpt, desk_dataset, run_dir):
        from vtt.analysis import run_heatmap
        outs = []
        for tag in ("a", "b"):
            out = str(run_dir / f"det_heat_{tag}")
            run_heatmap(desk_cfg, repr_ckpt[0], out, data_path=desk_dataset, index=0)
            outs.append(out)
        files = sorted(f for f in os.listdir(outs[0]) if f.endswith((".ppm", ".csv")))
        same = all(open(os.path.join(outs[0], f), "rb").read()
                   == open(os.path.join(outs[1], f), "rb").read() for f in files)
        report("criterion 11 (determinism: heatmap)", same and len(files) > 1,
               f"{len(files)} PPM/CSV outputs bit-identical across reruns")
