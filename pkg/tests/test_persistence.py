"""Binary tensor container, episode datasets, and config round-trips."""

import dataclasses
import struct

import numpy as np
import pytest

from vtt.checkpoint import MAGIC, load_tensors, save_tensors
from vtt.config import (ExperimentConfig, config_to_text, load_config,
                        parse_config_text, save_config)
from vtt.dataset import (Episode, alignment_eval_pairs, load_dataset,
                         sample_windows, save_dataset, split_holdout)
from vtt.errors import ConfigError, ValidationError
from vtt.rng import SeededRng


def toy_episode(rng, t=20, contact_pattern=None):
    contacts = (np.arange(t) >= t // 2).astype(np.float32) if contact_pattern is None \
        else np.asarray(contact_pattern, dtype=np.float32)
    wrenches = np.zeros((t, 6), dtype=np.float32)
    wrenches[contacts > 0.5, 0] = rng.uniform((int(contacts.sum()),), 0.5, 2.0)
    return Episode(images=rng.uniform((t, 8, 8, 3)).astype(np.float32),
                   wrenches=wrenches,
                   actions=rng.uniform((t, 2), -1, 1).astype(np.float32),
                   rewards=rng.normal((t,)).astype(np.float32),
                   contacts=contacts,
                   dones=np.eye(1, t, t - 1, dtype=np.float32)[0])


class TestTensorContainer:
    def test_round_trip(self, tmp_path):
        rng = SeededRng(0)
        tensors = {"a/w": rng.normal((3, 4)).astype(np.float32),
                   "a/b": rng.normal((4,)).astype(np.float32),
                   "scalar": np.array(2.5, dtype=np.float32),
                   "deep/nest/x": rng.normal((2, 3, 4)).astype(np.float32)}
        path = tmp_path / "t.vttc"
        save_tensors(path, tensors)
        loaded = load_tensors(path)
        assert list(loaded) == list(tensors)  # order preserved
        for k in tensors:
            assert np.array_equal(loaded[k], tensors[k])

    def test_magic_bytes(self, tmp_path):
        path = tmp_path / "t.vttc"
        save_tensors(path, {"x": np.zeros(2, dtype=np.float32)})
        assert path.read_bytes()[:4] == MAGIC == b"VTTC"

    def test_corruption_detected(self, tmp_path):
        path = tmp_path / "t.vttc"
        save_tensors(path, {"x": np.arange(6, dtype=np.float32)})
        raw = bytearray(path.read_bytes())
        raw[20] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(ValidationError, match="checksum"):
            load_tensors(path)

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "t.vttc"
        save_tensors(path, {"x": np.arange(6, dtype=np.float32)})
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(ValidationError):
            load_tensors(path)

    def test_layout_is_little_endian(self, tmp_path):
        path = tmp_path / "t.vttc"
        save_tensors(path, {"ab": np.array([1.0], dtype=np.float32)})
        raw = path.read_bytes()
        version, count = struct.unpack_from("<II", raw, 4)
        assert version == 1 and count == 1
        nlen = struct.unpack_from("<H", raw, 12)[0]
        assert nlen == 2 and raw[14:16] == b"ab"


class TestDataset:
    def test_round_trip(self, tmp_path):
        rng = SeededRng(1)
        episodes = [toy_episode(rng, t) for t in (15, 20, 12)]
        path = tmp_path / "d.vttc"
        save_dataset(path, episodes)
        loaded = load_dataset(path)
        assert len(loaded) == 3
        for a, b in zip(episodes, loaded):
            assert np.array_equal(a.images, b.images)
            assert np.array_equal(a.rewards, b.rewards)

    def test_holdout_split_deterministic(self):
        episodes = [toy_episode(SeededRng(s)) for s in range(10)]
        train, hold = split_holdout(episodes, 0.2)
        assert len(train) == 8 and len(hold) == 2
        assert hold[0] is episodes[8]

    def test_windows_shapes_and_alignment(self):
        episodes = [toy_episode(SeededRng(s), 25) for s in range(3)]
        batch = sample_windows(episodes, batch=6, tau=8, rng=SeededRng(2))
        assert batch["images"].shape == (6, 8, 8, 8, 3)
        assert batch["act_prev"].shape == (6, 8, 2)
        assert batch["rew_prev"].shape == (6, 8)
        assert batch["done_prev"].shape == (6, 8)
        assert batch["mis_wrenches"].shape == (6, 8, 6)
        assert set(np.unique(batch["align_weight"])) <= {0.0, 1.0}

    def test_misalignment_prefers_contact_discordant(self):
        # half no-contact, half contact: every negative can be discordant
        episodes = [toy_episode(SeededRng(3), 30)]
        batch = sample_windows(episodes, batch=8, tau=10, rng=SeededRng(4))
        assert np.all(batch["align_weight"] == 1.0)
        # a misaligned wrench never matches the aligned contact flag
        mis_contact = (np.abs(batch["mis_wrenches"]).sum(axis=-1) > 0)
        assert np.all(mis_contact != (batch["contacts"] > 0.5))

    def test_all_same_contact_gets_zero_weight(self):
        episodes = [toy_episode(SeededRng(5), 20, contact_pattern=np.zeros(20))]
        batch = sample_windows(episodes, batch=4, tau=6, rng=SeededRng(6))
        assert np.all(batch["align_weight"] == 0.0)

    def test_eval_pairs_balanced(self):
        episodes = [toy_episode(SeededRng(s), 30) for s in range(2)]
        pairs = alignment_eval_pairs(episodes, SeededRng(7))
        labels = pairs["align_labels"]
        assert len(labels) % 2 == 0
        assert labels.sum() == len(labels) / 2

    def test_too_short_episodes_rejected(self):
        episodes = [toy_episode(SeededRng(8), 5)]
        with pytest.raises(ValidationError):
            sample_windows(episodes, batch=2, tau=10, rng=SeededRng(9))


class TestConfig:
    def test_defaults_validate(self):
        ExperimentConfig().validate()

    def test_round_trip_exact(self, tmp_path):
        cfg = ExperimentConfig(seed=5, fusion="poe", d=48, model_lr=0.0005,
                               baseline_adjusted=True)
        path = tmp_path / "c.cfg"
        save_config(cfg, path)
        assert load_config(path) == cfg

    def test_comments_and_blank_lines(self):
        cfg = parse_config_text("# top comment\n\nseed = 9  # trailing\n\nd = 32\n")
        assert cfg.seed == 9 and cfg.d == 32

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config_text("mystery = 1\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("seed = banana\n")

    def test_invalid_fusion_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("fusion = mult\n")

    def test_architecture_constraints_enforced(self):
        with pytest.raises(ConfigError):
            parse_config_text("c = 4\n")
        with pytest.raises(ConfigError):
            parse_config_text("d = 50\nheads = 4\n")

    def test_bool_parsing(self):
        assert parse_config_text("baseline_adjusted = true\n").baseline_adjusted
        assert not parse_config_text("baseline_adjusted = FALSE\n").baseline_adjusted

    def test_text_contains_every_field(self):
        text = config_to_text(ExperimentConfig())
        for f in dataclasses.fields(ExperimentConfig):
            assert f"{f.name} = " in text
