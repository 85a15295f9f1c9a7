import filecmp
import os

import numpy as np
import pytest
import torch

from bilie.backbone import BiLie, ModelConfig
from bilie.cli import main as cli_main
from bilie.config import ConfigError, RunConfig
from bilie.harness import (InputError, Triplet, cosine_lr, enhance, evaluate,
                           load_checkpoint, make_synthetic, read_manifest,
                           save_checkpoint, train, write_manifest)
from bilie.imaging import load_image

MICRO = dict(channels=[4, 8, 8, 8, 8], heads=[1, 2, 2, 2, 2], blocks=[1, 1, 1, 1, 1])


def micro_config(**overrides):
    return RunConfig(model=ModelConfig(**MICRO), input_size=32, epochs=2,
                     lowlight_noise_std=0.0, **overrides).validate()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("data"))
    cfg = micro_config()
    manifest = make_synthetic(out, n_scenes=2, seed=3, cfg=cfg, n_test=1)
    return manifest, cfg


class TestMakeSynthetic:
    def test_deterministic_bytes(self, tmp_path):
        cfg = micro_config()
        m1 = make_synthetic(str(tmp_path / "a"), 2, 5, cfg)
        m2 = make_synthetic(str(tmp_path / "b"), 2, 5, cfg)
        files1 = sorted(os.listdir(tmp_path / "a"))
        assert files1 == sorted(os.listdir(tmp_path / "b"))
        for name in files1:
            assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name,
                               shallow=False), name

    def test_triplets_load_and_match(self, dataset):
        manifest, cfg = dataset
        triplets = read_manifest(manifest)
        assert len(triplets) == 3
        for t in triplets:
            low = load_image(t.lowlight)
            gt = load_image(t.gt)
            assert low.shape == gt.shape == (3, 32, 32)
            # dimming past one threshold guarantees events
            assert os.path.getsize(t.events) > 40

    def test_missing_file_rejected(self, tmp_path):
        path = str(tmp_path / "manifest.csv")
        write_manifest(path, [Triplet("nope.png", "nope.txt", "nope.png")])
        with pytest.raises(InputError, match="missing"):
            read_manifest(path)


class TestTrain:
    def test_identical_seeds_identical_logs(self, dataset, tmp_path):
        manifest, cfg = dataset
        train(cfg, manifest, str(tmp_path / "r1"))
        train(cfg, manifest, str(tmp_path / "r2"))
        assert filecmp.cmp(tmp_path / "r1" / "train_log.csv",
                           tmp_path / "r2" / "train_log.csv", shallow=False)

    def test_log_columns_and_steps(self, dataset, tmp_path):
        manifest, cfg = dataset
        train(cfg, manifest, str(tmp_path / "run"))
        lines = (tmp_path / "run" / "train_log.csv").read_text().splitlines()
        assert lines[0] == "step,epoch,lr,l1,ml,fft,color,total"
        assert len(lines) == 1 + cfg.epochs * 2  # 2 train scenes

    def test_max_steps_cutoff(self, dataset, tmp_path):
        manifest, cfg = dataset
        train(cfg, manifest, str(tmp_path / "short"), max_steps=1)
        lines = (tmp_path / "short" / "train_log.csv").read_text().splitlines()
        assert len(lines) == 2

    def test_cosine_lr_schedule(self):
        assert cosine_lr(1e-3, 0.1, 0, 100) == pytest.approx(1e-3)
        assert cosine_lr(1e-3, 0.1, 99, 100) == pytest.approx(1e-4)
        mid = cosine_lr(1e-3, 0.1, 50, 101)
        assert mid == pytest.approx(0.55e-3, rel=1e-6)


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path):
        torch.manual_seed(0)
        cfg = micro_config()
        model = BiLie(cfg.model)
        opt = torch.optim.Adam(model.parameters())
        path = str(tmp_path / "ckpt.pt")
        save_checkpoint(path, model, opt, epoch=7, cfg=cfg)
        loaded, loaded_cfg, state = load_checkpoint(path)
        assert state["epoch"] == 7
        assert loaded_cfg.model == cfg.model
        for (name, a), b in zip(model.state_dict().items(),
                                loaded.state_dict().values()):
            assert torch.equal(a, b), name

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        cfg = micro_config()
        model = BiLie(cfg.model)
        path = str(tmp_path / "ckpt.pt")
        save_checkpoint(path, model, None, 0, cfg)
        assert os.listdir(tmp_path) == ["ckpt.pt"]

    def test_missing_checkpoint_rejected(self, tmp_path):
        with pytest.raises(InputError):
            load_checkpoint(str(tmp_path / "absent.pt"))


class TestEvaluateEnhance:
    def _identity_checkpoint(self, tmp_path, cfg):
        torch.manual_seed(1)
        model = BiLie(cfg.model)  # zero-init heads: output == clamp(input)
        path = str(tmp_path / "identity.pt")
        save_checkpoint(path, model, None, 0, cfg)
        return path

    def test_identity_model_on_gt_inputs(self, dataset, tmp_path):
        manifest, cfg = dataset
        triplets = read_manifest(manifest)
        # manifest where the "lowlight" input is the ground truth itself
        gt_manifest = str(tmp_path / "gt_manifest.csv")
        write_manifest(gt_manifest, [Triplet(t.gt, t.events, t.gt, t.split)
                                     for t in triplets])
        ckpt = self._identity_checkpoint(tmp_path, cfg)
        report = evaluate(ckpt, gt_manifest, str(tmp_path / "eval"), split="test")
        rows = [l.split(",") for l in open(report).read().splitlines()[1:]]
        assert len(rows) == 2  # 1 test triplet + summary
        assert float(rows[-1][1]) == pytest.approx(100.0)
        assert float(rows[-1][2]) == pytest.approx(1.0)

    def test_enhance_matches_evaluate_bitwise(self, dataset, tmp_path):
        manifest, cfg = dataset
        t = [x for x in read_manifest(manifest) if x.split == "test"][0]
        ckpt = self._identity_checkpoint(tmp_path, cfg)
        evaluate(ckpt, manifest, str(tmp_path / "eval"), split="test")
        name = os.path.splitext(os.path.basename(t.lowlight))[0]
        out_png = str(tmp_path / "single.png")
        enhance(ckpt, t.lowlight, t.events, out_png)
        assert filecmp.cmp(out_png, tmp_path / "eval" / f"{name}_enhanced.png",
                           shallow=False)

    def test_repeated_evaluation_identical(self, dataset, tmp_path):
        manifest, cfg = dataset
        ckpt = self._identity_checkpoint(tmp_path, cfg)
        r1 = evaluate(ckpt, manifest, str(tmp_path / "e1"))
        r2 = evaluate(ckpt, manifest, str(tmp_path / "e2"))
        assert open(r1).read() == open(r2).read()

    def test_invalid_event_file_exit_code_2(self, dataset, tmp_path):
        manifest, cfg = dataset
        t = read_manifest(manifest)[0]
        ckpt = self._identity_checkpoint(tmp_path, cfg)
        bad = tmp_path / "bad_events.txt"
        bad.write_text("this is not an event file\n")
        code = cli_main(["enhance", "--checkpoint", ckpt, "--image", t.lowlight,
                         "--events", str(bad), "--out", str(tmp_path / "o.png")])
        assert code == 2


class TestConfig:
    def test_yaml_round_trip(self):
        cfg = micro_config(seed=9)
        again = RunConfig.from_yaml(cfg.to_yaml())
        assert again == cfg

    def test_head_divisibility_rejected(self):
        with pytest.raises(ConfigError, match="divisible"):
            RunConfig(model=ModelConfig(channels=[16, 32, 64, 128, 256])).validate()

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig.from_yaml("turbo: true")

    def test_cli_config_error_exit_code_1(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("input_size: 30\n")
        code = cli_main(["make-synthetic", "--config", str(bad),
                         "--out-dir", str(tmp_path / "d")])
        assert code == 1
