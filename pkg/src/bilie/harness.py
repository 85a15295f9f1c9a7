"""Dataset synthesis, deterministic training loop, evaluation, enhancement,
and ablation grids.

Everything is seeded and single-threaded so that two runs with the same
config and data produce byte-identical loss logs and checkpoints.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
import torch

from . import events as ev
from .backbone import BiLie
from .config import ConfigError, RunConfig
from .imaging import load_image, psnr, save_image, ssim
from .losses import PerceptualExtractor, total_loss


class InputError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


@dataclass
class Triplet:
    lowlight: str
    events: str
    gt: str
    split: str = "train"


def write_manifest(path: str, triplets: list):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["lowlight", "events", "gt", "split"])
        for t in triplets:
            writer.writerow([t.lowlight, t.events, t.gt, t.split])


def read_manifest(path: str) -> list:
    if not os.path.exists(path):
        raise InputError(f"manifest not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            t = Triplet(**row)
            for attr in ("lowlight", "events", "gt"):
                p = getattr(t, attr)
                if not os.path.isabs(p):
                    setattr(t, attr, os.path.join(base, p))
                if not os.path.exists(getattr(t, attr)):
                    raise InputError(f"missing file in manifest: {p}")
            out.append(t)
    return out


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def _procedural_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """A random scene: smooth gradient + rectangles + circles + texture."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    img = np.zeros((3, size, size))
    for c in range(3):
        gx, gy = rng.uniform(-0.5, 0.5, 2)
        img[c] = 0.5 + gx * (xx - 0.5) + gy * (yy - 0.5)
    for _ in range(rng.integers(3, 6)):
        x0, y0 = rng.uniform(0, 0.8, 2)
        w, h = rng.uniform(0.1, 0.4, 2)
        color = rng.uniform(0.1, 0.9, 3)
        box = (xx >= x0) & (xx < x0 + w) & (yy >= y0) & (yy < y0 + h)
        img[:, box] = color[:, None]
    for _ in range(rng.integers(2, 5)):
        cx, cy = rng.uniform(0.1, 0.9, 2)
        r = rng.uniform(0.05, 0.25)
        color = rng.uniform(0.1, 0.9, 3)
        disk = (xx - cx) ** 2 + (yy - cy) ** 2 < r ** 2
        img[:, disk] = color[:, None]
    freq = rng.uniform(4, 12)
    phase = rng.uniform(0, 2 * np.pi)
    img += 0.05 * np.sin(2 * np.pi * freq * xx + phase)
    return np.clip(img, 0.05, 0.95)


def make_synthetic(out_dir: str, n_scenes: int, seed: int, cfg: RunConfig,
                   n_test: int = 0) -> str:
    """Generate scenes (gt, degraded lowlight, events) and a manifest.

    Events come from the brightness ramp between the ground truth and a
    globally dimmed variant, mimicking an illumination change. Returns the
    manifest path.
    """
    os.makedirs(out_dir, exist_ok=True)
    triplets = []
    for i in range(n_scenes + n_test):
        rng = np.random.default_rng(seed * 100003 + i)
        gt = _procedural_image(rng, cfg.input_size)
        low = ev.synth_lowlight(gt, cfg.lowlight_gain, cfg.lowlight_gamma,
                                cfg.lowlight_noise_std, seed=int(rng.integers(2 ** 31)))
        dim = float(rng.uniform(0.4, 0.7))
        stream = ev.synth_events(gt, np.clip(gt * dim, 0, 1), cfg.contrast_threshold)

        gt_path = os.path.join(out_dir, f"scene_{i:03d}_gt.png")
        low_path = os.path.join(out_dir, f"scene_{i:03d}_low.png")
        ev_path = os.path.join(out_dir, f"scene_{i:03d}_events.txt")
        save_image(gt_path, gt)
        save_image(low_path, low)
        ev.save_events(ev_path, stream)
        split = "train" if i < n_scenes else "test"
        triplets.append(Triplet(os.path.basename(low_path), os.path.basename(ev_path),
                                os.path.basename(gt_path), split))
    manifest_path = os.path.join(out_dir, "manifest.csv")
    write_manifest(manifest_path, triplets)
    return manifest_path


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: str, model, optimizer, epoch: int, cfg: RunConfig):
    tmp = path + ".tmp"
    torch.save({
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "config": cfg.to_yaml(),
        "torch_rng": torch.get_rng_state(),
    }, tmp)
    os.replace(tmp, path)


def load_checkpoint(path: str):
    if not os.path.exists(path):
        raise InputError(f"checkpoint not found: {path}")
    state = torch.load(path, map_location="cpu", weights_only=False)
    cfg = RunConfig.from_yaml(state["config"])
    model = BiLie(cfg.model)
    model.load_state_dict(state["model"])
    return model, cfg, state


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _load_triplet(t: Triplet, cfg: RunConfig, dtype=torch.float32):
    low = load_image(t.lowlight)
    gt = load_image(t.gt)
    stream = ev.load_events(t.events)
    if (low.shape != gt.shape or stream.height != low.shape[1]
            or stream.width != low.shape[2]):
        raise InputError(f"resolution mismatch in triplet {t.lowlight}")
    voxel = ev.voxelize(stream, cfg.num_bins)
    to = lambda a: torch.as_tensor(a, dtype=dtype).unsqueeze(0)
    return to(low), to(voxel.data), to(gt)


def cosine_lr(base_lr: float, final_frac: float, epoch: int, epochs: int) -> float:
    lr_min = base_lr * final_frac
    if epochs <= 1:
        return base_lr
    t = epoch / (epochs - 1)
    return lr_min + 0.5 * (base_lr - lr_min) * (1.0 + math.cos(math.pi * t))


def train(cfg: RunConfig, manifest_path: str, out_dir: str,
          max_steps: int | None = None, log_name: str = "train_log.csv") -> str:
    """Run the training loop; returns the final checkpoint path."""
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    torch.manual_seed(cfg.seed)
    torch.set_num_threads(max(1, torch.get_num_threads()))

    triplets = [t for t in read_manifest(manifest_path) if t.split == "train"]
    if not triplets:
        raise InputError("manifest has no training triplets")
    data = [_load_triplet(t, cfg) for t in triplets]

    model = BiLie(cfg.model)
    extractor = PerceptualExtractor(seed=cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr,
                                 betas=(cfg.beta1, cfg.beta2))
    ckpt_path = os.path.join(out_dir, "checkpoint.pt")
    log_path = os.path.join(out_dir, log_name)

    step = 0
    with open(log_path, "w", newline="") as log:
        writer = csv.writer(log)
        writer.writerow(["step", "epoch", "lr", "l1", "ml", "fft", "color", "total"])
        for epoch in range(cfg.epochs):
            lr = cosine_lr(cfg.lr, cfg.lr_final_frac, epoch, cfg.epochs)
            for group in optimizer.param_groups:
                group["lr"] = lr
            for low, voxel, gt in data:
                optimizer.zero_grad()
                _, preds = model(low, voxel)
                loss, terms = total_loss(preds, gt, low, extractor, cfg.loss)
                if not torch.isfinite(loss):
                    raise NumericalError(
                        f"non-finite loss at step {step} (epoch {epoch})")
                loss.backward()
                optimizer.step()
                writer.writerow([step, epoch, repr(lr)]
                                + [repr(terms[k].item()) for k in ("l1", "ml", "fft", "color")]
                                + [repr(loss.item())])
                step += 1
                if max_steps is not None and step >= max_steps:
                    save_checkpoint(ckpt_path, model, optimizer, epoch, cfg)
                    return ckpt_path
            save_checkpoint(ckpt_path, model, optimizer, epoch, cfg)
    return ckpt_path


# ---------------------------------------------------------------------------
# Evaluation / enhancement
# ---------------------------------------------------------------------------

def _forward_numpy(model, cfg, low_np, voxel_np):
    model.eval()
    with torch.no_grad():
        low = torch.as_tensor(low_np, dtype=torch.float32).unsqueeze(0)
        voxel = torch.as_tensor(voxel_np, dtype=torch.float32).unsqueeze(0)
        out, _ = model(low, voxel)
    return out.squeeze(0).numpy().astype(np.float64)


def evaluate(checkpoint_path: str, manifest_path: str, out_dir: str,
             split: str = "test") -> str:
    """Enhance every triplet in `split`, write PNGs and a metrics CSV."""
    model, cfg, _ = load_checkpoint(checkpoint_path)
    os.makedirs(out_dir, exist_ok=True)
    triplets = [t for t in read_manifest(manifest_path) if t.split == split]
    report_path = os.path.join(out_dir, "metrics.csv")
    rows = []
    for t in triplets:
        name = os.path.splitext(os.path.basename(t.lowlight))[0]
        try:
            low = load_image(t.lowlight)
            gt = load_image(t.gt)
            stream = ev.load_events(t.events)
            if stream.height != low.shape[1] or stream.width != low.shape[2]:
                raise InputError(f"resolution mismatch for {name}")
            voxel = ev.voxelize(stream, cfg.num_bins)
            out = _forward_numpy(model, cfg, low, voxel.data)
            save_image(os.path.join(out_dir, name + "_enhanced.png"), out)
            rows.append((name, float(psnr(out, gt)), float(ssim(out, gt))))
        except InputError as exc:
            rows.append((name, float("nan"), float("nan")))
            print(f"skipping {name}: {exc}")
    with open(report_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["name", "psnr_db", "ssim"])
        for name, p, s in rows:
            writer.writerow([name, repr(p), repr(s)])
        valid = [(p, s) for _, p, s in rows if not math.isnan(p)]
        if valid:
            writer.writerow(["mean",
                             repr(sum(p for p, _ in valid) / len(valid)),
                             repr(sum(s for _, s in valid) / len(valid))])
    return report_path


def enhance(checkpoint_path: str, lowlight_png: str, event_file: str,
            out_png: str):
    """Single-image inference, identical to the evaluate forward path."""
    model, cfg, _ = load_checkpoint(checkpoint_path)
    if not os.path.exists(lowlight_png):
        raise InputError(f"missing image: {lowlight_png}")
    if not os.path.exists(event_file):
        raise InputError(f"missing event file: {event_file}")
    low = load_image(lowlight_png)
    try:
        stream = ev.load_events(event_file)
    except ValueError as exc:
        raise InputError(f"invalid event file: {exc}") from exc
    if stream.height != low.shape[1] or stream.width != low.shape[2]:
        raise InputError("event file resolution does not match the image")
    voxel = ev.voxelize(stream, cfg.num_bins)
    out = _forward_numpy(model, cfg, low, voxel.data)
    save_image(out_png, out)


# ---------------------------------------------------------------------------
# Ablation grids
# ---------------------------------------------------------------------------

ABLATION_AXES = ("dafe", "bgaf_mode", "loss_terms", "sigma1")


def _variants(cfg: RunConfig, axis: str):
    import copy

    def tweak(label, **kv):
        c = copy.deepcopy(cfg)
        for key, val in kv.items():
            obj = c
            parts = key.split(".")
            for part in parts[:-1]:
                obj = getattr(obj, part)
            setattr(obj, parts[-1], val)
        return label, c

    if axis == "dafe":
        return [
            tweak("concat_baseline", **{"model.dafe_enabled": False,
                                        "model.bgaf_mode": "concat_only"}),
            tweak("dafe_only", **{"model.dafe_enabled": True,
                                  "model.bgaf_mode": "concat_only"}),
            tweak("bgaf_only", **{"model.dafe_enabled": False,
                                  "model.bgaf_mode": "sequential"}),
            tweak("full", **{"model.dafe_enabled": True,
                             "model.bgaf_mode": "sequential"}),
        ]
    if axis == "bgaf_mode":
        return [tweak(m, **{"model.bgaf_mode": m})
                for m in ("img2evt", "evt2img", "parallel", "sequential")]
    if axis == "sigma1":
        rows = [tweak(f"sigma1_{s}", **{"model.dafe_sigma1": float(s)})
                for s in (10, 12, 14, 16)]
        rows += [tweak(f"fusion_{m}", **{"model.dafe_fusion": m})
                 for m in ("fixed", "concat", "add", "dynamic")]
        return rows
    if axis == "loss_terms":
        return [
            tweak("all_terms"),
            tweak("no_l1", **{"loss.a": 0.0}),
            tweak("no_ml", **{"loss.b": 0.0}),
            tweak("no_fft", **{"loss.c": 0.0}),
            tweak("no_color", **{"loss.d": 0.0}),
        ]
    raise ConfigError(f"unknown ablation axis {axis!r}")


def ablate(cfg: RunConfig, manifest_path: str, out_dir: str, axis: str,
           max_steps: int | None = None) -> str:
    """Train and evaluate one config per grid point; emit a comparison CSV."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for label, variant in _variants(cfg, axis):
        run_dir = os.path.join(out_dir, label)
        ckpt = train(variant, manifest_path, run_dir, max_steps=max_steps)
        report = evaluate(ckpt, manifest_path, run_dir, split="train")
        with open(report, newline="") as f:
            stats = {row["name"]: row for row in csv.DictReader(f)}
        mean = stats.get("mean")
        rows.append((label, mean["psnr_db"] if mean else "nan",
                     mean["ssim"] if mean else "nan"))
    table_path = os.path.join(out_dir, f"ablation_{axis}.csv")
    with open(table_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["variant", "train_psnr_db", "train_ssim"])
        writer.writerows(rows)
    return table_path
