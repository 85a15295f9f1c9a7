"""Image I/O, green-referenced gray-world white balance, PSNR and SSIM."""

from __future__ import annotations

import numpy as np
from PIL import Image
from scipy.signal import convolve2d

PSNR_CAP_DB = 100.0


def load_image(path: str) -> np.ndarray:
    """Load a PNG/JPEG as a (3, H, W) float64 array in [0, 1], RGB order."""
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return np.clip(img.transpose(2, 0, 1), 0.0, 1.0)


def save_image(path: str, img: np.ndarray):
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError("expected a (3, H, W) image")
    data = np.round(arr.transpose(1, 2, 0) * 255.0).astype(np.uint8)
    Image.fromarray(data).save(path)


def white_balance_grayworld_green(img: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Scale R and B so their means match the green channel's mean.

    R' = R * mean(G)/mean(R), B' = B * mean(G)/mean(B), G unchanged.
    Pre-clamp channel means are equal by construction; set clamp=False to
    inspect that (the idempotence property also holds pre-clamp).
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError("expected a (3, H, W) image")
    r, g, b = img
    mean_r, mean_g, mean_b = r.mean(), g.mean(), b.mean()
    if mean_r <= 0 or mean_b <= 0:
        raise ValueError(
            f"white balance undefined: mean(R)={mean_r:.3g}, mean(B)={mean_b:.3g}")
    out = np.stack([r * (mean_g / mean_r), g, b * (mean_g / mean_b)])
    return np.clip(out, 0.0, 1.0) if clamp else out


def psnr(pred: np.ndarray, target: np.ndarray) -> float:
    """PSNR in dB with peak 1.0; identical images report the 100 dB cap."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError("psnr inputs must share a shape")
    mse = np.mean((pred - target) ** 2)
    if mse == 0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean local SSIM on the channel-mean luminance image.

    11x11 Gaussian window (sigma 1.5), standard stabilizing constants for
    peak 1.0, valid-region averaging.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError("ssim inputs must share a shape")
    x = pred.mean(axis=0) if pred.ndim == 3 else pred
    y = target.mean(axis=0) if target.ndim == 3 else target

    win = _gaussian_window()
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2

    mu_x = convolve2d(x, win, mode="valid")
    mu_y = convolve2d(y, win, mode="valid")
    xx = convolve2d(x * x, win, mode="valid") - mu_x ** 2
    yy = convolve2d(y * y, win, mode="valid") - mu_y ** 2
    xy = convolve2d(x * y, win, mode="valid") - mu_x * mu_y

    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))
