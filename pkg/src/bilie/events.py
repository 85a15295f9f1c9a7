"""Event stream handling: voxelization and synthetic event/low-light generation.

Events are signed brightness-change records (t, x, y, p) with p in {-1, +1}.
The network consumes them as a voxel grid: polarities are accumulated into
temporal bins with linear (bilinear-in-time) splitting between the two
nearest bin centers, so total signed mass is conserved exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

LOG_EPS = 1e-3  # guard against log(0) for black pixels


@dataclass(frozen=True)
class Event:
    t: float
    x: int
    y: int
    p: int


@dataclass
class EventStream:
    """Time-sorted events within a window [t_start, t_end] on a W x H sensor."""

    events: np.ndarray  # (N, 4) float64 columns t, x, y, p
    t_start: float
    t_end: float
    width: int
    height: int

    def __post_init__(self):
        self.events = np.asarray(self.events, dtype=np.float64).reshape(-1, 4)
        self.validate()

    def validate(self):
        if self.t_end < self.t_start:
            raise ValueError("t_end must be >= t_start")
        if len(self.events) == 0:
            return
        t, x, y, p = self.events.T
        if np.any(np.diff(t) < 0):
            raise ValueError("events must be sorted by timestamp")
        if t[0] < self.t_start or t[-1] > self.t_end:
            raise ValueError("event timestamps outside [t_start, t_end]")
        if np.any((x < 0) | (x >= self.width) | (y < 0) | (y >= self.height)):
            raise ValueError("event coordinates out of sensor bounds")
        if not np.all(np.abs(p) == 1):
            raise ValueError("polarity must be exactly +1 or -1")

    def __len__(self):
        return len(self.events)


@dataclass
class VoxelGrid:
    """Signed event tensor of shape (num_bins, H, W)."""

    data: np.ndarray

    @property
    def num_bins(self):
        return self.data.shape[0]


def voxelize(stream: EventStream, num_bins: int = 5) -> VoxelGrid:
    """Accumulate a stream into `num_bins` temporal bins.

    Each event's polarity is split linearly between the two bin centers
    adjacent to its normalized timestamp t* = (t - t0)/(t1 - t0) * (B - 1).
    An event exactly at a bin center deposits its full polarity there;
    t == t_end maps to t* = B - 1 exactly.
    """
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    if stream.t_end == stream.t_start:
        raise ValueError("empty time window: t_end == t_start")

    grid = np.zeros((num_bins, stream.height, stream.width), dtype=np.float64)
    if len(stream) == 0:
        return VoxelGrid(grid)

    t, x, y, p = stream.events.T
    xi = x.astype(np.int64)
    yi = y.astype(np.int64)

    ts = (t - stream.t_start) / (stream.t_end - stream.t_start) * (num_bins - 1)
    left = np.floor(ts).astype(np.int64)
    left = np.clip(left, 0, num_bins - 1)
    frac = ts - left
    right = np.minimum(left + 1, num_bins - 1)

    np.add.at(grid, (left, yi, xi), p * (1.0 - frac))
    np.add.at(grid, (right, yi, xi), p * frac)
    return VoxelGrid(grid)


def synth_events(img_a: np.ndarray, img_b: np.ndarray, contrast_threshold: float,
                 substeps: int = 1) -> EventStream:
    """Generate events from the log-intensity change between two frames.

    Log intensity log(L + eps) moves linearly in time from frame A (t=0) to
    frame B (t=1); one event is emitted per contrast-threshold crossing, at
    the crossing's interpolated time. Because the interpolation is linear,
    crossing times are exact for any substep count; `substeps` is validated
    for interface compatibility. Color inputs use the channel-mean intensity.
    """
    if contrast_threshold <= 0:
        raise ValueError("contrast_threshold must be > 0")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    img_a = np.asarray(img_a, dtype=np.float64)
    img_b = np.asarray(img_b, dtype=np.float64)
    if img_a.shape != img_b.shape:
        raise ValueError("frames must share a shape")

    la = img_a.mean(axis=0) if img_a.ndim == 3 else img_a
    lb = img_b.mean(axis=0) if img_b.ndim == 3 else img_b
    height, width = la.shape

    dlog = np.log(lb + LOG_EPS) - np.log(la + LOG_EPS)
    n = np.floor(np.abs(dlog) / contrast_threshold).astype(np.int64)

    total = int(n.sum())
    if total == 0:
        return EventStream(np.empty((0, 4)), 0.0, 1.0, width, height)

    flat_n = n.ravel()
    pix = np.repeat(np.arange(flat_n.size), flat_n)
    # crossing rank k = 1..n within each pixel
    k = np.arange(total) - np.repeat(np.cumsum(flat_n) - flat_n, flat_n) + 1

    ys, xs = np.unravel_index(pix, la.shape)
    mag = np.abs(dlog).ravel()[pix]
    times = k * contrast_threshold / mag
    pols = np.sign(dlog).ravel()[pix]

    order = np.argsort(times, kind="stable")
    ev = np.stack([times, xs.astype(np.float64), ys.astype(np.float64), pols], axis=1)
    return EventStream(ev[order], 0.0, 1.0, width, height)


def synth_lowlight(img_gt: np.ndarray, gain: float, gamma: float,
                   noise_std: float, seed: int) -> np.ndarray:
    """Degrade a ground-truth image: clip((gain*x)^gamma + noise, 0, 1)."""
    if not 0 < gain <= 1:
        raise ValueError("gain must be in (0, 1]")
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    img_gt = np.asarray(img_gt, dtype=np.float64)
    out = np.power(gain * img_gt, gamma)
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        out = out + rng.normal(0.0, noise_std, size=out.shape)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# File formats: ASCII event files and raw float32 voxel grids with a sidecar
# header, per the interchange contract.
# ---------------------------------------------------------------------------

def save_events(path: str, stream: EventStream):
    with open(path, "w") as f:
        f.write(f"{stream.width} {stream.height} "
                f"{float(stream.t_start)!r} {float(stream.t_end)!r}\n")
        for t, x, y, p in stream.events:
            f.write(f"{float(t)!r} {int(x)} {int(y)} {int(p):+d}\n")


def load_events(path: str) -> EventStream:
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 4:
            raise ValueError(f"bad event file header in {path}")
        width, height = int(header[0]), int(header[1])
        t_start, t_end = float(header[2]), float(header[3])
        rows = []
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ValueError(f"bad event record in {path}: {line!r}")
            rows.append([float(parts[0]), int(parts[1]), int(parts[2]), int(parts[3])])
    ev = np.array(rows, dtype=np.float64).reshape(-1, 4)
    return EventStream(ev, t_start, t_end, width, height)


def save_voxel(path: str, grid: VoxelGrid):
    """Raw little-endian float32, bin-major, with a `.hdr` shape sidecar."""
    data = np.ascontiguousarray(grid.data, dtype="<f4")
    data.tofile(path)
    with open(path + ".hdr", "w") as f:
        b, h, w = grid.data.shape
        f.write(f"bins {b}\nheight {h}\nwidth {w}\n")


def load_voxel(path: str) -> VoxelGrid:
    shape = {}
    with open(path + ".hdr") as f:
        for line in f:
            key, val = line.split()
            shape[key] = int(val)
    data = np.fromfile(path, dtype="<f4")
    return VoxelGrid(data.reshape(shape["bins"], shape["height"], shape["width"]).astype(np.float64))
