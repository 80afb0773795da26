"""Synthetic moving-shape clips for training and evaluation.

Eight classes: {square, disk} x {left, right, up, down}, encoded as
``label = shape_index * 4 + direction_index``.  Each clip is a single bright
shape translating at constant speed over a static, smoothly textured
background, plus per-frame additive Gaussian noise.  Everything is
deterministic given (seed, split, count).
"""

import csv
import os
from dataclasses import dataclass

import numpy as np

from .video import VideoClip, read_y4m, write_y4m

SHAPES = ("square", "disk")
DIRECTIONS = ("left", "right", "up", "down")
NUM_CLASSES = len(SHAPES) * len(DIRECTIONS)

# unit motion per frame as (dx, dy); y grows downward
_DIR_VECTORS = {"left": (-1, 0), "right": (1, 0), "up": (0, -1), "down": (0, 1)}

_SPLIT_CODES = {"train": 0, "val": 1, "test": 2}


@dataclass(frozen=True)
class LabeledClip:
    clip: VideoClip
    label: int


def class_name(label):
    return f"{SHAPES[label // 4]}_{DIRECTIONS[label % 4]}"


def _smooth_background(rng, size):
    """Static background: mid-grey base plus a coarse bilinear texture."""
    base = rng.uniform(0.35, 0.55)
    amp = rng.uniform(0.04, 0.12)
    coarse = rng.uniform(-1.0, 1.0, size=(8, 8)) * amp
    # bilinear upsample of the coarse grid to size x size
    src = np.linspace(0.0, 7.0, size)
    i0 = np.clip(src.astype(np.int64), 0, 6)
    frac = src - i0
    rows = coarse[i0, :] * (1.0 - frac)[:, None] + coarse[i0 + 1, :] * frac[:, None]
    field = rows[:, i0] * (1.0 - frac)[None, :] + rows[:, i0 + 1] * frac[None, :]
    return np.clip(base + field, 0.05, 0.95)


def make_clip(label, rng, num_frames=8, size=64, noise_sigma=0.02):
    """Render one labelled clip as a luma VideoClip."""
    if not 0 <= label < NUM_CLASSES:
        raise ValueError(f"label must be in [0, {NUM_CLASSES}), got {label}")
    shape = SHAPES[label // 4]
    dx, dy = _DIR_VECTORS[DIRECTIONS[label % 4]]

    side = int(rng.integers(10, 19))
    speed = int(rng.integers(1, 4))
    travel = speed * (num_frames - 1)
    margin = 2.0
    half = side / 2.0

    def start_range(step):
        lo = margin + half
        hi = size - margin - half
        if step > 0:
            hi -= travel
        elif step < 0:
            lo += travel
        return lo, hi

    x_lo, x_hi = start_range(dx)
    y_lo, y_hi = start_range(dy)
    cx0 = rng.uniform(x_lo, x_hi)
    cy0 = rng.uniform(y_lo, y_hi)

    background = _smooth_background(rng, size)
    obj_value = rng.uniform(0.72, 0.95)

    yy, xx = np.mgrid[0:size, 0:size]
    frames = np.empty((num_frames, size, size), dtype=np.float32)
    for t in range(num_frames):
        cx = cx0 + dx * speed * t
        cy = cy0 + dy * speed * t
        if shape == "square":
            mask = (np.abs(xx - cx) <= half) & (np.abs(yy - cy) <= half)
        else:
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= half * half
        frame = background.copy()
        frame[mask] = obj_value
        if noise_sigma > 0.0:
            frame = frame + rng.normal(0.0, noise_sigma, size=frame.shape)
        frames[t] = np.clip(frame, 0.0, 1.0)
    return VideoClip.from_luma(frames)


def synth_dataset(seed, count, split="train", num_frames=8, size=64, noise_sigma=0.02):
    """Deterministic class-balanced dataset: labels cycle 0..7, 0..7, ..."""
    if split not in _SPLIT_CODES:
        raise ValueError(f"split must be one of {sorted(_SPLIT_CODES)}, got {split!r}")
    out = []
    for i in range(count):
        # per-clip stream: clip i is the same no matter the count or the
        # noise setting of its neighbours
        rng = np.random.default_rng(
            np.random.SeedSequence((int(seed), _SPLIT_CODES[split], i))
        )
        label = i % NUM_CLASSES
        out.append(
            LabeledClip(make_clip(label, rng, num_frames, size, noise_sigma), label)
        )
    return out


def standard_clip(seed=0):
    """The fixed reference clip used by diagnostics: first test-split clip."""
    return synth_dataset(seed, 1, split="test")[0].clip


def write_dataset(labeled, out_dir, manifest_name="manifest.csv"):
    """Write clips as Y4M plus a ``clip_path,label`` manifest; returns its path."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = os.path.join(out_dir, manifest_name)
    with open(manifest, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["clip_path", "label"])
        for i, item in enumerate(labeled):
            name = f"clip_{i:05d}.y4m"
            write_y4m(item.clip, os.path.join(out_dir, name))
            writer.writerow([name, item.label])
    return manifest


def load_dataset(manifest_path):
    """Read a manifest written by write_dataset; paths resolve next to it."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    out = []
    with open(manifest_path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["clip_path", "label"]:
            raise ValueError(f"{manifest_path}: expected header clip_path,label")
        for row in reader:
            if len(row) != 2:
                raise ValueError(f"{manifest_path}: malformed row {row!r}")
            clip = read_y4m(os.path.join(base, row[0]))
            out.append(LabeledClip(clip, int(row[1])))
    if not out:
        raise ValueError(f"{manifest_path}: empty dataset")
    return out
