"""Seeded synthetic imagery: texture corpora and moving-feature videos.

Everything here is generated procedurally, so tests and demos have
freely usable data with exact ground truth.
"""

import math

import numpy as np

from . import image as img_mod


def _bilinear_upsample(grid, width, height):
    gh, gw = grid.shape[:2]
    ys = np.linspace(0.0, gh - 1.0, height)
    xs = np.linspace(0.0, gw - 1.0, width)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = grid[y0][:, x0] * (1 - fx) + grid[y0][:, x1] * fx
    bottom = grid[y1][:, x0] * (1 - fx) + grid[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def texture_image(rng, width=96, height=96, n_blobs=12):
    """Colorful multi-scale texture as float RGB in [0, 1]."""
    img = np.zeros((height, width, 3))
    weight = 0.5
    for cells in (3, 6, 12, 24):
        cells_y = max(2, min(cells, height // 2))
        cells_x = max(2, min(cells, width // 2))
        coarse = rng.uniform(0.0, 1.0, size=(cells_y, cells_x, 3))
        img += weight * _bilinear_upsample(coarse, width, height)
        weight *= 0.5
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    for _ in range(n_blobs):
        cx = rng.uniform(0, width)
        cy = rng.uniform(0, height)
        radius = rng.uniform(1.5, 6.0)
        color = rng.uniform(0.0, 1.0, size=3)
        g = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * radius**2))
        img = img * (1.0 - 0.85 * g[..., None]) + 0.85 * g[..., None] * color
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo) if hi > lo else img


def texture_image_u8(rng, width=96, height=96, n_blobs=12):
    return np.clip(np.rint(texture_image(rng, width, height, n_blobs) * 255.0), 0, 255).astype(
        np.uint8
    )


def make_texture_corpus(directory, n_images=50, width=96, height=96, seed=0):
    """Write a seeded corpus of texture PNGs; returns the file paths."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n_images):
        path = directory / f"texture_{i:04d}.png"
        img_mod.save_rgb(path, texture_image_u8(rng, width, height))
        paths.append(path)
    return paths


class _PatchModel:
    """Analytic colored feature: Gaussian bumps under a smooth alpha disk.

    Being a closed-form function of continuous coordinates, the patch
    renders exactly at any subpixel position.
    """

    def __init__(self, rng, radius=7.0, n_bumps=5):
        self.radius = radius
        self.bumps = []
        # bright, tight center spot makes the feature well localized
        self.bumps.append((0.0, 0.0, 1.3, np.array([0.95, 0.9, 0.2])))
        for _ in range(n_bumps):
            dx, dy = rng.uniform(-radius * 0.6, radius * 0.6, size=2)
            r = rng.uniform(1.0, 2.5)
            color = rng.uniform(0.0, 1.0, size=3)
            self.bumps.append((dx, dy, r, color))

    def render(self, frame, cx, cy):
        height, width = frame.shape[:2]
        pad = int(math.ceil(self.radius + 3))
        x_lo = max(0, int(math.floor(cx)) - pad)
        x_hi = min(width, int(math.ceil(cx)) + pad + 1)
        y_lo = max(0, int(math.floor(cy)) - pad)
        y_hi = min(height, int(math.ceil(cy)) + pad + 1)
        yy, xx = np.mgrid[y_lo:y_hi, x_lo:x_hi].astype(np.float64)
        dx, dy = xx - cx, yy - cy
        r2 = dx**2 + dy**2
        alpha = np.exp(-((r2 / self.radius**2) ** 2))
        color = np.zeros(r2.shape + (3,))
        total = np.zeros_like(r2)
        for bx, by, br, bc in self.bumps:
            g = np.exp(-((dx - bx) ** 2 + (dy - by) ** 2) / (2.0 * br**2))
            color += g[..., None] * bc
            total += g
        color /= np.maximum(total, 1e-9)[..., None]
        region = frame[y_lo:y_hi, x_lo:x_hi]
        frame[y_lo:y_hi, x_lo:x_hi] = (1 - alpha[..., None]) * region + alpha[..., None] * color


def moving_patch_sequence(
    n_frames=60,
    width=120,
    height=90,
    seed=0,
    amplitude=(8.0, 5.0),
    periods=(23.0, 17.0),
    illumination=0.02,
):
    """A textured feature gliding over a background on a known path.

    The feature center follows x = x0 + ax sin(2 pi t / Tx) and the
    analogous y curve, so frame 0 has it exactly on the integer pixel
    (x0, y0).  A slow multiplicative illumination drift is applied
    before 8-bit quantization.  Returns (frames, ground_truth) with
    frames as uint8 RGB arrays and ground_truth mapping frame index ->
    exact (x, y).
    """
    rng = np.random.default_rng(seed)
    background = 0.25 + 0.5 * texture_image(rng, width, height)
    patch = _PatchModel(rng)
    x0, y0 = width // 2, height // 2
    frames, ground_truth = [], {}
    for t in range(n_frames):
        cx = x0 + amplitude[0] * math.sin(2.0 * math.pi * t / periods[0])
        cy = y0 + amplitude[1] * math.sin(2.0 * math.pi * t / periods[1])
        frame = background.copy()
        patch.render(frame, cx, cy)
        gain = 1.0 + illumination * math.sin(2.0 * math.pi * t / n_frames)
        frames.append(np.clip(np.rint(frame * gain * 255.0), 0, 255).astype(np.uint8))
        ground_truth[t] = (cx, cy)
    return frames, ground_truth


def write_frame_dir(directory, frames):
    """Store frames as zero-padded PNGs: frame_000001.png, ..."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames, start=1):
        path = directory / f"frame_{i:06d}.png"
        img_mod.save_rgb(path, frame)
        paths.append(path)
    return paths
