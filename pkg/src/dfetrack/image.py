"""Image handling between raw video frames and encoder inputs.

Conventions used throughout the package:

* RGB images are ``uint8`` arrays of shape ``(height, width, 3)``.
* CIELAB images are ``float64`` arrays of the same shape with L in
  [0, 100] and a, b roughly in [-128, 128].
* Points are ``(x, y)`` pairs, ``x`` being the column index.
* A crop window is an ``(wx, wy)`` pair of odd integers; the default
  window is 31x31.
"""

import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ImageTooSmall, OutOfBounds, UpscaleRequested

DEFAULT_WINDOW = (31, 31)

# sRGB (BT.709 primaries) to XYZ; the D65 white point is taken as the
# matrix row sums so that (255,255,255) maps exactly to L*=100, a*=b*=0.
_RGB_TO_XYZ = np.array(
    [
        [0.41239079926595934, 0.357584339383878, 0.1804807884018343],
        [0.21263900587151027, 0.715168678767756, 0.07219231536073371],
        [0.01933081871559182, 0.11919477979462598, 0.9505321522496607],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_WHITE = _RGB_TO_XYZ.sum(axis=1)

_DELTA = 6.0 / 29.0


def srgb_to_linear(c):
    """Undo the sRGB transfer function; input and output in [0, 1]."""
    c = np.asarray(c, dtype=np.float64)
    return np.where(c > 0.04045, ((c + 0.055) / 1.055) ** 2.4, c / 12.92)


def linear_to_srgb(c):
    c = np.asarray(c, dtype=np.float64)
    return np.where(c > 0.0031308, 1.055 * np.clip(c, 0, None) ** (1 / 2.4) - 0.055, 12.92 * c)


def rgb_to_cielab(img):
    """Convert an 8-bit sRGB image to CIELAB (D65).

    Accepts any ``(..., 3)`` array of integer levels in [0, 255] and
    returns float64 Lab values in the native scale (L in [0, 100]).
    """
    rgb = np.asarray(img, dtype=np.float64) / 255.0
    xyz = srgb_to_linear(rgb) @ _RGB_TO_XYZ.T
    t = xyz / _WHITE
    f = np.where(t > _DELTA**3, np.cbrt(t), t / (3 * _DELTA**2) + 4.0 / 29.0)
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * fy - 16.0
    lab[..., 1] = 500.0 * (fx - fy)
    lab[..., 2] = 200.0 * (fy - fz)
    return lab


def cielab_to_rgb(lab):
    """Inverse of :func:`rgb_to_cielab`, back to uint8 sRGB levels."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    f = np.stack([fx, fy, fz], axis=-1)
    t = np.where(f > _DELTA, f**3, 3 * _DELTA**2 * (f - 4.0 / 29.0))
    rgb = linear_to_srgb(t * _WHITE @ _XYZ_TO_RGB.T)
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)


def normalize_lab(lab):
    """Scale native Lab channels into [0, 1] for network consumption.

    L/100, (a+128)/256, (b+128)/256; invertible via
    :func:`denormalize_lab`.
    """
    lab = np.asarray(lab, dtype=np.float64)
    out = np.empty_like(lab)
    out[..., 0] = lab[..., 0] / 100.0
    out[..., 1] = (lab[..., 1] + 128.0) / 256.0
    out[..., 2] = (lab[..., 2] + 128.0) / 256.0
    return out


def denormalize_lab(norm):
    norm = np.asarray(norm, dtype=np.float64)
    out = np.empty_like(norm)
    out[..., 0] = norm[..., 0] * 100.0
    out[..., 1] = norm[..., 1] * 256.0 - 128.0
    out[..., 2] = norm[..., 2] * 256.0 - 128.0
    return out


def rgb_to_net(img):
    """RGB uint8 image -> normalized CIELAB float64, the encoder input."""
    return normalize_lab(rgb_to_cielab(img))


def _area_weights(src: int, dst: int) -> np.ndarray:
    # dst x src matrix of box-overlap weights, rows summing to 1
    scale = src / dst
    w = np.zeros((dst, src))
    for t in range(dst):
        lo, hi = t * scale, (t + 1) * scale
        s0, s1 = int(np.floor(lo)), min(int(np.ceil(hi)), src)
        for s in range(s0, s1):
            w[t, s] = min(hi, s + 1) - max(lo, s)
    return w / w.sum(axis=1, keepdims=True)


def resize_inter_area(img, target_w: int, target_h: int):
    """Downscale an RGB image by exact area-weighted box averaging.

    Each target pixel is the average of the source area it covers.
    Only downscaling (or identity) is supported; upscaling raises
    :class:`UpscaleRequested`.
    """
    img = np.asarray(img)
    h, w = img.shape[:2]
    if target_w < 1 or target_h < 1:
        raise ValueError("target dimensions must be positive")
    if target_w > w or target_h > h:
        raise UpscaleRequested(f"cannot area-resize {w}x{h} up to {target_w}x{target_h}")
    if (target_w, target_h) == (w, h):
        return img.copy()
    wv = _area_weights(h, target_h)
    wh = _area_weights(w, target_w)
    data = img.astype(np.float64)
    out = np.einsum("ij,jkc->ikc", wv, data)
    out = np.einsum("ikc,lk->ilc", out, wh)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def check_window(window):
    wx, wy = int(window[0]), int(window[1])
    if wx < 3 or wy < 3 or wx % 2 == 0 or wy % 2 == 0:
        raise ValueError(f"crop window must be odd and >= 3, got {(wx, wy)}")
    return wx, wy


def half_window(window):
    wx, wy = check_window(window)
    return wx // 2, wy // 2


def valid_center_range(shape, window):
    """Inclusive (x, y) center bounds for which the window fits inside.

    ``shape`` is the image array shape ``(H, W, ...)``.  Returns
    ``(x_min, x_max, y_min, y_max)``; empty ranges mean the image is
    smaller than the window.
    """
    hx, hy = half_window(window)
    h, w = shape[0], shape[1]
    return hx, w - 1 - hx, hy, h - 1 - hy


def is_valid_center(shape, x: int, y: int, window) -> bool:
    x_min, x_max, y_min, y_max = valid_center_range(shape, window)
    return x_min <= x <= x_max and y_min <= y <= y_max


def extract_crop(img, x: int, y: int, window=DEFAULT_WINDOW):
    """Cut the window centered on (x, y); inclusive on both ends.

    A (31, 31) window centered at x covers columns x-15 .. x+15.
    Raises :class:`OutOfBounds` when the window overhangs the image;
    callers treat such positions as invalid map entries.
    """
    img = np.asarray(img)
    hx, hy = half_window(window)
    if not is_valid_center(img.shape, x, y, window):
        raise OutOfBounds(
            f"window {window} at ({x},{y}) overhangs a {img.shape[1]}x{img.shape[0]} image"
        )
    return img[y - hy : y + hy + 1, x - hx : x + hx + 1].copy()


# ---------------------------------------------------------------------------
# file I/O


def load_rgb(path):
    """Read a PNG or PPM file as an (H, W, 3) uint8 array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_rgb(path, img):
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected (H, W, 3) uint8 image")
    Image.fromarray(img, mode="RGB").save(path)


def load_net_image(path):
    """Read a frame file straight into normalized CIELAB."""
    return rgb_to_net(load_rgb(path))


_FRAME_SUFFIXES = {".png", ".ppm"}


def list_frames(directory):
    """Sorted frame files (PNG/PPM) in a directory.

    Zero-padded numbering (frame_000001.png, ...) sorts correctly by
    name; ties and mixed schemes fall back to plain lexicographic order.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    frames = sorted(
        p for p in directory.iterdir() if p.suffix.lower() in _FRAME_SUFFIXES and p.is_file()
    )
    return frames


def subsample_frames(paths, keep_every: int):
    """Temporal subsampling: keep the first of every ``keep_every`` frames."""
    if keep_every < 1:
        raise ValueError("keep_every must be >= 1")
    return list(paths)[::keep_every]


def frame_number(path) -> int:
    """Trailing integer in a frame filename, or -1 if there is none."""
    m = re.search(r"(\d+)\D*$", Path(path).stem)
    return int(m.group(1)) if m else -1


def require_min_size(img, window):
    wx, wy = check_window(window)
    if img.shape[0] < wy or img.shape[1] < wx:
        raise ImageTooSmall(
            f"image {img.shape[1]}x{img.shape[0]} smaller than window {wx}x{wy}"
        )
