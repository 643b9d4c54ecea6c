"""Global feature matching in latent space.

A frame is densely encoded (one latent code for every pixel whose crop
window fits inside the frame), the sum of squared residuals (SSR) to a
reference code is evaluated everywhere, and the global minimum is
refined to subpixel accuracy by fitting a quadratic surface to its 3x3
neighborhood.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import image as img_mod
from .errors import EmptyField, NoNeighborhood
from .model import _EVAL_CHUNK, Autoencoder, _eval_chunked


@dataclass
class LatentMap:
    """Per-pixel latent codes with a validity mask.

    codes is (H, W, latent); valid is False on the half-window border
    band, where codes are all-zero.
    """

    codes: np.ndarray
    valid: np.ndarray
    window: tuple

    @property
    def height(self):
        return self.codes.shape[0]

    @property
    def width(self):
        return self.codes.shape[1]


@dataclass
class SsrField:
    ssr: np.ndarray  # (H, W), 0.0 at invalid positions
    valid: np.ndarray  # (H, W) bool


@dataclass
class QuadraticSurface:
    """e(x, y) ~ a + b x + c y + d x^2 + e xy + f y^2, center-relative."""

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float
    residual: float

    def value(self, x, y):
        return self.a + self.b * x + self.c * y + self.d * x * x + self.e * x * y + self.f * y * y

    def curvature(self):
        """Trace of the Hessian, 2d + 2f."""
        return 2.0 * self.d + 2.0 * self.f


@dataclass
class MatchResult:
    pixel: tuple  # (x, y) integers
    subpixel: tuple  # (x, y) floats; equals pixel when not refined
    ssr_min: float
    refined: bool
    hessian_pd: bool
    tie_count: int


def encode_dense(model: Autoencoder, image, window=None) -> LatentMap:
    """Encode every valid crop center of a normalized-CIELAB image.

    Codes at a position equal encode() of the crop extracted there,
    bit for bit; border positions are zero with valid=False.  Crops are
    streamed through a fixed-size buffer, so memory stays bounded by
    the output map rather than by all crops at once.
    """
    window = window or model.window
    image = np.asarray(image, dtype=np.float64)
    img_mod.require_min_size(image, window)
    wx, wy = window
    hx, hy = wx // 2, wy // 2
    h, w = image.shape[:2]

    # (H-wy+1, W-wx+1, 3, wy, wx) strided view of all candidate crops
    crops = sliding_window_view(image, (wy, wx), axis=(0, 1))
    vh, vw = crops.shape[0], crops.shape[1]

    out = np.empty((vh * vw, model.latent_dim))
    buf = np.empty((_EVAL_CHUNK, 3, wy, wx))
    fill = pos = 0
    for j in range(vh):
        col = 0
        while col < vw:
            take = min(_EVAL_CHUNK - fill, vw - col)
            buf[fill : fill + take] = crops[j, col : col + take]
            fill += take
            col += take
            if fill == _EVAL_CHUNK:
                codes_chunk = _eval_chunked(model, buf, run_decoder=False)
                out[pos : pos + fill] = codes_chunk.reshape(fill, model.latent_dim)
                pos += fill
                fill = 0
    if fill:
        codes_chunk = _eval_chunked(model, buf[:fill], run_decoder=False)
        out[pos : pos + fill] = codes_chunk.reshape(fill, model.latent_dim)

    codes = np.zeros((h, w, model.latent_dim))
    codes[hy : hy + vh, hx : hx + vw] = out.reshape(vh, vw, model.latent_dim)
    valid = np.zeros((h, w), dtype=bool)
    valid[hy : hy + vh, hx : hx + vw] = True
    return LatentMap(codes=codes, valid=valid, window=(wx, wy))


def ssr_field(latent_map: LatentMap, reference) -> SsrField:
    """Sum of squared code differences to the reference, per position."""
    reference = np.asarray(reference, dtype=np.float64)
    d = latent_map.codes - reference
    ssr = np.einsum("ijk,ijk->ij", d, d)
    ssr[~latent_map.valid] = 0.0
    return SsrField(ssr=ssr, valid=latent_map.valid)


# fixed 3x3 least-squares stencil for the 6-coefficient quadratic;
# rows of the design matrix follow row-major (dy, dx) order
_DESIGN = np.array(
    [[1.0, dx, dy, dx * dx, dx * dy, dy * dy] for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
)
_STENCIL = np.linalg.pinv(_DESIGN)


def fit_quadratic_3x3(field: SsrField, center) -> QuadraticSurface:
    """Least-squares quadratic through the 9 samples around a center.

    Raises NoNeighborhood when any of the 9 positions is invalid or
    outside the field, signalling fallback to the pixel-level result.
    """
    x, y = int(center[0]), int(center[1])
    h, w = field.ssr.shape
    if not (1 <= x <= w - 2 and 1 <= y <= h - 2):
        raise NoNeighborhood(f"3x3 neighborhood of ({x},{y}) leaves the field")
    patch_valid = field.valid[y - 1 : y + 2, x - 1 : x + 2]
    if not patch_valid.all():
        raise NoNeighborhood(f"3x3 neighborhood of ({x},{y}) touches invalid positions")
    samples = field.ssr[y - 1 : y + 2, x - 1 : x + 2].reshape(9)
    coeffs = _STENCIL @ samples
    residual = float(np.linalg.norm(_DESIGN @ coeffs - samples))
    a, b, c, d, e, f = (float(v) for v in coeffs)
    return QuadraticSurface(a, b, c, d, e, f, residual)


def select_candidate(field: SsrField):
    """Global SSR argmin over valid positions.

    Exact ties are resolved by the largest curvature (Hessian trace of
    the local quadratic fit); any remaining ties fall to row-major
    order.  Returns ((x, y), tie_count).
    """
    if not field.valid.any():
        raise EmptyField("no valid positions to search")
    masked = np.where(field.valid, field.ssr, np.inf)
    minimum = masked.min()
    tied = np.argwhere(masked == minimum)  # (k, 2) rows of (y, x), row-major order
    tie_count = len(tied)
    if tie_count == 1:
        y, x = tied[0]
        return (int(x), int(y)), 1
    curvatures = np.empty(tie_count)
    for i, (y, x) in enumerate(tied):
        try:
            curvatures[i] = fit_quadratic_3x3(field, (x, y)).curvature()
        except NoNeighborhood:
            curvatures[i] = -np.inf
    y, x = tied[int(np.argmax(curvatures))]
    return (int(x), int(y)), tie_count


def subpixel_refine(surface: QuadraticSurface, center):
    """Zero-gradient point of the fitted surface, if trustworthy.

    Accepts the solution only when the Hessian is positive definite
    (4df - e^2 > 0 and d > 0) and the offset stays strictly inside the
    sampled cell, |offset| < 1 per axis; otherwise falls back to the
    integer pixel.  Returns (subpixel, refined, hessian_pd).
    """
    x, y = center
    det = 4.0 * surface.d * surface.f - surface.e * surface.e
    hessian_pd = det > 0.0 and surface.d > 0.0
    if not hessian_pd:
        return (float(x), float(y)), False, False
    ox = (-2.0 * surface.f * surface.b + surface.e * surface.c) / det
    oy = (surface.e * surface.b - 2.0 * surface.d * surface.c) / det
    if abs(ox) >= 1.0 or abs(oy) >= 1.0:
        return (float(x), float(y)), False, True
    return (float(x) + ox, float(y) + oy), True, True


def match_code(field: SsrField) -> MatchResult:
    """Candidate selection plus subpixel refinement on a ready field."""
    (x, y), tie_count = select_candidate(field)
    try:
        surface = fit_quadratic_3x3(field, (x, y))
    except NoNeighborhood:
        return MatchResult(
            pixel=(x, y),
            subpixel=(float(x), float(y)),
            ssr_min=float(field.ssr[y, x]),
            refined=False,
            hessian_pd=False,
            tie_count=tie_count,
        )
    subpixel, refined, hessian_pd = subpixel_refine(surface, (x, y))
    return MatchResult(
        pixel=(x, y),
        subpixel=subpixel,
        ssr_min=float(field.ssr[y, x]),
        refined=refined,
        hessian_pd=hessian_pd,
        tie_count=tie_count,
    )


def match_feature(model: Autoencoder, reference, target_image, window=None) -> MatchResult:
    """Locate a reference latent code in a normalized-CIELAB frame."""
    latent_map = encode_dense(model, target_image, window)
    field = ssr_field(latent_map, reference)
    return match_code(field)


# ---------------------------------------------------------------------------
# SSR landscape export


def export_ssr_landscape(field: SsrField, path):
    """Write the SSR grid as CSV, invalid cells empty.

    The first line is a comment carrying the argmin so the file is
    self-describing: '# argmin_x=..,argmin_y=..,ssr_min=..'.
    """
    (x, y), _ = select_candidate(field)
    h, w = field.ssr.shape
    with open(path, "w") as fh:
        fh.write(f"# argmin_x={x},argmin_y={y},ssr_min={field.ssr[y, x]!r}\n")
        for j in range(h):
            row = [repr(field.ssr[j, i]) if field.valid[j, i] else "" for i in range(w)]
            fh.write(",".join(row) + "\n")


def read_ssr_landscape(path):
    """Inverse of export_ssr_landscape; returns (field, (x, y), ssr_min)."""
    lines = Path(path).read_text().splitlines()
    head = lines[0].lstrip("# ").split(",")
    info = dict(part.split("=") for part in head)
    rows = []
    valid_rows = []
    for line in lines[1:]:
        cells = line.split(",")
        rows.append([float(c) if c else 0.0 for c in cells])
        valid_rows.append([bool(c) for c in cells])
    field = SsrField(ssr=np.array(rows), valid=np.array(valid_rows))
    return field, (int(info["argmin_x"]), int(info["argmin_y"])), float(info["ssr_min"])
