"""Frame-by-frame tracking of a reference feature."""

from dataclasses import dataclass
from pathlib import Path

from . import image as img_mod
from .errors import OutOfBounds
from .matching import match_feature
from .model import Autoencoder, encode


@dataclass
class TrackSequence:
    reference_point: tuple  # (x, y) in frame 0
    reference_mode: str  # fixed | updating
    frames: list  # frame indices, starting at 1
    results: list  # MatchResult per tracked frame


def track(model: Autoencoder, frames, ref_point, mode: str = "fixed", window=None) -> TrackSequence:
    """Match a reference feature from the first frame in all others.

    frames is any iterable of normalized-CIELAB images; the first one
    defines the reference crop, the remaining ones are tracked in
    order.  In 'updating' mode the reference code is re-extracted at
    each frame's pixel-level prediction; when that crop would overhang
    the frame, the previous reference is kept and tracking continues.
    """
    if mode not in ("fixed", "updating"):
        raise ValueError(f"unknown tracking mode {mode!r}")
    window = window or model.window
    it = iter(frames)
    try:
        first = next(it)
    except StopIteration:
        raise ValueError("empty frame sequence") from None

    x0, y0 = int(ref_point[0]), int(ref_point[1])
    reference = encode(model, img_mod.extract_crop(first, x0, y0, window))

    indices, results = [], []
    for index, frame in enumerate(it, start=1):
        result = match_feature(model, reference, frame, window)
        indices.append(index)
        results.append(result)
        if mode == "updating":
            try:
                crop = img_mod.extract_crop(frame, result.pixel[0], result.pixel[1], window)
                reference = encode(model, crop)
            except OutOfBounds:
                pass  # keep the previous reference, tracking continues
    return TrackSequence(
        reference_point=(x0, y0), reference_mode=mode, frames=indices, results=results
    )


def write_track_csv(path, seq: TrackSequence):
    """One 'frame,x,y,ssr,refined' row per tracked frame.

    x and y are the subpixel predictions (equal to the pixel argmin
    when refinement fell back).
    """
    with open(path, "w") as fh:
        fh.write("frame,x,y,ssr,refined\n")
        for frame, r in zip(seq.frames, seq.results):
            fh.write(f"{frame},{r.subpixel[0]!r},{r.subpixel[1]!r},{r.ssr_min!r},{int(r.refined)}\n")


def read_track_csv(path):
    """Predictions back from a track CSV: dict frame -> (x, y)."""
    rows = Path(path).read_text().strip().splitlines()
    if not rows or rows[0] != "frame,x,y,ssr,refined":
        raise ValueError(f"{path}: not a track CSV")
    track_points = {}
    for row in rows[1:]:
        frame, x, y, _, _ = row.split(",")
        track_points[int(frame)] = (float(x), float(y))
    return track_points


def predictions(seq: TrackSequence):
    """dict frame -> subpixel (x, y) for evaluation."""
    return {f: r.subpixel for f, r in zip(seq.frames, seq.results)}
