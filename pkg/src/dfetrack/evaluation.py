"""Tracking evaluation: standardized errors and chi-square statistics.

Per-frame errors are squared and standardized by the per-axis manual
labeling variances; their running sum is compared against a 99%
confidence curve built from the inverse chi-square CDF with 2*n degrees
of freedom.  The same machinery yields the labeling-uncertainty test.

The chi-square CDF is the regularized lower incomplete gamma function
(series for x < a+1, continued fraction otherwise); its inverse is a
bracketed bisection, dependency-free and monotone.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InsufficientSamples, MissingGroundTruth

CONFIDENCE = 0.99


@dataclass
class LabelingSigma:
    """Per-axis standard deviations of manual labeling error, pixels."""

    sigma_x: float
    sigma_y: float

    def __post_init__(self):
        if self.sigma_x <= 0 or self.sigma_y <= 0:
            raise ValueError("labeling sigmas must be positive")


@dataclass
class ErrorReport:
    frames: np.ndarray  # frame indices, ascending
    distances: np.ndarray  # per-frame Euclidean error, px
    mean_error: float
    sorted_errors: np.ndarray  # distances, descending
    standardized: np.ndarray  # e_x^2/s_x^2 + e_y^2/s_y^2 per frame
    cumulative: np.ndarray  # running sum of standardized errors
    ci_curve: np.ndarray  # chi2_inv_cdf(p, 2t) for t = 1..n
    diverged: bool
    first_exceed_frame: int | None


# ---------------------------------------------------------------------------
# chi-square machinery


def _gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if x < 0 or a <= 0:
        raise ValueError("require x >= 0 and a > 0")
    if x == 0.0:
        return 0.0
    lg = math.lgamma(a)
    if x < a + 1.0:
        # series: P(a,x) = x^a e^-x / Gamma(a) * sum x^n / (a)_(n+1)
        term = 1.0 / a
        total = term
        n = a
        for _ in range(10000):
            n += 1.0
            term *= x / n
            total += term
            if abs(term) < abs(total) * 1e-16:
                break
        return total * math.exp(-x + a * math.log(x) - lg)
    # continued fraction (modified Lentz) for Q(a,x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    q = math.exp(-x + a * math.log(x) - lg) * h
    return 1.0 - q


def chi2_cdf(x: float, dof: int) -> float:
    if dof < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if x <= 0:
        return 0.0
    return _gamma_p(dof / 2.0, x / 2.0)


def chi2_inv_cdf(p: float, dof: int) -> float:
    """Inverse chi-square CDF by bracketed bisection, |x error| <= 1e-8."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must be in (0, 1), got {p}")
    if dof < 1:
        raise ValueError("degrees of freedom must be >= 1")
    hi = dof + 10.0 * math.sqrt(2.0 * dof) + 10.0
    while chi2_cdf(hi, dof) < p:
        hi *= 2.0
    lo = 0.0
    while hi - lo > 1e-8:
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, dof) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ci_curve(n_frames: int, p: float = CONFIDENCE) -> np.ndarray:
    """Confidence thresholds chi2_inv_cdf(p, 2t) for t = 1..n_frames."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    return np.array([chi2_inv_cdf(p, 2 * t) for t in range(1, n_frames + 1)])


# ---------------------------------------------------------------------------
# error reports


def error_report(track_points: dict, ground_truth: dict, sigma: LabelingSigma, p: float = CONFIDENCE) -> ErrorReport:
    """Standardized tracking errors against manual annotations.

    track_points and ground_truth map frame index -> (x, y); every
    tracked frame must have a ground-truth entry.
    """
    frames = sorted(track_points)
    ex, ey = [], []
    for f in frames:
        if f not in ground_truth:
            raise MissingGroundTruth(f)
        px, py = track_points[f]
        gx, gy = ground_truth[f]
        ex.append(px - gx)
        ey.append(py - gy)
    ex, ey = np.array(ex), np.array(ey)
    distances = np.hypot(ex, ey)
    standardized = ex**2 / sigma.sigma_x**2 + ey**2 / sigma.sigma_y**2
    cumulative = np.cumsum(standardized)
    curve = ci_curve(len(frames), p)
    exceed = np.nonzero(cumulative > curve)[0]
    first = int(frames[exceed[0]]) if exceed.size else None
    return ErrorReport(
        frames=np.array(frames),
        distances=distances,
        mean_error=float(distances.mean()),
        sorted_errors=np.sort(distances)[::-1],
        standardized=standardized,
        cumulative=cumulative,
        ci_curve=curve,
        diverged=exceed.size > 0,
        first_exceed_frame=first,
    )


def divergence_detect(report: ErrorReport):
    """Earliest frame whose cumulative error exceeds the CI, else None."""
    exceed = np.nonzero(report.cumulative > report.ci_curve)[0]
    return int(report.frames[exceed[0]]) if exceed.size else None


# ---------------------------------------------------------------------------
# labeling-uncertainty chi-square test


@dataclass
class LabelingResult:
    sigma: LabelingSigma | None
    chi2_stat: float
    threshold: float
    n_samples: int
    passed: bool
    degenerate: bool  # all relabels identical on some axis


def labeling_chi_square(relabels: dict, p: float = CONFIDENCE) -> LabelingResult:
    """Manual-relabeling uncertainty test.

    relabels maps frame -> sequence of repeated (x, y) annotations
    (at least two per frame).  Per-frame errors are taken against the
    mean of that frame's attempts, sigma_x/sigma_y are pooled over all
    samples, and the statistic sum(e_x^2/s_x^2 + e_y^2/s_y^2) is
    compared to the chi-square p-quantile with 2n degrees of freedom.
    By construction the statistic equals 2n when evaluated on the same
    samples the sigmas were fitted on.
    """
    ex, ey = [], []
    for frame, attempts in relabels.items():
        pts = np.asarray(attempts, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise InsufficientSamples(f"frame {frame}: need >= 2 (x, y) relabels")
        mean = pts.mean(axis=0)
        ex.extend(pts[:, 0] - mean[0])
        ey.extend(pts[:, 1] - mean[1])
    ex, ey = np.array(ex), np.array(ey)
    n = ex.size
    var_x = float(np.mean(ex**2))
    var_y = float(np.mean(ey**2))
    if var_x == 0.0 or var_y == 0.0:
        return LabelingResult(
            sigma=None,
            chi2_stat=0.0,
            threshold=chi2_inv_cdf(p, 2 * n),
            n_samples=n,
            passed=True,
            degenerate=True,
        )
    sigma = LabelingSigma(math.sqrt(var_x), math.sqrt(var_y))
    stat = float(np.sum(ex**2 / var_x + ey**2 / var_y))
    threshold = chi2_inv_cdf(p, 2 * n)
    return LabelingResult(
        sigma=sigma,
        chi2_stat=stat,
        threshold=threshold,
        n_samples=n,
        passed=stat <= threshold,
        degenerate=False,
    )


# ---------------------------------------------------------------------------
# file formats


def read_ground_truth_csv(path) -> dict:
    """'frame,x,y' rows with real-valued coordinates."""
    rows = Path(path).read_text().strip().splitlines()
    start = 1 if rows and rows[0].lower().startswith("frame") else 0
    gt = {}
    for row in rows[start:]:
        if not row.strip():
            continue
        frame, x, y = row.split(",")
        gt[int(frame)] = (float(x), float(y))
    return gt


def write_ground_truth_csv(path, ground_truth: dict):
    with open(path, "w") as fh:
        fh.write("frame,x,y\n")
        for frame in sorted(ground_truth):
            x, y = ground_truth[frame]
            fh.write(f"{frame},{x!r},{y!r}\n")


def write_error_report(path, report: ErrorReport):
    """Plot-ready CSV blocks plus a one-line summary.

    Blocks: 'summary' (mean_error_px, diverged, first_exceed_frame),
    'sorted_errors' (rank, error_px) and 'series'
    (frame, distance_px, standardized, cumulative, ci99).
    """
    with open(path, "w") as fh:
        fh.write("block,summary\n")
        fh.write("mean_error_px,diverged,first_exceed_frame\n")
        first = "" if report.first_exceed_frame is None else report.first_exceed_frame
        fh.write(f"{report.mean_error!r},{int(report.diverged)},{first}\n")
        fh.write("block,sorted_errors\n")
        fh.write("rank,error_px\n")
        for rank, err in enumerate(report.sorted_errors, start=1):
            fh.write(f"{rank},{err!r}\n")
        fh.write("block,series\n")
        fh.write("frame,distance_px,standardized,cumulative,ci99\n")
        for i, frame in enumerate(report.frames):
            fh.write(
                f"{frame},{report.distances[i]!r},{report.standardized[i]!r},"
                f"{report.cumulative[i]!r},{report.ci_curve[i]!r}\n"
            )
