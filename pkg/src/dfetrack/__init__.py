"""Unsupervised deep feature encodings for skin-feature tracking.

A small convolutional autoencoder is trained on 31x31 image crops in
normalized CIELAB; its 128-dimensional latent codes serve as dense
per-pixel descriptors.  A reference feature is located in new frames by
global SSR minimization over the latent map, refined to subpixel
accuracy with a local quadratic fit, and tracking quality is judged by
chi-square-standardized cumulative errors.
"""

from .errors import (
    CorruptHeader,
    DfeError,
    EmptyField,
    ImageTooSmall,
    InsufficientSamples,
    MissingGroundTruth,
    NoNeighborhood,
    NonFiniteLoss,
    OutOfBounds,
    ShapeMismatch,
    TruncatedBlob,
    UpscaleRequested,
    VersionMismatch,
)
from .evaluation import (
    ErrorReport,
    LabelingSigma,
    chi2_cdf,
    chi2_inv_cdf,
    ci_curve,
    divergence_detect,
    error_report,
    labeling_chi_square,
)
from .image import (
    DEFAULT_WINDOW,
    cielab_to_rgb,
    extract_crop,
    load_rgb,
    normalize_lab,
    resize_inter_area,
    rgb_to_cielab,
    rgb_to_net,
    save_rgb,
)
from .matching import (
    LatentMap,
    MatchResult,
    SsrField,
    encode_dense,
    export_ssr_landscape,
    fit_quadratic_3x3,
    match_feature,
    select_candidate,
    ssr_field,
    subpixel_refine,
)
from .model import (
    Autoencoder,
    TrainingConfig,
    build_default_model,
    encode,
    load_checkpoint,
    reconstruct,
    sample_training_crops,
    save_checkpoint,
    train,
)
from .nn import GaussianMask, adamax_step, gaussian_mask, mse_loss, weighted_mse_loss
from .tracking import TrackSequence, track

__version__ = "0.1.0"

__all__ = [
    "Autoencoder",
    "CorruptHeader",
    "DEFAULT_WINDOW",
    "DfeError",
    "EmptyField",
    "ErrorReport",
    "GaussianMask",
    "ImageTooSmall",
    "InsufficientSamples",
    "LabelingSigma",
    "LatentMap",
    "MatchResult",
    "MissingGroundTruth",
    "NoNeighborhood",
    "NonFiniteLoss",
    "OutOfBounds",
    "ShapeMismatch",
    "SsrField",
    "TrackSequence",
    "TrainingConfig",
    "TruncatedBlob",
    "UpscaleRequested",
    "VersionMismatch",
    "adamax_step",
    "build_default_model",
    "chi2_cdf",
    "chi2_inv_cdf",
    "ci_curve",
    "cielab_to_rgb",
    "divergence_detect",
    "encode",
    "encode_dense",
    "error_report",
    "export_ssr_landscape",
    "extract_crop",
    "fit_quadratic_3x3",
    "gaussian_mask",
    "labeling_chi_square",
    "load_checkpoint",
    "load_rgb",
    "match_feature",
    "mse_loss",
    "normalize_lab",
    "reconstruct",
    "resize_inter_area",
    "rgb_to_cielab",
    "rgb_to_net",
    "sample_training_crops",
    "save_checkpoint",
    "save_rgb",
    "select_candidate",
    "ssr_field",
    "subpixel_refine",
    "track",
    "train",
    "weighted_mse_loss",
]
