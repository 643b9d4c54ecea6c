"""Command-line front end.

Runs are driven by a JSON config file, with individual keys
overridable by flags; every command is a pure function of its config,
input files and seed, so reruns produce byte-identical outputs.

Exit codes: 0 success, 2 config/input error, 3 training numeric
failure, 4 tracking failure.
"""

import argparse
import json
import os
import sys
from pathlib import Path

from . import evaluation, image as img_mod, matching, model as model_mod, tracking
from .errors import (
    EmptyField,
    ImageTooSmall,
    MissingGroundTruth,
    NonFiniteLoss,
    OutOfBounds,
    DfeError,
)

EXIT_CONFIG = 2
EXIT_TRAIN = 3
EXIT_TRACK = 4


class ConfigError(Exception):
    pass


class TrackError(Exception):
    pass


def _load_config(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    return cfg


def _get(args, cfg, key, default=None, required=False, cast=None):
    value = getattr(args, key, None)
    if value is None:
        value = cfg.get(key, default)
    if value is None:
        if required:
            raise ConfigError(f"missing required setting '{key}'")
        return None
    return cast(value) if cast else value


def _window(args, cfg):
    value = _get(args, cfg, "window", default=31)
    if isinstance(value, (list, tuple)):
        wx, wy = int(value[0]), int(value[1])
    else:
        wx = wy = int(value)
    try:
        return img_mod.check_window((wx, wy))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _existing_dir(path, key):
    p = Path(path)
    if not p.is_dir():
        raise ConfigError(f"{key}: no such directory: {p}")
    return p


def _existing_file(path, key):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{key}: no such file: {p}")
    return p


def _thread_limit(args, cfg):
    value = _get(args, cfg, "threads")
    if value is None:
        env = os.environ.get("DFETRACK_THREADS")
        value = env if env else None
    return int(value) if value is not None else None


def _limit_threads(n):
    if n is None:
        return None
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=n)
    except ImportError:
        return None


def _load_model(args, cfg):
    path = _existing_file(_get(args, cfg, "checkpoint", required=True), "checkpoint")
    try:
        return model_mod.load_checkpoint(path)
    except DfeError as exc:
        raise ConfigError(f"cannot load checkpoint: {exc}") from exc


def _frame_paths(args, cfg):
    frames_dir = _existing_dir(_get(args, cfg, "frames_dir", required=True), "frames_dir")
    keep_every = _get(args, cfg, "keep_every", default=1, cast=int)
    if keep_every < 1:
        raise ConfigError("keep_every must be >= 1")
    paths = img_mod.subsample_frames(img_mod.list_frames(frames_dir), keep_every)
    if not paths:
        raise ConfigError(f"no frames (PNG/PPM) found in {frames_dir}")
    return paths


# ---------------------------------------------------------------------------
# commands


def cmd_train(args):
    cfg = _load_config(args.config)
    images_dir = _existing_dir(_get(args, cfg, "images_dir", required=True), "images_dir")
    checkpoint_out = Path(_get(args, cfg, "checkpoint", required=True))
    history_out = _get(args, cfg, "history_out")
    seed = _get(args, cfg, "seed", required=True, cast=int)
    window = _window(args, cfg)
    try:
        config = model_mod.TrainingConfig(
            epochs=_get(args, cfg, "epochs", default=30, cast=int),
            batch_size=_get(args, cfg, "batch_size", default=64, cast=int),
            loss=_get(args, cfg, "loss", default="plain"),
            sigma=_get(args, cfg, "sigma", default=5.0, cast=float),
            seed=seed,
            learning_rate=_get(args, cfg, "learning_rate", default=0.002, cast=float),
            crops_per_image=_get(args, cfg, "crops_per_image", default=100, cast=int),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if window != (31, 31):
        raise ConfigError("the default architecture requires a 31x31 window")

    crops = model_mod.sample_training_crops(
        images_dir, window, config.crops_per_image, seed=config.seed
    )
    net = model_mod.build_default_model(seed=config.seed)
    print(f"training on {crops.shape[0]} crops from {images_dir} ({config.loss} loss)")
    history = model_mod.train(
        net, crops, config, log=lambda e, l: print(f"epoch {e}: loss {l:.6e}")
    )
    model_mod.save_checkpoint(net, checkpoint_out)
    if history_out:
        model_mod.write_history_csv(history_out, history)
    print(f"final loss {history[-1]:.6e} -> {checkpoint_out}")
    return 0


def _reference_code(net, frames, args, cfg, window):
    ref_frame = _get(args, cfg, "ref_frame", default=0, cast=int)
    ref_x = _get(args, cfg, "ref_x", required=True, cast=int)
    ref_y = _get(args, cfg, "ref_y", required=True, cast=int)
    if not 0 <= ref_frame < len(frames):
        raise ConfigError(f"ref_frame {ref_frame} out of range (have {len(frames)} frames)")
    return ref_frame, (ref_x, ref_y)


def cmd_track(args):
    cfg = _load_config(args.config)
    net = _load_model(args, cfg)
    window = net.window
    paths = _frame_paths(args, cfg)
    ref_frame, ref_point = _reference_code(net, paths, args, cfg, window)
    mode = _get(args, cfg, "mode", default="fixed")
    if mode not in ("fixed", "updating"):
        raise ConfigError(f"mode must be fixed or updating, got {mode!r}")
    track_out = Path(_get(args, cfg, "track_out", required=True))

    used = paths[ref_frame:]
    frames = (img_mod.load_net_image(p) for p in used)
    try:
        seq = tracking.track(net, frames, ref_point, mode=mode, window=window)
    except (OutOfBounds, ImageTooSmall, EmptyField) as exc:
        raise TrackError(f"reference frame: {exc}") from exc
    # frame indices refer to the subsampled sequence
    seq.frames = [f + ref_frame for f in seq.frames]
    tracking.write_track_csv(track_out, seq)
    print(f"tracked {len(seq.frames)} frames -> {track_out}")

    gt_path = _get(args, cfg, "ground_truth")
    if gt_path:
        report_out = Path(_get(args, cfg, "report_out", required=True))
        _write_report(tracking.predictions(seq), gt_path, args, cfg, report_out)
    return 0


def _write_report(preds, gt_path, args, cfg, report_out):
    gt = evaluation.read_ground_truth_csv(_existing_file(gt_path, "ground_truth"))
    sigma = evaluation.LabelingSigma(
        _get(args, cfg, "sigma_x", required=True, cast=float),
        _get(args, cfg, "sigma_y", required=True, cast=float),
    )
    try:
        report = evaluation.error_report(preds, gt, sigma)
    except MissingGroundTruth as exc:
        raise TrackError(str(exc)) from exc
    evaluation.write_error_report(report_out, report)
    first = report.first_exceed_frame
    print(
        f"mean error {report.mean_error:.4f} px, "
        f"diverged={report.diverged}"
        + (f" at frame {first}" if first is not None else "")
        + f" -> {report_out}"
    )


def cmd_match(args):
    cfg = _load_config(args.config)
    net = _load_model(args, cfg)
    ref_path = _existing_file(_get(args, cfg, "reference_image", required=True), "reference_image")
    target_path = _existing_file(_get(args, cfg, "target_image", required=True), "target_image")
    ref_x = _get(args, cfg, "ref_x", required=True, cast=int)
    ref_y = _get(args, cfg, "ref_y", required=True, cast=int)

    ref_img = img_mod.load_net_image(ref_path)
    target = img_mod.load_net_image(target_path)
    try:
        crop = img_mod.extract_crop(ref_img, ref_x, ref_y, net.window)
    except OutOfBounds as exc:
        raise TrackError(str(exc)) from exc
    code = model_mod.encode(net, crop)
    result = matching.match_feature(net, code, target, net.window)
    line = (
        f"{result.subpixel[0]!r},{result.subpixel[1]!r},"
        f"{result.ssr_min!r},{int(result.refined)}"
    )
    out = _get(args, cfg, "match_out")
    if out:
        Path(out).write_text("x,y,ssr,refined\n" + line + "\n")
    print(line)
    return 0


def cmd_eval(args):
    cfg = _load_config(args.config)
    track_csv = _existing_file(_get(args, cfg, "track_csv", required=True), "track_csv")
    report_out = Path(_get(args, cfg, "report_out", required=True))
    try:
        preds = tracking.read_track_csv(track_csv)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    _write_report(preds, _get(args, cfg, "ground_truth", required=True), args, cfg, report_out)
    return 0


def cmd_landscape(args):
    cfg = _load_config(args.config)
    net = _load_model(args, cfg)
    paths = _frame_paths(args, cfg)
    ref_frame, ref_point = _reference_code(net, paths, args, cfg, net.window)
    frame_index = _get(args, cfg, "frame", required=True, cast=int)
    if not 0 <= frame_index < len(paths):
        raise ConfigError(f"frame {frame_index} out of range (have {len(paths)} frames)")
    out = Path(_get(args, cfg, "landscape_out", required=True))

    ref_img = img_mod.load_net_image(paths[ref_frame])
    try:
        crop = img_mod.extract_crop(ref_img, ref_point[0], ref_point[1], net.window)
    except OutOfBounds as exc:
        raise TrackError(f"reference frame: {exc}") from exc
    code = model_mod.encode(net, crop)
    target = img_mod.load_net_image(paths[frame_index])
    try:
        latent_map = matching.encode_dense(net, target, net.window)
    except ImageTooSmall as exc:
        raise TrackError(str(exc)) from exc
    field = matching.ssr_field(latent_map, code)
    matching.export_ssr_landscape(field, out)
    print(f"landscape for frame {frame_index} -> {out}")
    return 0


def cmd_gradcheck(args):
    cfg = _load_config(args.config)
    import numpy as np

    seed = _get(args, cfg, "seed", default=0, cast=int)
    loss = _get(args, cfg, "loss", default="plain")
    divisor = _get(args, cfg, "width_divisor", default=4, cast=int)
    checks = _get(args, cfg, "checks_per_tensor", default=8, cast=int)
    net = model_mod.build_default_model(seed=seed, width_divisor=divisor)
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(2, 3, 31, 31))
    report = model_mod.model_gradcheck(net, x, loss=loss, max_checks_per_tensor=checks, seed=seed)
    print(
        f"gradcheck ({loss} loss, width/{divisor}): "
        f"max relative error {report.max_rel_error:.3e} "
        f"(worst {report.worst_key}, {report.n_checked} coordinates)"
    )
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dfetrack",
        description="Unsupervised deep-feature-encoding matching and tracking.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, flags):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file; flags override its keys")
        for flag, kwargs in flags:
            p.add_argument(flag, **kwargs)
        p.set_defaults(func=func)
        return p

    add(
        "train",
        cmd_train,
        "train an autoencoder on crops from an image directory",
        [
            ("--images-dir", dict(dest="images_dir")),
            ("--checkpoint", dict()),
            ("--history-out", dict(dest="history_out")),
            ("--epochs", dict(type=int)),
            ("--batch-size", dict(dest="batch_size", type=int)),
            ("--loss", dict(choices=["plain", "weighted"])),
            ("--sigma", dict(type=float)),
            ("--seed", dict(type=int)),
            ("--learning-rate", dict(dest="learning_rate", type=float)),
            ("--crops-per-image", dict(dest="crops_per_image", type=int)),
            ("--window", dict(type=int)),
            ("--threads", dict(type=int)),
        ],
    )
    add(
        "track",
        cmd_track,
        "track a reference feature through a frame directory",
        [
            ("--checkpoint", dict()),
            ("--frames-dir", dict(dest="frames_dir")),
            ("--ref-frame", dict(dest="ref_frame", type=int)),
            ("--ref-x", dict(dest="ref_x", type=int)),
            ("--ref-y", dict(dest="ref_y", type=int)),
            ("--mode", dict(choices=["fixed", "updating"])),
            ("--keep-every", dict(dest="keep_every", type=int)),
            ("--track-out", dict(dest="track_out")),
            ("--ground-truth", dict(dest="ground_truth")),
            ("--sigma-x", dict(dest="sigma_x", type=float)),
            ("--sigma-y", dict(dest="sigma_y", type=float)),
            ("--report-out", dict(dest="report_out")),
            ("--threads", dict(type=int)),
        ],
    )
    add(
        "match",
        cmd_match,
        "match a reference crop in a single target frame",
        [
            ("--checkpoint", dict()),
            ("--reference-image", dict(dest="reference_image")),
            ("--target-image", dict(dest="target_image")),
            ("--ref-x", dict(dest="ref_x", type=int)),
            ("--ref-y", dict(dest="ref_y", type=int)),
            ("--match-out", dict(dest="match_out")),
            ("--threads", dict(type=int)),
        ],
    )
    add(
        "eval",
        cmd_eval,
        "error report from an existing track CSV and ground truth",
        [
            ("--track-csv", dict(dest="track_csv")),
            ("--ground-truth", dict(dest="ground_truth")),
            ("--sigma-x", dict(dest="sigma_x", type=float)),
            ("--sigma-y", dict(dest="sigma_y", type=float)),
            ("--report-out", dict(dest="report_out")),
        ],
    )
    add(
        "landscape",
        cmd_landscape,
        "export the SSR landscape of one frame against the reference",
        [
            ("--checkpoint", dict()),
            ("--frames-dir", dict(dest="frames_dir")),
            ("--ref-frame", dict(dest="ref_frame", type=int)),
            ("--ref-x", dict(dest="ref_x", type=int)),
            ("--ref-y", dict(dest="ref_y", type=int)),
            ("--frame", dict(type=int)),
            ("--keep-every", dict(dest="keep_every", type=int)),
            ("--landscape-out", dict(dest="landscape_out")),
            ("--threads", dict(type=int)),
        ],
    )
    add(
        "gradcheck",
        cmd_gradcheck,
        "finite-difference check of the training gradients",
        [
            ("--seed", dict(type=int)),
            ("--loss", dict(choices=["plain", "weighted"])),
            ("--width-divisor", dict(dest="width_divisor", type=int)),
            ("--checks-per-tensor", dict(dest="checks_per_tensor", type=int)),
        ],
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.config)
        limiter = _limit_threads(_thread_limit(args, cfg))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLoss as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except TrackError as exc:
        print(f"tracking failed: {exc}", file=sys.stderr)
        return EXIT_TRACK
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":
    sys.exit(main())
