"""The crop autoencoder: architecture, training, inference, checkpoints.

The default model compresses a normalized-CIELAB 31x31x3 crop through
four convolution stages into a 128-dimensional latent code
(compression factor 128/2883 = 0.0444) and mirrors back with transpose
convolutions.  The latent layer carries no batch norm or ReLU, so codes
are unbounded.

Inference always runs in eval mode over fixed-size zero-padded chunks.
Fixed GEMM shapes make every code a bit-reproducible function of the
checkpoint and the crop alone, independent of how crops are batched.
"""

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import image as img_mod
from .errors import CorruptHeader, NonFiniteLoss, ShapeMismatch, TruncatedBlob, VersionMismatch
from .nn import (
    LayerSpec,
    adamax_init,
    adamax_step,
    gaussian_mask,
    init_network,
    mse_loss,
    mse_loss_grad,
    network_backward,
    network_forward,
    weighted_mse_loss,
    weighted_mse_loss_grad,
)

LATENT_DIM = 128
_EVAL_CHUNK = 128

_MAGIC = "DFEAE"
_FORMAT_VERSION = 1


@dataclass
class Autoencoder:
    window: tuple
    channels: int
    latent_dim: int
    encoder: list  # of LayerSpec
    decoder: list
    params: dict
    state: dict  # batch-norm running statistics
    meta: dict = field(default_factory=dict)

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def compression_factor(self) -> float:
        wx, wy = self.window
        return self.latent_dim / (wx * wy * self.channels)


def default_layer_specs(channels=3, widths=(32, 64, 128), latent=LATENT_DIM):
    """Encoder/decoder layer lists for 31x31 inputs.

    Three stride-2 conv+BN+ReLU stages (31 -> 16 -> 8 -> 4) and a final
    valid 4x4 conv to a 1x1 latent; the decoder mirrors the stages with
    transpose convolutions back to 31x31.
    """
    w1, w2, w3 = widths
    encoder = [
        LayerSpec("conv", channels, w1, kernel=3, stride=2, padding=1),
        LayerSpec("batch_norm", w1, w1),
        LayerSpec("relu", w1, w1),
        LayerSpec("conv", w1, w2, kernel=3, stride=2, padding=1),
        LayerSpec("batch_norm", w2, w2),
        LayerSpec("relu", w2, w2),
        LayerSpec("conv", w2, w3, kernel=3, stride=2, padding=1),
        LayerSpec("batch_norm", w3, w3),
        LayerSpec("relu", w3, w3),
        LayerSpec("conv", w3, latent, kernel=4, stride=1, padding=0),
    ]
    decoder = [
        LayerSpec("conv_transpose", latent, w3, kernel=4, stride=1, padding=0),
        LayerSpec("batch_norm", w3, w3),
        LayerSpec("relu", w3, w3),
        LayerSpec("conv_transpose", w3, w2, kernel=3, stride=2, padding=1, out_pad=1),
        LayerSpec("batch_norm", w2, w2),
        LayerSpec("relu", w2, w2),
        LayerSpec("conv_transpose", w2, w1, kernel=3, stride=2, padding=1, out_pad=1),
        LayerSpec("batch_norm", w1, w1),
        LayerSpec("relu", w1, w1),
        LayerSpec("conv_transpose", w1, channels, kernel=3, stride=2, padding=1),
    ]
    return encoder, decoder


def build_default_model(seed: int = 0, width_divisor: int = 1) -> Autoencoder:
    """Fresh default model; width_divisor shrinks every stage (tests)."""
    d = int(width_divisor)
    widths = (32 // d, 64 // d, 128 // d)
    latent = LATENT_DIM // d
    if min(widths) < 1 or latent < 1:
        raise ValueError("width_divisor too large")
    encoder, decoder = default_layer_specs(3, widths, latent)
    rng = np.random.default_rng(seed)
    enc_params, enc_state = init_network(encoder, rng, "enc")
    dec_params, dec_state = init_network(decoder, rng, "dec")
    return Autoencoder(
        window=(31, 31),
        channels=3,
        latent_dim=latent,
        encoder=encoder,
        decoder=decoder,
        params={**enc_params, **dec_params},
        state={**enc_state, **dec_state},
        meta={"seed": seed},
    )


def _crops_to_chw(crops):
    crops = np.asarray(crops, dtype=np.float64)
    if crops.ndim == 3:
        crops = crops[None]
    if crops.ndim != 4 or crops.shape[3] != 3:
        raise ShapeMismatch(f"expected (N, wy, wx, 3) crops, got {crops.shape}")
    return crops.transpose(0, 3, 1, 2)


def _check_crop_window(model, crops_chw):
    wx, wy = model.window
    if crops_chw.shape[2] != wy or crops_chw.shape[3] != wx:
        raise ShapeMismatch(
            f"crop size {crops_chw.shape[3]}x{crops_chw.shape[2]} does not match "
            f"model window {wx}x{wy}"
        )


def _eval_chunked(model, x_chw, run_decoder: bool):
    n = x_chw.shape[0]
    outs = []
    for start in range(0, n, _EVAL_CHUNK):
        end = min(start + _EVAL_CHUNK, n)
        if end - start == _EVAL_CHUNK:
            chunk = x_chw[start:end]
        else:
            chunk = np.zeros((_EVAL_CHUNK,) + x_chw.shape[1:])
            chunk[: end - start] = x_chw[start:end]
        y, _, _ = network_forward(model.encoder, model.params, model.state, chunk, "eval", "enc")
        if run_decoder:
            y, _, _ = network_forward(model.decoder, model.params, model.state, y, "eval", "dec")
        outs.append(y[: end - start])
    return outs[0] if len(outs) == 1 else np.concatenate(outs)


def encode_batch(model: Autoencoder, crops) -> np.ndarray:
    """Latent codes, one row per crop; (N, wy, wx, 3) -> (N, latent)."""
    chw = _crops_to_chw(crops)
    _check_crop_window(model, chw)
    codes = _eval_chunked(model, chw, run_decoder=False)
    return codes.reshape(chw.shape[0], model.latent_dim)


def encode(model: Autoencoder, crop) -> np.ndarray:
    """Latent code of a single crop; deterministic eval-mode pass."""
    return encode_batch(model, np.asarray(crop)[None])[0]


def reconstruct_batch(model: Autoencoder, crops) -> np.ndarray:
    chw = _crops_to_chw(crops)
    _check_crop_window(model, chw)
    out = _eval_chunked(model, chw, run_decoder=True)
    return out.transpose(0, 2, 3, 1)


def reconstruct(model: Autoencoder, crop) -> np.ndarray:
    """decoder(encoder(crop)); output has the input's shape."""
    return reconstruct_batch(model, np.asarray(crop)[None])[0]


# ---------------------------------------------------------------------------
# training data


def sample_training_crops(image_dir, window=(31, 31), crops_per_image=100, seed=0):
    """Uniform random valid-center crops from every image in a directory.

    Images smaller than the window are skipped with a warning.  Returns
    an (N, wy, wx, 3) float64 array of normalized-CIELAB crops; the
    sequence is a pure function of the seed and the sorted file list.
    """
    wx, wy = img_mod.check_window(window)
    rng = np.random.default_rng(seed)
    crops = []
    for path in img_mod.list_frames(image_dir):
        rgb = img_mod.load_rgb(path)
        if rgb.shape[0] < wy or rgb.shape[1] < wx:
            warnings.warn(f"image too small for window {wx}x{wy}, skipping {path.name}")
            continue
        net = img_mod.rgb_to_net(rgb)
        x_min, x_max, y_min, y_max = img_mod.valid_center_range(net.shape, window)
        xs = rng.integers(x_min, x_max + 1, size=crops_per_image)
        ys = rng.integers(y_min, y_max + 1, size=crops_per_image)
        for x, y in zip(xs, ys):
            crops.append(net[y - wy // 2 : y + wy // 2 + 1, x - wx // 2 : x + wx // 2 + 1])
    if not crops:
        raise FileNotFoundError(f"no usable training images in {image_dir}")
    return np.stack(crops)


@dataclass
class TrainingConfig:
    epochs: int = 30
    batch_size: int = 64
    loss: str = "plain"  # plain | weighted
    sigma: float = 5.0
    seed: int = 0
    learning_rate: float = 0.002
    crops_per_image: int = 100

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm)")
        if self.loss not in ("plain", "weighted"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.loss == "weighted" and self.sigma <= 0:
            raise ValueError("weighted loss requires sigma > 0")


def train(model: Autoencoder, crops, config: TrainingConfig, log=None):
    """Adamax training over shuffled batches of a fixed crop set.

    Returns the per-epoch mean loss history and mutates the model in
    place.  Raises NonFiniteLoss as soon as a batch loss stops being
    finite.
    """
    crops = np.asarray(crops, dtype=np.float64)
    chw_all = _crops_to_chw(crops)
    _check_crop_window(model, chw_all)
    n = chw_all.shape[0]
    if n < 2:
        raise ValueError("need at least two crops to train")

    rng = np.random.default_rng(config.seed)
    opt = adamax_init(model.params, alpha=config.learning_rate)
    mask = gaussian_mask(model.window, config.sigma) if config.loss == "weighted" else None

    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            if idx.size < 2:
                continue  # batch norm cannot run on a single sample
            x = chw_all[idx]
            z, enc_caches, state1 = network_forward(
                model.encoder, model.params, model.state, x, "train", "enc", keep_cache=True
            )
            y, dec_caches, state2 = network_forward(
                model.decoder, model.params, state1, z, "train", "dec", keep_cache=True
            )
            model.state = state2
            if config.loss == "weighted":
                loss = weighted_mse_loss(y, x, mask)
                dy = weighted_mse_loss_grad(y, x, mask)
            else:
                loss = mse_loss(y, x)
                dy = mse_loss_grad(y, x)
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch, loss)
            dec_grads, dz = network_backward(model.decoder, model.params, dec_caches, dy, "dec")
            enc_grads, _ = network_backward(model.encoder, model.params, enc_caches, dz, "enc")
            adamax_step(model.params, {**enc_grads, **dec_grads}, opt)
            total += loss * idx.size
            count += idx.size
        history.append(total / count)
        if log is not None:
            log(epoch, history[-1])

    model.meta.update(
        {
            "loss": config.loss,
            "sigma": config.sigma if config.loss == "weighted" else None,
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "train_seed": config.seed,
            "learning_rate": config.learning_rate,
            "final_loss": history[-1],
            "crop_count": int(n),
        }
    )
    return history


def flatten_network(model: Autoencoder):
    """Combined enc+dec view keyed '<index>.<tensor>'.

    The returned dicts share the model's arrays, so in-place edits (as
    gradient checking does) act on the model itself.  name_map sends
    flat keys back to the model's own parameter names.
    """
    specs = model.encoder + model.decoder
    params, state, name_map = {}, {}, {}
    for scope, layers, base in (("enc", model.encoder, 0), ("dec", model.decoder, len(model.encoder))):
        for i in range(len(layers)):
            for suffix in ("weight", "bias", "gamma", "beta"):
                src = f"{scope}{i}.{suffix}"
                if src in model.params:
                    flat = f"{base + i}.{suffix}"
                    params[flat] = model.params[src]
                    name_map[flat] = src
            for suffix in ("running_mean", "running_var"):
                src = f"{scope}{i}.{suffix}"
                if src in model.state:
                    state[f"{base + i}.{suffix}"] = model.state[src]
    return specs, params, state, name_map


def model_gradcheck(model: Autoencoder, x, loss="plain", step=1e-3, max_checks_per_tensor=25, seed=0):
    """Finite-difference check of the full autoencoder gradient."""
    from .nn import gradcheck

    specs, params, state, name_map = flatten_network(model)
    mask = gaussian_mask(model.window, 5.0) if loss == "weighted" else None
    report = gradcheck(
        specs,
        params,
        state,
        x,
        loss=loss,
        mask=mask,
        step=step,
        max_checks_per_tensor=max_checks_per_tensor,
        seed=seed,
    )
    report.per_tensor = {name_map[k]: v for k, v in report.per_tensor.items()}
    report.worst_key = name_map.get(report.worst_key, report.worst_key)
    return report


def write_history_csv(path, history):
    with open(path, "w") as fh:
        fh.write("epoch,loss\n")
        for epoch, loss in enumerate(history, start=1):
            fh.write(f"{epoch},{loss!r}\n")


def read_history_csv(path):
    rows = Path(path).read_text().strip().splitlines()[1:]
    return [float(r.split(",")[1]) for r in rows]


# ---------------------------------------------------------------------------
# checkpoints: plain-text header + little-endian float64 blob
#
#   DFEAE 1
#   window 31 31
#   channels 3
#   latent 128
#   encoder conv 3 32 3 2 1 0
#   ...
#   meta {...}
#   tensor enc0.weight 32,3,3,3 0
#   ...
#   end
#   <blob>
#
# Offsets are byte offsets into the blob.  Save -> load -> save is
# byte-identical.


def save_checkpoint(model: Autoencoder, path):
    lines = [f"{_MAGIC} {_FORMAT_VERSION}"]
    lines.append(f"window {model.window[0]} {model.window[1]}")
    lines.append(f"channels {model.channels}")
    lines.append(f"latent {model.latent_dim}")
    for scope, layers in (("encoder", model.encoder), ("decoder", model.decoder)):
        for s in layers:
            lines.append(
                f"{scope} {s.kind} {s.in_channels} {s.out_channels} "
                f"{s.kernel} {s.stride} {s.padding} {s.out_pad}"
            )
    lines.append("meta " + json.dumps(model.meta, sort_keys=True))

    blob = bytearray()
    for key, arr in list(model.params.items()) + list(model.state.items()):
        shape = ",".join(str(d) for d in arr.shape)
        lines.append(f"tensor {key} {shape} {len(blob)}")
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    lines.append("end")

    with open(path, "wb") as fh:
        fh.write("\n".join(lines).encode("ascii") + b"\n")
        fh.write(bytes(blob))


def load_checkpoint(path) -> Autoencoder:
    raw = Path(path).read_bytes()
    marker = b"\nend\n"
    cut = raw.find(marker)
    if cut < 0:
        raise CorruptHeader(f"{path}: missing end marker")
    try:
        header = raw[:cut].decode("ascii").splitlines()
    except UnicodeDecodeError as exc:
        raise CorruptHeader(f"{path}: non-ascii header") from exc
    blob = raw[cut + len(marker) :]

    if not header or not header[0].startswith(_MAGIC + " "):
        raise CorruptHeader(f"{path}: bad magic")
    version = header[0].split()[1]
    if version != str(_FORMAT_VERSION):
        raise VersionMismatch(f"{path}: format version {version}, expected {_FORMAT_VERSION}")

    window = channels = latent = None
    encoder, decoder, tensors = [], [], []
    meta = {}
    try:
        for line in header[1:]:
            tag, rest = line.split(" ", 1)
            if tag == "window":
                wx, wy = rest.split()
                window = (int(wx), int(wy))
            elif tag == "channels":
                channels = int(rest)
            elif tag == "latent":
                latent = int(rest)
            elif tag in ("encoder", "decoder"):
                kind, cin, cout, k, s, p, op = rest.split()
                spec = LayerSpec(kind, int(cin), int(cout), int(k), int(s), int(p), int(op))
                (encoder if tag == "encoder" else decoder).append(spec)
            elif tag == "meta":
                meta = json.loads(rest)
            elif tag == "tensor":
                key, shape_s, offset_s = rest.split()
                shape = tuple(int(d) for d in shape_s.split(","))
                tensors.append((key, shape, int(offset_s)))
            else:
                raise ValueError(f"unknown header tag {tag!r}")
    except (ValueError, json.JSONDecodeError) as exc:
        raise CorruptHeader(f"{path}: {exc}") from exc
    if window is None or channels is None or latent is None or not encoder or not decoder:
        raise CorruptHeader(f"{path}: incomplete header")

    expected = sum(8 * int(np.prod(shape)) for _, shape, _ in tensors)
    if len(blob) < expected:
        raise TruncatedBlob(f"{path}: blob has {len(blob)} bytes, header promises {expected}")
    if len(blob) > expected:
        raise CorruptHeader(f"{path}: {len(blob) - expected} trailing bytes after blob")

    params, state = {}, {}
    for key, shape, offset in tensors:
        nbytes = 8 * int(np.prod(shape))
        if offset + nbytes > len(blob):
            raise TruncatedBlob(f"{path}: tensor {key} extends past blob end")
        arr = np.frombuffer(blob, dtype="<f8", count=int(np.prod(shape)), offset=offset)
        arr = arr.reshape(shape).copy()
        if key.endswith(".running_mean") or key.endswith(".running_var"):
            state[key] = arr
        else:
            params[key] = arr

    return Autoencoder(
        window=window,
        channels=channels,
        latent_dim=latent,
        encoder=encoder,
        decoder=decoder,
        params=params,
        state=state,
        meta=meta,
    )
