"""Minimal deterministic neural-network substrate.

Tensors are plain float64 numpy arrays in (batch, channels, height,
width) layout.  Four layer kinds are supported: conv, conv_transpose,
batch_norm and relu.  Convolutions run as im2col + GEMM; their adjoints
(scatter-add col2im) implement both transpose convolution and the
backward data pass, so conv/conv_transpose are exact adjoints of each
other by construction.

Every kernel keeps a fixed summation order for fixed input shapes, so
results are bit-reproducible run to run.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ShapeMismatch

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class LayerSpec:
    """One layer of the network.

    relu and batch_norm ignore the kernel geometry; out_pad
    disambiguates the output size of strided transpose convolutions
    (0 <= out_pad < stride).
    """

    kind: str  # conv | conv_transpose | batch_norm | relu
    in_channels: int = 1
    out_channels: int = 1
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    out_pad: int = 0

    def __post_init__(self):
        if self.kind not in ("conv", "conv_transpose", "batch_norm", "relu"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kernel < 1 or self.stride < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("kernel, stride and channel counts must be >= 1")
        if not 0 <= self.out_pad < self.stride:
            raise ValueError("out_pad must satisfy 0 <= out_pad < stride")


def conv_out_size(n: int, kernel: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - kernel) // stride + 1


def conv_transpose_out_size(n: int, kernel: int, stride: int, padding: int, out_pad: int) -> int:
    return stride * (n - 1) + kernel - 2 * padding + out_pad


def _check_input(x, channels):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeMismatch(f"expected (N,C,H,W) tensor, got shape {x.shape}")
    if x.shape[1] != channels:
        raise ShapeMismatch(f"expected {channels} input channels, got {x.shape[1]}")
    return x


def _im2col(x, kernel, stride, padding):
    n, c, h, w = x.shape
    oh = conv_out_size(h, kernel, stride, padding)
    ow = conv_out_size(w, kernel, stride, padding)
    if oh < 1 or ow < 1:
        raise ShapeMismatch(f"kernel {kernel} does not fit input {h}x{w} with padding {padding}")
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    sn, sc, sh, sw = x.strides
    windows = as_strided(
        x,
        shape=(n, c, kernel, kernel, oh, ow),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
    )
    cols = windows.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * kernel * kernel)
    return cols, oh, ow


def _col2im(cols, out_shape, kernel, stride, padding, oh, ow):
    # scatter-add of per-window columns back onto the (padded) image;
    # fixed (u, v) loop order keeps the accumulation deterministic
    n, c, h, w = out_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    acc = np.zeros((n, c, hp, wp))
    cols = cols.reshape(n, oh, ow, c, kernel, kernel).transpose(0, 3, 4, 5, 1, 2)
    for u in range(kernel):
        for v in range(kernel):
            acc[:, :, u : u + stride * oh : stride, v : v + stride * ow : stride] += cols[
                :, :, u, v
            ]
    if padding:
        acc = acc[:, :, padding : padding + h, padding : padding + w]
    return acc


def conv_forward(x, weight, bias, stride, padding):
    """Cross-correlation; weight is (C_out, C_in, k, k)."""
    c_out, c_in, k, _ = weight.shape
    x = _check_input(x, c_in)
    cols, oh, ow = _im2col(x, k, stride, padding)
    y = cols @ weight.reshape(c_out, -1).T
    if bias is not None:
        y = y + bias
    n = x.shape[0]
    return y.reshape(n, oh, ow, c_out).transpose(0, 3, 1, 2), (x, cols, oh, ow)


def conv_backward(dy, cache, weight, stride, padding):
    x, cols, oh, ow = cache
    c_out = weight.shape[0]
    k = weight.shape[2]
    dy2 = dy.transpose(0, 2, 3, 1).reshape(-1, c_out)
    db = dy2.sum(axis=0)
    dw = (dy2.T @ cols).reshape(weight.shape)
    dcols = dy2 @ weight.reshape(c_out, -1)
    dx = _col2im(dcols, x.shape, k, stride, padding, oh, ow)
    return dx, dw, db


def conv_transpose_forward(x, weight, bias, stride, padding, out_pad):
    """Adjoint of conv_forward; weight is (C_in, C_out, k, k)."""
    c_in, c_out, k, _ = weight.shape
    x = _check_input(x, c_in)
    n, _, h, w = x.shape
    h_out = conv_transpose_out_size(h, k, stride, padding, out_pad)
    w_out = conv_transpose_out_size(w, k, stride, padding, out_pad)
    if h_out < 1 or w_out < 1:
        raise ShapeMismatch("transpose convolution output collapsed to zero size")
    x2 = x.transpose(0, 2, 3, 1).reshape(-1, c_in)
    cols = x2 @ weight.reshape(c_in, -1)
    y = _col2im(cols, (n, c_out, h_out, w_out), k, stride, padding, h, w)
    if bias is not None:
        y = y + bias.reshape(1, -1, 1, 1)
    return y, (x, x2, h, w)


def conv_transpose_backward(dy, cache, weight, stride, padding, out_pad):
    x, x2, h, w = cache
    c_in = weight.shape[0]
    k = weight.shape[2]
    cols, oh, ow = _im2col(dy, k, stride, padding)
    if (oh, ow) != (h, w):
        raise ShapeMismatch("gradient shape does not match transpose convolution input")
    dx2 = cols @ weight.reshape(c_in, -1).T
    dx = dx2.reshape(x.shape[0], h, w, c_in).transpose(0, 3, 1, 2)
    dw = (x2.T @ cols).reshape(weight.shape)
    db = dy.sum(axis=(0, 2, 3))
    return dx, dw, db


def batch_norm_forward(x, gamma, beta, running_mean, running_var, mode):
    """Per-channel normalization.

    Train mode normalizes with batch statistics and returns updated
    running statistics (momentum 0.1, unbiased variance); eval mode
    uses the running statistics and returns them unchanged.
    """
    x = _check_input(x, gamma.shape[0])
    if mode == "train":
        n_elem = x.shape[0] * x.shape[2] * x.shape[3]
        if x.shape[0] < 2:
            raise ShapeMismatch("batch_norm in train mode requires batch >= 2")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        new_mean = (1 - BN_MOMENTUM) * running_mean + BN_MOMENTUM * mean
        new_var = (1 - BN_MOMENTUM) * running_var + BN_MOMENTUM * var * n_elem / (n_elem - 1)
    elif mode == "eval":
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return y, (xhat, inv_std, mode), (new_mean, new_var)


def batch_norm_backward(dy, cache, gamma):
    xhat, inv_std, mode = cache
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    g = gamma[None, :, None, None] * inv_std[None, :, None, None]
    if mode == "eval":
        return dy * g, dgamma, dbeta
    m = dy.shape[0] * dy.shape[2] * dy.shape[3]
    dxhat = dy * gamma[None, :, None, None]
    dx = (
        inv_std[None, :, None, None]
        / m
        * (
            m * dxhat
            - dxhat.sum(axis=(0, 2, 3), keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        )
    )
    return dx, dgamma, dbeta


def relu_forward(x):
    return np.maximum(x, 0.0), x


def relu_backward(dy, cache):
    return dy * (cache > 0.0)


# ---------------------------------------------------------------------------
# networks: ordered layer lists with a flat parameter dict


def init_layer_params(spec: LayerSpec, rng) -> dict:
    """He-uniform weights, zero biases; batch norm starts at identity."""
    if spec.kind == "conv":
        fan_in = spec.in_channels * spec.kernel**2
        bound = math.sqrt(6.0 / fan_in)
        shape = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
        return {
            "weight": rng.uniform(-bound, bound, size=shape),
            "bias": np.zeros(spec.out_channels),
        }
    if spec.kind == "conv_transpose":
        fan_in = spec.in_channels * spec.kernel**2
        bound = math.sqrt(6.0 / fan_in)
        shape = (spec.in_channels, spec.out_channels, spec.kernel, spec.kernel)
        return {
            "weight": rng.uniform(-bound, bound, size=shape),
            "bias": np.zeros(spec.out_channels),
        }
    if spec.kind == "batch_norm":
        return {
            "gamma": np.ones(spec.in_channels),
            "beta": np.zeros(spec.in_channels),
        }
    return {}


def init_network(specs, rng, prefix: str):
    """Parameter and running-statistic dicts for a layer list.

    Keys are '<prefix><layer index>.<tensor>'.  Drawing order follows
    the layer order, so equal seeds give bit-equal parameters.
    """
    params, state = {}, {}
    for i, spec in enumerate(specs):
        for name, value in init_layer_params(spec, rng).items():
            params[f"{prefix}{i}.{name}"] = value
        if spec.kind == "batch_norm":
            state[f"{prefix}{i}.running_mean"] = np.zeros(spec.in_channels)
            state[f"{prefix}{i}.running_var"] = np.ones(spec.in_channels)
    return params, state


def layer_forward(spec: LayerSpec, params: dict, x, mode: str = "eval", state: dict = None):
    """Run a single layer; params/state use bare tensor names."""
    if spec.kind == "conv":
        y, _ = conv_forward(x, params["weight"], params["bias"], spec.stride, spec.padding)
        return y
    if spec.kind == "conv_transpose":
        y, _ = conv_transpose_forward(
            x, params["weight"], params["bias"], spec.stride, spec.padding, spec.out_pad
        )
        return y
    if spec.kind == "batch_norm":
        state = state or {}
        y, _, _ = batch_norm_forward(
            x,
            params["gamma"],
            params["beta"],
            state.get("running_mean", np.zeros(spec.in_channels)),
            state.get("running_var", np.ones(spec.in_channels)),
            mode,
        )
        return y
    y, _ = relu_forward(np.asarray(x, dtype=np.float64))
    return y


def network_forward(specs, params, state, x, mode: str = "eval", prefix: str = "", keep_cache=False):
    """Forward through a layer list.

    Returns (y, caches, new_state); new_state carries updated batch-norm
    running statistics in train mode and is the input state otherwise.
    Caches are only retained when keep_cache is set (for backprop).
    """
    x = np.asarray(x, dtype=np.float64)
    caches = []
    new_state = dict(state)
    for i, spec in enumerate(specs):
        key = f"{prefix}{i}"
        if spec.kind == "conv":
            x, cache = conv_forward(
                x, params[f"{key}.weight"], params[f"{key}.bias"], spec.stride, spec.padding
            )
        elif spec.kind == "conv_transpose":
            x, cache = conv_transpose_forward(
                x,
                params[f"{key}.weight"],
                params[f"{key}.bias"],
                spec.stride,
                spec.padding,
                spec.out_pad,
            )
        elif spec.kind == "batch_norm":
            x, cache, (rm, rv) = batch_norm_forward(
                x,
                params[f"{key}.gamma"],
                params[f"{key}.beta"],
                new_state[f"{key}.running_mean"],
                new_state[f"{key}.running_var"],
                mode,
            )
            new_state[f"{key}.running_mean"] = rm
            new_state[f"{key}.running_var"] = rv
        else:
            x, cache = relu_forward(x)
        caches.append(cache if keep_cache else None)
    return x, caches, new_state


def network_backward(specs, params, caches, dy, prefix: str = ""):
    """Reverse-mode gradients through a layer list.

    Returns (grads, dx); grads is keyed like the parameter dict.
    """
    grads = {}
    for i in range(len(specs) - 1, -1, -1):
        spec, cache = specs[i], caches[i]
        key = f"{prefix}{i}"
        if spec.kind == "conv":
            dy, dw, db = conv_backward(dy, cache, params[f"{key}.weight"], spec.stride, spec.padding)
            grads[f"{key}.weight"] = dw
            grads[f"{key}.bias"] = db
        elif spec.kind == "conv_transpose":
            dy, dw, db = conv_transpose_backward(
                dy, cache, params[f"{key}.weight"], spec.stride, spec.padding, spec.out_pad
            )
            grads[f"{key}.weight"] = dw
            grads[f"{key}.bias"] = db
        elif spec.kind == "batch_norm":
            dy, dgamma, dbeta = batch_norm_backward(dy, cache, params[f"{key}.gamma"])
            grads[f"{key}.gamma"] = dgamma
            grads[f"{key}.beta"] = dbeta
        else:
            dy = relu_backward(dy, cache)
    return grads, dy


# ---------------------------------------------------------------------------
# losses


def _check_same_shape(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    return pred, target


def mse_loss(pred, target) -> float:
    pred, target = _check_same_shape(pred, target)
    d = pred - target
    return float(np.mean(d * d))


def mse_loss_grad(pred, target):
    pred, target = _check_same_shape(pred, target)
    return 2.0 * (pred - target) / pred.size


@dataclass
class GaussianMask:
    """Center-weighted pixel mask, peak 1/(2*pi*sigma^2) at the middle."""

    window: tuple
    sigma: float
    weights: np.ndarray  # (wy, wx)


def gaussian_mask(window, sigma: float) -> GaussianMask:
    """Isotropic 2D Gaussian over integer pixel offsets from the center.

    weight(m, n) = exp(-(m^2+n^2) / (2 sigma^2)) / (2 pi sigma^2).
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    wx, wy = int(window[0]), int(window[1])
    mx = np.arange(wx) - wx // 2
    ny = np.arange(wy) - wy // 2
    r2 = ny[:, None] ** 2 + mx[None, :] ** 2
    weights = np.exp(-r2 / (2.0 * sigma**2)) / (2.0 * math.pi * sigma**2)
    return GaussianMask(window=(wx, wy), sigma=float(sigma), weights=weights)


def weighted_mse_loss(pred, target, mask: GaussianMask) -> float:
    """Gaussian-weighted squared error, averaged over all elements.

    The same element-count reduction as mse_loss keeps the two losses
    comparable in magnitude.
    """
    pred, target = _check_same_shape(pred, target)
    if pred.shape[-2:] != mask.weights.shape:
        raise ShapeMismatch(f"spatial dims {pred.shape[-2:]} vs mask {mask.weights.shape}")
    d = pred - target
    return float(np.sum(mask.weights * d * d) / pred.size)


def weighted_mse_loss_grad(pred, target, mask: GaussianMask):
    pred, target = _check_same_shape(pred, target)
    return 2.0 * mask.weights * (pred - target) / pred.size


# ---------------------------------------------------------------------------
# Adamax


@dataclass
class AdamaxState:
    alpha: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    weighted_inf_norm: dict = field(default_factory=dict)


def adamax_init(params, alpha=0.002, beta1=0.9, beta2=0.999, epsilon=1e-8) -> AdamaxState:
    state = AdamaxState(alpha=alpha, beta1=beta1, beta2=beta2, epsilon=epsilon)
    for key, value in params.items():
        state.first_moment[key] = np.zeros_like(value)
        state.weighted_inf_norm[key] = np.zeros_like(value)
    return state


def adamax_step(params, grads, state: AdamaxState):
    """One infinity-norm Adam update, in place.

    m <- b1*m + (1-b1)*g;  u <- max(b2*u, |g|);
    theta <- theta - alpha/(1-b1^t) * m/(u+eps).
    """
    state.step_count += 1
    lr = state.alpha / (1.0 - state.beta1**state.step_count)
    for key, g in grads.items():
        m = state.first_moment[key]
        u = state.weighted_inf_norm[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        np.maximum(state.beta2 * u, np.abs(g), out=u)
        params[key] -= lr * m / (u + state.epsilon)
    return params, state


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradcheckReport:
    max_rel_error: float
    worst_key: str
    n_checked: int
    per_tensor: dict


def gradcheck(
    specs,
    params,
    state,
    x,
    target=None,
    loss: str = "plain",
    mask: GaussianMask = None,
    step: float = 1e-3,
    max_checks_per_tensor: int = 25,
    seed: int = 0,
) -> GradcheckReport:
    """Central finite differences against the analytic gradients.

    Probes up to max_checks_per_tensor coordinates of every parameter
    tensor (all of them when the tensor is small) and reports the worst
    relative error; train-mode forward, running statistics untouched.
    """
    x = np.asarray(x, dtype=np.float64)
    target = x if target is None else np.asarray(target, dtype=np.float64)
    rng = np.random.default_rng(seed)

    def loss_of(pred):
        if loss == "weighted":
            return weighted_mse_loss(pred, target, mask)
        return mse_loss(pred, target)

    def loss_grad(pred):
        if loss == "weighted":
            return weighted_mse_loss_grad(pred, target, mask)
        return mse_loss_grad(pred, target)

    def evaluate():
        y, _, _ = network_forward(specs, params, state, x, mode="train")
        return loss_of(y)

    y, caches, _ = network_forward(specs, params, state, x, mode="train", keep_cache=True)
    grads, _ = network_backward(specs, params, caches, loss_grad(y))

    worst, worst_key, checked = 0.0, "", 0
    per_tensor = {}
    for key in sorted(grads):
        tensor = params[key]
        flat = tensor.reshape(-1)
        n = flat.size
        if n <= max_checks_per_tensor:
            idx = np.arange(n)
        else:
            idx = rng.choice(n, size=max_checks_per_tensor, replace=False)
        tensor_worst = 0.0
        for i in idx:
            original = flat[i]
            flat[i] = original + step
            up = evaluate()
            flat[i] = original - step
            down = evaluate()
            flat[i] = original
            numeric = (up - down) / (2.0 * step)
            analytic = grads[key].reshape(-1)[i]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            tensor_worst = max(tensor_worst, rel)
            checked += 1
        per_tensor[key] = tensor_worst
        if tensor_worst > worst:
            worst, worst_key = tensor_worst, key
    return GradcheckReport(
        max_rel_error=worst, worst_key=worst_key, n_checked=checked, per_tensor=per_tensor
    )
