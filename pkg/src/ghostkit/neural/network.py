"""Residual-denoising network: architecture, forward/backward, checkpoints.

The network maps a noisy image y to a predicted residual R(y); the clean
estimate is y - R(y). Layer 1 is conv+relu, layers 2..depth-1 are
conv+batchnorm+relu, the last layer is a bare conv back to one channel.
Every convolution is 3x3, same-padded, stride 1, so the output always has
the input's spatial shape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import _binio
from ..errors import CorruptionError, FormatError
from ..patterns import derived_rng
from ..recon import Reconstruction, normalize_for_display
from ..forward import ImagePlane
from .layers import (
    batch_norm_axes,
    batch_norm_axes_backward,
    conv2d_nhwc,
    conv2d_nhwc_backward,
    kernel_to_matrix,
    matrix_to_kernel,
    relu,
    relu_backward,
)

CHECKPOINT_MAGIC = b"GINN"
CHECKPOINT_FORMAT_VERSION = 1

_STREAM_INIT = 4


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture hyperparameters (defaults follow the 17-layer denoiser)."""

    depth: int = 17
    channels: int = 64
    kernel: int = 3
    input_channels: int = 1
    bn_epsilon: float = 1e-5

    def __post_init__(self):
        if self.depth < 3:
            raise ValueError("depth must be at least 3")
        if self.channels < 1 or self.input_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel size must be a positive odd integer")
        if self.bn_epsilon <= 0:
            raise ValueError("bn_epsilon must be strictly positive")

    def has_bn(self, layer_index: int) -> bool:
        """Batch norm sits on every hidden layer except the first."""
        return 0 < layer_index < self.depth - 1

    def layer_shapes(self, layer_index: int) -> tuple[int, int]:
        """(in_channels, out_channels) of a layer."""
        c_in = self.input_channels if layer_index == 0 else self.channels
        c_out = self.input_channels if layer_index == self.depth - 1 else self.channels
        return c_in, c_out


# desk-scale variant used by the experiment harness and the test gate;
# the full 17/64 architecture stays available through NetworkSpec defaults
DESK_SCALE_SPEC = NetworkSpec(depth=7, channels=32)


@dataclass
class LayerParams:
    kernel: np.ndarray
    bias: np.ndarray
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None

    @property
    def has_bn(self) -> bool:
        return self.gamma is not None

    def copy(self) -> "LayerParams":
        return LayerParams(
            kernel=self.kernel.copy(),
            bias=self.bias.copy(),
            gamma=None if self.gamma is None else self.gamma.copy(),
            beta=None if self.beta is None else self.beta.copy(),
            running_mean=None if self.running_mean is None else self.running_mean.copy(),
            running_var=None if self.running_var is None else self.running_var.copy(),
        )


@dataclass
class NetworkParams:
    """All trainable tensors plus batch-norm running statistics."""

    spec: NetworkSpec
    layers: list[LayerParams]
    init_seed: int = 0

    def copy(self) -> "NetworkParams":
        return NetworkParams(spec=self.spec, layers=[l.copy() for l in self.layers],
                             init_seed=self.init_seed)

    def trainable(self) -> list[np.ndarray]:
        """Trainable tensors in a fixed traversal order (running stats excluded)."""
        tensors: list[np.ndarray] = []
        for layer in self.layers:
            tensors.append(layer.kernel)
            tensors.append(layer.bias)
            if layer.has_bn:
                tensors.append(layer.gamma)
                tensors.append(layer.beta)
        return tensors


@dataclass(frozen=True)
class TrainingPair:
    """A noisy/clean patch pair; the learning target is ``noisy - clean``."""

    noisy: np.ndarray
    clean: np.ndarray

    def __post_init__(self):
        noisy = np.ascontiguousarray(self.noisy, dtype=np.float32)
        clean = np.ascontiguousarray(self.clean, dtype=np.float32)
        if noisy.ndim != 2 or noisy.shape != clean.shape:
            raise ValueError(
                f"noisy and clean must be 2-D with equal shapes, got {noisy.shape} vs {clean.shape}"
            )
        if not (np.all(np.isfinite(noisy)) and np.all(np.isfinite(clean))):
            raise ValueError("training pair contains non-finite values")
        object.__setattr__(self, "noisy", noisy)
        object.__setattr__(self, "clean", clean)

    @property
    def residual(self) -> np.ndarray:
        return (self.noisy - self.clean).astype(np.float64)


def stack_pairs(pairs: Sequence[TrainingPair]) -> tuple[np.ndarray, np.ndarray]:
    """(noisy, clean) float64 batches of shape (B, H, W)."""
    if len(pairs) == 0:
        raise ValueError("batch must be non-empty")
    noisy = np.stack([p.noisy for p in pairs]).astype(np.float64)
    clean = np.stack([p.clean for p in pairs]).astype(np.float64)
    return noisy, clean


def init_network(spec: NetworkSpec, seed: int = 0) -> NetworkParams:
    """He-initialised parameters: kernels N(0, 2/fan_in), biases 0, BN identity."""
    layers = []
    for i in range(spec.depth):
        c_in, c_out = spec.layer_shapes(i)
        fan_in = c_in * spec.kernel * spec.kernel
        rng = derived_rng(seed, _STREAM_INIT, i)
        kernel = rng.normal(0.0, np.sqrt(2.0 / fan_in), (c_out, c_in, spec.kernel, spec.kernel))
        layer = LayerParams(kernel=kernel, bias=np.zeros(c_out))
        if spec.has_bn(i):
            layer.gamma = np.ones(c_out)
            layer.beta = np.zeros(c_out)
            layer.running_mean = np.zeros(c_out)
            layer.running_var = np.ones(c_out)
        layers.append(layer)
    return NetworkParams(spec=spec, layers=layers, init_seed=seed)


def zero_params(spec: NetworkSpec) -> NetworkParams:
    """All-zero parameters; the network then predicts a zero residual."""
    params = init_network(spec, seed=0)
    for layer in params.layers:
        layer.kernel[...] = 0.0
        layer.bias[...] = 0.0
        if layer.has_bn:
            layer.gamma[...] = 0.0
            layer.beta[...] = 0.0
    return params


def _forward_batch(params: NetworkParams, x: np.ndarray, training: bool,
                   keep_cache: bool, dtype=np.float64):
    """Run the network on (B, H, W, 1); returns (out, caches, running_updates).

    Channels-last throughout, so convolution layers see contiguous channel
    runs and no transpose happens between layers. ``dtype`` selects the
    activation/gradient precision; master parameters stay float64.
    """
    spec = params.spec
    caches = [] if keep_cache else None
    running_updates = []
    out = np.ascontiguousarray(x, dtype=dtype)
    for i, layer in enumerate(params.layers):
        w_mat = kernel_to_matrix(layer.kernel).astype(dtype, copy=False)
        x_shape = out.shape
        out, cols = conv2d_nhwc(out, w_mat, layer.bias.astype(dtype, copy=False),
                                spec.kernel)
        conv_cache = (cols, w_mat, x_shape) if keep_cache else None
        bn_cache = None
        if layer.has_bn:
            out, bn_cache, new_rm, new_rv = batch_norm_axes(
                out, layer.gamma, layer.beta, layer.running_mean, layer.running_var,
                training=training, eps=spec.bn_epsilon, momentum=0.9,
                channel_axis=3,
            )
            running_updates.append((i, new_rm, new_rv))
        relu_cache = None
        if i < spec.depth - 1:
            out, relu_cache = relu(out)
        if keep_cache:
            caches.append((conv_cache, bn_cache, relu_cache))
    return out, caches, running_updates


def _backward_batch(params: NetworkParams, caches, grad_out: np.ndarray) -> list[np.ndarray]:
    """Backpropagate; returns gradients in ``NetworkParams.trainable()`` order."""
    spec = params.spec
    grads_per_layer: list[list[np.ndarray]] = [None] * spec.depth
    g = grad_out
    for i in range(spec.depth - 1, -1, -1):
        conv_cache, bn_cache, relu_cache = caches[i]
        if relu_cache is not None:
            g = relu_backward(g, relu_cache)
        if bn_cache is not None:
            g, d_gamma, d_beta = batch_norm_axes_backward(g, bn_cache)
        cols, w_mat, x_shape = conv_cache
        g, d_w_mat, d_bias = conv2d_nhwc_backward(g, cols, w_mat, x_shape, spec.kernel)
        c_in, c_out = spec.layer_shapes(i)
        entry = [matrix_to_kernel(d_w_mat, c_out, c_in, spec.kernel), d_bias]
        if bn_cache is not None:
            entry += [d_gamma, d_beta]
        grads_per_layer[i] = entry
    flat: list[np.ndarray] = []
    for entry in grads_per_layer:
        flat.extend(entry)
    return flat


def _validate_input_size(spec: NetworkSpec, shape: tuple[int, int]) -> None:
    if min(shape) < spec.kernel:
        raise ValueError(
            f"input {shape} is smaller than the {spec.kernel}x{spec.kernel} kernel"
        )


def forward_residual(params: NetworkParams, noisy) -> np.ndarray:
    """Predicted residual R(y) for a single (H, W) image, eval mode."""
    y = noisy.pixels if isinstance(noisy, ImagePlane) else np.asarray(noisy, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {y.shape}")
    _validate_input_size(params.spec, y.shape)
    out, _, _ = _forward_batch(params, y[None, :, :, None], training=False, keep_cache=False)
    return out[0, :, :, 0]


def forward_residual_batch(params: NetworkParams, noisy: np.ndarray,
                           training: bool = False) -> np.ndarray:
    """Predicted residuals for a (B, H, W) batch (no parameter updates)."""
    noisy = np.asarray(noisy, dtype=np.float64)
    if noisy.ndim != 3:
        raise ValueError(f"expected a (B, H, W) batch, got shape {noisy.shape}")
    _validate_input_size(params.spec, noisy.shape[1:])
    out, _, _ = _forward_batch(params, noisy[..., None], training=training, keep_cache=False)
    return out[..., 0]


def loss_gi(params: NetworkParams, batch, training: bool = True, dtype=np.float64):
    """Residual-matching loss over a batch, with full parameter gradients.

    ``batch`` is a sequence of :class:`TrainingPair` or a (noisy, clean)
    array tuple. The loss is sum_s ||R(y_s) - (y_s - x_s)||_F^2 / (2 B).
    Returns (loss, gradients, running_stat_updates); gradients follow the
    ``NetworkParams.trainable()`` order, and running-stat updates are
    (layer_index, new_mean, new_var) triples the caller may apply.

    ``dtype`` selects the activation precision: float64 is the reference
    path used by the finite-difference checks, float32 the training fast
    path.
    """
    if isinstance(batch, tuple):
        noisy, clean = (np.asarray(a, dtype=np.float64) for a in batch)
    else:
        if len(batch) == 0:
            raise ValueError("batch must be non-empty")
        noisy, clean = stack_pairs(batch)
    if noisy.shape != clean.shape or noisy.ndim != 3:
        raise ValueError("batch arrays must both have shape (B, H, W)")
    if noisy.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    _validate_input_size(params.spec, noisy.shape[1:])
    b = noisy.shape[0]
    out, caches, running_updates = _forward_batch(
        params, noisy[..., None], training=training, keep_cache=True, dtype=dtype
    )
    target = np.ascontiguousarray((noisy - clean)[..., None], dtype=dtype)
    diff = out - target
    loss = float(np.sum(diff * diff)) / (2.0 * b)
    grads = _backward_batch(params, caches, diff / np.asarray(b, dtype=dtype))
    return loss, grads, running_updates


def apply_running_updates(params: NetworkParams, running_updates) -> None:
    for i, new_rm, new_rv in running_updates:
        params.layers[i].running_mean = new_rm
        params.layers[i].running_var = new_rv


def denoise(params: NetworkParams, noisy) -> ImagePlane:
    """Clean estimate y - R(y), clamped to [0, 1].

    A :class:`Reconstruction` input is display-normalised first, matching
    how training inputs are produced; arrays and ImagePlanes are assumed to
    be already normalised.
    """
    if isinstance(noisy, Reconstruction):
        y = normalize_for_display(noisy).pixels
    elif isinstance(noisy, ImagePlane):
        y = noisy.pixels
    else:
        y = np.asarray(noisy, dtype=np.float64)
    estimate = y - forward_residual(params, y)
    return ImagePlane.from_array(np.clip(estimate, 0.0, 1.0))


def save_checkpoint(path, params: NetworkParams, provenance: dict | None = None) -> None:
    """Write parameters in the GINN binary format.

    ``provenance`` records how the network was trained (pattern-stack
    checksum, task, noise level); the harness uses it to refuse silently
    mismatched stacks.
    """
    spec = params.spec
    with open(path, "wb") as fh:
        _binio.write_magic(fh, CHECKPOINT_MAGIC, CHECKPOINT_FORMAT_VERSION)
        _binio.write_u32(fh, spec.depth)
        _binio.write_u32(fh, spec.channels)
        _binio.write_u32(fh, spec.kernel)
        _binio.write_u32(fh, spec.input_channels)
        _binio.write_f64(fh, spec.bn_epsilon)
        _binio.write_u64(fh, params.init_seed)
        _binio.write_bytes_block(fh, json.dumps(provenance or {}, sort_keys=True).encode())
        _binio.write_u32(fh, len(params.layers))
        for layer in params.layers:
            _binio.write_u8(fh, 1 if layer.has_bn else 0)
            _binio.write_array(fh, layer.kernel, "<f8")
            _binio.write_array(fh, layer.bias, "<f8")
            if layer.has_bn:
                for tensor in (layer.gamma, layer.beta, layer.running_mean, layer.running_var):
                    _binio.write_array(fh, tensor, "<f8")


def load_checkpoint(path) -> tuple[NetworkParams, dict]:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise FormatError(f"cannot open checkpoint {path}: {exc}") from exc
    with fh:
        version = _binio.read_magic(fh, CHECKPOINT_MAGIC)
        if version != CHECKPOINT_FORMAT_VERSION:
            raise FormatError(f"unsupported GINN version {version}")
        spec = NetworkSpec(
            depth=_binio.read_u32(fh),
            channels=_binio.read_u32(fh),
            kernel=_binio.read_u32(fh),
            input_channels=_binio.read_u32(fh),
            bn_epsilon=_binio.read_f64(fh),
        )
        init_seed = _binio.read_u64(fh)
        provenance = json.loads(_binio.read_bytes_block(fh).decode())
        n_layers = _binio.read_u32(fh)
        if n_layers != spec.depth:
            raise CorruptionError(f"checkpoint claims {n_layers} layers for depth {spec.depth}")
        layers = []
        for i in range(n_layers):
            has_bn = _binio.read_u8(fh) == 1
            if has_bn != spec.has_bn(i):
                raise CorruptionError(f"layer {i} batch-norm flag inconsistent with spec")
            layer = LayerParams(
                kernel=_binio.read_array(fh, "<f8"),
                bias=_binio.read_array(fh, "<f8"),
            )
            if has_bn:
                layer.gamma = _binio.read_array(fh, "<f8")
                layer.beta = _binio.read_array(fh, "<f8")
                layer.running_mean = _binio.read_array(fh, "<f8")
                layer.running_var = _binio.read_array(fh, "<f8")
                if layer.running_var.min() < 0:
                    raise CorruptionError("negative running variance in checkpoint")
            layers.append(layer)
    return NetworkParams(spec=spec, layers=layers, init_seed=init_seed), provenance
