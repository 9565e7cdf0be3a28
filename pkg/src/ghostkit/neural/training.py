"""Training loop, optimizers, augmentation and the Gaussian-noise baseline.

Training is deterministic end to end: initialisation, shuffling and
augmentation each draw from streams derived from their own seeds, and
batch gradients are reduced in fixed index order, so identical seeds give
bit-identical parameter trajectories.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from ..errors import TrainingDivergedError
from ..patterns import derived_rng
from .network import (
    NetworkParams,
    NetworkSpec,
    TrainingPair,
    apply_running_updates,
    init_network,
    loss_gi,
)

AUGMENTATION_MODES = ("none", "hflip", "rotation", "hflip+rotation")
OPTIMIZERS = ("adam", "sgd-momentum")

_STREAM_SHUFFLE = 5
_STREAM_AUGMENT = 6
_STREAM_GAUSS_NOISE = 7

# the comparison protocol's checkpoint grid; desk-scale runs multiply this
# by TrainConfig.epoch_scale
CHECKPOINT_EPOCH_GRID = (500, 1000, 1500, 2000)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    augmentation: str = "none"
    shuffle_seed: int = 0
    grad_clip: float | None = None
    checkpoint_epochs: tuple[int, ...] = ()
    lr_decay_epochs: tuple[int, ...] = ()
    lr_decay_factor: float = 0.1
    precision: str = "float32"  # activation dtype; master weights stay float64

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.augmentation not in AUGMENTATION_MODES:
            raise ValueError(f"unknown augmentation mode {self.augmentation!r}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be strictly positive when set")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"unknown precision {self.precision!r}")


@dataclass
class TrainResult:
    params: NetworkParams
    loss_curve: list[float]
    checkpoints: dict[int, NetworkParams] = dc_field(default_factory=dict)


class Adam:
    """Adam with bias correction; state arrays mirror the parameter list."""

    def __init__(self, tensors: Sequence[np.ndarray],
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in tensors]
        self.v = [np.zeros_like(p) for p in tensors]

    def step(self, tensors: Sequence[np.ndarray], grads: Sequence[np.ndarray],
             lr: float) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(tensors, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


class SGDMomentum:
    def __init__(self, tensors: Sequence[np.ndarray], momentum: float = 0.9):
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p in tensors]

    def step(self, tensors: Sequence[np.ndarray], grads: Sequence[np.ndarray],
             lr: float) -> None:
        for p, g, v in zip(tensors, grads, self.velocity):
            v *= self.momentum
            v -= lr * g
            p += v


def hflip_pair(pair: TrainingPair) -> TrainingPair:
    return TrainingPair(noisy=pair.noisy[:, ::-1], clean=pair.clean[:, ::-1])


def rotate_pair(pair: TrainingPair, quarter_turns: int) -> TrainingPair:
    """Rotate both members by ``quarter_turns`` * 90 degrees (square patches only)."""
    if pair.noisy.shape[0] != pair.noisy.shape[1]:
        raise ValueError("rotation requires square patches")
    k = quarter_turns % 4
    return TrainingPair(noisy=np.rot90(pair.noisy, k), clean=np.rot90(pair.clean, k))


def random_augment(pair: TrainingPair, ops: str, rng: np.random.Generator) -> TrainingPair:
    """Apply the configured random flip/rotation jointly to both members."""
    if ops not in AUGMENTATION_MODES:
        raise ValueError(f"unknown augmentation mode {ops!r}")
    if ops == "none":
        return pair
    if "hflip" in ops and rng.random() < 0.5:
        pair = hflip_pair(pair)
    if "rotation" in ops:
        pair = rotate_pair(pair, int(rng.integers(0, 4)))
    return pair


def _clip_gradients(grads: list[np.ndarray], threshold: float) -> None:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if total > threshold:
        scale = threshold / total
        for g in grads:
            g *= scale


def train(
    spec_or_params: NetworkSpec | NetworkParams,
    dataset: Sequence[TrainingPair],
    config: TrainConfig,
    init_seed: int = 0,
) -> TrainResult:
    """Deterministic mini-batch training of the residual denoiser.

    Emits the per-epoch mean loss and deep-copied parameter checkpoints at
    ``config.checkpoint_epochs``. Raises :class:`TrainingDivergedError` as
    soon as a batch loss is non-finite.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    if isinstance(spec_or_params, NetworkParams):
        params = spec_or_params.copy()
    else:
        params = init_network(spec_or_params, seed=init_seed)
    if config.augmentation != "none" and "rotation" in config.augmentation:
        shape = dataset[0].noisy.shape
        if shape[0] != shape[1]:
            raise ValueError("rotation augmentation requires square patches")

    tensors = params.trainable()
    if config.optimizer == "adam":
        optimizer = Adam(tensors, betas=config.adam_betas, eps=config.adam_eps)
    else:
        optimizer = SGDMomentum(tensors, momentum=config.momentum)

    n = len(dataset)
    lr = config.learning_rate
    dtype = np.float32 if config.precision == "float32" else np.float64
    loss_curve: list[float] = []
    checkpoints: dict[int, NetworkParams] = {}
    wanted_checkpoints = set(config.checkpoint_epochs)
    step = 0
    for epoch in range(1, config.epochs + 1):
        if epoch in config.lr_decay_epochs:
            lr *= config.lr_decay_factor
        order = derived_rng(config.shuffle_seed, _STREAM_SHUFFLE, epoch).permutation(n)
        sse_sum = 0.0
        for start in range(0, n, config.batch_size):
            batch_idx = order[start:start + config.batch_size]
            batch = []
            for idx in batch_idx:
                pair = dataset[int(idx)]
                if config.augmentation != "none":
                    rng = derived_rng(config.shuffle_seed, _STREAM_AUGMENT, epoch, int(idx))
                    pair = random_augment(pair, config.augmentation, rng)
                batch.append(pair)
            loss, grads, running_updates = loss_gi(params, batch, training=True,
                                                   dtype=dtype)
            step += 1
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch=epoch, step=step, loss=loss)
            if config.grad_clip is not None:
                _clip_gradients(grads, config.grad_clip)
            optimizer.step(tensors, grads, lr)
            apply_running_updates(params, running_updates)
            sse_sum += loss * len(batch)
        loss_curve.append(sse_sum / n)
        if epoch in wanted_checkpoints:
            checkpoints[epoch] = params.copy()
    return TrainResult(params=params, loss_curve=loss_curve, checkpoints=checkpoints)


def gaussian_pairs(
    clean_images: Sequence[np.ndarray], sigma: float, noise_seed: int = 0
) -> list[TrainingPair]:
    """Additive-white-Gaussian pairs y = x + n, n ~ N(0, sigma^2), unclipped."""
    if sigma <= 0:
        raise ValueError("sigma must be strictly positive")
    pairs = []
    for idx, img in enumerate(clean_images):
        x = np.asarray(img, dtype=np.float64)
        rng = derived_rng(noise_seed, _STREAM_GAUSS_NOISE, idx)
        y = x + sigma * rng.standard_normal(x.shape)
        pairs.append(TrainingPair(noisy=y, clean=x))
    return pairs


def gaussian_denoiser_baseline(
    spec: NetworkSpec,
    clean_images: Sequence[np.ndarray],
    sigma: float,
    config: TrainConfig,
    noise_seed: int = 0,
    init_seed: int = 0,
) -> TrainResult:
    """Train the same architecture on synthetic Gaussian noise instead of
    speckle-correlation residue; the conventional-denoiser comparison arm."""
    pairs = gaussian_pairs(clean_images, sigma, noise_seed=noise_seed)
    return train(spec, pairs, config, init_seed=init_seed)


def export_loss_curve(path, loss_curve: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss"])
        for epoch, value in enumerate(loss_curve, start=1):
            writer.writerow([epoch, repr(float(value))])
