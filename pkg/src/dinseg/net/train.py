"""Training loop: batch assembly with simulated clicks, augmentation,
weighted cross-entropy, Adam, and plateau-driven learning-rate decay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..clicksim import SamplingConfig, sample_training_clicks
from ..transforms import ClickSet, ExpParams, expdt
from ..volume import Mask, Volume, VolumeError
from .layers import softmax, weighted_ce
from .model import DinModel, normalize_volume
from .optim import Adam


@dataclass(frozen=True)
class AugmentConfig:
    enable_flips: bool = True
    enable_rotate_scale: bool = True
    enable_gamma: bool = True
    scale_range: tuple[float, float] = (1.0, 1.25)
    rot_std_deg: float = 5.0
    gamma_range: tuple[float, float] = (0.7, 1.5)

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(enable_flips=False, enable_rotate_scale=False, enable_gamma=False)


@dataclass(frozen=True)
class TrainConfig:
    loss_weights: tuple[float, float] = (1.0, 3.0)  # (background, foreground)
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    lr: float = 3e-4
    lr_factor: float = 0.2
    lr_patience: int = 30
    lr_floor: float = 1e-6
    batches_per_epoch: int = 200
    batch_size: int = 8
    epochs: int = 250
    tumor_fraction: float = 0.5
    val_fraction: float = 0.2
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    log_clicks: bool = False

    def __post_init__(self) -> None:
        if any(w <= 0 for w in self.loss_weights):
            raise VolumeError("loss weights must be positive")
        if not (0.0 < self.lr_factor < 1.0):
            raise VolumeError("lr_factor must lie in (0, 1)")


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


def _rotate_scale_plane(
    image: np.ndarray, mask: np.ndarray, angle_deg: float, scale: float
) -> tuple[np.ndarray, np.ndarray]:
    """In-plane rotation+scaling about the slice center; bilinear image,
    nearest-neighbor mask, zeros outside."""
    d, h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy, dx = yy - cy, xx - cx
    a = math.radians(angle_deg)
    ca, sa = math.cos(a), math.sin(a)
    sy = (ca * dy + sa * dx) / scale + cy
    sx = (-sa * dy + ca * dx) / scale + cx

    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy = (sy - y0).astype(np.float32)
    fx = (sx - x0).astype(np.float32)

    def gather(arr: np.ndarray, iy: np.ndarray, ix: np.ndarray) -> np.ndarray:
        valid = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
        out = arr[:, np.clip(iy, 0, h - 1), np.clip(ix, 0, w - 1)]
        return np.where(valid[None], out, np.zeros((), dtype=arr.dtype))

    img = (
        gather(image, y0, x0) * (1 - fy)[None] * (1 - fx)[None]
        + gather(image, y0, x0 + 1) * (1 - fy)[None] * fx[None]
        + gather(image, y0 + 1, x0) * fy[None] * (1 - fx)[None]
        + gather(image, y0 + 1, x0 + 1) * fy[None] * fx[None]
    ).astype(np.float32)

    ry = np.floor(sy + 0.5).astype(np.int64)
    rx = np.floor(sx + 0.5).astype(np.int64)
    mvalid = (ry >= 0) & (ry < h) & (rx >= 0) & (rx < w)
    msk = mask[:, np.clip(ry, 0, h - 1), np.clip(rx, 0, w - 1)] & mvalid[None]
    return img, msk


def augment(
    image: np.ndarray,
    mask: np.ndarray,
    rng: np.random.Generator,
    cfg: AugmentConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Flips in all three axes, in-plane rotation+scale, gamma transform.

    With everything disabled the inputs pass through untouched.
    """
    if cfg.enable_flips:
        for axis in range(3):
            if rng.random() < 0.5:
                image = np.flip(image, axis=axis)
                mask = np.flip(mask, axis=axis)
        image = np.ascontiguousarray(image)
        mask = np.ascontiguousarray(mask)

    if cfg.enable_rotate_scale:
        angle = float(rng.normal(0.0, cfg.rot_std_deg))
        scale = float(rng.uniform(*cfg.scale_range))
        if angle != 0.0 or scale != 1.0:
            image, mask = _rotate_scale_plane(image, mask, angle, scale)

    if cfg.enable_gamma:
        g = float(rng.uniform(*cfg.gamma_range))
        lo, hi = float(image.min()), float(image.max())
        if g != 1.0 and hi > lo:
            image = (lo + (hi - lo) * ((image - lo) / (hi - lo)) ** np.float32(g)).astype(np.float32)

    return image, mask


# ---------------------------------------------------------------------------
# Batch assembly
# ---------------------------------------------------------------------------


def _crop_to(
    image: np.ndarray,
    mask: np.ndarray,
    out_dims: tuple[int, int, int],
    rng: np.random.Generator,
    force_tumor: bool,
) -> tuple[np.ndarray, np.ndarray]:
    dims = image.shape
    if dims == out_dims:
        return image, mask
    if any(o > d for o, d in zip(out_dims, dims)):
        raise VolumeError(f"volume {dims} smaller than the network input {out_dims}")
    if force_tumor and mask.any():
        coords = np.argwhere(mask)
        center = coords[int(rng.integers(coords.shape[0]))]
        offs = [int(np.clip(center[i] - out_dims[i] // 2, 0, dims[i] - out_dims[i])) for i in range(3)]
    else:
        offs = [int(rng.integers(0, dims[i] - out_dims[i] + 1)) for i in range(3)]
    sl = tuple(slice(o, o + out_dims[i]) for i, o in enumerate(offs))
    return image[sl], mask[sl]


def _make_sample(
    vol: Volume,
    gt: Mask,
    in_dims: tuple[int, int, int],
    rng: np.random.Generator,
    tcfg: TrainConfig,
    scfg: SamplingConfig,
    exp_params: ExpParams,
    force_tumor: bool,
    augment_cfg: AugmentConfig | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, ClickSet]:
    img, msk = _crop_to(vol.data, gt.data, in_dims, rng, force_tumor)
    if augment_cfg is not None:
        img, msk = augment(img, msk, rng, augment_cfg)
    if msk.any():
        try:
            clicks = sample_training_clicks(Mask(msk, gt.spacing), scfg, rng)
        except VolumeError:
            # margin erosion can wipe out mid-sized rounded lesions entirely;
            # fall back to clicking anywhere inside them
            from dataclasses import replace

            clicks = sample_training_clicks(Mask(msk, gt.spacing), replace(scfg, d_margin=0), rng)
    else:
        clicks = ClickSet()
    fg = expdt(in_dims, clicks.positives, exp_params).data
    bg = expdt(in_dims, clicks.negatives, exp_params).data
    norm = normalize_volume(Volume(img, vol.spacing))
    return norm, np.stack([fg, bg]), msk.astype(np.int64), clicks


class PlateauSchedule:
    """Learning-rate decay on validation-loss plateaus.

    The rate is multiplied by ``factor`` whenever the loss has not improved
    for ``patience`` consecutive epochs, and never drops below ``floor``.
    """

    def __init__(self, lr: float, factor: float, patience: int, floor: float):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.floor = floor
        self.best = float("inf")
        self.wait = 0

    def update(self, val_loss: float) -> bool:
        """Track one epoch's validation loss; returns True on a new best."""
        if val_loss < self.best:
            self.best = val_loss
            self.wait = 0
            return True
        self.wait += 1
        if self.wait >= self.patience:
            self.lr = max(self.lr * self.factor, self.floor)
            self.wait = 0
        return False


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float

    def csv_row(self) -> str:
        return f"{self.epoch},{self.train_loss:.6f},{self.val_loss:.6f},{self.lr:.2e}"


@dataclass
class TrainResult:
    model: DinModel
    best_params: dict[str, np.ndarray]
    best_val_loss: float
    history: list[EpochStats]
    optimizer: Adam
    clicks_log: list[tuple[int, int, ClickSet]] = field(default_factory=list)

    def restore_best(self) -> DinModel:
        for name, value in self.best_params.items():
            self.model.set_param(name, value.copy())
        return self.model


def train(
    model: DinModel,
    dataset: Sequence[tuple[Volume, Mask]],
    tcfg: TrainConfig,
    scfg: SamplingConfig | None = None,
    exp_params: ExpParams | None = None,
) -> TrainResult:
    """Train on (volume, mask) pairs with clicks resampled every batch.

    The validation split (val_fraction of the dataset, rounded down, at
    least one sample when the fraction is positive) gets a fixed click set
    and no augmentation so its loss is comparable across epochs; the
    checkpointed parameters are the ones with the best validation loss.
    """
    if not dataset:
        raise VolumeError("empty training dataset")
    if not any(gt.data.any() for _, gt in dataset):
        raise VolumeError("dataset contains no foreground at all")
    scfg = scfg or SamplingConfig()
    exp_params = exp_params or ExpParams()
    rng = np.random.default_rng(tcfg.seed)
    in_dims = model.cfg.in_dims

    order = rng.permutation(len(dataset))
    n_val = int(len(dataset) * tcfg.val_fraction)
    if tcfg.val_fraction > 0:
        n_val = max(1, n_val)
    val_idx = [int(i) for i in order[:n_val]]
    train_idx = [int(i) for i in order[n_val:]] or val_idx
    tumor_idx = [i for i in train_idx if dataset[i][1].data.any()] or train_idx

    val_batch = []
    for i in val_idx:
        vol, gt = dataset[i]
        val_batch.append(_make_sample(vol, gt, in_dims, rng, tcfg, scfg, exp_params, True, None))

    opt = Adam(tcfg.beta1, tcfg.beta2, tcfg.eps)
    schedule = PlateauSchedule(tcfg.lr, tcfg.lr_factor, tcfg.lr_patience, tcfg.lr_floor)
    best_params = {k: v.copy() for k, v in model.named_params().items()}
    history: list[EpochStats] = []
    clicks_log: list[tuple[int, int, ClickSet]] = []

    for epoch in range(tcfg.epochs):
        losses = []
        for _ in range(tcfg.batches_per_epoch):
            n_forced = int(math.ceil(tcfg.batch_size * tcfg.tumor_fraction))
            imgs, guides, targets = [], [], []
            for b in range(tcfg.batch_size):
                forced = b < n_forced
                pool = tumor_idx if forced else train_idx
                i = pool[int(rng.integers(len(pool)))]
                vol, gt = dataset[i]
                norm, gpair, tgt, clicks = _make_sample(
                    vol, gt, in_dims, rng, tcfg, scfg, exp_params, forced, tcfg.augment
                )
                if tcfg.log_clicks:
                    clicks_log.append((epoch, i, clicks))
                imgs.append(norm)
                guides.append(gpair)
                targets.append(tgt)
            x = np.stack(imgs)[:, None]
            g = np.stack(guides)
            t = np.stack(targets)
            logits = model.forward(x, g)
            loss, dlogits = weighted_ce(softmax(logits), t, tcfg.loss_weights)
            model.zero_grads()
            model.backward(dlogits)
            opt.step(model.named_params(), model.named_grads(), schedule.lr)
            losses.append(loss)

        val_losses = []
        for norm, gpair, tgt, _ in val_batch:
            logits = model.forward(norm[None, None], gpair[None])
            vloss, _ = weighted_ce(softmax(logits), tgt[None], tcfg.loss_weights)
            val_losses.append(vloss)
        val_loss = float(np.mean(val_losses)) if val_losses else float(np.mean(losses))

        history.append(EpochStats(epoch, float(np.mean(losses)), val_loss, schedule.lr))

        if schedule.update(val_loss):
            best_params = {k: v.copy() for k, v in model.named_params().items()}

    return TrainResult(model, best_params, schedule.best, history, opt, clicks_log)
