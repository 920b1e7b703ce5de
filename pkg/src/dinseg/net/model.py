"""Encoder-decoder segmentation network with a deep interactive module.

Five encoder stages with anisotropic kernels: in-plane (1,3,3) kernels in
the two shallowest stages, (3,3,3) below; downsampling by strided
convolution at each stage entry ((1,2,2) for stages 2-4, (2,2,2) for
stage 5); a mirrored decoder of non-overlapping deconvolutions with skip
concatenations; instance norm + ReLU after every convolution; a 1x1x1
output convolution with softmax.

The interactive module has two outputs: the raw foreground/background
guide pair concatenated with the image at the input, and a pooled+convolved
copy added to the first instance-norm output of a chosen encoder stage
(the deepest by default) right before its ReLU.  Variants:

* ``full``          -- both outputs, injection at stage 5 (same as insert_at_5)
* ``input_only``    -- guide pair at the input only
* ``highest_only``  -- injection only; the network input is the bare image
* ``v2``            -- injection path uses pool (1,4,4) + two strided convs
* ``insert_at_N``   -- injection at encoder stage N (1..5)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..transforms import ClickSet, ExpParams, expdt
from ..volume import BoundingBox, Mask, Volume, VolumeError, paste_mask
from . import layers
from .layers import Conv3d, Deconv3d, InstanceNorm3d, MaxPool3d, ReLU, softmax

DIM_VARIANTS = (
    "full",
    "input_only",
    "highest_only",
    "v2",
    "insert_at_1",
    "insert_at_2",
    "insert_at_3",
    "insert_at_4",
    "insert_at_5",
)

# (kernel, entry stride) per encoder stage; decoder mirrors them.
_STAGE_KERNELS = [(1, 3, 3), (1, 3, 3), (3, 3, 3), (3, 3, 3), (3, 3, 3)]
_STAGE_STRIDES = [(1, 1, 1), (1, 2, 2), (1, 2, 2), (1, 2, 2), (2, 2, 2)]


@dataclass(frozen=True)
class NetConfig:
    in_dims: tuple[int, int, int] = (8, 64, 64)
    channels: tuple[int, int, int, int, int] = (8, 16, 32, 64, 96)
    dim_variant: str = "full"
    num_classes: int = 2

    def __post_init__(self) -> None:
        d, h, w = self.in_dims
        if d % 2 or h % 16 or w % 16:
            raise VolumeError(f"in_dims must satisfy D % 2 == 0 and H, W % 16 == 0, got {self.in_dims}")
        if len(self.channels) != 5:
            raise VolumeError("channel schedule must list 5 stages")
        if self.dim_variant not in DIM_VARIANTS:
            raise VolumeError(f"dim_variant must be one of {DIM_VARIANTS}")

    @property
    def insert_stage(self) -> int | None:
        """Encoder stage receiving the injected guide features, or None."""
        if self.dim_variant == "input_only":
            return None
        if self.dim_variant.startswith("insert_at_"):
            return int(self.dim_variant[-1])
        return 5

    @property
    def uses_input_guides(self) -> bool:
        return self.dim_variant != "highest_only"

    @property
    def in_channels(self) -> int:
        return 3 if self.uses_input_guides else 1


def check_dims_legal(dims: tuple[int, int, int]) -> None:
    d, h, w = dims
    if d % 2 or h % 16 or w % 16:
        raise VolumeError(f"dims {dims} not legal: need D % 2 == 0 and H, W % 16 == 0")


class _ConvBlock:
    """conv -> instance norm -> (optional external add) -> relu"""

    def __init__(self, c_in, c_out, kernel, stride, rng):
        self.conv = Conv3d(c_in, c_out, kernel, stride, rng)
        self.norm = InstanceNorm3d(c_out)
        self.relu = ReLU()

    def forward(self, x: np.ndarray, inject: np.ndarray | None = None) -> np.ndarray:
        y = self.norm.forward(self.conv.forward(x))
        if inject is not None:
            if inject.shape != y.shape:
                raise VolumeError(f"injected guide shape {inject.shape} != feature shape {y.shape}")
            y = y + inject
        return self.relu.forward(y)

    def backward(self, dy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Returns (dx, gradient at the injection point)."""
        dpre = self.relu.backward(dy)
        return self.conv.backward(self.norm.backward(dpre)), dpre

    def layers(self) -> list[tuple[str, layers.Layer]]:
        return [("conv", self.conv), ("norm", self.norm)]


class _DimPath:
    """Pool + conv(s) taking the 2-channel guide pair to an encoder feature map."""

    def __init__(self, cfg: NetConfig, rng: np.random.Generator):
        stage = cfg.insert_stage
        assert stage is not None
        c_out = cfg.channels[stage - 1]
        stride = _STAGE_STRIDES[stage - 1]
        if cfg.dim_variant == "v2":
            self.pool = MaxPool3d((1, 4, 4))
            self.convs = [
                Conv3d(2, c_out, (3, 3, 3), (1, 2, 2), rng),
                Conv3d(c_out, c_out, (3, 3, 3), (2, 2, 2), rng),
            ]
        else:
            plane = 2 ** (stage - 2) if stage >= 2 else 1
            self.pool = MaxPool3d((1, plane, plane)) if plane > 1 else None
            self.convs = [Conv3d(2, c_out, (3, 3, 3), stride, rng)]

    def forward(self, guides: np.ndarray) -> np.ndarray:
        y = self.pool.forward(guides) if self.pool is not None else guides
        for conv in self.convs:
            y = conv.forward(y)
        return y

    def backward(self, dy: np.ndarray) -> None:
        # Guides are network inputs, not parameters: propagate only far
        # enough to fill the conv gradients.
        for conv in reversed(self.convs):
            dy = conv.backward(dy)

    def layers(self) -> list[tuple[str, layers.Layer]]:
        return [(f"conv{i}", c) for i, c in enumerate(self.convs)]


class DinModel:
    """The assembled network: stages, interactive path, explicit backward."""

    def __init__(self, cfg: NetConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        ch = cfg.channels
        c_in = cfg.in_channels

        self.encoder: list[list[_ConvBlock]] = []
        prev = c_in
        for i in range(5):
            k, s = _STAGE_KERNELS[i], _STAGE_STRIDES[i]
            stage = [
                _ConvBlock(prev, ch[i], k, s, rng),
                _ConvBlock(ch[i], ch[i], k, (1, 1, 1), rng),
            ]
            self.encoder.append(stage)
            prev = ch[i]

        self.deconvs: list[Deconv3d] = []
        self.decoder: list[list[_ConvBlock]] = []
        for i in (3, 2, 1, 0):  # decoder stages 4..1 mirror encoder stages 4..1
            up_kernel = _STAGE_STRIDES[i + 1]
            self.deconvs.append(Deconv3d(prev, ch[i], up_kernel, rng))
            k = _STAGE_KERNELS[i]
            stage = [
                _ConvBlock(2 * ch[i], ch[i], k, (1, 1, 1), rng),
                _ConvBlock(ch[i], ch[i], k, (1, 1, 1), rng),
            ]
            self.decoder.append(stage)
            prev = ch[i]

        self.out_conv = Conv3d(ch[0], cfg.num_classes, (1, 1, 1), (1, 1, 1), rng)
        self.dim_path = _DimPath(cfg, rng) if cfg.insert_stage is not None else None

    # -- parameter plumbing ------------------------------------------------

    def modules(self) -> Iterator[tuple[str, layers.Layer]]:
        for i, stage in enumerate(self.encoder, start=1):
            for j, block in enumerate(stage):
                for name, layer in block.layers():
                    yield f"e{i}.{j}.{name}", layer
        for idx, i in enumerate((4, 3, 2, 1)):
            yield f"d{i}.up", self.deconvs[idx]
            for j, block in enumerate(self.decoder[idx]):
                for name, layer in block.layers():
                    yield f"d{i}.{j}.{name}", layer
        yield "out.conv", self.out_conv
        if self.dim_path is not None:
            for name, layer in self.dim_path.layers():
                yield f"dim.{name}", layer

    def named_params(self) -> dict[str, np.ndarray]:
        return {f"{m}.{k}": v for m, layer in self.modules() for k, v in layer.params.items()}

    def named_grads(self) -> dict[str, np.ndarray]:
        return {f"{m}.{k}": v for m, layer in self.modules() for k, v in layer.grads.items()}

    def set_param(self, name: str, value: np.ndarray) -> None:
        mod, key = name.rsplit(".", 1)
        for m, layer in self.modules():
            if m == mod:
                if layer.params[key].shape != value.shape:
                    raise VolumeError(f"shape mismatch for {name}")
                layer.params[key] = value
                return
        raise VolumeError(f"unknown parameter {name}")

    def zero_grads(self) -> None:
        for _, layer in self.modules():
            layer.zero_grads()

    def cast(self, dtype: type) -> None:
        for _, layer in self.modules():
            layer.cast(dtype)

    def signature(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        """Architecture fingerprint: sorted parameter names and shapes."""
        return tuple(sorted((k, v.shape) for k, v in self.named_params().items()))

    # -- forward / backward -------------------------------------------------

    def forward(self, image: np.ndarray, guides: np.ndarray | None) -> np.ndarray:
        """Logits for a batch. ``image`` is (N,1,D,H,W); ``guides`` (N,2,D,H,W)."""
        check_dims_legal(image.shape[2:])
        if self.cfg.uses_input_guides or self.dim_path is not None:
            if guides is None:
                raise VolumeError("this variant requires guide maps")
            if guides.shape[2:] != image.shape[2:]:
                raise VolumeError("guides must match the image extent")

        x = np.concatenate([image, guides], axis=1) if self.cfg.uses_input_guides else image
        inject = self.dim_path.forward(guides) if self.dim_path is not None else None
        target_stage = self.cfg.insert_stage

        skips = []
        for i, stage in enumerate(self.encoder, start=1):
            x = stage[0].forward(x, inject if i == target_stage else None)
            x = stage[1].forward(x)
            skips.append(x)

        for idx, i in enumerate((4, 3, 2, 1)):
            x = self.deconvs[idx].forward(x)
            x = np.concatenate([x, skips[i - 1]], axis=1)
            x = self.decoder[idx][0].forward(x)
            x = self.decoder[idx][1].forward(x)

        return self.out_conv.forward(x)

    def backward(self, dlogits: np.ndarray) -> None:
        """Accumulate parameter gradients from the logit gradient."""
        dx = self.out_conv.backward(dlogits)
        dskips: list[np.ndarray | None] = [None] * 5
        for idx, i in zip((3, 2, 1, 0), (1, 2, 3, 4)):  # reverse of the forward order
            dx, _ = self.decoder[idx][1].backward(dx)
            dx, _ = self.decoder[idx][0].backward(dx)
            c_up = self.deconvs[idx].c_out
            dup, dskip = dx[:, :c_up], dx[:, c_up:]
            dskips[i - 1] = dskip
            dx = self.deconvs[idx].backward(np.ascontiguousarray(dup))

        target_stage = self.cfg.insert_stage
        dinject = None
        for i in range(5, 0, -1):
            stage = self.encoder[i - 1]
            if dskips[i - 1] is not None:
                dx = dx + dskips[i - 1]
            dx, _ = stage[1].backward(dx)
            dx, dpre = stage[0].backward(dx)
            if i == target_stage:
                dinject = dpre
        if self.dim_path is not None and dinject is not None:
            self.dim_path.backward(dinject)


def build_model(cfg: NetConfig, seed: int = 0) -> DinModel:
    return DinModel(cfg, seed)


def dim_forward(model: DinModel, guides: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """The interactive module alone: (guide pair, pooled+convolved injection)."""
    out2 = model.dim_path.forward(guides) if model.dim_path is not None else None
    return guides, out2


def forward_probs(model: DinModel, image: np.ndarray, guides: np.ndarray | None) -> np.ndarray:
    return softmax(model.forward(image, guides))


# ---------------------------------------------------------------------------
# Inference on volumes
# ---------------------------------------------------------------------------


def normalize_volume(v: Volume) -> np.ndarray:
    """Per-volume z-score, the network's expected input scale."""
    data = v.data.astype(np.float32)
    std = float(data.std())
    if std == 0.0:
        std = 1.0
    return (data - float(data.mean())) / std


def _pad_box(box: BoundingBox, dims: tuple[int, int, int]) -> BoundingBox:
    """Grow a box in place to legal network dims (depth %2, in-plane %16)."""
    mins = list(box.min)
    maxs = list(box.max)
    mults = (2, 16, 16)
    for ax in range(3):
        extent = maxs[ax] - mins[ax] + 1
        target = -(-extent // mults[ax]) * mults[ax]
        if target > dims[ax]:
            raise VolumeError(
                f"box extent {extent} on axis {ax} cannot be padded to {target} within grid {dims}"
            )
        grow = target - extent
        lo = min(mins[ax], grow // 2)
        mins[ax] -= lo
        maxs[ax] += grow - lo
        if maxs[ax] >= dims[ax]:
            mins[ax] -= maxs[ax] - (dims[ax] - 1)
            maxs[ax] = dims[ax] - 1
    return BoundingBox(tuple(mins), tuple(maxs))  # type: ignore[arg-type]


def predict(
    model: DinModel,
    image: Volume,
    clicks: ClickSet,
    exp_params: ExpParams | None = None,
    boxes: list[BoundingBox] | None = None,
) -> Mask:
    """Segment a volume: argmax class per voxel, ties resolved to background.

    With boxes, each box is padded to legal dims, predicted independently
    (clicks outside a box do not contribute to it) and pasted; everything
    outside all boxes is background.
    """
    exp_params = exp_params or ExpParams()
    clicks.check_in_grid(image.dims)

    if boxes:
        out = Mask(np.zeros(image.dims, dtype=bool), image.spacing)
        for box in boxes:
            box.check_within(image.dims)
            padded = _pad_box(box, image.dims)
            sub = Volume(image.data[padded.slices()].copy(), image.spacing)
            shift = padded.min
            sub_clicks = ClickSet(
                tuple(
                    tuple(c - o for c, o in zip(p, shift))
                    for p in clicks.positives
                    if padded.contains(p)
                ),
                tuple(
                    tuple(c - o for c, o in zip(p, shift))
                    for p in clicks.negatives
                    if padded.contains(p)
                ),
            )
            sub_mask = predict(model, sub, sub_clicks, exp_params, None)
            out = paste_mask(out, sub_mask, padded)
        return out

    check_dims_legal(image.dims)
    img = normalize_volume(image)[None, None]
    fg = expdt(image.dims, clicks.positives, exp_params, image.spacing).data
    bg = expdt(image.dims, clicks.negatives, exp_params, image.spacing).data
    guides = np.stack([fg, bg])[None]
    probs = forward_probs(model, img, guides)
    fg_prob = probs[0, 1]
    bg_prob = probs[0, 0]
    return Mask(fg_prob > bg_prob, image.spacing)
