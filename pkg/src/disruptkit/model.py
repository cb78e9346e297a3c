"""Desk-scale conditional image translator and discriminator.

The generator maps a (C, H, W) image plus a one-hot class code (broadcast to
K constant channels and concatenated) back to a (C, H, W) image bounded by
tanh. The attention variant emits a color image plus a [0, 1] mask A and
returns ``A * x + (1 - A) * color``. Both are small enough to train on a CPU
in minutes while remaining genuinely class conditional.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

_WEIGHT_MAGIC = b"DDW1"
_WEIGHT_VERSION = 1


@dataclass(frozen=True)
class ClassCode:
    """One-hot conditioning class out of num_classes."""

    index: int
    num_classes: int

    def __post_init__(self):
        if not 0 <= self.index < self.num_classes:
            raise ValueError(
                f"class index {self.index} out of range [0, {self.num_classes})"
            )

    def one_hot(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        v = torch.zeros(self.num_classes, dtype=dtype)
        v[self.index] = 1.0
        return v


@dataclass(frozen=True)
class GeneratorConfig:
    image_channels: int = 3
    num_classes: int = 3
    width: int = 16
    variant: str = "plain"  # plain | attention

    def __post_init__(self):
        if self.variant not in ("plain", "attention"):
            raise ValueError(f"unknown generator variant {self.variant!r}")
        if self.image_channels < 1 or self.num_classes < 1 or self.width < 1:
            raise ValueError("generator config fields must be positive")


@dataclass(frozen=True)
class DiscriminatorConfig:
    image_channels: int = 3
    width: int = 16


@dataclass
class LossSpec:
    """Distance objective for attacks: metric, reference image, direction.

    ``direction="away"`` means the attack ascends the loss (maximize distance
    to the reference); ``"towards"`` descends it.
    """

    metric: str  # l1 | l2
    reference: torch.Tensor
    direction: str = "towards"

    def __post_init__(self):
        if self.metric not in ("l1", "l2"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.direction not in ("towards", "away"):
            raise ValueError(f"unknown direction {self.direction!r}")

    def value(self, output: torch.Tensor) -> torch.Tensor:
        ref = self.reference.to(output.dtype)
        if self.metric == "l1":
            return (output - ref).abs().mean()
        return (output - ref).square().mean()


class ConditionalGenerator(nn.Module):
    """Encoder / bottleneck / decoder with instance norm, StarGAN style.

    Instance normalization matters here: without it the toy net is so smooth
    that epsilon-ball attacks barely move the output, unlike the full-scale
    translators this stands in for.
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        cin = config.image_channels + config.num_classes
        w = config.width
        self.conv_in = nn.Conv2d(cin, w, 3, padding=1)
        self.norm_in = nn.InstanceNorm2d(w, affine=True)
        self.conv_down = nn.Conv2d(w, 2 * w, 3, stride=2, padding=1)
        self.norm_down = nn.InstanceNorm2d(2 * w, affine=True)
        self.conv_mid1 = nn.Conv2d(2 * w, 2 * w, 3, padding=1)
        self.norm_mid1 = nn.InstanceNorm2d(2 * w, affine=True)
        self.conv_mid2 = nn.Conv2d(2 * w, 2 * w, 3, padding=1)
        self.norm_mid2 = nn.InstanceNorm2d(2 * w, affine=True)
        self.conv_up = nn.Conv2d(2 * w, w, 3, padding=1)
        self.norm_up = nn.InstanceNorm2d(w, affine=True)
        self.conv_out = nn.Conv2d(w, config.image_channels, 3, padding=1)
        if config.variant == "attention":
            self.conv_mask = nn.Conv2d(w, 1, 3, padding=1)
        # float64 throughout: the epsilon-ball invariant is checked to 1e-9,
        # which float32 rounding cannot honor
        self.double()

    @property
    def num_feature_layers(self) -> int:
        # concat input, 5 hidden activations, output
        return 7

    def _check_input(self, x: torch.Tensor, c: ClassCode) -> None:
        if x.dim() != 3 or x.shape[0] != self.config.image_channels:
            raise ValueError(
                f"expected ({self.config.image_channels}, H, W) image, "
                f"got {tuple(x.shape)}"
            )
        if x.shape[1] % 2 or x.shape[2] % 2:
            raise ValueError("image height and width must be even")
        if c.num_classes != self.config.num_classes:
            raise ValueError(
                f"class code has {c.num_classes} classes, model expects "
                f"{self.config.num_classes}"
            )

    def _concat_class(self, x: torch.Tensor, c: ClassCode) -> torch.Tensor:
        k, h, w = c.num_classes, x.shape[-2], x.shape[-1]
        code = c.one_hot(x.dtype).view(k, 1, 1).expand(k, h, w)
        if x.dim() == 4:
            code = code.unsqueeze(0).expand(x.shape[0], k, h, w)
        return torch.cat([x, code], dim=-3)

    def features(self, x: torch.Tensor, c: ClassCode) -> list[torch.Tensor]:
        """All intermediate activations, each differentiable w.r.t. x.

        Layer 0 is the class-concatenated input; the last layer is the output
        image.
        """
        self._check_input(x if x.dim() == 3 else x[0], c)
        unbatched = x.dim() == 3
        acts = []
        h = self._concat_class(x, c)
        acts.append(h)
        if unbatched:
            h = h.unsqueeze(0)
        h = F.relu(self.norm_in(self.conv_in(h)))
        acts.append(h.squeeze(0) if unbatched else h)
        h = F.relu(self.norm_down(self.conv_down(h)))
        acts.append(h.squeeze(0) if unbatched else h)
        h = F.relu(self.norm_mid1(self.conv_mid1(h)))
        acts.append(h.squeeze(0) if unbatched else h)
        h = F.relu(self.norm_mid2(self.conv_mid2(h)))
        acts.append(h.squeeze(0) if unbatched else h)
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = F.relu(self.norm_up(self.conv_up(h)))
        acts.append(h.squeeze(0) if unbatched else h)
        if self.config.variant == "attention":
            color = torch.tanh(self.conv_out(h))
            mask = torch.sigmoid(self.conv_mask(h))
            xb = x.unsqueeze(0) if unbatched else x
            out = mask * xb + (1.0 - mask) * color
        else:
            out = torch.tanh(self.conv_out(h))
        if unbatched:
            out = out.squeeze(0)
        acts.append(out)
        return acts

    def forward(self, x: torch.Tensor, c: ClassCode) -> torch.Tensor:
        return self.features(x, c)[-1]

    def attention_mask(self, x: torch.Tensor, c: ClassCode) -> torch.Tensor:
        """Mask A of the attention variant, elementwise in [0, 1]."""
        if self.config.variant != "attention":
            raise ValueError("attention_mask requires the attention variant")
        self._check_input(x if x.dim() == 3 else x[0], c)
        unbatched = x.dim() == 3
        h = self._concat_class(x, c)
        if unbatched:
            h = h.unsqueeze(0)
        h = F.relu(self.norm_in(self.conv_in(h)))
        h = F.relu(self.norm_down(self.conv_down(h)))
        h = F.relu(self.norm_mid1(self.conv_mid1(h)))
        h = F.relu(self.norm_mid2(self.conv_mid2(h)))
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = F.relu(self.norm_up(self.conv_up(h)))
        mask = torch.sigmoid(self.conv_mask(h))
        return mask.squeeze(0) if unbatched else mask


class Discriminator(nn.Module):
    """Three strided convs, global mean, sigmoid realness score."""

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        w = config.width
        self.conv1 = nn.Conv2d(config.image_channels, w, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(w, 2 * w, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(2 * w, 1, 3, stride=2, padding=1)
        self.double()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-3] != self.config.image_channels:
            raise ValueError(
                f"expected {self.config.image_channels}-channel image, "
                f"got {tuple(x.shape)}"
            )
        h = F.relu(self.conv1(x))
        h = F.relu(self.conv2(h))
        h = self.conv3(h)
        score = h.mean(dim=(-1, -2, -3))
        return torch.sigmoid(score)


def _seeded_init(model: nn.Module, seed: int) -> None:
    # uniform +-sqrt(6 / fan_in) on weights, zero bias; order of
    # named_parameters is fixed by module construction, so this is
    # reproducible bit for bit
    gen = torch.Generator().manual_seed(seed)
    for name, p in model.named_parameters():
        with torch.no_grad():
            if name.endswith("bias"):
                p.zero_()
            elif p.dim() == 1:
                # instance-norm scale
                p.fill_(1.0)
            else:
                fan_in = p.shape[1] * p.shape[2] * p.shape[3]
                bound = math.sqrt(6.0 / fan_in)
                vals = torch.empty_like(p).uniform_(-bound, bound, generator=gen)
                p.copy_(vals)


def init_generator(config: GeneratorConfig, seed: int) -> ConditionalGenerator:
    g = ConditionalGenerator(config)
    _seeded_init(g, seed)
    return g


def init_discriminator(config: DiscriminatorConfig, seed: int) -> Discriminator:
    d = Discriminator(config)
    _seeded_init(d, seed)
    return d


def generator_forward(
    g: ConditionalGenerator, x: torch.Tensor, c: ClassCode
) -> torch.Tensor:
    with torch.no_grad():
        return g(x, c)


def generator_input_gradient(
    g: ConditionalGenerator, x: torch.Tensor, c: ClassCode, loss: LossSpec
) -> torch.Tensor:
    """Exact reverse-mode gradient of L(G(x, c), reference) w.r.t. x."""
    xg = x.detach().clone().requires_grad_(True)
    out = g(xg, c)
    if not torch.isfinite(out).all():
        raise FloatingPointError("non-finite values in generator forward pass")
    value = loss.value(out)
    (grad,) = torch.autograd.grad(value, xg)
    return grad


def feature_activation(
    g: ConditionalGenerator, x: torch.Tensor, c: ClassCode, layer: int
) -> torch.Tensor:
    """Intermediate activation at the given layer index, differentiable in x."""
    if not 0 <= layer < g.num_feature_layers:
        raise IndexError(
            f"layer {layer} out of range [0, {g.num_feature_layers})"
        )
    return g.features(x, c)[layer]


def discriminator_input_gradient(d: Discriminator, x: torch.Tensor) -> torch.Tensor:
    """Gradient of the realness score w.r.t. the input image."""
    xg = x.detach().clone().requires_grad_(True)
    score = d(xg)
    (grad,) = torch.autograd.grad(score, xg)
    return grad


def save_weights(model: nn.Module, path: str | Path) -> None:
    """Write all named arrays in the DDW1 binary format."""
    with open(path, "wb") as f:
        state = model.state_dict()
        f.write(_WEIGHT_MAGIC)
        f.write(struct.pack("<HI", _WEIGHT_VERSION, len(state)))
        for name, tensor in state.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", tensor.dim()))
            for d in tensor.shape:
                f.write(struct.pack("<I", d))
            f.write(tensor.detach().to(torch.float32).contiguous().numpy()
                    .astype("<f4").tobytes())


def load_weights(path: str | Path, model: nn.Module) -> nn.Module:
    """Load a DDW1 file into a freshly constructed model of matching config."""
    raw = Path(path).read_bytes()
    if len(raw) < 10 or raw[:4] != _WEIGHT_MAGIC:
        raise ValueError(f"{path}: not a DDW1 weight file")
    version, count = struct.unpack("<HI", raw[4:10])
    if version != _WEIGHT_VERSION:
        raise ValueError(f"{path}: unsupported weight file version {version}")
    offset = 10
    arrays: dict[str, torch.Tensor] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset:offset + nlen].decode("utf-8")
            offset += nlen
            (ndim,) = struct.unpack_from("<B", raw, offset)
            offset += 1
            dims = struct.unpack_from(f"<{ndim}I", raw, offset)
            offset += 4 * ndim
            n = int(np.prod(dims)) if dims else 1
            arr = np.frombuffer(raw, dtype="<f4", count=n, offset=offset)
            offset += 4 * n
            arrays[name] = torch.from_numpy(arr.copy().reshape(dims))
    except (struct.error, ValueError) as exc:
        raise ValueError(f"{path}: truncated or corrupt weight file") from exc
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes in weight file")

    state = model.state_dict()
    for name, tensor in state.items():
        if name not in arrays:
            raise ValueError(f"{path}: missing array {name!r}")
        if tuple(arrays[name].shape) != tuple(tensor.shape):
            raise ValueError(
                f"{path}: array {name!r} has shape {tuple(arrays[name].shape)}, "
                f"model expects {tuple(tensor.shape)}"
            )
    extra = set(arrays) - set(state)
    if extra:
        raise ValueError(f"{path}: unexpected array {sorted(extra)[0]!r}")
    model.load_state_dict(arrays)
    return model
