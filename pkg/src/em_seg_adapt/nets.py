"""
Shared-encoder segmentation/reconstruction networks and patch discriminators.

State-dict keys follow ``component.level.layer.kind`` (for example
``encoder.0.conv1.weight`` or ``d_feat.2.conv.bias``); the checkpoint format
relies on this naming.
"""

import hashlib
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from em_seg_adapt.models import ArchConfig
from em_seg_adapt.models import ShapeError

COMPONENTS = ("encoder", "seg_decoder", "rec_decoder", "d_pred", "d_feat")
GENERATOR_COMPONENTS = ("encoder", "seg_decoder", "rec_decoder")
DISCRIMINATORS = ("d_pred", "d_feat")


class GeOutputs(NamedTuple):
    """Segmentation path outputs: probabilities ``p`` and the pre-output features ``f``."""

    p: torch.Tensor
    f: torch.Tensor


class ConvBlock(nn.Module):
    """[conv3×3 → instance norm → ReLU] × 2."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1)
        self.norm1 = nn.InstanceNorm2d(out_ch, affine=True)
        self.conv2 = nn.Conv2d(out_ch, out_ch, kernel_size=3, padding=1)
        self.norm2 = nn.InstanceNorm2d(out_ch, affine=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.norm1(self.conv1(x)))
        return F.relu(self.norm2(self.conv2(x)))


class UpBlock(ConvBlock):
    """2× transposed-conv up-sampling followed by a ConvBlock."""

    def __init__(self, in_ch: int, out_ch: int, skip: bool):
        super().__init__(2 * out_ch if skip else out_ch, out_ch)
        self.up = nn.ConvTranspose2d(in_ch, out_ch, kernel_size=2, stride=2)
        self.skip = skip

    def forward(self, x: torch.Tensor, skip: torch.Tensor | None = None) -> torch.Tensor:
        x = self.up(x)
        if self.skip:
            x = torch.cat([x, skip], dim=1)
        return super().forward(x)


class _Levels(nn.Module):
    """Numbered child modules (``0``, ``1``, …) so state-dict keys stay ``level.layer.kind``."""

    def __init__(self, levels: list[nn.Module]):
        super().__init__()
        for index, level in enumerate(levels):
            self.add_module(str(index), level)
        self.n_levels = len(levels)

    @property
    def levels(self) -> list[nn.Module]:
        return [getattr(self, str(i)) for i in range(self.n_levels)]


class Encoder(_Levels):
    """``depth`` ConvBlock levels with 2× max-pooling, plus a bottleneck block."""

    def __init__(self, arch: ArchConfig):
        widths = [arch.base_width * 2**i for i in range(arch.depth + 1)]
        blocks = [ConvBlock(arch.in_channels, widths[0])]
        blocks += [ConvBlock(widths[i - 1], widths[i]) for i in range(1, arch.depth + 1)]
        super().__init__(blocks)

    def forward(self, x: torch.Tensor) -> tuple[list[torch.Tensor], torch.Tensor]:
        *down, bottleneck = self.levels
        skips = []
        for block in down:
            x = block(x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        return skips, bottleneck(x)


class SegDecoder(_Levels):
    """Mirror of the encoder with skip concatenation and a 1×1 output layer."""

    def __init__(self, arch: ArchConfig):
        widths = [arch.base_width * 2**i for i in range(arch.depth, -1, -1)]
        super().__init__([UpBlock(widths[i], widths[i + 1], skip=True) for i in range(arch.depth)])
        self.head = nn.Conv2d(arch.base_width, 1, kernel_size=1)

    def features(self, bottleneck: torch.Tensor, skips: list[torch.Tensor]) -> torch.Tensor:
        x = bottleneck
        for block, skip in zip(self.levels, reversed(skips), strict=True):
            x = block(x, skip)
        return x

    def forward(self, bottleneck: torch.Tensor, skips: list[torch.Tensor]) -> GeOutputs:
        f = self.features(bottleneck, skips)
        return GeOutputs(p=torch.sigmoid(self.head(f)), f=f)


class RecDecoder(_Levels):
    """Skip-free mirror of the encoder ending in a sigmoid reconstruction."""

    def __init__(self, arch: ArchConfig):
        widths = [arch.base_width * 2**i for i in range(arch.depth, -1, -1)]
        super().__init__(
            [UpBlock(widths[i], widths[i + 1], skip=False) for i in range(arch.depth)]
        )
        self.head = nn.Conv2d(arch.base_width, arch.in_channels, kernel_size=1)

    def forward(self, bottleneck: torch.Tensor) -> torch.Tensor:
        x = bottleneck
        for block in self.levels:
            x = block(x)
        return torch.sigmoid(self.head(x))


class DiscLevel(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size=4, stride=2, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.leaky_relu(self.conv(x), negative_slope=0.2)


class PatchDiscriminator(_Levels):
    """Unnormalised stride-2 critic emitting one logit per receptive-field patch."""

    def __init__(self, in_channels: int, arch: ArchConfig):
        widths = [arch.disc_width * 2**i for i in range(arch.disc_depth)]
        levels = [DiscLevel(in_channels, widths[0])]
        levels += [DiscLevel(widths[i - 1], widths[i]) for i in range(1, arch.disc_depth)]
        super().__init__(levels)
        self.head = nn.Conv2d(widths[-1], 1, kernel_size=3, padding=1)
        self.in_channels = in_channels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for level in self.levels:
            x = level(x)
        return self.head(x)


class NetworkBundle(nn.Module):
    """The five trainable components; the encoder is shared by the GE and AE paths."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        arch.validate()
        self.arch = arch
        self.encoder = Encoder(arch)
        self.seg_decoder = SegDecoder(arch)
        self.rec_decoder = RecDecoder(arch)
        self.d_pred = PatchDiscriminator(1, arch)
        self.d_feat = PatchDiscriminator(arch.base_width, arch)

    def check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != self.arch.in_channels:
            raise ShapeError(
                f"Expected N×{self.arch.in_channels}×H×W input, got {tuple(x.shape)}"
            )
        div = self.arch.divisor
        if x.shape[2] % div or x.shape[3] % div:
            raise ShapeError(
                f"Input spatial size {tuple(x.shape[2:])} is not divisible by 2^depth = {div}"
            )

    def ge(self, x: torch.Tensor) -> GeOutputs:
        self.check_input(x)
        skips, bottleneck = self.encoder(x)
        return self.seg_decoder(bottleneck, skips)

    def ae(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        _, bottleneck = self.encoder(x)
        return self.rec_decoder(bottleneck)

    def component(self, name: str) -> nn.Module:
        if name not in COMPONENTS:
            raise KeyError(f"Unknown component {name!r}")
        return getattr(self, name)

    def digests(self) -> dict[str, str]:
        return {name: parameter_digest(self.component(name)) for name in COMPONENTS}


def build_bundle(arch: ArchConfig, seed: int) -> NetworkBundle:
    """Construct a bundle whose initial weights depend only on ``(arch, seed)``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return NetworkBundle(arch)


def forward_ge(bundle: NetworkBundle, x: torch.Tensor) -> GeOutputs:
    return bundle.ge(x)


def forward_ae(bundle: NetworkBundle, x: torch.Tensor) -> torch.Tensor:
    return bundle.ae(x)


def forward_disc(disc: PatchDiscriminator, x: torch.Tensor) -> torch.Tensor:
    """Score logits of a discriminator on a prediction or feature map."""
    if x.ndim != 4 or x.shape[1] != disc.in_channels:
        raise ShapeError(
            f"Discriminator expects {disc.in_channels} input channels, got {tuple(x.shape)}"
        )
    return disc(x)


OPTIMIZER_GROUPS = {
    "generator": GENERATOR_COMPONENTS,
    "d_pred": ("d_pred",),
    "d_feat": ("d_feat",),
}


def named_group_parameters(bundle: NetworkBundle, group: str) -> list[tuple[str, nn.Parameter]]:
    """``(component.level.layer.kind, parameter)`` pairs of an optimiser group, in order."""
    if group not in OPTIMIZER_GROUPS:
        raise KeyError(f"Unknown parameter group {group!r}")
    return [
        (f"{name}.{pname}", param)
        for name in OPTIMIZER_GROUPS[group]
        for pname, param in bundle.component(name).named_parameters()
    ]


def component_parameters(bundle: NetworkBundle, group: str) -> list[nn.Parameter]:
    """Parameters of an optimiser group: ``generator``, ``d_pred`` or ``d_feat``."""
    return [param for _, param in named_group_parameters(bundle, group)]


def parameter_digest(module: nn.Module) -> str:
    """SHA-256 over a module's state dict in key order."""
    h = hashlib.sha256()
    for name, tensor in module.state_dict().items():
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
