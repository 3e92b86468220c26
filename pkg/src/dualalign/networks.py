"""Constructors for the nine 2D networks of the adaptation framework.

The pieces and how they wire together:

* ``target_gen``      image generator mapping source images to target-like ones
* ``encoder``         shared feature extractor with a deep and a shallow tap
* ``decoder``         upsampling decoder; encoder + decoder form the reverse
                      (target-to-source) generator, which never owns separate
                      parameters
* ``seg_main/seg_aux``  pixel-wise classifiers on the deep / shallow tap
* ``disc_target``     patch discriminator on target-like vs real target images
* ``disc_source``     dual-head patch discriminator on source-like images
* ``disc_pred_main/aux``  patch discriminators on softmax segmentation maps

Generator and decoder use instance normalization and reflect padding, the
encoder uses batch normalization, discriminators use instance normalization;
generator and decoder outputs are linear because inputs are z-score
normalized and unbounded.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from typing import NamedTuple

import torch
import torch.nn as nn

GAN_LOSS_FORMS = ("log_loss", "least_squares")

# (kernel, stride) ledger of the patch discriminator stack
DISC_LEDGER = ((4, 2), (4, 2), (4, 2), (4, 1), (4, 1))

NETWORK_NAMES = (
    "target_gen",
    "encoder",
    "decoder",
    "seg_main",
    "seg_aux",
    "disc_target",
    "disc_source",
    "disc_pred_main",
    "disc_pred_aux",
)


@dataclass(frozen=True)
class ArchConfig:
    """Width/resolution knobs; defaults match the published configuration."""

    input_resolution: int = 256
    num_classes: int = 5
    enc_base: int = 16   # encoder stem width; taps carry 32x this
    gen_base: int = 64   # image generator stem width
    disc_base: int = 64  # discriminator first-layer width
    gan_loss_form: str = "log_loss"

    def __post_init__(self):
        if self.input_resolution % 8 != 0:
            raise ValueError("input_resolution must be divisible by 8 (three pools)")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.gan_loss_form not in GAN_LOSS_FORMS:
            raise ValueError(f"gan_loss_form must be one of {GAN_LOSS_FORMS}")

    @property
    def tap_channels(self) -> int:
        return 32 * self.enc_base

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def receptive_field(ledger) -> int:
    """Receptive field of one output position for a (kernel, stride) stack."""
    rf, jump = 1, 1
    for k, s in ledger:
        rf += (k - 1) * jump
        jump *= s
    return rf


class GenResBlock(nn.Module):
    """Reflect-padded residual block with instance norm, no post-add activation."""

    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class EncResBlock(nn.Module):
    """Residual block with batch norm; 1x1 projection when widths differ."""

    def __init__(self, in_ch: int, out_ch: int, dilation: int = 1):
        super().__init__()
        pad = dilation
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=pad, dilation=dilation)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=pad, dilation=dilation)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU(inplace=True)
        if in_ch != out_ch:
            self.proj = nn.Sequential(nn.Conv2d(in_ch, out_ch, 1), nn.BatchNorm2d(out_ch))
        else:
            self.proj = nn.Identity()

    def forward(self, x):
        h = self.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return self.relu(h + self.proj(x))


class TargetGenerator(nn.Module):
    """Source-to-target image generator: 3 convs, 9 residual blocks, 2 deconvs."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        g = cfg.gen_base
        layers = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(1, g, 7),
            nn.InstanceNorm2d(g),
            nn.ReLU(inplace=True),
            nn.Conv2d(g, 2 * g, 3, stride=2, padding=1),
            nn.InstanceNorm2d(2 * g),
            nn.ReLU(inplace=True),
            nn.Conv2d(2 * g, 4 * g, 3, stride=2, padding=1),
            nn.InstanceNorm2d(4 * g),
            nn.ReLU(inplace=True),
        ]
        layers += [GenResBlock(4 * g) for _ in range(9)]
        layers += [
            nn.ConvTranspose2d(4 * g, 2 * g, 3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(2 * g),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(2 * g, g, 3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(g),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(3),
            nn.Conv2d(g, 1, 7),  # linear output, inputs are z-scored
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


class EncoderFeatures(NamedTuple):
    deep: torch.Tensor     # after the final plain-conv pair, feeds seg_main/decoder
    shallow: torch.Tensor  # after the last ordinary residual stage, feeds seg_aux


class Encoder(nn.Module):
    """Dilated residual encoder; both taps sit at 1/8 resolution."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        b = cfg.enc_base
        self.stem = nn.Sequential(
            nn.Conv2d(1, b, 3, padding=1), nn.BatchNorm2d(b), nn.ReLU(inplace=True)
        )
        self.stage1 = nn.Sequential(EncResBlock(b, b), nn.MaxPool2d(2))
        self.stage2 = nn.Sequential(EncResBlock(b, 2 * b), nn.MaxPool2d(2))
        self.stage3 = nn.Sequential(
            EncResBlock(2 * b, 4 * b), EncResBlock(4 * b, 4 * b), nn.MaxPool2d(2)
        )
        self.stage4 = nn.Sequential(
            EncResBlock(4 * b, 8 * b), EncResBlock(8 * b, 8 * b),
            EncResBlock(8 * b, 16 * b), EncResBlock(16 * b, 16 * b),
            EncResBlock(16 * b, 16 * b), EncResBlock(16 * b, 16 * b),
            EncResBlock(16 * b, 32 * b), EncResBlock(32 * b, 32 * b),
        )
        self.dilated = nn.Sequential(
            EncResBlock(32 * b, 32 * b, dilation=2),
            EncResBlock(32 * b, 32 * b, dilation=2),
        )
        self.head = nn.Sequential(
            nn.Conv2d(32 * b, 32 * b, 3, padding=1),
            nn.BatchNorm2d(32 * b),
            nn.ReLU(inplace=True),
            nn.Conv2d(32 * b, 32 * b, 3, padding=1),
            nn.BatchNorm2d(32 * b),
            nn.ReLU(inplace=True),
        )

    def forward(self, x) -> EncoderFeatures:
        h = self.stem(x)
        h = self.stage1(h)
        h = self.stage2(h)
        h = self.stage3(h)
        shallow = self.stage4(h)
        deep = self.head(self.dilated(shallow))
        return EncoderFeatures(deep=deep, shallow=shallow)


class Decoder(nn.Module):
    """Feature-to-image decoder: 1 conv, 4 residual blocks, 3 deconvs."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        t = cfg.tap_channels
        c = t // 2
        layers = [
            nn.Conv2d(t, c, 3, padding=1),
            nn.InstanceNorm2d(c),
            nn.ReLU(inplace=True),
        ]
        layers += [GenResBlock(c) for _ in range(4)]
        for _ in range(3):
            layers += [
                nn.ConvTranspose2d(c, c // 2, 3, stride=2, padding=1, output_padding=1),
                nn.InstanceNorm2d(c // 2),
                nn.ReLU(inplace=True),
            ]
            c //= 2
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(c, 1, 7)]
        self.model = nn.Sequential(*layers)

    def forward(self, deep_features):
        return self.model(deep_features)


class PixelClassifier(nn.Module):
    """1x1 conv over a tap plus 8x bilinear upsampling back to image size."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.conv = nn.Conv2d(cfg.tap_channels, cfg.num_classes, 1)
        self.up = nn.Upsample(scale_factor=8, mode="bilinear", align_corners=False)

    def forward(self, features):
        return self.up(self.conv(features))


class PatchDiscriminator(nn.Module):
    """70x70-patch discriminator; optional second head over the shared trunk."""

    def __init__(self, cfg: ArchConfig, in_channels: int = 1, dual_head: bool = False):
        super().__init__()
        d = cfg.disc_base
        widths = [in_channels, d, 2 * d, 4 * d, 8 * d]
        trunk = []
        for i, (k, s) in enumerate(DISC_LEDGER[:4]):
            trunk += [
                nn.Conv2d(widths[i], widths[i + 1], k, stride=s, padding=1),
                nn.InstanceNorm2d(widths[i + 1]),
                nn.LeakyReLU(0.2, inplace=True),
            ]
        self.trunk = nn.Sequential(*trunk)
        k, s = DISC_LEDGER[4]
        self.head = nn.Conv2d(8 * d, 1, k, stride=s, padding=1)
        self.aux_head = None
        if dual_head:
            self.aux_head = nn.Conv2d(8 * d, 1, k, stride=s, padding=1)

    def forward(self, x):
        h = self.trunk(x)
        if self.aux_head is None:
            return self.head(h)
        return self.head(h), self.aux_head(h)


def init_weights(module: nn.Module, generator: torch.Generator) -> nn.Module:
    """Gaussian(0, 0.02) conv init; batch-norm scale around 1; zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            m.weight.data.normal_(0.0, 0.02, generator=generator)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            m.weight.data.normal_(1.0, 0.02, generator=generator)
            m.bias.data.zero_()
    return module


@dataclass
class SifaNetworks:
    """The nine networks. The reverse generator is encoder + decoder, never a
    separate parameter store."""

    target_gen: TargetGenerator
    encoder: Encoder
    decoder: Decoder
    seg_main: PixelClassifier
    seg_aux: PixelClassifier
    disc_target: PatchDiscriminator
    disc_source: PatchDiscriminator
    disc_pred_main: PatchDiscriminator
    disc_pred_aux: PatchDiscriminator

    def as_dict(self) -> dict[str, nn.Module]:
        return {name: getattr(self, name) for name in NETWORK_NAMES}

    def source_like(self, images: torch.Tensor) -> torch.Tensor:
        """Reverse (target-to-source) generation via the shared encoder."""
        return self.decoder(self.encoder(images).deep)

    def train(self):
        for m in self.as_dict().values():
            m.train()

    def eval(self):
        for m in self.as_dict().values():
            m.eval()


def build_generator(cfg: ArchConfig) -> TargetGenerator:
    return TargetGenerator(cfg)


def build_encoder(cfg: ArchConfig) -> Encoder:
    return Encoder(cfg)


def build_decoder(cfg: ArchConfig) -> Decoder:
    return Decoder(cfg)


def build_classifier(cfg: ArchConfig, tap: str = "deep") -> PixelClassifier:
    if tap not in ("deep", "shallow"):
        raise ValueError("tap must be 'deep' or 'shallow'")
    return PixelClassifier(cfg)


def build_discriminator(cfg: ArchConfig, in_channels: int = 1,
                        dual_head: bool = False) -> PatchDiscriminator:
    return PatchDiscriminator(cfg, in_channels, dual_head)


def build_networks(cfg: ArchConfig, seed: int) -> SifaNetworks:
    """Construct and deterministically initialize all nine networks."""
    gen = torch.Generator().manual_seed(seed)
    nets = SifaNetworks(
        target_gen=build_generator(cfg),
        encoder=build_encoder(cfg),
        decoder=build_decoder(cfg),
        seg_main=build_classifier(cfg, "deep"),
        seg_aux=build_classifier(cfg, "shallow"),
        disc_target=build_discriminator(cfg, 1),
        disc_source=build_discriminator(cfg, 1, dual_head=True),
        disc_pred_main=build_discriminator(cfg, cfg.num_classes),
        disc_pred_aux=build_discriminator(cfg, cfg.num_classes),
    )
    for name in NETWORK_NAMES:
        init_weights(getattr(nets, name), gen)
    return nets
