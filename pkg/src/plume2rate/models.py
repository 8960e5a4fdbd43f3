"""Baseline CNN and U-Net regressors: 4x64x64 patch batch -> scalar Mt/yr."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .dataset import Sample
from .errors import ConfigError, InvalidInput

HEAD_GLOBAL_AVG_POOL_DENSE = "GLOBAL_AVG_POOL_DENSE"


class Arch(str, Enum):
    CNN = "CNN"
    UNET = "UNET"


@dataclass
class ModelConfig:
    arch: Arch
    base_channels: int = 32
    depth: int = 4
    dropout: float | None = None    # resolves to 0.3 for CNN, 0.2 for UNET
    leaky_slope: float = 0.1
    head: str = HEAD_GLOBAL_AVG_POOL_DENSE

    def __post_init__(self):
        try:
            self.arch = Arch(self.arch)
        except ValueError as e:
            raise ConfigError(f"unknown arch {self.arch!r}") from e
        if self.dropout is None:
            self.dropout = 0.3 if self.arch is Arch.CNN else 0.2
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if Sample.PATCH_SIZE % (2 ** self.depth) != 0:
            raise ConfigError(f"64 must be divisible by 2^depth, got depth={self.depth}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be >= 1")
        if self.head != HEAD_GLOBAL_AVG_POOL_DENSE:
            raise ConfigError(f"unsupported head {self.head!r}")

    def to_dict(self) -> dict:
        return {
            "arch": self.arch.value,
            "base_channels": self.base_channels,
            "depth": self.depth,
            "dropout": self.dropout,
            "leaky_slope": self.leaky_slope,
            "head": self.head,
        }


class CnnRegressor(nn.Module):
    """Conv/pool pyramid ending in a flattened dense head."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        layers: list[nn.Module] = []
        in_c = Sample.N_CHANNELS
        for level in range(config.depth):
            out_c = config.base_channels * 2 ** level
            layers += [
                nn.Conv2d(in_c, out_c, 3, padding=1),
                nn.BatchNorm2d(out_c),
                nn.LeakyReLU(config.leaky_slope),
                nn.MaxPool2d(2),
                nn.Dropout(config.dropout),
            ]
            in_c = out_c
        self.features = nn.Sequential(*layers)
        spatial = Sample.PATCH_SIZE // 2 ** config.depth
        self.head = nn.Linear(in_c * spatial * spatial, 1)
        self.out_act = nn.LeakyReLU(config.leaky_slope)

    def forward(self, x):
        f = self.features(x)
        return self.out_act(self.head(f.flatten(1)))

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


class _DoubleConv(nn.Module):
    def __init__(self, in_c: int, out_c: int, slope: float):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(in_c, out_c, 3, padding=1),
            nn.BatchNorm2d(out_c),
            nn.LeakyReLU(slope),
            nn.Conv2d(out_c, out_c, 3, padding=1),
            nn.BatchNorm2d(out_c),
            nn.LeakyReLU(slope),
        )

    def forward(self, x):
        return self.block(x)


class UnetRegressor(nn.Module):
    """Encoder-decoder with concatenated skips and a pooled dense head.

    Decoder levels upsample by 2 (nearest), pass a channel-preserving 3x3
    conv, concatenate the mirror encoder skip, then run a double conv. The
    full-resolution decoder output is globally average pooled into the
    final dense layer.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        base, depth, slope = config.base_channels, config.depth, config.leaky_slope

        self.encoders = nn.ModuleList()
        in_c = Sample.N_CHANNELS
        for level in range(depth):
            out_c = base * 2 ** level
            self.encoders.append(_DoubleConv(in_c, out_c, slope))
            in_c = out_c
        self.enc_dropout = nn.Dropout(config.dropout)
        self.pool = nn.MaxPool2d(2)

        self.bottleneck = _DoubleConv(base * 2 ** (depth - 1), base * 2 ** depth, slope)

        self.upsample = nn.Upsample(scale_factor=2, mode="nearest")
        self.up_convs = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for level in range(depth):
            carry = base * 2 ** (level + 1)      # channels arriving from below
            skip = base * 2 ** level
            self.up_convs.append(nn.Conv2d(carry, carry, 3, padding=1))
            self.decoders.append(_DoubleConv(carry + skip, skip, slope))

        self.head = nn.Linear(base, 1)
        self.out_act = nn.LeakyReLU(slope)

    def forward(self, x, trace: list | None = None):
        skips = []
        for enc in self.encoders:
            x = enc(x)
            skips.append(x)
            x = self.pool(self.enc_dropout(x))
        x = self.bottleneck(x)
        for level in reversed(range(self.config.depth)):
            x = self.up_convs[level](self.upsample(x))
            x = torch.cat([x, skips[level]], dim=1)
            if trace is not None:
                trace.append({"level": level, "skip": skips[level], "cat": x})
            x = self.decoders[level](x)
        g = x.mean(dim=(2, 3))
        return self.out_act(self.head(g))

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_cnn(config: ModelConfig, seed: int = 0) -> CnnRegressor:
    if config.arch is not Arch.CNN:
        raise ConfigError(f"build_cnn needs arch=CNN, got {config.arch}")
    torch.manual_seed(seed)
    return CnnRegressor(config)


def build_unet(config: ModelConfig, seed: int = 0) -> UnetRegressor:
    if config.arch is not Arch.UNET:
        raise ConfigError(f"build_unet needs arch=UNET, got {config.arch}")
    torch.manual_seed(seed)
    return UnetRegressor(config)


def build_model(config: ModelConfig, seed: int = 0) -> nn.Module:
    return build_cnn(config, seed) if config.arch is Arch.CNN else build_unet(config, seed)


def forward(model: nn.Module, batch) -> np.ndarray:
    """Inference pass: dropout off, running batch-norm stats, (B, 1) output."""
    x = torch.as_tensor(np.asarray(batch), dtype=torch.float32)
    if x.ndim != 4 or x.shape[1:] != (Sample.N_CHANNELS, Sample.PATCH_SIZE, Sample.PATCH_SIZE):
        raise InvalidInput(f"batch must be (B, 4, 64, 64), got {tuple(x.shape)}")
    if not torch.isfinite(x).all():
        raise InvalidInput("batch contains non-finite values")
    model.eval()
    with torch.no_grad():
        out = model(x)
    return out.cpu().numpy().astype(np.float64)


def save_model(
    model: nn.Module,
    out_dir: str | Path,
    train_seed: int | None = None,
    normstats_ref: str | None = None,
) -> None:
    """Write `model.pt` weights plus a `model.json` metadata sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), out_dir / "model.pt")
    meta = dict(model.config.to_dict())
    meta["parameter_count"] = model.parameter_count
    meta["train_seed"] = train_seed
    meta["normstats"] = normstats_ref
    with open(out_dir / "model.json", "w") as f:
        json.dump(meta, f, indent=2)


def load_model(out_dir: str | Path) -> nn.Module:
    out_dir = Path(out_dir)
    with open(out_dir / "model.json") as f:
        meta = json.load(f)
    config = ModelConfig(
        arch=Arch(meta["arch"]),
        base_channels=meta["base_channels"],
        depth=meta["depth"],
        dropout=meta["dropout"],
        leaky_slope=meta["leaky_slope"],
        head=meta["head"],
    )
    model = build_model(config)
    model.load_state_dict(torch.load(out_dir / "model.pt", weights_only=True))
    model.eval()
    return model
