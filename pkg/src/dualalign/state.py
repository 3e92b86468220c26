"""Training state: the nine networks, per-network Adam optimizers, history
pools, RNG state, and lossless directory checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .core import LossWeights
from .errors import ArchMismatch, CorruptCheckpoint
from .networks import NETWORK_NAMES, ArchConfig, SifaNetworks, build_networks

CHECKPOINT_FORMAT = 1


class ImagePool:
    """History buffer of generated images fed to a discriminator.

    With probability 1/2 a query swaps the fresh image for a stored one,
    which stabilizes discriminator training. Size 0 disables the pool.
    """

    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.rng = rng
        self.images: list[torch.Tensor] = []

    def query(self, batch: torch.Tensor) -> torch.Tensor:
        if self.size == 0:
            return batch
        out = []
        for img in batch.detach():
            img = img.unsqueeze(0)
            if len(self.images) < self.size:
                self.images.append(img)
                out.append(img)
            elif self.rng.random() < 0.5:
                idx = int(self.rng.integers(self.size))
                out.append(self.images[idx])
                self.images[idx] = img
            else:
                out.append(img)
        return torch.cat(out)


@dataclass
class SifaState:
    """Single-writer training state; share read-only snapshots for evaluation."""

    arch: ArchConfig
    nets: SifaNetworks
    optimizers: dict[str, torch.optim.Adam]
    iteration: int
    pool_target: ImagePool
    pool_source: ImagePool
    rng: np.random.Generator
    torch_rng: torch.Generator
    learning_rate: float
    adam_betas: tuple[float, float]
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def parameter_vector(self, name: str) -> torch.Tensor:
        """Flattened copy of one network's parameters (for diff checks)."""
        net = getattr(self.nets, name)
        return torch.cat([p.detach().reshape(-1).clone() for p in net.parameters()])


def build_state(
    arch: ArchConfig,
    seed: int,
    learning_rate: float = 2e-4,
    adam_betas: tuple[float, float] = (0.5, 0.999),
    image_pool_size: int = 50,
    loss_weights: Optional[LossWeights] = None,
    device: str = "cpu",
) -> SifaState:
    nets = build_networks(arch, seed)
    for m in nets.as_dict().values():
        m.to(device)
    optimizers = {
        name: torch.optim.Adam(
            getattr(nets, name).parameters(), lr=learning_rate, betas=adam_betas
        )
        for name in NETWORK_NAMES
    }
    rng = np.random.default_rng([seed, 0xDA])
    torch_rng = torch.Generator().manual_seed(seed)
    return SifaState(
        arch=arch,
        nets=nets,
        optimizers=optimizers,
        iteration=0,
        pool_target=ImagePool(image_pool_size, rng),
        pool_source=ImagePool(image_pool_size, rng),
        rng=rng,
        torch_rng=torch_rng,
        learning_rate=learning_rate,
        adam_betas=tuple(adam_betas),
        loss_weights=loss_weights or LossWeights(),
    )


def save_checkpoint(state: SifaState, path) -> Path:
    """Write a checkpoint directory: one blob per network plus a manifest."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "iteration": state.iteration,
        "arch": asdict(state.arch),
        "arch_hash": state.arch.config_hash(),
        "loss_weights": state.loss_weights.to_dict(),
        "learning_rate": state.learning_rate,
        "adam_betas": list(state.adam_betas),
        "image_pool_size": state.pool_target.size,
    }
    with open(path / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)
    for name in NETWORK_NAMES:
        torch.save(getattr(state.nets, name).state_dict(), path / f"net_{name}.pt")
    torch.save({n: o.state_dict() for n, o in state.optimizers.items()},
               path / "optim.pt")
    torch.save(
        {
            "pool_target": state.pool_target.images,
            "pool_source": state.pool_source.images,
            "torch_rng": state.torch_rng.get_state(),
        },
        path / "extras.pt",
    )
    with open(path / "rng.json", "w") as f:
        json.dump(state.rng.bit_generator.state, f)
    return path


def load_checkpoint(path, arch: Optional[ArchConfig] = None,
                    device: str = "cpu") -> SifaState:
    """Restore a checkpoint bit-exactly; verify against a live ArchConfig."""
    path = Path(path)
    try:
        with open(path / "manifest.json") as f:
            manifest = json.load(f)
        saved_arch = ArchConfig(**manifest["arch"])
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise CorruptCheckpoint(f"{path}: cannot read manifest: {e}") from e
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CorruptCheckpoint(f"{path}: unknown checkpoint format")
    if saved_arch.config_hash() != manifest.get("arch_hash"):
        raise CorruptCheckpoint(f"{path}: manifest hash does not match its config")
    if arch is not None and arch.config_hash() != manifest["arch_hash"]:
        raise ArchMismatch(
            f"checkpoint built for {manifest['arch_hash']}, live config is "
            f"{arch.config_hash()}"
        )

    state = build_state(
        saved_arch,
        seed=0,
        learning_rate=manifest["learning_rate"],
        adam_betas=tuple(manifest["adam_betas"]),
        image_pool_size=manifest["image_pool_size"],
        loss_weights=LossWeights.from_dict(manifest["loss_weights"]),
        device=device,
    )
    try:
        for name in NETWORK_NAMES:
            blob = torch.load(path / f"net_{name}.pt", weights_only=True)
            getattr(state.nets, name).load_state_dict(blob, strict=True)
        optim_blobs = torch.load(path / "optim.pt", weights_only=True)
        for name, opt in state.optimizers.items():
            opt.load_state_dict(optim_blobs[name])
        extras = torch.load(path / "extras.pt", weights_only=True)
        with open(path / "rng.json") as f:
            rng_state = json.load(f)
    except (OSError, RuntimeError, KeyError, ValueError) as e:
        raise CorruptCheckpoint(f"{path}: {e}") from e

    state.pool_target.images = list(extras["pool_target"])
    state.pool_source.images = list(extras["pool_source"])
    state.torch_rng.set_state(extras["torch_rng"])
    state.rng.bit_generator.state = rng_state
    state.iteration = int(manifest["iteration"])
    return state
