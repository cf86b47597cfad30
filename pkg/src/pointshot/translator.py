"""UNet-style depth/mask to RGB translation network and its pre-training loop.

The network maps a sparse single-channel image in [0, 1] (a noise-masked
silhouette during pre-training, a depth map at inference) to a 3-channel
image squashed into (0, 1) by a final sigmoid. The architecture is a
conventional UNet variant, recorded in every checkpoint header:

    - double 3x3 conv + ReLU blocks, no normalization layers
    - 2x2 max-pool downsampling, 2x2 transposed-conv upsampling
    - skip connections by channel concatenation
    - 1x1 output conv + sigmoid

Weights are He-uniform over fan_in = in_channels * kernel_area, biases
zero, drawn from a seeded generator so construction is reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .containers import load_container, save_container, sha256_arrays
from .errors import TrainingDivergedError, ValidationError

ARCH_NOTE = (
    "unet: double 3x3 conv+relu (no norm), maxpool down, 2x2 transposed-conv up, "
    "concat skips, 1x1 conv + sigmoid out; he-uniform init, zero biases"
)


@dataclass(frozen=True)
class TranslatorConfig:
    depth_levels: int = 4
    base_channels: int = 16
    input_channels: int = 1
    output_channels: int = 3
    skip_connections: bool = True

    def __post_init__(self):
        if self.depth_levels < 1:
            raise ValidationError("depth_levels must be >= 1")
        if self.base_channels < 1:
            raise ValidationError("base_channels must be >= 1")

    def to_dict(self) -> dict:
        return {
            "depth_levels": self.depth_levels,
            "base_channels": self.base_channels,
            "input_channels": self.input_channels,
            "output_channels": self.output_channels,
            "skip_connections": self.skip_connections,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TranslatorConfig":
        return cls(**d)


FULL_SCALE_CONFIG = TranslatorConfig(depth_levels=4, base_channels=64)


def _double_conv(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, padding=1),
        nn.ReLU(),
        nn.Conv2d(c_out, c_out, 3, padding=1),
        nn.ReLU(),
    )


class TranslatorNet(nn.Module):
    def __init__(self, config: TranslatorConfig):
        super().__init__()
        self.config = config
        b, levels = config.base_channels, config.depth_levels
        widths = [b * (2**l) for l in range(levels)]
        self.down = nn.ModuleList()
        c_in = config.input_channels
        for w in widths:
            self.down.append(_double_conv(c_in, w))
            c_in = w
        self.bottleneck = _double_conv(widths[-1], b * (2**levels))
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        c_in = b * (2**levels)
        for w in reversed(widths):
            self.up.append(nn.ConvTranspose2d(c_in, w, 2, stride=2))
            dec_in = 2 * w if config.skip_connections else w
            self.dec.append(_double_conv(dec_in, w))
            c_in = w
        self.out = nn.Conv2d(widths[0], config.output_channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        x = self.bottleneck(x)
        for up, dec, skip in zip(self.up, self.dec, reversed(skips)):
            x = up(x)
            if self.config.skip_connections:
                x = torch.cat([skip, x], dim=1)
            x = dec(x)
        return torch.sigmoid(self.out(x))


def _he_uniform_init(net: nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    for module in net.modules():
        if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
            fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
            bound = float(np.sqrt(2.0) * np.sqrt(3.0 / fan_in))
            with torch.no_grad():
                module.weight.uniform_(-bound, bound, generator=gen)
                module.bias.zero_()


class Translator:
    """Config + weights carrier with a stable flattened parameter order.

    The flattened vector concatenates each parameter reshaped to 1D in
    ``named_parameters()`` order (module definition order), float32.
    """

    def __init__(self, config: TranslatorConfig = TranslatorConfig(), seed: int = 0):
        self.config = config
        self.seed = seed
        self.net = TranslatorNet(config)
        _he_uniform_init(self.net, seed)
        self.net.eval()

    @property
    def param_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    def parameter_names(self) -> list[str]:
        return [name for name, _ in self.net.named_parameters()]

    def flatten_params(self) -> np.ndarray:
        with torch.no_grad():
            parts = [p.reshape(-1).to(torch.float32).numpy() for _, p in self.net.named_parameters()]
        return np.concatenate(parts).copy()

    def load_flat_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float32)
        if flat.shape != (self.param_count,):
            raise ValidationError(
                f"expected {self.param_count} parameters, got {flat.shape}"
            )
        offset = 0
        with torch.no_grad():
            for _, p in self.net.named_parameters():
                n = p.numel()
                chunk = torch.from_numpy(flat[offset : offset + n].copy())
                p.copy_(chunk.reshape(p.shape).to(p.dtype))
                offset += n

    def params_hash(self) -> str:
        return sha256_arrays({"params": self.flatten_params()})


def _as_input_batch(images: np.ndarray) -> tuple[torch.Tensor, bool]:
    """Normalize accepted image layouts to an (N, 1, H, W) tensor.

    Accepts (H, W), (H, W, 1|3), and their batched forms; 3-channel input
    collapses to 1 channel by averaging.
    """
    arr = np.asarray(images, dtype=np.float32)
    batched = True
    if arr.ndim == 2:
        arr, batched = arr[None, :, :, None], False
    elif arr.ndim == 3:
        if arr.shape[2] in (1, 3):  # single image with channels
            arr, batched = arr[None], False
        else:  # batch of single-channel maps
            arr = arr[:, :, :, None]
    elif arr.ndim != 4:
        raise ValidationError(f"unsupported image array shape {arr.shape}")
    if arr.shape[3] == 3:
        arr = arr.mean(axis=3, keepdims=True)
    elif arr.shape[3] != 1:
        raise ValidationError(f"expected 1 or 3 channels, got {arr.shape[3]}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))), batched


def translator_forward(translator: Translator, images: np.ndarray) -> np.ndarray:
    """Run the network on one image or a batch; returns (..., H, W, 3) in (0, 1)."""
    x, batched = _as_input_batch(images)
    div = 2**translator.config.depth_levels
    h, w = x.shape[2], x.shape[3]
    if h % div or w % div:
        raise ValidationError(
            f"resolution {h}x{w} not divisible by 2^{translator.config.depth_levels}"
        )
    with torch.no_grad():
        y = translator.net(x)
    out = y.numpy().transpose(0, 2, 3, 1)
    return out if batched else out[0]


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over all elements of the squared difference."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValidationError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def pretrain(
    translator: Translator,
    pairs,
    opt,
    max_steps: int | None = None,
    checkpoint_dir=None,
    checkpoint_every: int = 0,
    log=None,
) -> tuple[Translator, list[float]]:
    """Optimize the translator on (sparse mask, RGB) pairs with MSE.

    Returns the translator and the per-epoch mean loss curve. Training is
    deterministic given ``opt.seed``; a ``max_steps`` cap stops mid-epoch
    once that many optimizer steps have run. Writes a checkpoint every
    ``checkpoint_every`` epochs when a directory is given.
    """
    if not pairs:
        raise ValidationError("pre-training corpus is empty")
    div = 2**translator.config.depth_levels
    h, w = pairs[0].input.shape
    if h % div or w % div:
        raise ValidationError(f"pair resolution {h}x{w} not divisible by {div}")

    inputs = torch.from_numpy(np.stack([p.input for p in pairs])[:, None].astype(np.float32))
    targets = torch.from_numpy(
        np.stack([p.target for p in pairs]).transpose(0, 3, 1, 2).astype(np.float32)
    )
    net = translator.net
    optimizer = _make_optimizer(net.parameters(), opt)
    gen = torch.Generator().manual_seed(opt.seed)
    n = len(pairs)
    curve: list[float] = []
    step = 0
    net.train()
    try:
        for epoch in range(opt.epochs):
            if max_steps is not None and step >= max_steps:
                break
            order = torch.randperm(n, generator=gen)
            epoch_losses = []
            for start in range(0, n, opt.batch_size):
                if max_steps is not None and step >= max_steps:
                    break
                batch = order[start : start + opt.batch_size]
                optimizer.zero_grad()
                pred = net(inputs[batch])
                loss = torch.mean((pred - targets[batch]) ** 2)
                value = float(loss.detach())
                if not np.isfinite(value):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, step {step}"
                    )
                loss.backward()
                optimizer.step()
                epoch_losses.append(value)
                step += 1
            if epoch_losses:
                curve.append(float(np.mean(epoch_losses)))
                if log is not None:
                    log(epoch, curve[-1])
            if (
                checkpoint_dir is not None
                and checkpoint_every > 0
                and (epoch + 1) % checkpoint_every == 0
            ):
                save_translator(
                    translator, Path(checkpoint_dir) / f"translator_epoch{epoch + 1:04d}.ckpt",
                    epoch=epoch + 1,
                )
    finally:
        net.eval()
    return translator, curve


def _make_optimizer(params, opt):
    if opt.algorithm == "adam":
        return torch.optim.Adam(params, lr=opt.learning_rate, weight_decay=opt.weight_decay)
    if opt.algorithm == "adamw":
        return torch.optim.AdamW(params, lr=opt.learning_rate, weight_decay=opt.weight_decay)
    raise ValidationError(f"unknown optimizer algorithm {opt.algorithm!r}")


def save_translator(translator: Translator, path, epoch: int = 0) -> None:
    meta = {
        "config": translator.config.to_dict(),
        "epoch": epoch,
        "seed": translator.seed,
        "arch": ARCH_NOTE,
        "param_names": translator.parameter_names(),
    }
    save_container(path, "translator", meta, {"params": translator.flatten_params()})


def load_translator(path) -> tuple[Translator, int]:
    kind, meta, arrays = load_container(path)
    if kind != "translator":
        raise ValidationError(f"{path}: container kind {kind!r} is not 'translator'")
    translator = Translator(TranslatorConfig.from_dict(meta["config"]), seed=meta.get("seed", 0))
    translator.load_flat_params(arrays["params"])
    return translator, int(meta.get("epoch", 0))


def write_loss_curve(curve, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(curve):
            writer.writerow([epoch, f"{loss:.10g}"])
