"""Supervised dense labeler reading the isomorphic representation, plus a full U-Net baseline."""
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

PROB_EPS = 1e-7


def double_conv(in_ch, out_ch):
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, padding=1), nn.BatchNorm2d(out_ch), nn.ReLU(inplace=True),
        nn.Conv2d(out_ch, out_ch, 3, padding=1), nn.BatchNorm2d(out_ch), nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    """U-Net with ``depth`` pooling stages and a sigmoid head.

    ``truncate`` removes that many leading encoder blocks, so the network
    accepts inputs already downsampled by ``2**truncate`` with
    ``base * 2**truncate`` channels. The removed levels are restored on the
    way up by plain upsampling blocks that receive no skip connections.
    """

    def __init__(self, in_channels=1, base_filters=32, depth=4, truncate=0):
        super().__init__()
        if not 0 <= truncate < depth:
            raise ValueError("truncate must lie in [0, depth)")
        widths = [base_filters * 2 ** i for i in range(depth + 1)]
        self.truncate = truncate
        self.in_channels = in_channels
        self.down = nn.ModuleList()
        ch = in_channels
        for i in range(truncate, depth):
            self.down.append(double_conv(ch, widths[i]))
            ch = widths[i]
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = double_conv(widths[depth - 1], widths[depth])
        self.up = nn.ModuleList()
        self.up_conv = nn.ModuleList()
        for i in reversed(range(truncate, depth)):
            self.up.append(nn.ConvTranspose2d(widths[i + 1], widths[i], 2, stride=2))
            self.up_conv.append(double_conv(2 * widths[i], widths[i]))
        self.restore = nn.ModuleList()
        for i in reversed(range(truncate)):
            self.restore.append(nn.Sequential(
                nn.ConvTranspose2d(widths[i + 1], widths[i], 2, stride=2),
                double_conv(widths[i], widths[i]),
            ))
        self.head = nn.Conv2d(widths[0], 1, 1)

    def forward(self, x):
        """Return per-pixel foreground logits."""
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {x.shape[1]}")
        levels = len(self.down)
        if x.shape[-2] % 2 ** levels or x.shape[-1] % 2 ** levels:
            raise ValueError(f"input size {tuple(x.shape[-2:])} is not divisible by {2 ** levels}")
        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for up, conv, skip in zip(self.up, self.up_conv, reversed(skips)):
            x = conv(torch.cat([up(x), skip], dim=1))
        for block in self.restore:
            x = block(x)
        return self.head(x)


class LatentSegmenter(UNet):
    """M: a U-Net missing its first two encoder blocks, fed the content tensor."""

    def __init__(self, latent_channels=128, depth=4, truncate=2):
        base = latent_channels // 2 ** truncate
        if base * 2 ** truncate != latent_channels:
            raise ValueError(f"latent channels {latent_channels} not divisible by {2 ** truncate}")
        super().__init__(latent_channels, base, depth, truncate)


@dataclass
class PredictionMap:
    probabilities: torch.Tensor  # B x 1 x H x W, strictly inside (0, 1)
    threshold: float = 0.5

    @property
    def binarized(self) -> torch.Tensor:
        return binarize(self.probabilities, self.threshold)


def probabilities(logits: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(logits).clamp(PROB_EPS, 1.0 - PROB_EPS)


def predict(model: LatentSegmenter, latent, threshold=0.5) -> PredictionMap:
    """Probability map at full image resolution from a latent (or its content tensor)."""
    content = latent.content if hasattr(latent, "content") else latent
    return PredictionMap(probabilities(model(content)), threshold)


def baseline_predict(model: UNet, images, threshold=0.5) -> PredictionMap:
    return PredictionMap(probabilities(model(images)), threshold)


def binarize(probs, threshold=0.5):
    """1 where prob >= threshold (ties go to foreground)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    if isinstance(probs, np.ndarray):
        return (probs >= threshold).astype(np.uint8)
    return (probs >= threshold).to(torch.uint8)
