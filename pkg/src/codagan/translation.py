"""Conditional encoder/decoder generator and least-squares patch discriminator.

One generator and one discriminator serve every registered dataset; the
dataset identity enters through one-hot planes concatenated to the inputs of
the encoder, the decoder and the discriminator. The conv layer that receives
the code planes carries no normalization, since per-sample normalization
would subtract the constant the code contributes.
"""
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .conditioning import OneHotCode, attach_code


class LayerNorm2d(nn.Module):
    """Normalizes each sample over (C, H, W) jointly, with a per-channel affine."""

    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = nn.Parameter(torch.ones(channels))
        self.beta = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        mean = x.mean(dim=(1, 2, 3), keepdim=True)
        std = x.std(dim=(1, 2, 3), keepdim=True)
        x = (x - mean) / (std + self.eps)
        return x * self.gamma.view(1, -1, 1, 1) + self.beta.view(1, -1, 1, 1)


class AdaptiveInstanceNorm2d(nn.Module):
    """Instance norm whose affine parameters come from a style vector."""

    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.weight = None
        self.bias = None

    def forward(self, x):
        if self.weight is None:
            raise RuntimeError("AdaIN parameters not assigned; decode with a style vector")
        x = F.instance_norm(x, eps=self.eps)
        return x * self.weight[:, :, None, None] + self.bias[:, :, None, None]


def _norm(kind, channels):
    if kind == "in":
        return nn.InstanceNorm2d(channels)
    if kind == "ln":
        return LayerNorm2d(channels)
    if kind == "adain":
        return AdaptiveInstanceNorm2d(channels)
    if kind == "none":
        return None
    raise ValueError(f"unknown normalization {kind!r}")


def _act(kind):
    return {
        "relu": nn.ReLU(inplace=True),
        "lrelu": nn.LeakyReLU(0.2, inplace=True),
        "tanh": nn.Tanh(),
        "none": None,
    }[kind]


class ConvBlock(nn.Module):
    def __init__(self, in_ch, out_ch, kernel, stride, padding, norm="none", act="relu"):
        super().__init__()
        self.pad = nn.ReflectionPad2d(padding) if padding else nn.Identity()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel, stride)
        self.norm = _norm(norm, out_ch)
        self.act = _act(act)

    def forward(self, x):
        x = self.conv(self.pad(x))
        if self.norm is not None:
            x = self.norm(x)
        if self.act is not None:
            x = self.act(x)
        return x


class ResBlock(nn.Module):
    def __init__(self, dim, norm="in"):
        super().__init__()
        self.body = nn.Sequential(
            ConvBlock(dim, dim, 3, 1, 1, norm=norm, act="relu"),
            ConvBlock(dim, dim, 3, 1, 1, norm=norm, act="none"),
        )

    def forward(self, x):
        return x + self.body(x)


@dataclass
class LatentCode:
    """The isomorphic representation: a content tensor plus an optional style vector."""
    content: torch.Tensor
    style: torch.Tensor | None = None

    def detach(self):
        return LatentCode(self.content.detach(), None if self.style is None else self.style.detach())


def _as_code(code, n_domains) -> OneHotCode:
    if isinstance(code, OneHotCode):
        if code.length != n_domains:
            raise ValueError(f"code length {code.length} does not match {n_domains} datasets")
        return code
    return OneHotCode(int(code), n_domains)


class Encoder(nn.Module):
    def __init__(self, n_domains, in_channels=1, base_filters=32, n_down=2, n_res=2, style_dim=0):
        super().__init__()
        self.n_domains = n_domains
        self.n_down = n_down
        layers = [ConvBlock(in_channels + n_domains, base_filters, 7, 1, 3, norm="none")]
        dim = base_filters
        for _ in range(n_down):
            layers.append(ConvBlock(dim, 2 * dim, 4, 2, 1, norm="in"))
            dim *= 2
        layers += [ResBlock(dim, norm="in") for _ in range(n_res)]
        self.content = nn.Sequential(*layers)
        self.out_channels = dim
        self.style_dim = style_dim
        if style_dim:
            sdim = base_filters
            style = [ConvBlock(in_channels + n_domains, sdim, 7, 1, 3, norm="none")]
            for _ in range(n_down):
                style.append(ConvBlock(sdim, 2 * sdim, 4, 2, 1, norm="none"))
                sdim *= 2
            style += [nn.AdaptiveAvgPool2d(1), nn.Conv2d(sdim, style_dim, 1)]
            self.style = nn.Sequential(*style)

    def forward(self, images, code) -> LatentCode:
        factor = 2 ** self.n_down
        h, w = images.shape[-2:]
        if h % factor or w % factor:
            raise ValueError(f"image size {h}x{w} is not divisible by {factor}")
        x = attach_code(images, _as_code(code, self.n_domains))
        style = self.style(x).flatten(1) if self.style_dim else None
        return LatentCode(self.content(x), style)


class Decoder(nn.Module):
    def __init__(self, n_domains, latent_channels=128, out_channels=1, n_up=2, n_res=2,
                 style_dim=0, mlp_dim=64):
        super().__init__()
        self.n_domains = n_domains
        self.latent_channels = latent_channels
        self.style_dim = style_dim
        res_norm = "adain" if style_dim else "ln"
        self.inject = ConvBlock(latent_channels + n_domains, latent_channels, 3, 1, 1, norm="none")
        self.res = nn.Sequential(*[ResBlock(latent_channels, norm=res_norm) for _ in range(n_res)])
        ups = []
        dim = latent_channels
        for _ in range(n_up):
            ups += [nn.Upsample(scale_factor=2, mode="nearest"),
                    ConvBlock(dim, dim // 2, 5, 1, 2, norm="ln")]
            dim //= 2
        self.up = nn.Sequential(*ups)
        self.out = ConvBlock(dim, out_channels, 7, 1, 3, norm="none", act="tanh")
        if style_dim:
            n_params = sum(2 * m.channels for m in self.modules() if isinstance(m, AdaptiveInstanceNorm2d))
            self.mlp = nn.Sequential(
                nn.Linear(style_dim, mlp_dim), nn.ReLU(inplace=True),
                nn.Linear(mlp_dim, n_params),
            )

    def _assign_style(self, style):
        params = self.mlp(style)
        for m in self.modules():
            if isinstance(m, AdaptiveInstanceNorm2d):
                c = m.channels
                m.bias = params[:, :c]
                m.weight = 1.0 + params[:, c:2 * c]
                params = params[:, 2 * c:]

    def forward(self, latent: LatentCode, code) -> torch.Tensor:
        content = latent.content
        if content.shape[1] != self.latent_channels:
            raise ValueError(f"latent has {content.shape[1]} channels, decoder expects {self.latent_channels}")
        if self.style_dim:
            if latent.style is None:
                raise ValueError("content/style decoder needs a style vector")
            self._assign_style(latent.style)
        x = self.inject(attach_code(content, _as_code(code, self.n_domains)))
        return self.out(self.up(self.res(x)))


class Generator(nn.Module):
    """G = (encoder, decoder), shared by all datasets.

    ``variant`` is ``"shared"`` (the whole latent is one tensor) or
    ``"content-style"`` (a spatial content tensor plus a global style vector).
    """

    def __init__(self, n_domains, in_channels=1, base_filters=32, n_sample=2, n_res=2,
                 variant="shared", style_dim=8):
        super().__init__()
        if variant not in ("shared", "content-style"):
            raise ValueError(f"unknown latent variant {variant!r}")
        self.n_domains = n_domains
        self.variant = variant
        self.style_dim = style_dim if variant == "content-style" else 0
        self.encoder = Encoder(n_domains, in_channels, base_filters, n_sample, n_res, self.style_dim)
        self.decoder = Decoder(n_domains, self.encoder.out_channels, in_channels, n_sample, n_res,
                               self.style_dim)

    @property
    def latent_channels(self) -> int:
        return self.encoder.out_channels

    def encode(self, images, code) -> LatentCode:
        return self.encoder(images, code)

    def decode(self, latent: LatentCode, code) -> torch.Tensor:
        return self.decoder(latent, code)

    def translate(self, images, code_a, code_b, style=None) -> torch.Tensor:
        """X_{a->b}. The content/style variant decodes with ``style`` (one is drawn if omitted)."""
        latent = self.encode(images, code_a)
        if self.style_dim:
            if style is None:
                style = sample_style(self.style_dim, None, n=images.shape[0])
            latent = LatentCode(latent.content, style)
        return self.decode(latent, code_b)


def sample_style(dim: int, rng=None, n: int | None = None):
    """Standard-normal style vector(s) of length ``dim``.

    ``rng`` may be a numpy Generator (returns an ndarray) or a torch
    Generator / None (returns a tensor).
    """
    if dim < 1:
        raise ValueError(f"style dimension must be >= 1, got {dim}")
    shape = (dim,) if n is None else (n, dim)
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal(shape).astype(np.float32)
    return torch.randn(shape, generator=rng)


class Discriminator(nn.Module):
    """Conditional patch discriminator: two stride-2 blocks and a 1x1 score head, no output squashing."""

    def __init__(self, n_domains, in_channels=1, base_filters=64, n_layers=2):
        super().__init__()
        self.n_domains = n_domains
        layers = [ConvBlock(in_channels + n_domains, base_filters, 4, 2, 1, norm="none", act="lrelu")]
        dim = base_filters
        for _ in range(n_layers - 1):
            layers.append(ConvBlock(dim, 2 * dim, 4, 2, 1, norm="none", act="lrelu"))
            dim *= 2
        layers.append(nn.Conv2d(dim, 1, 1))
        self.model = nn.Sequential(*layers)

    def forward(self, images, code) -> torch.Tensor:
        return self.model(attach_code(images, _as_code(code, self.n_domains)))


def encode(generator: Generator, images, code_a) -> LatentCode:
    return generator.encode(images, code_a)


def decode(generator: Generator, latent: LatentCode, code_b) -> torch.Tensor:
    return generator.decode(latent, code_b)


def translate(generator: Generator, images, code_a, code_b, style=None) -> torch.Tensor:
    return generator.translate(images, code_a, code_b, style)


def discriminate(discriminator: Discriminator, images, code) -> torch.Tensor:
    return discriminator(images, code)
