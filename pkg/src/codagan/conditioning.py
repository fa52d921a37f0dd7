"""One-hot dataset codes broadcast as constant image channels."""
from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class OneHotCode:
    index: int
    length: int

    def __post_init__(self):
        if self.length < 1:
            raise ValueError(f"code length must be >= 1, got {self.length}")
        if not 0 <= self.index < self.length:
            raise ValueError(f"dataset index {self.index} out of range for {self.length} datasets")

    @property
    def vector(self) -> np.ndarray:
        v = np.zeros(self.length, dtype=np.float32)
        v[self.index] = 1.0
        return v

    def as_channels(self, height: int, width: int, batch: int | None = None,
                    dtype=torch.float32, device=None) -> torch.Tensor:
        """N constant planes (N x H x W), or B x N x H x W when ``batch`` is given."""
        planes = torch.zeros(self.length, height, width, dtype=dtype, device=device)
        planes[self.index] = 1.0
        if batch is not None:
            planes = planes.unsqueeze(0).expand(batch, -1, -1, -1)
        return planes


def encode_onehot(k: int, n: int) -> OneHotCode:
    return OneHotCode(int(k), int(n))


def attach_code(tensor: torch.Tensor, code: OneHotCode) -> torch.Tensor:
    """Concatenate the code planes after the channels of ``tensor``.

    Accepts C x H x W or B x C x H x W. The original channels are copied
    unchanged; the appended planes are exactly 0 or 1.
    """
    if tensor.dim() == 3:
        _, h, w = tensor.shape
        planes = code.as_channels(h, w, dtype=tensor.dtype, device=tensor.device)
        return torch.cat([tensor, planes], dim=0)
    if tensor.dim() == 4:
        b, _, h, w = tensor.shape
        planes = code.as_channels(h, w, batch=b, dtype=tensor.dtype, device=tensor.device)
        return torch.cat([tensor, planes], dim=1)
    raise ValueError(f"expected a C x H x W or B x C x H x W tensor, got shape {tuple(tensor.shape)}")
