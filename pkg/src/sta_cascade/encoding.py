"""Query construction from boxes/categories and visual tokens from the frame."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .core import DataError, ShapeError


@dataclass
class QueryMatrix:
    Q: torch.Tensor  # (..., k, d)
    padding_mask: torch.Tensor  # (..., k) bool, True = padding row


class BoxEncoder(nn.Module):
    """Single affine map from (x1, y1, x2, y2) to a d-dim row."""

    def __init__(self, d: int):
        super().__init__()
        self.linear = nn.Linear(4, d)

    def forward(self, boxes: torch.Tensor) -> torch.Tensor:
        if boxes.shape[-1] != 4:
            raise ShapeError(f"boxes must have 4 columns, got shape {tuple(boxes.shape)}")
        return self.linear(boxes)


class CategoryEmbedding(nn.Module):
    """Lookup table of ``num_nouns + 1`` rows; the last row is reserved for padding."""

    def __init__(self, num_nouns: int, d: int):
        super().__init__()
        self.num_nouns = num_nouns
        self.table = nn.Embedding(num_nouns + 1, d)
        nn.init.normal_(self.table.weight, std=0.02)

    def forward(self, noun_ids: torch.Tensor) -> torch.Tensor:
        if noun_ids.numel() and (int(noun_ids.min()) < 0 or int(noun_ids.max()) > self.num_nouns):
            raise IndexError(f"noun id outside [0, {self.num_nouns}]: {noun_ids.tolist()}")
        return self.table(noun_ids)


def build_query(B: torch.Tensor, C: torch.Tensor, padding_mask: torch.Tensor) -> QueryMatrix:
    if B.shape != C.shape:
        raise ShapeError(f"box and category embeddings differ: {tuple(B.shape)} vs {tuple(C.shape)}")
    return QueryMatrix(Q=B + C, padding_mask=padding_mask)


class ToyPatchifyBackbone(nn.Module):
    """Splits a square image into a ``grid x grid`` set of patches.

    Each patch is flattened channel-major. With ``feat_dim`` set, the flat
    patch is additionally passed through a learned linear map; otherwise the
    grid features are the raw patches (``d_v = 3 * p * p``).
    """

    def __init__(self, image_size: int, grid: int, feat_dim: int | None = None):
        super().__init__()
        if image_size % grid:
            raise ValueError("image_size must be divisible by grid")
        self.image_size = image_size
        self.grid = grid
        self.patch = image_size // grid
        self.patch_dim = 3 * self.patch * self.patch
        self.embed = nn.Linear(self.patch_dim, feat_dim) if feat_dim else None
        self.out_dim = feat_dim or self.patch_dim

    @property
    def num_tokens(self) -> int:
        return self.grid * self.grid

    def patchify(self, images: torch.Tensor) -> torch.Tensor:
        squeeze = images.dim() == 3
        if squeeze:
            images = images.unsqueeze(0)
        if images.dim() != 4 or tuple(images.shape[1:]) != (3, self.image_size, self.image_size):
            raise DataError(
                f"expected frames of shape (3, {self.image_size}, {self.image_size}), "
                f"got {tuple(images.shape)}")
        n, p, g = images.shape[0], self.patch, self.grid
        x = images.reshape(n, 3, g, p, g, p).permute(0, 2, 4, 1, 3, 5)
        x = x.reshape(n, g * g, self.patch_dim)
        return x[0] if squeeze else x

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = self.patchify(images)
        return self.embed(x) if self.embed is not None else x


class VisualTokenizer(nn.Module):
    """Backbone grid features followed by one affine projection to d."""

    def __init__(self, backbone: nn.Module, feat_dim: int, d: int):
        super().__init__()
        self.backbone = backbone
        self.proj = nn.Linear(feat_dim, d)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.proj(self.backbone(images))

