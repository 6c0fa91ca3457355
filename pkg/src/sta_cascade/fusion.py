"""Transformer fusion of active-object queries with visual tokens, plus prediction heads."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List

import torch
import torch.nn.functional as F
from torch import nn

from .core import ModelConfig, NumericError, ShapeError
from .encoding import (BoxEncoder, CategoryEmbedding, QueryMatrix, ToyPatchifyBackbone,
                       VisualTokenizer, build_query)


@dataclass
class FusedSequence:
    Q_prime: torch.Tensor
    per_layer_outputs: List[torch.Tensor]


@dataclass
class HeadOutputs:
    p_obj: torch.Tensor  # (..., k)
    p_int: torch.Tensor  # (..., k, V_verb)
    ttc: torch.Tensor  # (..., k)


@dataclass
class ModelOutput:
    fused: FusedSequence
    per_layer: List[HeadOutputs]

    @property
    def final(self) -> HeadOutputs:
        return self.per_layer[-1]


def concat_queries(Q: QueryMatrix | torch.Tensor, V: torch.Tensor) -> torch.Tensor:
    q = Q.Q if isinstance(Q, QueryMatrix) else Q
    if q.shape[-1] != V.shape[-1]:
        raise ShapeError(f"embedding dims differ: queries {q.shape[-1]}, visual {V.shape[-1]}")
    return torch.cat([q, V], dim=-2)


class SelfAttention(nn.Module):
    def __init__(self, d: int, num_heads: int, dropout: float = 0.0):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = d // num_heads
        self.qkv = nn.Linear(d, 3 * d)
        self.out = nn.Linear(d, d)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, key_padding_mask: torch.Tensor | None = None) -> torch.Tensor:
        *lead, n, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)

        def heads(t):
            return t.reshape(*lead, n, self.num_heads, self.head_dim).transpose(-3, -2)

        q, k, v = heads(q), heads(k), heads(v)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if key_padding_mask is not None:
            # (..., n) -> (..., 1, 1, n); broadcast over heads and query rows
            mask = key_padding_mask.unsqueeze(-2).unsqueeze(-2)
            scores = scores.masked_fill(mask, float("-inf"))
        attn = self.dropout(scores.softmax(dim=-1))
        y = (attn @ v).transpose(-3, -2).reshape(*lead, n, d)
        return self.out(y)


class PreNormLayer(nn.Module):
    """x + MHSA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, d: int, num_heads: int, ff_dim: int, dropout: float = 0.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.attn = SelfAttention(d, num_heads, dropout)
        self.norm2 = nn.LayerNorm(d)
        self.ff = nn.Sequential(nn.Linear(d, ff_dim), nn.GELU(), nn.Dropout(dropout), nn.Linear(ff_dim, d))
        self.drop1 = nn.Dropout(dropout)
        self.drop2 = nn.Dropout(dropout)

    def forward(self, x, key_padding_mask=None):
        x = x + self.drop1(self.attn(self.norm1(x), key_padding_mask))
        return x + self.drop2(self.ff(self.norm2(x)))


class FusionEncoder(nn.Module):
    def __init__(self, d: int, num_layers: int, num_heads: int, ff_dim: int, dropout: float = 0.0):
        super().__init__()
        self.layers = nn.ModuleList(PreNormLayer(d, num_heads, ff_dim, dropout) for _ in range(num_layers))
        self.final_norm = nn.LayerNorm(d)

    def forward(self, q_prime: torch.Tensor, key_padding_mask: torch.Tensor | None = None) -> FusedSequence:
        if not torch.isfinite(q_prime).all():
            raise NumericError("non-finite values in fused query sequence")
        outputs = []
        x = q_prime
        for layer in self.layers:
            x = layer(x, key_padding_mask)
            outputs.append(x)
        return FusedSequence(Q_prime=q_prime, per_layer_outputs=outputs)


class ObjectHead(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.linear = nn.Linear(d, 1)

    def forward(self, x):
        return torch.sigmoid(self.linear(x)).squeeze(-1)


class InteractionHead(nn.Module):
    def __init__(self, d: int, num_verbs: int):
        super().__init__()
        self.linear = nn.Linear(d, num_verbs)

    def forward(self, x):
        return self.linear(x).softmax(dim=-1)


class TTCHead(nn.Module):
    def __init__(self, d: int, hidden: int):
        super().__init__()
        self.mlp = nn.Sequential(nn.Linear(d, hidden), nn.ReLU(), nn.Linear(hidden, hidden),
                                 nn.ReLU(), nn.Linear(hidden, 1))

    def forward(self, x):
        return F.softplus(self.mlp(x)).squeeze(-1)


class PredictionHeads(nn.Module):
    def __init__(self, d: int, num_verbs: int, ttc_hidden: int):
        super().__init__()
        self.obj = ObjectHead(d)
        self.interaction = InteractionHead(d, num_verbs)
        self.ttc = TTCHead(d, ttc_hidden)

    def forward(self, query_rows: torch.Tensor) -> HeadOutputs:
        return HeadOutputs(p_obj=self.obj(query_rows), p_int=self.interaction(query_rows),
                           ttc=self.ttc(query_rows))


def predict_object_prob(heads: PredictionHeads, rows: torch.Tensor) -> torch.Tensor:
    return heads.obj(rows)


def predict_interaction(heads: PredictionHeads, rows: torch.Tensor) -> torch.Tensor:
    return heads.interaction(rows)


def predict_ttc(heads: PredictionHeads, rows: torch.Tensor) -> torch.Tensor:
    return heads.ttc(rows)


class AnticipationModel(nn.Module):
    """Second stage: boxes + categories + frame -> per-layer head outputs.

    The number of query rows is taken from the inputs, so the same weights
    serve ``k_train`` during training and ``k_infer`` at inference.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.d
        self.box_encoder = BoxEncoder(d)
        self.category_embedding = CategoryEmbedding(config.num_nouns, d)
        backbone = ToyPatchifyBackbone(config.image_size, config.grid, config.backbone_dim)
        self.visual = VisualTokenizer(backbone, backbone.out_dim, d)
        self.encoder = FusionEncoder(d, config.num_layers, config.num_heads, config.ff_mult * d,
                                     config.dropout)
        self.heads = PredictionHeads(d, config.num_verbs, config.ttc_hidden or d)

    def backbone_parameters(self):
        return list(self.visual.backbone.parameters())

    def other_parameters(self):
        backbone = {id(p) for p in self.backbone_parameters()}
        return [p for p in self.parameters() if id(p) not in backbone]

    def build_queries(self, boxes, noun_ids, padding_mask) -> QueryMatrix:
        return build_query(self.box_encoder(boxes), self.category_embedding(noun_ids), padding_mask)

    def forward(self, boxes: torch.Tensor, noun_ids: torch.Tensor, padding_mask: torch.Tensor,
                images: torch.Tensor) -> ModelOutput:
        query = self.build_queries(boxes, noun_ids, padding_mask)
        V = self.visual(images)
        q_prime = concat_queries(query, V)
        k = boxes.shape[-2]
        visual_mask = torch.zeros(V.shape[:-1], dtype=torch.bool, device=V.device)
        key_mask = torch.cat([padding_mask, visual_mask], dim=-1)
        fused = self.encoder(q_prime, key_mask)
        per_layer = [self.heads(self.encoder.final_norm(out[..., :k, :]))
                     for out in fused.per_layer_outputs]
        return ModelOutput(fused=fused, per_layer=per_layer)
