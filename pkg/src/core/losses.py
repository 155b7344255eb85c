"""Classifier heads and their losses.

`ClassifierHead` holds the class weight matrix [E x N] without bias. The
AAM head scores with cosine similarity between L2-normalised embeddings and
L2-normalised class columns and, during training, adds an angular margin to
the target class; the softmax head uses plain dot products.
"""
import math
from typing import Optional, Sequence

import numpy as np

from src.core.errors import DimensionError
from src.core.functional import cross_entropy, l2_normalize
from src.core.layers import Module, uniform_init
from src.core.tensor import Tensor

# Cosine clamp keeping sqrt(1 - cos^2) differentiable
COS_LIMIT = 1.0 - 1e-7


class ClassifierHead(Module):
    def __init__(self, embedding_dim: int, num_classes: int, rng: np.random.Generator,
                 loss: str = "aam", margin: float = 0.2, scale: float = 30.0):
        super().__init__()
        self.embedding_dim, self.num_classes = embedding_dim, num_classes
        self.loss, self.margin, self.scale = loss, margin, scale
        self.W = self.add_parameter("W", uniform_init(rng, (embedding_dim, num_classes), embedding_dim))

    def cosine(self, embeddings: Tensor) -> Tensor:
        """[B x E] -> cosine similarities [B x N], clamped inside (-1, 1)"""
        if embeddings.ndim != 2 or embeddings.shape[1] != self.embedding_dim:
            raise DimensionError(f"head expects [B x {self.embedding_dim}] embeddings, got {list(embeddings.shape)}")
        cos = l2_normalize(embeddings, axis=1) @ l2_normalize(self.W, axis=0)
        return cos.clamp(-COS_LIMIT, COS_LIMIT)

    def logits(self, embeddings: Tensor) -> Tensor:
        """Margin-free class scores used at inference"""
        if self.loss == "softmax":
            return embeddings @ self.W
        return self.cosine(embeddings) * self.scale

    def loss_value(self, embeddings: Tensor, labels: Sequence[int]) -> Tensor:
        if self.loss == "softmax":
            return softmax_loss(embeddings, labels, self)
        return aam_loss(embeddings, labels, self)

    def forward(self, embeddings: Tensor, labels: Optional[Sequence[int]] = None) -> Tensor:
        if labels is None:
            return self.logits(embeddings)
        return self.loss_value(embeddings, labels)


def _target_mask(labels: np.ndarray, rows: int, num_classes: int) -> np.ndarray:
    if labels.shape != (rows,):
        raise DimensionError(f"{labels.size} labels for {rows} embeddings")
    if rows and (labels.min() < 0 or labels.max() >= num_classes):
        raise DimensionError(f"labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]")
    mask = np.zeros((rows, num_classes))
    mask[np.arange(rows), labels] = 1.0
    return mask


def aam_loss(embeddings: Tensor, labels: Sequence[int], head: ClassifierHead) -> Tensor:
    """Additive angular margin softmax

    Target logit scale * cos(theta_y + m), other logits scale * cos(theta_j),
    then mean cross entropy over the batch.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    cos = head.cosine(embeddings)
    mask = _target_mask(labels, cos.shape[0], head.num_classes)
    sin = (1.0 - cos * cos).sqrt()
    with_margin = cos * math.cos(head.margin) - sin * math.sin(head.margin)
    logits = (with_margin * mask + cos * (1.0 - mask)) * head.scale
    return cross_entropy(logits, labels)


def softmax_loss(embeddings: Tensor, labels: Sequence[int], head: ClassifierHead) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    _target_mask(labels, embeddings.shape[0], head.num_classes)
    return cross_entropy(head.logits(embeddings), labels)
