"""Output fusion: path summation, six binary class heads, the multi-task
loss, and merging head decisions into a label map."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .nn import Conv2d, DoubleConv, Module
from .tensor import ShapeError, Tensor
from .transformer import Decoder, Encoder, Tokenizer

UNKNOWN = 255


class FusePaths(Module):
    """Sum of the two path outputs followed by DoubleConv(C -> num_classes)."""

    def __init__(self, channels: int, num_classes: int):
        super().__init__()
        self.conv = DoubleConv(channels, num_classes)

    def forward(self, t_out: Tensor | None, u_out: Tensor) -> Tensor:
        if t_out is None:
            return self.conv(u_out)
        if t_out.shape != u_out.shape:
            raise ShapeError(f"path outputs differ in shape: {t_out.shape} vs {u_out.shape}")
        return self.conv(t_out + u_out)


class ClassHead(Module):
    """Binary head: tokenizer -> encoder -> cross-attention back onto the
    pixel grid -> 1x1 conv to two logits -> log-softmax over channels.

    Channel 0 is "not this class", channel 1 is "this class".
    """

    def __init__(self, in_channels: int, n_a: int, n_f: int, heads: int, ff_multiplier: int,
                 layers: int, channel: int | None = None):
        super().__init__()
        self.channel = channel
        c = 1 if channel is not None else in_channels
        self.in_channels = in_channels
        self.tokenizer = Tokenizer(c, n_a, n_f)
        self.encoder = Encoder(n_f, heads, ff_multiplier, layers)
        self.decoder = Decoder(c, n_f, heads if c % heads == 0 else 1, ff_multiplier, layers)
        self.classifier = Conv2d(c, 2, 1)

    def forward(self, features: Tensor) -> Tensor:
        if features.shape[1] != self.in_channels:
            raise ShapeError(f"head expects {self.in_channels} channels, got {features.shape[1]}")
        x = features[:, self.channel:self.channel + 1] if self.channel is not None else features
        tokens = self.encoder(self.tokenizer(x))
        return T.log_softmax(self.classifier(self.decoder(x, tokens)), axis=1)


def multitask_loss(heads: Sequence[Tensor], gt: np.ndarray) -> Tensor:
    """Mean over heads of the per-pixel binary negative log-likelihood.

    ``gt`` is N,H,W (or H,W for a single image) of dense class ids.
    """
    gt = np.asarray(gt)
    if (gt == UNKNOWN).any():
        raise ValueError("training labels contain UNKNOWN pixels; labels must be dense")
    total = None
    for i, lp in enumerate(heads):
        lp = lp if lp.ndim == 4 else lp.reshape(1, *lp.shape)
        labels = gt.reshape(lp.shape[0], *lp.shape[2:])
        pos = (labels == i).astype(np.float64)
        target = np.stack([1.0 - pos, pos], axis=1)
        count = labels.size
        head_loss = (lp * target).sum() * (-1.0 / count)
        total = head_loss if total is None else total + head_loss
    return total * (1.0 / len(heads))


def positive_probs(heads: Sequence) -> np.ndarray:
    """Stack exp(log_prob[class]) of each head: K,H,W (single image) or N,K,H,W."""
    arrays = [h.data if isinstance(h, Tensor) else np.asarray(h) for h in heads]
    return np.stack([np.exp(a[..., 1, :, :]) for a in arrays], axis=-3)


def combine_probs(pos: np.ndarray, tau: float = 0.5) -> np.ndarray:
    """Label = most confident head above ``tau`` (lowest id on ties), else UNKNOWN."""
    pos = np.asarray(pos, dtype=np.float64)
    claimed = pos > tau
    scores = np.where(claimed, pos, -np.inf)
    labels = np.argmax(scores, axis=-3).astype(np.uint8)
    labels[~claimed.any(axis=-3)] = UNKNOWN
    return labels


def combine_heads(heads: Sequence, tau: float = 0.5) -> np.ndarray:
    shapes = {tuple((h.data if isinstance(h, Tensor) else np.asarray(h)).shape) for h in heads}
    if len(shapes) != 1:
        raise ShapeError(f"heads disagree on shape: {sorted(shapes)}")
    return combine_probs(positive_probs(heads), tau)
