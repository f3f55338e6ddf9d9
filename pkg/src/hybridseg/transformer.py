"""Global path: MBConv backbone, semantic tokenizer, pre-norm transformer
encoder and cross-attention decoder over the pixel grid."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .nn import ConvBN, Conv2d, LayerNorm, Linear, Module, ModuleList, Sequential, mbconv_stage
from .tensor import ShapeError, Tensor


def attention(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """softmax(q k^T / sqrt(d)) v over the last two axes; returns (output, weights)."""
    d = q.shape[-1]
    scores = T.matmul(q, k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)) * (1.0 / math.sqrt(d))
    weights = T.softmax(scores, axis=-1)
    return T.matmul(weights, v), weights


class Tokenizer(Module):
    """Pools an N,C,H,W map into N_a tokens of width N_f.

    Two bias-free pointwise convs give attention logits (N_a groups) and
    feature logits (N_f groups); both are softmaxed over the H*W positions and
    the tokens are A^T F.
    """

    def __init__(self, channels: int, n_a: int, n_f: int):
        super().__init__()
        self.channels, self.n_a, self.n_f = channels, n_a, n_f
        self.attn = Conv2d(channels, n_a, 1, bias=False)
        self.feat = Conv2d(channels, n_f, 1, bias=False)
        self.last_attention: np.ndarray | None = None

    def maps(self, x: Tensor) -> tuple[Tensor, Tensor]:
        if x.shape[1] != self.channels:
            raise ShapeError(f"tokenizer expects {self.channels} channels, got {x.shape[1]}")
        n, _, h, w = x.shape
        a = T.softmax(self.attn(x).reshape(n, self.n_a, h * w), axis=-1)
        f = T.softmax(self.feat(x).reshape(n, self.n_f, h * w), axis=-1)
        return a, f

    def forward(self, x: Tensor) -> Tensor:
        a, f = self.maps(x)
        self.last_attention = a.data
        # a: [N, N_a, HW] is A^T; f^T: [N, HW, N_f]
        return T.matmul(a, f.transpose(0, 2, 1))


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, kv_dim: int | None = None):
        super().__init__()
        if dim % heads:
            raise ShapeError(f"embedding size {dim} not divisible by {heads} heads")
        kv_dim = dim if kv_dim is None else kv_dim
        self.dim, self.heads, self.kv_dim = dim, heads, kv_dim
        self.q = Linear(dim, dim)
        self.k = Linear(kv_dim, dim)
        self.v = Linear(kv_dim, dim)
        self.out = Linear(dim, dim)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        n, s, _ = x.shape
        return x.reshape(n, s, self.heads, self.dim // self.heads).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor, memory: Tensor | None = None) -> Tensor:
        memory = x if memory is None else memory
        if memory.shape[-1] != self.kv_dim:
            raise ShapeError(f"key/value embedding {memory.shape[-1]} != expected {self.kv_dim}")
        n, s, _ = x.shape
        out, w = attention(self._split(self.q(x)), self._split(self.k(memory)), self._split(self.v(memory)))
        self.last_weights = w.data
        return self.out(out.transpose(0, 2, 1, 3).reshape(n, s, self.dim))


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = Linear(dim, hidden)
        self.fc2 = Linear(hidden, dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.swish(self.fc1(x)))


class EncoderLayer(Module):
    def __init__(self, dim: int, heads: int, ff_multiplier: int):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.msa = MultiHeadAttention(dim, heads)
        self.norm2 = LayerNorm(dim)
        self.ff = FeedForward(dim, ff_multiplier * dim)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.msa(self.norm1(x))
        return x + self.ff(self.norm2(x))


class DecoderLayer(Module):
    """Pre-norm cross-attention: queries from pixels, keys/values from tokens."""

    def __init__(self, dim: int, token_dim: int, heads: int, ff_multiplier: int):
        super().__init__()
        self.norm_q = LayerNorm(dim)
        self.norm_kv = LayerNorm(token_dim)
        self.mca = MultiHeadAttention(dim, heads, kv_dim=token_dim)
        self.norm2 = LayerNorm(dim)
        self.ff = FeedForward(dim, ff_multiplier * dim)

    def forward(self, x: Tensor, tokens: Tensor) -> Tensor:
        x = x + self.mca(self.norm_q(x), self.norm_kv(tokens))
        return x + self.ff(self.norm2(x))


class Encoder(Module):
    def __init__(self, dim: int, heads: int, ff_multiplier: int, layers: int):
        super().__init__()
        self.layers = ModuleList(EncoderLayer(dim, heads, ff_multiplier) for _ in range(layers))

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class Decoder(Module):
    def __init__(self, dim: int, token_dim: int, heads: int, ff_multiplier: int, layers: int):
        super().__init__()
        self.dim, self.token_dim = dim, token_dim
        self.layers = ModuleList(DecoderLayer(dim, token_dim, heads, ff_multiplier) for _ in range(layers))

    def forward(self, feats: Tensor, tokens: Tensor) -> Tensor:
        n, c, h, w = feats.shape
        if c != self.dim:
            raise ShapeError(f"decoder expects {self.dim} feature channels, got {c}")
        if tokens.shape[-1] != self.token_dim:
            raise ShapeError(f"decoder expects token width {self.token_dim}, got {tokens.shape[-1]}")
        x = feats.reshape(n, c, h * w).transpose(0, 2, 1)
        for layer in self.layers:
            x = layer(x, tokens)
        return x.transpose(0, 2, 1).reshape(n, c, h, w)


class Backbone(Module):
    """Headless MBConv feature extractor: stride-1 stem then stride-2 stages."""

    def __init__(self, stem: int, widths, depths, kernels, expansion, se_ratio, use_se):
        super().__init__()
        self.stem = ConvBN(3, stem, 3, 1, act=T.swish)
        blocks = []
        cin = stem
        for i, (w, d, k) in enumerate(zip(widths, depths, kernels)):
            stage = Sequential(mbconv_stage(cin, w, d, 2, k, expansion, se_ratio, use_se))
            setattr(self, f"stage{i}", stage)
            blocks.append(stage)
            cin = w
        self._stages = blocks
        self.stride = 2 ** len(widths)
        self.out_channels = cin

    def forward(self, x: Tensor) -> Tensor:
        x = self.stem(x)
        for stage in self._stages:
            x = stage(x)
        return x


class TransformerPath(Module):
    def __init__(self, cfg):
        super().__init__()
        self.backbone = Backbone(cfg.tr_stem, cfg.tr_widths, cfg.tr_depths, cfg.tr_kernels,
                                 cfg.expansion, cfg.se_ratio, cfg.use_se)
        c = self.backbone.out_channels
        self.tokenizer = Tokenizer(c, cfg.n_a, cfg.n_f)
        self.encoder = Encoder(cfg.n_f, cfg.heads, cfg.ff_multiplier, cfg.layers)
        self.decoder = Decoder(c, cfg.n_f, cfg.heads, cfg.ff_multiplier, cfg.layers)

    def forward(self, fused: Tensor) -> Tensor:
        h, w = fused.shape[2:]
        s = self.backbone.stride
        if h % s or w % s:
            raise ShapeError(f"input {h}x{w} not divisible by backbone stride {s}")
        feats = self.backbone(fused)
        tokens = self.encoder(self.tokenizer(feats))
        out = self.decoder(feats, tokens)
        return T.upsample_nearest(out, s)
