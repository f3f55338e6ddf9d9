"""Local path: U-Net with an MBConv encoder and a transposed-conv decoder."""
from __future__ import annotations

from . import tensor as T
from .nn import ConvBN, ConvTranspose2d, DoubleConv, Module, ModuleList, Sequential, mbconv_stage
from .tensor import ShapeError, Tensor


class EffUNet(Module):
    """Stem (stride 2) + MBConv stages; the first stage keeps resolution, the
    rest halve it.  The decoder walks back one resolution level at a time:
    transposed conv (x2 extent, half channels), concat the stage skip when that
    stage is listed in ``skip_stages``, then DoubleConv back to the stage width.
    The last level returns to input resolution and concatenates the fused input.
    """

    def __init__(self, cfg):
        super().__init__()
        widths, depths, kernels = cfg.unet_widths, cfg.unet_depths, cfg.unet_kernels
        if len(widths) != len(depths) or len(widths) < 3:
            raise ValueError("unet_widths and unet_depths must have equal length >= 3")
        skips = list(cfg.skip_stages)
        if skips != sorted(set(skips)) or any(not 0 <= s < len(widths) - 1 for s in skips):
            raise ValueError(f"skip_stages must be strictly increasing indices below the last stage, got {skips}")
        self.widths, self.skip_stages = list(widths), skips
        self.out_channels = cfg.feature_channels
        self.enc = Module()
        self.enc.stem = ConvBN(3, widths[0], 3, 2, act=T.swish)
        self._stages = []
        cin = widths[0]
        for i, (w, d, k) in enumerate(zip(widths, depths, kernels)):
            stage = Sequential(mbconv_stage(cin, w, d, 1 if i == 0 else 2, k,
                                            cfg.expansion, cfg.se_ratio, cfg.use_se))
            setattr(self.enc, f"stage{i}", stage)
            self._stages.append(stage)
            cin = w
        self.dec = Module()
        self.dec.ups = ModuleList()
        self.dec.convs = ModuleList()
        # plain aliases, not registered twice
        object.__setattr__(self, "ups", self.dec.ups)
        object.__setattr__(self, "convs", self.dec.convs)
        ch = widths[-1]
        for level in range(len(widths) - 2, -1, -1):
            half = max(1, ch // 2)
            self.ups.append(ConvTranspose2d(ch, half))
            extra = widths[level] if level in skips else 0
            self.convs.append(DoubleConv(half + extra, widths[level]))
            ch = widths[level]
        half = max(1, ch // 2)
        self.ups.append(ConvTranspose2d(ch, half))
        self.convs.append(DoubleConv(half + 3, cfg.feature_channels))

    @property
    def total_stride(self) -> int:
        return 2 ** len(self.widths)

    def encode(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        h, w = x.shape[2:]
        s = self.total_stride
        if h % s or w % s:
            raise ShapeError(f"input {h}x{w} not divisible by 2^{len(self.widths)}")
        y = self.enc.stem(x)
        skips = []
        for i, stage in enumerate(self._stages):
            y = stage(y)
            if i in self.skip_stages:
                skips.append(y)
        return y, skips

    def decode(self, bottleneck: Tensor, skips: list[Tensor], full_res: Tensor) -> Tensor:
        if len(skips) != len(self.skip_stages):
            raise ShapeError(f"expected {len(self.skip_stages)} skips, got {len(skips)}")
        by_stage = dict(zip(self.skip_stages, skips))
        y = bottleneck
        levels = list(range(len(self.widths) - 2, -1, -1))
        for up, conv, level in zip(self.ups, self.convs, levels):
            y = up(y)
            if level in by_stage:
                y = _concat_aligned(y, by_stage[level])
            y = conv(y)
        y = _concat_aligned(self.ups[len(levels)](y), full_res)
        return self.convs[len(levels)](y)

    def forward(self, fused: Tensor) -> Tensor:
        bottleneck, skips = self.encode(fused)
        return self.decode(bottleneck, skips, fused)


def _concat_aligned(up: Tensor, skip: Tensor) -> Tensor:
    if up.shape[0] != skip.shape[0] or up.shape[2:] != skip.shape[2:]:
        raise ShapeError(f"decoder output {up.shape} does not align with skip {skip.shape}")
    return T.concat([up, skip], axis=1)
