"""Input fusion of the colour image with its elevation raster."""
from __future__ import annotations

from . import tensor as T
from .nn import BatchNorm2d, ConvBN, Module
from .tensor import ShapeError, Tensor


class InputFusion(Module):
    """image + BN(relu(BN(conv(image))) * relu(BN(conv(dsm)))).

    Both branches are 3x3 convs to three channels so the product and the
    residual add line up with the 3-band image.
    """

    def __init__(self, image_channels: int = 3):
        super().__init__()
        self.image_channels = image_channels
        self.image_branch = ConvBN(image_channels, image_channels, 3, act=T.relu)
        self.dsm_branch = ConvBN(1, image_channels, 3, act=T.relu)
        self.bn = BatchNorm2d(image_channels)

    def fused_term(self, image: Tensor, dsm: Tensor) -> Tensor:
        if image.ndim != 4 or dsm.ndim != 4:
            raise ShapeError(f"expected N,C,H,W inputs, got {image.shape} and {dsm.shape}")
        if image.shape[1] != self.image_channels or dsm.shape[1] != 1:
            raise ShapeError(f"expected {self.image_channels}-band image and 1-band dsm, "
                             f"got {image.shape} and {dsm.shape}")
        if image.shape[0] != dsm.shape[0] or image.shape[2:] != dsm.shape[2:]:
            raise ShapeError(f"image {image.shape} and dsm {dsm.shape} disagree on N, H or W")
        return self.bn(self.image_branch(image) * self.dsm_branch(dsm))

    def forward(self, image: Tensor, dsm: Tensor) -> Tensor:
        return image + self.fused_term(image, dsm)
