import numpy as np
import pytest

from hybridseg.fusion import InputFusion
from hybridseg.gradcheck import grad_check
from hybridseg.tensor import ShapeError, Tensor


def test_output_shape(rng):
    out = InputFusion().init_params(0)(Tensor(rng.standard_normal((2, 3, 64, 64))),
                                      Tensor(rng.standard_normal((2, 1, 64, 64))))
    assert out.shape == (2, 3, 64, 64)


def test_zero_branches_return_image(rng):
    fusion = InputFusion().init_params(0)
    fusion.image_branch.conv.w.data[...] = 0
    fusion.dsm_branch.conv.w.data[...] = 0
    image = rng.standard_normal((1, 3, 8, 8))
    out = fusion(Tensor(image), Tensor(rng.standard_normal((1, 1, 8, 8))))
    np.testing.assert_array_equal(out.data, image)


def test_additive_residual_exact(rng):
    fusion = InputFusion().init_params(1)
    image = Tensor(rng.standard_normal((2, 3, 6, 6)))
    dsm = Tensor(rng.standard_normal((2, 1, 6, 6)))
    fusion.eval()  # fixed statistics so both calls see the same normalisation
    np.testing.assert_array_equal(fusion(image, dsm).data, image.data + fusion.fused_term(image, dsm).data)


@pytest.mark.parametrize("img_shape,dsm_shape", [((1, 3, 8, 8), (1, 1, 8, 7)), ((2, 3, 8, 8), (1, 1, 8, 8)),
                                                 ((1, 4, 8, 8), (1, 1, 8, 8)), ((1, 3, 8, 8), (1, 2, 8, 8))])
def test_shape_errors(img_shape, dsm_shape):
    with pytest.raises(ShapeError):
        InputFusion().init_params(0)(Tensor(np.zeros(img_shape)), Tensor(np.zeros(dsm_shape)))


def test_gradcheck_both_inputs(rng):
    fusion = InputFusion().init_params(2)
    image = Tensor(rng.standard_normal((1, 3, 5, 5)))
    dsm = Tensor(rng.standard_normal((1, 1, 5, 5)))
    proj = Tensor(rng.standard_normal((1, 3, 5, 5)))
    assert grad_check(lambda t: (fusion(t, dsm) * proj).sum(), image) < 1e-6
    assert grad_check(lambda t: (fusion(image, t) * proj).sum(), dsm) < 1e-6


def test_dsm_gradient_nonzero(rng):
    fusion = InputFusion().init_params(3)
    dsm = Tensor(rng.standard_normal((1, 1, 5, 5)), requires_grad=True)
    proj = Tensor(rng.standard_normal((1, 3, 5, 5)))
    (fusion(Tensor(rng.standard_normal((1, 3, 5, 5))), dsm) * proj).sum().backward()
    assert np.abs(dsm.grad).max() > 1e-6
