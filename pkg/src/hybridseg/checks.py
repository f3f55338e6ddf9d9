"""Named gradient-check cases shared by the ``gradcheck`` CLI command and tests.

Each case builds a seeded module/input pair and contracts the output with a
fixed random tensor so the scalar has a generic gradient (a plain sum would
be flat through normalisations).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .effunet import EffUNet
from .fusion import InputFusion
from .gradcheck import grad_check
from .heads import ClassHead, FusePaths
from .nn import BlockSpec, DoubleConv, Linear, MBConv, SqueezeExcite
from .tensor import Tensor
from .transformer import DecoderLayer, EncoderLayer, MultiHeadAttention, Tokenizer, TransformerPath

OP_TOL = 1e-6
BLOCK_TOL = 1e-5


@dataclass
class Case:
    name: str
    tol: float
    run: Callable[[int], float]
    composite: bool = False


def _projected(fn, out_shape, rng):
    proj = Tensor(rng.standard_normal(out_shape))
    return lambda x: (fn(x) * proj).sum()


def _case_elementwise(seed):
    rng = np.random.default_rng(seed)
    b = Tensor(rng.standard_normal((1, 4)))
    x = Tensor(rng.standard_normal((3, 1)))
    errs = [grad_check(_projected(lambda t: T.add(t, b), (3, 4), rng), x),
            grad_check(_projected(lambda t: T.mul(t, b), (3, 4), rng), x),
            grad_check(_projected(lambda t: T.sub(b, t), (3, 4), rng), x),
            grad_check(_projected(lambda t: T.div(b, T.exp(t)), (3, 4), rng), x)]
    return max(errs)


def _case_matmul(seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.standard_normal((2, 3, 4)))
    b = Tensor(rng.standard_normal((4, 5)))
    return max(grad_check(_projected(lambda t: T.matmul(t, b), (2, 3, 5), rng), a),
               grad_check(_projected(lambda t: T.matmul(a, t), (2, 3, 5), rng), b))


def _case_conv2d(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((1, 2, 5, 5)))
    w = Tensor(rng.standard_normal((3, 2, 3, 3)))
    bias = Tensor(rng.standard_normal(3))
    wd = Tensor(rng.standard_normal((2, 1, 3, 3)))
    wp = Tensor(rng.standard_normal((3, 2, 1, 1)))
    return max(grad_check(_projected(lambda t: T.conv2d(t, w, bias, 1, 1), (1, 3, 5, 5), rng), x),
               grad_check(_projected(lambda t: T.conv2d(t, wp, bias), (1, 3, 5, 5), rng), x),
               grad_check(_projected(lambda t: T.conv2d(x, t, bias), (1, 3, 5, 5), rng), wp),
               grad_check(_projected(lambda t: T.conv2d(x, t, bias, 2, 1), (1, 3, 3, 3), rng), w),
               grad_check(_projected(lambda t: T.conv2d(t, wd, None, 2, 1, groups=2), (1, 2, 3, 3), rng), x))


def _case_transposed(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((1, 4, 3, 3)))
    w = Tensor(rng.standard_normal((4, 2, 2, 2)))
    return max(grad_check(_projected(lambda t: T.transposed_conv2d(t, w), (1, 2, 6, 6), rng), x),
               grad_check(_projected(lambda t: T.transposed_conv2d(x, t), (1, 2, 6, 6), rng), w))


def _case_batch_norm(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((2, 3, 4, 4)))
    g = Tensor(rng.uniform(0.5, 1.5, 3))
    b = Tensor(rng.standard_normal(3))
    rm, rv = np.zeros(3), np.ones(3)
    train = _projected(lambda t: T.batch_norm(t, g, b, rm, rv, True), x.shape, rng)
    infer = _projected(lambda t: T.batch_norm(t, g, b, rm, rv, False), x.shape, rng)
    gamma = _projected(lambda t: T.batch_norm(x, t, b, rm, rv, True), x.shape, rng)
    return max(grad_check(train, x), grad_check(infer, x), grad_check(gamma, g))


def _case_activations(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((4, 5)))
    return max(grad_check(_projected(T.relu, x.shape, rng), x, exclude=x.data == 0.0),
               grad_check(_projected(T.sigmoid, x.shape, rng), x),
               grad_check(_projected(T.swish, x.shape, rng), x))


def _case_softmax(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((3, 5)))
    return max(grad_check(_projected(lambda t: T.softmax(t, 1), x.shape, rng), x),
               grad_check(_projected(lambda t: T.log_softmax(t, 0), x.shape, rng), x))


def _case_layer_norm(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((2, 5)))
    g, b = Tensor(rng.standard_normal(5)), Tensor(rng.standard_normal(5))
    return max(grad_check(_projected(lambda t: T.layer_norm(t, g, b), x.shape, rng), x),
               grad_check(_projected(lambda t: T.layer_norm(x, t, b), x.shape, rng), g))


def _case_structural(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((1, 2, 3, 3)))
    other = Tensor(rng.standard_normal((1, 1, 3, 3)))
    return max(
        grad_check(_projected(lambda t: T.concat([t, other], 1), (1, 3, 3, 3), rng), x),
        grad_check(_projected(lambda t: T.upsample_nearest(t, 2), (1, 2, 6, 6), rng), x),
        grad_check(_projected(lambda t: T.global_avg_pool(t), (1, 2), rng), x),
        grad_check(_projected(lambda t: T.mean(t, (0, 3)), (2, 3), rng), x),
        grad_check(_projected(lambda t: t.reshape(2, 9).transpose(1, 0), (9, 2), rng), x),
        grad_check(_projected(lambda t: t[:, 1:2], (1, 1, 3, 3), rng), x))


def _module_case(build, in_shape, seed):
    rng = np.random.default_rng(seed)
    mod = build().init_params(seed)
    x = Tensor(rng.standard_normal(in_shape))
    out_shape = mod(x).shape
    return grad_check(_projected(mod, out_shape, rng), x)


def _case_linear(seed):
    return _module_case(lambda: Linear(5, 3), (2, 4, 5), seed)


def _case_double_conv(seed):
    return _module_case(lambda: DoubleConv(2, 3), (1, 2, 5, 5), seed)


def _case_mbconv(seed):
    return _module_case(lambda: MBConv(BlockSpec(4, 4, 3, 1, 6.0)), (1, 4, 6, 6), seed)


def _case_squeeze_excite(seed):
    return _module_case(lambda: SqueezeExcite(4, 2), (1, 4, 3, 3), seed)


def _case_input_fusion(seed):
    rng = np.random.default_rng(seed)
    mod = InputFusion().init_params(seed)
    image = Tensor(rng.standard_normal((1, 3, 5, 5)))
    dsm = Tensor(rng.standard_normal((1, 1, 5, 5)))
    proj = Tensor(rng.standard_normal((1, 3, 5, 5)))
    return max(grad_check(lambda t: (mod(t, dsm) * proj).sum(), image),
               grad_check(lambda t: (mod(image, t) * proj).sum(), dsm))


def _case_tokenizer(seed):
    return _module_case(lambda: Tokenizer(4, 3, 5), (1, 4, 3, 3), seed)


def _case_msa(seed):
    return _module_case(lambda: MultiHeadAttention(8, 2), (1, 4, 8), seed)


def _case_encoder_layer(seed):
    return _module_case(lambda: EncoderLayer(8, 2, 2), (1, 4, 8), seed)


def _case_mca(seed):
    rng = np.random.default_rng(seed)
    layer = DecoderLayer(4, 6, 2, 2).init_params(seed)
    x = Tensor(rng.standard_normal((1, 5, 4)))
    tokens = Tensor(rng.standard_normal((1, 3, 6)))
    proj = Tensor(rng.standard_normal((1, 5, 4)))
    return max(grad_check(lambda t: (layer(t, tokens) * proj).sum(), x),
               grad_check(lambda t: (layer(x, t) * proj).sum(), tokens))


def _case_class_head(seed):
    return _module_case(lambda: ClassHead(6, 2, 8, 2, 2, 1), (1, 6, 4, 4), seed)


def _case_fuse_paths(seed):
    rng = np.random.default_rng(seed)
    mod = FusePaths(4, 6).init_params(seed)
    a = Tensor(rng.standard_normal((1, 4, 4, 4)))
    b = Tensor(rng.standard_normal((1, 4, 4, 4)))
    proj = Tensor(rng.standard_normal((1, 6, 4, 4)))
    return grad_check(lambda t: (mod(t, b) * proj).sum(), a)


TOY_MODEL = ModelConfig(feature_channels=8, unet_widths=(8, 16, 32, 64), unet_depths=(1, 1, 1, 1),
                        tr_stem=4, tr_widths=(4, 8, 8), n_f=8, layers=1, heads=2,
                        head_n_f=8, head_layers=1)


def _case_effunet(seed):
    rng = np.random.default_rng(seed)
    # Inference-mode BN: in training mode every pixel of the batch is coupled
    # through the statistics, so some relu in the network flips for almost any
    # perturbation and float64 roundoff swamps small gradients.  Batch-statistic
    # gradients are covered by the batch_norm, double_conv and mbconv cases.
    net = EffUNet(TOY_MODEL).init_params(seed).eval()
    x = Tensor(rng.standard_normal((1, 3, 16, 16)))
    proj = Tensor(rng.standard_normal((1, 8, 16, 16)))
    rest = Tensor(x.data[:, 1:])
    return grad_check(lambda t: (net(T.concat([t, rest], 1)) * proj).sum(), Tensor(x.data[:, :1]))


def _case_transformer_path(seed):
    rng = np.random.default_rng(seed)
    path = TransformerPath(TOY_MODEL).init_params(seed)
    x = Tensor(rng.standard_normal((1, 3, 16, 16)))
    proj = Tensor(rng.standard_normal((1, 8, 16, 16)))
    rest = Tensor(x.data[:, 1:])
    return grad_check(lambda t: (path(T.concat([t, rest], 1)) * proj).sum(), Tensor(x.data[:, :1]))


CASES: dict[str, Case] = {c.name: c for c in [
    Case("elementwise", OP_TOL, _case_elementwise),
    Case("matmul", OP_TOL, _case_matmul),
    Case("conv2d", OP_TOL, _case_conv2d),
    Case("transposed_conv2d", OP_TOL, _case_transposed),
    Case("batch_norm", OP_TOL, _case_batch_norm),
    Case("activations", OP_TOL, _case_activations),
    Case("softmax", OP_TOL, _case_softmax),
    Case("layer_norm", OP_TOL, _case_layer_norm),
    Case("structural", OP_TOL, _case_structural),
    Case("linear", OP_TOL, _case_linear),
    Case("double_conv", BLOCK_TOL, _case_double_conv, True),
    Case("mbconv", BLOCK_TOL, _case_mbconv, True),
    Case("squeeze_excite", BLOCK_TOL, _case_squeeze_excite, True),
    Case("input_fusion", BLOCK_TOL, _case_input_fusion, True),
    Case("tokenizer", BLOCK_TOL, _case_tokenizer, True),
    Case("msa", BLOCK_TOL, _case_msa, True),
    Case("encoder_layer", BLOCK_TOL, _case_encoder_layer, True),
    Case("mca", BLOCK_TOL, _case_mca, True),
    Case("class_head", BLOCK_TOL, _case_class_head, True),
    Case("fuse_paths", BLOCK_TOL, _case_fuse_paths, True),
    Case("effunet", BLOCK_TOL, _case_effunet, True),
    Case("transformer_path", BLOCK_TOL, _case_transformer_path, True),
]}


def run_case(name: str, seed: int) -> tuple[float, float]:
    """Returns (max relative error, tolerance)."""
    case = CASES[name]
    return case.run(seed), case.tol
