"""The decomposition autoencoder.

Encoder: conv1 -> conv2 -> {conv3 (background), conv4 (detail)}.
Decoder: conv5(cat(B, D)) -> conv6(cat(., conv2)) -> conv7(cat(., conv1)).

Every layer is pad -> 3x3 conv -> batch norm -> activation. The two skip
connections are channel concatenations, so conv6 and conv7 read 128
channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Activation, Mode, Padding

FORMAT_VERSION = 1
FEATURES = 64
PRELU_INIT = 0.25
BN_MOMENTUM = 0.1
BN_EPS = 1e-5


class LayerSpec(NamedTuple):
    name: str
    in_channels: int
    out_channels: int
    padding: Padding
    activation: Activation


LAYERS = (
    LayerSpec("conv1", 1, FEATURES, Padding.REFLECTION, Activation.PRELU),
    LayerSpec("conv2", FEATURES, FEATURES, Padding.ZERO, Activation.PRELU),
    LayerSpec("conv3", FEATURES, FEATURES, Padding.ZERO, Activation.TANH),
    LayerSpec("conv4", FEATURES, FEATURES, Padding.ZERO, Activation.TANH),
    LayerSpec("conv5", 2 * FEATURES, FEATURES, Padding.ZERO, Activation.PRELU),
    LayerSpec("conv6", 2 * FEATURES, FEATURES, Padding.ZERO, Activation.PRELU),
    LayerSpec("conv7", 2 * FEATURES, 1, Padding.REFLECTION, Activation.SIGMOID),
)
SPECS = {spec.name: spec for spec in LAYERS}
ENCODER = ("conv1", "conv2", "conv3", "conv4")
DECODER = ("conv5", "conv6", "conv7")

# fields updated by the optimizer; running statistics are buffers
TRAINABLE = ("kernel", "bias", "bn_gamma", "bn_beta", "prelu_slope")
BUFFERS = ("bn_running_mean", "bn_running_var")


@dataclass
class ConvLayerParams:
    kernel: np.ndarray
    bias: np.ndarray
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_running_mean: np.ndarray
    bn_running_var: np.ndarray
    prelu_slope: np.ndarray | None = None

    def arrays(self):
        """Yield ``(field, array)`` for every populated field, in a fixed order."""
        for name in TRAINABLE + BUFFERS:
            value = getattr(self, name)
            if value is not None:
                yield name, value

    def astype(self, dtype):
        return ConvLayerParams(**{k: v.astype(dtype) for k, v in self.arrays()})


@dataclass
class ModelParams:
    layers: dict[str, ConvLayerParams]
    format_version: int = FORMAT_VERSION

    @property
    def encoder(self):
        return [self.layers[name] for name in ENCODER]

    @property
    def decoder(self):
        return [self.layers[name] for name in DECODER]

    def named_arrays(self, trainable_only=False):
        """Yield ``("conv1.kernel", array)`` pairs in checkpoint order."""
        for spec in LAYERS:
            for fname, value in self.layers[spec.name].arrays():
                if trainable_only and fname not in TRAINABLE:
                    continue
                yield f"{spec.name}.{fname}", value

    def get(self, key):
        layer, fname = key.split(".")
        return getattr(self.layers[layer], fname)

    def set(self, key, value):
        layer, fname = key.split(".")
        setattr(self.layers[layer], fname, value)

    def copy(self):
        return ModelParams(
            {name: ConvLayerParams(**{k: v.copy() for k, v in p.arrays()}) for name, p in self.layers.items()},
            self.format_version,
        )

    def astype(self, dtype):
        return ModelParams({name: p.astype(dtype) for name, p in self.layers.items()}, self.format_version)

    def parameter_count(self, trainable_only=True):
        return sum(v.size for _, v in self.named_arrays(trainable_only))


def init_params(seed):
    """He-uniform kernels (bound ``sqrt(6 / fan_in)``), zero biases, identity batch norm."""
    rng = np.random.default_rng(seed)
    layers = {}
    for spec in LAYERS:
        fan_in = spec.in_channels * T.KERNEL_SIZE ** 2
        bound = np.sqrt(6.0 / fan_in)
        shape = (spec.out_channels, spec.in_channels, T.KERNEL_SIZE, T.KERNEL_SIZE)
        layers[spec.name] = ConvLayerParams(
            kernel=rng.uniform(-bound, bound, size=shape).astype(np.float32),
            bias=np.zeros(spec.out_channels, np.float32),
            bn_gamma=np.ones(spec.out_channels, np.float32),
            bn_beta=np.zeros(spec.out_channels, np.float32),
            bn_running_mean=np.zeros(spec.out_channels, np.float32),
            bn_running_var=np.ones(spec.out_channels, np.float32),
            prelu_slope=np.array(PRELU_INIT, np.float32) if spec.activation is Activation.PRELU else None,
        )
    return ModelParams(layers)


# -- single layer ------------------------------------------------------------


class LayerTape(NamedTuple):
    x: np.ndarray  # layer input
    z: np.ndarray  # conv output
    y: np.ndarray  # batch-norm output
    a: np.ndarray  # activation output
    running_mean: np.ndarray
    running_var: np.ndarray


def layer_forward(x, p: ConvLayerParams, spec: LayerSpec, mode):
    z = T.conv2d_forward(x, p.kernel, p.bias, spec.padding)
    y, mean, var = T.batchnorm_forward(
        z, p.bn_gamma, p.bn_beta, p.bn_running_mean, p.bn_running_var, mode, BN_MOMENTUM, BN_EPS
    )
    a = T.activation_forward(y, spec.activation, p.prelu_slope)
    return a, LayerTape(x, z, y, a, mean, var)


def layer_backward(grad, tape: LayerTape, p: ConvLayerParams, spec: LayerSpec, mode):
    """Return ``(grad_input, {field: grad})`` for one layer."""
    grads = {}
    gy, gslope = T.activation_backward(grad, tape.y, tape.a, spec.activation, p.prelu_slope)
    if gslope is not None:
        grads["prelu_slope"] = np.asarray(gslope, dtype=p.prelu_slope.dtype)
    gz, grads["bn_gamma"], grads["bn_beta"] = T.batchnorm_backward(
        gy, tape.z, p.bn_gamma, p.bn_running_mean, p.bn_running_var, mode, BN_EPS
    )
    gx, grads["kernel"], grads["bias"] = T.conv2d_backward(gz, tape.x, p.kernel, spec.padding)
    return gx, grads


# -- encoder / decoder -------------------------------------------------------


@dataclass
class DecomposeOutput:
    background: np.ndarray
    detail: np.ndarray
    skip1: np.ndarray
    skip2: np.ndarray


@dataclass
class ForwardPass:
    """Everything one forward pass produced, enough to run :func:`backward`."""

    output: np.ndarray
    decomposition: DecomposeOutput
    mode: Mode
    tapes: dict[str, LayerTape] = field(default_factory=dict)

    def running_stats(self):
        return {name: (t.running_mean, t.running_var) for name, t in self.tapes.items()}


def _check_image(image):
    image = T.check_tensor4(image, "image", finite=True)
    if image.shape[1] != 1:
        raise ShapeError("image must have exactly one channel", image.shape)
    if image.shape[2] < 8 or image.shape[3] < 8:
        raise ShapeError("image must be at least 8x8", image.shape)
    return image


def _encode(image, params, mode, tapes):
    a1, tapes["conv1"] = layer_forward(image, params.layers["conv1"], SPECS["conv1"], mode)
    a2, tapes["conv2"] = layer_forward(a1, params.layers["conv2"], SPECS["conv2"], mode)
    b, tapes["conv3"] = layer_forward(a2, params.layers["conv3"], SPECS["conv3"], mode)
    d, tapes["conv4"] = layer_forward(a2, params.layers["conv4"], SPECS["conv4"], mode)
    return DecomposeOutput(background=b, detail=d, skip1=a1, skip2=a2)


def _decode(dec: DecomposeOutput, params, mode, tapes):
    shapes = [t.shape for t in (dec.background, dec.detail, dec.skip1, dec.skip2)]
    if any(s[0] != shapes[0][0] or s[2:] != shapes[0][2:] for s in shapes):
        raise ShapeError("decoder inputs disagree on (n, h, w)", *shapes)
    if any(s[1] != FEATURES for s in shapes):
        raise ShapeError(f"decoder inputs must have {FEATURES} channels", *shapes)
    a5, tapes["conv5"] = layer_forward(
        T.concat_channels(dec.background, dec.detail), params.layers["conv5"], SPECS["conv5"], mode)
    a6, tapes["conv6"] = layer_forward(
        T.concat_channels(a5, dec.skip2), params.layers["conv6"], SPECS["conv6"], mode)
    out, tapes["conv7"] = layer_forward(
        T.concat_channels(a6, dec.skip1), params.layers["conv7"], SPECS["conv7"], mode)
    return out


def decompose(image, params: ModelParams, mode=Mode.EVAL) -> DecomposeOutput:
    """Encode an (n, 1, h, w) image into background/detail maps plus skip activations."""
    return _encode(_check_image(image), params, Mode(mode), {})


def reconstruct(background, detail, skip1, skip2, params: ModelParams, mode=Mode.EVAL):
    """Decode feature maps back into an (n, 1, h, w) image in (0, 1)."""
    dec = DecomposeOutput(*(T.check_tensor4(t, name, finite=True) for t, name in (
        (background, "background"), (detail, "detail"), (skip1, "skip1"), (skip2, "skip2"))))
    return _decode(dec, params, Mode(mode), {})


def forward(image, params: ModelParams, mode=Mode.TRAIN) -> ForwardPass:
    """Run encoder and decoder, keeping the per-layer tapes for backprop."""
    mode = Mode(mode)
    tapes = {}
    dec = _encode(_check_image(image), params, mode, tapes)
    out = _decode(dec, params, mode, tapes)
    return ForwardPass(out, dec, mode, tapes)


def backward(fp: ForwardPass, params: ModelParams, grad_output, grad_background=None, grad_detail=None):
    """Backpropagate through one :func:`forward` pass.

    ``grad_background`` / ``grad_detail`` are extra loss gradients arriving
    directly at the encoder outputs. Returns ``{"conv1.kernel": grad, ...}``
    covering every trainable array.
    """
    grads = {}
    mode = fp.mode

    def run(name, g):
        gx, layer_grads = layer_backward(g, fp.tapes[name], params.layers[name], SPECS[name], mode)
        for k, v in layer_grads.items():
            grads[f"{name}.{k}"] = v
        return gx

    g_c7 = run("conv7", grad_output)
    g_a6, g_skip1 = T.split_channels(g_c7, FEATURES)
    g_c6 = run("conv6", g_a6)
    g_a5, g_skip2 = T.split_channels(g_c6, FEATURES)
    g_c5 = run("conv5", g_a5)
    g_b, g_d = T.split_channels(g_c5, FEATURES)
    if grad_background is not None:
        g_b = g_b + grad_background
    if grad_detail is not None:
        g_d = g_d + grad_detail
    g_a2 = run("conv3", g_b) + run("conv4", g_d) + g_skip2
    g_a1 = run("conv2", g_a2) + g_skip1
    run("conv1", g_a1)
    return grads


def with_running_stats(params: ModelParams, fp: ForwardPass) -> ModelParams:
    """Return params whose batch-norm buffers are the ones ``fp`` produced."""
    layers = {
        name: replace(p, bn_running_mean=fp.tapes[name].running_mean, bn_running_var=fp.tapes[name].running_var)
        for name, p in params.layers.items()
    }
    return ModelParams(layers, params.format_version)
