"""
Assembles the encoder `f_phi`, the decoder `g_theta` and the discriminator `D_omega` from the layers of
#mcdc._nn, either as the convolutional architecture (blocks of two 3x3 convolutions, doubling the channels
inside a block, 2x2 average pooling between blocks) or as a small fully connected toy network.
"""

import enum
import typing as t
from dataclasses import dataclass, field

import numpy as np

from ._errors import ShapeError, SpecError
from ._nn import (
    LayerCache,
    LayerParams,
    ParamGrads,
    Precision,
    avgpool2x2_layer,
    conv3x3_layer,
    dense_layer,
    layer_backward,
    layer_forward,
    leaky_relu_layer,
    upsample_nn2x_layer,
)


class Family(enum.Enum):
    CONV_PAPER = "conv_paper"
    MLP_TOY = "mlp_toy"


@dataclass
class ArchitectureSpec:
    """Describes the shape of the three networks of a model."""

    family: Family = Family.MLP_TOY

    #: The per-item input shape, `(C, H, W)` for images or `(D,)` for vectors. The toy family flattens
    #: any input shape.
    input_shape: t.Tuple[int, ...] = (784,)

    #: Channels of the first convolution (conv family) or the hidden width (toy family).
    base_channels: int = 16

    #: Number of convolution blocks (conv family) or hidden layers (toy family).
    num_blocks: int = 3

    latent_dim: int = 256

    #: Negative slope of every leaky ReLU, also used for the weight initialization.
    negative_slope: float = 0.2

    precision: Precision = Precision.FLOAT32

    def validate(self) -> None:
        """Raise a #SpecError if #build_model() cannot build this spec."""

        if self.latent_dim < 1:
            raise SpecError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.base_channels < 1 or self.num_blocks < 1:
            raise SpecError("base_channels and num_blocks must be >= 1")
        if not self.input_shape or any(extent < 1 for extent in self.input_shape):
            raise SpecError(f"invalid input_shape {self.input_shape}")
        if self.negative_slope < 0:
            raise SpecError(f"negative_slope must be >= 0, got {self.negative_slope}")
        if self.family == Family.CONV_PAPER:
            if len(self.input_shape) != 3:
                raise SpecError(f"conv_paper needs a (C, H, W) input_shape, got {self.input_shape}")
            divisor = 2 ** (self.num_blocks - 1)
            _, height, width = self.input_shape
            if height % divisor or width % divisor:
                raise SpecError(
                    f"conv_paper with {self.num_blocks} blocks needs H and W divisible by {divisor}, "
                    f"got {height}x{width}"
                )

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    def to_items(self) -> t.Dict[str, str]:
        """Serialize to flat `key -> value` strings (the format of config files and checkpoints)."""

        return {
            "family": self.family.value,
            "input_shape": ",".join(map(str, self.input_shape)),
            "base_channels": str(self.base_channels),
            "num_blocks": str(self.num_blocks),
            "latent_dim": str(self.latent_dim),
            "negative_slope": repr(self.negative_slope),
            "precision": self.precision.value,
        }

    @staticmethod
    def from_items(items: t.Mapping[str, str]) -> "ArchitectureSpec":
        try:
            return ArchitectureSpec(
                family=Family(items["family"]),
                input_shape=tuple(int(v) for v in items["input_shape"].split(",")),
                base_channels=int(items["base_channels"]),
                num_blocks=int(items["num_blocks"]),
                latent_dim=int(items["latent_dim"]),
                negative_slope=float(items["negative_slope"]),
                precision=Precision(items.get("precision", Precision.FLOAT32.value)),
            )
        except (KeyError, ValueError) as exc:
            raise SpecError(f"invalid architecture record: {exc}") from exc


@dataclass
class ModelParams:
    """
    The parameters `phi` (encoder), `theta` (decoder) and `omega` (discriminator). The decoder mirrors the
    encoder and the discriminator has the encoder's layer stack with independent parameters.
    """

    encoder: t.List[LayerParams]
    decoder: t.List[LayerParams]
    discriminator: t.List[LayerParams]
    spec: ArchitectureSpec = field(default_factory=ArchitectureSpec)

    def copy(self) -> "ModelParams":
        return ModelParams(
            [layer.copy() for layer in self.encoder],
            [layer.copy() for layer in self.decoder],
            [layer.copy() for layer in self.discriminator],
            self.spec,
        )

    def stacks(self) -> t.Dict[str, t.List[LayerParams]]:
        return {"encoder": self.encoder, "decoder": self.decoder, "discriminator": self.discriminator}


def _conv_widths(spec: ArchitectureSpec) -> t.List[t.Tuple[int, int]]:
    """`(in_channels, first_conv_channels)` per block; the second conv of a block doubles the channels."""

    widths = []
    in_channels = spec.input_shape[0]
    for block in range(spec.num_blocks):
        width = spec.base_channels * 2**block
        widths.append((in_channels, width))
        in_channels = 2 * width
    return widths


def _build_encoder_stack(spec: ArchitectureSpec, rng: np.random.Generator) -> t.List[LayerParams]:
    a, p = spec.negative_slope, spec.precision
    layers: t.List[LayerParams] = []
    if spec.family == Family.MLP_TOY:
        fan_in = spec.input_size
        for _ in range(spec.num_blocks):
            layers += [dense_layer(fan_in, spec.base_channels, rng, a, p), leaky_relu_layer(a, p)]
            fan_in = spec.base_channels
        layers.append(dense_layer(fan_in, spec.latent_dim, rng, a, p))
        return layers

    widths = _conv_widths(spec)
    for block, (in_channels, width) in enumerate(widths):
        layers += [conv3x3_layer(in_channels, width, rng, a, p), leaky_relu_layer(a, p)]
        layers += [conv3x3_layer(width, 2 * width, rng, a, p), leaky_relu_layer(a, p)]
        if block < len(widths) - 1:
            layers.append(avgpool2x2_layer(p))
    channels, height, width = _conv_feature_shape(spec)
    layers.append(dense_layer(channels * height * width, spec.latent_dim, rng, a, p))
    return layers


def _conv_feature_shape(spec: ArchitectureSpec) -> t.Tuple[int, int, int]:
    """The shape of the feature map after the last convolution block."""

    divisor = 2 ** (spec.num_blocks - 1)
    _, height, width = spec.input_shape
    return 2 * _conv_widths(spec)[-1][1], height // divisor, width // divisor


def _build_decoder_stack(spec: ArchitectureSpec, rng: np.random.Generator) -> t.List[LayerParams]:
    a, p = spec.negative_slope, spec.precision
    layers: t.List[LayerParams] = []
    if spec.family == Family.MLP_TOY:
        layers += [dense_layer(spec.latent_dim, spec.base_channels, rng, a, p), leaky_relu_layer(a, p)]
        for _ in range(spec.num_blocks - 1):
            layers += [dense_layer(spec.base_channels, spec.base_channels, rng, a, p), leaky_relu_layer(a, p)]
        layers.append(dense_layer(spec.base_channels, spec.input_size, rng, a, p, out_shape=spec.input_shape))
        return layers

    feature_shape = _conv_feature_shape(spec)
    layers.append(dense_layer(spec.latent_dim, int(np.prod(feature_shape)), rng, a, p, out_shape=feature_shape))
    layers.append(leaky_relu_layer(a, p))
    widths = _conv_widths(spec)
    for block in reversed(range(len(widths))):
        in_channels, width = widths[block]
        if block < len(widths) - 1:
            layers.append(upsample_nn2x_layer(p))
        layers += [conv3x3_layer(2 * width, width, rng, a, p), leaky_relu_layer(a, p)]
        layers.append(conv3x3_layer(width, in_channels, rng, a, p))
        if block > 0:
            layers.append(leaky_relu_layer(a, p))
    return layers


def build_model(spec: ArchitectureSpec, rng: np.random.Generator) -> ModelParams:
    """
    Build and initialize the three networks for *spec*. All weights are drawn from
    `Normal(0, he_init_std(spec.negative_slope, fan_in))`, biases are zero. The encoder's final layer
    has no activation.
    """

    spec.validate()
    encoder = _build_encoder_stack(spec, rng)
    decoder = _build_decoder_stack(spec, rng)
    discriminator = _build_encoder_stack(spec, rng)
    return ModelParams(encoder, decoder, discriminator, spec)


def parameter_count(layers: t.Sequence[LayerParams]) -> int:
    return sum(layer.num_params for layer in layers)


def forward_stack(layers: t.Sequence[LayerParams], x: np.ndarray) -> t.Tuple[np.ndarray, t.List[LayerCache]]:
    caches = []
    for layer in layers:
        x, cache = layer_forward(layer, x)
        caches.append(cache)
    return x, caches


def backward_stack(
    layers: t.Sequence[LayerParams], caches: t.Sequence[LayerCache], grad: np.ndarray
) -> t.Tuple[np.ndarray, t.List[ParamGrads]]:
    """Back-propagate *grad* through *layers*; returns the input gradient and per-layer parameter gradients."""

    grads: t.List[ParamGrads] = [None] * len(layers)  # type: ignore[list-item]
    for index in reversed(range(len(layers))):
        grad, grads[index] = layer_backward(layers[index], caches[index], grad)
    return grad, grads


def _check_input(m: ModelParams, x: np.ndarray) -> np.ndarray:
    if x.ndim < 2 or tuple(x.shape[1:]) != tuple(m.spec.input_shape):
        raise ShapeError(f"expected a batch of {m.spec.input_shape} inputs, got shape {x.shape}")
    return np.asarray(x, dtype=m.spec.precision.dtype)


def _check_latent(m: ModelParams, z: np.ndarray) -> np.ndarray:
    if z.ndim != 2 or z.shape[1] != m.spec.latent_dim:
        raise ShapeError(f"expected a [N, {m.spec.latent_dim}] latent batch, got shape {z.shape}")
    return np.asarray(z, dtype=m.spec.precision.dtype)


def encode(m: ModelParams, x: np.ndarray) -> np.ndarray:
    """Map a batch of inputs to their `[N, latent_dim]` latent representations."""

    z, _ = forward_stack(m.encoder, _check_input(m, x))
    return z


def decode(m: ModelParams, z: np.ndarray) -> np.ndarray:
    """Map a `[N, latent_dim]` latent batch to reconstructions of the architecture's input shape."""

    xhat, _ = forward_stack(m.decoder, _check_latent(m, z))
    return xhat


def discriminator_head(features: np.ndarray) -> np.ndarray:
    """The scalar prediction per batch item: the mean of the flattened final feature map."""

    return features.reshape(features.shape[0], -1).mean(axis=1)


def discriminator_head_backward(features: np.ndarray, grad: np.ndarray) -> np.ndarray:
    per_item = features[0].size
    scaled = grad.astype(features.dtype, copy=False) / features.dtype.type(per_item)
    return np.broadcast_to(scaled.reshape((-1,) + (1,) * (features.ndim - 1)), features.shape).copy()


def discriminate(m: ModelParams, xhat: np.ndarray) -> np.ndarray:
    """Predict the mixing coefficient `alpha_hat` (one unclamped scalar per item) for reconstructions."""

    features, _ = forward_stack(m.discriminator, _check_input(m, xhat))
    return discriminator_head(features)
