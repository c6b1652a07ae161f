"""
A minimal differentiable-layer engine on top of NumPy arrays. It knows exactly the layer kinds the
autoencoder architecture needs (dense, 3x3 convolution, 2x2 average pooling, 2x2 nearest neighbour
upsampling and leaky ReLU), the mean squared error and the Adam optimizer.

Every forward function is pure. #layer_forward() returns a #LayerCache next to the output which must be
handed back to #layer_backward() to obtain the input gradient and the parameter gradients.
"""

import enum
import math
import typing as t
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._errors import InvalidArgumentError, ShapeError, StateError

#: A pair of gradients for the weights and the bias of a layer (both empty for parameter-free layers).
ParamGrads = t.Tuple[np.ndarray, np.ndarray]


class Precision(enum.Enum):
    """The real number precision of tensors. Training uses 32-bit, gradient checks use 64-bit."""

    FLOAT32 = "float32"
    FLOAT64 = "float64"

    @property
    def dtype(self) -> np.dtype:  # type: ignore[type-arg]
        return np.dtype(self.value)


class LayerKind(enum.Enum):
    DENSE = "dense"
    CONV3X3 = "conv3x3"
    AVGPOOL2X2 = "avgpool2x2"
    UPSAMPLE_NN2X = "upsample_nn2x"
    LEAKY_RELU = "leaky_relu"

    @property
    def has_params(self) -> bool:
        return self in (LayerKind.DENSE, LayerKind.CONV3X3)


@dataclass
class LayerParams:
    """
    The parameters of a single layer. Dense weights are laid out `[fan_in, fan_out]`, convolution weights
    `[Cout, Cin, 3, 3]`. Parameter-free kinds carry zero-length *weights* and *bias*.
    """

    kind: LayerKind
    weights: np.ndarray
    bias: np.ndarray
    fan_in: int

    #: Only used by #LayerKind.LEAKY_RELU.
    negative_slope: float = 0.0

    #: Only used by #LayerKind.DENSE: the per-item shape the output is reshaped to (e.g. `(C, H, W)` for
    #: the first decoder layer). A dense layer always flattens its input.
    out_shape: t.Optional[t.Tuple[int, ...]] = None

    def __post_init__(self) -> None:
        if self.kind == LayerKind.CONV3X3 and (self.weights.ndim != 4 or self.weights.shape[2:] != (3, 3)):
            raise ShapeError(f"conv3x3 weights must be shaped [Cout, Cin, 3, 3], got {self.weights.shape}")
        if not self.kind.has_params and (self.weights.size or self.bias.size):
            raise ShapeError(f"{self.kind.value} layers carry no parameters")

    @property
    def num_params(self) -> int:
        return int(self.weights.size + self.bias.size)

    def copy(self) -> "LayerParams":
        return replace(self, weights=self.weights.copy(), bias=self.bias.copy())


@dataclass(frozen=True)
class LayerCache:
    """The forward inputs a layer needs to compute its backward pass."""

    kind: LayerKind
    inputs: t.Optional[np.ndarray]


def he_init_std(negative_slope: float, fan_in: int) -> float:
    """
    The standard deviation of the zero-mean Gaussian weight initialization for a layer followed by a
    rectifier with the given *negative_slope*: `sqrt(2 / ((1 + a^2) * fan_in))`.
    """

    if fan_in < 1:
        raise InvalidArgumentError(f"fan_in must be >= 1, got {fan_in}")
    if negative_slope < 0:
        raise InvalidArgumentError(f"negative_slope must be >= 0, got {negative_slope}")
    return math.sqrt(2.0 / ((1.0 + negative_slope**2) * fan_in))


def _empty(dtype: np.dtype) -> np.ndarray:  # type: ignore[type-arg]
    return np.zeros((0,), dtype=dtype)


def dense_layer(
    fan_in: int,
    fan_out: int,
    rng: np.random.Generator,
    negative_slope: float,
    precision: Precision = Precision.FLOAT32,
    out_shape: t.Optional[t.Tuple[int, ...]] = None,
) -> LayerParams:
    std = he_init_std(negative_slope, fan_in)
    weights = rng.normal(0.0, std, size=(fan_in, fan_out)).astype(precision.dtype)
    bias = np.zeros((fan_out,), dtype=precision.dtype)
    if out_shape is not None and int(np.prod(out_shape)) != fan_out:
        raise ShapeError(f"out_shape {out_shape} does not hold {fan_out} values")
    return LayerParams(LayerKind.DENSE, weights, bias, fan_in, out_shape=out_shape)


def conv3x3_layer(
    in_channels: int,
    out_channels: int,
    rng: np.random.Generator,
    negative_slope: float,
    precision: Precision = Precision.FLOAT32,
) -> LayerParams:
    fan_in = in_channels * 3 * 3
    std = he_init_std(negative_slope, fan_in)
    weights = rng.normal(0.0, std, size=(out_channels, in_channels, 3, 3)).astype(precision.dtype)
    bias = np.zeros((out_channels,), dtype=precision.dtype)
    return LayerParams(LayerKind.CONV3X3, weights, bias, fan_in)


def avgpool2x2_layer(precision: Precision = Precision.FLOAT32) -> LayerParams:
    return LayerParams(LayerKind.AVGPOOL2X2, _empty(precision.dtype), _empty(precision.dtype), 4)


def upsample_nn2x_layer(precision: Precision = Precision.FLOAT32) -> LayerParams:
    return LayerParams(LayerKind.UPSAMPLE_NN2X, _empty(precision.dtype), _empty(precision.dtype), 1)


def leaky_relu_layer(negative_slope: float, precision: Precision = Precision.FLOAT32) -> LayerParams:
    return LayerParams(
        LayerKind.LEAKY_RELU, _empty(precision.dtype), _empty(precision.dtype), 1, negative_slope=negative_slope
    )


# Forward maps.


def dense_forward(x: np.ndarray, layer: LayerParams) -> np.ndarray:
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != layer.weights.shape[0]:
        raise ShapeError(f"dense layer expects {layer.weights.shape[0]} input features, got {flat.shape[1]}")
    y = flat @ layer.weights + layer.bias
    if layer.out_shape is not None:
        y = y.reshape((x.shape[0],) + tuple(layer.out_shape))
    return y


def _windows3x3(x: np.ndarray) -> np.ndarray:
    """Zero-pad the spatial axes by one and return the `[N, C, H, W, 3, 3]` view of all 3x3 windows."""

    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    return sliding_window_view(padded, (3, 3), axis=(2, 3))


def conv3x3_forward(x: np.ndarray, layer: LayerParams) -> np.ndarray:
    if x.ndim != 4:
        raise ShapeError(f"conv3x3 expects a [N, C, H, W] input, got shape {x.shape}")
    if x.shape[1] != layer.weights.shape[1]:
        raise ShapeError(f"conv3x3 expects {layer.weights.shape[1]} input channels, got {x.shape[1]}")
    y = np.einsum("nchwij,ocij->nohw", _windows3x3(x), layer.weights, optimize=True)
    return y + layer.bias[None, :, None, None]


def avgpool2x2_forward(x: np.ndarray) -> np.ndarray:
    if x.ndim != 4:
        raise ShapeError(f"avgpool2x2 expects a [N, C, H, W] input, got shape {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool2x2 needs even spatial extents, got {h}x{w}")
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def upsample_nn2x_forward(x: np.ndarray) -> np.ndarray:
    if x.ndim != 4:
        raise ShapeError(f"upsample_nn2x expects a [N, C, H, W] input, got shape {x.shape}")
    return x.repeat(2, axis=2).repeat(2, axis=3)


def leaky_relu_forward(x: np.ndarray, negative_slope: float) -> np.ndarray:
    return np.where(x >= 0, x, x * x.dtype.type(negative_slope))


# Backward maps. Each returns the gradient with respect to the layer input.


def dense_backward(layer: LayerParams, inputs: np.ndarray, grad: np.ndarray) -> t.Tuple[np.ndarray, ParamGrads]:
    flat = inputs.reshape(inputs.shape[0], -1)
    grad = grad.reshape(grad.shape[0], -1)
    expected = (flat.shape[0], layer.weights.shape[1])
    if grad.shape != expected:
        raise ShapeError(f"dense upstream gradient has shape {grad.shape}, expected {expected}")
    grad_w = flat.T @ grad
    grad_b = grad.sum(axis=0)
    return (grad @ layer.weights.T).reshape(inputs.shape), (grad_w, grad_b)


def conv3x3_backward(layer: LayerParams, inputs: np.ndarray, grad: np.ndarray) -> t.Tuple[np.ndarray, ParamGrads]:
    if grad.shape != (inputs.shape[0], layer.weights.shape[0]) + inputs.shape[2:]:
        raise ShapeError(f"conv3x3 upstream gradient has unexpected shape {grad.shape}")
    grad_w = np.einsum("nchwij,nohw->ocij", _windows3x3(inputs), grad, optimize=True)
    grad_b = grad.sum(axis=(0, 2, 3))
    flipped = layer.weights[:, :, ::-1, ::-1]
    grad_x = np.einsum("nohwij,ocij->nchw", _windows3x3(grad), flipped, optimize=True)
    return grad_x, (grad_w, grad_b)


def avgpool2x2_backward(inputs: np.ndarray, grad: np.ndarray) -> np.ndarray:
    if grad.shape != inputs.shape[:2] + (inputs.shape[2] // 2, inputs.shape[3] // 2):
        raise ShapeError(f"avgpool2x2 upstream gradient has unexpected shape {grad.shape}")
    return upsample_nn2x_forward(grad) * grad.dtype.type(0.25)


def upsample_nn2x_backward(inputs: np.ndarray, grad: np.ndarray) -> np.ndarray:
    n, c, h, w = inputs.shape
    if grad.shape != (n, c, 2 * h, 2 * w):
        raise ShapeError(f"upsample_nn2x upstream gradient has unexpected shape {grad.shape}")
    return grad.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))


def leaky_relu_backward(inputs: np.ndarray, grad: np.ndarray, negative_slope: float) -> np.ndarray:
    if grad.shape != inputs.shape:
        raise ShapeError(f"leaky_relu upstream gradient has shape {grad.shape}, expected {inputs.shape}")
    return np.where(inputs >= 0, grad, grad * grad.dtype.type(negative_slope))


def layer_forward(layer: LayerParams, x: np.ndarray) -> t.Tuple[np.ndarray, LayerCache]:
    """Run the forward map of *layer* and return the output with the cache for #layer_backward()."""

    kind = layer.kind
    if kind == LayerKind.DENSE:
        y = dense_forward(x, layer)
    elif kind == LayerKind.CONV3X3:
        y = conv3x3_forward(x, layer)
    elif kind == LayerKind.AVGPOOL2X2:
        y = avgpool2x2_forward(x)
    elif kind == LayerKind.UPSAMPLE_NN2X:
        y = upsample_nn2x_forward(x)
    elif kind == LayerKind.LEAKY_RELU:
        y = leaky_relu_forward(x, layer.negative_slope)
    else:
        raise AssertionError(kind)
    return y, LayerCache(kind, x)


def layer_backward(
    layer: LayerParams, cache: t.Optional[LayerCache], grad: np.ndarray
) -> t.Tuple[np.ndarray, ParamGrads]:
    """
    Back-propagate the upstream *grad* through *layer*. Returns the input gradient and the gradients of
    the weights and bias (empty arrays for parameter-free layers).
    """

    if cache is None or cache.inputs is None:
        raise StateError(f"{layer.kind.value} backward pass without a forward cache")
    if cache.kind != layer.kind:
        raise StateError(f"cache of a {cache.kind.value} layer handed to a {layer.kind.value} layer")

    kind, inputs = layer.kind, cache.inputs
    if kind == LayerKind.DENSE:
        return dense_backward(layer, inputs, grad)
    if kind == LayerKind.CONV3X3:
        return conv3x3_backward(layer, inputs, grad)

    empty = (np.zeros_like(layer.weights), np.zeros_like(layer.bias))
    if kind == LayerKind.AVGPOOL2X2:
        return avgpool2x2_backward(inputs, grad), empty
    if kind == LayerKind.UPSAMPLE_NN2X:
        return upsample_nn2x_backward(inputs, grad), empty
    if kind == LayerKind.LEAKY_RELU:
        return leaky_relu_backward(inputs, grad, layer.negative_slope), empty
    raise AssertionError(kind)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> t.Tuple[float, np.ndarray]:
    """Mean over all elements of `(pred - target)^2`, and its gradient with respect to *pred*."""

    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff, dtype=np.float64)) if diff.size else 0.0
    grad = diff * diff.dtype.type(2.0 / max(diff.size, 1))
    return loss, grad


# Optimizer.


@dataclass
class AdamState:
    """Per-parameter Adam state. The moments are zero-initialized."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @staticmethod
    def zeros_like(param: np.ndarray, lr: float = 1e-4) -> "AdamState":
        return AdamState(np.zeros_like(param), np.zeros_like(param), 0, lr)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> t.Tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Returns the new parameter and the new state; inputs are unchanged."""

    if param.shape != grad.shape or param.shape != state.first_moment.shape:
        raise ShapeError(f"adam_step shapes differ: param {param.shape}, grad {grad.shape}")

    dtype = param.dtype.type
    step = state.step_count + 1
    m = state.first_moment * dtype(state.beta1) + grad * dtype(1.0 - state.beta1)
    v = state.second_moment * dtype(state.beta2) + (grad * grad) * dtype(1.0 - state.beta2)
    m_hat = m / dtype(1.0 - state.beta1**step)
    v_hat = v / dtype(1.0 - state.beta2**step)
    new_param = param - dtype(state.lr) * m_hat / (np.sqrt(v_hat) + dtype(state.epsilon))
    return new_param.astype(param.dtype, copy=False), replace(state, first_moment=m, second_moment=v, step_count=step)


@dataclass
class Adam:
    """
    Holds one #AdamState per named parameter tensor of a list of layers and applies #adam_step() to them.
    Parameters are named `<prefix>.<layer index>.weights` and `<prefix>.<layer index>.bias`.
    """

    lr: float = 1e-4
    states: t.Dict[str, AdamState] = field(default_factory=dict)

    def step(self, prefix: str, layers: t.List[LayerParams], grads: t.Sequence[ParamGrads]) -> None:
        """Update the *layers* in place (their arrays are replaced) with the matching *grads*."""

        if len(layers) != len(grads):
            raise ShapeError(f"{prefix}: got {len(grads)} gradients for {len(layers)} layers")
        for index, (layer, (grad_w, grad_b)) in enumerate(zip(layers, grads)):
            if not layer.kind.has_params:
                continue
            layer.weights = self._update(f"{prefix}.{index}.weights", layer.weights, grad_w)
            layer.bias = self._update(f"{prefix}.{index}.bias", layer.bias, grad_b)

    def _update(self, name: str, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        state = self.states.get(name)
        if state is None:
            state = AdamState.zeros_like(param, self.lr)
        param, self.states[name] = adam_step(param, grad.astype(param.dtype, copy=False), state)
        return param
