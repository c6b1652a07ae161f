from dataclasses import replace

import numpy as np
import pytest

from mcdc._errors import InvalidArgumentError, ShapeError, StateError
from mcdc._gradcheck import numerical_gradient, relative_error
from mcdc._nn import (
  Adam,
  AdamState,
  LayerCache,
  LayerKind,
  LayerParams,
  Precision,
  adam_step,
  avgpool2x2_layer,
  conv3x3_layer,
  dense_layer,
  he_init_std,
  layer_backward,
  layer_forward,
  leaky_relu_layer,
  mse_loss,
  upsample_nn2x_layer,
)

F64 = Precision.FLOAT64
NUM_SHAPES = 20
TOLERANCE = 1e-4


def _away_from_zero(x: np.ndarray) -> np.ndarray:
  """ Keeps finite difference steps off the kink of the leaky ReLU. """

  return np.where(np.abs(x) < 0.05, x + 0.1 * np.sign(x + 1e-12), x)


def _projection_loss(layer: LayerParams, x: np.ndarray, r: np.ndarray) -> float:
  return float(np.sum(layer_forward(layer, x)[0] * r))


def _check_layer(layer: LayerParams, x: np.ndarray, rng: np.random.Generator) -> None:
  y, cache = layer_forward(layer, x)
  r = rng.standard_normal(y.shape)
  grad_x, (grad_w, grad_b) = layer_backward(layer, cache, r)

  numeric_x = numerical_gradient(lambda v: _projection_loss(layer, v, r), x.copy())
  assert relative_error(grad_x, numeric_x) < TOLERANCE

  if layer.kind.has_params:
    numeric_w = numerical_gradient(lambda w: _projection_loss(replace(layer, weights=w), x, r), layer.weights.copy())
    numeric_b = numerical_gradient(lambda b: _projection_loss(replace(layer, bias=b), x, r), layer.bias.copy())
    assert relative_error(grad_w, numeric_w) < TOLERANCE
    assert relative_error(grad_b, numeric_b) < TOLERANCE
  else:
    assert grad_w.size == 0 and grad_b.size == 0


def test_he_init_std():
  assert he_init_std(0.0, 2) == pytest.approx(1.0)
  assert he_init_std(0.2, 9) == pytest.approx(np.sqrt(2.0 / (1.04 * 9)))
  with pytest.raises(InvalidArgumentError):
    he_init_std(0.2, 0)
  with pytest.raises(InvalidArgumentError):
    he_init_std(-0.1, 4)


def test_dense_init_statistics():
  layer = dense_layer(400, 300, np.random.default_rng(0), 0.2, F64)
  assert layer.weights.std() == pytest.approx(he_init_std(0.2, 400), rel=0.02)
  assert abs(layer.weights.mean()) < 0.01
  assert not layer.bias.any()


def test_dense_gradients():
  rng = np.random.default_rng(1)
  for _ in range(NUM_SHAPES):
    n, fan_in, fan_out = rng.integers(1, 5), rng.integers(1, 8), rng.integers(1, 8)
    layer = dense_layer(int(fan_in), int(fan_out), rng, 0.2, F64)
    layer.bias = rng.standard_normal(layer.bias.shape)
    _check_layer(layer, rng.standard_normal((n, fan_in)), rng)


def test_dense_gradients_with_image_input_and_output():
  rng = np.random.default_rng(2)
  for _ in range(NUM_SHAPES):
    c, h, w = (int(v) for v in rng.integers(1, 4, size=3))
    layer = dense_layer(c * h * w, 2 * c * h * w, rng, 0.2, F64, out_shape=(2 * c, h, w))
    _check_layer(layer, rng.standard_normal((2, c, h, w)), rng)


def test_conv3x3_gradients():
  rng = np.random.default_rng(3)
  for _ in range(NUM_SHAPES):
    n, cin, cout = (int(v) for v in rng.integers(1, 4, size=3))
    h, w = (int(v) for v in rng.integers(1, 6, size=2))
    layer = conv3x3_layer(cin, cout, rng, 0.2, F64)
    layer.bias = rng.standard_normal(layer.bias.shape)
    _check_layer(layer, rng.standard_normal((n, cin, h, w)), rng)


def test_avgpool2x2_gradients():
  rng = np.random.default_rng(4)
  for _ in range(NUM_SHAPES):
    n, c, h, w = (int(v) for v in rng.integers(1, 4, size=4))
    _check_layer(avgpool2x2_layer(F64), rng.standard_normal((n, c, 2 * h, 2 * w)), rng)


def test_upsample_nn2x_gradients():
  rng = np.random.default_rng(5)
  for _ in range(NUM_SHAPES):
    n, c, h, w = (int(v) for v in rng.integers(1, 4, size=4))
    _check_layer(upsample_nn2x_layer(F64), rng.standard_normal((n, c, h, w)), rng)


def test_leaky_relu_gradients():
  rng = np.random.default_rng(6)
  for _ in range(NUM_SHAPES):
    shape = tuple(int(v) for v in rng.integers(1, 5, size=rng.integers(2, 5)))
    _check_layer(leaky_relu_layer(0.2, F64), _away_from_zero(rng.standard_normal(shape)), rng)


def test_mse_loss_gradients():
  rng = np.random.default_rng(7)
  for _ in range(NUM_SHAPES):
    shape = tuple(int(v) for v in rng.integers(1, 5, size=rng.integers(1, 5)))
    pred, target = rng.standard_normal(shape), rng.standard_normal(shape)
    _, grad = mse_loss(pred, target)
    numeric = numerical_gradient(lambda p: mse_loss(p, target)[0], pred.copy())
    assert relative_error(grad, numeric) < TOLERANCE


def test_mse_loss_values():
  assert mse_loss(np.zeros((2, 2)), np.zeros((2, 2)))[0] == 0.0
  loss, grad = mse_loss(np.array([[1.0, 3.0]]), np.array([[0.0, 0.0]]))
  assert loss == pytest.approx(5.0)
  np.testing.assert_allclose(grad, [[1.0, 3.0]])
  with pytest.raises(ShapeError):
    mse_loss(np.zeros(3), np.zeros(4))


def test_conv3x3_matches_direct_sum():
  rng = np.random.default_rng(8)
  layer = conv3x3_layer(2, 3, rng, 0.2, F64)
  layer.bias = rng.standard_normal(3)
  x = rng.standard_normal((1, 2, 4, 5))
  y, _ = layer_forward(layer, x)
  padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
  for o in range(3):
    for i in range(4):
      for j in range(5):
        expected = np.sum(padded[0, :, i : i + 3, j : j + 3] * layer.weights[o]) + layer.bias[o]
        assert y[0, o, i, j] == pytest.approx(expected)


def test_leaky_relu_forward_values():
  y, _ = layer_forward(leaky_relu_layer(0.2), np.array([[-1.0, 0.0, 2.0]], dtype=np.float32))
  np.testing.assert_allclose(y, [[-0.2, 0.0, 2.0]], rtol=1e-6)
  assert y.dtype == np.float32


def test_layer_params_invariants():
  with pytest.raises(ShapeError):
    LayerParams(LayerKind.CONV3X3, np.zeros((2, 2, 5, 5)), np.zeros(2), 50)
  with pytest.raises(ShapeError):
    LayerParams(LayerKind.AVGPOOL2X2, np.zeros(3), np.zeros(0), 4)
  assert avgpool2x2_layer().num_params == 0


def test_shape_errors():
  rng = np.random.default_rng(9)
  with pytest.raises(ShapeError):
    layer_forward(avgpool2x2_layer(), np.zeros((1, 1, 3, 4), dtype=np.float32))
  with pytest.raises(ShapeError):
    layer_forward(conv3x3_layer(2, 1, rng, 0.2), np.zeros((1, 3, 4, 4), dtype=np.float32))
  with pytest.raises(ShapeError):
    layer_forward(dense_layer(4, 2, rng, 0.2), np.zeros((2, 5), dtype=np.float32))


def test_backward_without_forward_cache():
  layer = leaky_relu_layer(0.2)
  with pytest.raises(StateError):
    layer_backward(layer, None, np.zeros((1, 2)))
  with pytest.raises(StateError):
    layer_backward(layer, LayerCache(LayerKind.LEAKY_RELU, None), np.zeros((1, 2)))
  with pytest.raises(StateError):
    layer_backward(layer, LayerCache(LayerKind.DENSE, np.zeros((1, 2))), np.zeros((1, 2)))


def test_forward_preserves_precision():
  rng = np.random.default_rng(10)
  layer = conv3x3_layer(1, 2, rng, 0.2)
  y, cache = layer_forward(layer, np.ones((1, 1, 4, 4), dtype=np.float32))
  assert y.dtype == np.float32
  grad_x, (grad_w, _) = layer_backward(layer, cache, np.ones_like(y))
  assert grad_x.dtype == np.float32 and grad_w.dtype == np.float32


def test_adam_step_first_update():
  param = np.array([1.0, -2.0, 0.5])
  grad = np.array([0.3, -0.1, 0.0])
  state = AdamState.zeros_like(param, lr=0.01)
  new_param, new_state = adam_step(param, grad, state)

  # After one bias-corrected step the update is lr * g / (|g| + eps).
  np.testing.assert_allclose(new_param, param - 0.01 * grad / (np.abs(grad) + 1e-8))
  assert new_state.step_count == 1
  assert state.step_count == 0 and not state.first_moment.any()
  np.testing.assert_allclose(new_state.first_moment, 0.1 * grad)
  np.testing.assert_allclose(new_state.second_moment, 0.001 * grad**2)


def test_adam_step_count_increases():
  param = np.zeros(2)
  state = AdamState.zeros_like(param)
  for step in range(1, 6):
    param, state = adam_step(param, np.ones(2), state)
    assert state.step_count == step
  with pytest.raises(ShapeError):
    adam_step(param, np.ones(3), state)


def test_adam_minimizes_a_quadratic():
  param = np.array([3.0, -4.0])
  state = AdamState.zeros_like(param, lr=0.1)
  for _ in range(500):
    param, state = adam_step(param, 2.0 * param, state)
  assert np.abs(param).max() < 0.1


def test_adam_optimizer_names_parameters():
  rng = np.random.default_rng(11)
  layers = [dense_layer(3, 2, rng, 0.2), leaky_relu_layer(0.2), dense_layer(2, 1, rng, 0.2)]
  before = [layer.weights.copy() for layer in layers]
  grads = [(np.ones_like(layer.weights), np.ones_like(layer.bias)) for layer in layers]
  optimizer = Adam(lr=1e-3)
  optimizer.step('encoder', layers, grads)
  assert sorted(optimizer.states) == ['encoder.0.bias', 'encoder.0.weights', 'encoder.2.bias', 'encoder.2.weights']
  assert not np.array_equal(layers[0].weights, before[0])
  assert layers[0].weights.dtype == np.float32
  with pytest.raises(ShapeError):
    optimizer.step('encoder', layers, grads[:2])


def test_he_init_std_reference_values():
  assert he_init_std(0.0, 50) == pytest.approx(0.2)
  assert he_init_std(0.2, 100) == pytest.approx(0.138675, abs=1e-6)


@pytest.mark.parametrize(
  'make_layer,shape',
  [
    (lambda rng: dense_layer(12, 5, rng, 0.2, F64), (3, 12)),
    (lambda rng: conv3x3_layer(2, 3, rng, 0.2, F64), (2, 2, 4, 6)),
    (lambda rng: avgpool2x2_layer(F64), (2, 3, 4, 6)),
    (lambda rng: upsample_nn2x_layer(F64), (2, 3, 2, 3)),
  ],
)
def test_bias_free_layers_are_linear(make_layer, shape):
  rng = np.random.default_rng(9)
  layer = make_layer(rng)
  x, y = rng.standard_normal(shape), rng.standard_normal(shape)
  a, b = 1.5, -0.75
  combined, _ = layer_forward(layer, a * x + b * y)
  separate = a * layer_forward(layer, x)[0] + b * layer_forward(layer, y)[0]
  np.testing.assert_allclose(combined, separate, atol=1e-12)


def test_avgpool2x2_values():
  y, _ = layer_forward(avgpool2x2_layer(F64), np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
  assert y.shape == (1, 1, 1, 1) and y[0, 0, 0, 0] == 2.5


def test_avgpool2x2_undoes_upsample_nn2x():
  x = np.random.default_rng(10).standard_normal((2, 3, 4, 5))
  up, _ = layer_forward(upsample_nn2x_layer(F64), x)
  assert up.shape == (2, 3, 8, 10)
  np.testing.assert_array_equal(layer_forward(avgpool2x2_layer(F64), up)[0], x)


def test_conv3x3_delta_kernel_is_identity():
  layer = conv3x3_layer(1, 1, np.random.default_rng(11), 0.2, F64)
  layer.weights = np.zeros((1, 1, 3, 3))
  layer.weights[0, 0, 1, 1] = 1.0
  x = np.random.default_rng(12).standard_normal((2, 1, 5, 4))
  np.testing.assert_array_equal(layer_forward(layer, x)[0], x)


def test_conv3x3_zero_padding_at_the_border():
  layer = conv3x3_layer(1, 1, np.random.default_rng(13), 0.2, F64)
  layer.weights = np.ones((1, 1, 3, 3))
  y, _ = layer_forward(layer, np.full((1, 1, 4, 4), 0.5))
  assert y[0, 0, 1, 2] == pytest.approx(9 * 0.5)
  assert y[0, 0, 0, 0] == pytest.approx(4 * 0.5)
  assert y[0, 0, 0, 1] == pytest.approx(6 * 0.5)
