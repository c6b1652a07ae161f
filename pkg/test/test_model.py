import numpy as np
import pytest

from mcdc._errors import ShapeError, SpecError
from mcdc._gradcheck import numerical_gradient, relative_error
from mcdc._model import (
  ArchitectureSpec,
  Family,
  backward_stack,
  build_model,
  decode,
  discriminate,
  discriminator_head,
  discriminator_head_backward,
  encode,
  forward_stack,
  parameter_count,
)
from mcdc._nn import LayerKind, Precision


def _conv_spec(**kwargs) -> ArchitectureSpec:
  kwargs.setdefault('family', Family.CONV_PAPER)
  kwargs.setdefault('input_shape', (1, 32, 32))
  return ArchitectureSpec(**kwargs)


def test_conv_paper_shapes():
  model = build_model(_conv_spec(), np.random.default_rng(0))
  x = np.random.default_rng(1).random((2, 1, 32, 32)).astype(np.float32)
  z = encode(model, x)
  assert z.shape == (2, 256)
  assert z.dtype == np.float32
  assert decode(model, z).shape == (2, 1, 32, 32)
  assert discriminate(model, x).shape == (2,)


def test_conv_paper_layer_layout():
  model = build_model(_conv_spec(base_channels=4), np.random.default_rng(0))
  kinds = [layer.kind for layer in model.encoder]
  assert kinds.count(LayerKind.CONV3X3) == 6
  assert kinds.count(LayerKind.AVGPOOL2X2) == 2
  assert kinds[-1] == LayerKind.DENSE

  # Channels double inside a block and between blocks.
  convs = [layer for layer in model.encoder if layer.kind == LayerKind.CONV3X3]
  assert [layer.weights.shape[0] for layer in convs] == [4, 8, 8, 16, 16, 32]
  assert model.encoder[-1].weights.shape == (32 * 8 * 8, 256)

  decoder_convs = [layer for layer in model.decoder if layer.kind == LayerKind.CONV3X3]
  assert decoder_convs[-1].weights.shape[0] == 1
  assert model.decoder[-1].kind == LayerKind.CONV3X3


def test_mlp_toy_latent_two():
  spec = ArchitectureSpec(family=Family.MLP_TOY, input_shape=(1, 28, 28), base_channels=32, num_blocks=2, latent_dim=2)
  model = build_model(spec, np.random.default_rng(0))
  x = np.random.default_rng(1).random((5, 1, 28, 28)).astype(np.float32)
  z = encode(model, x)
  assert z.shape == (5, 2)
  assert decode(model, z).shape == (5, 1, 28, 28)
  assert model.encoder[-1].kind == LayerKind.DENSE


def test_discriminator_has_encoder_layout_with_own_parameters():
  model = build_model(_conv_spec(base_channels=2, num_blocks=2, input_shape=(1, 8, 8)), np.random.default_rng(0))
  assert [layer.kind for layer in model.discriminator] == [layer.kind for layer in model.encoder]
  assert parameter_count(model.discriminator) == parameter_count(model.encoder)
  assert not np.array_equal(model.discriminator[0].weights, model.encoder[0].weights)


@pytest.mark.parametrize(
  'spec',
  [
    ArchitectureSpec(latent_dim=0),
    ArchitectureSpec(num_blocks=0),
    ArchitectureSpec(input_shape=()),
    ArchitectureSpec(negative_slope=-0.1),
    ArchitectureSpec(family=Family.CONV_PAPER, input_shape=(784,)),
    ArchitectureSpec(family=Family.CONV_PAPER, input_shape=(1, 30, 30), num_blocks=3),
  ],
)
def test_invalid_specs(spec):
  with pytest.raises(SpecError):
    build_model(spec, np.random.default_rng(0))


def test_divisibility_is_only_required_up_to_the_last_pool():
  build_model(_conv_spec(input_shape=(1, 12, 20), base_channels=2, num_blocks=3), np.random.default_rng(0))


def test_build_is_deterministic():
  spec = ArchitectureSpec(input_shape=(6,), base_channels=4, num_blocks=2, latent_dim=2)
  a = build_model(spec, np.random.default_rng(42))
  b = build_model(spec, np.random.default_rng(42))
  for stack_a, stack_b in zip(a.stacks().values(), b.stacks().values()):
    for layer_a, layer_b in zip(stack_a, stack_b):
      np.testing.assert_array_equal(layer_a.weights, layer_b.weights)


def test_shape_errors():
  model = build_model(ArchitectureSpec(input_shape=(6,), base_channels=4, latent_dim=2), np.random.default_rng(0))
  with pytest.raises(ShapeError):
    encode(model, np.zeros((3, 7)))
  with pytest.raises(ShapeError):
    decode(model, np.zeros((3, 3)))
  with pytest.raises(ShapeError):
    discriminate(model, np.zeros((3,)))


def test_spec_items_round_trip():
  spec = _conv_spec(base_channels=8, latent_dim=10, negative_slope=0.1, precision=Precision.FLOAT64)
  assert ArchitectureSpec.from_items(spec.to_items()) == spec
  with pytest.raises(SpecError):
    ArchitectureSpec.from_items({'family': 'rnn'})


def test_autoencoder_gradient_through_stacks():
  spec = _conv_spec(input_shape=(1, 4, 4), base_channels=2, num_blocks=2, latent_dim=3, precision=Precision.FLOAT64)
  model = build_model(spec, np.random.default_rng(3))
  rng = np.random.default_rng(4)
  x = rng.standard_normal((2, 1, 4, 4))
  r = rng.standard_normal((2, 1, 4, 4))

  def loss(v: np.ndarray) -> float:
    return float(np.sum(decode(model, encode(model, v)) * r))

  z, enc_caches = forward_stack(model.encoder, x)
  _, dec_caches = forward_stack(model.decoder, z)
  grad_z, _ = backward_stack(model.decoder, dec_caches, r)
  grad_x, grads = backward_stack(model.encoder, enc_caches, grad_z)

  assert len(grads) == len(model.encoder)
  assert relative_error(grad_x, numerical_gradient(loss, x.copy())) < 1e-4


def test_discriminator_head_gradient():
  rng = np.random.default_rng(5)
  features = rng.standard_normal((3, 2, 2, 2))
  weights = rng.standard_normal(3)
  np.testing.assert_allclose(discriminator_head(features), features.reshape(3, -1).mean(axis=1))
  grad = discriminator_head_backward(features, weights)
  numeric = numerical_gradient(lambda f: float(discriminator_head(f) @ weights), features.copy())
  assert relative_error(grad, numeric) < 1e-4


@pytest.mark.parametrize('fill', [1.0, 0.0])
def test_discriminate_is_the_mean_of_the_final_features(fill):
  spec = _conv_spec(input_shape=(1, 8, 8), base_channels=2, num_blocks=2, latent_dim=4)
  model = build_model(spec, np.random.default_rng(6))
  last = model.discriminator[-1]
  last.weights = np.zeros_like(last.weights)
  last.bias = np.full_like(last.bias, fill)
  xhat = np.random.default_rng(7).random((3, 1, 8, 8)).astype(np.float32)
  np.testing.assert_array_equal(discriminate(model, xhat), np.full(3, fill, dtype=np.float32))
  np.testing.assert_array_equal(discriminator_head(np.full((2, 3, 2, 2), fill)), [fill, fill])
