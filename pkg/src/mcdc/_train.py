"""
The mixing function, the loss terms and the alternating stochastic gradient descent of the autoencoder
and the discriminator, for the reconstruction-only baseline, the adversarially regularized variant (acai)
and the mixing consistent variant (mcdc).
"""

import enum
import logging
import typing as t
from dataclasses import dataclass, field, fields, replace

import numpy as np
import typing_extensions as te

from ._data import LabeledDataset
from ._errors import InvalidArgumentError, ShapeError
from ._model import (
    ModelParams,
    backward_stack,
    discriminator_head,
    discriminator_head_backward,
    forward_stack,
)
from ._nn import Adam, ParamGrads, mse_loss
from ._util import make_rng

logger = logging.getLogger(__name__)


class Variant(enum.Enum):
    BASELINE = "baseline"
    ACAI = "acai"
    MCDC = "mcdc"


class AlphaRule(enum.Enum):
    #: `alpha ~ U[0, 0.5]` per sample; the mixing target is always the first input.
    UNIFORM_HALF = "uniform_half"

    #: `alpha ~ U[0, 1]` per sample; the mixing target is chosen by #mixing_target().
    UNIFORM = "uniform"


@dataclass
class TrainConfig:
    """Hyperparameters of a training run."""

    variant: Variant = Variant.MCDC

    #: Weight of the adversarial term in the autoencoder loss.
    lambda_: float = 0.5

    #: Blend factor of the stabilizing discriminator term, which sees `gamma * x + (1 - gamma) * xhat`.
    gamma: float = 0.2

    alpha_rule: AlphaRule = AlphaRule.UNIFORM_HALF

    #: Weight of the mixing consistency term (mcdc only). Zero turns mcdc into acai.
    mix_weight: float = 1.0

    batch_size: int = 64
    epochs: int = 400

    #: Number of updates on each sampled batch.
    inner_steps: int = 1

    lr: float = 1e-4
    seed: int = 0

    def validate(self) -> None:
        if self.lambda_ < 0:
            raise InvalidArgumentError(f"lambda must be >= 0, got {self.lambda_}")
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidArgumentError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.mix_weight < 0:
            raise InvalidArgumentError(f"mix_weight must be >= 0, got {self.mix_weight}")
        if self.batch_size < 1 or self.inner_steps < 1:
            raise InvalidArgumentError("batch_size and inner_steps must be >= 1")
        if self.epochs < 0:
            raise InvalidArgumentError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0:
            raise InvalidArgumentError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.seed < 2**64:
            raise InvalidArgumentError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


@dataclass(frozen=True)
class LossBreakdown:
    """
    The loss terms of one step (or their means over an epoch). Terms that a variant does not use are 0,
    and `total_autoencoder == recon + lambda * adversarial + mix_weight * mix_consistency`.
    """

    recon: float = 0.0
    adversarial: float = 0.0
    mix_consistency: float = 0.0
    total_autoencoder: float = 0.0
    discriminator: float = 0.0

    @staticmethod
    def mean(items: t.Sequence["LossBreakdown"]) -> "LossBreakdown":
        if not items:
            return LossBreakdown()
        return LossBreakdown(
            **{f.name: float(np.mean([getattr(item, f.name) for item in items])) for f in fields(LossBreakdown)}
        )

    def as_row(self) -> t.List[float]:
        return [self.recon, self.adversarial, self.mix_consistency, self.total_autoencoder, self.discriminator]


def pair_by_reversal(m: int) -> t.List[t.Tuple[int, int]]:
    """Pair item `i` of a batch of *m* items with item `m - 1 - i`."""

    if m < 1:
        raise InvalidArgumentError(f"batch size must be >= 1, got {m}")
    return [(i, m - 1 - i) for i in range(m)]


def _check_alpha(alpha: t.Union[float, np.ndarray]) -> None:
    values = np.asarray(alpha)
    if values.size and (np.any(values < 0.0) or np.any(values > 1.0) or not np.all(np.isfinite(values))):
        raise InvalidArgumentError(f"alpha must lie in [0, 1], got {alpha}")


def mix_latents(z_i: np.ndarray, z_j: np.ndarray, alpha: t.Union[float, np.ndarray]) -> np.ndarray:
    """
    The convex combination `(1 - alpha) * z_i + alpha * z_j`. *alpha* is a scalar or one coefficient per
    row of the latent batch.
    """

    if z_i.shape != z_j.shape:
        raise ShapeError(f"cannot mix latents of shapes {z_i.shape} and {z_j.shape}")
    _check_alpha(alpha)
    coeff = np.asarray(alpha, dtype=z_i.dtype)
    if coeff.ndim == 1:
        if coeff.shape[0] != z_i.shape[0]:
            raise ShapeError(f"got {coeff.shape[0]} mixing coefficients for {z_i.shape[0]} latents")
        coeff = coeff.reshape((-1,) + (1,) * (z_i.ndim - 1))
    one = z_i.dtype.type(1.0)
    return (one - coeff) * z_i + coeff * z_j


def mixing_target(i: int, j: int, alpha: float) -> int:
    """The index of the input a decoded mix must resemble: *i* for `alpha <= 0.5`, else *j*."""

    _check_alpha(alpha)
    return i if alpha <= 0.5 else j


def mixing_consistency_loss(x_target: np.ndarray, xhat_alpha: np.ndarray) -> t.Tuple[float, np.ndarray]:
    """MSE between the mixing targets and the decoded mixes; the gradient is with respect to *xhat_alpha*."""

    if x_target.shape != xhat_alpha.shape:
        raise ShapeError(f"mixing target shape {x_target.shape} differs from {xhat_alpha.shape}")
    return mse_loss(xhat_alpha, x_target)


def _discriminator_terms(
    alpha_hat_mixed: np.ndarray, alpha: np.ndarray, alpha_hat_blend: np.ndarray
) -> t.Tuple[float, np.ndarray, np.ndarray]:
    alpha_hat_mixed, alpha, alpha_hat_blend = map(np.asarray, (alpha_hat_mixed, alpha, alpha_hat_blend))
    if not (alpha_hat_mixed.shape == alpha.shape == alpha_hat_blend.shape) or alpha.ndim != 1:
        raise ShapeError(
            f"discriminator loss inputs differ in length: {alpha_hat_mixed.shape}, {alpha.shape}, "
            f"{alpha_hat_blend.shape}"
        )
    m = max(alpha.shape[0], 1)
    error = alpha_hat_mixed - alpha.astype(alpha_hat_mixed.dtype, copy=False)
    loss = float(np.mean(error * error, dtype=np.float64))
    loss += float(np.mean(alpha_hat_blend * alpha_hat_blend, dtype=np.float64))
    scale = alpha_hat_mixed.dtype.type(2.0 / m)
    return loss, error * scale, alpha_hat_blend * scale


def discriminator_loss(alpha_hat_mixed: np.ndarray, alpha: np.ndarray, alpha_hat_blend: np.ndarray) -> float:
    """
    Batch mean of `(alpha_hat_mixed - alpha)^2 + alpha_hat_blend^2`: the discriminator regresses the mixing
    coefficient of decoded mixes and predicts 0 for blends of inputs with their plain reconstructions.
    """

    return _discriminator_terms(alpha_hat_mixed, alpha, alpha_hat_blend)[0]


def autoencoder_loss(
    x_i: np.ndarray,
    xhat_i: np.ndarray,
    xhat_alpha: t.Optional[np.ndarray],
    alpha_hat_mixed: t.Optional[np.ndarray],
    target_x: t.Optional[np.ndarray],
    cfg: TrainConfig,
) -> LossBreakdown:
    """
    The autoencoder loss with its terms broken down. The baseline only uses the reconstruction term, acai
    adds `lambda * mean(alpha_hat_mixed^2)` and mcdc additionally the mixing consistency term.
    """

    recon, _ = mse_loss(xhat_i, x_i)
    if cfg.variant == Variant.BASELINE:
        return LossBreakdown(recon=recon, total_autoencoder=recon)

    if alpha_hat_mixed is None:
        raise InvalidArgumentError(f"variant {cfg.variant.value} needs the discriminator output of the mixes")
    alpha_hat = np.asarray(alpha_hat_mixed)
    adversarial = float(np.mean(alpha_hat * alpha_hat, dtype=np.float64))
    if cfg.variant == Variant.ACAI:
        return LossBreakdown(recon, adversarial, 0.0, recon + cfg.lambda_ * adversarial)

    if xhat_alpha is None or target_x is None:
        raise InvalidArgumentError("variant mcdc needs the decoded mixes and their targets")
    mix, _ = mixing_consistency_loss(target_x, xhat_alpha)
    return LossBreakdown(recon, adversarial, mix, recon + cfg.lambda_ * adversarial + cfg.mix_weight * mix)


@dataclass
class TrainState:
    """A model together with the optimizer states of the autoencoder and the discriminator."""

    model: ModelParams
    ae_optimizer: Adam
    disc_optimizer: Adam

    @staticmethod
    def create(model: ModelParams, lr: float) -> "TrainState":
        return TrainState(model, Adam(lr), Adam(lr))


@dataclass
class StepGradients:
    """The losses measured in a step and the parameter gradients of the three networks."""

    losses: LossBreakdown
    encoder: t.List[ParamGrads]
    decoder: t.List[ParamGrads]
    discriminator: t.List[ParamGrads] = field(default_factory=list)


def _sample_alpha(rule: AlphaRule, m: int, rng: np.random.Generator) -> np.ndarray:
    high = 0.5 if rule == AlphaRule.UNIFORM_HALF else 1.0
    return rng.uniform(0.0, high, size=m)


def _add_grads(a: t.List[ParamGrads], b: t.List[ParamGrads]) -> t.List[ParamGrads]:
    return [(wa + wb, ba + bb) for (wa, ba), (wb, bb) in zip(a, b)]


def compute_step(model: ModelParams, batch: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> StepGradients:
    """
    Run the forward passes of one training step on *batch* and back-propagate the discriminator loss into
    the discriminator parameters and the autoencoder loss into the encoder and decoder parameters. The
    discriminator sees the decoded mixes and the input/reconstruction blends as constants, and the
    autoencoder gradient passes through the discriminator without touching its parameters.

    One mixing coefficient per item is drawn from *rng* for every variant.
    """

    dtype = model.spec.precision.dtype
    x = np.asarray(batch, dtype=dtype)
    m = x.shape[0]
    if m == 0:
        raise InvalidArgumentError("empty batch")
    alpha = _sample_alpha(cfg.alpha_rule, m, rng).astype(dtype)
    partner = np.array([j for _, j in pair_by_reversal(m)])

    z, enc_caches = forward_stack(model.encoder, x)
    xhat, dec_caches = forward_stack(model.decoder, z)
    recon, grad_xhat = mse_loss(xhat, x)
    grad_z, dec_grads = backward_stack(model.decoder, dec_caches, grad_xhat)

    if cfg.variant == Variant.BASELINE:
        _, enc_grads = backward_stack(model.encoder, enc_caches, grad_z)
        zero = [(np.zeros_like(layer.weights), np.zeros_like(layer.bias)) for layer in model.discriminator]
        return StepGradients(autoencoder_loss(x, xhat, None, None, None, cfg), enc_grads, dec_grads, zero)

    z_alpha = mix_latents(z, z[partner], alpha)
    xhat_alpha, dec_alpha_caches = forward_stack(model.decoder, z_alpha)

    # Discriminator forward passes on the decoded mixes and on the input/reconstruction blends.
    gamma = dtype.type(cfg.gamma)
    blend = gamma * x + (dtype.type(1.0) - gamma) * xhat
    feat_mixed, disc_mixed_caches = forward_stack(model.discriminator, xhat_alpha)
    feat_blend, disc_blend_caches = forward_stack(model.discriminator, blend)
    alpha_hat_mixed = discriminator_head(feat_mixed)
    alpha_hat_blend = discriminator_head(feat_blend)

    disc_loss, grad_mixed, grad_blend = _discriminator_terms(alpha_hat_mixed, alpha, alpha_hat_blend)
    _, disc_grads_mixed = backward_stack(
        model.discriminator, disc_mixed_caches, discriminator_head_backward(feat_mixed, grad_mixed)
    )
    _, disc_grads_blend = backward_stack(
        model.discriminator, disc_blend_caches, discriminator_head_backward(feat_blend, grad_blend)
    )
    disc_grads = _add_grads(disc_grads_mixed, disc_grads_blend)

    # Autoencoder: the adversarial term pushes alpha_hat of the mixes towards 0.
    grad_alpha_hat = alpha_hat_mixed * dtype.type(2.0 * cfg.lambda_ / m)
    grad_xhat_alpha, _ = backward_stack(
        model.discriminator, disc_mixed_caches, discriminator_head_backward(feat_mixed, grad_alpha_hat)
    )

    shape = (-1,) + (1,) * (x.ndim - 1)
    targets = np.where(alpha.reshape(shape) <= 0.5, x, x[partner])
    if cfg.variant == Variant.MCDC:
        _, grad_mix = mixing_consistency_loss(targets, xhat_alpha)
        grad_xhat_alpha = grad_xhat_alpha + grad_mix * dtype.type(cfg.mix_weight)
        losses = autoencoder_loss(x, xhat, xhat_alpha, alpha_hat_mixed, targets, cfg)
    else:
        losses = autoencoder_loss(x, xhat, None, alpha_hat_mixed, None, cfg)

    grad_z_alpha, dec_alpha_grads = backward_stack(model.decoder, dec_alpha_caches, grad_xhat_alpha)
    dec_grads = _add_grads(dec_grads, dec_alpha_grads)
    coeff = alpha.reshape(-1, 1)
    grad_z = grad_z + (dtype.type(1.0) - coeff) * grad_z_alpha + (coeff * grad_z_alpha)[partner]
    _, enc_grads = backward_stack(model.encoder, enc_caches, grad_z)

    return StepGradients(replace(losses, discriminator=disc_loss), enc_grads, dec_grads, disc_grads)


def train_step(state: TrainState, batch: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> LossBreakdown:
    """
    One alternating update: the discriminator descends its loss, then the encoder and decoder descend the
    autoencoder loss. Both gradients are taken at the parameters before the step, and the returned losses
    are the ones measured before the updates. The baseline leaves the discriminator untouched.
    """

    step = compute_step(state.model, batch, cfg, rng)
    if cfg.variant != Variant.BASELINE:
        state.disc_optimizer.step("discriminator", state.model.discriminator, step.discriminator)
    state.ae_optimizer.step("encoder", state.model.encoder, step.encoder)
    state.ae_optimizer.step("decoder", state.model.decoder, step.decoder)
    return step.losses


class EpochCallback(te.Protocol):
    def __call__(self, epoch: int, losses: LossBreakdown) -> None:
        ...


def train(
    state: TrainState,
    dataset: t.Union[LabeledDataset, np.ndarray],
    cfg: TrainConfig,
    callbacks: t.Sequence[EpochCallback] = (),
    rng: t.Optional[np.random.Generator] = None,
) -> t.List[LossBreakdown]:
    """
    Train for `cfg.epochs` epochs. Every epoch reshuffles the data with *rng* (by default seeded from
    `cfg.seed`) and visits it in batches of `cfg.batch_size`; a final short batch is used as is. Returns
    the per-epoch means of the step losses and hands each of them to the *callbacks*.
    """

    cfg.validate()
    images = dataset.images if isinstance(dataset, LabeledDataset) else np.asarray(dataset)
    if images.shape[0] == 0:
        raise InvalidArgumentError("cannot train on an empty dataset")
    rng = make_rng(cfg.seed) if rng is None else rng

    history: t.List[LossBreakdown] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(images.shape[0])
        losses = []
        for start in range(0, images.shape[0], cfg.batch_size):
            batch = images[order[start : start + cfg.batch_size]]
            for _ in range(cfg.inner_steps):
                losses.append(train_step(state, batch, cfg, rng))
        summary = LossBreakdown.mean(losses)
        history.append(summary)
        logger.info(
            "epoch %d/%d: recon=%.6f adversarial=%.6f mix=%.6f total=%.6f discriminator=%.6f",
            epoch + 1,
            cfg.epochs,
            *summary.as_row(),
        )
        for callback in callbacks:
            callback(epoch, summary)
    return history
