"""
Latent geometry analyses of a trained model: per-class PCA variance profiles, 2D projections and
interpolation grids between pairs of inputs.
"""

import logging
import typing as t
from dataclasses import dataclass

import numpy as np

from ._cluster import pca_fit
from ._errors import InvalidArgumentError, ShapeError
from ._model import ModelParams, decode, encode
from ._train import mix_latents, mixing_target

logger = logging.getLogger(__name__)

#: A pair of inputs `(x_i, x_j)`, each of the model's per-item input shape.
Pair = t.Tuple[np.ndarray, np.ndarray]


@dataclass
class PcaProfile:
    #: Number of leading components retained per class.
    cutoff: int

    #: Per-component share of the retained variance, averaged over the classes.
    mean_share: np.ndarray

    #: Standard deviation of the per-component share across the classes.
    std_share: np.ndarray

    classes_used: t.List[int]


@dataclass
class InterpolationGrid:
    """Decoded mixes, `images[r, s]` being pair *r* mixed with `alphas[s]`."""

    alphas: np.ndarray
    images: np.ndarray

    @property
    def rows(self) -> int:
        return int(self.images.shape[0])

    @property
    def cols(self) -> int:
        return int(self.images.shape[1])


def class_pca_profile(Z: np.ndarray, labels: np.ndarray, cutoff: int = 40) -> PcaProfile:
    """
    Fit a PCA to the latent rows of every class, normalize the leading *cutoff* eigenvalues of each class to
    sum to 1 and average the normalized shares over the classes. A *cutoff* larger than the latent
    dimension is clamped with a warning.
    """

    Z, labels = np.asarray(Z), np.asarray(labels)
    if Z.ndim != 2 or labels.shape != (Z.shape[0],):
        raise ShapeError(f"expected [N, D] latents with N labels, got {Z.shape} and {labels.shape}")
    if cutoff < 1:
        raise InvalidArgumentError(f"cutoff must be >= 1, got {cutoff}")
    if cutoff > Z.shape[1]:
        logger.warning("cutoff %d exceeds the latent dimension, clamping to %d", cutoff, Z.shape[1])
        cutoff = Z.shape[1]

    classes = [int(c) for c in np.unique(labels)]
    if not classes:
        raise InvalidArgumentError("class_pca_profile needs at least one sample")
    shares = []
    for cls in classes:
        members = Z[labels == cls]
        if members.shape[0] < 2:
            raise InvalidArgumentError(f"class {cls} has {members.shape[0]} sample(s), at least 2 are needed")
        top = pca_fit(members).eigenvalues[:cutoff]
        total = top.sum()
        shares.append(top / total if total > 0 else np.full(cutoff, 1.0 / cutoff))
    stacked = np.stack(shares)
    return PcaProfile(cutoff, stacked.mean(axis=0), stacked.std(axis=0), classes)


def first_component_share(profile: PcaProfile) -> float:
    return float(profile.mean_share[0])


def project_2d(Z: np.ndarray) -> np.ndarray:
    """The coordinates of the centered rows of *Z* on the two leading principal components."""

    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] < 2:
        raise InvalidArgumentError(f"project_2d needs [N, D] latents with D >= 2, got shape {Z.shape}")
    basis = pca_fit(Z)
    return (Z - basis.mean) @ basis.components[:2].T


def _stack_pairs(pairs: t.Sequence[Pair]) -> t.Tuple[np.ndarray, np.ndarray]:
    if not pairs:
        raise InvalidArgumentError("at least one pair is required")
    return np.stack([x_i for x_i, _ in pairs]), np.stack([x_j for _, x_j in pairs])


def interpolation_grid(model: ModelParams, pairs: t.Sequence[Pair], alphas: t.Sequence[float]) -> InterpolationGrid:
    """Decode `mix_latents(encode(x_i), encode(x_j), alpha)` for every pair and every alpha."""

    alpha_values = np.asarray(alphas, dtype=np.float64)
    if alpha_values.ndim != 1 or alpha_values.size == 0:
        raise InvalidArgumentError("alphas must be a non-empty vector")
    if np.any(alpha_values < 0.0) or np.any(alpha_values > 1.0):
        raise InvalidArgumentError(f"alphas must lie in [0, 1], got {alpha_values.tolist()}")
    if np.any(np.diff(alpha_values) < 0):
        raise InvalidArgumentError("alphas must be ascending")

    x_i, x_j = _stack_pairs(pairs)
    z_i, z_j = encode(model, x_i), encode(model, x_j)
    columns = [decode(model, mix_latents(z_i, z_j, float(alpha))) for alpha in alpha_values]
    return InterpolationGrid(alpha_values, np.stack(columns, axis=1))


def _mse_per_item(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = (a - b).reshape(a.shape[0], -1).astype(np.float64)
    return (diff * diff).mean(axis=1)


def mixing_side_score(model: ModelParams, pairs: t.Sequence[Pair], alpha: float = 0.25) -> float:
    """
    The fraction of pairs whose decoded mix at *alpha* is strictly closer (in MSE) to the reconstruction of
    the input selected by #mixing_target() than to the reconstruction of the other input.
    """

    if not 0.0 <= alpha <= 1.0 or alpha == 0.5:
        raise InvalidArgumentError(f"alpha must lie in [0, 1] and differ from 0.5, got {alpha}")
    x_i, x_j = _stack_pairs(pairs)
    z_i, z_j = encode(model, x_i), encode(model, x_j)
    recon_i, recon_j = decode(model, z_i), decode(model, z_j)
    mixed = decode(model, mix_latents(z_i, z_j, alpha))
    if mixing_target(0, 1, alpha) == 0:
        target, other = recon_i, recon_j
    else:
        target, other = recon_j, recon_i
    closer = _mse_per_item(mixed, target) < _mse_per_item(mixed, other)
    return float(closer.mean())
