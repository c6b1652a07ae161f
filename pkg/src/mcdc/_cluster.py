"""
Clustering evaluation of latent representations: PCA whitening, k-means with restarts, the clustering
accuracy under the optimal one-to-one cluster-to-class mapping and the normalized mutual information.
"""

import logging
import typing as t
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import entropy
from sklearn.metrics import mutual_info_score, normalized_mutual_info_score
from sklearn.metrics.cluster import contingency_matrix

from ._errors import InvalidArgumentError, ShapeError
from ._util import split_rng, timed

logger = logging.getLogger(__name__)


@dataclass
class PcaBasis:
    """Principal axes of a sample: orthonormal *components* (rows) in descending eigenvalue order."""

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray


@dataclass
class ClusterResult:
    assignments: np.ndarray
    centroids: np.ndarray

    #: Sum of squared Euclidean distances of the points to their assigned centroid.
    inertia: float

    restarts_run: int

    #: The final inertia of every restart, in restart order.
    restart_inertias: t.List[float] = field(default_factory=list)

    #: Index of the winning restart.
    best_restart: int = 0


@dataclass
class ClusterMetrics:
    acc: float
    nmi: float

    #: Mutual information and entropies in nats.
    mutual_information: float
    entropy_y: float
    entropy_c: float

    inertia: float = float("nan")


def pca_fit(X: np.ndarray) -> PcaBasis:
    """
    Eigendecomposition of the sample covariance (divisor `N - 1`). Each component is signed so that its
    largest-magnitude entry is positive; tiny negative eigenvalues are clamped to 0.
    """

    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"pca_fit expects an [N, D] matrix, got shape {X.shape}")
    if X.shape[0] < 2:
        raise InvalidArgumentError(f"pca_fit needs at least 2 samples, got {X.shape[0]}")
    mean = X.mean(axis=0)
    centered = X - mean
    covariance = centered.T @ centered / (X.shape[0] - 1)
    eigenvalues, vectors = np.linalg.eigh(covariance)
    order = np.argsort(eigenvalues, kind="stable")[::-1]
    eigenvalues = np.maximum(eigenvalues[order], 0.0)
    components = vectors[:, order].T
    pivots = np.abs(components).argmax(axis=1)
    signs = np.sign(components[np.arange(components.shape[0]), pivots])
    signs[signs == 0] = 1.0
    return PcaBasis(mean, components * signs[:, None], eigenvalues)


def pca_whiten(
    X: np.ndarray, basis: PcaBasis, eps: float = 1e-8, n_components: t.Optional[int] = None
) -> np.ndarray:
    """
    Project the rows of *X* onto the principal axes and scale each axis by `1 / sqrt(eigenvalue + eps)`.
    If *n_components* is given, only the leading components are kept.
    """

    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != basis.mean.shape[0]:
        raise ShapeError(f"pca_whiten expects [N, {basis.mean.shape[0]}] rows, got shape {X.shape}")
    components, eigenvalues = basis.components, basis.eigenvalues
    if n_components is not None:
        if not 1 <= n_components <= components.shape[0]:
            raise InvalidArgumentError(f"n_components must be in [1, {components.shape[0]}], got {n_components}")
        components, eigenvalues = components[:n_components], eigenvalues[:n_components]
    return (X - basis.mean) @ components.T / np.sqrt(eigenvalues + eps)


def _assign(X: np.ndarray, centroids: np.ndarray) -> t.Tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per point (lowest index on ties) and the squared distance to it."""

    # Direct differences, so equidistant centroids compare exactly equal.
    residual = X[:, None, :] - centroids[None, :, :]
    distances = np.einsum("nkd,nkd->nk", residual, residual)
    labels = distances.argmin(axis=1)
    return labels, distances[np.arange(X.shape[0]), labels]


def _inertia(X: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    residual = X - centroids[labels]
    return float(np.einsum("nd,nd->", residual, residual))


def lloyd(
    X: np.ndarray, initial_centroids: np.ndarray, max_iter: int = 300
) -> t.Tuple[np.ndarray, np.ndarray, float, t.List[float]]:
    """
    Lloyd's algorithm from the given centroids. A cluster that runs empty is re-seeded with the point
    farthest from its centroid. Stops when the assignments no longer change or after *max_iter* updates.

    Returns the assignments, the centroids, the final inertia and the inertia after every assignment step.
    """

    X = np.asarray(X, dtype=np.float64)
    centroids = np.array(initial_centroids, dtype=np.float64)
    k = centroids.shape[0]
    labels, _ = _assign(X, centroids)
    trace = [_inertia(X, centroids, labels)]
    for _ in range(max_iter):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, X)
        filled = counts > 0
        centroids[filled] = sums[filled] / counts[filled, None]
        if not filled.all():
            residual = X - centroids[labels]
            distances = np.einsum("nd,nd->n", residual, residual)
            for cluster in np.flatnonzero(~filled):
                farthest = int(distances.argmax())
                centroids[cluster] = X[farthest]
                distances[farthest] = -1.0
        new_labels, _ = _assign(X, centroids)
        trace.append(_inertia(X, centroids, new_labels))
        converged = np.array_equal(new_labels, labels)
        labels = new_labels
        if converged:
            break
    return labels, centroids, trace[-1], trace


@timed
def kmeans(
    X: np.ndarray,
    k: int,
    n_init: int = 1000,
    max_iter: int = 300,
    rng: t.Optional[np.random.Generator] = None,
    n_jobs: int = 1,
) -> ClusterResult:
    """
    Run *n_init* restarts of Lloyd's algorithm, each initialized with *k* distinct data points drawn
    uniformly, and return the restart with the smallest inertia (ties go to the lowest restart index).
    Restarts draw from pre-split generators, so running them on *n_jobs* threads gives the same result.
    """

    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"kmeans expects an [N, D] matrix, got shape {X.shape}")
    if k < 1 or k > X.shape[0]:
        raise InvalidArgumentError(f"k must be in [1, {X.shape[0]}], got {k}")
    if n_init < 1:
        raise InvalidArgumentError(f"n_init must be >= 1, got {n_init}")
    rngs = split_rng(rng if rng is not None else np.random.default_rng(0), n_init)

    def restart(index: int) -> t.Tuple[np.ndarray, np.ndarray, float]:
        seeds = rngs[index].choice(X.shape[0], size=k, replace=False)
        labels, centroids, inertia, _ = lloyd(X, X[seeds], max_iter)
        return labels, centroids, inertia

    def outcomes() -> t.Iterator[t.Tuple[np.ndarray, np.ndarray, float]]:
        if n_jobs <= 1:
            yield from map(restart, range(n_init))
            return
        batch = 4 * n_jobs
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            for start in range(0, n_init, batch):
                yield from pool.map(restart, range(start, min(start + batch, n_init)))

    best_index = -1
    best: t.Optional[t.Tuple[np.ndarray, np.ndarray, float]] = None
    inertias: t.List[float] = []
    for index, outcome in enumerate(outcomes()):
        inertias.append(outcome[2])
        if best is None or outcome[2] < best[2]:
            best_index, best = index, outcome

    assert best is not None
    labels, centroids, inertia = best
    logger.info("kmeans: best of %d restarts is #%d with inertia %.6g", n_init, best_index, inertia)
    return ClusterResult(labels, centroids, inertia, n_init, inertias, best_index)


def _check_labelings(y: np.ndarray, c: np.ndarray) -> t.Tuple[np.ndarray, np.ndarray]:
    y, c = np.asarray(y).ravel(), np.asarray(c).ravel()
    if y.shape != c.shape:
        raise ShapeError(f"labelings differ in length: {y.shape[0]} vs {c.shape[0]}")
    if y.size == 0:
        raise InvalidArgumentError("labelings must not be empty")
    return y, c


def hungarian_accuracy(y: np.ndarray, c: np.ndarray) -> float:
    """
    The fraction of points whose cluster maps to their class under the best one-to-one mapping of cluster
    ids to classes, found by solving the assignment problem on the (zero-padded, square) contingency table.
    """

    y, c = _check_labelings(y, c)
    table = contingency_matrix(y, c)
    size = max(table.shape)
    square = np.zeros((size, size), dtype=np.int64)
    square[: table.shape[0], : table.shape[1]] = table
    rows, cols = linear_sum_assignment(square, maximize=True)
    return float(square[rows, cols].sum()) / y.size


def nmi(y: np.ndarray, c: np.ndarray) -> ClusterMetrics:
    """
    Mutual information of the two labelings normalized by the mean of their entropies (natural log). If both
    labelings put every point in one group the NMI is 1. *acc* is left at NaN.
    """

    y, c = _check_labelings(y, c)
    table = contingency_matrix(y, c)
    h_y = float(entropy(table.sum(axis=1)))
    h_c = float(entropy(table.sum(axis=0)))
    mi = float(mutual_info_score(None, None, contingency=table))
    score = float(normalized_mutual_info_score(y, c, average_method="arithmetic"))
    return ClusterMetrics(float("nan"), min(score, 1.0), mi, h_y, h_c)


def evaluate_clustering(y: np.ndarray, c: np.ndarray, inertia: float = float("nan")) -> ClusterMetrics:
    metrics = nmi(y, c)
    metrics.acc = hungarian_accuracy(y, c)
    metrics.inertia = inertia
    return metrics


def cluster_latents(
    Z: np.ndarray,
    k: int,
    n_init: int = 1000,
    max_iter: int = 300,
    rng: t.Optional[np.random.Generator] = None,
    whiten_eps: float = 1e-8,
    whiten_components: t.Optional[int] = None,
    n_jobs: int = 1,
) -> ClusterResult:
    """PCA-whiten the latent rows *Z* and cluster them with #kmeans()."""

    whitened = pca_whiten(Z, pca_fit(Z), whiten_eps, whiten_components)
    return kmeans(whitened, k, n_init, max_iter, rng, n_jobs)
