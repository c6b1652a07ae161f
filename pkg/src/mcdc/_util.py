import functools
import logging
import time
import typing as t

import numpy as np

from ._errors import InvalidArgumentError

T_Callable = t.TypeVar("T_Callable", bound=t.Callable[..., t.Any])
logger = logging.getLogger(__name__)


def make_rng(seed: int) -> np.random.Generator:
    """Create the root random generator of a run from an unsigned 64-bit *seed*."""

    if seed < 0 or seed >= 2**64:
        raise InvalidArgumentError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.default_rng(np.random.SeedSequence(seed))


def split_rng(rng: np.random.Generator, n: int) -> t.List[np.random.Generator]:
    """
    Derive *n* independent child generators from *rng*. The parent is advanced by a single draw, so
    splitting is itself deterministic with respect to the parent's state.
    """

    entropy = int(rng.integers(0, 2**63))
    return [np.random.default_rng(child) for child in np.random.SeedSequence(entropy).spawn(n)]


def timed(func: T_Callable) -> T_Callable:
    """Log the wall time of each call to *func* at DEBUG level."""

    @functools.wraps(func)
    def wrapper(*a: t.Any, **kw: t.Any) -> t.Any:
        start = time.perf_counter()
        try:
            return func(*a, **kw)
        finally:
            logger.debug("%s took %.3fs", func.__qualname__, time.perf_counter() - start)

    return t.cast(T_Callable, wrapper)
