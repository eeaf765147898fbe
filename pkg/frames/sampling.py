"""
Temporal frame sampling and the frame-coverage estimate.
"""
import hashlib
import logging
import math
from dataclasses import dataclass

import numpy as np

from core.exceptions import InvalidInputError

logger = logging.getLogger(__name__)

WITHOUT_REPLACEMENT = 'without_replacement'
WITH_REPLACEMENT = 'with_replacement'
UNIFORM = 'uniform'
SAMPLING_MODES = (WITHOUT_REPLACEMENT, WITH_REPLACEMENT, UNIFORM)

# Upper bound on draws materialized per Monte Carlo chunk.
_MC_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class SamplingPlan:
    y: int
    mode: str = WITHOUT_REPLACEMENT
    seed: int = 0

    def __post_init__(self):
        if self.mode not in SAMPLING_MODES:
            raise InvalidInputError(f"unknown sampling mode '{self.mode}'")


def derive_draw_id(*parts):
    """
    Stable 63-bit draw id from (epoch, step, video_id, view, ...).

    Python's hash() is salted per process, so a digest is used instead.
    """
    key = '|'.join(str(p) for p in parts).encode('utf-8')
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), 'little') >> 1


def sample_indices(T, plan, draw_id=0):
    """
    Return plan.y frame indices in [0, T), sorted in temporal order.

    The result is a pure function of (plan.seed, draw_id, T, plan.y, plan.mode).
    In without_replacement mode a clip shorter than y is padded by repeating its
    last index.
    """
    y = plan.y
    if y <= 0:
        raise InvalidInputError(f"frames per view must be positive, got y={y}")
    if T < 1:
        raise InvalidInputError(f"frame count must be at least 1, got T={T}")

    if plan.mode == UNIFORM:
        indices = (np.arange(y) * 2 + 1) * T // (2 * y)
        return [int(i) for i in indices]

    rng = np.random.default_rng(np.random.SeedSequence([plan.seed & (2**64 - 1), draw_id]))
    if plan.mode == WITH_REPLACEMENT:
        indices = np.sort(rng.integers(0, T, size=y))
    elif y <= T:
        indices = np.sort(rng.choice(T, size=y, replace=False))
    else:
        indices = np.concatenate([np.arange(T), np.full(y - T, T - 1)])
    return [int(i) for i in indices]


def coverage_probability(T, y, B):
    """Probability that one given frame is never drawn: (1 - 1/T) ** (B * y)."""
    if T < 1 or y < 0 or B < 0:
        raise InvalidInputError(f"coverage needs T >= 1, y >= 0, B >= 0 (got T={T}, y={y}, B={B})")
    return (1.0 - 1.0 / T) ** (B * y)


@dataclass(frozen=True)
class CoverageEstimate:
    estimate: float
    stderr: float
    trials: int


def monte_carlo_coverage(T, y, B, trials, seed=0):
    """
    Fraction of trials in which frame 0 never appears across B with-replacement
    draws of y indices each, with its binomial standard error.
    """
    if trials < 1:
        raise InvalidInputError(f"trials must be at least 1, got {trials}")
    if T < 1 or y < 0 or B < 0:
        raise InvalidInputError(f"coverage needs T >= 1, y >= 0, B >= 0 (got T={T}, y={y}, B={B})")

    draws = B * y
    if draws == 0:
        return CoverageEstimate(estimate=1.0, stderr=0.0, trials=trials)

    rng = np.random.default_rng(seed)
    chunk = max(1, _MC_CHUNK_ELEMENTS // draws)
    dtype = np.int16 if T <= np.iinfo(np.int16).max else np.int64
    misses = 0
    done = 0
    while done < trials:
        rows = min(chunk, trials - done)
        sample = rng.integers(0, T, size=(rows, draws), dtype=dtype)
        misses += int(np.count_nonzero(~(sample == 0).any(axis=1)))
        done += rows

    p = misses / trials
    stderr = math.sqrt(p * (1.0 - p) / trials)
    logger.debug("coverage T=%d y=%d B=%d trials=%d -> %.6g +/- %.2g", T, y, B, trials, p, stderr)
    return CoverageEstimate(estimate=p, stderr=stderr, trials=trials)


def coverage_table(Ts, ys, Bs, trials, seed=0):
    """Rows of (T, y, B, closed_form, monte_carlo, stderr) over the grid Ts x ys x Bs."""
    rows = []
    for offset, (T, y, B) in enumerate((T, y, B) for T in Ts for y in ys for B in Bs):
        mc = monte_carlo_coverage(T, y, B, trials, seed=seed + offset)
        rows.append({
            'T': T, 'y': y, 'B': B,
            'closed_form': coverage_probability(T, y, B),
            'monte_carlo': mc.estimate,
            'stderr': mc.stderr,
        })
    return rows


def within_tolerance(closed_form, estimate, trials, n_se=4.0):
    """
    Monte Carlo agreement test at n_se standard errors.

    The standard error is taken from the closed form so a run that observes
    no misses still gets a non-zero band.
    """
    se = math.sqrt(closed_form * (1.0 - closed_form) / trials)
    return abs(estimate - closed_form) <= n_se * se + 1e-12
