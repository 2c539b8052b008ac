"""Monotonic alignment search between token prior distributions and frames.

Frames j get log-likelihoods under each token's diagonal Gaussian
(mu_i, sigma_i); a forward dynamic program finds the monotonic surjective
token-to-frame alignment maximizing the total log-likelihood, with optional
per-cell Gaussian exploration noise that anneals away over training. The
brute-force enumerator here is the search's correctness oracle.

All of this is discrete search and runs outside the gradient tape; training
losses differentiate the likelihood terms at the chosen cells downstream.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .numerics import Rng

LOG_2PI = math.log(2.0 * math.pi)

# exploration-noise schedule: scale starts at 0.01 and loses 2e-6 per global
# step, hitting exactly 0 at step 5000
NOISE_START = 0.01
NOISE_DECREMENT = 2e-6


class InfeasibleAlignmentError(ValueError):
    """More tokens than frames: no monotonic surjective alignment exists."""


class GridSizeError(ValueError):
    """Grid too large for exhaustive enumeration."""


@dataclass
class LogProbGrid:
    """I x J matrix of frame-given-token log-likelihoods with a validity mask.

    Rows/columns past (valid_i, valid_j) are padding and excluded from every
    statistic and DP transition.
    """

    P: np.ndarray
    valid_i: int
    valid_j: int

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        if self.P.ndim != 2:
            raise ValueError(f"grid must be 2-D, got shape {self.P.shape}")
        if not (1 <= self.valid_i <= self.P.shape[0]):
            raise ValueError(f"valid_i={self.valid_i} out of range for {self.P.shape}")
        if not (1 <= self.valid_j <= self.P.shape[1]):
            raise ValueError(f"valid_j={self.valid_j} out of range for {self.P.shape}")
        if not np.all(np.isfinite(self.valid_region)):
            raise ValueError("grid has non-finite entries inside the valid region")

    @property
    def valid_region(self) -> np.ndarray:
        return self.P[: self.valid_i, : self.valid_j]


@dataclass
class Alignment:
    """Monotonic surjective frame-to-token map stored as per-token durations."""

    durations: np.ndarray

    def __post_init__(self):
        self.durations = np.asarray(self.durations, dtype=np.int64)
        if self.durations.ndim != 1 or self.durations.size == 0:
            raise ValueError("durations must be a non-empty 1-D integer vector")
        if (self.durations < 1).any():
            raise ValueError(f"every duration must be >= 1, got {self.durations}")

    @property
    def n_frames(self) -> int:
        return int(self.durations.sum())

    def frame_tokens(self) -> np.ndarray:
        """Token index owning each frame, length sum(durations)."""
        return np.repeat(np.arange(self.durations.size), self.durations)


def noise_scale_at(step: int) -> float:
    """Linear annealing schedule: max(0, 0.01 - 2e-6 * step)."""
    return max(0.0, NOISE_START - NOISE_DECREMENT * step)


def log_prob_grid(z: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> LogProbGrid:
    """Diagonal-Gaussian log-likelihood of every frame under every token.

    z: (J, C) frames; mu, sigma: (I, C) per-token statistics, sigma > 0.
    P[i, j] = sum_c [ -log sigma_ic - log(2 pi)/2 - (z_jc - mu_ic)^2 / (2 sigma_ic^2) ].
    """
    z = np.asarray(z, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if z.ndim != 2 or mu.ndim != 2 or sigma.ndim != 2:
        raise ValueError(f"expected 2-D z, mu, sigma, got {z.shape}, {mu.shape}, {sigma.shape}")
    if mu.shape != sigma.shape or z.shape[1] != mu.shape[1]:
        raise ValueError(f"channel mismatch: z {z.shape}, mu {mu.shape}, sigma {sigma.shape}")
    if (sigma <= 0).any():
        raise ValueError("sigma must be strictly positive")
    i, c = mu.shape
    j = z.shape[0]
    diff = z[None, :, :] - mu[:, None, :]  # (I, J, C)
    quad = diff * diff / (2.0 * sigma[:, None, :] ** 2)
    const = (-np.log(sigma) - 0.5 * LOG_2PI).sum(axis=1)  # (I,)
    P = const[:, None] - quad.sum(axis=2)
    return LogProbGrid(P=P, valid_i=i, valid_j=j)


def alignment_score(grid: LogProbGrid, alignment: Alignment) -> float:
    """Total log-likelihood of an alignment, summed frame by frame in j order.

    Both the DP and the brute-force oracle score candidates through here, so
    equal alignments produce bitwise-equal totals.
    """
    tokens = alignment.frame_tokens()
    if tokens.size != grid.valid_j:
        raise ValueError(
            f"alignment covers {tokens.size} frames, grid has {grid.valid_j}"
        )
    total = 0.0
    for j in range(grid.valid_j):
        total += grid.P[tokens[j], j]
    return total


def mas_search(
    grid: LogProbGrid, noise_scale: float = 0.0, rng: Rng | None = None
) -> tuple[Alignment, float]:
    """Forward DP with optional exploration noise, then backtrack to durations.

    Recurrence: Q[i, j] = max(Q[i-1, j-1], Q[i, j-1]) + P[i, j] + eps[i, j],
    where eps is fresh standard-normal noise scaled by std(P over the valid
    region) times ``noise_scale``. With noise_scale = 0 the result maximizes
    the exact total log-likelihood; ties prefer advancing the token.

    Returns (alignment, Q at the terminal cell).
    """
    vi, vj = grid.valid_i, grid.valid_j
    if vi > vj:
        raise InfeasibleAlignmentError(
            f"{vi} tokens cannot align onto {vj} frames monotonically"
        )
    P = grid.valid_region
    if noise_scale > 0.0:
        if rng is None:
            raise ValueError("noise_scale > 0 requires an rng")
        eps = rng.normal((vi, vj)) * P.std() * noise_scale
    else:
        eps = np.zeros((vi, vj))

    Q = np.full((vi, vj), -np.inf)
    Q[0, 0] = P[0, 0] + eps[0, 0]
    for j in range(1, vj):
        for i in range(min(j, vi - 1) + 1):
            stay = Q[i, j - 1]
            diag = Q[i - 1, j - 1] if i > 0 else -np.inf
            Q[i, j] = max(diag, stay) + P[i, j] + eps[i, j]

    durations = np.zeros(vi, dtype=np.int64)
    i = vi - 1
    for j in range(vj - 1, -1, -1):
        durations[i] += 1
        if j > 0 and i > 0 and Q[i - 1, j - 1] >= Q[i, j - 1]:
            i -= 1
    return Alignment(durations), float(Q[vi - 1, vj - 1])


def brute_force_align(grid: LogProbGrid) -> tuple[Alignment, float]:
    """Exhaustive argmax over all compositions of J frames into I positive runs.

    Guarded to valid_i <= 6, valid_j <= 10; candidate counts explode beyond
    that and the point is to stay obviously correct.
    """
    vi, vj = grid.valid_i, grid.valid_j
    if vi > 6 or vj > 10:
        raise GridSizeError(
            f"brute force limited to I<=6, J<=10; got I={vi}, J={vj}"
        )
    if vi > vj:
        raise InfeasibleAlignmentError(
            f"{vi} tokens cannot align onto {vj} frames monotonically"
        )
    best: Alignment | None = None
    best_score = -np.inf
    for cuts in itertools.combinations(range(1, vj), vi - 1):
        bounds = (0, *cuts, vj)
        durations = np.diff(bounds)
        cand = Alignment(durations)
        score = alignment_score(grid, cand)
        if score > best_score:
            best, best_score = cand, score
    assert best is not None
    return best, float(best_score)
