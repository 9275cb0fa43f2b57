"""Data generation and evaluation for the two benchmark tasks.

Adding problem: sequences of uniform values with a two-hot mask; the target
is the sum of the two marked values and the model reads it through a scalar
linear head. Navigation: random-walk trajectories in a square arena; targets
are softmax-of-Gaussian landmark scores at the final position, decoded back
to a position by grid search against the same forward model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rnn import cross_entropy, softmax


# ---------------------------------------------------------------------------
# Adding problem

@dataclass
class AddingBatch:
    values: np.ndarray   # (B, T) in [0, 1]
    mask: np.ndarray     # (B, T), exactly two ones per row
    target: np.ndarray   # (B,), the mask-weighted sums

    @property
    def inputs(self) -> np.ndarray:
        """Time-major model input: step t carries the pair (value_t, mask_t)."""
        return np.stack([self.values.T, self.mask.T], axis=-1)


def gen_adding_batch(T: int, batch: int, seed) -> AddingBatch:
    """Uniform values with two distinct marked positions per sequence."""
    if T < 2:
        raise ValueError("adding problem needs sequence length >= 2")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    rng = np.random.default_rng(seed)
    values = rng.uniform(0.0, 1.0, size=(batch, T))
    # two distinct positions, uniform without replacement
    first = rng.integers(0, T, size=batch)
    second = rng.integers(0, T - 1, size=batch)
    second += second >= first
    mask = np.zeros((batch, T))
    rows = np.arange(batch)
    mask[rows, first] = 1.0
    mask[rows, second] = 1.0
    target = np.sum(values * mask, axis=1)
    return AddingBatch(values, mask, target)


# ---------------------------------------------------------------------------
# Navigation arena

@dataclass
class NavArena:
    side_cm: float = 220.0
    landmarks: np.ndarray = None  # (n_landmarks, 2), inside [0, side]^2
    gaussian_sigma_cm: float = 12.0
    _grid_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.side_cm > 0:
            raise ValueError("arena side must be positive")
        if not self.gaussian_sigma_cm > 0:
            raise ValueError("gaussian width must be positive")
        lm = np.asarray(self.landmarks, dtype=np.float64)
        if lm.ndim != 2 or lm.shape[1] != 2 or lm.shape[0] < 2:
            raise ValueError("need at least two 2-D landmarks")
        if np.any(lm < 0) or np.any(lm > self.side_cm):
            raise ValueError("landmarks must lie inside the arena")
        self.landmarks = lm

    @property
    def n_landmarks(self) -> int:
        return self.landmarks.shape[0]


def make_arena(n_landmarks: int, seed, side_cm: float = 220.0,
               gaussian_sigma_cm: float = 12.0) -> NavArena:
    """Arena with uniformly placed landmarks, fixed for a whole run."""
    rng = np.random.default_rng(seed)
    landmarks = rng.uniform(0.0, side_cm, size=(n_landmarks, 2))
    return NavArena(side_cm, landmarks, gaussian_sigma_cm)


def _check_inside(arena: NavArena, pos: np.ndarray) -> None:
    if np.any(pos < 0) or np.any(pos > arena.side_cm):
        raise ValueError("position outside the arena")


def place_scores(arena: NavArena, position_cm) -> np.ndarray:
    """Normalized Gaussian landmark activations at one or more positions.

    The activation of landmark i is the Gaussian bump
    exp(-d_i^2 / (2 sigma^2)) / (sigma sqrt(2 pi)); the score vector is the
    softmax over the log activations, i.e. the activations normalized to a
    probability vector. (Softmax applied to the already-exponentiated bump
    values would collapse every position to a nearly uniform vector, since
    the bumps live in [0, 1/(sigma sqrt(2 pi))] ~ [0, 0.03]: no position
    signal survives and the navigation task becomes untrainable.)

    Accepts shape (2,) or (..., 2); returns (n_landmarks,) or
    (..., n_landmarks).
    """
    pos = np.asarray(position_cm, dtype=np.float64)
    _check_inside(arena, pos)
    single = pos.ndim == 1
    pts = pos[None, :] if single else pos.reshape(-1, 2)
    d2 = np.sum((pts[:, None, :] - arena.landmarks[None, :, :]) ** 2, axis=2)
    scores = softmax(-d2 / (2.0 * arena.gaussian_sigma_cm**2))
    if single:
        return scores[0]
    return scores.reshape(pos.shape[:-1] + (arena.n_landmarks,))


# ---------------------------------------------------------------------------
# Trajectories

@dataclass
class TrajectoryBatch:
    start_cm: np.ndarray    # (B, 2)
    velocities: np.ndarray  # (T, B, 2) cm per step
    end_cm: np.ndarray      # (B, 2) = start + velocities.sum(axis=0)


def gen_trajectories(arena: NavArena, T: int, batch: int, seed,
                     max_speed_cm: float = 5.0,
                     turn_sigma_rad: float = 0.5) -> TrajectoryBatch:
    """Random-walk paths: uniform speed in [0, max_speed], heading with
    Gaussian turn noise, reflective walls."""
    if T < 1:
        raise ValueError("trajectory length must be >= 1")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    side = arena.side_cm
    if not max_speed_cm < side:
        raise ValueError("step size must be smaller than the arena")
    rng = np.random.default_rng(seed)
    start = rng.uniform(0.0, side, size=(batch, 2))
    heading = rng.uniform(0.0, 2.0 * np.pi, size=batch)
    speeds = rng.uniform(0.0, max_speed_cm, size=(T, batch))
    turns = rng.normal(0.0, turn_sigma_rad, size=(T, batch))
    velocities = np.empty((T, batch, 2))
    pos = start.copy()
    for t in range(T):
        heading = heading + turns[t]
        step = speeds[t][:, None] * np.stack(
            [np.cos(heading), np.sin(heading)], axis=1)
        proposed = pos + step
        # One reflection pass suffices: steps are far shorter than the side.
        proposed = np.where(proposed < 0.0, -proposed, proposed)
        proposed = np.where(proposed > side, 2.0 * side - proposed, proposed)
        velocities[t] = proposed - pos
        pos = proposed
    end = start + velocities.sum(axis=0)
    return TrajectoryBatch(start, velocities, end)


# ---------------------------------------------------------------------------
# Decoding

def _grid_log_scores(arena: NavArena, resolution_cm: float):
    key = float(resolution_cm)
    if key not in arena._grid_cache:
        n_side = int(np.floor(arena.side_cm / resolution_cm + 1e-9))
        if n_side < 1:
            raise ValueError("grid resolution coarser than the arena")
        axis = np.arange(n_side) * resolution_cm
        gx, gy = np.meshgrid(axis, axis, indexing="ij")
        grid = np.stack([gx.ravel(), gy.ravel()], axis=1)  # lex (ix, iy) order
        log_p = np.log(place_scores(arena, grid))
        arena._grid_cache[key] = (grid, log_p)
    return arena._grid_cache[key]


def decode_position(scores, arena: NavArena,
                    grid_resolution_cm: float = 2.2) -> np.ndarray:
    """Grid point whose forward-model scores best explain the given scores.

    Minimizes -sum_i scores_i * log place_scores(grid point)_i over the grid;
    ties go to the lexicographically smallest grid index. Accepts a single
    score vector or a (B, n_landmarks) batch.
    """
    s = np.asarray(scores, dtype=np.float64)
    single = s.ndim == 1
    if single:
        s = s[None, :]
    if s.shape[1] != arena.n_landmarks:
        raise ValueError("scores length must match the landmark count")
    grid, log_p = _grid_log_scores(arena, grid_resolution_cm)
    ce = -(s @ log_p.T)                 # (B, n_grid)
    best = np.argmin(ce, axis=1)        # first minimum wins ties
    out = grid[best]
    return out[0] if single else out


def nav_loss(output, arena: NavArena, end_cm) -> float:
    """Cross entropy between the end-position scores and softmax(output)."""
    out = np.asarray(output, dtype=np.float64)
    if out.shape != (arena.n_landmarks,):
        raise ValueError("output length must match the landmark count")
    target = place_scores(arena, end_cm)
    return cross_entropy(target, softmax(out))
