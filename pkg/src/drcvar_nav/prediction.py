"""Neighbour trajectory predictions and online prediction-error samples."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from .risk import ErrorSampleSet

logger = logging.getLogger(__name__)

SHARED_PLAN = "shared_plan"
CONSTANT_VELOCITY = "constant_velocity"


@dataclass(frozen=True, eq=False)
class TrajectoryPrediction:
    """Positions ``z(k+l|k)`` for ``l = 1..T`` made at time ``origin = k``."""

    origin: int
    positions: np.ndarray
    source: str

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError(f"positions must have shape (T, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("prediction contains non-finite positions")
        if self.source not in (SHARED_PLAN, CONSTANT_VELOCITY):
            raise ValueError(f"unknown prediction source {self.source!r}")
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "origin", int(self.origin))

    @property
    def horizon(self) -> int:
        return self.positions.shape[0]

    def at(self, time: int) -> np.ndarray:
        """Predicted position for absolute time ``time`` (origin < time <= origin + T)."""
        lead = time - self.origin
        if not 1 <= lead <= self.horizon:
            raise IndexError(f"time {time} outside prediction window of origin {self.origin}")
        return self.positions[lead - 1]


def constant_velocity_predict(position, velocity, T: int, dt: float, origin: int = 0) -> TrajectoryPrediction:
    if T < 1:
        raise ValueError(f"horizon must be >= 1, got {T}")
    p = np.asarray(position, dtype=float).reshape(3)
    v = np.asarray(velocity, dtype=float).reshape(3)
    steps = np.arange(1, T + 1)[:, None] * dt
    return TrajectoryPrediction(origin, p[None, :] + steps * v[None, :], CONSTANT_VELOCITY)


def shared_plan_predict(plan: TrajectoryPrediction | None, k: int, fallback_position=None, fallback_velocity=None,
                        dt: float = 0.1, horizon: int | None = None) -> TrajectoryPrediction:
    """Re-index a plan received from round ``k - 1`` to cover ``k+1 .. k+T``.

    The plan covers ``k .. k+T-1``; its tail is extended by one step at the
    velocity implied by its last two points.  A plan older than ``k - 1`` (or
    no plan) falls back to a constant-velocity prediction from the supplied
    position and velocity.
    """
    if plan is None or plan.origin < k - 1:
        age = None if plan is None else k - plan.origin
        logger.info("stale or missing plan at k=%d (age %s); using constant velocity", k, age)
        if fallback_position is None or fallback_velocity is None:
            raise ValueError("fallback position and velocity needed for a stale plan")
        T = horizon if horizon is not None else (plan.horizon if plan is not None else None)
        if T is None:
            raise ValueError("cannot infer the horizon without a plan")
        return constant_velocity_predict(fallback_position, fallback_velocity, T, dt, origin=k)
    if plan.origin != k - 1:
        raise ValueError(f"plan origin {plan.origin} is in the future of round {k}")
    pos = plan.positions
    if pos.shape[0] >= 2:
        last = pos[-1] + (pos[-1] - pos[-2])
    else:
        last = pos[-1]
    return TrajectoryPrediction(k, np.vstack([pos[1:], last[None, :]]), SHARED_PLAN)


class PredictionHistory:
    """The most recent ``T`` predictions of one neighbour, by origin time."""

    def __init__(self, horizon: int):
        self.horizon = horizon
        self._items: deque = deque(maxlen=horizon)

    def add(self, pred: TrajectoryPrediction):
        if self._items and pred.origin <= self._items[-1].origin:
            raise ValueError("predictions must be added in increasing origin order")
        self._items.append(pred)

    def get(self, origin: int):
        for pred in self._items:
            if pred.origin == origin:
                return pred
        return None

    def latest(self):
        return self._items[-1] if self._items else None


class ErrorSampleBuffer:
    """Ring buffers of the ``N_s`` most recent prediction errors.

    One buffer per (neighbour, lead time q); in pooled mode a single buffer per
    neighbour collects the errors of every lead time.
    """

    def __init__(self, horizon: int, n_samples: int, pooled: bool = False):
        if horizon < 1 or n_samples < 1:
            raise ValueError("horizon and n_samples must be positive")
        self.horizon = horizon
        self.n_samples = n_samples
        self.pooled = pooled
        self._buf: dict = {}

    def _ring(self, neighbor, q):
        if not 1 <= q <= self.horizon:
            raise ValueError(f"lead time {q} outside 1..{self.horizon}")
        key = (neighbor, 0 if self.pooled else q)
        ring = self._buf.get(key)
        if ring is None:
            ring = self._buf[key] = deque(maxlen=self.n_samples)
        return ring

    def append(self, neighbor, q: int, sample):
        sample = np.asarray(sample, dtype=float).reshape(3)
        if not np.all(np.isfinite(sample)):
            raise ValueError("error sample must be finite")
        self._ring(neighbor, q).append(sample.copy())

    def count(self, neighbor, q: int) -> int:
        return len(self._ring(neighbor, q))

    def raw(self, neighbor, q: int) -> np.ndarray:
        ring = self._ring(neighbor, q)
        return np.array(ring).reshape(-1, 3)

    def samples(self, neighbor, q: int) -> ErrorSampleSet:
        """Exactly ``N_s`` samples for lead ``q``, zero-padded during warm-up."""
        got = self.raw(neighbor, q)
        if got.shape[0] < self.n_samples:
            got = np.vstack([got, np.zeros((self.n_samples - got.shape[0], 3))])
        return ErrorSampleSet(got)


def record_errors(buffer: ErrorSampleBuffer, neighbor, observed, k: int, history: PredictionHistory) -> int:
    """Append ``z(k|k) - z(k|k-q)`` for every lead ``q`` with a stored prediction.

    Returns the number of samples appended.
    """
    observed = np.asarray(observed, dtype=float).reshape(3)
    added = 0
    for q in range(1, buffer.horizon + 1):
        pred = history.get(k - q)
        if pred is None or pred.horizon < q:
            continue
        buffer.append(neighbor, q, observed - pred.positions[q - 1])
        added += 1
    return added
