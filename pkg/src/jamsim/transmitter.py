"""Cognitive transmitter: sensing windows, transmit decisions and the flip defense."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .nn import Dataset, UntrainedError


class WarmupError(ValueError):
    """Not enough sensing history to build a window yet."""


@dataclass(frozen=True)
class DefenseConfig:
    p_d: float = 0.0
    window: int = 500

    def __post_init__(self):
        if not 0.0 <= self.p_d <= 1.0:
            raise ValueError(f"p_d must lie in [0, 1], got {self.p_d}")
        if self.window < 1:
            raise ValueError("defense window must be >= 1 slot")


def make_features(history, t: int, k: int = 10) -> np.ndarray:
    """The ``k`` readings ending at slot ``t``, oldest first."""
    history = np.asarray(history, dtype=float)
    if t < k - 1 or t >= len(history):
        raise WarmupError(f"slot {t} needs {k} readings of history")
    return history[t - k + 1:t + 1].copy()


def all_windows(history, k: int = 10) -> np.ndarray:
    """Row ``i`` is the window ending at slot ``i + k - 1``."""
    history = np.asarray(history, dtype=float)
    if len(history) < k:
        return np.empty((0, k))
    return sliding_window_view(history, k)


def collect_training_data(world, n_slots: int, k: int = 10):
    """Run the world for ``n_slots`` and label each window idle/busy.

    Returns ``(train, test, trace)``; the first ``k - 1`` slots are warm-up.
    """
    if n_slots < 2 * k:
        raise ValueError(f"need at least {2 * k} slots, got {n_slots}")
    trace = world.advance(n_slots)
    data = Dataset(all_windows(trace.rssi_T, k), ~trace.busy[k - 1:])
    train, test = data.split_half()
    return train, test, trace


def decide_transmit(classifier, window):
    """``(transmit, score)``: transmit when the busy score is at most the threshold."""
    if classifier.threshold is None:
        raise UntrainedError("transmitter classifier has no threshold")
    score = float(classifier.scores(np.asarray(window, dtype=float)[None, :])[0])
    return score <= classifier.threshold, score


def confidence(scores, threshold):
    """Distance from the threshold, scaled so both tails reach 1 at 0 and 1."""
    s = np.asarray(scores, dtype=float)
    lo = (threshold - s) / threshold if threshold > 0 else np.zeros_like(s)
    hi = (s - threshold) / (1.0 - threshold) if threshold < 1 else np.zeros_like(s)
    return np.where(s <= threshold, lo, hi)


def n_flips(n: int, p_d: float) -> int:
    # float noise (0.3 * 500 = 150.00000000000003) must not add a flip
    return min(n, math.ceil(round(p_d * n, 9)))


def select_flip_slots(scores, threshold: float, p_d: float) -> np.ndarray:
    """Indices of the ``ceil(p_d * N)`` most confident slots, earliest first on ties."""
    if not 0.0 <= p_d <= 1.0:
        raise ValueError(f"p_d must lie in [0, 1], got {p_d}")
    scores = np.asarray(scores, dtype=float)
    m = n_flips(len(scores), p_d)
    if m == 0:
        return np.empty(0, dtype=int)
    order = np.argsort(-confidence(scores, threshold), kind="stable")
    return np.sort(order[:m])


def apply_defense(scores, threshold, defense: DefenseConfig, offset: int = 0):
    """Transmit decisions and flip mask for a run of consecutive slots.

    Windows are aligned to absolute slot numbers (``offset`` is the slot
    index of ``scores[0]``) so that splitting a run does not move them.
    """
    scores = np.asarray(scores, dtype=float)
    decisions = scores <= threshold
    flipped = np.zeros(len(scores), dtype=bool)
    if defense.p_d > 0:
        w = defense.window
        start = 0
        while start < len(scores):
            stop = min(len(scores), start + w - (offset + start) % w)
            idx = select_flip_slots(scores[start:stop], threshold, defense.p_d)
            flipped[start + idx] = True
            start = stop
    return decisions ^ flipped, flipped


@dataclass
class DefenseLevelSearch:
    """Throughput-driven search for the defense level.

    Coarse scan of 0, 10, ..., 100 %, then probes on both sides of the
    incumbent with steps of 5 % and 2.5 %.  Stops when neither probe beats
    the incumbent (or after the finest step) and keeps the incumbent.
    """

    coarse: tuple = tuple(i / 10 for i in range(11))
    steps: tuple = (0.05, 0.025)
    evaluated: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    done: bool = False
    _queue: list = field(default_factory=list)
    _level: int = -1
    _incumbent: float | None = None
    _best: tuple | None = None

    def __post_init__(self):
        self._queue = list(self.coarse)

    @property
    def incumbent(self):
        return self._best[0] if self._best else None

    def propose(self) -> float:
        if self.done:
            return self.incumbent
        if not self._queue:
            self._refine()
            if self.done:
                return self.incumbent
        return self._queue[0]

    def observe(self, p_d: float, throughput: float):
        self.history.append((p_d, throughput))
        if self.done:
            return
        if self._queue and math.isclose(self._queue[0], p_d):
            self._queue.pop(0)
        self.evaluated[round(p_d, 6)] = throughput
        # only a strict gain moves the incumbent
        if self._best is None or throughput > self._best[1]:
            self._best = (round(p_d, 6), throughput)

    def _refine(self):
        inc = self.incumbent
        if self._level >= 0 and inc == self._incumbent:
            self.done = True
            return
        self._level += 1
        if self._level >= len(self.steps):
            self.done = True
            return
        self._incumbent = inc
        step = self.steps[self._level]
        probes = [round(inc + d, 6) for d in (-step, step)]
        self._queue = [p for p in probes if 0.0 <= p <= 1.0 and p not in self.evaluated]
        if not self._queue:
            self._refine()


def adapt_defense_level(throughput_history, current_p_d, state: DefenseLevelSearch | None = None):
    """Feed the latest throughput (measured at ``current_p_d``) and get the next level.

    ``throughput_history`` is the list of throughputs so far; only the last
    entry is new.  Returns ``(next_p_d, state)``.
    """
    state = state or DefenseLevelSearch()
    if throughput_history:
        state.observe(current_p_d, throughput_history[-1])
    return state.propose(), state
