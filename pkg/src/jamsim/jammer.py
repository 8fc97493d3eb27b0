"""Jammer variants and score-driven jamming power control."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import ConfigError, Dataset, UntrainedError
from .transmitter import all_windows

KINDS = ("none", "deep-learning", "sensing", "random")


@dataclass(frozen=True)
class JammerConfig:
    kind: str = "deep-learning"
    tau: float | None = 3.4
    p_jam: float = 0.5
    fixed_power: float = 1000.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown jammer kind {self.kind!r}")
        if self.kind == "sensing" and self.tau is not None and self.tau <= 0:
            raise ConfigError("sensing threshold tau must be positive")
        if not 0.0 <= self.p_jam <= 1.0:
            raise ConfigError("p_jam must lie in [0, 1]")
        if self.fixed_power < 0:
            raise ConfigError("fixed_power must be non-negative")


def collect_jammer_data(rssi_history, ack, k: int = 10, start: int | None = None):
    """J's samples: sensing windows labelled by whether an ACK followed.

    ``ack[i]`` belongs to slot ``start + i`` of ``rssi_history`` (default:
    the last ``len(ack)`` slots).  Slots without a full window are skipped.
    """
    rssi_history = np.asarray(rssi_history, dtype=float)
    ack = np.asarray(ack, dtype=bool)
    if start is None:
        start = len(rssi_history) - len(ack)
    first = max(start, k - 1)
    windows = all_windows(rssi_history[first - k + 1:start + len(ack)], k)
    return Dataset(windows, ack[first - start:])


def decide_jam(classifier, window):
    """``(jam, score)``: jam when the no-ACK score is at most the threshold S."""
    if classifier.threshold is None:
        raise UntrainedError("jammer classifier has no threshold")
    s = float(classifier.scores(np.asarray(window, dtype=float)[None, :])[0])
    return s <= classifier.threshold, s


def sensing_jam_decide(rssi, tau: float):
    if np.any(np.asarray(rssi) < 0):
        raise ValueError("rssi must be non-negative")
    out = np.asarray(rssi) > tau
    return bool(out) if out.ndim == 0 else out


def random_jam_decide(p_jam: float, rng, size=None):
    if not 0.0 <= p_jam <= 1.0:
        raise ValueError("p_jam must lie in [0, 1]")
    out = rng.random(size) < p_jam
    return bool(out) if size is None else out


# -- power control ----------------------------------------------------------

MODES = ("min-only-below-c", "max-flat", "linear", "steeper-clamped-low",
         "steeper-clamped-high")


@dataclass(frozen=True)
class PowerPolicy:
    p_min: float
    p_max: float
    p_avg: float
    score_threshold: float
    mode: str
    c: float

    @property
    def c1(self):
        return (self.p_max - self.p_min) / self.score_threshold

    def power(self, s):
        return jam_power(self, s)


def _policy_power(mode, c, p_min, p_max, S, s):
    s = np.asarray(s, dtype=float)
    if mode == "min-only-below-c":
        p = np.where(s <= c, p_min, 0.0)
    elif mode == "max-flat":
        p = np.full(s.shape, p_max)
    elif mode == "linear":
        p = p_max - (p_max - p_min) / S * s
    elif mode == "steeper-clamped-low":
        p = np.maximum(p_max - c * s, p_min)
    elif mode == "steeper-clamped-high":
        p = np.minimum(p_min + c * (S - s), p_max)
    else:
        raise ConfigError(f"unknown power mode {mode!r}")
    return np.where(s <= S, p, 0.0)


def jam_power(policy: PowerPolicy, s):
    """Jamming power for score(s) ``s``; zero above the threshold S."""
    p = _policy_power(policy.mode, policy.c, policy.p_min, policy.p_max,
                      policy.score_threshold, s)
    return float(p) if p.ndim == 0 else p


def _bisect(f, lo, hi, target, increasing, rtol=1e-9):
    """Solve f(c) = target on [lo, hi]; returns the end that keeps f <= target."""
    while hi - lo > rtol * max(abs(hi), 1e-300):
        mid = 0.5 * (lo + hi)
        if (f(mid) <= target) == increasing:
            lo = mid
        else:
            hi = mid
    return lo if increasing else hi


def calibrate_power_policy(calibration_scores, p_min, p_max, p_avg, S) -> PowerPolicy:
    """Fit the piecewise-linear power curve to a budget on training scores.

    ``calibration_scores`` are J's scores over all its training slots; slots
    above ``S`` cost nothing.  Budgets are empirical means over these slots.
    """
    if p_min >= p_max:
        raise ConfigError("p_min must be below p_max")
    if p_avg < 0 or S <= 0:
        raise ConfigError("p_avg must be >= 0 and S > 0")
    s = np.sort(np.asarray(calibration_scores, dtype=float))
    if len(s) == 0:
        raise ConfigError("no calibration scores")
    n = len(s)
    mean = lambda mode, c: float(_policy_power(mode, c, p_min, p_max, S, s).sum() / n)
    c1 = (p_max - p_min) / S
    P1, P2, P3 = mean("max-flat", 0) * p_min / p_max, mean("max-flat", 0), mean("linear", c1)

    def make(mode, c):
        return PowerPolicy(float(p_min), float(p_max), float(p_avg), float(S), mode, float(c))

    if P1 >= p_avg:
        allowed = math.floor(p_avg * n / p_min + 1e-9)
        jammable = int(np.searchsorted(s, S, side="right"))
        if allowed >= jammable:
            return make("min-only-below-c", S)
        if allowed == 0:
            return make("min-only-below-c", -math.inf)
        # largest cutoff that admits at most `allowed` slots
        c = s[allowed - 1] if s[allowed] > s[allowed - 1] else \
            np.nextafter(s[allowed - 1], -math.inf)
        while np.searchsorted(s, c, side="right") > allowed:
            c = np.nextafter(c, -math.inf)
        return make("min-only-below-c", c)
    if P2 <= p_avg:
        return make("max-flat", 0.0)
    if math.isclose(P3, p_avg, rel_tol=1e-9):
        return make("linear", c1)
    if P3 > p_avg:
        f = lambda c: mean("steeper-clamped-low", c)
        hi = 2 * c1
        while f(hi) > p_avg:
            hi *= 2
        return make("steeper-clamped-low", _bisect(f, c1, hi, p_avg, increasing=False))
    f = lambda c: mean("steeper-clamped-high", c)
    hi = 2 * c1
    while f(hi) <= p_avg and hi < 1e300:
        hi *= 2
    return make("steeper-clamped-high", _bisect(f, c1, hi, p_avg, increasing=True))


def policy_mean_power(policy: PowerPolicy, scores):
    return float(np.mean(jam_power(policy, np.asarray(scores, dtype=float))))
