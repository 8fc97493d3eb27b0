"""Single-channel world: propagation, background traffic, sensing and reception.

Everything the agents observe is exogenous to their actions (background
traffic, noise, shadowing), so the world can be generated a window at a time
and the agents' decisions applied afterwards.  Each random quantity has its
own named sub-stream, which keeps traces identical no matter which component
asks for randomness first, and keeps them comparable across geometries.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np


class InvalidGeometryError(ValueError):
    pass


NODES = ("T", "R", "B", "J")


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator keyed by (seed, name)."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


@dataclass(frozen=True)
class ChannelModel:
    noise_power: float = 1.0
    pathloss_exponent: float = 2.0
    shadowing_sigma_db: float = 3.0
    # unobserved transmitters, added on top of B's own contribution
    external_interference: float = 0.0
    external_interference_sigma_db: float = 0.0
    sensing_jitter: float = 0.1

    def __post_init__(self):
        if self.noise_power <= 0:
            raise ValueError("noise_power must be positive")
        if self.shadowing_sigma_db < 0:
            raise ValueError("shadowing_sigma_db must be non-negative")
        if self.external_interference < 0 or self.sensing_jitter < 0:
            raise ValueError("interference and jitter must be non-negative")

    def shadow(self, z):
        """Log-normal multiplier (median 1) from standard normal draws."""
        return 10.0 ** (self.shadowing_sigma_db * np.asarray(z) / 10.0)


@dataclass(frozen=True)
class Geometry:
    pos_T: tuple[float, float] = (0.0, 0.0)
    pos_R: tuple[float, float] = (10.0, 0.0)
    pos_B: tuple[float, float] = (0.0, 10.0)
    pos_J: tuple[float, float] = (10.0, 10.0)

    def distance(self, a: str, b: str) -> float:
        pa, pb = getattr(self, f"pos_{a}"), getattr(self, f"pos_{b}")
        d = math.hypot(pa[0] - pb[0], pa[1] - pb[1])
        if d <= 0:
            raise InvalidGeometryError(f"nodes {a} and {b} coincide")
        return d

    def validate(self):
        for i, a in enumerate(NODES):
            for b in NODES[i + 1:]:
                self.distance(a, b)

    def with_jammer(self, pos):
        return replace(self, pos_J=(float(pos[0]), float(pos[1])))


def path_gain(d, shadow_draw=1.0, exponent: float = 2.0):
    """Gain of a link of length ``d`` including a shadowing multiplier."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise InvalidGeometryError(f"distance must be positive, got {d}")
    if np.any(np.asarray(shadow_draw) <= 0):
        raise ValueError("shadow_draw must be positive")
    g = np.asarray(shadow_draw, dtype=float) / d**exponent
    return g.item() if g.ndim == 0 else g


def sinr(tx_power, gain_tx, jam_power, gain_jam, busy, interference, noise_power=1.0):
    """SINR at the receiver; interference only counts while the channel is busy."""
    num = np.asarray(gain_tx) * tx_power
    den = noise_power + np.where(busy, interference, 0.0) + np.asarray(gain_jam) * jam_power
    out = num / den
    return out.item() if np.ndim(out) == 0 else out


def transmission_success(sinr_value, beta: float):
    if beta <= 0:
        raise ValueError("beta must be positive")
    return np.asarray(sinr_value) > beta if np.ndim(sinr_value) else bool(sinr_value > beta)


@dataclass
class BackgroundSourceState:
    queue_len: int = 0
    active: bool = False
    arrival_rate: float = 0.2
    activation_prob: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.arrival_rate <= 1.0:
            raise ValueError("arrival_rate must lie in [0, 1]")
        if not 0.0 < self.activation_prob <= 1.0:
            raise ValueError("activation_prob must lie in (0, 1]")
        if self.queue_len < 0:
            raise ValueError("queue_len must be non-negative")


def step_background(state: BackgroundSourceState, rng: np.random.Generator):
    """Advance B by one slot.  Returns ``(new_state, transmitting)``."""
    queue = state.queue_len + int(rng.random() < state.arrival_rate)
    active = state.active
    if not active and queue > 0:
        active = rng.random() < state.activation_prob
    transmitting = active and queue > 0
    if transmitting:
        queue -= 1
        if queue == 0:
            active = False
    return replace(state, queue_len=queue, active=active), transmitting


def rssi_sample(noise_power, jitter, z, signal):
    # noise floor never drops below N0, so readings stay positive
    return noise_power * (1.0 + np.abs(z) * jitter) + signal


def sense(observer: str, slot: dict, rng: np.random.Generator,
          channel: ChannelModel | None = None, geometry: Geometry | None = None,
          b_power: float = 1000.0):
    """One RSSI reading at ``observer`` ('T' or 'J').

    ``slot`` carries ``busy`` and optionally ``shadow_B<observer>``; the
    reading is noise plus B's attenuated power when B is transmitting.
    """
    if observer not in ("T", "J"):
        raise ValueError(f"observer must be T or J, got {observer!r}")
    channel = channel or ChannelModel()
    geometry = geometry or Geometry()
    z = rng.standard_normal()
    signal = 0.0
    if slot["busy"]:
        shadow = slot.get(f"shadow_B{observer}", 1.0)
        signal = b_power * path_gain(geometry.distance("B", observer), shadow,
                                     channel.pathloss_exponent)
    return float(rssi_sample(channel.noise_power, channel.sensing_jitter, z, signal))


@dataclass
class Trace:
    """Exogenous channel realisation for a block of consecutive slots."""

    busy: np.ndarray
    rssi_T: np.ndarray
    rssi_J: np.ndarray
    gain_TR: np.ndarray
    gain_JR: np.ndarray
    interference_R: np.ndarray

    def __len__(self):
        return len(self.busy)

    @classmethod
    def concat(cls, traces):
        return cls(*(np.concatenate([getattr(t, f) for t in traces]) for f in cls.__dataclass_fields__))

    def slice(self, start, stop=None):
        return Trace(*(getattr(self, f)[start:stop] for f in self.__dataclass_fields__))


@dataclass
class World:
    """Seeded generator of channel traces.

    The shadowing draws are stored in dB-normalised form and mapped through
    the geometry afterwards, so two worlds with the same seed but different
    node positions see exactly the same traffic, noise and fading draws.
    """

    seed: int = 0
    channel: ChannelModel = field(default_factory=ChannelModel)
    geometry: Geometry = field(default_factory=Geometry)
    arrival_rate: float = 0.2
    activation_prob: float = 0.2
    p_b: float = 1000.0

    def __post_init__(self):
        self.geometry.validate()
        self.background = BackgroundSourceState(arrival_rate=self.arrival_rate,
                                                activation_prob=self.activation_prob)
        self._streams = {}
        self.slot = 0

    def _rng(self, name):
        if name not in self._streams:
            self._streams[name] = substream(self.seed, name)
        return self._streams[name]

    def _gain(self, a, b, z):
        return path_gain(self.geometry.distance(a, b), self.channel.shadow(z),
                         self.channel.pathloss_exponent)

    def advance(self, n: int) -> Trace:
        busy = np.zeros(n, dtype=bool)
        traffic = self._rng("traffic")
        state = self.background
        for i in range(n):
            state, busy[i] = step_background(state, traffic)
        self.background = state

        z = {link: self._rng(f"shadow.{link}").standard_normal(n)
             for link in ("TR", "JR", "BR", "BT", "BJ")}
        ch = self.channel
        rssi = {}
        for obs in ("T", "J"):
            signal = np.where(busy, self.p_b * self._gain("B", obs, z["B" + obs]), 0.0)
            zn = self._rng(f"noise.{obs}").standard_normal(n)
            rssi[obs] = rssi_sample(ch.noise_power, ch.sensing_jitter, zn, signal)

        ext = np.full(n, ch.external_interference)
        ze = self._rng("interference.R").standard_normal(n)
        if ch.external_interference_sigma_db > 0:
            ext = ext * 10.0 ** (ch.external_interference_sigma_db * ze / 10.0)
        interference = self.p_b * self._gain("B", "R", z["BR"]) + ext

        self.slot += n
        return Trace(busy=busy, rssi_T=rssi["T"], rssi_J=rssi["J"],
                     gain_TR=self._gain("T", "R", z["TR"]),
                     gain_JR=self._gain("J", "R", z["JR"]),
                     interference_R=interference)
