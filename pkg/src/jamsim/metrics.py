"""Per-slot logging and the transmitter/jammer performance measures."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction

import numpy as np


@dataclass(frozen=True)
class SlotRecord:
    slot: int
    channel_busy: bool
    t_transmitted: bool
    t_score: float
    flipped: bool
    jam_decision: bool
    jam_power: float
    success: bool
    counterfactual_success: bool
    ack: bool


RECORD_FIELDS = [f.name for f in fields(SlotRecord)]
_BOOL = {"channel_busy", "t_transmitted", "flipped", "jam_decision", "success",
         "counterfactual_success", "ack"}
_FLOAT = {"t_score", "jam_power"}


class SlotLog:
    """Column store of :class:`SlotRecord` values."""

    def __init__(self, **columns):
        n = len(columns["slot"])
        for name in RECORD_FIELDS:
            col = np.asarray(columns[name])
            if len(col) != n:
                raise ValueError(f"column {name} has length {len(col)}, expected {n}")
            if name in _BOOL:
                col = col.astype(bool)
            elif name in _FLOAT:
                col = col.astype(float)
            else:
                col = col.astype(np.int64)
            setattr(self, name, col)
        if np.any(self.success & ~self.t_transmitted):
            raise ValueError("success without a transmission")
        if np.any(self.ack != self.success):
            raise ValueError("ack must equal success")
        if np.any(~self.jam_decision & (self.success != self.counterfactual_success)):
            raise ValueError("unjammed slot with counterfactual mismatch")

    def __len__(self):
        return len(self.slot)

    def __getitem__(self, idx):
        return SlotLog(**{f: getattr(self, f)[idx] for f in RECORD_FIELDS})

    @classmethod
    def from_records(cls, records):
        records = list(records)
        return cls(**{f: [getattr(r, f) for r in records] for f in RECORD_FIELDS})

    @classmethod
    def concat(cls, logs):
        return cls(**{f: np.concatenate([getattr(l, f) for l in logs]) for f in RECORD_FIELDS})

    def records(self):
        for i in range(len(self)):
            yield SlotRecord(**{f: _py(getattr(self, f)[i]) for f in RECORD_FIELDS})

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        cols = [getattr(self, f) for f in RECORD_FIELDS]
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str):
        rows = list(csv.DictReader(io.StringIO(text)))
        cols = {}
        for f in RECORD_FIELDS:
            vals = [r[f] for r in rows]
            if f in _BOOL:
                cols[f] = [v == "1" for v in vals]
            elif f in _FLOAT:
                cols[f] = [float(v) for v in vals]
            else:
                cols[f] = [int(v) for v in vals]
        return cls(**cols)


def _py(v):
    return v.item() if hasattr(v, "item") else v


def _fmt(v):
    v = _py(v)
    if isinstance(v, bool):
        return "1" if v else "0"
    # repr gives the shortest string that round-trips
    return repr(v) if isinstance(v, float) else str(v)


@dataclass
class Metrics:
    throughput: float
    success_ratio: float
    e_md: float
    e_fa: float
    n_slots: int
    n_transmissions: int
    n_successes: int
    mean_jam_power: float
    undefined: list = field(default_factory=list)

    @property
    def max_error(self):
        return max(self.e_md, self.e_fa)

    def to_json(self) -> str:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, float) and math.isnan(v):
                d[k] = None
        return json.dumps(d, indent=1) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        for k in ("throughput", "success_ratio", "e_md", "e_fa", "mean_jam_power"):
            if d[k] is None:
                d[k] = float("nan")
        return cls(**d)


def _ratio(num, den):
    return float(Fraction(int(num), int(den))) if den else float("nan")


def compute_metrics(log, subject: str = "transmitter") -> Metrics:
    """Throughput, success ratio and the subject's misdetection/false alarm.

    For the transmitter the positive class is an idle channel and the
    prediction is its classifier output before any defensive flip.  For the
    jammer the positive class is a slot whose transmission would have
    succeeded without jamming.  Empty classes give NaN and are listed in
    ``undefined``.
    """
    if not isinstance(log, SlotLog):
        log = SlotLog.from_records(log)
    n = len(log)
    if n == 0:
        raise ValueError("empty slot log")
    if subject == "transmitter":
        positive = ~log.channel_busy
        predicted = log.t_transmitted ^ log.flipped
    elif subject == "jammer":
        positive = log.counterfactual_success
        predicted = log.jam_decision
    else:
        raise ValueError(f"subject must be transmitter or jammer, got {subject!r}")
    n_pos, n_neg = int(positive.sum()), int((~positive).sum())
    n_tx, n_ok = int(log.t_transmitted.sum()), int(log.success.sum())
    m = Metrics(
        throughput=_ratio(n_ok, n),
        success_ratio=_ratio(n_ok, n_tx),
        e_md=_ratio((positive & ~predicted).sum(), n_pos),
        e_fa=_ratio((~positive & predicted).sum(), n_neg),
        n_slots=n, n_transmissions=n_tx, n_successes=n_ok,
        mean_jam_power=float(log.jam_power.mean()),
    )
    m.undefined = [k for k in ("success_ratio", "e_md", "e_fa") if math.isnan(getattr(m, k))]
    return m
