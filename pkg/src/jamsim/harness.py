"""Scenario orchestration, parameter sweeps and result export."""

from __future__ import annotations

import configparser
import copy
import csv
import dataclasses
import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import gan as gan_mod
from .env import ChannelModel, Geometry, World, substream
from .jammer import (JammerConfig, PowerPolicy, calibrate_power_policy, collect_jammer_data,
                     jam_power)
from .metrics import Metrics, SlotLog, compute_metrics
from .nn import (ConfigError, Dataset, DegenerateDatasetError, HyperParams, TrainConfig,
                 classification_errors, default_grid, fit_classifier,
                 tune_hyperparameters)
from .transmitter import DefenseConfig, DefenseLevelSearch, all_windows, apply_defense

AXES = ("jammer-type", "tau", "p_avg", "p_d", "mobility-circle-R", "mobility-circle-B",
        "gan-counts")

# classifier used for GAN comparisons, where a validation split is unavailable
GAN_CLASSIFIER = HyperParams(2, 50, "tanh")


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    geometry: Geometry = field(default_factory=Geometry)
    channel: ChannelModel = field(default_factory=ChannelModel)
    p_t: float = 1000.0
    p_b: float = 1000.0
    beta: float = 3.0
    arrival_rate: float = 0.2
    activation_prob: float = 0.2
    k_t: int = 10
    k_j: int = 10
    train_slots: int = 1000
    eval_slots: int = 500
    jammer: JammerConfig = field(default_factory=JammerConfig)
    p_min: float = 500.0
    p_max: float = 1000.0
    p_avg: float | None = None      # None: flat jammer.fixed_power on every jam
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    gan_real: int | None = None
    gan_synth: int = 0
    gan: gan_mod.CGanConfig = field(default_factory=gan_mod.CGanConfig)
    transmitter_arch: HyperParams | None = None   # None: full grid search
    jammer_arch: HyperParams | None = None

    def validate(self):
        if self.eval_slots < 1 or self.train_slots < 2 * max(self.k_t, self.k_j):
            raise ConfigError("eval_slots must be >= 1 and train_slots >= 2K")
        if self.k_t < 1 or self.k_j < 1:
            raise ConfigError("K must be >= 1")
        if self.beta <= 0 or self.p_t <= 0 or self.p_b < 0:
            raise ConfigError("beta and P_T must be positive, P_B non-negative")
        if self.p_avg is not None and self.p_avg < 0:
            raise ConfigError("p_avg must be non-negative")
        if self.p_avg is not None and self.p_min >= self.p_max:
            raise ConfigError("p_min must be below p_max")
        if self.gan_real is not None and (self.gan_real < 2 or self.gan_synth < 0):
            raise ConfigError("GAN needs at least 2 real samples and gan_synth >= 0")
        self.geometry.validate()
        return self


@dataclass
class ScenarioResult:
    transmitter: Metrics
    jammer: Metrics
    log: SlotLog
    transmitter_arch: HyperParams | None = None
    jammer_arch: HyperParams | None = None
    jammer_holdout: tuple | None = None      # (e_md, e_fa) of C_J on its test split
    policy: PowerPolicy | None = None
    calibration_scores: np.ndarray | None = None
    gan_model: object = None
    jammer_classifier: object = None

    def __iter__(self):
        return iter((self.transmitter, self.jammer, self.log))


# -- classifier fitting with a content-addressed cache ----------------------

_FIT_CACHE: dict = {}


def clear_cache():
    _FIT_CACHE.clear()


def _digest(*parts):
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, np.ndarray):
            h.update(str(p.dtype).encode() + str(p.shape).encode())
            h.update(np.ascontiguousarray(p).tobytes())
        else:
            h.update(repr(p).encode())
        h.update(b"|")
    return h.hexdigest()


def _fit(role, seed, train, val, arch, threshold_on_train=False):
    """Tuned (or fixed-architecture) classifier; identical inputs hit the cache."""
    key = _digest(role, seed, train.X, train.positive, val.X, val.positive, arch,
                  threshold_on_train)
    if key not in _FIT_CACHE:
        rng = substream(seed, f"fit.{role}")
        grid = default_grid()
        if arch is None:
            net, hp, _ = tune_hyperparameters(train, val, grid, rng)
        else:
            hp = arch
            if arch in grid:
                # same generator the grid search hands this candidate, so a
                # reused architecture reproduces the tuned network exactly
                rng = rng.spawn(len(grid))[grid.index(arch)]
            net = fit_classifier(arch, train, TrainConfig(), rng,
                                 train if threshold_on_train else val)
        _FIT_CACHE[key] = (net, hp)
    net, hp = _FIT_CACHE[key]
    return copy.deepcopy(net), hp


# -- scenario ---------------------------------------------------------------

def _outcomes(cfg, trace, transmit, jam_p):
    noise = cfg.channel.noise_power
    interf = np.where(trace.busy, trace.interference_R, 0.0)
    signal = cfg.p_t * trace.gain_TR
    ok = signal / (noise + interf + jam_p * trace.gain_JR) > cfg.beta
    clean = signal / (noise + interf) > cfg.beta
    return transmit & ok, transmit & clean


def _gan_real_subset(train: Dataset, n: int) -> Dataset:
    """First ``n`` samples in time order, patched to contain both labels."""
    idx = list(range(min(n, len(train))))
    pos = train.positive
    for label in (True, False):
        if not np.any(pos[idx] == label):
            extra = np.flatnonzero(pos == label)
            if len(extra) == 0:
                raise DegenerateDatasetError("jammer data has a single label")
            idx[-1 if label else -2] = int(extra[0])
    return train.subset(np.array(sorted(set(idx))))


def run_scenario(cfg: ScenarioConfig, jammer_classifier=None) -> ScenarioResult:
    """Train T, let J learn from T's behaviour, then evaluate both together.

    A ``jammer_classifier`` passed in replaces J's own training.
    """
    cfg.validate()
    world = World(seed=cfg.seed, channel=cfg.channel, geometry=cfg.geometry,
                  arrival_rate=cfg.arrival_rate, activation_prob=cfg.activation_prob,
                  p_b=cfg.p_b)
    kt, kj, n1 = cfg.k_t, cfg.k_j, cfg.train_slots

    # (i) T senses and learns idle/busy
    tr1 = world.advance(n1)
    data_t = Dataset(all_windows(tr1.rssi_T, kt), ~tr1.busy[kt - 1:])
    t_train, t_val = data_t.split_half()
    c_t, t_hp = _fit("transmitter", cfg.seed, t_train, t_val, cfg.transmitter_arch)

    # (ii) T operates (with its defense) while J listens
    tr2 = world.advance(n1)
    rssi_t = np.concatenate([tr1.rssi_T, tr2.rssi_T])
    rssi_j = np.concatenate([tr1.rssi_J, tr2.rssi_J])
    scores2 = c_t.scores(all_windows(rssi_t, kt)[n1 - kt + 1:])
    tx2, _ = apply_defense(scores2, c_t.threshold, cfg.defense, offset=n1)
    ack2, _ = _outcomes(cfg, tr2, tx2, np.zeros(n1))

    jcfg = cfg.jammer
    c_j = j_hp = policy = holdout = calib = gan_model = None
    if jcfg.kind == "deep-learning" and jammer_classifier is not None:
        c_j = jammer_classifier
    elif jcfg.kind == "deep-learning":
        data_j = collect_jammer_data(rssi_j, ack2, kj, start=n1)
        j_train, j_test = data_j.split_half()
        if cfg.gan_real is not None:
            real = _gan_real_subset(j_train, cfg.gan_real)
            train_set = real
            if cfg.gan_synth > 0:
                grng = substream(cfg.seed, "gan")
                gan_model = gan_mod.train_cgan(real, cfg.gan, grng)
                synth = gan_mod.synthesize_like(gan_model, real, cfg.gan_synth, grng)
                train_set = gan_mod.augment_dataset(real, synth)
            c_j, j_hp = _fit("jammer", cfg.seed, train_set, train_set,
                             cfg.jammer_arch or GAN_CLASSIFIER, threshold_on_train=True)
        else:
            c_j, j_hp = _fit("jammer", cfg.seed, j_train, j_test, cfg.jammer_arch)
        holdout = classification_errors(c_j.scores(j_test.X), j_test.positive, c_j.threshold)
        if cfg.p_avg is not None:
            calib = c_j.scores(j_train.X)
            policy = calibrate_power_policy(calib, cfg.p_min, cfg.p_max, cfg.p_avg,
                                            c_j.threshold)

    # (iii) evaluation with both agents active
    n3 = cfg.eval_slots
    tr3 = world.advance(n3)
    rssi_t = np.concatenate([rssi_t[-(kt - 1):] if kt > 1 else rssi_t[:0], tr3.rssi_T])
    rssi_j = np.concatenate([rssi_j[-(kj - 1):] if kj > 1 else rssi_j[:0], tr3.rssi_J])
    t_scores = c_t.scores(all_windows(rssi_t, kt))
    transmit, flipped = apply_defense(t_scores, c_t.threshold, cfg.defense, offset=2 * n1)

    if jcfg.kind == "none":
        jam_p = np.zeros(n3)
    elif jcfg.kind == "random":
        rng = substream(cfg.seed, "jammer.random")
        jam_p = np.where(rng.random(n3) < jcfg.p_jam, jcfg.fixed_power, 0.0)
    elif jcfg.kind == "sensing":
        jam_p = np.where(tr3.rssi_J > jcfg.tau, jcfg.fixed_power, 0.0)
    else:
        s = c_j.scores(all_windows(rssi_j, kj))
        if policy is None:
            jam_p = np.where(s <= c_j.threshold, jcfg.fixed_power, 0.0)
        else:
            jam_p = jam_power(policy, s)
    success, clean = _outcomes(cfg, tr3, transmit, jam_p)
    jammed = jam_p > 0
    log = SlotLog(slot=np.arange(2 * n1, 2 * n1 + n3), channel_busy=tr3.busy,
                  t_transmitted=transmit, t_score=t_scores, flipped=flipped,
                  jam_decision=jammed, jam_power=jam_p, success=success,
                  counterfactual_success=clean, ack=success)
    return ScenarioResult(compute_metrics(log, "transmitter"), compute_metrics(log, "jammer"),
                          log, t_hp, j_hp, holdout, policy, calib, gan_model, c_j)


# -- sweeps -----------------------------------------------------------------

def circle_position(center, radius, other, distance):
    """Point at ``radius`` from ``center`` and ``distance`` from ``other``.

    Of the two intersections the one with x + y >= 10 is returned (the far
    side from T for the default layout).
    """
    c, o = np.asarray(center, float), np.asarray(other, float)
    d = float(np.linalg.norm(o - c))
    if not abs(radius - distance) - 1e-9 <= d <= radius + distance + 1e-9:
        raise ConfigError(f"no point at {radius} from {tuple(c)} and {distance} from {tuple(o)}")
    a = (radius ** 2 - distance ** 2 + d ** 2) / (2 * d)
    h = math.sqrt(max(radius ** 2 - a ** 2, 0.0))
    base = c + a * (o - c) / d
    perp = np.array([-(o - c)[1], (o - c)[0]]) / d
    cands = [base + h * perp, base - h * perp]
    pick = max(cands, key=lambda p: (p[0] + p[1], p[0]))
    return (round(float(pick[0]), 12) + 0.0, round(float(pick[1]), 12) + 0.0)


MOBILITY_RANGE = (10 * (math.sqrt(2) - 1), 10 * (math.sqrt(2) + 1))
JAMMER_ALIASES = {"dl": "deep-learning", "deep-learning": "deep-learning", "none": "none",
                  "sensing": "sensing", "random": "random"}


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    replications: int = 5
    reuse_jammer_arch: bool = False

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"unknown sweep axis {self.axis!r}")
        if len(self.values) == 0:
            raise ConfigError("sweep needs at least one value")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.axis.startswith("mobility"):
            lo, hi = MOBILITY_RANGE
            for v in self.values:
                if not lo - 1e-6 <= float(v) <= hi + 1e-6:
                    raise ConfigError(f"mobility distance {v} outside [{lo:.4f}, {hi:.4f}]")


def apply_axis(base: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    g = base.geometry
    if axis == "jammer-type":
        return replace(base, jammer=replace(base.jammer, kind=JAMMER_ALIASES[value]))
    if axis == "tau":
        return replace(base, jammer=replace(base.jammer, kind="sensing", tau=float(value)))
    if axis == "p_avg":
        return replace(base, p_avg=float(value))
    if axis == "p_d":
        return replace(base, defense=replace(base.defense, p_d=float(value)))
    if axis == "mobility-circle-R":
        return replace(base, geometry=g.with_jammer(circle_position(g.pos_R, 10.0, g.pos_B, float(value))))
    if axis == "mobility-circle-B":
        return replace(base, geometry=g.with_jammer(circle_position(g.pos_B, 10.0, g.pos_R, float(value))))
    if axis == "gan-counts":
        n_real, n_synth = value
        return replace(base, gan_real=int(n_real), gan_synth=int(n_synth))
    raise ConfigError(f"unknown sweep axis {axis!r}")


TABLE_FIELDS = ["axis", "value", "seed", "t_throughput", "t_success_ratio", "t_e_md", "t_e_fa",
                "j_e_md", "j_e_fa", "mean_jam_power", "n_transmissions", "n_successes",
                "j_holdout_e_md", "j_holdout_e_fa"]


def _row(axis, value, seed, res: ScenarioResult):
    t, j = res.transmitter, res.jammer
    hold = res.jammer_holdout or (float("nan"), float("nan"))
    return {"axis": axis, "value": _value_str(value), "seed": seed,
            "t_throughput": t.throughput, "t_success_ratio": t.success_ratio,
            "t_e_md": t.e_md, "t_e_fa": t.e_fa, "j_e_md": j.e_md, "j_e_fa": j.e_fa,
            "mean_jam_power": t.mean_jam_power, "n_transmissions": t.n_transmissions,
            "n_successes": t.n_successes, "j_holdout_e_md": float(hold[0]),
            "j_holdout_e_fa": float(hold[1])}


def _value_str(v):
    if isinstance(v, (tuple, list)):
        return "+".join(str(x) for x in v)
    return str(v)


def base_jammer_arch(base: ScenarioConfig, seed: int) -> HyperParams:
    """Architecture picked by a full grid search at the seed's base point."""
    return run_scenario(replace(base, seed=seed, jammer_arch=None,
                                jammer=replace(base.jammer, kind="deep-learning"),
                                defense=DefenseConfig(0.0, base.defense.window),
                                gan_real=None)).jammer_arch


def run_sweep(base: ScenarioConfig, sweep: SweepSpec, seeds=None):
    """One scenario per (value, seed); returns per-seed rows then mean rows."""
    seeds = list(seeds) if seeds is not None else [base.seed + i for i in range(sweep.replications)]
    rows, by_value = [], {}
    for seed in seeds:
        cfg_seed = replace(base, seed=seed)
        if sweep.reuse_jammer_arch and base.jammer_arch is None:
            cfg_seed = replace(cfg_seed, jammer_arch=base_jammer_arch(base, seed))
        for v in sweep.values:
            res = run_scenario(apply_axis(cfg_seed, sweep.axis, v))
            row = _row(sweep.axis, v, seed, res)
            rows.append(row)
            by_value.setdefault(_value_str(v), []).append(row)
    rows.sort(key=lambda r: ([_value_str(v) for v in sweep.values].index(r["value"]),
                             seeds.index(r["seed"])))
    for v in sweep.values:
        group = by_value[_value_str(v)]
        mean = {"axis": sweep.axis, "value": _value_str(v), "seed": "mean"}
        for f in TABLE_FIELDS[3:]:
            vals = [r[f] for r in group]
            mean[f] = float(np.mean(vals))
        rows.append(mean)
    return rows


def mean_rows(rows):
    return [r for r in rows if r["seed"] == "mean"]


# -- adaptive defense -------------------------------------------------------

@dataclass
class AdaptiveStep:
    iteration: int
    p_d: float
    throughput: float
    jammer_max_error: float


def adapt_defense(base: ScenarioConfig, retrain_jammer: str = "per-iteration",
                  max_iterations: int = 15):
    """Search the defense level by measuring T's throughput each iteration.

    Every iteration replays the same seeded channel so that throughput
    differences come from the defense level alone.  With ``retrain_jammer
    == "never"`` J keeps the classifier it learned with no defense.
    """
    if retrain_jammer not in ("per-iteration", "never"):
        raise ConfigError("retrain_jammer must be per-iteration or never")
    cfg = base
    if base.jammer.kind == "deep-learning" and base.jammer_arch is None:
        cfg = replace(base, jammer_arch=base_jammer_arch(base, base.seed))
    frozen = None
    if retrain_jammer == "never" and cfg.jammer.kind == "deep-learning":
        frozen = run_scenario(replace(cfg, defense=replace(cfg.defense, p_d=0.0))).jammer_classifier
    search = DefenseLevelSearch()
    steps = []
    for it in range(max_iterations):
        if search.done:
            break
        p_d = search.propose()
        if search.done:
            break
        step_cfg = replace(cfg, defense=replace(cfg.defense, p_d=p_d))
        res = run_scenario(step_cfg, jammer_classifier=frozen)
        search.observe(p_d, res.transmitter.throughput)
        steps.append(AdaptiveStep(it + 1, p_d, res.transmitter.throughput,
                                  res.jammer.max_error))
    return search.incumbent, steps


# -- export -----------------------------------------------------------------

def _jsonable(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    if isinstance(v, np.generic):
        return _jsonable(v.item())
    return v


def _cell(v):
    v = _jsonable(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    return repr(v) if isinstance(v, float) else str(v)


def export_results(data, path, fmt: str | None = None):
    """Write a results table (list of dicts), Metrics or SlotLog as csv/json."""
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower() or "csv"
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown export format {fmt!r}")
    if isinstance(data, SlotLog):
        text = data.to_csv() if fmt == "csv" else json.dumps(
            [{k: _jsonable(v) for k, v in dataclasses.asdict(r).items()} for r in data.records()],
            indent=1) + "\n"
    elif isinstance(data, Metrics):
        text = data.to_json() if fmt == "json" else _table_csv([dataclasses.asdict(data)])
    else:
        rows = list(data)
        text = _table_csv(rows) if fmt == "csv" else json.dumps(
            [{k: _jsonable(v) for k, v in r.items()} for r in rows], indent=1) + "\n"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as e:
        raise OSError(f"cannot write results to {path}: {e.strerror or e}") from e
    return path


def _table_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    fields = list(rows[0].keys()) if rows else TABLE_FIELDS
    w.writerow(fields)
    for r in rows:
        w.writerow([_cell(r[f]) if not isinstance(r[f], list) else ";".join(r[f]) for f in fields])
    return buf.getvalue()


def load_table(path):
    """Rows of an exported CSV/JSON table with numeric cells parsed back."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        rows = json.loads(text)
        return [{k: (float("nan") if v is None else v) for k, v in r.items()} for r in rows]
    out = []
    for r in csv.DictReader(io.StringIO(text)):
        out.append({k: _parse(v) for k, v in r.items()})
    return out


def _parse(v):
    if v == "":
        return float("nan")
    try:
        return int(v)
    except ValueError:
        try:
            return float(v)
        except ValueError:
            return v


# -- configuration files ----------------------------------------------------

def _pair(text):
    x, y = (float(p) for p in text.split(","))
    return (x, y)


def load_config(path) -> ScenarioConfig:
    """Read a ``key = value`` file with [scenario], [channel], [geometry],
    [jammer], [defense] and [gan] sections."""
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except configparser.Error as e:
        raise ConfigError(f"malformed config {path}: {e}") from e
    known = {"scenario", "channel", "geometry", "jammer", "defense", "gan"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    try:
        return _config_from_parser(cp)
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(f"bad value in {path}: {e}") from e


def _typed(section, spec):
    out = {}
    for key, raw in section.items():
        if key not in spec:
            raise ConfigError(f"unknown key {key!r} in [{section.name}]")
        conv = spec[key]
        out[key] = None if raw.strip().lower() == "none" else conv(raw)
    return out


def _config_from_parser(cp):
    def sec(name):
        return cp[name] if cp.has_section(name) else {}

    scen = _typed(cp["scenario"], {
        "seed": int, "p_t": float, "p_b": float, "beta": float, "arrival_rate": float,
        "activation_prob": float, "k_t": int, "k_j": int, "k": int, "train_slots": int,
        "eval_slots": int}) if cp.has_section("scenario") else {}
    if "k" in scen:
        k = scen.pop("k")
        scen.setdefault("k_t", k)
        scen.setdefault("k_j", k)
    ch = _typed(cp["channel"], {f.name: float for f in dataclasses.fields(ChannelModel)}) \
        if cp.has_section("channel") else {}
    geo = _typed(cp["geometry"], {n: _pair for n in ("t", "r", "b", "j")}) \
        if cp.has_section("geometry") else {}
    jam = _typed(cp["jammer"], {"kind": str, "tau": float, "p_jam": float,
                                "fixed_power": float, "p_min": float, "p_max": float,
                                "p_avg": float}) if cp.has_section("jammer") else {}
    dfn = _typed(cp["defense"], {"p_d": float, "window": int}) if cp.has_section("defense") else {}
    gn = _typed(cp["gan"], {"real": int, "synth": int, "epochs": int}) if cp.has_section("gan") else {}

    geom = Geometry(**{f"pos_{k.upper()}": v for k, v in geo.items()})
    kw = dict(scen)
    for key in ("p_min", "p_max", "p_avg"):
        if key in jam:
            kw[key] = jam.pop(key)
    if "kind" in jam:
        jam["kind"] = JAMMER_ALIASES.get(jam["kind"], jam["kind"])
    gan_cfg = gan_mod.CGanConfig(epochs=gn.pop("epochs")) if "epochs" in gn else gan_mod.CGanConfig()
    return ScenarioConfig(geometry=geom, channel=ChannelModel(**ch), jammer=JammerConfig(**jam),
                          defense=DefenseConfig(**dfn), gan_real=gn.get("real"),
                          gan_synth=gn.get("synth") or 0, gan=gan_cfg, **kw).validate()
