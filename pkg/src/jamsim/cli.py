"""Command-line entry point: ``jamsim run|sweep|gan-augment|adapt-defense|export``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .harness import (JAMMER_ALIASES, ScenarioConfig, SweepSpec, adapt_defense, export_results,
                      load_config, load_table, run_scenario, run_sweep)
from .nn import ConfigError

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _common(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--jammer", choices=sorted(set(JAMMER_ALIASES) - {"deep-learning"}))
    p.add_argument("--tau", type=float)
    p.add_argument("--p-jam", type=float)
    p.add_argument("--p-avg", type=float)
    p.add_argument("--p-d", type=float)
    p.add_argument("--gan-real", type=int)
    p.add_argument("--gan-synth", type=int)
    p.add_argument("--out", help="output path")


def build_parser():
    ap = _Parser(prog="jamsim", description="Adversarial jamming simulator")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="one scenario; writes metrics JSON and the slot log")
    _common(p)

    p = sub.add_parser("sweep", help="parameter sweep; writes a results table")
    _common(p)
    p.add_argument("--axis", required=True, choices=harness.AXES)
    p.add_argument("--values", required=True,
                   help="comma separated; gan-counts takes real:synth pairs")
    p.add_argument("--replications", type=int, default=5)
    p.add_argument("--reuse-jammer-arch", action="store_true",
                   help="tune J once per seed and reuse its architecture")
    p.add_argument("--format", choices=("csv", "json"))

    p = sub.add_parser("gan-augment", help="train the conditional GAN on J's data")
    _common(p)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("adapt-defense", help="search the defense level")
    _common(p)
    p.add_argument("--retrain-jammer", choices=("per-iteration", "never"),
                   default="per-iteration")

    p = sub.add_parser("export", help="convert an exported table between csv and json")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "json"))
    return ap


def scenario_from_args(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        cfg = replace(cfg, seed=args.seed)
    jam = cfg.jammer
    if args.jammer is not None:
        jam = replace(jam, kind=JAMMER_ALIASES[args.jammer])
    if args.tau is not None:
        jam = replace(jam, tau=args.tau)
    if args.p_jam is not None:
        jam = replace(jam, p_jam=args.p_jam)
    cfg = replace(cfg, jammer=jam)
    if args.p_avg is not None:
        cfg = replace(cfg, p_avg=args.p_avg)
    if args.p_d is not None:
        cfg = replace(cfg, defense=replace(cfg.defense, p_d=args.p_d))
    if args.gan_real is not None or args.gan_synth is not None:
        cfg = replace(cfg, gan_real=args.gan_real if args.gan_real is not None else 10,
                      gan_synth=args.gan_synth or 0)
    return cfg.validate()


def _parse_values(axis, text):
    items = [v.strip() for v in text.split(",") if v.strip()]
    if axis == "jammer-type":
        bad = [v for v in items if v not in JAMMER_ALIASES]
        if bad:
            raise ConfigError(f"unknown jammer types {bad}")
        return tuple(items)
    try:
        if axis == "gan-counts":
            return tuple(tuple(int(x) for x in v.split(":")) for v in items)
        return tuple(float(v) for v in items)
    except ValueError as e:
        raise ConfigError(f"bad --values for {axis}: {e}") from e


def cmd_run(args):
    cfg = scenario_from_args(args)
    res = run_scenario(cfg)
    summary = {"transmitter": json.loads(res.transmitter.to_json()),
               "jammer": json.loads(res.jammer.to_json())}
    text = json.dumps(summary, indent=1) + "\n"
    if args.out:
        out = Path(args.out)
        export_results(res.log, out / "slots.csv")
        export_results(res.transmitter, out / "transmitter.json")
        export_results(res.jammer, out / "jammer.json")
    sys.stdout.write(text)


def cmd_sweep(args):
    cfg = scenario_from_args(args)
    spec = SweepSpec(args.axis, _parse_values(args.axis, args.values), args.replications,
                     args.reuse_jammer_arch)
    rows = run_sweep(cfg, spec)
    if args.out:
        export_results(rows, args.out, args.format)
    for r in harness.mean_rows(rows):
        print(f"{r['value']}\tthroughput={r['t_throughput']:.4f}\t"
              f"J e_md={r['j_e_md']:.4f} e_fa={r['j_e_fa']:.4f}")


def cmd_gan(args):
    cfg = scenario_from_args(args)
    if cfg.gan_real is None:
        cfg = replace(cfg, gan_real=10, gan_synth=500)
    if args.epochs is not None:
        cfg = replace(cfg, gan=replace(cfg.gan, epochs=args.epochs))
    cfg = replace(cfg, jammer=replace(cfg.jammer, kind="deep-learning"))
    res = run_scenario(cfg)
    md, fa = res.jammer_holdout
    print(f"real={cfg.gan_real} synthetic={cfg.gan_synth} "
          f"holdout e_md={md:.4f} e_fa={fa:.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if res.gan_model is not None:
            (out / "gan_loss.csv").write_text(res.gan_model.loss_csv())
        export_results([{"real": cfg.gan_real, "synthetic": cfg.gan_synth,
                         "holdout_e_md": md, "holdout_e_fa": fa}], out / "holdout.csv")


def cmd_adapt(args):
    cfg = scenario_from_args(args)
    best, steps = adapt_defense(cfg, retrain_jammer=args.retrain_jammer)
    rows = [{"iteration": s.iteration, "p_d": s.p_d, "throughput": s.throughput,
             "jammer_max_error": s.jammer_max_error} for s in steps]
    if args.out:
        export_results(rows, args.out)
    for r in rows:
        print(f"{r['iteration']}\tp_d={r['p_d']:.3f}\tthroughput={r['throughput']:.4f}")
    print(f"selected p_d={best}")


def cmd_export(args):
    rows = load_table(args.input)
    export_results(rows, args.out, args.format)


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "gan-augment": cmd_gan,
            "adapt-defense": cmd_adapt, "export": cmd_export}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, TypeError) as e:
        # invalid parameter values surface as ValueError from the dataclasses
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
