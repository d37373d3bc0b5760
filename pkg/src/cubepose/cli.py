"""Command-line entry points: simulate, montecarlo, replay, scenarios."""
import argparse
import dataclasses
import os
import sys
import warnings
from pathlib import Path

from . import config as config_mod
from .errors import ConfigurationError, CubeposeError
from .logio import (atomic_write, emit_monte_carlo, emit_results, parse_sensor_log, replay,
                    streams_from_run, write_sensor_log)
from .sim import consistency_check, monte_carlo, simulate


def _diag(msg, stream=None):
    stream = stream or sys.stderr
    tag = "error:"
    if stream.isatty() and "NO_COLOR" not in os.environ:
        tag = "\033[31merror:\033[0m"
    print(f"{tag} {msg}", file=stream)


def _scenario(args):
    if args.config is not None:
        return config_mod.load(args.config)
    return config_mod.preset(args.preset)


def _add_source(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--config", type=Path, help="JSON run-config file")
    g.add_argument("--preset", choices=sorted(config_mod.PRESETS), help="built-in scenario")


def build_parser():
    ap = argparse.ArgumentParser(prog="cubepose", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario and write CSV results")
    _add_source(p)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("montecarlo", help="seeded batch with aggregate consistency metrics")
    _add_source(p)
    p.add_argument("--runs", type=int, required=True)
    p.add_argument("--seed", type=int, default=0, help="seed of the first run")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("replay", help="run the filter on a recorded sensor log")
    p.add_argument("--log", type=Path, required=True)
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("scenarios", help="list built-in scenarios")
    p.add_argument("--write", type=Path, metavar="DIR", help="also write each preset as JSON")
    return ap


def cmd_simulate(args):
    cfg = _scenario(args)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    log = simulate(cfg)
    report = consistency_check(log)
    emit_results(log, report, args.out)
    write_sensor_log(args.out / "sensor_log.csv", streams_from_run(log))
    atomic_write(args.out / "config.json", config_mod.dumps(cfg))
    print(f"{cfg.name}: {log.n_epochs} epochs, reject fraction {report.reject_fraction:.3f}, "
          f"terminal position error {report.terminal_pos_error:.4f} m -> {args.out}")
    return 0


def cmd_montecarlo(args):
    if args.runs < 1:
        raise ConfigurationError("--runs must be >= 1")
    cfg = _scenario(args)
    mc = monte_carlo(cfg, args.runs, args.seed)
    emit_monte_carlo(mc, args.out)
    worst = min(mc.containment[c] for c in ("x", "y", "z"))
    print(f"{cfg.name}: {mc.n_runs} runs, min position containment {worst:.3f}, "
          f"mean position NEES {mc.mean_nees_pos:.2f} -> {args.out}")
    return 0


def cmd_replay(args):
    cfg = config_mod.load(args.config)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        streams = parse_sensor_log(args.log)
        log, report = replay(streams, cfg)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    emit_results(log, report, args.out)
    print(f"replayed {len(streams.imu)} IMU and {len(streams.ranges)} range records -> {args.out}")
    return 0


def cmd_scenarios(args):
    for name, make in sorted(config_mod.PRESETS.items()):
        cfg = make()
        doc = (make.__doc__ or "").strip().splitlines()[0]
        print(f"{name:18s} {cfg.mode:20s} {cfg.duration:5.0f} s  {doc}")
        if args.write is not None:
            args.write.mkdir(parents=True, exist_ok=True)
            atomic_write(args.write / f"{name}.json", config_mod.dumps(cfg))
    return 0


COMMANDS = {"simulate": cmd_simulate, "montecarlo": cmd_montecarlo, "replay": cmd_replay,
            "scenarios": cmd_scenarios}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (CubeposeError, OSError) as exc:
        _diag(str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
