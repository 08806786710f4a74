"""Command line: ``fempinn run | evaluate | reproduce | presets``.

The output root is ``--out`` when given, else ``$FEMPINN_OUT``, else ``./runs``.
Exit status: 0 success, 1 training failure, 2 invalid config or arguments.
"""

from __future__ import annotations

import argparse
import json
import sys

from .bench import OUT_ENV, evaluate, output_root, run
from .config import load_config
from .errors import ConfigError, InvalidArgument
from .presets import PRESETS, SWEEPS, preset, preset_text, reproduce_table


def _progress(*args):
    if len(args) == 2:
        k, seg = args
        last = seg.history[-1] if seg.history else {}
        print(f"segment {k}: t in [{seg.t_span[0]:g}, {seg.t_span[1]:g}], final loss {last.get('loss', float('nan')):.3e}",
              flush=True)
    else:
        r = args[0]
        print(f"adaptive iteration {r.iteration + 1}: relative L2 {r.error:.4e}, "
              f"{int(r.set_sizes.sum())} residual points", flush=True)


def _cmd_run(args) -> int:
    config = preset(args.preset) if args.preset else load_config(args.config)
    root = output_root(args.out)
    report = run(config, out_dir=root / config.run.name, on_progress=_progress)
    print(f"relative L2 {report.relative_l2:.4e} in {report.wall_clock:.1f} s -> {report.out_dir}")
    if report.failed:
        print(f"training failed: {report.message}", file=sys.stderr)
        return 1
    return 0


def _cmd_evaluate(args) -> int:
    grid = tuple(int(v) for v in args.grid.replace("x", ",").split(",")) if args.grid else None
    error = evaluate(args.checkpoint, problem=args.problem, grid=grid, points=args.points, dump=args.dump)
    print(json.dumps({"relative_l2": error, "dump": args.dump}))
    return 0


def _cmd_reproduce(args) -> int:
    rows = reproduce_table(args.preset, args.out, iterations=args.iterations)
    for r in rows:
        ref = r["reference"]
        print(f"{r['setting']:<26} measured {r['measured']:.4e}   reference {ref:.3e}")
    print(f"table -> {output_root(args.out) / args.preset / 'table.csv'}")
    return 0


def _cmd_presets(args) -> int:
    if args.show:
        print(preset_text(args.show))
        return 0
    print("run presets (fempinn run --preset NAME, or save 'presets --show NAME' as a config):")
    for name, (note, _) in PRESETS.items():
        print(f"  {name:<22} {note}")
    print("reproduce sweeps (fempinn reproduce NAME):")
    for name, sweep in SWEEPS.items():
        print(f"  {name:<22} {sweep.description}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fempinn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train and evaluate one experiment")
    r.add_argument("config", nargs="?", help="INI config file")
    r.add_argument("--preset", choices=sorted(PRESETS), help="use a named preset instead of a file")
    r.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./runs)")
    r.set_defaults(func=_cmd_run)

    e = sub.add_parser("evaluate", help="relative L2 of a saved model")
    e.add_argument("checkpoint", help="model_seg0.ckpt or the run directory")
    e.add_argument("--problem", help="expected problem name (checked against the checkpoint)")
    e.add_argument("--grid", help="points per spatial axis and time levels, e.g. 256,101")
    e.add_argument("--points", type=int, help="test cloud size for ball domains")
    e.add_argument("--dump", help="CSV path for coordinates, prediction, exact and abs error")
    e.set_defaults(func=_cmd_evaluate)

    q = sub.add_parser("reproduce", help="run a sweep and compare with full-scale reference values")
    q.add_argument("preset", choices=sorted(SWEEPS))
    q.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./runs)")
    q.add_argument("--iterations", type=int, help="override the per-run iteration budget")
    q.set_defaults(func=_cmd_reproduce)

    s = sub.add_parser("presets", help="list presets and sweeps")
    s.add_argument("--show", choices=sorted(PRESETS), help="print a preset as INI")
    s.set_defaults(func=_cmd_presets)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "run" and not (args.config or args.preset):
        parser.error("run needs a config file or --preset")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid config ({len(exc.problems)} problem(s)):", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return 2
    except (InvalidArgument, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
