"""Command-line scenario runner: calibrate, walk, push, compare, stats.

Exit codes: 0 success, 1 domain failure (a fall in a walk or push run, a
failed calibration), 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import rigid_body as rb
from .calibration import DEFAULT_SAMPLES, CalibrationError, SwingModel, calibrate, samples_table
from .config import ConfigError, read_json, write_json
from .defaults import calibration_path, robot_path
from .experiments import COMPARE_RANGES, DEFAULT_PUSH, EPISODE_STEPS, run_compare
from .simulator import (
    GENERATORS,
    STEP_COLUMNS,
    Impulse,
    Scenario,
    SimConfig,
    grouped_stats,
    run_episode,
    scenario_from_dict,
    write_rows,
)

log = logging.getLogger("vhmpc")

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


def _push_arg(text: str):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 't,Jx,Jy,Jz', got {text!r}") from None
    if len(vals) != 4 or not all(np.isfinite(vals)):
        raise argparse.ArgumentTypeError(f"expected four finite numbers 't,Jx,Jy,Jz', got {text!r}")
    return vals


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vhmpc", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--calib", type=Path, help="calibration artifact (default: packaged artifact)")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--steps", type=_nonneg_int, help="override the step count")
        p.add_argument("--no-plots", action="store_true", help="skip figure rendering")
        if scenario:
            p.add_argument("--scenario", type=Path, help="scenario JSON file")

    p = sub.add_parser("calibrate", help="build the constant swing-foot model from sampled postures")
    p.add_argument("--robot", type=Path, help="robot description JSON (default: packaged model)")
    p.add_argument("--count", type=_nonneg_int, default=DEFAULT_SAMPLES, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--no-plots", action="store_true")

    for name, helptext in (("walk", "run one episode"), ("push", "run one episode with an impulse")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--generator", choices=GENERATORS, help="override the swing generator")
        if name == "push":
            p.add_argument("--push", type=_push_arg, default=list(DEFAULT_PUSH), metavar="t,Jx,Jy,Jz",
                           help="impulse time [s] and vector [N s] (default %(default)s)")
        p.add_argument("--no-ticks", action="store_true", help="skip the per-tick trace")

    p = sub.add_parser("compare", help="both generators under common random pushes")
    common(p)
    p.add_argument("--episode-steps", type=_nonneg_int, default=EPISODE_STEPS)
    p.add_argument("--ranges", type=lambda s: [float(x) for x in s.split(",")], default=list(COMPARE_RANGES),
                   metavar="Jx,Jy,Jz", help="uniform push half-ranges [N s] (default %(default)s)")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("stats", help="landing-error statistics from steps CSV files")
    p.add_argument("inputs", nargs="+", type=Path, help="steps CSV files or directories containing them")
    p.add_argument("--out", type=Path, help="write the JSON summary here instead of stdout")
    return ap


# -- helpers -------------------------------------------------------------------------------


def _load_calib(path) -> SwingModel:
    path = path or calibration_path()
    try:
        return SwingModel.from_dict(read_json(path, "calibration"))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc


def _load_scenario(args) -> tuple[Scenario, dict]:
    """The scenario file (or defaults) with command-line overrides applied and listed."""
    if args.scenario is not None:
        data = read_json(args.scenario, "scenario")
        try:
            sc = scenario_from_dict(data)
        except ConfigError as exc:
            raise ConfigError(f"{args.scenario}: {exc}") from exc
    else:
        sc = Scenario(name=args.command)
    overrides = {}
    for key, attr in (("seed", "seed"), ("steps", "n_steps"), ("generator", "generator")):
        val = getattr(args, key, None)
        if val is not None:
            overrides[attr] = val
    if getattr(args, "push", None) is not None and args.command == "push":
        t, *J = args.push
        overrides["impulses"] = [{"t": t, "J": J}]
        sc = replace(sc, impulses=[*sc.impulses, Impulse(t, np.array(J))])
    sc = replace(sc, **{k: v for k, v in overrides.items() if k != "impulses"})
    return sc, overrides


def _provenance(args, overrides) -> dict:
    return {"version": __version__, "argv": sys.argv[1:], "overrides": overrides,
            "calibration": str(getattr(args, "calib", None) or calibration_path())}


# -- subcommands ---------------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    try:
        model = rb.model_from_dict(read_json(args.robot or robot_path(), "robot config"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    args.out.mkdir(parents=True, exist_ok=True)
    log.info("calibrating with %d samples", args.count)
    try:
        sm, samples = calibrate(model, count=args.count, seed=args.seed)
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    sm.save(args.out / "calibration.json")
    header, rows = samples_table(samples)
    write_rows(args.out / "samples.csv", header, rows)
    report = {
        "robot": str(args.robot or robot_path()), "count": args.count, "seed": args.seed,
        "samples": sm.sample_count, "skipped": sm.skipped,
        "Lambda": sm.Lambda.tolist(), "h_c": sm.h_c.tolist(), "f_min": sm.f_min.tolist(),
        "f_max": sm.f_max.tolist(), "vertical_accel_range": list(sm.vertical_accel_range()),
        "spread": {k: np.ravel(v).tolist() for k, v in sm.spread.items()},
    }
    write_json(args.out / "report.json", report)
    if not args.no_plots:
        from .plotting import plot_calibration
        plot_calibration(header, rows, args.out / "samples.png")
    print(f"samples {sm.sample_count} (skipped {sm.skipped})")
    print("Lambda [kg]:\n" + np.array2string(sm.Lambda, precision=5))
    print("Lambda spread (max |sample - mean|):\n" + np.array2string(sm.spread["Lambda"], precision=5))
    print(f"h_c [N]: {np.array2string(sm.h_c, precision=5)}")
    print(f"f_min [N]: {np.array2string(sm.f_min, precision=5)}")
    print(f"f_max [N]: {np.array2string(sm.f_max, precision=5)}")
    print(f"wrote {args.out / 'calibration.json'}")
    return EXIT_OK


def cmd_episode(args) -> int:
    sc, overrides = _load_scenario(args)
    cfg = SimConfig(model=_load_calib(args.calib))
    log.info("running %s with %s for %d steps", sc.name, sc.generator, sc.n_steps)
    tr = run_episode(sc, cfg, record_ticks=not args.no_ticks)
    args.out.mkdir(parents=True, exist_ok=True)
    tr.write_csv(args.out)
    summary = tr.summary()
    summary["scenario_config"] = sc.to_dict()
    summary["provenance"] = _provenance(args, overrides)
    write_json(args.out / "summary.json", summary)
    if not args.no_plots:
        from .plotting import plot_trace
        plot_trace(tr, args.out / "trace.png")
    st = summary["stats"]
    print(f"{sc.name} [{sc.generator}]: {len(tr.steps)} steps completed")
    if st:
        print(f"mean |error| x {st['location_x']['mean']:.6g} m, y {st['location_y']['mean']:.6g} m, "
              f"time {st['time']['mean']:.6g} s")
    if tr.fell:
        print(f"FALL at step {tr.fall_step} (t = {tr.fall_time:.3f} s)")
        return EXIT_DOMAIN
    return EXIT_OK


def cmd_compare(args) -> int:
    template, overrides = _load_scenario(args)
    n = args.steps if args.steps is not None else 450
    seed = args.seed if args.seed is not None else 0
    if len(args.ranges) != 3:
        raise ConfigError("--ranges: expected three half-ranges 'Jx,Jy,Jz'")
    cfg = SimConfig(model=_load_calib(args.calib))
    log.info("compare: %d steps per generator, seed %d", n, seed)
    res = run_compare(n, cfg, seed=seed, ranges=tuple(args.ranges), template=template,
                      episode_steps=max(args.episode_steps, 1), workers=args.workers)
    args.out.mkdir(parents=True, exist_ok=True)
    rows = [r for g in GENERATORS for tr in res.traces.get(g, []) for r in tr.step_rows()]
    write_rows(args.out / "steps.csv", STEP_COLUMNS, rows)
    summary = res.summary()
    summary["protocol"] = {"steps": n, "seed": seed, "ranges": list(args.ranges),
                           "episode_steps": args.episode_steps}
    summary["provenance"] = _provenance(args, overrides)
    write_json(args.out / "summary.json", summary)
    if not args.no_plots:
        from .plotting import plot_compare
        errs = {g: [[*s.location_error, s.time_error] for tr in res.traces.get(g, []) for s in tr.steps]
                for g in GENERATORS}
        plot_compare(errs, args.out / "errors.png")
    for g in GENERATORS:
        st = summary["stats"].get(g)
        if st:
            print(f"{g}: {st['steps']} steps, falls {summary['falls'][g]}, mean |error| "
                  f"x {st['location_x']['mean']:.6g} m, y {st['location_y']['mean']:.6g} m, "
                  f"time {st['time']['mean']:.6g} s")
        else:
            print(f"{g}: no completed steps")
    return EXIT_OK


def _step_files(inputs):
    for p in inputs:
        if p.is_dir():
            yield from sorted(p.rglob("*steps.csv"))
        elif p.exists():
            yield p
        else:
            raise ConfigError(f"{p}: no such file or directory")


def cmd_stats(args) -> int:
    rows = []
    for path in _step_files(args.inputs):
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"generator", "scenario", "err_x", "err_y", "time_error"} - set(reader.fieldnames or [])
            if missing:
                raise ConfigError(f"{path}: not a steps file (missing {', '.join(sorted(missing))})")
            for i, r in enumerate(reader, start=2):
                try:
                    rows.append((r["generator"], r["scenario"], float(r["err_x"]), float(r["err_y"]),
                                 float(r["time_error"])))
                except ValueError as exc:
                    raise ConfigError(f"{path}:{i}: {exc}") from exc
    stats = grouped_stats(rows)
    if args.out:
        write_json(args.out, stats)
    else:
        print(json.dumps(stats, indent=2))
    return EXIT_OK


COMMANDS = {"calibrate": cmd_calibrate, "walk": cmd_episode, "push": cmd_episode, "compare": cmd_compare,
            "stats": cmd_stats}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
