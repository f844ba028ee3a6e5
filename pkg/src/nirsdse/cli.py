"""Command-line entry point: ``nirsdse simulate|sweep|analyze|plot|validate``.

Exit codes: 0 success, 1 validation or physics failure, 2 config error,
3 partial sweep failure. ``NIRSDSE_WORKERS`` sets the default worker count.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .analysis import (DEFAULT_MIN_OUTPUT_W, Diagnostics, IncompleteGridError, build_metric_table, read_metrics,
                       write_metrics_csv, write_metrics_json)
from .configtext import ConfigError
from .harness import builtin_grid, expand_grid, load_grid, load_run_set, run_sweep
from .medium import MissingWavelengthError, SuperAbsorbentLayer, load_scene_file
from .plots import emit_plot_data
from .tally import SchemaVersionError, save_tally
from .transport import default_workers, simulate

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("nirsdse")


def _scene(path):
    return load_scene_file(path)


def cmd_simulate(args) -> int:
    scene = _scene(args.config)
    if args.sal_depth is not None:
        scene = scene.with_sal(SuperAbsorbentLayer(args.sal_depth, scene.sal.mode if scene.sal else "perfect",
                                                   scene.sal.mu_a if scene.sal else None))
    mode = args.mode
    if mode == "sal" and scene.sal is None:
        raise ConfigError("--mode sal needs --sal-depth or a [sal] section")
    depths = tuple(args.depths) if args.depths else ((scene.sal.depth,) if scene.sal else ())
    wavelength = args.wavelength if args.wavelength is not None else scene.wavelengths[0]
    if mode == "tag":
        scene = scene.with_sal(None)
    tally = simulate(scene, wavelength, args.photons, args.seed, mode=mode, depth_grid=depths,
                     workers=args.workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_tally(tally, out)
    print(json.dumps({"tally": str(out), "launched_photons": tally.launched_photons,
                      "detected_weight": tally.detected_weight.tolist()}))
    return EXIT_OK


def cmd_sweep(args) -> int:
    scene = _scene(args.config)
    grid = load_grid(Path(args.grid).read_text(encoding="utf-8")) if args.grid else builtin_grid()
    overrides = {}
    if args.photons is not None:
        overrides["photons_per_run"] = args.photons
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.mode is not None:
        overrides["sal_mode"] = args.mode
    grid = replace(grid, **overrides)
    grid.validate()
    result = run_sweep(grid, scene, workers=args.workers, out_dir=args.out_dir, resume=args.resume)
    total = len(expand_grid(grid))
    print(f"{len(result.records)} run(s) executed, {total} in grid, {len(result.failed)} failed")
    if result.failed:
        for run in result.failed:
            print(f"failed: {run.label}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_analyze(args) -> int:
    rs = load_run_set(args.runs_dir)
    diag = Diagnostics()
    rows = build_metric_table(rs, args.min_output_power, diag)
    out = Path(args.out) if args.out else Path(args.runs_dir) / f"metrics.{args.format}"
    if args.format == "csv":
        write_metrics_csv(rows, out)
    else:
        write_metrics_json(rows, out, mode=rs.mode, min_sensible_output=args.min_output_power)
    print(f"{len(rows)} metric rows -> {out} ({diag.negative_clamped} negative estimates clamped)")
    return EXIT_OK


def cmd_plot(args) -> int:
    rows = read_metrics(args.metrics)
    kinds = ["fig2", "fig3", "fig4"] if args.kind == "all" else [args.kind]
    for kind in kinds:
        files = emit_plot_data(rows, kind, args.out_dir)
        print(f"{kind}: {len(files) - 1} series + {files[-1]}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validate import validate_physics

    results = validate_physics(quick=args.quick)
    failed = [r.name for r in results if not r.passed]
    print(json.dumps({"passed": not failed, "failed": failed, "checks": [r.as_dict() for r in results]},
                     indent=1))
    return EXIT_FAIL if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nirsdse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a single cell")
    p.add_argument("--config", required=True)
    p.add_argument("--wavelength", type=float)
    p.add_argument("--sal-depth", type=float)
    p.add_argument("--depths", type=float, nargs="*", help="depth thresholds for tag-mode binning (mm)")
    p.add_argument("--photons", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--mode", choices=("sal", "tag"), default="tag")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default="tally.json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run the wavelength x depth grid")
    p.add_argument("--config", required=True)
    p.add_argument("--grid")
    p.add_argument("--photons", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("difference", "tag"))
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out-dir", default="runs")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="build the metric table from a sweep directory")
    p.add_argument("--runs-dir", required=True)
    p.add_argument("--min-output-power", type=float, default=DEFAULT_MIN_OUTPUT_W,
                   help="minimum sensible detector power in W (placeholder default 1 nW)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("plot", help="emit series files and SVG charts")
    p.add_argument("--metrics", required=True)
    p.add_argument("--kind", choices=("fig2", "fig3", "fig4", "all"), default="all")
    p.add_argument("--out-dir", default="plots")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("validate", help="run the physics invariant suite")
    p.add_argument("--quick", action="store_true", help="1e4-photon smoke subset")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    if getattr(args, "workers", None) is None and hasattr(args, "workers"):
        args.workers = default_workers()
    try:
        return args.func(args)
    except (ConfigError, MissingWavelengthError, SchemaVersionError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IncompleteGridError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
