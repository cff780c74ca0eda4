"""Batch command-line front end.

Each subcommand wires one survey workflow end to end and writes a JSON run
manifest next to its outputs. Settings resolve in the order: command-line
flag, config file (``--config`` or ``./survscan.conf``), built-in default.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 accuracy verdict "fail".
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .change import (
    DEFAULT_RAMP,
    export_heatmap,
    summarize,
    vertical_distance,
    write_summary_json,
)
from .core.cloud import GROUND, NON_GROUND, local_frame
from .core.index import mean_nn_spacing
from .core.io import FORMATS, read_cloud, write_cloud
from .core.transform import RigidTransform
from .errors import SurvscanError, ValidationError
from .preprocess import filters, registration
from .raster import fill_holes, rasterize_dsm, read_asc, volume_area, write_asc
from .targets import (
    DEFAULT_TOLERANCE_MM,
    accuracy_report_json,
    distance_stats,
    extract_target,
    pairwise_distance_stats,
    read_distance_observations,
    read_observations,
)
from .tin import delaunay, export_obj

CONFIG_NAME = "survscan.conf"
THREADS_ENV = "SURVSCAN_THREADS"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERDICT_FAIL = 3

# Every tunable default lives here; library defaults carry the same values.
DEFAULTS = {
    "filter": {
        "dedup_tolerance": filters.DEFAULT_DEDUP_TOLERANCE,
        "k": filters.DEFAULT_OUTLIER_K,
        "alpha": filters.DEFAULT_OUTLIER_ALPHA,
    },
    "classify": {
        "cell": filters.DEFAULT_GROUND_CELL,
        "h_thresh": filters.DEFAULT_GROUND_HEIGHT,
        "keep": "all",
    },
    "crop": {},
    "register": {
        "max_iter": registration.DEFAULT_ICP_MAX_ITER,
        "converge_tol": registration.DEFAULT_ICP_TOL,
        "max_distance": None,
    },
    "georef": {"crs": "unspecified"},
    "dsm": {"cell": 0.05, "aggregator": "mean", "max_ring": 3},
    "volume": {"cell": 0.05, "aggregator": "mean", "max_ring": 3, "base": "lowest"},
    "diff": {
        "cell": 0.05,
        "tolerance": 0.005,
        "range": 0.02,
        "ramp": DEFAULT_RAMP,
        "bands": "-0.02,-0.01,-0.005,0.005,0.01,0.02",
    },
    "tin": {},
    "accuracy": {"tolerance_mm": DEFAULT_TOLERANCE_MM, "sphere_radius": 0.0725, "search_radius": 0.15},
    "spacing": {},
}

_FLOATS = {"dedup_tolerance", "alpha", "cell", "h_thresh", "converge_tol", "max_distance",
           "tolerance", "range", "tolerance_mm", "sphere_radius", "search_radius"}
_INTS = {"k", "max_iter", "max_ring"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Settings resolution and manifest bookkeeping for one invocation."""

    def __init__(self, command: str, args, argv):
        self.command = command
        self.args = args
        self.argv = list(argv)
        self.started = time.perf_counter()
        self.started_utc = datetime.now(timezone.utc).isoformat()
        self.inputs = []
        self.outputs = []
        self.settings = {}
        self.config_path = None
        self._config = configparser.ConfigParser()
        path = args.config or (CONFIG_NAME if Path(CONFIG_NAME).is_file() else None)
        if path is not None:
            if not Path(path).is_file():
                raise ValidationError(f"config file not found: {path}")
            try:
                self._config.read(path, encoding="utf-8")
            except configparser.Error as exc:
                raise ValidationError(f"config file {path} is malformed: {exc}") from None
            self.config_path = str(path)
        self.threads = self._threads()

    def _threads(self) -> int:
        raw = self.args.threads
        if raw is None:
            raw = os.environ.get(THREADS_ENV)
        if raw is None:
            return 1
        try:
            n = int(raw)
        except ValueError:
            raise ValidationError(f"thread count must be an integer, got {raw!r}") from None
        if n < 1:
            raise ValidationError("thread count must be >= 1")
        return n

    def get(self, key: str):
        """Resolved value of a setting: flag, then config, then default."""
        value = getattr(self.args, key, None)
        if value is None:
            section = self.command
            for candidate in (key, key.replace("_", "-")):
                if self._config.has_option(section, candidate):
                    value = self._config.get(section, candidate)
                    break
        if value is None:
            value = DEFAULTS[self.command].get(key)
        if isinstance(value, str) and value is not None:
            try:
                if key in _FLOATS:
                    value = float(value)
                elif key in _INTS:
                    value = int(value)
            except ValueError:
                raise ValidationError(f"setting {key!r} must be numeric, got {value!r}") from None
        self.settings[key] = value
        return value

    def input(self, path) -> str:
        self.inputs.append(str(path))
        return str(path)

    def output(self, path) -> str:
        self.outputs.append(str(path))
        return str(path)

    def write_manifest(self):
        if self.args.manifest:
            target = Path(self.args.manifest)
        elif self.outputs:
            target = Path(self.outputs[0] + ".manifest.json")
        else:
            target = Path(f"survscan-{self.command}.manifest.json")
        manifest = {
            "tool": "survscan",
            "version": __version__,
            "command": self.command,
            "argv": self.argv,
            "config_file": self.config_path,
            "settings": {k: v for k, v in sorted(self.settings.items())},
            "threads": self.threads,
            "inputs": {p: _sha256(p) for p in self.inputs if Path(p).is_file()},
            "outputs": self.outputs,
            "started_utc": self.started_utc,
            "wall_time_s": time.perf_counter() - self.started,
        }
        with open(target, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(manifest, fh, indent=2, default=str)
            fh.write("\n")
        return target


def _load(run: Run, path, fmt=None, frame=None):
    return read_cloud(run.input(path), format=fmt, frame=frame)


def cmd_filter(run: Run, a) -> int:
    cloud = _load(run, a.input, a.format)
    deduped, n_dup = filters.deduplicate(cloud, run.get("dedup_tolerance"))
    kept, removed = filters.remove_outliers(deduped, run.get("k"), run.get("alpha"), workers=run.threads)
    write_cloud(kept, run.output(a.output), a.out_format)
    print(f"input={len(cloud)} duplicates_removed={n_dup} outliers_removed={len(removed)} kept={len(kept)}")
    return EXIT_OK


def cmd_classify(run: Run, a) -> int:
    cloud = _load(run, a.input, a.format)
    labelled = filters.classify_ground(cloud, run.get("cell"), run.get("h_thresh"))
    keep = run.get("keep")
    if keep == "ground":
        out = labelled.subset(labelled.classification == GROUND)
    elif keep == "nonground":
        out = labelled.subset(labelled.classification == NON_GROUND)
    elif keep == "all":
        out = labelled
    else:
        raise ValidationError(f"keep must be all, ground or nonground, got {keep!r}")
    write_cloud(out, run.output(a.output), a.out_format)
    n_ground = int(np.count_nonzero(labelled.classification == GROUND))
    print(f"ground={n_ground} nonground={len(labelled) - n_ground} written={len(out)}")
    return EXIT_OK


def _read_polygon(path):
    verts = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            text = line.split("#", 1)[0].strip()
            if text:
                parts = text.replace(",", " ").split()
                if len(parts) != 2:
                    raise ValidationError(f"polygon file {path}: expected 'x y' per line, got {text!r}")
                verts.append((float(parts[0]), float(parts[1])))
    return filters.Polygon(verts)


def cmd_crop(run: Run, a) -> int:
    cloud = _load(run, a.input, a.format)
    if a.box is not None:
        region = filters.Box(tuple(a.box[:3]), tuple(a.box[3:]))
        run.settings["box"] = list(a.box)
    else:
        region = _read_polygon(run.input(a.polygon))
    out = filters.crop(cloud, region)
    write_cloud(out, run.output(a.output), a.out_format)
    print(f"input={len(cloud)} kept={len(out)}")
    return EXIT_OK


def _transform_dict(result, method: str) -> dict:
    out = {
        "method": method,
        "rotation": result.transform.rotation.tolist(),
        "translation": result.transform.translation.tolist(),
        "rms_m": result.rms_residual,
        "iterations": result.iterations,
        "converged": result.converged,
    }
    if method == "procrustes":
        out["residuals_m"] = result.per_pair_residuals
    else:
        out["pairs_used"] = len(result.ids)
        out["rms_history_m"] = list(result.history)
    return out


def cmd_register(run: Run, a) -> int:
    pairs = registration.read_correspondences(run.input(a.pairs))
    result = registration.estimate_rigid(pairs)
    report = {"procrustes": _transform_dict(result, "procrustes")}
    final = result
    if a.icp:
        src = _load(run, a.icp[0], a.format)
        dst = _load(run, a.icp[1], a.format)
        final = registration.icp_refine(
            src, dst, result.transform,
            max_iter=run.get("max_iter"),
            converge_tol=run.get("converge_tol"),
            max_distance=run.get("max_distance"),
            workers=run.threads,
        )
        report["icp"] = _transform_dict(final, "icp")
    report["transform"] = {
        "rotation": final.transform.rotation.tolist(),
        "translation": final.transform.translation.tolist(),
    }
    with open(run.output(a.output), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"rms_m={final.rms_residual:.6f} iterations={final.iterations}")
    return EXIT_OK


def cmd_georef(run: Run, a) -> int:
    cloud = _load(run, a.input, a.format)
    control = registration.read_correspondences(run.input(a.control))
    out, result = registration.georeference(cloud, control, run.get("crs"))
    write_cloud(out, run.output(a.output), a.out_format)
    if a.report:
        with open(run.output(a.report), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(_transform_dict(result, "procrustes"), fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(f"rms_m={result.rms_residual:.6f} frame={out.frame}")
    return EXIT_OK


def _grid_from_input(run: Run, a):
    if Path(a.input).suffix.lower() == ".asc":
        return read_asc(run.input(a.input))
    cloud = _load(run, a.input, a.format)
    return rasterize_dsm(cloud, run.get("cell"), run.get("aggregator"))


def cmd_dsm(run: Run, a) -> int:
    cloud = _load(run, a.input, a.format)
    grid = rasterize_dsm(cloud, run.get("cell"), run.get("aggregator"))
    n_filled = 0
    if not a.no_fill:
        grid, n_filled = fill_holes(grid, run.get("max_ring"))
    write_asc(grid, run.output(a.output))
    print(f"ncols={grid.ncols} nrows={grid.nrows} interpolated_cells={n_filled}")
    return EXIT_OK


def _parse_base(value):
    if isinstance(value, str) and value.strip().lower() == "lowest":
        return "lowest"
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"base must be 'lowest' or a height in meters, got {value!r}") from None


def cmd_volume(run: Run, a) -> int:
    grid = _grid_from_input(run, a)
    if not a.no_fill:
        grid, _ = fill_holes(grid, run.get("max_ring"))
    res = volume_area(grid, _parse_base(run.get("base")))
    print(f"volume_m3={res.volume:.3f} area_m2={res.area:.3f}")
    if a.output:
        data = {
            "volume_m3": res.volume,
            "area_m2": res.area,
            "base_height_m": res.base_height,
            "filled_cells": res.filled_cells,
            "interpolated_cells": res.interpolated_cells,
            "cells_above_base": res.cells_above_base,
            "cell_m": grid.cell,
        }
        with open(run.output(a.output), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def _parse_bands(value):
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    text = str(value).strip()
    if not text:
        return []
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise ValidationError(f"bands must be a comma-separated list of numbers, got {value!r}") from None


def cmd_diff(run: Run, a) -> int:
    ep_a = _load(run, a.epoch_a, a.format)
    ep_b = _load(run, a.epoch_b, a.format)
    change = vertical_distance(ep_a, ep_b, run.get("cell"))
    summary = summarize(change, run.get("tolerance"), _parse_bands(run.get("bands")))
    write_summary_json(summary, run.output(a.summary))
    if a.heatmap:
        legend = export_heatmap(change, run.output(a.heatmap), run.get("range"), run.get("ramp"))
        run.output(legend)
    if a.grid:
        write_asc(change.grid, run.output(a.grid))
    print(
        f"mean_m={summary.mean:.6f} rms_m={summary.rms:.6f} max_abs_m={summary.max_abs:.6f} "
        f"fraction_within={summary.fraction_within:.6f} valid_cells={summary.valid_cells}"
    )
    return EXIT_OK


def cmd_tin(run: Run, a) -> int:
    cloud = _load(run, a.input, a.format)
    tin = delaunay(cloud)
    export_obj(tin, run.output(a.output))
    print(f"vertices={len(tin.vertices)} triangles={len(tin.triangles)} hull_edges={tin.hull_edge_count}")
    return EXIT_OK


def _read_approx(path):
    approx = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 4:
                raise ValidationError(f"approximate-centre file {path}: expected 'target_id x y z', got {text!r}")
            approx[parts[0]] = tuple(float(v) for v in parts[1:])
    return approx


def cmd_accuracy(run: Run, a) -> int:
    tol = run.get("tolerance_mm")
    if a.distances:
        report = pairwise_distance_stats(read_distance_observations(run.input(a.distances)), tol)
    elif a.observations:
        report = distance_stats(read_observations(run.input(a.observations)), tol)
    else:
        if not a.approx:
            raise UsageError("accuracy: --scan requires --approx")
        approx = _read_approx(run.input(a.approx))
        r_sphere = run.get("sphere_radius")
        r_search = run.get("search_radius")
        obs = []
        for spec in a.scan:
            scan_id, sep, path = spec.partition("=")
            if not sep or not scan_id or not path:
                raise UsageError(f"accuracy: --scan expects ID=CLOUD, got {spec!r}")
            cloud = _load(run, path, a.format, frame=local_frame(scan_id))
            for target_id, center in approx.items():
                obs.append(extract_target(cloud, center, r_search, r_sphere, target_id, scan_id))
        report = distance_stats(obs, tol)
    accuracy_report_json(report, run.output(a.output))
    print(f"max_std_mm={report.max_std:.3f} tolerance_mm={report.tolerance:.3f} verdict={report.verdict}")
    return EXIT_OK if report.verdict == "pass" else EXIT_VERDICT_FAIL


def cmd_spacing(run: Run, a) -> int:
    cloud = _load(run, a.input, a.format)
    spacing = mean_nn_spacing(cloud, workers=run.threads)
    print(f"mean_nn_spacing_m={spacing:.6f} points={len(cloud)}")
    if a.output:
        with open(run.output(a.output), "w", encoding="utf-8", newline="\n") as fh:
            json.dump({"mean_nn_spacing_m": spacing, "points": len(cloud)}, fh, indent=2)
            fh.write("\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help=f"settings file (default ./{CONFIG_NAME} if present)")
    common.add_argument("--threads", help=f"worker cap (fallback: ${THREADS_ENV}); output does not change")
    common.add_argument("--manifest", help="run manifest path (default: beside the first output)")
    common.add_argument("--format", choices=FORMATS, help="input cloud format (default: from extension)")

    def with_out_format(p):
        p.add_argument("--out-format", choices=FORMATS, help="output cloud format (default: from extension)")

    parser = _Parser(prog="survscan", description="Terrestrial laser-scan survey toolkit.")
    parser.add_argument("--version", action="version", version=f"survscan {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("filter", parents=[common], help="remove duplicates and statistical outliers")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--dedup-tolerance", dest="dedup_tolerance", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--alpha", type=float)
    with_out_format(p)

    p = sub.add_parser("classify", parents=[common], help="label ground / non-ground points")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--cell", type=float)
    p.add_argument("--h-thresh", dest="h_thresh", type=float)
    p.add_argument("--keep", choices=("all", "ground", "nonground"))
    with_out_format(p)

    p = sub.add_parser("crop", parents=[common], help="keep points inside a box or xy polygon")
    p.add_argument("input")
    p.add_argument("output")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--box", nargs=6, type=float, metavar=("XMIN", "YMIN", "ZMIN", "XMAX", "YMAX", "ZMAX"))
    g.add_argument("--polygon", help="file with one 'x y' vertex per line")
    with_out_format(p)

    p = sub.add_parser("register", parents=[common], help="rigid transform from control pairs, optional ICP")
    p.add_argument("pairs", help="correspondence file: id sx sy sz dx dy dz")
    p.add_argument("-o", "--output", required=True, help="transform JSON")
    p.add_argument("--icp", nargs=2, metavar=("SOURCE", "DEST"), help="refine on two clouds")
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--converge-tol", dest="converge_tol", type=float)
    p.add_argument("--max-distance", dest="max_distance", type=float)

    p = sub.add_parser("georef", parents=[common], help="transform a cloud onto control points")
    p.add_argument("input")
    p.add_argument("control", help="control file: id sx sy sz dx dy dz")
    p.add_argument("output")
    p.add_argument("--crs")
    p.add_argument("--report", help="residual report JSON")
    with_out_format(p)

    p = sub.add_parser("dsm", parents=[common], help="rasterize a DSM and write an ESRI ASCII grid")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--cell", type=float)
    p.add_argument("--aggregator", choices=("mean", "max", "min"))
    p.add_argument("--max-ring", dest="max_ring", type=int)
    p.add_argument("--no-fill", action="store_true", help="skip hole interpolation")

    p = sub.add_parser("volume", parents=[common], help="stockpile volume and area from a cloud or .asc DSM")
    p.add_argument("input")
    p.add_argument("--cell", type=float)
    p.add_argument("--aggregator", choices=("mean", "max", "min"))
    p.add_argument("--base", help="'lowest' or a base height in meters")
    p.add_argument("--max-ring", dest="max_ring", type=int)
    p.add_argument("--no-fill", action="store_true")
    p.add_argument("-o", "--output", help="result JSON")

    p = sub.add_parser("diff", parents=[common], help="vertical change between two registered epochs")
    p.add_argument("epoch_a")
    p.add_argument("epoch_b")
    p.add_argument("--summary", required=True, help="summary JSON")
    p.add_argument("--heatmap", help="PPM heatmap")
    p.add_argument("--grid", help="change grid as ESRI ASCII")
    p.add_argument("--cell", type=float)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--bands", help="comma-separated thresholds in meters")
    p.add_argument("--range", type=float, help="heatmap colour range +/- meters")
    p.add_argument("--ramp", choices=(DEFAULT_RAMP,))

    p = sub.add_parser("tin", parents=[common], help="Delaunay TIN exported as OBJ")
    p.add_argument("input")
    p.add_argument("output")

    p = sub.add_parser("accuracy", parents=[common], help="repeated-scan target distance accuracy")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--observations", help="centres file: scan_id target_id x y z")
    src.add_argument("--distances", help="measured distances: scan_id target_a target_b distance_m")
    src.add_argument("--scan", action="append", metavar="ID=CLOUD", help="scan cloud (repeatable)")
    p.add_argument("--approx", help="approximate centres: target_id x y z")
    p.add_argument("--sphere-radius", dest="sphere_radius", type=float)
    p.add_argument("--search-radius", dest="search_radius", type=float)
    p.add_argument("--tolerance-mm", dest="tolerance_mm", type=float)
    p.add_argument("-o", "--output", required=True, help="report JSON")

    p = sub.add_parser("spacing", parents=[common], help="mean nearest-neighbour spacing")
    p.add_argument("input")
    p.add_argument("-o", "--output", help="result JSON")
    return parser


COMMANDS = {
    "filter": cmd_filter,
    "classify": cmd_classify,
    "crop": cmd_crop,
    "register": cmd_register,
    "georef": cmd_georef,
    "dsm": cmd_dsm,
    "volume": cmd_volume,
    "diff": cmd_diff,
    "tin": cmd_tin,
    "accuracy": cmd_accuracy,
    "spacing": cmd_spacing,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("survscan: a subcommand is required (see --help)")
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        run = Run(args.command, args, argv)
        code = COMMANDS[args.command](run, args)
        run.write_manifest()
        return code
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SurvscanError as exc:
        print(f"survscan {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"survscan {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
