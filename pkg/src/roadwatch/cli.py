"""Command-line entry point.

Subcommands: calibrate, simulate, run, eval. Every command prints a one-line
JSON summary to stdout, sends diagnostics to stderr, and writes a
run_manifest.json next to its outputs. Exit codes: 0 success, 2 bad input
data, 3 bad configuration (including command-line usage errors).
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from roadwatch import __version__
from roadwatch import calib as _calib
from roadwatch import danger as _danger
from roadwatch import evalharness as _eval
from roadwatch import pipeline as _pipeline
from roadwatch import simulate as _simulate
from roadwatch.errors import ConfigError, DataError

logger = logging.getLogger("roadwatch.cli")


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors map to the config exit code."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _read_json(path, error_cls):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise error_cls(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise error_cls(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from exc


def _write_manifest(out_dir: Path, command: str, args: argparse.Namespace, outputs: List[str]) -> None:
    manifest = {
        "command": command,
        "args": {
            k: v for k, v in sorted(vars(args).items())
            if k != "func" and v is not None
        },
        "outputs": outputs,
        "version": __version__,
        "generated_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
        fh.write("\n")


def cmd_calibrate(args: argparse.Namespace) -> dict:
    """Fit vanishing points from labeled parallel-line bundles and write the
    full calibration JSON."""
    data = _read_json(args.lines, DataError)
    bundles = data.get("parallel_lines") or {}
    fitted = {}
    for group in ("u", "v"):
        if group in data:
            fitted[group] = [float(x) for x in data[group]]
            continue
        segments = bundles.get(group)
        if not segments:
            raise DataError(f"group {group}: no parallel line segments provided")
        try:
            vp = _calib.fit_vanishing_point(segments)
        except DataError as exc:
            raise type(exc)(f"group {group}: {exc}") from exc
        except ValueError as exc:
            raise DataError(f"group {group}: {exc}") from exc
        fitted[group] = [vp.x, vp.y]
    try:
        c = data["c"]
        lam = data["lambda"]
    except KeyError as exc:
        raise DataError(f"{args.lines}: missing required key {exc}") from exc
    camera = _calib.derive_camera(
        u=fitted["u"], v=fitted["v"], c=c,
        d=data.get("d", 10.0), lam=lam, image_size=data.get("image_size"),
    )
    basis = _calib.plane_basis(camera)
    out = _calib.calibration_to_dict(camera)
    out["derived"] = {
        "f": camera.f,
        "w": [camera.w.x, camera.w.y],
        "rho": list(camera.rho),
        "euler_rad": [basis.alpha, basis.beta, basis.gamma],
    }
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as fh:
        json.dump(out, fh, indent=2)
        fh.write("\n")
    _write_manifest(out_path.parent, "calibrate", args, [out_path.name])
    return {"command": "calibrate", "out": str(out_path), "u": fitted["u"], "v": fitted["v"]}


def cmd_simulate(args: argparse.Namespace) -> dict:
    """Generate a synthetic detection stream plus ground truth and the
    matching calibration file."""
    scenario_data = _read_json(args.scenario, ConfigError)
    try:
        scenario = _simulate.load_scenario(scenario_data)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"{args.scenario}: {exc}") from exc
    camera = _simulate.scenario_camera(scenario)
    detections, truth = _simulate.simulate(scenario, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _simulate.write_jsonl(detections, out_dir / "detections.jsonl")
    _simulate.write_jsonl(truth, out_dir / "truth.jsonl")
    with open(out_dir / "calib.json", "w") as fh:
        json.dump(_calib.calibration_to_dict(camera), fh, indent=2)
        fh.write("\n")
    _write_manifest(out_dir, "simulate", args, ["detections.jsonl", "truth.jsonl", "calib.json"])
    return {
        "command": "simulate",
        "out": str(out_dir),
        "frames": scenario.duration_frames,
        "detections": len(detections),
        "vehicles": len(scenario.vehicles),
        "seed": args.seed,
    }


def _apply_overrides(cfg: _pipeline.SceneConfig, args: argparse.Namespace) -> _pipeline.SceneConfig:
    changes = {}
    if args.threshold is not None:
        changes["alert_threshold_m"] = args.threshold
    if args.horizons is not None:
        try:
            changes["horizons"] = tuple(float(h) for h in args.horizons.split(","))
        except ValueError as exc:
            raise ConfigError(f"--horizons must be comma-separated seconds: {exc}") from exc
    if args.grid_cell is not None:
        changes["grid_cell_m"] = args.grid_cell
    return dataclasses.replace(cfg, **changes) if changes else cfg


def cmd_run(args: argparse.Namespace) -> dict:
    """Process a detections stream into frames, alerts and danger rasters."""
    camera = _load_camera(args.calib)
    try:
        cfg = _pipeline.load_scene_config(_read_json(args.scene, ConfigError))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{args.scene}: {exc}") from exc
    cfg = _apply_overrides(cfg, args)
    try:
        records = _pipeline.parse_detections(args.detections)
    except OSError as exc:
        raise DataError(f"cannot read {args.detections}: {exc}") from exc

    out_dir = Path(args.out)
    danger_dir = out_dir / "danger"
    out_dir.mkdir(parents=True, exist_ok=True)
    n_frames = n_alerts = n_maps = 0
    track_ids = set()
    with open(out_dir / "frames.jsonl", "w") as frames_fh, \
            open(out_dir / "alerts.jsonl", "w") as alerts_fh:
        for output in _pipeline.run_stream(records, cfg, camera):
            refs = {}
            for label, dmap in sorted(output.danger_maps.items()):
                danger_dir.mkdir(exist_ok=True)
                name = f"danger_{output.frame_no:06d}_{label}.pgm"
                _danger.save_map(dmap, danger_dir / name)
                refs[label] = f"danger/{name}"
                n_maps += 1
            frames_fh.write(json.dumps(output.to_dict(danger_refs=refs)) + "\n")
            for alert in output.alerts:
                alerts_fh.write(json.dumps({
                    "frame": alert.frame_no,
                    "track_a": alert.track_a,
                    "track_b": alert.track_b,
                    "distance_m": alert.distance_m,
                    "threshold_m": alert.threshold_m,
                }) + "\n")
            n_frames += 1
            n_alerts += len(output.alerts)
            track_ids.update(t.track_id for t in output.tracks)
    _write_manifest(out_dir, "run", args, ["frames.jsonl", "alerts.jsonl", "danger/"])
    return {
        "command": "run",
        "out": str(out_dir),
        "frames": n_frames,
        "tracks": len(track_ids),
        "alerts": n_alerts,
        "danger_maps": n_maps,
    }


def _load_camera(path) -> _calib.CameraCalibration:
    data = _read_json(path, DataError)
    try:
        return _calib.load_calibration(data)
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def _read_jsonl_rows(path) -> List[dict]:
    try:
        return _simulate.read_jsonl(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON on line {exc.lineno}") from exc


def cmd_eval(args: argparse.Namespace) -> dict:
    """Score a pipeline run against simulator ground truth."""
    frame_rows = _read_jsonl_rows(args.frames)
    truth_rows = _read_jsonl_rows(args.truth)
    camera = _load_camera(args.calib) if args.calib else None
    report = _eval.evaluate_run(frame_rows, truth_rows, l_iou=args.l_iou, camera=camera)
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    _write_manifest(report_path.parent, "eval", args, [report_path.name])
    return {
        "command": "eval",
        "report": str(report_path),
        "recall": report["matching"]["recall"],
        "matched": report["matching"]["matched"],
    }


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="roadwatch", description=__doc__)
    parser.add_argument("--version", action="version", version=f"roadwatch {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("calibrate", help="fit vanishing points from labeled parallel lines")
    p.add_argument("--lines", required=True, help="JSON with parallel_lines bundles, c, lambda")
    p.add_argument("--out", required=True, help="output calibration JSON path")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="generate a synthetic detection stream")
    p.add_argument("--scenario", required=True, help="scenario JSON path")
    p.add_argument("--seed", type=int, default=0, help="noise RNG seed (default 0)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run the recognition pipeline on a detection stream")
    p.add_argument("--calib", required=True, help="calibration JSON path")
    p.add_argument("--scene", required=True, help="scene config JSON path")
    p.add_argument("--detections", required=True, help="detections JSONL path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threshold", type=float, default=None, help="override alert threshold, meters")
    p.add_argument("--horizons", default=None, help="override horizons, comma-separated seconds")
    p.add_argument("--grid-cell", type=float, default=None, help="override danger grid cell, meters")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score a pipeline run against ground truth")
    p.add_argument("--frames", required=True, help="pipeline frames.jsonl path")
    p.add_argument("--truth", required=True, help="ground-truth JSONL path")
    p.add_argument("--report", required=True, help="output report JSON path")
    p.add_argument("--l-iou", type=float, default=_eval.DEFAULT_L_IOU,
                   help="period-matching IoU threshold (default 0.5)")
    p.add_argument("--calib", default=None, help="calibration JSON (defaults to the one in truth meta)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args = build_parser().parse_args(argv)
        summary = args.func(args)
    except DataError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return 2
    except ConfigError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return 3
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
