"""Command-line pipeline.

Every command reads one JSON config (flags override config keys, which
override defaults), writes its artifacts into the output directory, and
records a manifest with the config hash and content hashes of every
artifact, so a rerun can be checked for byte-identical replay. Exit
codes: 0 success (including diagnostic non-convergence), 2 input error,
3 contract violation, 4 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .assessment import (
    error_distribution,
    sampling_floor,
    save_distribution_json,
    save_heatmap_csv,
)
from .config import config_hash, load_config, set_override
from .decimate import decimate
from .errors import ContractError, InputError, MorphometryError
from .fileio import load_mesh, load_vertex_mask, save_mesh
from .grid import grid_difference_stats, interpolate_grid, joint_grid_domain, save_height_grid
from .isolation import IsolationParams, isolate_plate, load_plate, rough_split, save_plate
from .mesh import PointCloud, VertexMask
from .morphology import (
    ChannelParams,
    asymmetry_field,
    channel_of_minima,
    contour_lines,
    save_asymmetry,
    save_channel,
    save_contour_lines,
)
from .orientation import orient_to_frame, principal_frame
from .registration import (
    estimate_normals,
    evaluate_metrics,
    pca_initial_transform,
    register,
    register_icp,
)
from .slicing import export_polylines_csv
from .symmetry import CONFIGURATIONS, build_symmetry_frame


def _write_json(payload, path):
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Output directory, manifest bookkeeping and timing for one command."""

    def __init__(self, command, cfg):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg["output_dir"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs = []
        self.timings = {}
        self._t0 = time.perf_counter()

    def path(self, name):
        p = self.out / name
        self.outputs.append(p)
        return p

    def lap(self, label):
        now = time.perf_counter()
        self.timings[label] = round(now - self._t0, 3)
        self._t0 = now

    def finish(self, extra=None):
        manifest = {
            "command": self.command,
            "config": self.cfg,
            "config_hash": config_hash(self.cfg),
            "versions": {
                "violinmorph": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "artifacts": {
                str(p.relative_to(self.out)): _sha256(p)
                for p in self.outputs
                if p.exists()
            },
            "timings_s": self.timings,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        if extra:
            manifest.update(extra)
        _write_json(manifest, self.out / f"manifest_{self.command}.json")
        return manifest


def _require(cfg, key, flag):
    value = cfg["inputs"][key]
    if value is None:
        raise InputError(f"missing input {key!r} (config inputs.{key} or {flag})")
    return value


def _load_cloud(path, scale=None):
    return PointCloud(load_mesh(path, scale=scale).vertices)


def _load_masked(path):
    return load_vertex_mask(path) if path else None


# ---------------------------------------------------------------------------
# commands

def cmd_isolate(cfg):
    run = Run("isolate", cfg)
    body_path = _require(cfg, "body", "--body")
    body = load_mesh(body_path, scale=cfg["inputs"]["scale"])
    body = orient_to_frame(body, principal_frame(body.point_cloud()))
    run.lap("load_and_orient")

    iso = cfg["isolate"]
    sound_hole = _load_masked(cfg["inputs"]["sound_hole_mask"])
    results = {}
    for side in ("sound_board", "back"):
        rough, rough_ids = rough_split(body, side, margin=iso["rough_margin"])
        exclude = None
        if sound_hole is not None:
            inv = {int(v): i for i, v in enumerate(rough_ids)}
            exclude = VertexMask(
                [inv[i] for i in sound_hole.indices if int(i) in inv]
            )
        params = IsolationParams(
            section_axis=iso["section_axis"],
            spacing=iso["spacing"],
            keep_interval=tuple(iso["keep_interval"]) if iso["keep_interval"] else None,
            keep_count=iso["keep_count"],
            exclude=exclude,
            tie_tol=iso["tie_tol"],
        )
        plate = isolate_plate(rough, side, params)
        save_plate(
            plate,
            run.path(f"{side}.ply"),
            run.path(f"{side}_contour.txt"),
            cfg["mesh_format"],
        )
        with open(run.path(f"{side}_contour.csv"), "w", newline="\n") as fh:
            fh.write("x,y,z\n")
            for q in plate.contour_points():
                fh.write(f"{q[0]:.9g},{q[1]:.9g},{q[2]:.9g}\n")
        results[side] = {
            "vertices": plate.mesh.n_vertices,
            "faces": plate.mesh.n_faces,
            "contour_length": len(plate.contour),
        }
        run.lap(side)
    run.finish({"plates": results})
    return 0


def _load_plate_pair(cfg):
    sb = load_plate(
        _require(cfg, "sound_board", "--sound-board"),
        _require(cfg, "sound_board_contour", "--sound-board-contour"),
        side="sound_board",
    )
    back = load_plate(
        _require(cfg, "back", "--back"),
        _require(cfg, "back_contour", "--back-contour"),
        side="back",
    )
    return sb, back


def _registration_rows(s, p, cfg):
    reg = cfg["register"]
    normals = estimate_normals(s, k=reg["normal_k"])
    init = pca_initial_transform(s, p, reg["allow_scale"]) if reg["pca_init"] else None
    common = dict(normals=normals, ftol=reg["ftol"], max_sweeps=reg["max_sweeps"])
    rows = []

    def add(label, report):
        row = report.as_dict()
        row["label"] = label
        rows.append((label, report, row))

    if not reg["all_metrics"]:
        report = register(s, p, metric=reg["metric"],
                          allow_scale=reg["allow_scale"], init=init, **common)
        add(reg["metric"], report)
        return rows

    for metric in ("point_to_point", "point_to_point_sq", "point_to_plane_sq"):
        report = register(s, p, metric=metric,
                          allow_scale=reg["allow_scale"], init=init, **common)
        add(metric, report)
    k_ext = rows[2][1].transform.scale
    rigid_init = pca_initial_transform(s, p, allow_scale=False) if reg["pca_init"] else None
    add("icp_external_scaling",
        register_icp(s, p, scale=k_ext, sample_size=reg["icp_sample_size"],
                     seed=cfg["seed"], normals=normals, init=rigid_init))
    add("icp_no_scaling",
        register_icp(s, p, scale=1.0, sample_size=reg["icp_sample_size"],
                     seed=cfg["seed"], normals=normals, init=rigid_init))
    return rows


def cmd_register(cfg):
    run = Run("register", cfg)
    s = _load_cloud(_require(cfg, "reference", "--reference"), cfg["inputs"]["scale"])
    p = _load_cloud(_require(cfg, "moving", "--moving"), cfg["inputs"]["scale_b"])
    run.lap("load")
    rows = _registration_rows(s, p, cfg)
    run.lap("optimize")
    table = {
        "columns_mm": ["D", "sqrt_D2", "sqrt_D2_plane"],
        "rows": [row for _, _, row in rows],
    }
    _write_json(table, run.path("registration.json"))
    run.finish({"converged": all(r.converged for _, r, _ in rows)})
    return 0


def cmd_assess(cfg):
    run = Run("assess", cfg)
    ref_path = _require(cfg, "reference", "--reference")
    ref_mesh = load_mesh(ref_path, scale=cfg["inputs"]["scale"])
    s = PointCloud(ref_mesh.vertices)
    p = _load_cloud(_require(cfg, "moving", "--moving"), cfg["inputs"]["scale_b"])
    transform_path = cfg["inputs"]["transform"]
    if transform_path is not None:
        from .registration import SimilarityTransform, apply_transform

        with open(transform_path) as fh:
            doc = json.load(fh)
        row = doc["rows"][0] if "rows" in doc else doc
        t = row["transform"] if "transform" in row else row
        p = apply_transform(
            SimilarityTransform(t["translation_mm"], t["angles_deg"], t["scale"]), p
        )
    run.lap("load")
    dist = error_distribution(s, p, threshold=cfg["assess"]["threshold"],
                              bin_width=cfg["assess"]["bin_width"])
    payload = dist.as_dict()
    payload["sampling_floor_mm"] = sampling_floor(ref_mesh)
    _write_json(payload, run.path("assessment.json"))
    save_heatmap_csv(dist, run.path("heatmap.csv"))
    run.lap("distribution")
    run.finish()
    return 0


def cmd_simplify(cfg):
    run = Run("simplify", cfg)
    mesh_path = _require(cfg, "reference", "--reference")
    mesh = load_mesh(mesh_path, scale=cfg["inputs"]["scale"])
    target = cfg["simplify"]["target_faces"]
    if target is None:
        raise InputError("missing simplify.target_faces (--target-faces)")
    run.lap("load")
    simplified = decimate(mesh, int(target))
    run.lap("decimate")
    save_mesh(simplified, run.path("simplified.ply"), cfg["mesh_format"])
    spacing = cfg["simplify"]["grid_spacing"]
    origin, shape = joint_grid_domain([mesh, simplified], spacing)
    g0 = interpolate_grid(mesh, spacing, "upper", origin, shape)
    g1 = interpolate_grid(simplified, spacing, "upper", origin, shape)
    stats = grid_difference_stats(g0, g1)
    _write_json(
        {
            "input_faces": mesh.n_faces,
            "output_faces": simplified.n_faces,
            "vertical_difference_stats_mm": stats,
            "grid_spacing_mm": spacing,
        },
        run.path("simplify_stats.json"),
    )
    run.lap("grid_stats")
    run.finish()
    return 0


def _symmetry_frame(cfg, sb, back):
    sym = cfg["symmetry"]
    return build_symmetry_frame(
        sb, back,
        config=sym["config"],
        mask=_load_masked(cfg["inputs"]["contour_mask"]),
        back_mask=_load_masked(cfg["inputs"]["contour_mask_back"]),
        spacing=sym["grid_spacing"],
        min_nodes=sym["min_nodes"],
    )


def cmd_symmetry(cfg):
    run = Run("symmetry", cfg)
    sb, back = _load_plate_pair(cfg)
    run.lap("load")
    angles = {}
    for name in CONFIGURATIONS:
        try:
            frame_n = build_symmetry_frame(
                sb, back, config=name,
                mask=_load_masked(cfg["inputs"]["contour_mask"]),
                back_mask=_load_masked(cfg["inputs"]["contour_mask_back"]),
                spacing=cfg["symmetry"]["grid_spacing"],
                min_nodes=cfg["symmetry"]["min_nodes"],
            )
            angles[name] = frame_n.angle_deg
        except MorphometryError as exc:
            angles[name] = f"failed: {exc}"
    frame = _symmetry_frame(cfg, sb, back)
    payload = frame.as_dict()
    payload["angles_by_configuration_deg"] = angles
    _write_json(payload, run.path("symmetry.json"))
    run.lap("fit")
    run.finish()
    return 0


def cmd_contours(cfg):
    run = Run("contours", cfg)
    sb, back = _load_plate_pair(cfg)
    frame = _symmetry_frame(cfg, sb, back)
    run.lap("frame")
    for plate in (sb, back):
        lines = contour_lines(plate, frame, spacing=cfg["contours"]["spacing"],
                              max_range=cfg["contours"]["max_range"])
        save_contour_lines(lines, run.out, f"contour_lines_{plate.side}")
        for level in lines.levels:
            name = f"contour_lines_{plate.side}_level_{level:+.3f}.csv"
            run.outputs.append(run.out / name.replace("+", "p").replace("-", "m"))
        run.outputs.append(run.out / f"contour_lines_{plate.side}_index.json")
    run.lap("slice")
    run.finish()
    return 0


def cmd_asymmetry(cfg):
    run = Run("asymmetry", cfg)
    sb, back = _load_plate_pair(cfg)
    frame = _symmetry_frame(cfg, sb, back)
    run.lap("frame")
    field = asymmetry_field(frame.sound_board_grid, frame.back_grid, frame.offset)
    save_asymmetry(field, run.out, "asymmetry")
    for suffix in ("grid.csv", "grid.json", "stats.json", "histogram.csv"):
        run.outputs.append(run.out / f"asymmetry_{suffix}")
    run.lap("field")
    run.finish()
    return 0


def cmd_channel(cfg):
    run = Run("channel", cfg)
    sb, back = _load_plate_pair(cfg)
    frame = _symmetry_frame(cfg, sb, back)
    run.lap("frame")
    params = ChannelParams(
        window_mm=cfg["channel"]["window_mm"],
        stations=cfg["channel"]["stations"],
        smoothing_rms_mm=cfg["channel"]["smoothing_rms_mm"],
    )
    summary = {}
    for plate in (sb, back):
        trace = channel_of_minima(plate, frame, params)
        save_channel(trace, run.path(f"channel_{plate.side}.csv"))
        summary[plate.side] = {
            "stations_detected": int(len(trace.points)),
            "stations_skipped": trace.stations_skipped,
            "no_channel": trace.no_channel,
        }
    run.lap("trace")
    run.finish({"channel": summary})
    return 0


def cmd_pipeline(cfg):
    run = Run("pipeline", cfg)
    rc = cmd_isolate(cfg)
    if rc:
        return rc
    out = Path(cfg["output_dir"])

    plates_cfg = json.loads(json.dumps(cfg))  # deep copy via JSON (config is JSON-safe)
    plates_cfg["inputs"]["sound_board"] = str(out / "sound_board.ply")
    plates_cfg["inputs"]["sound_board_contour"] = str(out / "sound_board_contour.txt")
    plates_cfg["inputs"]["back"] = str(out / "back.ply")
    plates_cfg["inputs"]["back_contour"] = str(out / "back_contour.txt")

    if cfg["inputs"]["body_b"] is not None:
        b_cfg = json.loads(json.dumps(cfg))
        b_cfg["output_dir"] = str(out / "acquisition_b")
        b_cfg["inputs"]["body"] = cfg["inputs"]["body_b"]
        b_cfg["inputs"]["scale"] = cfg["inputs"]["scale_b"]
        rc = cmd_isolate(b_cfg)
        if rc:
            return rc
        reg_cfg = json.loads(json.dumps(plates_cfg))
        reg_cfg["inputs"]["reference"] = str(out / "sound_board.ply")
        reg_cfg["inputs"]["moving"] = str(out / "acquisition_b" / "sound_board.ply")
        reg_cfg["inputs"]["scale"] = None
        reg_cfg["inputs"]["scale_b"] = None
        rc = cmd_register(reg_cfg)
        if rc:
            return rc
        reg_cfg["inputs"]["transform"] = str(out / "registration.json")
        rc = cmd_assess(reg_cfg)
        if rc:
            return rc

    for step in (cmd_symmetry, cmd_contours, cmd_asymmetry, cmd_channel):
        rc = step(plates_cfg)
        if rc:
            return rc
    run.finish()
    return 0


# ---------------------------------------------------------------------------
# argument parsing

_COMMANDS = {
    "isolate": cmd_isolate,
    "register": cmd_register,
    "assess": cmd_assess,
    "simplify": cmd_simplify,
    "symmetry": cmd_symmetry,
    "contours": cmd_contours,
    "asymmetry": cmd_asymmetry,
    "channel": cmd_channel,
    "pipeline": cmd_pipeline,
}

# (flag, dotted config key, type) — flag > config > default
_FLAG_MAP = [
    ("--out", "output_dir", str),
    ("--seed", "seed", int),
    ("--format", "mesh_format", str),
    ("--body", "inputs.body", str),
    ("--body-b", "inputs.body_b", str),
    ("--reference", "inputs.reference", str),
    ("--moving", "inputs.moving", str),
    ("--transform", "inputs.transform", str),
    ("--sound-board", "inputs.sound_board", str),
    ("--sound-board-contour", "inputs.sound_board_contour", str),
    ("--back", "inputs.back", str),
    ("--back-contour", "inputs.back_contour", str),
    ("--scale", "inputs.scale", float),
    ("--scale-b", "inputs.scale_b", float),
    ("--sound-hole-mask", "inputs.sound_hole_mask", str),
    ("--contour-mask", "inputs.contour_mask", str),
    ("--metric", "register.metric", str),
    ("--spacing", "isolate.spacing", float),
    ("--level-spacing", "contours.spacing", float),
    ("--grid-spacing", "symmetry.grid_spacing", float),
    ("--threshold", "assess.threshold", float),
    ("--target-faces", "simplify.target_faces", int),
    ("--symmetry-config", "symmetry.config", str),
    ("--window", "channel.window_mm", float),
    ("--stations", "channel.stations", int),
]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="violinmorph",
        description="Plate morphometry: isolate, register, assess, and extract "
                    "shape features from instrument meshes.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        for flag, _, typ in _FLAG_MAP:
            p.add_argument(flag, type=typ, default=None)
        p.add_argument("--all-metrics", action="store_true", default=None,
                       help="report the full optimized-by x evaluated-by metric table")
        p.add_argument("--no-scale", action="store_true", default=None,
                       help="freeze the scale factor at its initial value")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        for flag, dotted, _ in _FLAG_MAP:
            value = getattr(args, flag.lstrip("-").replace("-", "_"))
            if value is not None:
                set_override(cfg, dotted, value)
        if args.all_metrics:
            set_override(cfg, "register.all_metrics", True)
        if args.no_scale:
            set_override(cfg, "register.allow_scale", False)
        from .config import validate_config

        validate_config(cfg)
        return _COMMANDS[args.command](cfg)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MorphometryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
