"""``crossview`` command line.

Exit codes: 0 success, 1 validation error (bad config, flags or file
contents), 2 I/O error. Failures print a single ``error: ...`` line.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import set_threads
from .colorize import build_ground_truth_video, ground_truth_geometry, normalize_depth
from .config import PipelineConfig
from .exceptions import ConfigurationError, FormatError
from .extraction import extract, render_channel
from .formats import (
    load_extraction,
    read_mask_png,
    read_palette_png,
    read_pfm,
    read_rgb_png,
    read_voxel_grid,
    save_extraction,
    write_mask_png,
    write_palette_png,
    write_pfm,
    write_rgb_png,
    write_voxel_grid,
)
from .metrics import compare_sequences, self_consistency
from .panorama import DepthSemanticsMap, PanoramaCamera, warp_satellite, zbuffer
from .sample import make_sample_scene, sample_origin
from .scene import ClassRegistry, SemanticHeightField, Trajectory, class_registry_default
from .stylize import stylize_points, upsample2x
from .voxelizer import build_occupancy

log = logging.getLogger("crossview")


class UsageError(ConfigurationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# Shared helpers
# --------------------------------------------------------------------------

def load_registry(cfg: PipelineConfig) -> ClassRegistry:
    if cfg.scene.classes:
        return ClassRegistry.load(cfg.scene.classes)
    return class_registry_default()


def load_scene(cfg: PipelineConfig):
    """(field, satellite raster or None, registry) from the config."""
    registry = load_registry(cfg)
    sc = cfg.scene
    if sc.elevation is None:
        field, sat = make_sample_scene(registry=registry)
        return field, sat, registry
    elev = read_pfm(sc.elevation)
    if sc.semantics is None:
        raise ConfigurationError("scene.semantics is required with scene.elevation")
    sem = read_palette_png(sc.semantics)
    origin = sc.origin
    if origin is None:
        if elev.shape[0] != elev.shape[1]:
            half_w = elev.shape[1] * sc.cell_size / 2
            half_h = elev.shape[0] * sc.cell_size / 2
            origin = (-half_w + sc.cell_size / 2, half_h - sc.cell_size / 2)
        else:
            origin = sample_origin(elev.shape[0], sc.cell_size)
    field = SemanticHeightField(elev, sem, sc.cell_size, origin)
    field.validate(registry)
    sat = read_rgb_png(sc.satellite) if sc.satellite else None
    return field, sat, registry


def build_grid(cfg, field):
    v = cfg.voxel
    return build_occupancy(field, v.vertical, v.horizontal, v.max_height)


def make_trajectory(cfg: PipelineConfig, uturn=None, frames=None) -> Trajectory:
    t = cfg.trajectory
    h = cfg.render.camera_height
    if uturn if uturn is not None else t.uturn:
        return Trajectory.uturn(t.center, t.heading, frames or t.uturn_frames, t.step_m, h)
    traj = Trajectory.straight(t.center, t.heading, t.range_m, t.step_m, h)
    if len(traj) != t.frames:
        raise ConfigurationError(f"trajectory has {len(traj)} frames, config says {t.frames}")
    return traj


def _write_manifest(out: Path, entries, cameras) -> Path:
    frames = []
    for entry, cam in zip(entries, cameras):
        entry = dict(entry)
        entry["camera"] = {"x": cam.position[0], "y": cam.position[1], "heading": cam.heading}
        frames.append(entry)
    path = out / "manifest.json"
    path.write_text(json.dumps({"frames": frames}, indent=2))
    return path


def _ray_lengths(result):
    """Per-frame distance from each camera to the pixel's point."""
    out = np.empty(result.mapping.shape)
    pos = result.cloud.positions
    for t, cam in enumerate(result.cameras):
        idx = result.mapping.indices[t].astype(np.int64) - 1
        out[t] = np.linalg.norm(pos[idx] - np.asarray(cam.position), axis=-1)
    return out


def write_frames(out: Path, rgb=None, sem=None, depth=None, mask=None, registry=None, cameras=None):
    out.mkdir(parents=True, exist_ok=True)
    n = len(next(x for x in (rgb, sem, depth, mask) if x is not None))
    paths, entries = [], []
    for t in range(n):
        entry = {}
        if rgb is not None:
            p = out / f"rgb_{t:03d}.png"
            write_rgb_png(p, rgb[t])
            entry["rgb"] = p.name
            paths.append(p)
        if sem is not None:
            p = out / f"sem_{t:03d}.png"
            write_palette_png(p, sem[t], registry)
            entry["sem"] = p.name
            paths.append(p)
        if depth is not None:
            p = out / f"depth_{t:03d}.pfm"
            write_pfm(p, depth[t])
            entry["depth"] = p.name
            paths.append(p)
        if mask is not None:
            p = out / f"mask_{t:03d}.png"
            write_mask_png(p, mask[t])
            entry["mask"] = p.name
            paths.append(p)
        entries.append(entry)
    if cameras is not None:
        paths.append(_write_manifest(out, entries, cameras))
    return paths


def _read_png_dir(directory, reader):
    files = sorted(Path(directory).glob("*.png"))
    if not files:
        raise FileNotFoundError(f"no PNG files in {directory}")
    return np.stack([reader(f) for f in files]), files


def _rgb_frames_dir(directory):
    d = Path(directory)
    files = sorted(d.glob("rgb_*.png")) or sorted(d.glob("*.png"))
    if not files:
        raise FileNotFoundError(f"no PNG files in {directory}")
    return np.stack([read_rgb_png(f) for f in files]), files


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_voxelize(cfg, args):
    field, _, _ = load_scene(cfg)
    grid = build_grid(cfg, field)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_voxel_grid(out, grid)
    log.info("occupancy grid %s, %d occupied voxels", grid.dims, len(grid))
    return [out]


def _grid_for(cfg, args):
    if getattr(args, "grid", None):
        return read_voxel_grid(args.grid)
    field, _, _ = load_scene(cfg)
    return build_grid(cfg, field)


def cmd_extract(cfg, args):
    grid = _grid_for(cfg, args)
    registry = load_registry(cfg)
    traj = make_trajectory(cfg)
    r = cfg.render
    result = extract(grid, traj, r.height, r.width, r.epsilon, r.sky_radius, registry.sky_id)
    log.info("extracted %d points over %d frames", len(result.cloud), len(traj))
    return save_extraction(Path(args.out), result, traj)


def cmd_render(cfg, args):
    result, _ = load_extraction(args.extraction)
    registry = load_registry(cfg)
    rgb = render_channel(result, stylize_points(result.cloud, registry, cfg.seed), "rgb").data
    if cfg.render.upsample:
        rgb = upsample2x(rgb)
    sem = render_channel(result, result.cloud.semantics, "class").data
    return write_frames(Path(args.out), rgb, sem, _ray_lengths(result), registry=registry,
                        cameras=result.cameras)


def cmd_gt_video(cfg, args):
    registry = load_registry(cfg)
    rgb = read_rgb_png(args.center_rgb)
    sem = read_palette_png(args.center_sem)
    depth = read_pfm(args.center_depth)
    if not (rgb.shape[:2] == sem.shape == depth.shape):
        raise FormatError("center RGB, semantics and depth differ in size")
    sky = sem == registry.sky_id
    depth = np.where(sky, cfg.render.sky_radius, depth)
    d = normalize_depth(DepthSemanticsMap(depth, sem, sky, cfg.render.sky_radius), cfg.render.camera_height)
    traj = make_trajectory(cfg)
    geom = ground_truth_geometry(d, traj, cfg.render.epsilon)
    rgb_v, sem_v = build_ground_truth_video(rgb, sem, d, geom, cfg.knn.k)
    log.info("ground-truth video: %d frames, %d points", len(rgb_v), len(geom.cloud))
    return write_frames(Path(args.out), rgb_v.data, sem_v.data, _ray_lengths(geom),
                        registry=registry, cameras=geom.cameras)


def cmd_warp(cfg, args):
    field, sat, _ = load_scene(cfg)
    if sat is None:
        raise ConfigurationError("scene.satellite is required for warping")
    result, _ = load_extraction(args.extraction)
    frames = warp_satellite(sat, field, result.cloud, result.mapping, result.cameras)
    return write_frames(Path(args.out), frames.data, mask=frames.mask, cameras=result.cameras)


def _emit_report(report, out):
    print(report.to_table())
    paths = []
    if out:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report.to_json())
        txt = out.with_suffix(".txt")
        txt.write_text(report.to_table() + "\n")
        paths = [out, txt]
    return paths


def cmd_metrics(cfg, args):
    a, fa = _rgb_frames_dir(args.a)
    b, fb = _rgb_frames_dir(args.b)
    if len(fa) != len(fb):
        raise FormatError(f"{args.a} has {len(fa)} frames, {args.b} has {len(fb)}")
    weights = None
    if args.weights:
        weights, _ = _read_png_dir(args.weights, read_mask_png)
    return _emit_report(compare_sequences(a, b, weights), args.out)


def cmd_uturn(cfg, args):
    field, _, registry = load_scene(cfg)
    grid = build_grid(cfg, field)
    frames = args.frames or cfg.trajectory.uturn_frames
    traj = make_trajectory(cfg, uturn=True, frames=frames)
    traj.check_inside(field)
    r = cfg.render
    result = extract(grid, traj, r.height, r.width, r.epsilon, r.sky_radius, registry.sky_id)
    rgb = render_channel(result, stylize_points(result.cloud, registry, cfg.seed), "rgb").data
    report = self_consistency(rgb)
    log.info("u-turn: %d frames, %d pairs, mean MSE %.6g", frames, len(report.labels), report.mean["mse"])
    out = Path(args.out)
    paths = _emit_report(report, out / "uturn_report.json")
    if args.save_frames:
        paths += write_frames(out / "frames", rgb, cameras=result.cameras)
    return paths


def cmd_sample(cfg, args):
    """Write the sample scene and a rendered center frame as standalone input files."""
    registry = load_registry(cfg)
    field, sat = make_sample_scene(registry=registry)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "elevation.pfm", out / "semantics.png", out / "satellite.png", out / "classes.json"]
    write_pfm(paths[0], field.elevation)
    write_palette_png(paths[1], field.semantics, registry)
    write_rgb_png(paths[2], sat)
    paths[3].write_text(registry.to_json())

    grid = build_grid(cfg, field)
    traj = make_trajectory(cfg)
    r = cfg.render
    c = traj.center_index
    cam = PanoramaCamera(traj.camera_positions()[c], traj.headings[c], r.height, r.width)
    d = zbuffer(grid, cam, r.sky_radius, registry.sky_id)
    center = extract(grid, Trajectory(traj.locations[c:c + 1], traj.headings[c:c + 1], traj.camera_height),
                     r.height, r.width, r.epsilon, r.sky_radius, registry.sky_id)
    rgb = render_channel(center, stylize_points(center.cloud, registry, cfg.seed), "rgb").data[0]
    extra = [out / "center_rgb.png", out / "center_sem.png", out / "center_depth.pfm", out / "config.json"]
    write_rgb_png(extra[0], rgb)
    write_palette_png(extra[1], d.semantics, registry)
    write_pfm(extra[2], d.depth)
    sample_cfg = cfg.to_dict()
    sample_cfg["scene"].update(elevation=paths[0].name, semantics=paths[1].name, satellite=paths[2].name,
                               classes=paths[3].name, origin=list(field.origin),
                               cell_size=field.cell_size)
    extra[3].write_text(json.dumps(sample_cfg, indent=2, sort_keys=True))
    return paths + extra


COMMANDS = {
    "voxelize": cmd_voxelize,
    "extract": cmd_extract,
    "render": cmd_render,
    "gt-video": cmd_gt_video,
    "warp": cmd_warp,
    "metrics": cmd_metrics,
    "uturn": cmd_uturn,
    "sample": cmd_sample,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. render.width=256 (repeatable)")
    common.add_argument("--threads", type=int, help="worker thread cap (also CROSSVIEW_THREADS)")
    common.add_argument("--log-level", default="INFO")

    parser = _Parser(prog="crossview", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("voxelize", parents=[common], help="height field -> CVGX occupancy grid")
    p.add_argument("--out", default="voxels.cvgx")

    p = sub.add_parser("extract", parents=[common], help="visible points + point-pixel map")
    p.add_argument("--grid", help="CVGX grid; built from the scene when omitted")
    p.add_argument("--out", default="extraction")

    p = sub.add_parser("render", parents=[common], help="render stylized frames through the map")
    p.add_argument("--extraction", required=True)
    p.add_argument("--out", default="frames")

    p = sub.add_parser("gt-video", parents=[common], help="ground-truth video from a center frame")
    p.add_argument("--center-rgb", required=True)
    p.add_argument("--center-sem", required=True)
    p.add_argument("--center-depth", required=True)
    p.add_argument("--out", default="gt_video")

    p = sub.add_parser("warp", parents=[common], help="warp the satellite image into the frames")
    p.add_argument("--extraction", required=True)
    p.add_argument("--out", default="warped")

    p = sub.add_parser("metrics", parents=[common], help="PSNR/SSIM/SharpDiff/MSE between frame dirs")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--weights", help="directory of mask PNGs")
    p.add_argument("--out", help="report JSON path (a .txt table is written next to it)")

    p = sub.add_parser("uturn", parents=[common], help="u-turn self-consistency on the scene")
    p.add_argument("--frames", type=int)
    p.add_argument("--out", default="uturn")
    p.add_argument("--save-frames", action="store_true")

    p = sub.add_parser("sample", parents=[common], help="export the bundled sample scene")
    p.add_argument("--out", default="sample_scene")
    return parser


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        cfg = PipelineConfig.load(args.config, args.overrides)
        threads = set_threads(args.threads)
        log.info("threads: %d", threads)
        log.info("resolved config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
        outputs = COMMANDS[args.command](cfg, args)
        for path in outputs:
            log.info("wrote %s sha256=%s", path, sha256_file(path))
        return 0
    except OSError as exc:
        print(f"error: {exc}".replace("\n", " "), file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}".replace("\n", " "), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
