"""Readers and writers for every on-disk format the pipeline uses.

Binary layouts (all little-endian):

CVGX voxel grid
    b"CVGX", version u32, dims 3*u32, voxel_size f64 (version 1) or 3*f64
    (version 2, anisotropic voxels), origin 3*f64, count u64, then ``count``
    packed records (x u32, y u32, z u32, class u16).

CVPM point-pixel map
    b"CVPM", version u32, T u32, H u32, W u32, then T*H*W u32 indices.

Point clouds are binary little-endian PLY with x, y, z (double), class
(ushort), sky (uchar) and optionally red, green, blue (uchar).
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import FormatError
from .scene import ClassRegistry, PointCloud, PointPixelMap
from .voxelizer import VoxelGrid

CVGX_MAGIC = b"CVGX"
CVPM_MAGIC = b"CVPM"
CVPM_VERSION = 1

_VOXEL_RECORD = np.dtype([("x", "<u4"), ("y", "<u4"), ("z", "<u4"), ("cls", "<u2")])


# --------------------------------------------------------------------------
# CVGX
# --------------------------------------------------------------------------

def voxel_grid_to_bytes(grid: VoxelGrid) -> bytes:
    buf = io.BytesIO()
    buf.write(CVGX_MAGIC)
    if grid.is_isotropic:
        buf.write(struct.pack("<I3Id", 1, *grid.dims, grid.voxel_size[0]))
    else:
        buf.write(struct.pack("<I3I3d", 2, *grid.dims, *grid.voxel_size))
    buf.write(struct.pack("<3dQ", *grid.origin, len(grid)))
    rec = np.empty(len(grid), dtype=_VOXEL_RECORD)
    rec["x"], rec["y"], rec["z"] = grid.coords.T
    rec["cls"] = grid.classes
    buf.write(rec.tobytes())
    return buf.getvalue()


def voxel_grid_from_bytes(data: bytes) -> VoxelGrid:
    if data[:4] != CVGX_MAGIC:
        raise FormatError("not a CVGX file (bad magic)")
    try:
        (version,) = struct.unpack_from("<I", data, 4)
        off = 8
        dims = struct.unpack_from("<3I", data, off)
        off += 12
        if version == 1:
            vs = struct.unpack_from("<d", data, off) * 3
            off += 8
        elif version == 2:
            vs = struct.unpack_from("<3d", data, off)
            off += 24
        else:
            raise FormatError(f"unsupported CVGX version {version}")
        origin = struct.unpack_from("<3d", data, off)
        off += 24
        (count,) = struct.unpack_from("<Q", data, off)
        off += 8
    except struct.error as exc:
        raise FormatError(f"truncated CVGX header: {exc}") from exc
    if len(data) - off != count * _VOXEL_RECORD.itemsize:
        raise FormatError(f"CVGX body holds {len(data) - off} bytes, expected {count * _VOXEL_RECORD.itemsize}")
    rec = np.frombuffer(data, dtype=_VOXEL_RECORD, count=count, offset=off)
    coords = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.int64)
    return VoxelGrid(dims, vs, origin, coords, rec["cls"])


def write_voxel_grid(path, grid: VoxelGrid) -> None:
    Path(path).write_bytes(voxel_grid_to_bytes(grid))


def read_voxel_grid(path) -> VoxelGrid:
    return voxel_grid_from_bytes(Path(path).read_bytes())


# --------------------------------------------------------------------------
# CVPM
# --------------------------------------------------------------------------

def mapping_to_bytes(mapping: PointPixelMap) -> bytes:
    header = CVPM_MAGIC + struct.pack("<4I", CVPM_VERSION, *mapping.shape)
    return header + mapping.indices.astype("<u4").tobytes()


def mapping_from_bytes(data: bytes) -> PointPixelMap:
    if data[:4] != CVPM_MAGIC:
        raise FormatError("not a CVPM file (bad magic)")
    if len(data) < 20:
        raise FormatError("truncated CVPM header")
    version, T, H, W = struct.unpack_from("<4I", data, 4)
    if version != CVPM_VERSION:
        raise FormatError(f"unsupported CVPM version {version}")
    if len(data) - 20 != T * H * W * 4:
        raise FormatError(f"CVPM body holds {len(data) - 20} bytes, expected {T * H * W * 4}")
    idx = np.frombuffer(data, dtype="<u4", offset=20).reshape(T, H, W)
    return PointPixelMap(idx)


def write_mapping(path, mapping: PointPixelMap) -> None:
    Path(path).write_bytes(mapping_to_bytes(mapping))


def read_mapping(path) -> PointPixelMap:
    return mapping_from_bytes(Path(path).read_bytes())


# --------------------------------------------------------------------------
# PLY
# --------------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
}


def point_cloud_to_bytes(cloud: PointCloud) -> bytes:
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("class", "<u2"), ("sky", "u1")]
    if cloud.rgb is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    rec = np.empty(len(cloud), dtype=np.dtype(fields))
    rec["x"], rec["y"], rec["z"] = cloud.positions.T
    rec["class"] = cloud.semantics
    rec["sky"] = cloud.sky
    if cloud.rgb is not None:
        rec["red"], rec["green"], rec["blue"] = cloud.rgb.T
    names = {"<f8": "double", "<u2": "ushort", "u1": "uchar"}
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(cloud)}"]
    header += [f"property {names[t]} {n}" for n, t in fields]
    header.append("end_header")
    return ("\n".join(header) + "\n").encode("ascii") + rec.tobytes()


def point_cloud_from_bytes(data: bytes) -> PointCloud:
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError("not a PLY file")
    lines = data[:end].decode("ascii").splitlines()
    body = data[end + len(b"end_header\n"):]
    if "format binary_little_endian 1.0" not in lines:
        raise FormatError("only binary_little_endian PLY is supported")
    n, fields, in_vertex = None, [], False
    for line in lines:
        parts = line.split()
        if parts[:1] == ["element"]:
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                n = int(parts[2])
            elif n is not None:
                break
        elif parts[:1] == ["property"] and in_vertex:
            if parts[1] == "list" or parts[1] not in _PLY_TYPES:
                raise FormatError(f"unsupported PLY property: {line}")
            fields.append((parts[2], _PLY_TYPES[parts[1]]))
    if n is None:
        raise FormatError("PLY has no vertex element")
    dtype = np.dtype(fields)
    if len(body) < n * dtype.itemsize:
        raise FormatError("PLY body is truncated")
    rec = np.frombuffer(body, dtype=dtype, count=n)
    names = set(dtype.names)
    if not {"x", "y", "z"} <= names:
        raise FormatError("PLY lacks x, y, z")
    pos = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    sem = rec["class"] if "class" in names else None
    sky = rec["sky"].astype(bool) if "sky" in names else None
    rgb = None
    if {"red", "green", "blue"} <= names:
        rgb = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1)
    return PointCloud(pos, sem, sky, rgb)


def write_point_cloud(path, cloud: PointCloud) -> None:
    Path(path).write_bytes(point_cloud_to_bytes(cloud))


def read_point_cloud(path) -> PointCloud:
    return point_cloud_from_bytes(Path(path).read_bytes())


# --------------------------------------------------------------------------
# PFM
# --------------------------------------------------------------------------

def pfm_to_bytes(image) -> bytes:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise FormatError("only grayscale PFM is written")
    H, W = image.shape
    header = f"Pf\n{W} {H}\n-1.0\n".encode("ascii")
    return header + np.flipud(image).astype("<f4").tobytes()


def pfm_from_bytes(data: bytes) -> np.ndarray:
    parts, off = [], 0
    while len(parts) < 4:
        nxt = data.find(b"\n", off)
        if nxt < 0:
            raise FormatError("truncated PFM header")
        parts.extend(data[off:nxt].split())
        off = nxt + 1
    kind, W, H, scale = parts[0], int(parts[1]), int(parts[2]), float(parts[3])
    if kind != b"Pf":
        raise FormatError(f"only grayscale PFM ('Pf') is supported, got {kind!r}")
    dt = "<f4" if scale < 0 else ">f4"
    if len(data) - off != W * H * 4:
        raise FormatError("PFM body size does not match its header")
    img = np.frombuffer(data, dtype=dt, offset=off).reshape(H, W)
    return np.flipud(img).astype(np.float64)


def write_pfm(path, image) -> None:
    Path(path).write_bytes(pfm_to_bytes(image))


def read_pfm(path) -> np.ndarray:
    return pfm_from_bytes(Path(path).read_bytes())


# --------------------------------------------------------------------------
# PNG
# --------------------------------------------------------------------------

def _save_png(img: Image.Image, path) -> None:
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False, compress_level=6)
    Path(path).write_bytes(buf.getvalue())


def write_rgb_png(path, rgb) -> None:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise FormatError(f"RGB image must be H x W x 3, got {rgb.shape}")
    _save_png(Image.frombytes("RGB", (rgb.shape[1], rgb.shape[0]), rgb.tobytes()), path)


def read_rgb_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.array(img.convert("RGB"), dtype=np.uint8)


def write_palette_png(path, labels, registry: ClassRegistry) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise FormatError("label image must be H x W")
    if labels.size and labels.max() > 255:
        raise FormatError("palette PNG holds at most 256 classes")
    img = Image.frombytes("P", (labels.shape[1], labels.shape[0]),
                          np.ascontiguousarray(labels, dtype=np.uint8).tobytes())
    pal = registry.palette().reshape(-1).tolist()
    img.putpalette(pal + [0] * (768 - len(pal)))
    _save_png(img, path)


def read_palette_png(path) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode != "P":
            raise FormatError(f"{path}: expected a palette PNG, got mode {img.mode}")
        return np.array(img, dtype=np.uint8).astype(np.uint16)


def write_mask_png(path, mask) -> None:
    mask = np.asarray(mask, dtype=bool)
    img = Image.frombytes("L", (mask.shape[1], mask.shape[0]),
                          (mask.astype(np.uint8) * 255).tobytes()).convert("1")
    _save_png(img, path)


def read_mask_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.array(img.convert("1"), dtype=bool)


# --------------------------------------------------------------------------
# Extraction bundles
# --------------------------------------------------------------------------

EXTRACTION_FILES = ("mapping.cvpm", "points.ply", "extraction.json")


def save_extraction(directory, result, trajectory) -> list[Path]:
    """Write mapping, points and metadata of an extraction into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_mapping(d / "mapping.cvpm", result.mapping)
    write_point_cloud(d / "points.ply", result.cloud)
    meta = {
        "height": result.mapping.H,
        "width": result.mapping.W,
        "center_index": result.center_index,
        "trajectory": {
            "locations": trajectory.locations.tolist(),
            "headings": trajectory.headings.tolist(),
            "camera_height": trajectory.camera_height,
        },
        "frames": [
            {"frame": s.frame, "rank": s.rank, "points_before": s.points_before,
             "new_points": s.new_points, "reuse_ratio": s.reuse_ratio, "reused_from": s.reused_from}
            for s in result.stats
        ],
    }
    (d / "extraction.json").write_text(json.dumps(meta, indent=2))
    return [d / name for name in EXTRACTION_FILES]


def load_extraction(directory):
    """Inverse of :func:`save_extraction`; returns (ExtractionResult, Trajectory)."""
    from .extraction import ExtractionResult, FrameStats, created_at_from_mapping
    from .panorama import trajectory_cameras
    from .scene import Trajectory

    d = Path(directory)
    try:
        meta = json.loads((d / "extraction.json").read_text())
        tr = meta["trajectory"]
        traj = Trajectory(tr["locations"], tr["headings"], tr["camera_height"], meta["center_index"])
        stats = [FrameStats(**s) for s in meta["frames"]]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{d / 'extraction.json'}: malformed metadata: {exc}") from exc
    mapping = read_mapping(d / "mapping.cvpm")
    cloud = read_point_cloud(d / "points.ply")
    if mapping.T != len(traj):
        raise FormatError("mapping frame count does not match the stored trajectory")
    mapping.check_complete(len(cloud))
    cameras = trajectory_cameras(traj, mapping.H, mapping.W)
    created = created_at_from_mapping(mapping, traj.center_index)
    return ExtractionResult(cloud, mapping, stats, created, traj.center_index, cameras), traj
