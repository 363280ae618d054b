#!/usr/bin/env python3
"""Convert a KITTI-style drive into an mrsim frame stream.

Input layout (the usual KITTI raw + depth-completion arrangement; every path
can be overridden):

    DRIVE/image_02/data/0000000000.png          8-bit RGB
    DRIVE/image_02/timestamps.txt               "YYYY-MM-DD hh:mm:ss.fffffffff" per frame
    DRIVE/proj_depth/groundtruth/image_02/*.png 16-bit, depth = value / 256 m, 0 = no return
    DRIVE/calib_cam_to_cam.txt                  P_rect_02 gives fx, fy, cx, cy
    DRIVE/poses.txt                             12 floats per frame: 3x4 camera-to-world,
                                                world = first camera frame (x right, y down, z forward)

Output: manifest.json, color/%06d.png, depth/%06d.bin (f32le metres, 0 = invalid),
poses.csv (index,t,x,y,z,qx,qy,qz,qw) in a z-up world whose origin is the ground
under the first camera, x along its initial viewing direction.

Frames without a depth map (depth annotations skip the first and last few) are
dropped; the remaining frames are renumbered from 0 and their times re-based to
the first kept frame.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

# KITTI camera axes (x right, y down, z forward) to the z-up world (x forward, y left, z up).
KITTI_TO_WORLD = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


class ConversionError(Exception):
    pass


def read_intrinsics(calib: Path, key: str) -> tuple[float, float, float, float]:
    for line in calib.read_text().splitlines():
        name, _, rest = line.partition(":")
        if name.strip() == key:
            p = np.array([float(v) for v in rest.split()])
            if p.size != 12:
                raise ConversionError(f"{calib}: {key} must have 12 values, found {p.size}")
            p = p.reshape(3, 4)
            return p[0, 0], p[1, 1], p[0, 2], p[1, 2]
    raise ConversionError(f"{calib}: no {key} entry")


def read_poses(path: Path) -> list[np.ndarray]:
    poses = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        v = np.array([float(x) for x in line.split()])
        if v.size != 12:
            raise ConversionError(f"{path}:{n}: expected 12 values, found {v.size}")
        m = np.eye(4)
        m[:3, :] = v.reshape(3, 4)
        poses.append(m)
    return poses


def read_timestamps(path: Path) -> list[tuple[int, int]]:
    """(unix seconds, nanoseconds) per line; kept as integers so re-basing is exact."""
    out = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        # datetime stops at microseconds; split the fraction off.
        stamp, _, frac = line.partition(".")
        try:
            base = dt.datetime.strptime(stamp, "%Y-%m-%d %H:%M:%S").replace(tzinfo=dt.timezone.utc)
        except ValueError as e:
            raise ConversionError(f"{path}:{n}: {e}") from e
        if frac and not frac.isdigit():
            raise ConversionError(f"{path}:{n}: bad fraction {frac!r}")
        out.append((int(base.timestamp()), int(frac.ljust(9, "0")[:9]) if frac else 0))
    return out


def quaternion_xyzw(r: np.ndarray) -> tuple[float, float, float, float]:
    """Rotation matrix to a unit quaternion (x, y, z, w), w >= 0."""
    tr = np.trace(r)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        w, x, y, z = 0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        w, x, y, z = (r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        w, x, y, z = (r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s
    else:
        s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        w, x, y, z = (r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s
    q = np.array([x, y, z, w])
    q /= np.linalg.norm(q)
    if q[3] < 0:
        q = -q
    return tuple(float(v) for v in q)


def convert(args: argparse.Namespace) -> int:
    drive = Path(args.drive)
    images = Path(args.images or drive / "image_02" / "data")
    depth_dir = Path(args.depth or drive / "proj_depth" / "groundtruth" / "image_02")
    calib = Path(args.calib or drive / "calib_cam_to_cam.txt")
    poses_path = Path(args.poses or drive / "poses.txt")
    stamps_path = Path(args.timestamps or drive / "image_02" / "timestamps.txt")
    out = Path(args.out)

    for p in (images, depth_dir, calib, poses_path, stamps_path):
        if not p.exists():
            raise ConversionError(f"{p}: missing")

    fx, fy, cx, cy = read_intrinsics(calib, args.camera)
    poses = read_poses(poses_path)
    stamps = read_timestamps(stamps_path)
    frames = sorted(images.glob("*.png"))
    if len(poses) != len(frames) or len(stamps) != len(frames):
        raise ConversionError(f"{len(frames)} images, {len(poses)} poses, {len(stamps)} timestamps: counts differ")

    kept = [(i, f) for i, f in enumerate(frames) if (depth_dir / f.name).exists()]
    if not kept:
        raise ConversionError(f"{depth_dir}: no depth maps match the images")

    (out / "color").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    t0 = stamps[kept[0][0]]
    lift = np.array([0.0, 0.0, args.camera_height])
    rows = ["index,t,x,y,z,qx,qy,qz,qw"]
    width = height = None
    for n, (i, f) in enumerate(kept):
        rgb = Image.open(f).convert("RGB")
        raw = np.asarray(Image.open(depth_dir / f.name))
        if width is None:
            width, height = rgb.size
        if rgb.size != (width, height) or raw.shape != (height, width):
            raise ConversionError(f"{f.name}: image or depth size differs from the first frame ({width}x{height})")
        if raw.dtype not in (np.uint16, np.int32):
            raise ConversionError(f"{depth_dir / f.name}: expected a 16-bit depth PNG")
        rgb.save(out / "color" / f"{n:06d}.png")
        (raw.astype(np.float64) / 256.0).astype("<f4").tofile(out / "depth" / f"{n:06d}.bin")

        r = KITTI_TO_WORLD @ poses[i][:3, :3]
        t = KITTI_TO_WORLD @ poses[i][:3, 3] + lift
        qx, qy, qz, qw = quaternion_xyzw(r)
        dt_s = (stamps[i][0] - t0[0]) + (stamps[i][1] - t0[1]) * 1e-9
        fields = (dt_s, t[0], t[1], t[2], qx, qy, qz, qw)
        rows.append(f"{n}," + ",".join(repr(float(v)) for v in fields))

    manifest = {
        "width": width, "height": height, "fx": fx, "fy": fy, "cx": cx, "cy": cy,
        "near": args.near, "far": args.far, "frame_count": len(kept), "depth_format": "f32le",
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (out / "poses.csv").write_text("\n".join(rows) + "\n")
    print(f"wrote {len(kept)} frames ({len(frames) - len(kept)} without depth skipped) to {out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("drive", help="KITTI-style drive directory")
    ap.add_argument("--out", required=True, help="output stream directory")
    ap.add_argument("--images", help="colour frames (default DRIVE/image_02/data)")
    ap.add_argument("--depth", help="16-bit depth maps (default DRIVE/proj_depth/groundtruth/image_02)")
    ap.add_argument("--calib", help="calibration file (default DRIVE/calib_cam_to_cam.txt)")
    ap.add_argument("--camera", default="P_rect_02", help="projection matrix key in the calibration file")
    ap.add_argument("--poses", help="camera poses (default DRIVE/poses.txt)")
    ap.add_argument("--timestamps", help="frame timestamps (default DRIVE/image_02/timestamps.txt)")
    ap.add_argument("--camera-height", type=float, default=1.65, help="camera height above ground, m")
    ap.add_argument("--near", type=float, default=0.1)
    ap.add_argument("--far", type=float, default=80.0)
    args = ap.parse_args(argv)
    try:
        return convert(args)
    except (ConversionError, OSError, ValueError) as e:
        print(f"kitti_to_stream: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
