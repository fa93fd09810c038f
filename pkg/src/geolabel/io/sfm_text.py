"""Reader/writer for the sparse SfM text model (cameras.txt, images.txt, points3D.txt)."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..errors import DanglingReference, ParseError, UnknownCameraModel
from ..geometry import (
    CameraModel,
    DistortionCoeffs,
    PoseSE3,
    quaternion_to_rotation,
    rotation_to_quaternion,
)
from ..lift import SemanticPointCloud
from ..scene import Frame, SceneModel

logger = logging.getLogger(__name__)

# model name -> number of parameters
CAMERA_MODELS = {
    "SIMPLE_PINHOLE": 3,
    "PINHOLE": 4,
    "SIMPLE_RADIAL": 4,
    "RADIAL": 5,
    "OPENCV": 8,
    "FULL_OPENCV": 12,
}


def _camera_from_params(model: str, w: int, h: int, p: list[float], path, lineno) -> CameraModel:
    if model == "SIMPLE_PINHOLE":
        f, cx, cy = p
        return CameraModel(f, f, cx, cy, w, h)
    if model == "PINHOLE":
        fx, fy, cx, cy = p
        return CameraModel(fx, fy, cx, cy, w, h)
    if model == "SIMPLE_RADIAL":
        f, cx, cy, k = p
        return CameraModel(f, f, cx, cy, w, h, DistortionCoeffs(k1=k))
    if model == "RADIAL":
        f, cx, cy, k1, k2 = p
        return CameraModel(f, f, cx, cy, w, h, DistortionCoeffs(k1=k1, k2=k2))
    if model == "OPENCV":
        fx, fy, cx, cy, k1, k2, p1, p2 = p
        return CameraModel(fx, fy, cx, cy, w, h, DistortionCoeffs(k1, k2, 0.0, p1, p2))
    fx, fy, cx, cy, k1, k2, p1, p2, k3, k4, k5, k6 = p
    if k4 or k5 or k6:
        raise UnknownCameraModel("rational distortion terms k4..k6 are not supported", path, lineno)
    return CameraModel(fx, fy, cx, cy, w, h, DistortionCoeffs(k1, k2, k3, p1, p2))


def _data_lines(path: Path):
    """Yield ``(lineno, stripped_line)`` skipping comments; blank lines are kept."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line.startswith("#"):
                continue
            yield lineno, line


def read_cameras(path: Path) -> dict:
    cameras = {}
    for lineno, line in _data_lines(path):
        if not line:
            continue
        tok = line.split()
        if len(tok) < 4:
            raise ParseError("camera line needs ID MODEL WIDTH HEIGHT PARAMS", path, lineno)
        model = tok[1]
        if model not in CAMERA_MODELS:
            raise UnknownCameraModel(f"unsupported camera model {model!r}", path, lineno)
        try:
            cam_id, w, h = int(tok[0]), int(tok[2]), int(tok[3])
            params = [float(x) for x in tok[4:]]
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from None
        if len(params) != CAMERA_MODELS[model]:
            raise ParseError(
                f"{model} expects {CAMERA_MODELS[model]} parameters, got {len(params)}", path, lineno
            )
        try:
            cameras[cam_id] = _camera_from_params(model, w, h, params, path, lineno)
        except (ValueError, TypeError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(str(exc), path, lineno) from None
    return cameras


def read_images(path: Path) -> list[tuple]:
    """Returns ``(image_id, name, camera_id, pose, uv, raw_point_ids)`` per image."""
    images = []
    lines = iter(_data_lines(path))
    for lineno, line in lines:
        if not line:
            continue
        tok = line.split()
        if len(tok) < 10:
            raise ParseError("image line needs ID QW QX QY QZ TX TY TZ CAMERA_ID NAME", path, lineno)
        try:
            image_id = int(tok[0])
            q = [float(x) for x in tok[1:5]]
            t = [float(x) for x in tok[5:8]]
            cam_id = int(tok[8])
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from None
        name = " ".join(tok[9:])
        try:
            pose = PoseSE3(quaternion_to_rotation(*q), t)
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from None
        try:
            obs_lineno, obs = next(lines)
        except StopIteration:
            # a trailing image without a points line is tolerated as zero observations
            obs_lineno, obs = lineno + 1, ""
        vals = obs.split()
        if len(vals) % 3:
            raise ParseError("observation line must hold X Y POINT3D_ID triplets", path, obs_lineno)
        try:
            arr = np.array([float(v) for v in vals], dtype=float).reshape(-1, 3)
        except ValueError as exc:
            raise ParseError(str(exc), path, obs_lineno) from None
        pids = arr[:, 2]
        if np.any(pids != np.round(pids)):
            raise ParseError("POINT3D_ID must be an integer", path, obs_lineno)
        images.append((image_id, name, cam_id, pose, arr[:, :2], pids.astype(np.int64), lineno))
    return images


def read_points(path: Path):
    """Returns ``(ids, xyz, rgb, errors)``; tracks are rebuilt from images.txt."""
    ids, xyz, rgb, err = [], [], [], []
    for lineno, line in _data_lines(path):
        if not line:
            continue
        tok = line.split()
        if len(tok) < 8 or (len(tok) - 8) % 2:
            raise ParseError("point line needs ID X Y Z R G B ERROR [IMAGE_ID POINT2D_IDX]...", path, lineno)
        try:
            ids.append(int(tok[0]))
            xyz.append([float(v) for v in tok[1:4]])
            rgb.append([int(v) for v in tok[4:7]])
            err.append(float(tok[7]))
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from None
    return (
        np.array(ids, dtype=np.int64),
        np.array(xyz, dtype=float).reshape(-1, 3),
        np.array(rgb, dtype=np.uint8).reshape(-1, 3),
        np.array(err, dtype=float),
    )


def ingest_sfm_text(directory) -> SceneModel:
    """Load a sparse model directory into a :class:`SceneModel`.

    Raises:
        ParseError: malformed line (message carries file and line number).
        UnknownCameraModel: camera model outside the supported set.
        DanglingReference: image -> camera or observation -> point that does not exist.
    """
    directory = Path(directory)
    cam_path, img_path, pts_path = (directory / n for n in ("cameras.txt", "images.txt", "points3D.txt"))
    for p in (cam_path, img_path, pts_path):
        if not p.is_file():
            raise ParseError("missing model file", p)
    cameras = read_cameras(cam_path)
    ids, xyz, rgb, err = read_points(pts_path)
    if len(np.unique(ids)) != len(ids):
        raise ParseError("duplicate POINT3D_ID", pts_path)
    id_to_index = {int(pid): i for i, pid in enumerate(ids)}
    frames = []
    for image_id, name, cam_id, pose, uv, pids, lineno in read_images(img_path):
        if cam_id not in cameras:
            raise DanglingReference(f"image {name} references unknown camera {cam_id}", img_path, lineno)
        index = np.full(len(pids), -1, dtype=np.int64)
        for j, pid in enumerate(pids):
            if pid == -1:
                continue
            try:
                index[j] = id_to_index[int(pid)]
            except KeyError:
                raise DanglingReference(
                    f"image {name} observes unknown point {pid}", img_path, lineno + 1
                ) from None
        frames.append(Frame(image_id, name, cam_id, pose, uv, index))
    cloud = SemanticPointCloud(xyz, None, rgb)
    logger.info("ingested %d cameras, %d frames, %d points", len(cameras), len(frames), len(cloud))
    return SceneModel(cameras, frames, cloud, ids, err)


def _fmt(x: float) -> str:
    return repr(float(x))


def _camera_line(cam_id: int, cam: CameraModel) -> str:
    d = cam.distortion
    if d.is_zero:
        model, params = "PINHOLE", [cam.fx, cam.fy, cam.cx, cam.cy]
    elif d.k3 == 0.0:
        model, params = "OPENCV", [cam.fx, cam.fy, cam.cx, cam.cy, d.k1, d.k2, d.p1, d.p2]
    else:
        model = "FULL_OPENCV"
        params = [cam.fx, cam.fy, cam.cx, cam.cy, d.k1, d.k2, d.p1, d.p2, d.k3, 0.0, 0.0, 0.0]
    return " ".join([str(cam_id), model, str(cam.width), str(cam.height)] + [_fmt(v) for v in params])


def write_sfm_text(scene: SceneModel, directory) -> None:
    """Serialize a scene so that :func:`ingest_sfm_text` reads it back unchanged."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "cameras.txt", "w", encoding="utf-8") as fh:
        fh.write("# Camera list with one line of data per camera:\n")
        fh.write("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n")
        for cam_id in sorted(scene.cameras):
            fh.write(_camera_line(cam_id, scene.cameras[cam_id]) + "\n")

    tracks: list[list[str]] = [[] for _ in range(len(scene.cloud))]
    with open(directory / "images.txt", "w", encoding="utf-8") as fh:
        fh.write("# Image list with two lines of data per image:\n")
        fh.write("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n")
        fh.write("#   POINTS2D[] as (X, Y, POINT3D_ID)\n")
        for f in scene.frames:
            q = rotation_to_quaternion(f.pose.rotation)
            head = [str(f.image_id)] + [_fmt(v) for v in q] + [_fmt(v) for v in f.pose.translation]
            fh.write(" ".join(head + [str(f.camera_id), f.name]) + "\n")
            obs = []
            for j, ((x, y), idx) in enumerate(zip(f.uv, f.point_index)):
                pid = -1 if idx < 0 else int(scene.point_ids[idx])
                obs += [_fmt(x), _fmt(y), str(pid)]
                if idx >= 0:
                    tracks[idx] += [str(f.image_id), str(j)]
            fh.write(" ".join(obs) + "\n")

    colors = scene.cloud.colors
    if colors is None:
        colors = np.zeros((len(scene.cloud), 3), dtype=np.uint8)
    with open(directory / "points3D.txt", "w", encoding="utf-8") as fh:
        fh.write("# 3D point list with one line of data per point:\n")
        fh.write("#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n")
        for i, (pid, x, c, e) in enumerate(
            zip(scene.point_ids, scene.cloud.points, colors, scene.point_errors)
        ):
            row = [str(int(pid))] + [_fmt(v) for v in x] + [str(int(v)) for v in c] + [_fmt(e)]
            fh.write(" ".join(row + tracks[i]) + "\n")
