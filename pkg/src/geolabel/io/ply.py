"""PLY point clouds with optional per-vertex ``label`` and colour."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from plyfile import PlyData, PlyElement, PlyElementParseError, PlyHeaderParseError

from ..errors import MalformedHeader, TruncatedPayload
from ..lift import SemanticPointCloud


def write_ply(cloud: SemanticPointCloud, path, encoding: str = "binary_le", coord_dtype: str = "f8") -> None:
    if encoding not in ("ascii", "binary_le"):
        raise ValueError(f"encoding must be 'ascii' or 'binary_le', got {encoding!r}")
    fields = [("x", coord_dtype), ("y", coord_dtype), ("z", coord_dtype), ("label", "u1")]
    if cloud.colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    vertex = np.empty(len(cloud), dtype=fields)
    vertex["x"], vertex["y"], vertex["z"] = cloud.points.T
    vertex["label"] = cloud.labels
    if cloud.colors is not None:
        vertex["red"], vertex["green"], vertex["blue"] = cloud.colors.T
    el = PlyElement.describe(vertex, "vertex")
    PlyData([el], text=(encoding == "ascii"), byte_order="<").write(str(path))


def read_ply(path) -> SemanticPointCloud:
    """Read the ``vertex`` element; a missing ``label`` property means all unlabeled.

    Raises:
        MalformedHeader: unreadable header or missing x/y/z.
        TruncatedPayload: fewer vertex records than the header declares.
    """
    path = Path(path)
    try:
        data = PlyData.read(str(path))
    except PlyHeaderParseError as exc:
        raise MalformedHeader(f"{path}: {exc}") from None
    except PlyElementParseError as exc:
        raise TruncatedPayload(f"{path}: {exc}") from None
    except (ValueError, IndexError, EOFError) as exc:
        raise MalformedHeader(f"{path}: {exc}") from None
    if "vertex" not in data:
        raise MalformedHeader(f"{path}: no vertex element")
    v = data["vertex"].data
    names = v.dtype.names or ()
    if not {"x", "y", "z"} <= set(names):
        raise MalformedHeader(f"{path}: vertex element lacks x, y, z")
    for n in ("x", "y", "z"):
        if v.dtype[n].kind != "f":
            raise MalformedHeader(f"{path}: coordinate {n} must be float32 or float64")
    points = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(float)
    labels = np.asarray(v["label"], dtype=np.uint8) if "label" in names else None
    colors = None
    if {"red", "green", "blue"} <= set(names):
        colors = np.stack([v["red"], v["green"], v["blue"]], axis=1).astype(np.uint8)
    return SemanticPointCloud(points, labels, colors)
