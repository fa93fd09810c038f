"""In-memory scene: cameras, posed frames with 2D observations, and the cloud."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import PurePath
from typing import Optional

import numpy as np

from .errors import DanglingReference
from .geometry import CameraModel, PoseSE3
from .lift import ClassCatalog, CorrespondenceSet, SemanticPointCloud


@dataclass
class Frame:
    """One registered image.

    ``point_index`` holds, per 2D observation, the index into the scene cloud
    or -1 for an unmatched keypoint.
    """

    image_id: int
    name: str
    camera_id: int
    pose: PoseSE3
    uv: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    point_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=float).reshape(-1, 2)
        self.point_index = np.asarray(self.point_index, dtype=np.int64).reshape(-1)
        if len(self.uv) != len(self.point_index):
            raise ValueError(f"frame {self.name}: observation arrays differ in length")

    @property
    def stem(self) -> str:
        return PurePath(self.name).stem


@dataclass
class SceneModel:
    cameras: dict
    frames: list
    cloud: SemanticPointCloud
    point_ids: np.ndarray = None
    point_errors: np.ndarray = None
    catalog: Optional[ClassCatalog] = None

    def __post_init__(self):
        m = len(self.cloud)
        if self.point_ids is None:
            self.point_ids = np.arange(1, m + 1, dtype=np.int64)
        self.point_ids = np.asarray(self.point_ids, dtype=np.int64)
        if self.point_errors is None:
            self.point_errors = np.zeros(m)
        for f in self.frames:
            if f.camera_id not in self.cameras:
                raise DanglingReference(f"frame {f.name} references unknown camera {f.camera_id}")
            if len(f.point_index) and (f.point_index.max() >= m or f.point_index.min() < -1):
                raise DanglingReference(f"frame {f.name} references a point outside the cloud")

    def camera_of(self, frame: Frame) -> CameraModel:
        return self.cameras[frame.camera_id]

    def frame_by_stem(self) -> dict:
        return {f.stem: f for f in self.frames}

    def correspondences(self) -> CorrespondenceSet:
        pixels, ids = [], []
        for f in self.frames:
            keep = f.point_index >= 0
            pixels.append(f.uv[keep])
            ids.append(f.point_index[keep])
        return CorrespondenceSet(len(self.cloud), pixels, ids)

    def camera_centers(self) -> np.ndarray:
        return np.array([f.pose.center for f in self.frames]).reshape(-1, 3)

    def image_shapes(self) -> dict:
        return {n: self.camera_of(f).shape for n, f in enumerate(self.frames)}
