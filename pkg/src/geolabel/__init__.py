"""Semantic label transfer between 2D views through a reconstructed 3D point cloud."""

__version__ = "0.1.0"

from .geometry import CameraModel, DistortionCoeffs, PoseSE3, project, project_points, undistort_normalized
from .lift import ClassCatalog, CorrespondenceSet, SemanticPointCloud, lift_cloud, select_views
from .metrics import ConfusionMatrix, accumulate, fw_miou, pixel_accuracy
from .register import IcpParams, SupportBBox, distortion_transfer, icp_align, register_poses
from .render import FrameLabelState, RenderConfig, render_view
from .scene import Frame, SceneModel

__all__ = [
    "CameraModel",
    "DistortionCoeffs",
    "PoseSE3",
    "project",
    "project_points",
    "undistort_normalized",
    "ClassCatalog",
    "CorrespondenceSet",
    "SemanticPointCloud",
    "lift_cloud",
    "select_views",
    "ConfusionMatrix",
    "accumulate",
    "fw_miou",
    "pixel_accuracy",
    "IcpParams",
    "SupportBBox",
    "distortion_transfer",
    "icp_align",
    "register_poses",
    "FrameLabelState",
    "RenderConfig",
    "render_view",
    "Frame",
    "SceneModel",
]
