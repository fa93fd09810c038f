from .ply import read_ply, write_ply
from .raster import (
    read_image,
    read_label_png,
    read_transform,
    write_image,
    write_label_png,
    write_transform,
)
from .sfm_text import ingest_sfm_text, write_sfm_text

__all__ = [
    "ingest_sfm_text",
    "write_sfm_text",
    "read_ply",
    "write_ply",
    "read_label_png",
    "write_label_png",
    "read_image",
    "write_image",
    "read_transform",
    "write_transform",
]
