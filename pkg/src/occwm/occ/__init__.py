from .grid import (
    AIR_ID,
    DEFAULT_CLASS_NAMES,
    OccupancyGrid,
    PillarCloud,
    SemanticLabelSet,
    densify,
    sparsify,
)
from .metrics import iou_geometry, miou_semantic
from .render import label_color, ppm_bytes, render_bev, write_ppm
from .rle import OccFormatError, read_occ, rle_decode, rle_encode, write_occ

__all__ = [
    "AIR_ID",
    "DEFAULT_CLASS_NAMES",
    "OccupancyGrid",
    "PillarCloud",
    "SemanticLabelSet",
    "densify",
    "sparsify",
    "iou_geometry",
    "miou_semantic",
    "label_color",
    "ppm_bytes",
    "render_bev",
    "write_ppm",
    "OccFormatError",
    "read_occ",
    "rle_decode",
    "rle_encode",
    "write_occ",
]
