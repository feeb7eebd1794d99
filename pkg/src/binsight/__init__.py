"""Point-cloud segmentation toolkit for bin picking.

Takes raw top-down scans of a parts bin and produces per-point
workpiece/background labels: automatic labeling against an empty-bin
reference, depth-map projection and hole inpainting, a pluggable
segmenter stage, and the way back from pixels to a split point cloud —
plus synthetic scene generation, file formats, and a label-correction
service.
"""

from .autolabel import (
    DEFAULT_CELL_SIZE_MM,
    DEFAULT_D_MAX_MM,
    EmptyBinReference,
    LabelParams,
    auto_label,
    label_depth_map,
    merge_scans,
)
from .errors import BinsightError
from .geometry import (
    LABEL_BACKGROUND,
    LABEL_WORKPIECE,
    CellGrid,
    DepthMap,
    LabelMask,
    Point3,
    PointCloud,
    build_cell_grid,
    cell_of,
    project_to_depth_map,
    reproject_labels,
    split_cloud,
)
from .rasterops import (
    AugmentSpec,
    ResizeRecord,
    augment,
    close,
    dilate,
    erode,
    inpaint,
    inverse_resize,
    resize_with_record,
    standardize,
)
from .segment import (
    BaselineSegmenter,
    ExternalSegmenter,
    ExternalSegmenterConfig,
    SegMetrics,
    baseline_segment,
    evaluate,
    external_segment,
    segment_pipeline,
)

__version__ = "0.1.0"
