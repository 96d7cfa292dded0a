"""Space-filling-curve serialization, patch attention and evaluation tools for point clouds."""

from .attention import (
    AttentionParams,
    LayerParams,
    XCPEParams,
    attention_input_gradient,
    block_forward,
    patch_attention,
    random_layers,
    xcpe,
)
from .cloud import (
    IGNORE,
    WAYMO_BOX,
    ClipBox,
    PointCloud,
    clip,
    dequantize,
    quantize,
    voxel_cells,
    voxel_downsample,
)
from .evaluate import ConfusionMatrix, accumulate, argmax, ensemble, miou
from .multiframe import Frame, align, assemble, retention_report
from .patch import OrderSchedule, ScheduleMode, gather, partition, pattern_for_layer, scatter
from .sfc import (
    ALL_PATTERNS,
    Pattern,
    apply_trans,
    hilbert_decode,
    hilbert_encode,
    locality_score,
    serialization_order,
    serialize,
    z_decode,
    z_encode,
)

__version__ = "0.1.0"
