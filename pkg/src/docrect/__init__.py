"""docrect: document-image rectification flows, inference, and metrics."""

from .errors import (
    ConversionError,
    DecodeError,
    DocrectError,
    FormatError,
    ManifestError,
    ParameterError,
    SemanticsError,
    ShapeError,
)
from .flow import (
    BACKWARD,
    FORWARD,
    FlowField,
    ResidualFlow,
    apply_backward_flow,
    bilinear_sample,
    downsample_flow,
    forward_to_backward,
    identity_flow,
    read_flow,
    resample_flow,
    sample_bilinear_grid,
    update_flow,
    warp_features,
    write_flow,
)
from .imaging import (
    decode_image,
    encode_image,
    gaussian_downsample,
    luma,
    resize_bilinear,
    resize_to_area,
)
from .losses import LossBreakdown, bce_loss, circle_line_loss, l1_flow_loss, total_loss
from .metrics import (
    EvalConfig,
    MetricReport,
    PairMetrics,
    cer,
    edit_distance,
    evaluate_pair,
    line_distortion,
    local_distortion,
    ms_ssim,
    normalize_text,
)
from .rectnet import (
    RectifyTrace,
    apply_document_mask,
    conv2d,
    convgru_step,
    encode,
    gen_rect_features,
    learnable_upsample,
    predict_residual,
    progressive_rectify,
    rectify_document,
)
from .sift import dense_sift
from .siftflow import DisplacementField, MatchConfig, match_energy, sift_flow_match
from .weights import (
    LAYER_MANIFEST,
    WeightStore,
    random_weights,
    read_weights,
    write_weights,
    zero_weights,
)

__version__ = "0.1.0"
