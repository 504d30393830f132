"""Motion-specific saliency for 3D-CNN video classifiers.

Explain clips with relevance propagation, GradCAM, or guided
backpropagation; filter the explanation down to its temporally dynamic
component; score the result against dense optical flow.
"""

__version__ = "0.1.0"

from .exceptions import (
    EmptyRelevanceError,
    FormatError,
    InputError,
    LoadError,
    SizeError,
)
from .volume import (
    Volume3,
    VolumeStats,
    read_srvl,
    sobel3,
    sobel_kernel,
    trilinear_resize,
    volume_stats,
    write_srvl,
)
from .net import (
    ActivationTrace,
    ClipTensor,
    LayerSpec,
    Model,
    forward,
    load_model,
    parse_architecture,
    preprocess_clip,
    read_srwb,
    write_srwb,
    PRESETS,
)
from .explain import (
    DeepTaylorDecomposition,
    GradCam,
    GradientTensor,
    GuidedBackprop,
    GuidedGradCam,
    RelevanceVolume,
    backward,
    dtd_explain,
    explainer_for,
    gradcam_explain,
    guided_backprop_explain,
    guided_gradcam_explain,
)
from .selective import (
    SelectiveConfig,
    SelectiveRelevance,
    SelectiveResult,
    SupportMask,
    apply_selective,
    selective_mask,
    selective_relevance,
    temporal_edge_map,
)
from .flow import (
    FlowField,
    FlowParams,
    HornSchunck,
    dense_flow,
    flow_magnitude,
    horn_schunck_pair,
    read_srfl,
    write_srfl,
)
from .metrics import (
    MetricsReport,
    TimingReport,
    agreement,
    benchmark,
    motion_precision,
    overhead_ms,
    selectivity_ratios,
)
from .render import RenderOptions, render_grid, render_overlay, zero_center

__all__ = [name for name in dir() if not name.startswith("_")]
