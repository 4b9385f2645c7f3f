"""depthfield: depth as a queryable continuous field.

A feature pyramid plus decoder weights define depth at any continuous image
coordinate. The library evaluates the field at arbitrary resolution,
differentiates it exactly for surface normals, samples surfaces with
area-proportional budgets, builds high-frequency evaluation masks, and
scores predictions with threshold (delta) metrics.
"""

from .autodiff import (
    ParamGradients,
    depth_jacobian,
    fd_jacobian,
    jacobian_batch,
    loss_gradients,
)
from .dual import Dual2
from .errors import DepthFieldError
from .field import (
    DecoderParams,
    DepthField,
    FeatureLevel,
    FeaturePyramid,
    FusionStage,
    MlpHead,
    QueryCoord,
    bilinear_query,
    decode_batch,
    decode_depth,
    decode_grid,
    fuse_step,
    map_coord,
    query_pyramid,
)
from .fixtures import Fixture, make_fixture
from .geometry import CameraIntrinsics, PointCloud, area_weight, backproject, surface_normal
from .hfmask import HFMask, build_hf_mask, multiscale_energy, normalize_sharpen, sample_mask
from .metrics import (
    DepthMap,
    EvalReport,
    align_scale_shift,
    delta_accuracy,
    evaluate,
    l1_loss,
    log_normalize,
)
from .sampler import (
    QuerySet,
    WeightMap,
    build_weight_map,
    density_cv,
    jitter_coords,
    normalize_probs,
    sample_per_pixel,
    sample_surface,
    stratified_indices,
)
from .training import SupervisionSet, TrainConfig, draw_supervision, init_params, train_toy

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
