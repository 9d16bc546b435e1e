"""No-reference image quality assessment from multi-level pooled CNN features.

An input image is run whole (no patches) through a pretrained CNN body
exported as a TorchScript graph; every Inception module's output is reduced
by global average pooling to one value per channel, and the per-module
vectors are concatenated into a resolution-independent descriptor. Kernel
regressors (epsilon-SVR with RBF kernel, or exact GP regression with a
rational quadratic kernel) map descriptors to mean-opinion scores.
"""

from .datasets import (
    CrossPlan,
    DatasetManifest,
    SplitPlan,
    cross_pair,
    load_manifest,
    make_split,
    make_split_series,
)
from .errors import (
    CacheFormatError,
    ConfigError,
    ManifestError,
    ModelGraphError,
    MultigapError,
    NumericalError,
    UndefinedCorrelationError,
)
from .features import (
    FeatureStandardizer,
    FeatureTable,
    FeatureVector,
    apply_standardizer,
    concatenate,
    fit_standardizer,
    gap,
    load_cache,
    save_cache,
    slice_layer,
)
from .metrics import SplitResultSummary, aggregate, mid_ranks, plcc, srocc
from .regressors import (
    HyperparamGrid,
    RbfSvr,
    RqGpr,
    default_gpr_grid,
    default_svr_grid,
    grid_search,
    load_regressor,
    rbf_kernel,
    rbf_kernel_matrix,
    rq_kernel,
    rq_kernel_matrix,
    save_regressor,
)
from .runtime import (
    GOOGLENET_TAPS,
    INCEPTION_V3_TAPS,
    FeatureMap,
    ModelHandle,
    ModelSpec,
    forward_taps,
    load_image,
    load_model,
    load_model_spec,
    preprocess,
    stock_model_spec,
)

__version__ = "0.1.0"
