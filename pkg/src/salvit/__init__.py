"""Saliency-driven patch selection for transformer image classification.

The pipeline scores image regions with a curvature-based saliency
operator, keeps only the top-m patches, and classifies from those patches
alone with a transformer whose positional information comes from patch
coordinates, so sequence length (and with it attention cost and
activation memory) shrinks with m.
"""

from .bench import CostReport, RuntimeReport, flops_estimate, measure_runtime, memory_estimate
from .checkpoint import load_checkpoint, read_header, save_checkpoint
from .config import PipelineConfig, SelectionConfig, default_config, load_config
from .errors import (
    DivergenceError,
    DivisionDegeneracyError,
    FormatError,
    NumericalConsistencyError,
    ParameterError,
    ShapeError,
)
from .model import ModelConfig, forward, full_scale_config, init_params, loss_and_grad
from .patching import PatchSelection, extract_patches, patch_scores, select_top_m
from .saliency import (
    CurvatureParams,
    RogParams,
    SaliencyMap,
    build_filter_bank,
    hessian_curvature_oracle,
    rog_contrast,
    saliency_map,
)
from .signal import gaussian_blur, load_image, polar_grid, to_luminance
from .training import (
    Dataset,
    TrainConfig,
    evaluate,
    lr_schedule,
    make_synthetic_dataset,
    normalize_inception,
    train,
)

__version__ = "0.1.0"
