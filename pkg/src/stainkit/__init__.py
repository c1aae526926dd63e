"""Stain-aware preprocessing, augmentation and evaluation for WSI patches."""

from .errors import (
    ChannelCountError,
    ConfigError,
    DegenerateImage,
    DegenerateStainDistribution,
    DimensionError,
    DomainError,
    EmptyInput,
    InsufficientTissue,
    InsufficientTissueArea,
    SingularStainMatrix,
    StainkitError,
)
from .rng import derive_rng
from .stain_math import (
    DEFAULT_I0,
    PRESET_STAINS,
    StainMatrix,
    deconvolve,
    load_stain_matrix,
    od_to_rgb,
    preset_matrix,
    reconstruct,
    rgb_to_od,
    save_stain_matrix,
)
from .stain_estimation import (
    MacenkoParams,
    StainProfile,
    concentration_scales,
    estimate_stain_profile,
    load_stain_profile,
    save_stain_profile,
)
from .transforms import (
    ChannelPermutation,
    channel_swap,
    colour_transfer,
    concentration_to_intensity,
    extract_haematoxylin,
    luma,
    to_greyscale,
)
from .augmentation import (
    AugmentationConfig,
    AugmentationPlan,
    ElasticParams,
    Sample,
    affine_augment,
    apply_plan,
    augment_batch,
    augment_sample,
    draw_plan,
    elastic_deform,
    pixel_augment,
    stain_variation,
    standardize,
)
from .tissue_patching import (
    AnnotationObject,
    AnnotationSet,
    DatasetStats,
    crop_with_reflection,
    dataset_stats,
    extract_glomerulus_patches,
    sample_tissue_patches,
    tissue_mask,
)
from .metrics import (
    DetectionCounts,
    DetectionReport,
    Scores,
    aggregate_runs,
    build_report,
    detection_scores,
    f1_score,
    match_objects,
)

__version__ = "0.1.0"
