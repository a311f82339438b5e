"""driftsketch: MinHash baselines, anomaly gating, and drift scoring for
image feature vectors, with a noise-injection sensitivity lab."""

from ._kernels import BACKEND as KERNEL_BACKEND
from .core import (
    ConfigError,
    DataError,
    DriftSketchError,
    FeatureVector,
    ImageGrid,
    PipelineConfig,
    StoreError,
    derive_seed,
    seeded_rng,
    validate_image,
)
from .extract import ExtractConfig, extract_batch, extract_builtin, l2_normalize, load_embeddings
from .head import (
    AdamState,
    HeadModel,
    TrainConfig,
    adam_step,
    bce_gradient,
    bce_loss,
    predict,
    train_head,
)
from .noiselab import (
    NoiseSpec,
    SensitivityReport,
    apply_noise,
    gaussian_noise,
    poisson_noise,
    salt_pepper,
    sensitivity_sweep,
    speckle,
)
from .sketchlib import (
    GateConfig,
    GateResult,
    MinHashSignature,
    QuantConfig,
    SketchConfig,
    SketchLibrary,
    TokenSet,
    build_library,
    estimate_jaccard,
    exact_jaccard,
    gate_check,
    minhash,
    tokenize,
)
from .stats import (
    DriftReport,
    StatsConfig,
    batch_cosine,
    cosine,
    drift_report,
    ks_pvalue,
    ks_statistic,
    pool_scalars,
)
from .store import (
    SplitPlan,
    load_image,
    load_library,
    read_drift_report,
    read_sensitivity_report,
    save_image,
    save_library,
    split_dataset,
    write_embeddings,
    write_report,
)

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "ConfigError",
    "DataError",
    "DriftSketchError",
    "StoreError",
    "ImageGrid",
    "FeatureVector",
    "PipelineConfig",
    "seeded_rng",
    "derive_seed",
    "validate_image",
    "ExtractConfig",
    "extract_builtin",
    "extract_batch",
    "l2_normalize",
    "load_embeddings",
    "HeadModel",
    "AdamState",
    "TrainConfig",
    "predict",
    "bce_loss",
    "bce_gradient",
    "adam_step",
    "train_head",
    "QuantConfig",
    "TokenSet",
    "SketchConfig",
    "MinHashSignature",
    "SketchLibrary",
    "GateConfig",
    "GateResult",
    "tokenize",
    "minhash",
    "estimate_jaccard",
    "exact_jaccard",
    "build_library",
    "gate_check",
    "StatsConfig",
    "DriftReport",
    "ks_statistic",
    "ks_pvalue",
    "cosine",
    "batch_cosine",
    "pool_scalars",
    "drift_report",
    "NoiseSpec",
    "SensitivityReport",
    "gaussian_noise",
    "salt_pepper",
    "speckle",
    "poisson_noise",
    "apply_noise",
    "sensitivity_sweep",
    "SplitPlan",
    "load_image",
    "save_image",
    "save_library",
    "load_library",
    "write_embeddings",
    "write_report",
    "read_drift_report",
    "read_sensitivity_report",
    "split_dataset",
]
