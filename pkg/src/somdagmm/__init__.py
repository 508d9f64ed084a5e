"""Self-organizing-map assisted deep autoencoding Gaussian mixture model.

An unsupervised anomaly detector for tabular data such as network flow
records: a self-organizing map contributes topology-preserving grid
coordinates, an autoencoder contributes a compressed code plus
reconstruction features, and an estimation network turns the combined
latent vector into Gaussian-mixture memberships whose sample energy is
the anomaly score.
"""

from .compression import (
    AutoencoderConfig,
    CompressionNet,
    default_layer_sizes,
    reconstruction_features,
    reconstruction_loss,
)
from .data import (
    LabeledDataset,
    ParsedRecords,
    PreprocessStats,
    Preprocessor,
    RecordSchema,
    fit_stats,
    fit_transform,
    load_builtin_schema,
    load_schema,
    mix_contamination,
    parse_csv,
    parse_nslkdd,
    read_cache,
    schema_hash,
    split_ideal,
    transform,
    write_cache,
)
from .errors import (
    DataError,
    DivergedError,
    SchemaMismatchError,
    SingularMatrixError,
    SomDagmmError,
)
from .estimation import (
    EstimationConfig,
    EstimationNet,
    GmmParams,
    MembershipBatch,
    cov_penalty,
    energy,
    estimate_gmm,
)
from .evaluate import (
    RunMetrics,
    ThresholdPolicy,
    aggregate,
    compute_metrics,
    five_number,
    threshold_energies,
)
from .experiment import (
    ExperimentConfig,
    ExperimentReport,
    RunRecord,
    run_experiment,
    run_sweep,
)
from .modelfile import load_model, save_model
from .som import (
    KERNEL_BACKEND,
    SomConfig,
    SomModel,
    bmu,
    encode,
    encode_batch,
    quantization_error,
    train_som,
)
from .trainer import (
    EpochStats,
    TrainConfig,
    TrainedModel,
    objective,
    score_features,
    score_records,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AutoencoderConfig",
    "CompressionNet",
    "DataError",
    "DivergedError",
    "EpochStats",
    "EstimationConfig",
    "EstimationNet",
    "ExperimentConfig",
    "ExperimentReport",
    "GmmParams",
    "KERNEL_BACKEND",
    "LabeledDataset",
    "MembershipBatch",
    "ParsedRecords",
    "PreprocessStats",
    "Preprocessor",
    "RecordSchema",
    "RunMetrics",
    "RunRecord",
    "SchemaMismatchError",
    "SingularMatrixError",
    "SomConfig",
    "SomDagmmError",
    "SomModel",
    "ThresholdPolicy",
    "TrainConfig",
    "TrainedModel",
    "aggregate",
    "bmu",
    "compute_metrics",
    "cov_penalty",
    "default_layer_sizes",
    "encode",
    "encode_batch",
    "energy",
    "estimate_gmm",
    "fit_stats",
    "fit_transform",
    "five_number",
    "load_builtin_schema",
    "load_model",
    "load_schema",
    "mix_contamination",
    "objective",
    "parse_csv",
    "parse_nslkdd",
    "quantization_error",
    "read_cache",
    "reconstruction_features",
    "reconstruction_loss",
    "run_experiment",
    "run_sweep",
    "save_model",
    "schema_hash",
    "score_features",
    "score_records",
    "split_ideal",
    "threshold_energies",
    "train",
    "train_som",
    "transform",
    "write_cache",
    "__version__",
]
