"""Embed, extract and attack weight-space watermarks in small CNNs."""

from .attacks import (
    OverwriteSpec,
    PruneSpec,
    Watermark,
    distill_attack,
    finetune_attack,
    overwrite_attack,
    prune,
    prune_sweep,
)
from .data import Dataset, SynthSpec, load_cifar10_binary, split_and_normalize, synth_dataset
from .errors import (
    ChecksumError,
    ConfigurationError,
    DataError,
    NumericError,
    ValidationError,
    VersionError,
    WatermarkError,
)
from .estimator import WatermarkedCNNClassifier
from .nn import HostModel, RegularizerHook, TrainConfig, build_host, evaluate, train
from .persistence import (
    export_record,
    load_bits,
    load_key,
    load_model,
    read_record,
    save_bits,
    save_key,
    save_model,
)
from .record import ExperimentRecord
from .watermark import (
    DetectionReport,
    KeyMatrix,
    bit_error_rate,
    detection_report,
    direct_embed,
    embedding_loss,
    embedding_loss_grad,
    extract,
    generate_key,
    mean_over_filters,
    project,
)

__version__ = "0.1.0"
