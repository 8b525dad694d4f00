from .core import (
    DetectionReport,
    as_bits,
    bit_error_rate,
    detection_report,
    embedding_loss,
    embedding_loss_grad,
    extract,
    layer_mean,
    mean_over_filters,
    ones_payload,
    project,
    sigmoid,
)
from .direct import DirectEmbedResult, direct_embed
from .keys import KEY_FAMILIES, KeyMatrix, generate_key, key_from_matrix, validate_key_matrix
