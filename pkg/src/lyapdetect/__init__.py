"""lyapdetect: screen image inputs by the chaoticity of their pixel sequences.

Flattened images are treated as scalar sequences; a QR-based estimator
recovers a small Lyapunov spectrum per image, and detectors (an isolation
forest, or a supervised logistic layer) separate legitimate inputs from
adversarially perturbed ones in that exponent space.
"""

from .ingest import (
    Adversarial,
    Dataset,
    Image,
    Legitimate,
    Noisy,
    ProvenanceDescriptor,
    TimeSeries,
    flatten,
    load_image_dir,
    parse_idx,
    save_image_dir,
    unflatten,
    write_idx,
)
from .lyap import (
    LyapunovParams,
    LyapunovSpectrum,
    delay_embed,
    find_neighbors,
    fit_tangent_map,
    has_positive_exponent,
    lyap_spectrum,
    qr_accumulate,
)
from .noise import apply_noise, perturb_to_magnitude, sample_matched_magnitude
from .features import (
    FeatureMatrix,
    RowMeta,
    build_features,
    l2_distance,
    pca_fit,
    pca_project,
)
from .anomaly import (
    Decision,
    IsolationForestModel,
    anomaly_score,
    calibrate_threshold,
    decide,
    iforest_fit,
)
from .supervised import LogisticConfig, LogisticModel, leave_one_attack_out, logistic_fit
from .metrics import DetectionReport, RocCurve, detection_report, roc
from .attacksim import FgsmParams, SoftmaxModel, VictimConfig, fgsm, softmax_train

__version__ = "0.1.0"

__all__ = [
    "Adversarial", "Dataset", "Image", "Legitimate", "Noisy",
    "ProvenanceDescriptor", "TimeSeries", "flatten", "load_image_dir",
    "parse_idx", "save_image_dir", "unflatten", "write_idx",
    "LyapunovParams", "LyapunovSpectrum", "delay_embed", "find_neighbors",
    "fit_tangent_map", "has_positive_exponent", "lyap_spectrum", "qr_accumulate",
    "apply_noise", "perturb_to_magnitude", "sample_matched_magnitude",
    "FeatureMatrix", "RowMeta", "build_features", "l2_distance", "pca_fit",
    "pca_project",
    "Decision", "IsolationForestModel", "anomaly_score", "calibrate_threshold",
    "decide", "iforest_fit",
    "LogisticConfig", "LogisticModel", "leave_one_attack_out", "logistic_fit",
    "DetectionReport", "RocCurve", "detection_report", "roc",
    "FgsmParams", "SoftmaxModel", "VictimConfig", "fgsm", "softmax_train",
    "__version__",
]
