"""Desk-scale IsoMax / Entropic Score laboratory.

Prototype-distance classification heads, detection scores and OOD metrics,
built on a small numpy MLP with hand-written backpropagation.
"""

from isomax_lab.errors import (
    DimensionError,
    IdxConsistencyError,
    IdxFormatError,
    IsoMaxLabError,
    NonFiniteError,
    StateError,
    TruncatedFileError,
    ValidationError,
)
from isomax_lab.loss_heads import (
    IsoMaxHead,
    LossResult,
    SoftMaxHead,
    isomax_distances,
    isomax_loss,
    isomax_probabilities,
    predict,
    softmax_loss,
)
from isomax_lab.ood_metrics import (
    DetectionReport,
    RocCurve,
    auroc,
    detection_report,
    dtacc,
    roc_curve,
    tnr_at_tpr95,
)
from isomax_lab.scores import entropic_score, entropy, max_probability_score, mean_entropy
from isomax_lab.tensor_nn import DenseLayer, FeatureExtractor, SgdConfig, lr_at_epoch, sgd_step

__version__ = "0.1.0"
