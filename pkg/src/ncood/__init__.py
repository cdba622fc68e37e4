"""Post-hoc OOD detection from exported penultimate-layer features."""

from .baselines import (
    DiceMask,
    KnnIndex,
    MahalanobisFit,
    ReactClip,
    dice_score,
    energy_score,
    fit_dice,
    fit_knn,
    fit_react,
    knn_score,
    mahalanobis_fit,
    mahalanobis_score,
    msp_score,
    react_score,
)
from .collapse import (
    BlobsDataset,
    MlpConfig,
    MlpModel,
    NcReport,
    TrainTrace,
    grad_check,
    make_blobs,
    nc_metrics,
    train_mlp,
)
from .dataset import (
    ClassifierHead,
    FeatureSet,
    TrainStats,
    compute_logits,
    compute_train_stats,
    predict_classes,
)
from .detectors import (
    CosScoreDetector,
    DiceDetector,
    DistScoreDetector,
    EnergyDetector,
    KNNDetector,
    MahalanobisDetector,
    MSPDetector,
    NCScoreDetector,
    PScoreDetector,
    ReActDetector,
)
from .metrics import EvalReport, auroc, evaluate, fpr_at_tpr
from .scores import NcScoreConfig, cos_score, dist_score, nc_score, p_score
from .synth import EtfFrame, SynthSpec, gen_id_features, gen_ood_features, simplex_etf
from .tensor_store import BundleManifest, Tensor, read_bundle, read_tensor, write_bundle, write_tensor

__version__ = "0.1.0"
