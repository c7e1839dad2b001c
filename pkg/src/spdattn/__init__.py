"""EEG decoding with attention on the SPD manifold.

The pipeline: a linear two-layer feature extractor, per-epoch
covariance matrices (E2R), attention over the resulting SPD sequence
under the Log-Euclidean metric with Stiefel-constrained projections,
an eigenvalue clamp (ReEig), a log-domain flatten (R2E), and a linear
softmax classifier.  Training mixes plain SGD with Riemannian steps on
the Stiefel parameters; gradients come from a small reverse-mode tape
with exact spectral backward rules.
"""

from .attention import AttentionMatrix, attention_forward, attention_scores, batched_qkv
from .autodiff import (
    Node,
    Tape,
    backward,
    random_stiefel,
    retract_qr,
    stiefel_step,
    stiefel_tangent,
    vjp_spectral,
)
from .data import Dataset, SynthSpec, load_dataset, save_dataset, synth
from .geometry import (
    aim_distance,
    karcher_mean_aim,
    lem_distance,
    similarity,
    weighted_le_mean,
)
from .layers import (
    ConvSpec,
    bimap,
    classify_head,
    cross_entropy,
    e2r,
    feature_extract,
    r2e,
    reeig,
    triu_flatten,
    triu_unflatten,
)
from .linalg import (
    EigenPair,
    mat_exp_sym,
    mat_log_spd,
    regularize_spd,
    sym_eig,
    symmetrize,
)
from .model import (
    ModelConfig,
    ParamRegistry,
    forward,
    init_params,
    load_checkpoint,
    loss_and_grads,
    saliency,
    save_checkpoint,
)
from .train import (
    EvalReport,
    TrainConfig,
    TrainResult,
    auc_score,
    evaluate,
    save_history,
    split,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionMatrix",
    "attention_forward",
    "attention_scores",
    "batched_qkv",
    "Node",
    "Tape",
    "backward",
    "random_stiefel",
    "retract_qr",
    "stiefel_step",
    "stiefel_tangent",
    "vjp_spectral",
    "Dataset",
    "SynthSpec",
    "load_dataset",
    "save_dataset",
    "synth",
    "aim_distance",
    "karcher_mean_aim",
    "lem_distance",
    "similarity",
    "weighted_le_mean",
    "ConvSpec",
    "bimap",
    "classify_head",
    "cross_entropy",
    "e2r",
    "feature_extract",
    "r2e",
    "reeig",
    "triu_flatten",
    "triu_unflatten",
    "EigenPair",
    "mat_exp_sym",
    "mat_log_spd",
    "regularize_spd",
    "sym_eig",
    "symmetrize",
    "ModelConfig",
    "ParamRegistry",
    "forward",
    "init_params",
    "load_checkpoint",
    "loss_and_grads",
    "saliency",
    "save_checkpoint",
    "EvalReport",
    "TrainConfig",
    "TrainResult",
    "auc_score",
    "evaluate",
    "save_history",
    "split",
    "train",
    "__version__",
]
