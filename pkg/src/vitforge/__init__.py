"""vitforge: a from-scratch Vision Transformer fine-tuning toolkit.

Library surface: tensor kernels (`ops`), reverse-mode autodiff (`autodiff`),
the ViT model (`model`), AdamW training (`training`), dataset ingestion and
augmentation (`data`), classification metrics (`metrics`), binary checkpoints
(`checkpoint`), a scikit-learn style estimator (`estimator`), and the batch
CLI (`cli`).
"""

from vitforge.ops import Rng, ShapeError, gelu, layer_norm, matmul, softmax_rows
from vitforge.autodiff import Var, cross_entropy_loss, gradients
from vitforge.model import (
    ModelParams,
    ViTConfig,
    count_parameters,
    forward,
    forward_features,
    init_params,
    parameter_shapes,
    patchify,
)
from vitforge.training import (
    AdamWState,
    TrainPlan,
    TrainResult,
    adamw_step,
    set_freeze,
    train,
)
from vitforge.data import (
    DatasetIndex,
    FoldSplit,
    Sample,
    augment_train,
    decode_image,
    denormalize,
    kfold_split,
    load_dataset,
    make_batches,
    normalize,
    preprocess_eval,
)
from vitforge.metrics import (
    ConfusionCounts,
    FoldMetrics,
    MetricsReport,
    aggregate_folds,
    binary_metrics,
    confusion_binary,
    evaluate,
    macro_metrics,
    multiclass_confusion,
    roc_auc,
)
from vitforge.checkpoint import (
    LoadedCheckpoint,
    load_checkpoint,
    replace_head,
    save_checkpoint,
)
from vitforge.estimator import ViTClassifier

__version__ = "0.1.0"
