"""Open-vocabulary multi-label classification on aligned visual-textual features.

Library layout:

- ``tensor`` / ``optim`` / ``rng``: dense 2-D tensors with reverse-mode
  gradients, Adam, finite-difference checking, labeled random streams.
- ``decoder``: dual-modal decoder blocks, the baseline ablation block, the
  stacked decoder, and the shared per-class head.
- ``pyramid``: multi-level tile plans, bilinear resize, tile extraction,
  token stacking, and the compute-cost report.
- ``encoders``: frozen toy image/text towers, prompt templates, the synthetic
  aligned world, and the embedding file format.
- ``supervision``: selective label sampling, the asymmetric loss, and the
  cosine-threshold baseline.
- ``training`` / ``metrics`` / ``checkpoint``: the training loop, mAP / F1@k
  evaluation, open-vocabulary splits, and checkpoint serialization.
- ``cli``: ``adds`` command-line entry point.
"""

from .metrics import MetricsReport, f1_at_k, mean_average_precision, metrics_report
from .pyramid import PyramidPlan, build_plan, cost_report, extract_tiles
from .supervision import AslConfig, asl_loss, cosine_baseline, select_labels
from .training import Checkpoint, TrainConfig, evaluate_checkpoint, open_vocab_split, train

__version__ = "0.1.0"

__all__ = [
    "AslConfig",
    "Checkpoint",
    "MetricsReport",
    "PyramidPlan",
    "TrainConfig",
    "asl_loss",
    "build_plan",
    "cosine_baseline",
    "cost_report",
    "evaluate_checkpoint",
    "extract_tiles",
    "f1_at_k",
    "mean_average_precision",
    "metrics_report",
    "open_vocab_split",
    "select_labels",
    "train",
    "__version__",
]
