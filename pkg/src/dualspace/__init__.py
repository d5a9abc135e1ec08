"""Dual-subspace audio-visual cross-modal retrieval.

Two branch networks per modality map precomputed audio and visual features
into an explicit space (trained for cross-modal correlation) and an implicit
space (trained to regress category labels). A closed-form CCA layer fuses
both into the retrieval embedding.
"""

from .baselines import fit_cca_baseline, fit_cluster_cca_baseline, random_baseline
from .dataset import Dataset, load_dataset, save_dataset, split, synth_generate
from .fusion import FusionTransform, embed, fit_fusion
from .losses import LossBreakdown, total_loss
from .network import ModelParams, SubspaceOutputs, forward, init
from .numerics import CcaSolution, cca_solve, total_correlation
from .retrieval import EvalReport, evaluate
from .trainer import LossHistory, TrainConfig, grad_check, train

__version__ = "0.1.0"

__all__ = [
    "CcaSolution", "Dataset", "EvalReport", "FusionTransform", "LossBreakdown", "LossHistory",
    "ModelParams", "SubspaceOutputs", "TrainConfig", "cca_solve", "embed", "evaluate",
    "fit_cca_baseline", "fit_cluster_cca_baseline", "fit_fusion", "forward", "grad_check",
    "init", "load_dataset", "random_baseline", "save_dataset", "split", "synth_generate",
    "total_correlation", "total_loss", "train",
]
