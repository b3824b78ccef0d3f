"""Continual multi-weather image restoration with a growing library of adapter experts.

The package is a small numpy stack: an autodiff tensor engine, a convolutional
backbone, a task-similarity valve that decides whether incoming data belongs to
a known task, an expert library with performance/usage scheduling, the training
objective, synthetic weather degradations, quality metrics and a driver.
"""

from .backbone import MiniBackbone
from .checkpoint import load_checkpoint, save_checkpoint, verify_checkpoint
from .harness import ContinualRun, RunConfig, run_ablation_sweep, run_continual
from .library import Adapter, ExpertLibrary, ExpertRecord, fusion_weights
from .losses import total_loss
from .metrics import ForgettingMatrix, forgetting_report, psnr, ssim
from .synth import Family, make_batch, make_pair
from .tensor import Adam, Tensor
from .valve import JudgingValve, TaskVector, combined_similarity, extract_task_vector

__version__ = "0.1.0"

__all__ = [
    "Adam", "Adapter", "ContinualRun", "ExpertLibrary", "ExpertRecord", "Family", "ForgettingMatrix",
    "JudgingValve", "MiniBackbone", "RunConfig", "TaskVector", "Tensor", "combined_similarity",
    "extract_task_vector", "forgetting_report", "fusion_weights", "load_checkpoint", "make_batch",
    "make_pair", "psnr", "run_ablation_sweep", "run_continual", "save_checkpoint", "ssim", "total_loss",
    "verify_checkpoint",
]
