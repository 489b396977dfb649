"""Robust semi-supervised multimodal learning on a small numpy autograd engine."""

from .evaluation import (MetricRow, alignment_uniformity, auroc, f1_macro, histogram_mi,
                         positive_majority_probability, task_metrics)
from .losses import (PairContext, build_positive_sets, discretize_labels, loss_lb, loss_pu, loss_rec,
                     loss_sup, loss_ulb, multilabel_positive, pair_weight, proximity, v_matrix)
from .model import ForwardOutputs, RobultModel
from .synthdata import Batch, Dataset, SynthSpec, generate, mask_modalities
from .tensor import Tensor
from .training import (Adam, LossReport, RunConfig, build_model, fit, fit_linear_probe, make_semisupervised_split,
                       prepare_training_data, train_step)

__version__ = "0.1.0"
