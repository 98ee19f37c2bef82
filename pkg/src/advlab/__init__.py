"""Desk-scale adversarial-training laboratory."""

from .attacks import AttackConfig, cw_margin, pgd, project, reduced_pgd, trades_inner
from .data import (ArrayDataset, AugmentationPolicy, GaussianModelSpec, LabeledExample,
                   augment_pair, load_cifar_binary, sample_gaussian_model,
                   synthetic_image_dataset, two_gaussians_dataset, write_cifar_binary)
from .estimator import RobustAlignmentClassifier
from .evaluation import (AlignmentProfile, EvalReport, accuracy, alignment_profile,
                         attack_suite, evaluate, figure2_protocol, mean_score, nrr)
from .losses import (AdversarialInputs, BatchLossReport, ObjectiveConfig, bce, ce,
                     composite_objective, dicar_term, js_consistency, kl, sample_beta)
from .models import (ArchitectureSpec, Classifier, Prediction, cnn_spec, linear_spec,
                     load_checkpoint, mlp_spec, save_checkpoint)
from .partition import PartitionMasks, partition_batch
from .theory import (LinearClassifierW, PolynomialModel, analytic_robust_error,
                     analytic_standard_error, complexity_sweep, cr_estimator,
                     monte_carlo_errors, run_taylor_suite, sample_mean_classifier,
                     taylor_oracle)
from .training import CheckpointRecord, TrainConfig, ema_update, fit, lr_at, sgd_step

__version__ = "0.1.0"
