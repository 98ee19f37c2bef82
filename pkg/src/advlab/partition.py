"""Batch partition into misclassified, boundary, and non-boundary subsets.

Membership is decided against a frozen parameter snapshot: misclassified
examples are wrong on the clean input; among the correctly classified, a
boundary example is one the reduced-budget attack can still flip, and the
rest are non-boundary. No gradients flow through these decisions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attacks import AttackConfig, reduced_pgd
from .models import Classifier
from .validation import ValidationError, require


@dataclass
class PartitionMasks:
    non_boundary: np.ndarray   # bool (B,)
    boundary: np.ndarray       # bool (B,)
    misclassified: np.ndarray  # bool (B,)
    x_reduced: np.ndarray      # reduced-budget attack output used to decide
    pred_clean: np.ndarray     # frozen-snapshot labels on x
    pred_reduced: np.ndarray   # frozen-snapshot labels on x_reduced

    def __post_init__(self):
        masks = np.stack([self.non_boundary, self.boundary, self.misclassified])
        if not np.array_equal(masks.sum(axis=0), np.ones(masks.shape[1], dtype=np.int64)):
            raise ValidationError("partition masks must be pairwise disjoint and cover the batch")

    def counts(self) -> dict[str, int]:
        return {
            "non_boundary": int(self.non_boundary.sum()),
            "boundary": int(self.boundary.sum()),
            "misclassified": int(self.misclassified.sum()),
        }


def partition_batch(frozen_classifier: Classifier, x_batch, y_batch, eta: float,
                    attack_cfg: AttackConfig, rng: np.random.Generator | None = None) -> PartitionMasks:
    """Split a batch by frozen-snapshot behavior under the reduced attack."""
    require(0.0 < eta <= 1.0, f"eta must be in (0, 1], got {eta}")
    x_batch = np.asarray(x_batch, dtype=np.float64)
    y_batch = np.asarray(y_batch, dtype=np.int64)

    pred_clean = frozen_classifier.forward(x_batch).labels
    x_reduced = reduced_pgd(frozen_classifier, x_batch, y_batch, attack_cfg, eta, rng)
    pred_reduced = frozen_classifier.forward(x_reduced).labels

    misclassified = pred_clean != y_batch
    correct = ~misclassified
    boundary = correct & (pred_reduced != y_batch)
    non_boundary = correct & (pred_reduced == y_batch)
    return PartitionMasks(
        non_boundary=non_boundary,
        boundary=boundary,
        misclassified=misclassified,
        x_reduced=x_reduced,
        pred_clean=pred_clean,
        pred_reduced=pred_reduced,
    )
