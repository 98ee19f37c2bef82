"""Scikit-learn style estimator wrapping the adversarial training loop.

The estimator holds hyperparameters in the constructor (so ``get_params``,
``set_params``, and ``clone`` compose with pipelines and search utilities),
validates inputs with the standard helpers, trains on ``fit``, and serves
``predict`` / ``predict_proba`` / ``score`` from the selected checkpoint.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._rng import named_rng
from .attacks import AttackConfig
from .data import ArrayDataset, AugmentationPolicy
from .losses import ObjectiveConfig
from .models import Classifier, cnn_spec, mlp_spec
from .training import TrainConfig, fit


class RobustAlignmentClassifier(BaseEstimator, ClassifierMixin):
    """Adversarially trained classifier with boundary-aware objectives.

    Parameters mirror the training configuration: ``variant`` picks the
    objective ("pgd-at", "trades", "mart", "cons-at", "raat", "raat++"),
    ``epsilon``/``step_size``/``attack_steps``/``norm`` set the threat
    model, and ``lam``/``eta``/``gamma`` weigh the regularizer, the
    boundary-detection budget ratio, and the interpolation Beta draw.
    Inputs must lie in [0, 1]; flat feature vectors train the MLP path and
    ``architecture="cnn"`` reshapes rows to (3, 32, 32).
    """

    def __init__(self, variant="raat", architecture="mlp", hidden=(64, 64),
                 channels=(16, 32, 32, 64), epsilon=8 / 255, step_size=2 / 255,
                 attack_steps=10, norm="linf", random_start=True,
                 lam=1.0, eta=0.1, gamma=0.75, misclassified_mode="gated",
                 supervised_branch="raw-input", epochs=10, batch_size=128,
                 learning_rate=0.1, momentum=0.9, weight_decay=5e-4,
                 decay_epochs=(8, 9), ema=False, ema_decay=0.999,
                 augment=False, validation_fraction=0.2, dtype="float64", seed=0):
        self.variant = variant
        self.architecture = architecture
        self.hidden = hidden
        self.channels = channels
        self.epsilon = epsilon
        self.step_size = step_size
        self.attack_steps = attack_steps
        self.norm = norm
        self.random_start = random_start
        self.lam = lam
        self.eta = eta
        self.gamma = gamma
        self.misclassified_mode = misclassified_mode
        self.supervised_branch = supervised_branch
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.decay_epochs = decay_epochs
        self.ema = ema
        self.ema_decay = ema_decay
        self.augment = augment
        self.validation_fraction = validation_fraction
        self.dtype = dtype
        self.seed = seed

    # ------------------------------------------------------------------ sklearn

    def _validate_inputs(self, X, y=None, fitting=False):
        if y is not None:
            X, y = check_X_y(X, y, dtype=np.float64)
        else:
            X = check_array(X, dtype=np.float64)
        if X.min() < 0.0 or X.max() > 1.0:
            raise ValueError("inputs must lie in [0, 1]; rescale before fitting")
        if fitting:
            self.n_features_in_ = X.shape[1]
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X, y

    def _build_spec(self, n_features, n_classes):
        if self.architecture == "cnn":
            if n_features != 3 * 32 * 32:
                raise ValueError("cnn architecture expects 3072 features (3x32x32 images)")
            return cnn_spec(n_classes, channels=tuple(self.channels))
        if self.architecture == "mlp":
            return mlp_spec(n_features, n_classes, hidden=tuple(self.hidden))
        raise ValueError(f"unknown architecture {self.architecture!r}")

    def fit(self, X, y):
        X, y = self._validate_inputs(X, y, fitting=True)
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least 2 classes")
        encoded = np.searchsorted(self.classes_, y)

        spec = self._build_spec(X.shape[1], len(self.classes_))
        classifier = Classifier(spec, dtype=self.dtype, rng=named_rng(self.seed, "init"))

        n = len(X)
        order = named_rng(self.seed, "split").permutation(n)
        n_eval = max(1, int(round(self.validation_fraction * n))) if self.validation_fraction > 0 else 0
        if n_eval and n - n_eval >= 1:
            eval_idx, train_idx = order[:n_eval], order[n_eval:]
        else:
            eval_idx = train_idx = order
        train_ds = ArrayDataset(X[train_idx], encoded[train_idx], len(self.classes_))
        eval_ds = ArrayDataset(X[eval_idx], encoded[eval_idx], len(self.classes_))

        cfg = TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, momentum=self.momentum,
            weight_decay=self.weight_decay, learning_rate=self.learning_rate,
            decay_epochs=tuple(self.decay_epochs), seed=self.seed,
            ema_enabled=self.ema, ema_decay=self.ema_decay,
            objective=ObjectiveConfig(
                variant=self.variant, lam=self.lam, eta=self.eta, gamma=self.gamma,
                misclassified_mode=self.misclassified_mode,
                supervised_branch=self.supervised_branch),
            attack=AttackConfig(norm=self.norm, eps=self.epsilon, alpha=self.step_size,
                                steps=self.attack_steps, random_start=self.random_start),
            augmentation=AugmentationPolicy(enabled=bool(self.augment)),
        )
        best, log = fit(cfg, classifier, train_ds, eval_ds)
        classifier.set_parameters(best.parameters)
        self.model_ = classifier
        self.best_epoch_ = best.epoch
        self.history_ = log
        return self

    def _model_inputs(self, X):
        if self.architecture == "cnn":
            return X.reshape(-1, 3, 32, 32)
        return X

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X, _ = self._validate_inputs(X)
        return self.model_.forward(self._model_inputs(X)).probabilities

    def predict(self, X):
        check_is_fitted(self, "model_")
        X, _ = self._validate_inputs(X)
        labels = self.model_.forward(self._model_inputs(X)).labels
        return self.classes_[labels]
