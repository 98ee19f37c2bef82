"""Surrogate losses and composite training objectives.

Scalar numpy primitives (cross-entropy, boosted cross-entropy, KL, and the
Jensen-Shannon consistency loss) are the reference implementations; the
torch twins below them use the identical formula so that a composite
objective decomposes exactly into the tested primitives. The composite
covers six objective variants: plain adversarial cross-entropy training
("pgd-at"), the KL-regularized trade-off objective ("trades"), the
misclassification-aware variant ("mart"), augmentation-consistency
training ("cons-at"), and the boundary-partitioned interpolation-
consistency objectives ("raat", "raat++").
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .models import Classifier
from .partition import PartitionMasks
from .validation import ConfigurationError, ValidationError, require

PROB_FLOOR = 1e-12

VARIANTS = ("pgd-at", "trades", "mart", "cons-at", "raat", "raat++")
MISCLASSIFIED_MODES = ("gated", "standard", "clean", "mart")
SUPERVISED_BRANCHES = ("raw-input", "augmented")

#: Variants whose supervised branch is gated by the reduced-attack partition.
PARTITIONED_VARIANTS = ("raat", "raat++")


def normalize_variant(name: str) -> str:
    key = str(name).strip().lower().replace("_", "-")
    aliases = {"pgdat": "pgd-at", "consat": "cons-at", "raat-pp": "raat++", "raatpp": "raat++"}
    key = aliases.get(key, key)
    if key not in VARIANTS:
        raise ConfigurationError(f"unknown objective variant {name!r}; expected one of {VARIANTS}")
    return key


@dataclass(frozen=True)
class ObjectiveConfig:
    """Objective variant plus its hyperparameters.

    ``lam`` weighs the regularization term, ``eta`` is the reduced-budget
    ratio for boundary detection, ``gamma`` parameterizes the Beta(gamma,
    gamma) interpolation draw. ``misclassified_mode`` picks the supervised
    treatment of clean-misclassified examples in the partitioned variants:
    "gated" lets them flow through the reduced-prediction gate, "standard"
    gives them the full-budget loss, "clean" the unperturbed loss, and
    "mart" adds a stability term on top of the full-budget loss.
    ``supervised_branch`` selects whether the supervised attack starts from
    the raw input or its first augmentation. ``boundary_reduction`` can
    disable the reduced-budget branch so every correct example trains at
    full budget (ablation switch).
    """

    variant: str = "raat"
    lam: float = 1.0
    eta: float = 0.1
    gamma: float = 0.75
    misclassified_mode: str = "gated"
    supervised_branch: str = "raw-input"
    boundary_reduction: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", normalize_variant(self.variant))
        require(self.lam >= 0, "lambda must be >= 0")
        require(0.0 < self.eta <= 1.0, "eta must be in (0, 1]")
        require(self.gamma > 0, "gamma must be > 0")
        require(self.misclassified_mode in MISCLASSIFIED_MODES,
                f"misclassified_mode must be one of {MISCLASSIFIED_MODES}")
        require(self.supervised_branch in SUPERVISED_BRANCHES,
                f"supervised_branch must be one of {SUPERVISED_BRANCHES}")

    @property
    def needs_partition(self) -> bool:
        return self.variant in PARTITIONED_VARIANTS

    @property
    def needs_augmentation_pair(self) -> bool:
        return self.variant in ("cons-at", "raat", "raat++")

    @staticmethod
    def defaults_for(variant: str, **overrides) -> "ObjectiveConfig":
        """Paper-default hyperparameters: lambda 6 for trades/mart, 1 otherwise."""
        variant = normalize_variant(variant)
        lam = 6.0 if variant in ("trades", "mart") else 1.0
        params = {"variant": variant, "lam": lam}
        params.update(overrides)
        return ObjectiveConfig(**params)


# ------------------------------------------------------------ scalar primitives

def _check_prob_row(p, name: str = "p") -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    require(arr.ndim == 1 and arr.shape[0] >= 2, f"{name} must be one probability row", ValidationError)
    return arr


def ce(p, y: int) -> float:
    """Cross-entropy -log p_y, probabilities clamped at the floor."""
    p = _check_prob_row(p)
    require(0 <= y < p.shape[0], "label out of range", ValidationError)
    return float(-np.log(max(p[y], PROB_FLOOR)))


def bce(p, y: int) -> float:
    """Boosted cross-entropy: ce plus a margin term on the strongest wrong class."""
    p = _check_prob_row(p)
    require(0 <= y < p.shape[0], "label out of range", ValidationError)
    wrong_max = np.delete(p, y).max()
    return ce(p, y) + float(-np.log(max(1.0 - wrong_max, PROB_FLOOR)))


def kl(p, q) -> float:
    """KL divergence sum p log(p/q) in nats, both arguments clamped."""
    p = np.maximum(_check_prob_row(p), PROB_FLOOR)
    q = np.maximum(_check_prob_row(q, "q"), PROB_FLOOR)
    return float(np.sum(p * (np.log(p) - np.log(q))))


def js_consistency(p_a, p_b) -> float:
    """Jensen-Shannon divergence against the midpoint mixture, in nats."""
    p_a = _check_prob_row(p_a, "p_a")
    p_b = _check_prob_row(p_b, "p_b")
    m = (p_a + p_b) / 2.0
    return 0.5 * (kl(p_a, m) + kl(p_b, m))


def sample_beta(gamma: float, rng: np.random.Generator, size: int | None = None):
    """Interpolation coefficients from Beta(gamma, gamma)."""
    require(gamma > 0, "gamma must be > 0")
    return rng.beta(gamma, gamma, size=size)


# --------------------------------------------------------------- torch kernels
# Same formulas as the scalar primitives, per batch row, differentiable.

def _clamp(t: torch.Tensor) -> torch.Tensor:
    return torch.clamp(t, min=PROB_FLOOR)


def ce_rows(probs: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    return -torch.log(_clamp(probs.gather(1, y.view(-1, 1)).squeeze(1)))


def bce_rows(probs: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    masked = probs.clone()
    masked.scatter_(1, y.view(-1, 1), -1.0)
    wrong_max = masked.max(dim=1).values
    return ce_rows(probs, y) - torch.log(_clamp(1.0 - wrong_max))


def kl_rows(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    p_c, q_c = _clamp(p), _clamp(q)
    return (p_c * (torch.log(p_c) - torch.log(q_c))).sum(dim=1)


def js_rows(p_a: torch.Tensor, p_b: torch.Tensor) -> torch.Tensor:
    m = (p_a + p_b) / 2.0
    return 0.5 * (kl_rows(p_a, m) + kl_rows(p_b, m))


def _probs(classifier: Classifier, x_t: torch.Tensor) -> torch.Tensor:
    return torch.softmax(classifier.logits_t(x_t), dim=1)


# ----------------------------------------------------------- interpolation term

def _dicar_rows(classifier: Classifier, aug_a_t, aug_b_t, adv_a_t, adv_b_t,
                beta_t: torch.Tensor) -> torch.Tensor:
    """Per-example consistency between the prediction at the interpolated
    adversarial inputs and the interpolation of the augmentations'
    predictions."""
    b = beta_t.view(-1, *([1] * (adv_a_t.ndim - 1)))
    interp_input = b * adv_a_t + (1.0 - b) * adv_b_t
    p_interp = _probs(classifier, interp_input)
    target = beta_t.view(-1, 1) * _probs(classifier, aug_a_t) \
        + (1.0 - beta_t.view(-1, 1)) * _probs(classifier, aug_b_t)
    return js_rows(p_interp, target)


def dicar_term(classifier: Classifier, aug_a, aug_b, adv_a, adv_b, beta,
               include_mask) -> float:
    """Mean interpolation-consistency loss over the included examples.

    ``beta`` is a scalar or per-example array; an all-false mask yields 0.
    """
    to_t = classifier.to_input_tensor
    aug_a_t, aug_b_t = to_t(aug_a), to_t(aug_b)
    adv_a_t, adv_b_t = to_t(adv_a), to_t(adv_b)
    for t in (aug_b_t, adv_a_t, adv_b_t):
        require(t.shape == aug_a_t.shape, "augmentation/adversarial shapes must match", ValidationError)
    n = aug_a_t.shape[0]
    beta_t = torch.as_tensor(np.broadcast_to(np.asarray(beta, dtype=np.float64), (n,)).copy(),
                             dtype=aug_a_t.dtype)
    mask = torch.as_tensor(np.broadcast_to(np.asarray(include_mask, dtype=bool), (n,)).copy())
    with torch.no_grad():
        rows = _dicar_rows(classifier, aug_a_t, aug_b_t, adv_a_t, adv_b_t, beta_t)
    if not bool(mask.any()):
        return 0.0
    return float(rows[mask].mean())


# ------------------------------------------------------------------- composite

@dataclass
class AdversarialInputs:
    """Attack outputs consumed by the composite objective.

    ``x_adv`` is the full-budget adversarial batch (generated per the
    variant's recipe), ``x_reduced`` the reduced-budget batch from the
    partition step, and the ``aug_*`` fields carry the augmentation pair
    with their adversarial counterparts. ``beta`` optionally pins the
    interpolation draw; otherwise it is sampled from the rng.
    """

    x_adv: np.ndarray
    x_reduced: np.ndarray | None = None
    aug_a: np.ndarray | None = None
    aug_b: np.ndarray | None = None
    aug_a_adv: np.ndarray | None = None
    aug_b_adv: np.ndarray | None = None
    beta: np.ndarray | None = None


@dataclass
class BatchLossReport:
    """Loss decomposition for one batch: total = supervised + lam * regularizer."""

    total: float
    supervised: float
    regularizer: float
    dicar: float
    lam: float
    per_subset: dict[str, float] = field(default_factory=dict)
    tensor: torch.Tensor | None = field(default=None, repr=False)


def composite_objective(cfg: ObjectiveConfig, classifier: Classifier,
                        frozen_classifier: Classifier | None, batch, masks: PartitionMasks | None,
                        adv: AdversarialInputs, rng: np.random.Generator | None = None) -> BatchLossReport:
    """Differentiable batch objective for the configured variant.

    Partitioned variants need ``masks`` (computed against the frozen
    snapshot) and the reduced/augmented inputs in ``adv``; the report's
    ``tensor`` field carries the autograd scalar.
    """
    x, y = batch
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    to_t = classifier.to_input_tensor
    y_t = torch.as_tensor(y, dtype=torch.int64)

    if cfg.needs_partition:
        if masks is None or adv.x_reduced is None:
            raise ValidationError(f"variant {cfg.variant!r} requires partition masks and reduced inputs")
        if len(masks.non_boundary) != n:
            raise ValidationError("mask length does not match batch")
    if cfg.needs_augmentation_pair:
        missing = any(v is None for v in (adv.aug_a, adv.aug_b, adv.aug_a_adv, adv.aug_b_adv))
        if missing:
            raise ValidationError(f"variant {cfg.variant!r} requires the augmentation pair and its attacks")

    x_adv_t = to_t(adv.x_adv)
    p_adv = _probs(classifier, x_adv_t)

    sup_rows: torch.Tensor
    reg_rows = None          # per-example regularizer rows averaged over the batch
    dicar_rows_t = None      # per-example consistency rows averaged over the gate
    dicar_gate = None

    if cfg.variant == "pgd-at":
        sup_rows = ce_rows(p_adv, y_t)
    elif cfg.variant == "trades":
        p_clean = _probs(classifier, to_t(x))
        sup_rows = ce_rows(p_clean, y_t)
        reg_rows = kl_rows(p_clean, p_adv)
    elif cfg.variant == "mart":
        p_clean = _probs(classifier, to_t(x))
        sup_rows = bce_rows(p_adv, y_t)
        p_true = p_clean.gather(1, y_t.view(-1, 1)).squeeze(1)
        reg_rows = kl_rows(p_clean, p_adv) * (1.0 - p_true)
    elif cfg.variant == "cons-at":
        sup_rows = ce_rows(p_adv, y_t)
        reg_rows = js_rows(_probs(classifier, to_t(adv.aug_a_adv)),
                           _probs(classifier, to_t(adv.aug_b_adv)))
    else:  # partitioned variants
        row_loss = ce_rows if cfg.variant == "raat" else bce_rows
        # The gates are frozen-snapshot constants, so the supervised branch
        # is one loss on a per-example selection of inputs: the full-budget
        # sample where the reduced attack failed, the reduced sample where
        # it succeeded, with the misclassified mode overriding its rows.
        if cfg.boundary_reduction:
            gate = masks.pred_reduced == y
        else:
            gate = np.ones(n, dtype=bool)
        x_sup = np.where(gate[(...,) + (None,) * (adv.x_adv.ndim - 1)], adv.x_adv, adv.x_reduced)
        if cfg.misclassified_mode == "standard":
            x_sup[masks.misclassified] = adv.x_adv[masks.misclassified]
        elif cfg.misclassified_mode == "clean":
            x_sup[masks.misclassified] = x[masks.misclassified]
        elif cfg.misclassified_mode == "mart":
            x_sup[masks.misclassified] = adv.x_adv[masks.misclassified]
        # "gated": misclassified examples flow through the reduced gate
        p_sup = _probs(classifier, to_t(x_sup)) if not np.array_equal(x_sup, adv.x_adv) else p_adv
        sup_rows = row_loss(p_sup, y_t)
        if cfg.misclassified_mode == "mart" and bool(masks.misclassified.any()):
            p_clean = _probs(classifier, to_t(x))
            mis = torch.as_tensor(masks.misclassified, dtype=torch.bool)
            sup_rows = sup_rows + torch.where(mis, kl_rows(p_clean, p_adv),
                                              torch.zeros_like(sup_rows))

        beta = adv.beta
        if beta is None:
            if rng is None:
                raise ValidationError("partitioned variants need an rng or pinned beta draws")
            beta = sample_beta(cfg.gamma, rng, size=n)
        beta_t = torch.as_tensor(np.broadcast_to(np.asarray(beta, dtype=np.float64), (n,)).copy(),
                                 dtype=x_adv_t.dtype)
        dicar_gate = torch.as_tensor(masks.pred_clean == y, dtype=torch.bool)
        dicar_rows_t = _dicar_rows(classifier, to_t(adv.aug_a), to_t(adv.aug_b),
                                   to_t(adv.aug_a_adv), to_t(adv.aug_b_adv), beta_t)
        if cfg.variant == "raat++":
            p_clean = _probs(classifier, to_t(x))
            p_true = p_clean.gather(1, y_t.view(-1, 1)).squeeze(1)
            reg_rows = kl_rows(p_clean, p_adv) * (1.0 - p_true)

    supervised_t = sup_rows.mean()

    dicar_t = torch.zeros((), dtype=supervised_t.dtype)
    if dicar_rows_t is not None and bool(dicar_gate.any()):
        dicar_t = dicar_rows_t[dicar_gate].mean()

    regularizer_t = dicar_t
    if reg_rows is not None:
        regularizer_t = regularizer_t + reg_rows.mean()

    total_t = supervised_t + cfg.lam * regularizer_t

    per_subset: dict[str, float] = {}
    if masks is not None and len(masks.non_boundary) == n:
        subsets = {"non_boundary": masks.non_boundary, "boundary": masks.boundary,
                   "misclassified": masks.misclassified}
        with torch.no_grad():
            for name, mask in subsets.items():
                mask_t = torch.as_tensor(mask, dtype=torch.bool)
                share = sup_rows[mask_t].sum() / n
                if reg_rows is not None:
                    share = share + cfg.lam * reg_rows[mask_t].sum() / n
                if dicar_rows_t is not None and bool(dicar_gate.any()):
                    included = dicar_gate & mask_t
                    share = share + cfg.lam * dicar_rows_t[included].sum() / dicar_gate.sum()
                per_subset[name] = float(share)

    return BatchLossReport(
        total=float(total_t.detach()),
        supervised=float(supervised_t.detach()),
        regularizer=float(regularizer_t.detach()),
        dicar=float(dicar_t.detach()),
        lam=cfg.lam,
        per_subset=per_subset,
        tensor=total_t,
    )
