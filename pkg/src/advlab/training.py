"""Outer minimization: SGD with momentum, the step learning-rate schedule,
per-epoch evaluation, best-checkpoint selection, and optional EMA weight
averaging.

Every batch freezes a parameter snapshot, partitions against it when the
objective calls for it, generates the variant's adversarial inputs, and
takes one SGD step on the composite objective. All randomness flows from
``TrainConfig.seed`` through named substreams, so runs are bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from ._rng import named_rng
from .attacks import AttackConfig, pgd, trades_inner
from .data import ArrayDataset, AugmentationPolicy, augment_pair, batch_indices
from .evaluation import accuracy
from .losses import AdversarialInputs, ObjectiveConfig, composite_objective
from .models import Classifier, save_checkpoint
from .partition import PartitionMasks, partition_batch
from .validation import NumericError, ValidationError, require


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 110
    batch_size: int = 128
    momentum: float = 0.9
    weight_decay: float = 5e-4
    learning_rate: float = 0.1
    decay_epochs: tuple[int, ...] = (100, 105)
    decay_factor: float = 0.1
    seed: int = 0
    ema_enabled: bool = False
    ema_decay: float = 0.999
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    eval_attack: AttackConfig | None = None  # defaults to 10-step CE at the threat model
    augmentation: AugmentationPolicy = field(default_factory=AugmentationPolicy)
    #: Per-subset attack-budget fractions (1.0 full, eta-reduced, 0.0 clean)
    #: for the boundary-role protocol; None trains the plain objective.
    subset_budgets: dict | None = None
    out_dir: str | None = None
    partition_log: str | None = None

    def __post_init__(self):
        require(self.epochs >= 1, "epochs must be >= 1")
        require(self.batch_size >= 1, "batch size must be >= 1")
        require(self.learning_rate >= 0 and self.momentum >= 0 and self.weight_decay >= 0,
                "rates must be >= 0")
        require(0.0 <= self.ema_decay <= 1.0, "ema decay must be in [0, 1]")
        for e in self.decay_epochs:
            require(0 <= e < self.epochs, f"decay epoch {e} outside [0, {self.epochs})")

    def resolved_eval_attack(self) -> AttackConfig:
        if self.eval_attack is not None:
            return self.eval_attack
        return replace(self.attack, steps=10, inner_loss="ce", random_start=True)


@dataclass
class CheckpointRecord:
    parameters: list
    epoch: int
    clean_acc: float
    pgd10_acc: float
    metadata: dict = field(default_factory=dict)
    ema_parameters: list | None = None

    def __post_init__(self):
        require(0.0 <= self.clean_acc <= 100.0 and 0.0 <= self.pgd10_acc <= 100.0,
                "accuracies must lie in [0, 100]", ValidationError)


# ----------------------------------------------------------------- primitives

def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], momentum_state: list[np.ndarray],
             lr: float, momentum: float, weight_decay: float) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """One momentum-SGD update; weight decay enters through the gradient.

    buffer <- momentum * buffer + (grad + weight_decay * param)
    param  <- param - lr * buffer
    """
    new_params, new_state = [], []
    for p, g, b in zip(params, grads, momentum_state):
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient in sgd_step")
        buf = momentum * b + (g + weight_decay * p)
        new_params.append(p - lr * buf)
        new_state.append(buf)
    return new_params, new_state


def _sgd_step_inplace(params: list[torch.Tensor], grads: list[torch.Tensor],
                      buffers: list[torch.Tensor], lr: float, momentum: float,
                      weight_decay: float) -> None:
    """Torch twin of :func:`sgd_step`, same arithmetic, updating in place."""
    with torch.no_grad():
        for p, g, b in zip(params, grads, buffers):
            if not bool(torch.isfinite(g).all()):
                raise NumericError("non-finite gradient")
            b.mul_(momentum).add_(g + weight_decay * p)
            p.add_(b, alpha=-lr)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Piecewise-constant schedule: multiply by the decay factor at each decay epoch."""
    require(0 <= epoch < cfg.epochs, f"epoch {epoch} outside [0, {cfg.epochs})")
    n_decays = sum(1 for e in cfg.decay_epochs if epoch >= e)
    return cfg.learning_rate * (cfg.decay_factor ** n_decays)


def ema_update(avg_params: list[np.ndarray], params: list[np.ndarray],
               decay: float) -> list[np.ndarray]:
    """avg <- decay * avg + (1 - decay) * param, elementwise."""
    require(0.0 <= decay <= 1.0, "decay must be in [0, 1]")
    return [decay * a + (1.0 - decay) * p for a, p in zip(avg_params, params)]


# ------------------------------------------------------------------- training

def _stack_augment_pair(x: np.ndarray, indices: np.ndarray, epoch: int, seed: int,
                        policy: AugmentationPolicy) -> tuple[np.ndarray, np.ndarray]:
    """Per-example augmentation pair with (seed, example, epoch)-keyed streams."""
    a_list, b_list = [], []
    for row, example_idx in zip(x, indices):
        rng = named_rng(seed, "augment", epoch, int(example_idx))
        a, b = augment_pair(row, policy, rng)
        a_list.append(a)
        b_list.append(b)
    return np.stack(a_list), np.stack(b_list)


def _build_batch_inputs(cfg: TrainConfig, frozen: Classifier, x: np.ndarray, y: np.ndarray,
                        indices: np.ndarray, epoch: int, batch_no: int,
                        masks: PartitionMasks | None) -> AdversarialInputs:
    """Generate the adversarial inputs the configured variant consumes."""
    obj = cfg.objective
    attack_rng = named_rng(cfg.seed, "attack", epoch, batch_no)

    aug_a = aug_b = aug_a_adv = aug_b_adv = None
    if obj.needs_augmentation_pair:
        aug_a, aug_b = _stack_augment_pair(x, indices, epoch, cfg.seed, cfg.augmentation)

    origin = x
    if obj.supervised_branch == "augmented" and aug_a is not None:
        origin = aug_a
    if obj.variant == "trades":
        x_adv = trades_inner(frozen, origin, cfg.attack, attack_rng)
    else:
        x_adv = pgd(frozen, origin, y, cfg.attack, attack_rng)

    if obj.needs_augmentation_pair:
        aug_a_adv = pgd(frozen, aug_a, y, cfg.attack, attack_rng)
        aug_b_adv = pgd(frozen, aug_b, y, cfg.attack, attack_rng)

    return AdversarialInputs(
        x_adv=x_adv,
        x_reduced=None if masks is None else masks.x_reduced,
        aug_a=aug_a, aug_b=aug_b, aug_a_adv=aug_a_adv, aug_b_adv=aug_b_adv,
    )


def _override_supervised_inputs(x: np.ndarray, adv: AdversarialInputs,
                                masks: PartitionMasks, budgets: dict) -> AdversarialInputs:
    """Swap the supervised batch per-subset: full budget, reduced, or clean.

    Misclassified examples always train clean under the protocol.
    """
    chosen = np.array(adv.x_adv, copy=True)
    subsets = {"non_boundary": masks.non_boundary, "boundary": masks.boundary}
    for name, mask in subsets.items():
        fraction = float(budgets.get(name, 1.0))
        if fraction == 0.0:
            chosen[mask] = x[mask]
        elif fraction < 1.0:
            chosen[mask] = masks.x_reduced[mask]
    chosen[masks.misclassified] = x[masks.misclassified]
    return replace_adv(adv, x_adv=chosen)


def replace_adv(adv: AdversarialInputs, **kw) -> AdversarialInputs:
    params = dict(adv.__dict__)
    params.update(kw)
    return AdversarialInputs(**params)


def fit(cfg: TrainConfig, classifier: Classifier, dataset: ArrayDataset,
        eval_dataset: ArrayDataset) -> tuple[CheckpointRecord, list[dict]]:
    """Train and return the checkpoint with the highest 10-step robust
    accuracy (earliest epoch on ties) plus the per-epoch log."""
    require(len(dataset) >= 1 and len(eval_dataset) >= 1, "datasets must be non-empty", ValidationError)
    obj = cfg.objective
    needs_partition = obj.needs_partition or cfg.subset_budgets is not None
    eval_attack = cfg.resolved_eval_attack()
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    partition_log_f = open(cfg.partition_log, "w", encoding="utf-8") if cfg.partition_log else None

    module_params = list(classifier.module.parameters())
    buffers = [torch.zeros_like(p) for p in module_params]
    ema_params = classifier.get_parameters() if cfg.ema_enabled else None

    log: list[dict] = []
    best: CheckpointRecord | None = None
    try:
        for epoch in range(cfg.epochs):
            lr = lr_at(epoch, cfg)
            data_rng = named_rng(cfg.seed, "data", epoch)
            epoch_loss_sum, epoch_examples = 0.0, 0
            epoch_counts = {"non_boundary": 0, "boundary": 0, "misclassified": 0} if needs_partition else None

            for batch_no, idx in enumerate(batch_indices(len(dataset), cfg.batch_size, data_rng)):
                x = dataset.inputs[idx]
                y = dataset.labels[idx]
                if x.min() < 0.0 or x.max() > 1.0:
                    raise ValidationError("training batch left [0, 1]")

                frozen = classifier.clone()
                frozen.set_train_mode(False)

                masks = None
                if needs_partition:
                    masks = partition_batch(frozen, x, y, obj.eta, cfg.attack,
                                            named_rng(cfg.seed, "partition", epoch, batch_no))
                    for k, v in masks.counts().items():
                        epoch_counts[k] += v
                    if partition_log_f:
                        rec = {"epoch": epoch, "batch": batch_no, **masks.counts()}
                        partition_log_f.write(json.dumps(rec, sort_keys=True) + "\n")

                adv = _build_batch_inputs(cfg, frozen, x, y, idx, epoch, batch_no, masks)
                if cfg.subset_budgets is not None:
                    adv = _override_supervised_inputs(x, adv, masks, cfg.subset_budgets)

                report = composite_objective(obj, classifier, frozen, (x, y), masks, adv,
                                             named_rng(cfg.seed, "beta", epoch, batch_no))
                grads = torch.autograd.grad(report.tensor, module_params)
                _sgd_step_inplace(module_params, list(grads), buffers, lr,
                                  cfg.momentum, cfg.weight_decay)
                if not classifier.parameters_finite():
                    raise NumericError("parameters became non-finite")
                if ema_params is not None:
                    ema_params = ema_update(ema_params, classifier.get_parameters(), cfg.ema_decay)

                epoch_loss_sum += report.total * len(y)
                epoch_examples += len(y)

            clean_acc = accuracy(classifier, eval_dataset, None)
            pgd10_acc = accuracy(classifier, eval_dataset, eval_attack,
                                 named_rng(cfg.seed, "eval", epoch))
            record = {
                "epoch": epoch,
                "lr": lr,
                "train_loss": epoch_loss_sum / max(1, epoch_examples),
                "clean_acc": clean_acc,
                "pgd10_acc": pgd10_acc,
                "subset_counts": epoch_counts,
            }
            log.append(record)

            if best is None or pgd10_acc > best.pgd10_acc:
                best = CheckpointRecord(
                    parameters=classifier.get_parameters(),
                    epoch=epoch,
                    clean_acc=clean_acc,
                    pgd10_acc=pgd10_acc,
                    metadata={"variant": obj.variant, "seed": cfg.seed},
                    ema_parameters=None if ema_params is None else [p.copy() for p in ema_params],
                )

            if out_dir:
                save_checkpoint(classifier, out_dir / "latest.ckpt",
                                {"arch": classifier.spec.to_dict(), "epoch": epoch,
                                 "seed": cfg.seed, "variant": obj.variant,
                                 "metrics": {"clean_acc": clean_acc, "pgd10_acc": pgd10_acc}})
                with open(out_dir / "train_log.jsonl", "w", encoding="utf-8") as f:
                    for rec in log:
                        f.write(json.dumps(rec, sort_keys=True) + "\n")
    finally:
        if partition_log_f:
            partition_log_f.close()

    if out_dir and best is not None:
        snapshot = Classifier(classifier.spec, dtype=classifier.dtype)
        snapshot.set_parameters(best.parameters)
        save_checkpoint(snapshot, out_dir / "best.ckpt",
                        {"arch": classifier.spec.to_dict(), "epoch": best.epoch,
                         "seed": cfg.seed, "variant": obj.variant,
                         "metrics": {"clean_acc": best.clean_acc, "pgd10_acc": best.pgd10_acc}})
    return best, log
