"""Accuracy and robustness measurement, trade-off metrics, the latent
linear-interpolation deviation diagnostic, and the boundary-role training
protocol.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._rng import named_rng
from .attacks import AttackConfig, pgd, trades_inner
from .data import ArrayDataset, batch_indices
from .models import Classifier
from .validation import ValidationError, require

#: Named evaluation adversaries at a given threat model (norm, eps, alpha).
#: The margin attack runs 30 steps at the standard step size.
def attack_suite(norm: str = "linf", eps: float = 8 / 255, alpha: float = 2 / 255) -> dict[str, AttackConfig]:
    base = AttackConfig(norm=norm, eps=eps, alpha=alpha, random_start=True)
    return {
        "pgd10": replace(base, steps=10, inner_loss="ce"),
        "pgd100": replace(base, steps=100, inner_loss="ce"),
        "cw": replace(base, steps=30, inner_loss="cw"),
    }


FIG2_STRATEGIES = ("baseline", "boundary-to-threshold", "boundary-to-zero",
                   "nonboundary-to-threshold", "nonboundary-to-zero")

#: Per-subset attack-budget fractions for each protocol strategy.
FIG2_BUDGETS = {
    "baseline": {"non_boundary": 1.0, "boundary": 1.0},
    "boundary-to-threshold": {"non_boundary": 1.0, "boundary": "eta"},
    "boundary-to-zero": {"non_boundary": 1.0, "boundary": 0.0},
    "nonboundary-to-threshold": {"non_boundary": "eta", "boundary": 1.0},
    "nonboundary-to-zero": {"non_boundary": 0.0, "boundary": 1.0},
}


@dataclass
class EvalReport:
    clean_acc: float
    robust: dict[str, float] = field(default_factory=dict)
    nrr_score: float | None = None
    mean: float | None = None
    sample_count: int = 0
    robust_source: str | None = None
    alignment: "AlignmentProfile | None" = None

    def to_dict(self) -> dict:
        out = {
            "clean_acc": self.clean_acc,
            "robust": dict(self.robust),
            "nrr": self.nrr_score,
            "mean": self.mean,
            "sample_count": self.sample_count,
            "robust_source": self.robust_source,
        }
        if self.alignment is not None:
            out["alignment"] = {
                "mu_grid": list(self.alignment.mu_grid),
                "deviations": self.alignment.deviations.tolist(),
            }
        return out


@dataclass
class AlignmentProfile:
    """Mean distance between each layer's activation at an interpolated
    input and the straight line between its clean and adversarial
    activations, per interpolation coefficient."""

    mu_grid: np.ndarray       # (M,)
    deviations: np.ndarray    # (depth, M), >= 0, exactly 0 at mu in {0, 1}
    n_probes: int = 0


def accuracy(classifier: Classifier, dataset: ArrayDataset,
             attack_cfg: AttackConfig | None = None,
             rng: np.random.Generator | None = None, batch_size: int = 256) -> float:
    """Percentage of examples predicted correctly, after the attack if given.

    Counts are exact integers; the percentage is rounded to 2 decimals.
    """
    if len(dataset) == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    correct = 0
    for idx in batch_indices(len(dataset), batch_size):
        x = dataset.inputs[idx]
        y = dataset.labels[idx]
        if attack_cfg is not None:
            if attack_cfg.inner_loss == "kl":
                x = trades_inner(classifier, x, attack_cfg, rng)
            else:
                x = pgd(classifier, x, y, attack_cfg, rng)
        pred = classifier.forward(x).labels
        correct += int((pred == y).sum())
    return round(100.0 * correct / len(dataset), 2)


def nrr(clean: float, robust: float) -> float:
    """Harmonic mean of clean and robust accuracy; 0 when both are 0."""
    require(clean >= 0 and robust >= 0, "accuracies must be >= 0", ValidationError)
    if clean + robust == 0:
        return 0.0
    return 2.0 * clean * robust / (clean + robust)


def mean_score(clean: float, robust: float) -> float:
    """Arithmetic mean of clean and robust accuracy."""
    return (clean + robust) / 2.0


def evaluate(classifier: Classifier, dataset: ArrayDataset,
             attacks: dict[str, AttackConfig], seed: int = 0,
             external_aa: float | None = None,
             clean_override: float | None = None) -> EvalReport:
    """Full report: clean accuracy, per-attack robust accuracy, and the
    trade-off metrics computed against the externally supplied ensemble
    number when given, else the weakest internal result."""
    clean = accuracy(classifier, dataset, None) if clean_override is None else clean_override
    robust = {}
    for name, cfg in sorted(attacks.items()):
        robust[name] = accuracy(classifier, dataset, cfg, named_rng(seed, "eval-attack", name))
    if external_aa is not None:
        reference, source = external_aa, "external-aa"
    elif robust:
        source, reference = min(robust.items(), key=lambda kv: kv[1])
    else:
        reference, source = None, None
    report = EvalReport(clean_acc=clean, robust=robust, sample_count=len(dataset),
                        robust_source=source)
    if reference is not None:
        report.nrr_score = nrr(clean, reference)
        report.mean = mean_score(clean, reference)
    return report


def alignment_profile(classifier: Classifier, probe_set: ArrayDataset,
                      attack_cfg: AttackConfig, mu_grid=(0.0, 0.25, 0.5, 0.75, 1.0),
                      rng: np.random.Generator | None = None) -> AlignmentProfile:
    """Per-layer deviation from latent linearity along the clean-to-
    adversarial segment, averaged over the probe set.

    The interpolated input is (1-mu)*x + mu*x', so both endpoints evaluate
    the exact clean/adversarial activations and deviate by exactly zero.
    """
    mu_grid = np.asarray(mu_grid, dtype=np.float64)
    require(mu_grid.min() >= 0.0 and mu_grid.max() <= 1.0, "mu grid must lie in [0, 1]", ValidationError)
    require(0.0 in mu_grid and 1.0 in mu_grid, "mu grid must include 0 and 1", ValidationError)
    x = probe_set.inputs
    y = probe_set.labels
    x_adv = pgd(classifier, x, y, attack_cfg, rng)
    acts_clean = classifier.hidden_activations(x)
    acts_adv = classifier.hidden_activations(x_adv)
    depth = classifier.spec.depth
    deviations = np.zeros((depth, len(mu_grid)))
    for j, mu in enumerate(mu_grid):
        x_mu = (1.0 - mu) * x + mu * x_adv
        acts_mu = classifier.hidden_activations(x_mu)
        for layer in range(depth):
            target = (1.0 - mu) * acts_clean[layer] + mu * acts_adv[layer]
            diff = (acts_mu[layer] - target).reshape(len(x), -1)
            deviations[layer, j] = float(np.linalg.norm(diff, axis=1).mean())
    return AlignmentProfile(mu_grid=mu_grid, deviations=deviations, n_probes=len(x))


def figure2_protocol(base_train_cfg, classifier_factory, dataset: ArrayDataset,
                     eval_dataset: ArrayDataset, threshold_eta: float,
                     strategy: str) -> list[dict]:
    """Train once under the named boundary-role strategy and return the
    per-epoch curve rows (epoch, clean_acc, robust_acc, strategy).

    Strategies set the supervised attack budget per subset: full budget,
    the reduced threshold, or clean training; misclassified examples are
    always trained clean. The baseline keeps both correct subsets at full
    budget, so it is a partitioned run of plain adversarial cross-entropy
    training.
    """
    from .losses import ObjectiveConfig
    from .training import fit

    require(strategy in FIG2_STRATEGIES, f"unknown strategy {strategy!r}; expected {FIG2_STRATEGIES}")
    budgets = {k: (threshold_eta if v == "eta" else v) for k, v in FIG2_BUDGETS[strategy].items()}
    objective = ObjectiveConfig(variant="pgd-at", lam=0.0, eta=threshold_eta)
    cfg = replace(base_train_cfg, objective=objective, subset_budgets=budgets)
    _, log = fit(cfg, classifier_factory(), dataset, eval_dataset)
    return [
        {"epoch": rec["epoch"], "clean_acc": rec["clean_acc"],
         "robust_acc": rec["pgd10_acc"], "strategy": strategy}
        for rec in log
    ]
