"""Inner-maximization procedures.

Iterated projected gradient ascent under l-inf or l2 budgets with a
selectable ascent objective (cross-entropy, KL against the clean
prediction, or the margin loss), plus the reduced-budget variant used to
detect boundary samples.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

from .models import Classifier
from .validation import ConfigurationError, NumericError, ValidationError, require

NORMS = ("linf", "l2")


@dataclass(frozen=True)
class AttackConfig:
    norm: str = "linf"
    eps: float = 8 / 255
    alpha: float = 2 / 255
    steps: int = 10
    random_start: bool = True
    inner_loss: str = "ce"  # "ce" | "kl" | "cw"
    clip: bool = True

    def __post_init__(self):
        require(self.norm in NORMS, f"norm must be one of {NORMS}, got {self.norm!r}")
        require(self.eps >= 0, "eps must be >= 0")
        require(self.alpha >= 0, "alpha must be >= 0")
        require(self.steps >= 0, "steps must be >= 0")
        require(self.inner_loss in ("ce", "kl", "cw"), f"unknown inner loss {self.inner_loss!r}")

    def scaled(self, factor: float) -> "AttackConfig":
        """Same attack with budget and step size scaled by ``factor``."""
        return replace(self, eps=self.eps * factor, alpha=self.alpha * factor)


def project(delta: np.ndarray, norm: str, eps: float) -> np.ndarray:
    """Project a perturbation onto the norm ball of radius eps.

    l-inf clamps elementwise; l2 rescales only when the norm exceeds eps.
    Batched input is projected per leading-axis example.
    """
    require(norm in NORMS, f"norm must be one of {NORMS}, got {norm!r}")
    require(eps >= 0, "eps must be >= 0")
    delta = np.asarray(delta, dtype=np.float64)
    if norm == "linf":
        return np.clip(delta, -eps, eps)
    flat = delta.reshape(delta.shape[0], -1) if delta.ndim > 1 else delta.reshape(1, -1)
    norms = np.linalg.norm(flat, axis=1)
    scale = np.where(norms > eps, np.divide(eps, norms, out=np.ones_like(norms), where=norms > 0), 1.0)
    out = flat * scale[:, None]
    return out.reshape(delta.shape)


def _project_t(delta: torch.Tensor, norm: str, eps: float) -> torch.Tensor:
    if norm == "linf":
        return delta.clamp(-eps, eps)
    flat = delta.reshape(delta.shape[0], -1)
    norms = flat.norm(dim=1, keepdim=True)
    scale = torch.where(norms > eps, eps / norms.clamp(min=1e-300), torch.ones_like(norms))
    return (flat * scale).reshape(delta.shape)


def _random_start_t(shape: tuple, norm: str, eps: float, rng: np.random.Generator,
                    dtype: torch.dtype) -> torch.Tensor:
    """Uniform draw from the eps-ball, batched over the leading axis."""
    if norm == "linf":
        delta = rng.uniform(-eps, eps, size=shape)
    else:
        flat_dim = int(np.prod(shape[1:]))
        direction = rng.standard_normal((shape[0], flat_dim))
        norms = np.linalg.norm(direction, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        radius = eps * rng.random((shape[0], 1)) ** (1.0 / flat_dim)
        delta = (direction / norms * radius).reshape(shape)
    return torch.from_numpy(np.ascontiguousarray(delta)).to(dtype)


def _step_direction(grad: torch.Tensor, norm: str) -> torch.Tensor:
    if norm == "linf":
        return torch.sign(grad)  # sign(0) = 0: degenerate coordinates stay put
    flat = grad.reshape(grad.shape[0], -1)
    norms = flat.norm(dim=1, keepdim=True)
    scale = torch.where(norms > 0, 1.0 / norms.clamp(min=1e-300), torch.zeros_like(norms))
    return (flat * scale).reshape(grad.shape)


def pgd(classifier: Classifier, x, y=None, cfg: AttackConfig = AttackConfig(),
        rng: np.random.Generator | None = None) -> np.ndarray:
    """Projected gradient ascent on the configured inner loss.

    Parameters are treated as frozen; the output stays inside the eps-ball
    of ``x`` and, when ``cfg.clip`` is set, inside [0, 1].

    The "kl" inner loss ascends divergence from the clean prediction of
    ``x`` (labels unused); "ce" and "cw" require labels.
    """
    if cfg.random_start and rng is None:
        raise ConfigurationError("random_start attack requires an rng")
    single = np.asarray(x).shape == classifier.spec.input_shape
    x0 = classifier.to_input_tensor(x)
    y_t = None
    if y is not None:
        y_t = torch.as_tensor(np.atleast_1d(np.asarray(y)), dtype=torch.int64)
    if cfg.inner_loss in ("ce", "cw") and y_t is None:
        raise ValidationError(f"inner loss {cfg.inner_loss!r} requires labels")

    reference = None
    if cfg.inner_loss == "kl":
        with torch.no_grad():
            reference = torch.softmax(classifier.logits_t(x0), dim=1)

    adv = x0.clone()
    if cfg.random_start:
        adv = adv + _random_start_t(tuple(x0.shape), cfg.norm, cfg.eps, rng, x0.dtype)
        if cfg.clip:
            adv = adv.clamp(0.0, 1.0)

    for _ in range(cfg.steps):
        adv_req = adv.detach().requires_grad_(True)
        loss = classifier.input_loss_t(adv_req, y_t, cfg.inner_loss, reference)
        grad, = torch.autograd.grad(loss, adv_req)
        if not bool(torch.isfinite(grad).all()):
            raise NumericError("attack aborted: non-finite gradient")
        adv = adv.detach() + cfg.alpha * _step_direction(grad, cfg.norm)
        adv = x0 + _project_t(adv - x0, cfg.norm, cfg.eps)
        if cfg.clip:
            adv = adv.clamp(0.0, 1.0)

    out = adv.detach().cpu().numpy().astype(np.float64)
    return out[0] if single else out


def reduced_pgd(classifier: Classifier, x, y, cfg: AttackConfig, eta: float,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """PGD under the reduced budget eta*eps with step size eta*alpha."""
    require(0.0 < eta <= 1.0, f"eta must be in (0, 1], got {eta}")
    return pgd(classifier, x, y, cfg.scaled(eta), rng)


def cw_margin(logits, y: int) -> float:
    """Margin loss for one logit row: max over wrong classes minus the true logit."""
    logits = np.asarray(logits, dtype=np.float64)
    require(logits.ndim == 1 and logits.shape[0] >= 2, "expected one logit row with K >= 2", ValidationError)
    require(0 <= y < logits.shape[0], "label out of range", ValidationError)
    others = np.delete(logits, y)
    return float(others.max() - logits[y])


def trades_inner(classifier: Classifier, x, cfg: AttackConfig,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Attack that ascends KL(p(x) || p(x')) with the clean prediction frozen."""
    return pgd(classifier, x, None, replace(cfg, inner_loss="kl"), rng)


def ball_distance(x_adv: np.ndarray, x: np.ndarray, norm: str) -> np.ndarray:
    """Per-example distance used by feasibility assertions."""
    delta = np.asarray(x_adv, dtype=np.float64) - np.asarray(x, dtype=np.float64)
    flat = delta.reshape(delta.shape[0], -1) if delta.ndim > 1 else delta.reshape(1, -1)
    if norm == "linf":
        return np.abs(flat).max(axis=1)
    return np.linalg.norm(flat, axis=1)
