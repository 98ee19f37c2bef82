"""Numerical bench for the package's theory results.

Linear classifiers on the two-class Gaussian model: the supervised
sample-mean estimator, the pseudo-labeled estimator built from unlabeled
draws, closed-form standard and l-inf robust error, and a dimension sweep
measuring the standard-vs-robust gap and how unlabeled data closes it.
Separately, an exact oracle comparing the interpolation-consistency loss
on polynomial models against its truncated tensor-series expansion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .data import GaussianModelSpec, sample_gaussian_model
from .validation import ConfigurationError, ValidationError, require

#: Frozen coefficient for the unlabeled budget m = ceil(C * sqrt(d)) in the
#: dimension sweep; calibrated once so the pseudo-labeled estimator's robust
#: error stays bounded across the default ladder.
UNLABELED_COEFF = 4.0

#: Default sweep regime: sigma = d^(1/4) * SIGMA_SCALE. The analysis regime
#: uses 1/32, which drives every error to ~0 at desk dimensions; the default
#: keeps the same scaling law with a visible Monte Carlo signal.
SIGMA_SCALE_DEFAULT = 0.5
SIGMA_SCALE_ANALYSIS = 1.0 / 32.0

#: Frozen perturbation budget for the default sweep, calibrated once with
#: UNLABELED_COEFF so the standard-vs-robust gap is monotone over the
#: default dimension ladder while the pseudo-labeled error stays bounded.
#: Kept below 1 so the noiseless (sigma = 0) limit has zero error for every
#: mean direction (eps * ||w||_1 < ||w||_2 * sqrt(d) = <w, mean>).
DEFAULT_SWEEP_EPS = 0.8


@dataclass(frozen=True)
class LinearClassifierW:
    """Linear decision rule sign(<w, x>), ties predicted as +1."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        require(np.all(np.isfinite(w)), "weights must be finite", ValidationError)
        object.__setattr__(self, "w", w)

    def predict(self, x: np.ndarray) -> np.ndarray:
        scores = np.asarray(x, dtype=np.float64) @ self.w
        return np.where(scores >= 0, 1, -1).astype(np.int64)


def sample_mean_classifier(labeled: list[tuple[np.ndarray, int]]) -> LinearClassifierW:
    """w = sum_i y_i x_i over the labeled sample."""
    require(len(labeled) >= 1, "need at least one labeled sample", ValidationError)
    w = sum(float(y) * np.asarray(x, dtype=np.float64) for x, y in labeled)
    return LinearClassifierW(w)


def cr_estimator(base: LinearClassifierW, unlabeled: list[np.ndarray]) -> LinearClassifierW:
    """Pseudo-label each unlabeled point with the base rule and take the
    label-weighted sample sum."""
    require(len(unlabeled) >= 1, "need at least one unlabeled sample", ValidationError)
    require(np.linalg.norm(base.w) > 0, "base classifier must be nonzero", ValidationError)
    x = np.stack([np.asarray(v, dtype=np.float64) for v in unlabeled])
    pseudo = base.predict(x)
    return LinearClassifierW((pseudo[:, None] * x).sum(axis=0))


def analytic_standard_error(w: np.ndarray, mean: np.ndarray, sigma: float) -> float:
    """P(misclassify) for sign(<w, x>) under the Gaussian model."""
    w = np.asarray(w, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    require(np.linalg.norm(w) > 0, "w must be nonzero", ValidationError)
    require(sigma > 0, "sigma must be > 0", ValidationError)
    return float(ndtr(-(w @ mean) / (sigma * np.linalg.norm(w))))


def analytic_robust_error(w: np.ndarray, mean: np.ndarray, sigma: float, eps: float) -> float:
    """Worst-case l-inf error: the adversary shifts the margin by eps * ||w||_1."""
    w = np.asarray(w, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    require(np.linalg.norm(w) > 0, "w must be nonzero", ValidationError)
    require(sigma > 0, "sigma must be > 0", ValidationError)
    require(eps >= 0, "eps must be >= 0", ValidationError)
    margin = w @ mean - eps * np.abs(w).sum()
    return float(ndtr(-margin / (sigma * np.linalg.norm(w))))


def _limit_error(w: np.ndarray, mean: np.ndarray, eps: float) -> float:
    """sigma -> 0 limit of the robust error: a step in the shifted margin."""
    margin = w @ mean - eps * np.abs(w).sum()
    return 0.0 if margin > 0 else (0.5 if margin == 0 else 1.0)


def monte_carlo_errors(w: np.ndarray, spec: GaussianModelSpec, eps: float, n: int,
                       rng: np.random.Generator, chunk: int = 200_000) -> tuple[float, float]:
    """Monte Carlo standard and robust error of sign(<w, x>); the oracle twin
    of the analytic formulas."""
    w = np.asarray(w, dtype=np.float64)
    shift = eps * np.abs(w).sum()
    wrong = wrong_rob = 0
    remaining = n
    while remaining > 0:
        take = min(chunk, remaining)
        x, y = sample_gaussian_model(spec, take, rng)
        score = y * (x @ w)
        wrong += int((score <= 0).sum())
        wrong_rob += int((score - shift <= 0).sum())
        remaining -= take
    return wrong / n, wrong_rob / n


def complexity_sweep(d_values: list[int], n: int = 1, m: int | None = None,
                     eps: float = DEFAULT_SWEEP_EPS, trials: int = 400,
                     sigma_scale: float = SIGMA_SCALE_DEFAULT,
                     unlabeled_coeff: float = UNLABELED_COEFF,
                     rng: np.random.Generator | None = None) -> list[dict]:
    """Mean standard/robust error of the n-sample estimator and robust error
    of the pseudo-labeled estimator, per dimension.

    The class mean is a fresh random direction of norm sqrt(d) per trial
    and sigma = sigma_scale * d^(1/4). ``m`` fixes the unlabeled budget;
    when None it scales as ceil(unlabeled_coeff * sqrt(d)).
    """
    require(list(d_values) == sorted(d_values), "d values must be ascending")
    require(trials >= 1, "trials must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    rows = []
    for d in d_values:
        sigma = sigma_scale * d ** 0.25
        m_d = m if m is not None else int(math.ceil(unlabeled_coeff * math.sqrt(d)))
        std_sum = rob_sum = cr_sum = 0.0
        for _ in range(trials):
            direction = rng.standard_normal(d)
            if sigma > 0:
                spec = GaussianModelSpec.with_sqrt_d_norm(direction, sigma)
                x, y = sample_gaussian_model(spec, n, rng)
                base = sample_mean_classifier(list(zip(x, y)))
                xu, _ = sample_gaussian_model(spec, m_d, rng)
                refined = cr_estimator(base, list(xu))
                std_sum += analytic_standard_error(base.w, spec.mean, sigma)
                rob_sum += analytic_robust_error(base.w, spec.mean, sigma, eps)
                cr_sum += analytic_robust_error(refined.w, spec.mean, sigma, eps)
            else:
                mean = direction * (math.sqrt(d) / np.linalg.norm(direction))
                std_sum += 0.0 if mean @ mean > 0 else 1.0
                rob_sum += _limit_error(mean, mean, eps)
                cr_sum += _limit_error(mean, mean, eps)
        rows.append({
            "d": d,
            "std_err": std_sum / trials,
            "rob_err": rob_sum / trials,
            "cr_rob_err": cr_sum / trials,
            "m": m_d,
        })
    return rows


# ------------------------------------------------------------ expansion oracle

@dataclass
class PolynomialModel:
    """Scalar polynomial of degree <= 3 with explicit symmetric coefficient
    tensors: f(x) = c + <g, x> + x'Hx/2 + T[x,x,x]/6."""

    constant: float
    gradient: np.ndarray           # (d,)
    hessian: np.ndarray            # (d, d), symmetric
    third_order: np.ndarray | None = None  # (d, d, d), fully symmetric

    def __post_init__(self):
        g = np.asarray(self.gradient, dtype=np.float64)
        h = np.asarray(self.hessian, dtype=np.float64)
        require(h.shape == (g.shape[0],) * 2, "hessian shape mismatch", ValidationError)
        require(np.allclose(h, h.T), "hessian must be symmetric", ValidationError)
        t = self.third_order
        if t is not None:
            t = np.asarray(t, dtype=np.float64)
            require(t.shape == (g.shape[0],) * 3, "third-order shape mismatch", ValidationError)
            for axes in ((1, 0, 2), (0, 2, 1), (2, 1, 0)):
                require(np.allclose(t, np.transpose(t, axes)),
                        "third-order tensor must be symmetric", ValidationError)
        object.__setattr__(self, "gradient", g)
        object.__setattr__(self, "hessian", h)
        object.__setattr__(self, "third_order", t)

    @property
    def dim(self) -> int:
        return self.gradient.shape[0]

    def __call__(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64)
        value = self.constant + self.gradient @ x + 0.5 * x @ self.hessian @ x
        if self.third_order is not None:
            value += np.einsum("ijk,i,j,k->", self.third_order, x, x, x) / 6.0
        return float(value)

    def derivative_contraction(self, order: int, x: np.ndarray, delta: np.ndarray) -> float:
        """Full contraction vec[d^k f(x)]' delta^(tensor k), exact."""
        x = np.asarray(x, dtype=np.float64)
        delta = np.asarray(delta, dtype=np.float64)
        t3 = self.third_order
        if order == 1:
            grad = self.gradient + self.hessian @ x
            if t3 is not None:
                grad = grad + 0.5 * np.einsum("ijk,j,k->i", t3, x, x)
            return float(grad @ delta)
        if order == 2:
            hess = self.hessian if t3 is None else self.hessian + np.einsum("ijk,k->ij", t3, x)
            return float(delta @ hess @ delta)
        if order == 3:
            if t3 is None:
                return 0.0
            return float(np.einsum("ijk,i,j,k->", t3, delta, delta, delta))
        return 0.0  # degree <= 3: all higher derivatives vanish


def taylor_oracle(model: PolynomialModel, x, delta, lam: float, order: int) -> tuple[float, float]:
    """Exact two-sided check of the interpolation-consistency expansion.

    Left side: the squared gap between the model at the interpolated input
    and the interpolation of the endpoint values, at endpoints x and
    x + delta. Right side: the truncated series
    (sum_{k=2}^K ((1-lam) - (1-lam)^k)/k! * vec[d^k f]' delta^(k))^2,
    with exact coefficient tensors. For polynomials of degree <= K the two
    sides agree to float precision.
    """
    require(order >= 2, "expansion order must be >= 2", ConfigurationError)
    x = np.asarray(x, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    lam_hat = 1.0 - lam
    x_b = x + delta
    lhs_root = model(lam * x + lam_hat * x_b) - (lam * model(x) + lam_hat * model(x_b))
    lhs = lhs_root ** 2
    series = 0.0
    for k in range(2, order + 1):
        coeff = (lam_hat - lam_hat ** k) / math.factorial(k)
        series += coeff * model.derivative_contraction(k, x, delta)
    rhs = series ** 2
    return float(lhs), float(rhs)


def _random_symmetric(rng: np.random.Generator, d: int, order: int) -> np.ndarray:
    t = rng.standard_normal((d,) * order)
    if order == 2:
        return (t + t.T) / 2.0
    sym = np.zeros_like(t)
    for axes in ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
        sym += np.transpose(t, axes)
    return sym / 6.0


def default_polynomial_suite(rng: np.random.Generator) -> list[tuple[str, PolynomialModel]]:
    """Linear, the 1-D quadratic, random d=3 quadratics, and a cubic."""
    suite: list[tuple[str, PolynomialModel]] = [
        ("linear-d3", PolynomialModel(0.5, rng.standard_normal(3), np.zeros((3, 3)))),
        ("quadratic-1d", PolynomialModel(0.0, np.zeros(1), np.array([[2.0]]))),
    ]
    for i in range(3):
        suite.append((f"quadratic-d3-{i}", PolynomialModel(
            rng.standard_normal(), rng.standard_normal(3), _random_symmetric(rng, 3, 2))))
    suite.append(("cubic-d3", PolynomialModel(
        rng.standard_normal(), rng.standard_normal(3), _random_symmetric(rng, 3, 2),
        _random_symmetric(rng, 3, 3))))
    return suite


def run_taylor_suite(trials: int = 100, order: int = 3,
                     rng: np.random.Generator | None = None) -> tuple[float, list[dict]]:
    """Evaluate the expansion check over the default suite with random
    (x, delta, lam) draws; returns the worst absolute gap and per-model rows."""
    if rng is None:
        rng = np.random.default_rng(0)
    rows = []
    worst = 0.0
    for name, model in default_polynomial_suite(rng):
        model_worst = 0.0
        for _ in range(trials):
            x = rng.uniform(-1.0, 1.0, size=model.dim)
            delta = rng.uniform(-0.9, 0.9, size=model.dim)
            lam = rng.uniform(0.0, 1.0)
            lhs, rhs = taylor_oracle(model, x, delta, lam, order)
            model_worst = max(model_worst, abs(lhs - rhs))
        rows.append({"model": name, "trials": trials, "max_abs_diff": model_worst})
        worst = max(worst, model_worst)
    return worst, rows
