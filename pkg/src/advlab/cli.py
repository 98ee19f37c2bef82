"""Experiment runner.

Subcommands: ``train`` (fit a model per config and write logs, checkpoints,
and an evaluation report), ``eval`` (evaluate a checkpoint), ``ablate``
(named study grids emitting one CSV each), ``theory`` (dimension sweep and
expansion oracle), and ``report`` (trade-off metrics from supplied or
stored numbers). Exit codes: 0 success, 2 configuration or input error,
3 numeric failure.
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import click

from .config import ExperimentConfig
from .evaluation import (FIG2_STRATEGIES, attack_suite, alignment_profile,
                         evaluate, figure2_protocol, mean_score, nrr)
from .losses import ObjectiveConfig
from .models import load_checkpoint
from .theory import (DEFAULT_SWEEP_EPS, SIGMA_SCALE_DEFAULT, complexity_sweep,
                     run_taylor_suite)
from .training import fit
from .validation import ConfigurationError, NumericError, ValidationError

EXIT_CONFIG_ERROR = 2
EXIT_NUMERIC_ERROR = 3


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    """Map the package's exception hierarchy onto the stable exit codes."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigurationError, ValidationError, FileNotFoundError) as exc:
            _fail(EXIT_CONFIG_ERROR, str(exc))
        except NumericError as exc:
            _fail(EXIT_NUMERIC_ERROR, str(exc))

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _load(config_path: str) -> ExperimentConfig:
    if not Path(config_path).exists():
        raise ConfigurationError(f"config file not found: {config_path}")
    return ExperimentConfig.load(config_path)


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: list[str], rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=header)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in header})


def _eval_attacks(cfg: ExperimentConfig) -> dict:
    attack = cfg.attack_config()
    suite = attack_suite(attack.norm, attack.eps, attack.alpha)
    names = cfg.mapping["eval"]["attacks"]
    unknown = [n for n in names if n not in suite]
    if unknown:
        raise ConfigurationError(f"unknown eval attacks {unknown}; available: {sorted(suite)}")
    return {name: suite[name] for name in names}


@click.group()
def main():
    """Adversarial-training laboratory."""


@main.command()
@click.option("--config", "config_path", required=True, type=str, help="Experiment config file.")
@click.option("--out", "out_dir", default=None, type=str, help="Override the output directory.")
@click.option("--seed", default=None, type=int, help="Override the config seed.")
@_guarded
def train(config_path, out_dir, seed):
    """Train per the config; write the training log, checkpoints, and report."""
    cfg = _load(config_path)
    if out_dir is not None:
        cfg.mapping["out_dir"] = out_dir
    if seed is not None:
        cfg.mapping["seed"] = int(seed)
    out = cfg.out_dir
    train_ds, eval_ds = cfg.build_datasets()
    classifier = cfg.build_classifier()
    train_cfg = cfg.train_config(out_dir=str(out))
    best, log = fit(train_cfg, classifier, train_ds, eval_ds)

    classifier.set_parameters(best.parameters)
    report = evaluate(classifier, eval_ds, _eval_attacks(cfg), seed=cfg.seed)
    probes = int(cfg.mapping["eval"]["alignment_probes"])
    if probes > 0:
        from .data import ArrayDataset
        probe_set = ArrayDataset(eval_ds.inputs[:probes], eval_ds.labels[:probes], eval_ds.n_classes)
        from ._rng import named_rng
        report.alignment = alignment_profile(classifier, probe_set, train_cfg.resolved_eval_attack(),
                                             cfg.mapping["eval"]["mu_grid"],
                                             rng=named_rng(cfg.seed, "alignment"))
    payload = report.to_dict()
    payload["best_epoch"] = best.epoch
    _write_json(out / "eval_report.json", payload)
    click.echo(f"best epoch {best.epoch}: clean {best.clean_acc:.2f}%, "
               f"10-step robust {best.pgd10_acc:.2f}% -> {out}")


@main.command("eval")
@click.option("--checkpoint", "checkpoint_path", required=True, type=str)
@click.option("--config", "config_path", required=True, type=str)
@click.option("--out", "out_dir", default=None, type=str)
@click.option("--aa-accuracy", default=None, type=float,
              help="Externally measured ensemble robust accuracy for the trade-off metrics.")
@click.option("--clean-accuracy", default=None, type=float,
              help="Externally measured clean accuracy override for the trade-off metrics.")
@_guarded
def eval_cmd(checkpoint_path, config_path, out_dir, aa_accuracy, clean_accuracy):
    """Evaluate a checkpoint: clean and per-attack robust accuracy plus metrics."""
    cfg = _load(config_path)
    if not Path(checkpoint_path).exists():
        raise ConfigurationError(f"checkpoint not found: {checkpoint_path}")
    classifier, _meta = load_checkpoint(checkpoint_path)
    expected = cfg.build_classifier().spec
    if classifier.spec != expected:
        raise ConfigurationError(
            f"checkpoint architecture {classifier.spec} does not match config {expected}")
    _, eval_ds = cfg.build_datasets()
    report = evaluate(classifier, eval_ds, _eval_attacks(cfg), seed=cfg.seed,
                      external_aa=aa_accuracy, clean_override=clean_accuracy)
    payload = report.to_dict()
    out = Path(out_dir) if out_dir else cfg.out_dir
    _write_json(out / "eval_report.json", payload)
    click.echo(json.dumps(payload, sort_keys=True))


def _study_fit(cfg: ExperimentConfig, objective: ObjectiveConfig, seed: int):
    train_ds, eval_ds = cfg.build_datasets()
    classifier = cfg.build_classifier()
    train_cfg = cfg.train_config(objective=objective, seed=seed)
    best, _log = fit(train_cfg, classifier, train_ds, eval_ds)
    return best


@main.command()
@click.option("--config", "config_path", required=True, type=str)
@click.option("--study", required=True,
              type=click.Choice(["fig2", "eta-sweep", "lambda-sweep", "two-ideas"]))
@click.option("--out", "out_dir", default=None, type=str)
@_guarded
def ablate(config_path, study, out_dir):
    """Run a named study grid and emit its CSV."""
    cfg = _load(config_path)
    out = Path(out_dir) if out_dir else cfg.out_dir
    objective = cfg.objective_config()

    if study == "fig2":
        rows = []
        for strategy in FIG2_STRATEGIES:
            train_ds, eval_ds = cfg.build_datasets()
            curve = figure2_protocol(cfg.train_config(), cfg.build_classifier,
                                     train_ds, eval_ds, objective.eta, strategy)
            rows.extend(curve)
        _write_csv(out / "fig2.csv", ["epoch", "clean_acc", "robust_acc", "strategy"], rows)
    elif study == "eta-sweep":
        rows = []
        for eta in cfg.mapping["ablate"]["eta_values"]:
            best = _study_fit(cfg, replace(objective, eta=float(eta)), cfg.seed)
            rows.append({"eta": eta, "clean_acc": best.clean_acc, "pgd10_acc": best.pgd10_acc})
        _write_csv(out / "eta_sweep.csv", ["eta", "clean_acc", "pgd10_acc"], rows)
    elif study == "lambda-sweep":
        rows = []
        for lam in cfg.mapping["ablate"]["lambda_values"]:
            best = _study_fit(cfg, replace(objective, lam=float(lam)), cfg.seed)
            rows.append({"lambda": lam, "clean_acc": best.clean_acc, "pgd10_acc": best.pgd10_acc})
        _write_csv(out / "lambda_sweep.csv", ["lambda", "clean_acc", "pgd10_acc"], rows)
    else:  # two-ideas: boundary reduction and the consistency term, individually and together
        grid = [("neither", False, 0.0), ("bound-only", True, 0.0),
                ("consistency-only", False, objective.lam or 1.0),
                ("both", True, objective.lam or 1.0)]
        rows = []
        for label, bound, lam in grid:
            obj = replace(objective, variant="raat", boundary_reduction=bound, lam=lam)
            best = _study_fit(cfg, obj, cfg.seed)
            rows.append({"setting": label, "bound": bound, "consistency_weight": lam,
                         "clean_acc": best.clean_acc, "pgd10_acc": best.pgd10_acc})
        _write_csv(out / "two_ideas.csv",
                   ["setting", "bound", "consistency_weight", "clean_acc", "pgd10_acc"], rows)
    click.echo(f"study {study} -> {out}")


@main.command()
@click.option("--study", required=True, type=click.Choice(["gaussian-sweep", "taylor"]))
@click.option("--out", "out_dir", default="runs/theory", type=str)
@click.option("--d-values", default="4,16,64,256", type=str)
@click.option("--trials", default=400, type=int)
@click.option("--eps", default=DEFAULT_SWEEP_EPS, type=float)
@click.option("--sigma-scale", default=SIGMA_SCALE_DEFAULT, type=float)
@click.option("--n", "n_labeled", default=1, type=int)
@click.option("--m", "m_unlabeled", default=None, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--tolerance", default=1e-10, type=float)
@_guarded
def theory(study, out_dir, d_values, trials, eps, sigma_scale, n_labeled, m_unlabeled, seed, tolerance):
    """Theory bench: Gaussian-model dimension sweep or the expansion oracle."""
    import numpy as np

    out = Path(out_dir)
    if study == "gaussian-sweep":
        dims = [int(v) for v in d_values.split(",") if v.strip()]
        rows = complexity_sweep(dims, n=n_labeled, m=m_unlabeled, eps=eps, trials=trials,
                                sigma_scale=sigma_scale, rng=np.random.default_rng(seed))
        _write_csv(out / "gaussian_sweep.csv", ["d", "std_err", "rob_err", "cr_rob_err", "m"], rows)
        click.echo(f"gaussian sweep over d={dims} -> {out / 'gaussian_sweep.csv'}")
    else:
        worst, rows = run_taylor_suite(trials=trials, rng=np.random.default_rng(seed))
        _write_csv(out / "taylor.csv", ["model", "trials", "max_abs_diff"], rows)
        click.echo(f"max |lhs - rhs| = {worst:.3e} over {len(rows)} models")
        if worst > tolerance:
            raise NumericError(f"expansion mismatch {worst:.3e} exceeds tolerance {tolerance:.1e}")


@main.command()
@click.option("--clean", default=None, type=float, help="Clean accuracy (%).")
@click.option("--aa-accuracy", default=None, type=float, help="Robust accuracy (%).")
@click.option("--from-eval", "eval_path", default=None, type=str,
              help="Read clean/robust numbers from an eval report JSON.")
@click.option("--out", "out_path", default=None, type=str)
@_guarded
def report(clean, aa_accuracy, eval_path, out_path):
    """Trade-off metrics (harmonic and arithmetic means) from given numbers."""
    if eval_path is not None:
        data = json.loads(Path(eval_path).read_text(encoding="utf-8"))
        clean = data["clean_acc"] if clean is None else clean
        if aa_accuracy is None:
            robust_map = data.get("robust", {})
            aa_accuracy = min(robust_map.values()) if robust_map else None
    if clean is None or aa_accuracy is None:
        raise ConfigurationError("need --clean and --aa-accuracy (or --from-eval)")
    payload = {
        "clean_acc": clean,
        "robust_acc": aa_accuracy,
        "nrr": nrr(clean, aa_accuracy),
        "mean": mean_score(clean, aa_accuracy),
    }
    if out_path:
        _write_json(Path(out_path), payload)
    click.echo(json.dumps(payload, sort_keys=True))


if __name__ == "__main__":
    main()
