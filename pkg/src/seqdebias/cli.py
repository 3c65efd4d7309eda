"""Command-line experiment runner.

Verbs: prepare, train, evaluate, sweep, report, plot. The data root comes from
$SEQDEBIAS_DATA_ROOT (default ./data). Failures exit nonzero and print a
machine-readable JSON error record to stderr.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from . import experiments
from .config import EvalProtocol, config_hash, spec_from_dict
from .data import compute_propensities, load_propensities
from .evaluation import evaluate_unbiased
from .experiments import prepare_dataset
from .training import load_checkpoint


def _load_spec(path):
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return spec_from_dict(data)


def _report_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as exc:
            record = {"error": type(exc).__name__, "message": str(exc)}
            print(json.dumps(record), file=sys.stderr)
            raise SystemExit(1)

    return wrapper


@click.group()
def main():
    """Popularity-debiased sequential recommendation experiments."""


@main.command()
@click.argument("dataset")
@_report_errors
def prepare(dataset):
    """Preprocess a raw dataset and cache it under the data root."""
    ds = prepare_dataset(dataset)
    click.echo(
        f"{dataset}: {ds.num_users} users, {ds.num_items} items, "
        f"{ds.num_interactions} interactions"
    )


@main.command()
@click.argument("spec_path", type=click.Path(exists=True))
@_report_errors
def train(spec_path):
    """Run a single training spec (no sweep axes, repeats as configured)."""
    spec = _load_spec(spec_path)
    spec.sweep = {}
    rows = experiments.run_experiment(spec)
    click.echo(json.dumps(experiments.summarize(rows), indent=2))


@main.command()
@click.argument("checkpoint", type=click.Path(exists=True))
@click.option("--dataset", required=True)
@click.option("--k", default=10)
@click.option("--num-negatives", default=100)
@click.option("--seed", default=0)
@click.option("--c", default=None, type=float)
@_report_errors
def evaluate(checkpoint, dataset, k, num_negatives, seed, c):
    """Evaluate a saved checkpoint on a dataset's test split."""
    model = load_checkpoint(checkpoint)
    ds = prepare_dataset(dataset)
    prop_path = experiments.data_root() / "processed" / dataset / "propensities.npz"
    if prop_path.exists():
        table = load_propensities(prop_path)
    else:
        table = compute_propensities(ds.train_counts())
    protocol = EvalProtocol(k=k, num_negatives=num_negatives, seed=seed)
    report = evaluate_unbiased(model, ds, protocol, table, c=c)
    click.echo(json.dumps(report.to_dict(), indent=2))


@main.command()
@click.argument("spec_path", type=click.Path(exists=True))
@_report_errors
def sweep(spec_path):
    """Run the grid sweep declared in the spec."""
    spec = _load_spec(spec_path)
    rows = experiments.run_experiment(spec)
    click.echo(json.dumps(experiments.summarize(rows), indent=2))


@main.command()
@click.argument("run_dir", type=click.Path(exists=True))
@_report_errors
def report(run_dir):
    """Summarize a finished run directory."""
    rows = experiments.read_table(Path(run_dir) / "results.csv")
    click.echo(json.dumps(experiments.summarize(rows), indent=2))


@main.command()
@click.argument("run_dir", type=click.Path(exists=True))
@click.option("--kind", type=click.Choice(["sweep_curve", "exposure_bars"]), default="sweep_curve")
@click.option("--param", default="model.inference_c")
@click.option("--boundaries", default="100,1000")
@click.option("--out", default=None)
@_report_errors
def plot(run_dir, kind, param, boundaries, out):
    """Render a static plot from a finished run directory."""
    run_dir = Path(run_dir)
    out = Path(out) if out else run_dir / f"{kind}.png"
    if kind == "sweep_curve":
        rows = experiments.read_table(run_dir / "results.csv")
        experiments.plot_sweep_curve(rows, param, out)
    else:
        spec = spec_from_dict(json.loads((run_dir / "spec.json").read_text()))
        ckpts = sorted(run_dir.glob("ckpt_*.pt"))
        if not ckpts:
            raise FileNotFoundError("no checkpoint in run directory")
        model = load_checkpoint(ckpts[0])
        ds = prepare_dataset(spec.dataset)
        bounds = np.array([int(b) for b in boundaries.split(",") if b])
        experiments.plot_exposure_bars(
            model, ds, bounds, out, k=spec.eval.k, c=spec.model.inference_c
        )
    click.echo(str(out))


if __name__ == "__main__":
    main()
