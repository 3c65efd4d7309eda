"""Experiment runner: single runs, grid sweeps, multi-seed repetition,
result tables and static plots.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import itertools
import json
import os
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentSpec, config_hash, set_field, spec_to_dict
from .data import (
    InteractionDataset,
    compute_propensities,
    load_dataset,
    load_raw,
    popularity_buckets,
    preprocess,
    save_dataset,
    save_propensities,
    synthetic_dataset,
)
from .evaluation import evaluate_unbiased, exposure_analysis, significance_test
from .model import build_model
from .training import fit, save_checkpoint

DATA_ROOT_ENV = "SEQDEBIAS_DATA_ROOT"

# raw-file layout under the data root, per dataset id
RAW_SOURCES = {
    "ml-1m": ("ml-1m/ratings.dat", "movielens_dat", 200),
    "games": ("games.csv", "amazon_csv", 50),
    "steam": ("steam.json", "steam_json", 50),
}

DEFAULT_GRIDS = {
    "train.weights.alpha": [2e-4, 2e-3, 2e-2, 2e-1, 2e0],
    "train.weights.beta": [2e-4, 2e-3, 2e-2, 2e-1, 2e0],
    "train.weights.gamma": [0.0, 5e-4, 5e-3, 5e-2, 5e-1, 5e0, 5e1],
    "model.inference_c": [0, 10, 20, 30, 40, 50, 60, 70, 80],
}


def data_root() -> Path:
    return Path(os.environ.get(DATA_ROOT_ENV, "data"))


def prepare_dataset(dataset_id: str, root: Path | None = None) -> InteractionDataset:
    """Build (or load cached) processed dataset + propensity table."""
    root = root or data_root()
    processed = root / "processed" / dataset_id
    ds_path = processed / "dataset.npz"
    if ds_path.exists():
        return load_dataset(ds_path)
    processed.mkdir(parents=True, exist_ok=True)
    if dataset_id == "synthetic":
        dataset = synthetic_dataset()
    elif dataset_id in RAW_SOURCES:
        rel, fmt, max_len = RAW_SOURCES[dataset_id]
        raw_path = root / rel
        if not raw_path.exists():
            raise FileNotFoundError(
                f"raw file for {dataset_id!r} not found at {raw_path}; "
                f"set ${DATA_ROOT_ENV} or place the file there"
            )
        dataset = preprocess(load_raw(raw_path, fmt), max_len=max_len)
    else:
        raise ValueError(f"unknown dataset id {dataset_id!r}")
    save_dataset(dataset, ds_path)
    table = compute_propensities(dataset.train_counts())
    save_propensities(table, processed / "propensities.npz")
    return dataset


def _sweep_points(spec: ExperimentSpec):
    axes = {
        path: values if values else DEFAULT_GRIDS[path]
        for path, values in spec.sweep.items()
    }
    if not axes:
        yield {}
        return
    names = sorted(axes)
    for combo in itertools.product(*(axes[n] for n in names)):
        yield dict(zip(names, combo))


def run_single(spec: ExperimentSpec, dataset: InteractionDataset, seed: int):
    """Train one model and evaluate it on the test split."""
    spec = copy.deepcopy(spec)
    spec.train.seed = seed
    spec.eval.seed = seed
    torch.manual_seed(seed)
    model = build_model(spec.model, dataset.num_items, dataset.num_users)
    state = fit(model, dataset, spec.train, spec.eval)
    table = compute_propensities(
        dataset.train_counts(),
        spec.train.omega,
        spec.train.rho,
        spec.train.propensity_eps,
    )
    report = evaluate_unbiased(
        model, dataset, spec.eval, table, split="test", c=spec.model.inference_c
    )
    report.config_hash = config_hash(spec)
    return model, state, report


def run_experiment(spec: ExperimentSpec, root: Path | None = None) -> list[dict]:
    """Execute preprocess -> fit -> evaluate for every (sweep point, seed).

    Emits one results.csv row per cell (or an explicit failure marker) under
    ``<output_dir>/<config hash>/``; returns the rows.
    """
    spec.validate()
    dataset = prepare_dataset(spec.dataset, root)
    out_dir = Path(spec.output_dir) / config_hash(spec)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "spec.json").write_text(json.dumps(spec_to_dict(spec), indent=2, default=str))

    rows = []
    reference_metrics: dict[tuple, list] = {}
    for point in _sweep_points(spec):
        point_spec = copy.deepcopy(spec)
        for path, value in point.items():
            set_field(point_spec, path, value)
        point_label = json.dumps(point, sort_keys=True)
        for r in range(spec.repeats):
            seed = spec.train.seed + r
            row = {"point": point_label, "seed": seed}
            try:
                model, state, report = run_single(point_spec, dataset, seed)
                row.update(
                    ndcg=report.ndcg_at_k,
                    hit_rate=report.hit_rate_at_k,
                    best_epoch=state.best_epoch,
                    status="ok",
                )
                tag = hashlib.sha1(point_label.encode()).hexdigest()[:8]
                save_checkpoint(model, out_dir / f"ckpt_{tag}_{seed}.pt")
                report.save(out_dir / f"report_{tag}_{seed}.json")
            except Exception as exc:  # record the failure, keep sweeping
                row.update(ndcg=float("nan"), hit_rate=float("nan"), status=f"failed: {exc}")
            rows.append(row)
        reference_metrics[point_label] = [
            r["ndcg"] for r in rows if r["point"] == point_label and r["status"] == "ok"
        ]

    if spec.reference_mode and spec.repeats >= 2:
        ref_spec = copy.deepcopy(spec)
        ref_spec.model.mode = spec.reference_mode
        ref_spec.sweep = {}
        ref_rows = []
        for r in range(spec.repeats):
            seed = spec.train.seed + r
            _, _, report = run_single(ref_spec, dataset, seed)
            ref_rows.append(report.ndcg_at_k)
        for row in rows:
            metrics = reference_metrics.get(row["point"], [])
            if len(metrics) >= 2:
                row["p_vs_reference"] = significance_test(metrics, ref_rows)

    write_table(rows, out_dir / "results.csv")
    return rows


def write_table(rows: list[dict], path) -> None:
    if not rows:
        raise ValueError("empty result table")
    fields = sorted({k for row in rows for k in row})
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summarize(rows: list[dict]) -> list[dict]:
    """Mean metrics per sweep point over seeds."""
    by_point: dict[str, list[dict]] = {}
    for row in rows:
        by_point.setdefault(row["point"], []).append(row)
    summary = []
    for point, group in sorted(by_point.items()):
        ndcgs = [float(r["ndcg"]) for r in group if r.get("status") == "ok"]
        hits = [float(r["hit_rate"]) for r in group if r.get("status") == "ok"]
        summary.append(
            {
                "point": point,
                "runs": len(group),
                "ok": len(ndcgs),
                "ndcg_mean": float(np.mean(ndcgs)) if ndcgs else float("nan"),
                "hit_rate_mean": float(np.mean(hits)) if hits else float("nan"),
            }
        )
    return summary


def plot_sweep_curve(rows: list[dict], param: str, out_path) -> None:
    """Metric-vs-parameter curve for a single-axis sweep."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    summary = summarize(rows)
    if not summary:
        raise ValueError("empty result table")
    xs, ys = [], []
    for entry in summary:
        point = json.loads(entry["point"])
        xs.append(point.get(param, 0))
        ys.append(entry["ndcg_mean"])
    order = np.argsort(xs)
    xs = np.asarray(xs)[order]
    ys = np.asarray(ys)[order]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(xs, ys, marker="o")
    ax.set_xlabel(param)
    ax.set_ylabel("unbiased NDCG@10")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_exposure_bars(
    model,
    dataset: InteractionDataset,
    boundaries,
    out_path,
    k: int = 10,
    c: float | None = None,
) -> None:
    """Bucket item-count ratio vs top-k exposure share, side by side."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    counts = dataset.train_counts()
    assignment, ratios = popularity_buckets(counts, boundaries)
    shares = exposure_analysis(model, dataset, k, assignment, c=c)
    n = len(ratios)
    x = np.arange(n)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(x - 0.2, ratios, width=0.4, label="item ratio")
    ax.bar(x + 0.2, shares, width=0.4, label=f"exposure share (sum={shares.sum():.1f})")
    labels = [f"<{b}" for b in boundaries] + [f">={boundaries[-1]}" if len(boundaries) else "all"]
    ax.set_xticks(x, labels)
    ax.set_ylabel("fraction")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
