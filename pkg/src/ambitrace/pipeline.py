"""End-to-end orchestration: synth, represent, train-eval and report merging.

The CLI is a thin wrapper over these functions; everything here is
deterministic given the manifest seed and writes only into the caller's
output directory.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import data_io, metrics, representations
from .data_io import (
    DataError,
    ExperimentManifest,
    SplitSpec,
    SynthConfig,
    dataset_hash,
    make_splits,
    prepare_item,
)
from .model import ModelConfig, TrainConfig, TrainingError, predict, save_checkpoint, train
from .representations import (
    TAG_GROUP,
    TAG_INDIVIDUAL,
    TAG_INTERVAL,
    group_ordinal,
    individual_ordinal,
    interval_representation,
    write_representation,
)

TAGS = (TAG_INTERVAL, TAG_INDIVIDUAL, TAG_GROUP)
TARGETS = ("mu", "sigma")

MANIFEST_EXTRA_KEYS = ("representation", "model", "train", "split")


def compute_representation(trace_set, tag, family, neighbor_radius):
    """The requested representation sequence for one item."""
    if tag == TAG_INTERVAL:
        return interval_representation(trace_set, family, neighbor_radius)
    if tag == TAG_INDIVIDUAL:
        return individual_ordinal(trace_set, neighbor_radius)
    if tag == TAG_GROUP:
        return group_ordinal(interval_representation(trace_set, family, neighbor_radius))
    raise ValueError(f"unknown representation tag {tag!r}")


def representation_channels(rep):
    """(mu-like, sigma-like) target sequences of a representation."""
    if isinstance(rep, representations.GroupOrdinal):
        return rep.dmu, rep.dsigma
    return rep.mu, rep.sigma


# --- synth ------------------------------------------------------------------

SYNTH_MANIFEST_DEFAULTS = {
    "representation": {"family": "gaussian", "neighbor_radius": 1},
    "model": {"hidden_dim": 32},
    "train": {
        "learning_rate": 1e-3,
        "weight_decay": 1e-4,
        "max_epochs": 300,
        "segment_length": 19,
        "batch_segments": 8,
        "target_margin": 0.9,
    },
}


def run_synth(cfg: SynthConfig, out_dir, extra=None):
    """Generate a synthetic dataset on disk plus a ready-to-run manifest.

    ``extra`` may override the manifest's representation/model/train/
    split sections.  Returns the manifest path.
    """
    extra = extra or {}
    items = data_io.synth_generate(cfg)
    os.makedirs(os.path.join(out_dir, "traces"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "features"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "latents"), exist_ok=True)
    entries = []
    for item in items:
        trace_rel = os.path.join("traces", f"{item.item_id}.csv")
        feat_rel = os.path.join("features", f"{item.item_id}.csv")
        data_io.write_trace_table(os.path.join(out_dir, trace_rel), item.trace_set.traces)
        data_io.write_feature_table(os.path.join(out_dir, feat_rel), item.features)
        latent_lines = ["# format_version: 1", "window_index,latent"] + [
            f"{i},{format(v, '.17g')}" for i, v in enumerate(item.latent)
        ]
        with open(os.path.join(out_dir, "latents", f"{item.item_id}.csv"), "w") as fh:
            fh.write("\n".join(latent_lines) + "\n")
        entries.append(
            data_io.ItemEntry(
                item_id=item.item_id,
                group=item.group,
                trace_file=trace_rel,
                feature_file=feat_rel,
            )
        )
    sections = {}
    for key in ("representation", "model", "train"):
        merged = dict(SYNTH_MANIFEST_DEFAULTS.get(key, {}))
        merged.update(extra.get(key, {}))
        sections[key] = merged
    sections["model"].setdefault("seed", cfg.seed)
    split_doc = dict(extra.get("split", {}))
    split_doc.setdefault("mode", "k_fold_grouped")
    split_doc.setdefault("k", min(10, cfg.groups))
    split_doc.setdefault("seed", cfg.seed)
    manifest = ExperimentManifest(
        dataset=data_io.DatasetConfig(
            native_period=1.0,
            window_length=1.0,
            delay_offset=0.0,
            keep_first=cfg.windows,
            bounds=None,
            name="synthetic",
            items=entries,
        ),
        representation=sections["representation"],
        model=sections["model"],
        train=sections["train"],
        split=SplitSpec(**split_doc),
        seed=cfg.seed,
        base_dir=out_dir,
    )
    path = os.path.join(out_dir, "manifest.json")
    data_io.save_manifest(manifest, path)
    return path


# --- represent --------------------------------------------------------------


def run_represent(manifest: ExperimentManifest, tag, out_dir):
    """Write one representation table per item plus a mean-spread summary."""
    if tag not in TAGS:
        raise ValueError(f"unknown representation tag {tag!r}")
    os.makedirs(out_dir, exist_ok=True)
    family = manifest.representation.get("family", "gaussian")
    radius = manifest.representation.get("neighbor_radius", 1)
    source = dataset_hash(manifest)
    summary_rows = []
    for item in manifest.dataset.items:
        trace_set, _ = prepare_item(manifest, item)
        try:
            rep = compute_representation(trace_set, tag, family, radius)
        except representations.FitError as exc:
            raise representations.FitError(f"item {item.item_id!r}: {exc}") from exc
        write_representation(
            rep, os.path.join(out_dir, f"{tag}_{item.item_id}.csv"), source_hash=source
        )
        _, sigma_like = representation_channels(rep)
        summary_rows.append((item.item_id, float(np.mean(sigma_like))))
    lines = ["# format_version: 1", f"# representation: {tag}", "item_id,mean_sigma"]
    lines += [f"{iid},{format(v, '.17g')}" for iid, v in summary_rows]
    with open(os.path.join(out_dir, f"summary_{tag}.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return summary_rows


# --- train-eval -------------------------------------------------------------


def _item_data(manifest, tag):
    family = manifest.representation.get("family", "gaussian")
    radius = manifest.representation.get("neighbor_radius", 1)
    data = {}
    for item in manifest.dataset.items:
        trace_set, features = prepare_item(manifest, item)
        rep = compute_representation(trace_set, tag, family, radius)
        mu_like, sigma_like = representation_channels(rep)
        data[item.item_id] = {
            "features": features,
            "mu": np.asarray(mu_like),
            "sigma": np.asarray(sigma_like),
        }
    return data


def _train_fold(args):
    (fold_idx, train_ids, val_ids, data, targets, model_doc, train_doc, seed) = args
    input_dim = next(iter(data.values()))["features"].shape[1]
    train_cfg = TrainConfig(**train_doc)
    fold = {"fold": fold_idx, "val_items": list(val_ids), "best_epoch": {}, "metrics": {}}
    models = {}
    for t_idx, target in enumerate(targets):
        cfg = ModelConfig(
            input_dim=input_dim,
            hidden_dim=model_doc.get("hidden_dim", 64),
            seed=seed + 97 * fold_idx + t_idx,
        )
        model = train(
            [data[i]["features"] for i in train_ids],
            [data[i][target] for i in train_ids],
            cfg,
            train_cfg,
            [data[i]["features"] for i in val_ids],
            [data[i][target] for i in val_ids],
        )
        models[target] = model
        fold["best_epoch"][target] = model.best_epoch
        ccc_vals, sda_vals = [], []
        for i in val_ids:
            pred = predict(model, data[i]["features"])
            ccc_vals.append(metrics.ccc(pred, data[i][target]))
            sda_vals.append(metrics.sda(pred, data[i][target]))
        fold["metrics"][f"ccc_{target}"] = float(np.mean(ccc_vals))
        fold["metrics"][f"sda_{target}"] = float(np.mean(sda_vals))
    return fold, models


def run_train_eval(manifest: ExperimentManifest, tag, targets, out_dir, jobs=1,
                   seed=None):
    """Per-fold training and evaluation; writes fold files and a summary.

    Evaluation is computed per validation sequence and averaged across
    sequences within a fold, then mean +/- std across folds.
    """
    if tag not in TAGS:
        raise ValueError(f"unknown representation tag {tag!r}")
    for target in targets:
        if target not in TARGETS:
            raise ValueError(f"unknown target {target!r}")
    os.makedirs(out_dir, exist_ok=True)
    base_seed = seed if seed is not None else manifest.seed
    data = _item_data(manifest, tag)
    folds = make_splits(
        [(it.item_id, it.group) for it in manifest.dataset.items], manifest.split
    )
    model_doc = dict(manifest.model)
    if seed is not None:
        model_doc["seed"] = seed
    else:
        model_doc.setdefault("seed", base_seed)
    train_doc = dict(manifest.train)
    job_args = [
        (idx, train_ids, val_ids, data, tuple(targets), model_doc, train_doc,
         model_doc["seed"])
        for idx, (train_ids, val_ids) in enumerate(folds)
    ]

    # Fold files are written as each fold completes so a failure keeps
    # the finished folds on disk.
    fold_records = []

    def _record(fold, models):
        fold_records.append(fold)
        with open(os.path.join(out_dir, f"fold_{fold['fold']:02d}.json"), "w") as fh:
            json.dump(fold, fh, indent=2, sort_keys=True)
            fh.write("\n")
        for target, model in models.items():
            save_checkpoint(
                model, os.path.join(out_dir, f"fold_{fold['fold']:02d}_{target}.ckpt")
            )

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for fold, models in pool.map(_train_fold, job_args):
                _record(fold, models)
    else:
        for args in job_args:
            _record(*_train_fold(args))

    keys = [f"{metric}_{t}" for t in targets for metric in ("ccc", "sda")]
    mean = {k: float(np.mean([f["metrics"][k] for f in fold_records])) for k in keys}
    std = {k: float(np.std([f["metrics"][k] for f in fold_records])) for k in keys}
    summary = {
        "format_version": 1,
        "tag": tag,
        "targets": list(targets),
        "dataset_hash": dataset_hash(manifest),
        "dataset_name": manifest.dataset.name,
        "representation": manifest.representation,
        "model": model_doc,
        "train": train_doc,
        "split": {"mode": manifest.split.mode, "k": manifest.split.k,
                  "seed": manifest.split.seed},
        "evaluation": "per-sequence metrics averaged within folds",
        "folds": fold_records,
        "mean": mean,
        "std": std,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(render_summary_table([summary]) + "\n")
    return summary


# --- report -----------------------------------------------------------------

REPORT_COLUMNS = ("ccc_mu", "ccc_sigma", "sda_mu", "sda_sigma")
COLUMN_TITLES = {
    "ccc_mu": "CCC mu",
    "ccc_sigma": "CCC sigma",
    "sda_mu": "SDA mu",
    "sda_sigma": "SDA sigma",
}


def _cell(summary, key):
    if key not in summary["mean"]:
        return None
    if summary["split"]["mode"] == "k_fold_grouped" and len(summary["folds"]) > 1:
        return summary["mean"][key], summary["std"][key]
    return summary["mean"][key], None


def render_summary_table(summaries):
    """Rows I / O_I / O_G by metric columns; per-column maxima marked with *."""
    order = {tag: i for i, tag in enumerate(TAGS)}
    summaries = sorted(summaries, key=lambda s: order.get(s["tag"], 99))
    cells = {}
    for s in summaries:
        for key in REPORT_COLUMNS:
            cells[(s["tag"], key)] = _cell(s, key)
    maxima = {}
    for key in REPORT_COLUMNS:
        values = [cells[(s["tag"], key)][0] for s in summaries
                  if cells.get((s["tag"], key)) is not None]
        if values:
            maxima[key] = max(values)
    rows = [["Representation"] + [COLUMN_TITLES[k] for k in REPORT_COLUMNS]]
    for s in summaries:
        row = [s["tag"]]
        for key in REPORT_COLUMNS:
            cell = cells.get((s["tag"], key))
            if cell is None:
                row.append("-")
                continue
            mean, std = cell
            text = f"{mean:.3f}" if std is None else f"{mean:.3f}+/-{std:.3f}"
            if len(summaries) > 1 and mean == maxima[key]:
                text = f"*{text}*"
            row.append(text)
        rows.append(row)
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)).rstrip()
             for row in rows]
    return "\n".join(lines)


def merge_reports(result_dirs):
    """Load train-eval summaries and check they describe the same dataset."""
    summaries = []
    for d in result_dirs:
        path = os.path.join(d, "summary.json")
        if not os.path.exists(path):
            raise DataError(f"{d}: no summary.json (not a train-eval output?)")
        with open(path) as fh:
            summaries.append(json.load(fh))
    hashes = {s["dataset_hash"] for s in summaries}
    if len(hashes) > 1:
        raise DataError("result directories come from different datasets")
    tags = [s["tag"] for s in summaries]
    if len(set(tags)) != len(tags):
        raise DataError(f"duplicate representation tags in inputs: {tags}")
    order = {tag: i for i, tag in enumerate(TAGS)}
    return sorted(summaries, key=lambda s: order.get(s["tag"], 99))
