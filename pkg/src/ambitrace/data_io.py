"""Dataset ingestion, splits, experiment manifests and synthetic data.

All numeric files are plain columnar text with decimal floats (17
significant digits) so they stay diffable and language-neutral; writes
go through a temp file and an atomic rename.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

from .traces import AnnotationTrace, TraceSet, align, shift_delay, window_aggregate

FORMAT_VERSION = 1
TIME_TOLERANCE = 1e-9  # relative tolerance for uniform time steps

FAMILIES = ("gaussian", "beta_mapped")
SCENARIOS = ("consistent_trend", "inconsistent_trend")


class DataError(ValueError):
    """A data file or configuration failed validation."""


def _fmt(value) -> str:
    return format(float(value), ".17g")


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- trace tables -----------------------------------------------------------


def write_trace_table(path, traces):
    """Columnar text: time_s plus one column per annotator."""
    period = traces[0].sample_period
    n = len(traces[0])
    for tr in traces:
        if len(tr) != n or tr.sample_period != period:
            raise DataError("traces must share length and sample period")
    lines = [f"# format_version: {FORMAT_VERSION}"]
    lines.append(",".join(["time_s"] + [tr.annotator_id for tr in traces]))
    for i in range(n):
        row = [_fmt(i * period)] + [_fmt(tr.values[i]) for tr in traces]
        lines.append(",".join(row))
    _atomic_write(path, "\n".join(lines) + "\n")


def load_trace_table(path):
    """Read a trace table; infers and validates a uniform sample period."""
    header = None
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cells = line.split(",")
            if header is None:
                header = cells
                if header[0] != "time_s" or len(header) < 2:
                    raise DataError(f"{path}: header must be time_s,<annotator>...")
                continue
            if len(cells) != len(header):
                raise DataError(f"{path}: ragged row at line {lineno}")
            try:
                rows.append(([float(c) for c in cells], lineno))
            except ValueError as exc:
                raise DataError(f"{path}: bad value at line {lineno}: {exc}") from exc
    if header is None or not rows:
        raise DataError(f"{path}: no data rows")
    times = np.array([r[0][0] for r in rows])
    if len(times) < 2:
        raise DataError(f"{path}: need at least two rows to infer the period")
    period = times[1] - times[0]
    if period <= 0:
        raise DataError(f"{path}: non-increasing time at line {rows[1][1]}")
    for k in range(1, len(times)):
        if abs((times[k] - times[k - 1]) - period) > TIME_TOLERANCE * abs(period):
            raise DataError(f"{path}: non-uniform time step at line {rows[k][1]}")
    values = np.array([r[0][1:] for r in rows])
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: non-finite values")
    return [
        AnnotationTrace(annotator_id=name, values=values[:, j], sample_period=float(period))
        for j, name in enumerate(header[1:])
    ]


# --- feature tables ---------------------------------------------------------


@dataclass
class FeatureTable:
    item_id: str
    matrix: np.ndarray
    feature_name: str = "features"

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.ndim != 2:
            raise DataError("feature matrix must be 2-D (windows x dims)")
        if not np.all(np.isfinite(self.matrix)):
            raise DataError("feature matrix contains non-finite values")


def write_feature_table(path, table: FeatureTable):
    n, d = table.matrix.shape
    lines = [
        f"# format_version: {FORMAT_VERSION}",
        f"# item_id: {table.item_id}",
        f"# feature_name: {table.feature_name}",
        ",".join(["window_index"] + [f"f{j:03d}" for j in range(d)]),
    ]
    for i in range(n):
        lines.append(",".join([str(i)] + [_fmt(v) for v in table.matrix[i]]))
    _atomic_write(path, "\n".join(lines) + "\n")


def load_feature_table(path) -> FeatureTable:
    meta = {}
    header = None
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
            elif header is None:
                header = line.split(",")
            else:
                rows.append([float(v) for v in line.split(",")])
    if header is None or not rows:
        raise DataError(f"{path}: no feature rows")
    matrix = np.array(rows)[:, 1:]
    return FeatureTable(
        item_id=meta.get("item_id", os.path.basename(path)),
        matrix=matrix,
        feature_name=meta.get("feature_name", "features"),
    )


# --- splits -----------------------------------------------------------------


@dataclass
class SplitSpec:
    mode: str = "k_fold_grouped"
    k: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("k_fold_grouped", "fixed_train_dev"):
            raise DataError(f"unknown split mode {self.mode!r}")
        if self.mode == "k_fold_grouped" and self.k < 2:
            raise DataError("k must be at least 2 for grouped folds")


def make_splits(items, spec: SplitSpec):
    """Build (train_ids, validation_ids) folds from (item_id, group) pairs.

    Grouped mode shuffles groups with the split seed and never places a
    group on both sides of a fold.  In fixed mode the group label itself
    selects the side ("train" vs "dev").
    """
    items = list(items)
    if spec.mode == "fixed_train_dev":
        train = [i for i, g in items if g == "train"]
        dev = [i for i, g in items if g == "dev"]
        if not train or not dev:
            raise DataError("fixed split needs items labeled 'train' and 'dev'")
        return [(train, dev)]

    groups = sorted({g for _, g in items})
    if spec.k > len(groups):
        raise DataError(f"k={spec.k} exceeds the {len(groups)} available groups")
    rng = np.random.default_rng(spec.seed)
    order = [groups[i] for i in rng.permutation(len(groups))]
    buckets = [order[i :: spec.k] for i in range(spec.k)]
    folds = []
    for held_out in buckets:
        held = set(held_out)
        train = [i for i, g in items if g not in held]
        val = [i for i, g in items if g in held]
        folds.append((train, val))
    return folds


# --- synthetic generator ----------------------------------------------------


@dataclass
class SynthConfig:
    """Seeded stand-in dataset: smooth latent trends, annotator quirks,
    and features that affinely encode the latent."""

    annotators: int = 5
    windows: int = 19
    items: int = 30
    groups: int = 10
    feature_dim: int = 8
    trend_components: int = 3
    trend_amplitude: float = 0.6
    offset_std: float = 0.1
    gain_std: float = 0.0
    noise_std: float = 0.02
    feature_noise_std: float = 0.01
    lag_windows: int = 0
    scenario: str = "consistent_trend"
    seed: int = 0

    def __post_init__(self):
        if self.annotators < 2:
            raise DataError("annotators: need at least 2")
        if self.windows < 2:
            raise DataError("windows: need at least 2")
        if self.items < 1 or self.groups < 1 or self.groups > self.items:
            raise DataError("items/groups: need 1 <= groups <= items")
        if self.feature_dim < 1 or self.trend_components < 1:
            raise DataError("feature_dim/trend_components: must be positive")
        for name in ("trend_amplitude", "offset_std", "gain_std", "noise_std",
                     "feature_noise_std"):
            if getattr(self, name) < 0:
                raise DataError(f"{name}: must be non-negative")
        if self.lag_windows < 0:
            raise DataError("lag_windows: must be non-negative")
        if self.scenario not in SCENARIOS:
            raise DataError(f"scenario: expected one of {SCENARIOS}")


@dataclass
class SynthItem:
    item_id: str
    group: str
    trace_set: TraceSet
    features: FeatureTable
    latent: np.ndarray


def _latent_trend(cfg, rng):
    t = np.arange(cfg.windows, dtype=float)
    trend = np.zeros(cfg.windows)
    for _ in range(cfg.trend_components):
        cycles = rng.uniform(0.5, 2.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.uniform(0.5, 1.0)
        trend += amp * np.sin(2.0 * np.pi * cycles * t / cfg.windows + phase)
    spread = trend.std()
    if spread > 0:
        trend *= cfg.trend_amplitude / spread
    return trend


def _lagged(values, lag):
    if lag <= 0:
        return values.copy()
    out = np.empty_like(values)
    out[:lag] = values[0]
    out[lag:] = values[:-lag]
    return out


def synth_generate(cfg: SynthConfig):
    """Deterministic synthetic items: traces, features and the latent oracle.

    consistent_trend: every annotator follows the shared latent with a
    personal constant offset (plus small noise), so absolute values
    disagree while gradients agree.  inconsistent_trend: annotators get
    independently sign-flipped latents with a shared offset, so values
    stay close while gradients disagree.
    """
    rng = np.random.default_rng(cfg.seed)
    # One feature map for the whole dataset; per-item maps would leave
    # nothing consistent for a downstream model to learn.
    projection = rng.normal(0.0, 1.0, size=cfg.feature_dim)
    bias = rng.normal(0.0, 0.1, size=cfg.feature_dim)
    items = []
    for idx in range(cfg.items):
        item_id = f"item{idx:03d}"
        group = f"g{idx % cfg.groups:02d}"
        latent = _latent_trend(cfg, rng)
        traces = []
        if cfg.scenario == "consistent_trend":
            for m in range(cfg.annotators):
                offset = rng.normal(0.0, cfg.offset_std)
                gain = 1.0 + rng.normal(0.0, cfg.gain_std) if cfg.gain_std else 1.0
                lag = int(rng.integers(0, cfg.lag_windows + 1)) if cfg.lag_windows else 0
                noise = rng.normal(0.0, cfg.noise_std, size=cfg.windows)
                values = gain * _lagged(latent, lag) + offset + noise
                traces.append(AnnotationTrace(f"ann{m}", values, 1.0))
        else:
            signs = np.where(rng.random(cfg.annotators) < 0.5, -1.0, 1.0)
            if np.all(signs == signs[0]):
                signs[0] = -signs[0]  # disagreement must actually occur
            offset = rng.normal(0.0, cfg.offset_std)
            for m in range(cfg.annotators):
                noise = rng.normal(0.0, cfg.noise_std, size=cfg.windows)
                values = signs[m] * latent + offset + noise
                traces.append(AnnotationTrace(f"ann{m}", values, 1.0))
        fnoise = rng.normal(0.0, cfg.feature_noise_std, size=(cfg.windows, cfg.feature_dim))
        matrix = latent[:, None] * projection[None, :] + bias[None, :] + fnoise
        features = FeatureTable(item_id=item_id, matrix=matrix, feature_name="synthetic")
        items.append(
            SynthItem(
                item_id=item_id,
                group=group,
                trace_set=TraceSet(traces, window_length=1.0),
                features=features,
                latent=latent,
            )
        )
    return items


# --- experiment manifest ----------------------------------------------------


@dataclass
class ItemEntry:
    item_id: str
    group: str
    trace_file: str
    feature_file: str


@dataclass
class DatasetConfig:
    native_period: float
    window_length: float
    items: list[ItemEntry]
    delay_offset: float = 0.0
    keep_first: int | None = None
    bounds: tuple[float, float] | None = None
    name: str = "dataset"

    def __post_init__(self):
        if self.native_period <= 0 or self.window_length <= 0:
            raise DataError("periods must be positive")
        if self.delay_offset < 0:
            raise DataError("delay_offset must be non-negative")
        if self.bounds is not None:
            self.bounds = (float(self.bounds[0]), float(self.bounds[1]))
            if not self.bounds[1] > self.bounds[0]:
                raise DataError("bounds must satisfy hi > lo")

    @property
    def samples_per_window(self) -> int:
        return int(round(self.window_length / self.native_period))

    @property
    def delay_samples(self) -> int:
        return int(round(self.delay_offset / self.native_period))


@dataclass
class ExperimentManifest:
    dataset: DatasetConfig
    representation: dict
    model: dict
    train: dict
    split: SplitSpec
    seed: int = 0
    base_dir: str = "."

    def __post_init__(self):
        family = self.representation.get("family")
        if family not in FAMILIES:
            raise DataError(f"unknown family tag {family!r}")
        if family == "beta_mapped" and self.dataset.bounds is None:
            raise DataError("beta_mapped requires dataset bounds")
        if self.representation.get("neighbor_radius", 1) < 0:
            raise DataError("neighbor_radius must be non-negative")

    def resolve(self, relpath) -> str:
        return os.path.join(self.base_dir, relpath)


def manifest_to_dict(manifest: ExperimentManifest) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "seed": manifest.seed,
        "dataset": {
            "name": manifest.dataset.name,
            "native_period": manifest.dataset.native_period,
            "window_length": manifest.dataset.window_length,
            "delay_offset": manifest.dataset.delay_offset,
            "keep_first": manifest.dataset.keep_first,
            "bounds": list(manifest.dataset.bounds) if manifest.dataset.bounds else None,
            "items": [asdict(it) for it in manifest.dataset.items],
        },
        "representation": manifest.representation,
        "model": manifest.model,
        "train": manifest.train,
        "split": asdict(manifest.split),
    }


def save_manifest(manifest: ExperimentManifest, path):
    _atomic_write(path, json.dumps(manifest_to_dict(manifest), indent=2, sort_keys=True) + "\n")


def load_manifest(path, check_shapes=True) -> ExperimentManifest:
    """Parse and validate a manifest; optionally verify file shapes agree."""
    with open(path) as fh:
        doc = json.load(fh)
    base_dir = os.path.dirname(os.path.abspath(path))
    ds = doc.get("dataset", {})
    try:
        dataset = DatasetConfig(
            native_period=ds["native_period"],
            window_length=ds["window_length"],
            delay_offset=ds.get("delay_offset", 0.0),
            keep_first=ds.get("keep_first"),
            bounds=tuple(ds["bounds"]) if ds.get("bounds") else None,
            name=ds.get("name", "dataset"),
            items=[ItemEntry(**it) for it in ds.get("items", [])],
        )
    except KeyError as exc:
        raise DataError(f"{path}: missing dataset field {exc}") from exc
    if not dataset.items:
        raise DataError(f"{path}: manifest lists no items")
    split_doc = doc.get("split", {})
    manifest = ExperimentManifest(
        dataset=dataset,
        representation=doc.get("representation", {"family": "gaussian"}),
        model=doc.get("model", {}),
        train=doc.get("train", {}),
        split=SplitSpec(**split_doc) if split_doc else SplitSpec(),
        seed=doc.get("seed", 0),
        base_dir=base_dir,
    )
    for item in dataset.items:
        for kind, rel in (("trace", item.trace_file), ("feature", item.feature_file)):
            if not os.path.exists(manifest.resolve(rel)):
                raise DataError(
                    f"item {item.item_id!r}: missing {kind} file {rel}"
                )
    if check_shapes:
        for item in dataset.items:
            prepare_item(manifest, item)
    return manifest


def prepare_item(manifest: ExperimentManifest, item: ItemEntry):
    """Load one item and run the label pipeline; returns (TraceSet, features).

    Labels are delay-shifted at native rate, windowed, and aligned;
    trailing feature windows beyond the aligned label length are
    dropped (they correspond to the stimulus frames consumed by the
    delay shift).
    """
    traces = load_trace_table(manifest.resolve(item.trace_file))
    ds = manifest.dataset
    windowed = []
    for tr in traces:
        shifted = shift_delay(tr.values, ds.native_period, ds.delay_offset)
        agg = window_aggregate(shifted, ds.native_period, ds.window_length)
        windowed.append(AnnotationTrace(tr.annotator_id, agg, ds.window_length))
    trace_set = align(windowed, keep_first=ds.keep_first, bounds=ds.bounds)
    table = load_feature_table(manifest.resolve(item.feature_file))
    n = trace_set.window_count
    if table.matrix.shape[0] < n:
        raise DataError(
            f"item {item.item_id!r}: features have {table.matrix.shape[0]} windows, "
            f"traces have {n} after alignment"
        )
    return trace_set, table.matrix[:n]


def dataset_hash(manifest: ExperimentManifest) -> str:
    """Digest of the dataset config and every referenced data file."""
    digest = hashlib.sha256()
    doc = manifest_to_dict(manifest)["dataset"]
    digest.update(json.dumps(doc, sort_keys=True).encode("utf-8"))
    for item in manifest.dataset.items:
        for rel in (item.trace_file, item.feature_file):
            with open(manifest.resolve(rel), "rb") as fh:
                digest.update(fh.read())
    return digest.hexdigest()
