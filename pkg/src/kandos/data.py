"""Flow-record ingestion, cleaning and a synthetic stand-in dataset.

Pipeline order used throughout: load -> map labels -> balance -> split ->
fit cleaning stats on the train split -> apply them to both splits.
Cleaning is impute (median) -> clip (mean +/- 3 std) -> standardize.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from kandos.errors import ConfigError, DataError, SchemaError, UnmappedLabelError, UnparseableCellError

MISSING_TOKENS = ("", "NaN", "Infinity", "-Infinity")

DEFAULT_LABEL_MAPPING = {
    "BENIGN": 0,
    "DoS Hulk": 1,
    "DoS GoldenEye": 1,
    "DoS slowloris": 1,
    "DoS Slowhttptest": 1,
    "Heartbleed": 1,
}

# Wednesday attack inventory and balanced size of the reference experiment
REFERENCE_ATTACK_COUNTS = {
    "DoS Hulk": 231_073,
    "DoS GoldenEye": 10_293,
    "DoS slowloris": 5_796,
    "DoS Slowhttptest": 5_499,
    "Heartbleed": 11,
}
REFERENCE_PER_CLASS_CAP = 231_073

STD_FLOOR = 1.0
CLIP_SIGMAS = 3.0


@dataclass(eq=False)
class FlowDataset:
    """Feature matrix with labels.

    ``labels`` holds 0/1 ints once mapped; straight out of ``load_csv`` it
    is ``None`` and the label strings live in ``label_names``. The strings
    are carried through subsetting so splits can be written back to CSV.
    """

    features: np.ndarray
    labels: Optional[np.ndarray]
    feature_names: list
    provenance: str = "csv"
    label_names: Optional[np.ndarray] = None

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take(self, idx) -> "FlowDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return FlowDataset(
            self.features[idx],
            None if self.labels is None else self.labels[idx],
            list(self.feature_names),
            self.provenance,
            None if self.label_names is None else self.label_names[idx],
        )

    def class_counts(self) -> dict:
        if self.labels is None:
            raise DataError("dataset labels are not mapped yet")
        return {int(c): int(np.sum(self.labels == c)) for c in (0, 1)}


@dataclass(eq=False)
class CleanStats:
    feature_names: list
    median: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    clip_low: np.ndarray
    clip_high: np.ndarray

    def to_dict(self) -> dict:
        from kandos.model import encode_array

        return {
            "feature_names": list(self.feature_names),
            **{k: encode_array(np.asarray(getattr(self, k), dtype=np.float64)) for k in self._ARRAYS},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CleanStats":
        from kandos.model import decode_array

        return cls(list(d["feature_names"]), *(decode_array(d[k]) for k in cls._ARRAYS))

    _ARRAYS = ("median", "mean", "std", "clip_low", "clip_high")


@dataclass(frozen=True)
class SynthConfig:
    samples_per_class: int = 1000
    feature_count: int = 78
    class_separation: float = 6.0
    noise_feature_fraction: float = 0.2
    seed: int = 0

    def validate(self):
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class must be >= 1")
        if self.feature_count < 1:
            raise ConfigError("feature_count must be >= 1")
        if not self.class_separation >= 0:
            raise ConfigError("class_separation must be >= 0")
        if not 0.0 <= self.noise_feature_fraction <= 1.0:
            raise ConfigError("noise_feature_fraction must lie in [0, 1]")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @property
    def n_informative(self) -> int:
        n_noise = int(round(self.noise_feature_fraction * self.feature_count))
        return self.feature_count - n_noise


# --- loading ---------------------------------------------------------------


def _unique_names(names) -> list:
    seen: dict = {}
    out = []
    for n in names:
        base = str(n).strip()
        name = base
        while name in seen:
            seen[base] += 1
            name = f"{base}.{seen[base]}"
        seen.setdefault(name, 0)
        out.append(name)
    return out


def _parse_or_nan(cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        return math.nan


def load_csv(path, label_column: Optional[str] = "Label", require_label: bool = True) -> FlowDataset:
    """Read a flow CSV. Missing/infinite cells become NaN; labels stay as strings."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8", errors="replace") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise DataError(f"{path}: empty file, expected a header row")
    names = _unique_names(header)

    label_idx = names.index(label_column) if label_column in names else None
    if label_idx is None and require_label:
        raise DataError(f"{path}: label column {label_column!r} not found in header")

    df = pd.read_csv(
        path,
        header=0,
        names=names,
        dtype=str,
        keep_default_na=False,
        na_filter=False,
        encoding_errors="replace",
    )
    label_names = None
    if label_idx is not None:
        label_names = df.pop(names[label_idx]).str.strip().to_numpy(dtype=object)

    feature_names = list(df.columns)
    features = np.empty((len(df), len(feature_names)), dtype=np.float64)
    for j, col in enumerate(feature_names):
        raw = df[col]
        stripped = raw.str.strip()
        missing = stripped.isin(MISSING_TOKENS).to_numpy()
        # pd.to_numeric's fast parser is off by an ulp on some inputs; float() rounds correctly
        cells = stripped.where(~missing, "nan").to_numpy(dtype=object)
        try:
            values = cells.astype(np.float64)
        except ValueError:
            values = np.array([_parse_or_nan(c) for c in cells], dtype=np.float64)
        # "nan"/"inf" spellings other than the documented tokens count as unparseable
        bad = ~np.isfinite(values) & ~missing
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise UnparseableCellError(row + 1, col, raw.iloc[row])
        values[~np.isfinite(values)] = np.nan
        features[:, j] = values
    return FlowDataset(features, None, feature_names, "csv", label_names)


def write_csv(ds: FlowDataset, path, label_column: str = "Label", label_strings: Sequence = ("BENIGN", "DoS Hulk")):
    """Write in the loader's layout; floats use round-trip repr, NaN as ``NaN``."""
    if ds.label_names is not None:
        labels = [str(s) for s in ds.label_names]
    elif ds.labels is not None:
        labels = [label_strings[int(y)] for y in ds.labels]
    else:
        labels = None
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(ds.feature_names) + ([label_column] if labels is not None else []))
        for i, row in enumerate(ds.features):
            cells = ["NaN" if math.isnan(v) else repr(float(v)) for v in row]
            if labels is not None:
                cells.append(labels[i])
            w.writerow(cells)


# --- labels, balancing, splitting ------------------------------------------


def map_labels(ds: FlowDataset, mapping: Optional[Mapping[str, int]] = None) -> FlowDataset:
    mapping = DEFAULT_LABEL_MAPPING if mapping is None else mapping
    if ds.label_names is None:
        raise DataError("dataset has no label strings to map")
    labels = np.empty(len(ds), dtype=np.int8)
    uniques, inverse = np.unique(ds.label_names.astype(str), return_inverse=True)
    for u_idx, name in enumerate(uniques):
        if name not in mapping:
            raise UnmappedLabelError(name)
        value = int(mapping[name])
        if value not in (0, 1):
            raise DataError(f"label mapping sends {name!r} to {value}; only 0/1 allowed")
        labels[inverse == u_idx] = value
    return FlowDataset(ds.features, labels, list(ds.feature_names), ds.provenance, ds.label_names)


def _need_both_classes(ds: FlowDataset):
    counts = ds.class_counts()
    if counts[0] == 0 or counts[1] == 0:
        raise DataError(f"need both classes present, got counts {counts}")
    return counts


def balance(ds: FlowDataset, per_class_cap: Optional[int] = REFERENCE_PER_CLASS_CAP, seed: int = 0) -> FlowDataset:
    """Subsample each class to ``min(count0, count1, cap)`` rows; original row order kept."""
    counts = _need_both_classes(ds)
    n = min(counts[0], counts[1])
    if per_class_cap is not None:
        n = min(n, int(per_class_cap))
    rng = np.random.default_rng(seed)
    keep = []
    for c in (0, 1):
        idx = np.flatnonzero(ds.labels == c)
        if len(idx) > n:
            idx = np.sort(rng.choice(idx, size=n, replace=False))
        keep.append(idx)
    return ds.take(np.sort(np.concatenate(keep)))


def split(ds: FlowDataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[FlowDataset, FlowDataset]:
    """Stratified train/test partition; each class contributes round(frac * n_c) test rows."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    if ds.labels is None:
        raise DataError("dataset labels are not mapped yet")
    rng = np.random.default_rng(seed)
    test_idx = []
    for c in (0, 1):
        idx = np.flatnonzero(ds.labels == c)
        n_test = int(math.floor(test_fraction * len(idx) + 0.5))
        test_idx.append(rng.permutation(idx)[:n_test])
    test_idx = np.sort(np.concatenate(test_idx))
    train_mask = np.ones(len(ds), dtype=bool)
    train_mask[test_idx] = False
    return ds.take(np.flatnonzero(train_mask)), ds.take(test_idx)


# --- cleaning --------------------------------------------------------------


def clean_fit(train: FlowDataset) -> CleanStats:
    X = train.features
    if X.shape[0] == 0:
        raise DataError("cannot fit cleaning statistics on an empty dataset")
    all_missing = np.all(np.isnan(X), axis=0)
    if all_missing.any():
        name = train.feature_names[int(np.flatnonzero(all_missing)[0])]
        raise DataError(f"feature {name!r} has no non-missing values")
    median = np.nanmedian(X, axis=0)
    filled = np.where(np.isnan(X), median, X)
    mean = filled.mean(axis=0)
    std = filled.std(axis=0)
    std = np.where(std > 0.0, std, STD_FLOOR)
    return CleanStats(
        list(train.feature_names), median, mean, std, mean - CLIP_SIGMAS * std, mean + CLIP_SIGMAS * std
    )


def check_schema(ds: FlowDataset, stats: CleanStats):
    if list(ds.feature_names) != list(stats.feature_names):
        missing = [n for n in stats.feature_names if n not in ds.feature_names]
        extra = [n for n in ds.feature_names if n not in stats.feature_names]
        detail = f"missing {missing[:3]}, unexpected {extra[:3]}" if (missing or extra) else "column order differs"
        raise SchemaError(f"dataset columns do not match the fitted statistics: {detail}")


def impute(ds: FlowDataset, stats: CleanStats) -> np.ndarray:
    check_schema(ds, stats)
    return np.where(np.isnan(ds.features), stats.median, ds.features)


def clean_apply(ds: FlowDataset, stats: CleanStats) -> FlowDataset:
    X = impute(ds, stats)
    X = np.clip(X, stats.clip_low, stats.clip_high)
    X = (X - stats.mean) / stats.std
    return FlowDataset(X, ds.labels, list(ds.feature_names), ds.provenance, ds.label_names)


# --- synthetic data --------------------------------------------------------


def synth_class_means(config: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Class means in within-class-std units, before the per-feature affine map.

    The informative features carry the whole separation: the two mean
    vectors sit ``class_separation`` apart (Euclidean, unit-variance
    coordinates), split evenly over informative features with random signs.
    """
    rng = np.random.default_rng([config.seed, 1])
    n_inf = config.n_informative
    mu = np.zeros(config.feature_count)
    if n_inf > 0:
        signs = rng.choice([-1.0, 1.0], size=n_inf)
        mu[:n_inf] = signs * (0.5 * config.class_separation / math.sqrt(n_inf))
    return -mu, mu


def synth_bayes_accuracy(config: SynthConfig) -> float:
    """Accuracy of the optimal classifier for two equal-prior isotropic Gaussians."""
    return 0.5 * (1.0 + math.erf(config.class_separation / 2.0 / math.sqrt(2.0)))


def synth_feature_names(config: SynthConfig) -> list:
    n_inf = config.n_informative
    width = len(str(config.feature_count))
    return [f"signal_{i:0{width}d}" for i in range(n_inf)] + [
        f"noise_{i:0{width}d}" for i in range(config.feature_count - n_inf)
    ]


def synth_generate(config: SynthConfig) -> FlowDataset:
    """Two isotropic Gaussian classes pushed through a per-feature affine map.

    The affine map (random offsets and log-uniform scales) mimics the very
    different units of flow features; it leaves the Bayes accuracy intact.
    """
    config.validate()
    rng = np.random.default_rng([config.seed, 0])
    mu0, mu1 = synth_class_means(config)
    n = config.samples_per_class
    z = rng.standard_normal((2 * n, config.feature_count))
    labels = np.repeat(np.array([0, 1], dtype=np.int8), n)
    z[:n] += mu0
    z[n:] += mu1
    order = rng.permutation(2 * n)
    z, labels = z[order], labels[order]
    scales = 10.0 ** rng.uniform(-1.0, 3.0, size=config.feature_count)
    offsets = rng.uniform(-100.0, 100.0, size=config.feature_count)
    X = z * scales + offsets
    names = np.array(["BENIGN", "DoS Hulk"], dtype=object)[labels]
    return FlowDataset(X, labels, synth_feature_names(config), "synthetic", names)
