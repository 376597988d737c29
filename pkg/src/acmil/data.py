"""Synthetic multi-pattern bag generation, dataset files and splits.

The generator encodes the two phenomena the model is built around: every
positive class owns several well-separated discriminative Gaussian patterns
(so that a single attention branch cannot cover them all), and positive
bags carry many discriminative instances (so that concentrating attention
on a handful is a real failure mode).  Negative (class 0) bags draw only
from shared background patterns.

Two file formats: a canonical JSON text format whose floats round-trip
bit-exactly, and a compact binary container ("ACMB") that stores features
as 32-bit floats and is lossy by design.  Acceptance-grade work uses the
text format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import jsonio
from .bags import Bag
from .errors import ConfigError, DataFormatError, GenerationError
from .rng import Rng

DATASET_FORMAT = "acmil-dataset"
DATASET_VERSION = 1
BINARY_MAGIC = b"ACMB"
SPLIT_NAMES = ("train", "val", "test")


@dataclass
class SyntheticConfig:
    num_classes: int = 2
    feature_dim: int = 32
    patterns_per_class: int = 4
    background_patterns: int = 3
    cluster_std: float = 1.0
    cluster_separation: float = 8.0
    bags_per_class: int = 60
    instances_min: int = 100
    instances_max: int = 200
    positive_fraction_min: float = 0.1
    positive_fraction_max: float = 0.4
    patterns_per_bag_min: int = 1
    patterns_per_bag_max: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("synthetic: num_classes must be >= 2")
        if self.patterns_per_class < 1 or self.background_patterns < 1:
            raise ConfigError("synthetic: need at least one pattern of each kind")
        if self.instances_min < 1 or self.instances_max < self.instances_min:
            raise ConfigError("synthetic: invalid instance count range")
        if not (0.0 < self.positive_fraction_min <= self.positive_fraction_max < 1.0):
            raise ConfigError("synthetic: positive fraction range must satisfy 0 < min <= max < 1")
        if not (1 <= self.patterns_per_bag_min <= self.patterns_per_bag_max):
            raise ConfigError("synthetic: invalid patterns-per-bag range")
        if self.cluster_std <= 0 or self.cluster_separation <= 0:
            raise ConfigError("synthetic: cluster_std and cluster_separation must be positive")
        if self.bags_per_class < 1:
            raise ConfigError("synthetic: bags_per_class must be >= 1")

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "feature_dim": self.feature_dim,
            "patterns_per_class": self.patterns_per_class,
            "background_patterns": self.background_patterns,
            "cluster_std": self.cluster_std,
            "cluster_separation": self.cluster_separation,
            "bags_per_class": self.bags_per_class,
            "instances_min": self.instances_min,
            "instances_max": self.instances_max,
            "positive_fraction_min": self.positive_fraction_min,
            "positive_fraction_max": self.positive_fraction_max,
            "patterns_per_bag_min": self.patterns_per_bag_min,
            "patterns_per_bag_max": self.patterns_per_bag_max,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"synthetic: unknown fields {sorted(unknown)}")
        return cls(**d)


@dataclass
class Dataset:
    feature_dim: int
    num_classes: int
    bags: list[Bag]
    provenance: dict = field(default_factory=dict)
    split_of: dict[str, str] = field(default_factory=dict)  # bag id -> split name
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for b in self.bags:
            if b.id in seen:
                raise DataFormatError(f"duplicate bag id {b.id!r}")
            seen.add(b.id)
            if b.feature_dim != self.feature_dim:
                raise DataFormatError(
                    f"bag {b.id!r} has {b.feature_dim} features, dataset declares "
                    f"{self.feature_dim}"
                )
            if b.label >= self.num_classes:
                raise DataFormatError(f"bag {b.id!r} label {b.label} out of range")
        for bag_id, split in self.split_of.items():
            if bag_id not in seen:
                raise DataFormatError(f"split assignment for unknown bag {bag_id!r}")
            if split not in SPLIT_NAMES:
                raise DataFormatError(f"unknown split name {split!r}")

    def bags_in(self, split: str) -> list[Bag]:
        return [b for b in self.bags if self.split_of.get(b.id) == split]


def _place_cluster_means(cfg: SyntheticConfig, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Pattern and background means with all pairwise distances >= separation."""
    n_pattern = (cfg.num_classes - 1) * cfg.patterns_per_class
    n_total = n_pattern + cfg.background_patterns
    # means live on a sphere-ish cloud of radius ~ separation * sqrt(dim),
    # so the constraint nearly always holds on the first try
    scale = cfg.cluster_separation
    for _ in range(100):
        means = rng.normal_array((n_total, cfg.feature_dim)) * scale
        diff = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        np.fill_diagonal(dist, np.inf)
        if dist.min() >= cfg.cluster_separation:
            return means[:n_pattern], means[n_pattern:]
    raise GenerationError(
        "could not place cluster means at the requested separation after 100 attempts"
    )


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Deterministic multi-pattern bag dataset from a config (seed included)."""
    rng = Rng.stream(cfg.seed, 0)
    pattern_means, background_means = _place_cluster_means(cfg, rng)
    bags: list[Bag] = []
    for label in range(cfg.num_classes):
        for b in range(cfg.bags_per_class):
            n = rng.int_range(cfg.instances_min, cfg.instances_max)
            features = np.empty((n, cfg.feature_dim))
            inst_labels = np.zeros(n, dtype=np.int64)
            n_pos = 0
            if label >= 1:
                frac = rng.uniform(cfg.positive_fraction_min, cfg.positive_fraction_max)
                # at least one discriminative instance in every positive bag
                n_pos = max(1, int(np.floor(frac * n + 0.5)))
                k_hi = min(cfg.patterns_per_bag_max, cfg.patterns_per_class)
                k_lo = min(cfg.patterns_per_bag_min, k_hi)
                k = rng.int_range(k_lo, k_hi)
                chosen = rng.sample_without_replacement(cfg.patterns_per_class, k)
                base = (label - 1) * cfg.patterns_per_class
                for row in range(n_pos):
                    p = chosen[rng.integers(k)]
                    features[row] = pattern_means[base + p] + cfg.cluster_std * rng.normal_array(
                        (cfg.feature_dim,)
                    )
                    inst_labels[row] = 1 + base + p
            for row in range(n_pos, n):
                g = rng.integers(cfg.background_patterns)
                features[row] = background_means[g] + cfg.cluster_std * rng.normal_array(
                    (cfg.feature_dim,)
                )
            order = rng.permutation(n)
            features = features[order]
            inst_labels = inst_labels[order]
            bags.append(
                Bag(
                    id=f"c{label}-{b:03d}",
                    instances=features,
                    label=label,
                    instance_labels=inst_labels,
                )
            )
    return Dataset(
        feature_dim=cfg.feature_dim,
        num_classes=cfg.num_classes,
        bags=bags,
        provenance={"kind": "synthetic", "config": cfg.to_dict()},
    )


def split_dataset(ds: Dataset, ratios, seed: int) -> Dataset:
    """Stratified train/val/test assignment; deterministic under the seed.

    Counts use floor(ratio * n) per class with the rounding residue going to
    the training split; afterwards any positive-ratio split left empty for a
    class is topped up from the largest split when the class has enough
    bags.  Classes too small to stratify degrade to the plain allocation
    with a recorded warning.
    """
    ratios = [float(r) for r in ratios]
    if len(ratios) != len(SPLIT_NAMES):
        raise ConfigError("ratios must have three entries (train, val, test)")
    if any(r < 0 for r in ratios):
        raise ConfigError("ratios must be nonnegative")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError("ratios must sum to 1")

    rng = Rng.stream(seed, 0)
    warnings: list[str] = []
    split_of: dict[str, str] = {}
    by_class: dict[int, list[Bag]] = {}
    for b in ds.bags:
        by_class.setdefault(b.label, []).append(b)

    positive_splits = [i for i, r in enumerate(ratios) if r > 0]
    for label in sorted(by_class):
        group = sorted(by_class[label], key=lambda b: b.id)
        rng.shuffle(group)
        n = len(group)
        counts = [int(np.floor(r * n)) for r in ratios]
        counts[0] += n - sum(counts)
        if n < len(positive_splits):
            warnings.append(f"class {label}: too few bags to stratify ({n})")
        else:
            # feasibility fix: every positive-ratio split gets at least one bag
            for i in positive_splits:
                while counts[i] == 0:
                    donor = max(range(len(counts)), key=lambda j: counts[j])
                    if counts[donor] <= 1:
                        break
                    counts[donor] -= 1
                    counts[i] += 1
        pos = 0
        for split_idx, count in enumerate(counts):
            for b in group[pos : pos + count]:
                split_of[b.id] = SPLIT_NAMES[split_idx]
            pos += count
    for i, r in enumerate(ratios):
        if r == 0.0:
            warnings.append(f"empty split: {SPLIT_NAMES[i]}")
    return Dataset(
        feature_dim=ds.feature_dim,
        num_classes=ds.num_classes,
        bags=ds.bags,
        provenance=ds.provenance,
        split_of=split_of,
        warnings=ds.warnings + warnings,
    )


def save_dataset(ds: Dataset, path) -> None:
    """Canonical text format; floats at 17 significant digits (bit-exact)."""
    records = []
    for b in ds.bags:
        rec: dict = {"id": b.id, "label": b.label}
        if b.id in ds.split_of:
            rec["split"] = ds.split_of[b.id]
        if b.instance_labels is not None:
            rec["instance_labels"] = [int(v) for v in b.instance_labels]
        rec["instances"] = b.instances
        records.append(rec)
    doc = {
        "format": DATASET_FORMAT,
        "format_version": DATASET_VERSION,
        "feature_dim": ds.feature_dim,
        "num_classes": ds.num_classes,
        "provenance": ds.provenance,
        "warnings": ds.warnings,
        "bags": records,
    }
    jsonio.dump(doc, path)


def load_dataset(path) -> Dataset:
    doc = jsonio.load(path)
    if not isinstance(doc, dict) or doc.get("format") != DATASET_FORMAT:
        raise DataFormatError(f"{path}: not a dataset file")
    if doc.get("format_version") != DATASET_VERSION:
        raise DataFormatError(f"{path}: unsupported dataset version")
    feature_dim = int(doc["feature_dim"])
    num_classes = int(doc["num_classes"])
    bags = []
    split_of = {}
    for rec in doc["bags"]:
        bag_id = str(rec["id"])
        rows = rec["instances"]
        for r, row in enumerate(rows):
            if len(row) != feature_dim:
                raise DataFormatError(
                    f"{path}: bag {bag_id!r} row {r} has {len(row)} values, "
                    f"expected feature_dim={feature_dim}"
                )
        features = np.asarray(rows, dtype=np.float64)
        if features.size and not np.all(np.isfinite(features)):
            raise DataFormatError(f"{path}: bag {bag_id!r} contains NaN/Inf features")
        bag = Bag(
            id=bag_id,
            instances=features,
            label=int(rec["label"]),
            instance_labels=rec.get("instance_labels"),
        )
        bags.append(bag)
        if "split" in rec:
            split_of[bag_id] = str(rec["split"])
    return Dataset(
        feature_dim=feature_dim,
        num_classes=num_classes,
        bags=bags,
        provenance=doc.get("provenance", {}),
        split_of=split_of,
        warnings=list(doc.get("warnings", [])),
    )


def save_dataset_binary(ds: Dataset, path) -> None:
    """Compact container; features stored as float32 (lossy by design).

    Layout: magic "ACMB", u32 version, then per bag: u32 id length, UTF-8
    id, u32 label, u32 N, u32 D, N*D little-endian f32 row-major, one flag
    byte, and (flag=1) N bytes of instance labels.  Splits and provenance
    are not carried.
    """
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<I", DATASET_VERSION))
        for b in ds.bags:
            ident = b.id.encode("utf-8")
            fh.write(struct.pack("<I", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<III", b.label, b.n_instances, b.feature_dim))
            fh.write(b.instances.astype("<f4").tobytes(order="C"))
            if b.instance_labels is not None:
                if b.instance_labels.max(initial=0) > 255 or b.instance_labels.min(initial=0) < 0:
                    raise DataFormatError(
                        f"bag {b.id!r}: instance labels outside [0, 255] cannot be "
                        "stored in the binary container"
                    )
                fh.write(b"\x01")
                fh.write(bytes(int(v) for v in b.instance_labels))
            else:
                fh.write(b"\x00")


def load_dataset_binary(path) -> Dataset:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != BINARY_MAGIC:
        raise DataFormatError(f"{path}: bad magic bytes at offset 0")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != DATASET_VERSION:
        raise DataFormatError(f"{path}: unsupported binary version {version}")
    pos = 8
    bags = []

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise DataFormatError(f"{path}: truncated record at offset {pos}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    while pos < len(data):
        (id_len,) = struct.unpack("<I", take(4))
        ident = take(id_len).decode("utf-8")
        label, n, d = struct.unpack("<III", take(12))
        feats = np.frombuffer(take(4 * n * d), dtype="<f4").reshape(n, d).astype(np.float64)
        (flag,) = take(1)
        inst = np.frombuffer(take(n), dtype=np.uint8).astype(np.int64) if flag == 1 else None
        bags.append(Bag(id=ident, instances=feats, label=int(label), instance_labels=inst))
    if not bags:
        raise DataFormatError(f"{path}: container holds no bags")
    feature_dim = bags[0].feature_dim
    num_classes = max(b.label for b in bags) + 1
    return Dataset(
        feature_dim=feature_dim,
        num_classes=max(num_classes, 2),
        bags=bags,
        provenance={"kind": "external", "path": str(path)},
    )
