"""Datasets, synthetic generation, Non-IID partitioning, and public splits.

Label skew follows the usual per-class Dirichlet recipe: for every class,
client proportions are drawn from Dirichlet(gamma * 1_K) and the class's
shuffled indices are cut at the cumulative proportions. Feature skew is
emulated with deterministic per-client transforms (rotation, brightness,
noise) applied to an otherwise uniform split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, FormatError, PartitionError
from .rng import (
    TAG_BLOBS,
    TAG_DIRICHLET,
    TAG_FEATURE_SKEW,
    TAG_LOCAL_PUBLIC,
    TAG_PUBLIC_SPLIT,
    TAG_TEST_SPLIT,
    rng_from,
)

DATASET_MAGIC = b"EFATDS1\n"
MAX_CLASSES = 1 << 16  # labels are stored as uint16


@dataclass
class Dataset:
    """Labeled examples: features [n x d] float64, labels [n] ints < num_classes."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.features.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {self.features.shape}")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"{self.features.shape[0]} feature rows vs {self.labels.shape[0]} labels"
            )
        if self.num_classes < 1 or self.num_classes > MAX_CLASSES:
            raise DataError(f"num_classes out of range: {self.num_classes}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")
        if not np.isfinite(self.features).all():
            raise DataError("features contain NaN/Inf")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx].copy(), self.labels[idx].copy(), self.num_classes)

    def class_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    @staticmethod
    def concat(parts: list["Dataset"]) -> "Dataset":
        if not parts:
            raise DataError("cannot concatenate zero datasets")
        num_classes = parts[0].num_classes
        dim = parts[0].dim
        for p in parts[1:]:
            if p.num_classes != num_classes or p.dim != dim:
                raise DataError("datasets disagree on dim/num_classes")
        return Dataset(
            np.concatenate([p.features for p in parts], axis=0),
            np.concatenate([p.labels for p in parts]),
            num_classes,
        )


@dataclass
class PartitionPlan:
    """Per-client index lists into a source dataset. gamma is None in
    feature-skew mode."""

    assignments: list[np.ndarray]
    gamma: float | None
    seed: int

    def check_partition(self, total: int) -> None:
        merged = np.concatenate(self.assignments) if self.assignments else np.array([], dtype=np.int64)
        if len(np.unique(merged)) != merged.size:
            raise PartitionError("duplicate indices across clients")
        if merged.size != total:
            raise PartitionError(f"plan covers {merged.size} of {total} examples")


def make_blobs(classes: int, dim: int, per_class: int, spread: float, seed: int) -> Dataset:
    """Gaussian clusters on a seeded simplex arrangement, rescaled into [0, 1].

    Class means sit on a regular simplex when dim >= classes (orthonormal
    rows of a random rotation); for smaller dim they fall back to a random
    linear embedding of the simplex vertices.
    """
    if classes < 1 or dim < 1 or per_class < 1:
        raise ConfigError("classes, dim and per_class must all be positive")
    if spread < 0:
        raise ConfigError(f"spread must be >= 0, got {spread}")
    rng = rng_from(seed, TAG_BLOBS)
    if dim >= classes:
        q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        means = q[:classes]
    else:
        proj = rng.normal(size=(classes, dim)) / math.sqrt(dim)
        means = proj  # simplex vertices e_k mapped through a random embedding
    n = classes * per_class
    labels = np.repeat(np.arange(classes), per_class)
    noise = rng.normal(size=(n, dim))
    features = means[labels] + spread * noise
    lo, hi = features.min(), features.max()
    if hi - lo < 1e-12:
        features = np.full_like(features, 0.5)
    else:
        features = (features - lo) / (hi - lo)
    features = np.clip(features, 0.0, 1.0)
    return Dataset(features, labels, classes)


def _per_class_indices(labels: np.ndarray, num_classes: int) -> list[np.ndarray]:
    return [np.flatnonzero(labels == c) for c in range(num_classes)]


def dirichlet_partition(ds: Dataset, clients: int, gamma: float, seed: int) -> PartitionPlan:
    """Label-skew split: per class, client shares ~ Dirichlet(gamma * 1_K).

    Redraws the whole plan (up to 100 attempts) if any client would end up
    with no examples at all.
    """
    if clients < 2:
        raise ConfigError(f"need >= 2 clients, got {clients}")
    if gamma <= 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    by_class = _per_class_indices(ds.labels, ds.num_classes)
    for c, idx in enumerate(by_class):
        if 0 < idx.size < clients:
            raise PartitionError(f"class {c} has {idx.size} examples for {clients} clients")
    rng = rng_from(seed, TAG_DIRICHLET)
    for _attempt in range(100):
        assignments: list[list[np.ndarray]] = [[] for _ in range(clients)]
        for idx in by_class:
            if idx.size == 0:
                continue
            shuffled = rng.permutation(idx)
            props = rng.dirichlet(np.full(clients, gamma))
            cuts = (np.cumsum(props)[:-1] * idx.size).astype(np.int64)
            for k, part in enumerate(np.split(shuffled, cuts)):
                assignments[k].append(part)
        merged = [
            np.sort(np.concatenate(parts)) if parts else np.array([], dtype=np.int64)
            for parts in assignments
        ]
        if all(m.size > 0 for m in merged):
            return PartitionPlan(merged, float(gamma), seed)
    raise PartitionError("could not produce a partition with every client nonempty (100 draws)")


@dataclass(frozen=True)
class FeatureTransform:
    """Deterministic per-client domain shift: rotate the first two feature
    coordinates about 0.5, add a brightness offset, add seeded noise."""

    rotation: float = 0.0
    brightness: float = 0.0
    noise_std: float = 0.0

    def apply(self, features: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        out = features.copy()
        if self.rotation != 0.0 and out.shape[1] >= 2:
            c, s = math.cos(self.rotation), math.sin(self.rotation)
            x0 = out[:, 0] - 0.5
            x1 = out[:, 1] - 0.5
            out[:, 0] = c * x0 - s * x1 + 0.5
            out[:, 1] = s * x0 + c * x1 + 0.5
        if self.brightness != 0.0:
            out += self.brightness
        if self.noise_std > 0.0:
            out += rng.normal(0.0, self.noise_std, size=out.shape)
        return np.clip(out, 0.0, 1.0)


def default_transforms(clients: int, rotation_step: float = 0.2,
                       brightness_step: float = 0.08, noise_std: float = 0.02) -> list[FeatureTransform]:
    """One mildly different domain per client, centred around the identity."""
    mid = (clients - 1) / 2.0
    return [
        FeatureTransform(
            rotation=(k - mid) * rotation_step,
            brightness=(k - mid) * brightness_step,
            noise_std=noise_std,
        )
        for k in range(clients)
    ]


def feature_skew_partition(
    ds: Dataset, clients: int, transforms: list[FeatureTransform], seed: int
) -> list[Dataset]:
    """Uniform per-class split followed by each client's deterministic transform."""
    if len(transforms) != clients:
        raise ConfigError(f"{len(transforms)} transforms for {clients} clients")
    if clients < 1:
        raise ConfigError("need at least one client")
    rng = rng_from(seed, TAG_FEATURE_SKEW)
    assignments: list[list[int]] = [[] for _ in range(clients)]
    for c, idx in enumerate(_per_class_indices(ds.labels, ds.num_classes)):
        shuffled = rng.permutation(idx)
        for j, example in enumerate(shuffled):
            assignments[(c + j) % clients].append(int(example))
    shards = []
    for k in range(clients):
        shard = ds.subset(np.sort(np.asarray(assignments[k], dtype=np.int64)))
        noise_rng = rng_from(seed, TAG_FEATURE_SKEW, k + 1)
        shards.append(Dataset(transforms[k].apply(shard.features, noise_rng), shard.labels, ds.num_classes))
    return shards


def _stratified_take(labels: np.ndarray, num_classes: int, fraction: float,
                     rng: np.random.Generator) -> np.ndarray:
    """ceil(fraction * n_c) seeded picks per class; returns sorted indices."""
    taken = []
    for idx in _per_class_indices(labels, num_classes):
        if idx.size == 0:
            continue
        count = math.ceil(fraction * idx.size)
        taken.append(rng.choice(idx, size=count, replace=False))
    return np.sort(np.concatenate(taken)) if taken else np.array([], dtype=np.int64)


def split_public_private(ds: Dataset, public_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified split into (private pool P, public pool G).

    G receives ceil(public_fraction * n_c) examples of each class, so its
    label mix mirrors the corpus.
    """
    if not 0.0 < public_fraction < 1.0:
        raise ConfigError(f"public_fraction must be in (0, 1), got {public_fraction}")
    rng = rng_from(seed, TAG_PUBLIC_SPLIT)
    public_idx = _stratified_take(ds.labels, ds.num_classes, public_fraction, rng)
    mask = np.ones(len(ds), dtype=bool)
    mask[public_idx] = False
    private_idx = np.flatnonzero(mask)
    if public_idx.size == 0 or private_idx.size == 0:
        raise ConfigError(f"public_fraction={public_fraction} leaves an empty part")
    return ds.subset(private_idx), ds.subset(public_idx)


def holdout_split(ds: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified (train_pool, held_out) split taken before any other split."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"holdout fraction must be in (0, 1), got {fraction}")
    rng = rng_from(seed, TAG_TEST_SPLIT)
    held_idx = _stratified_take(ds.labels, ds.num_classes, fraction, rng)
    mask = np.ones(len(ds), dtype=bool)
    mask[held_idx] = False
    rest = np.flatnonzero(mask)
    if held_idx.size == 0 or rest.size == 0:
        raise ConfigError(f"holdout fraction={fraction} leaves an empty part")
    return ds.subset(rest), ds.subset(held_idx)


def sample_local_public(G: Dataset, alpha: float, client_id: int, seed: int,
                        round_idx: int = 0) -> Dataset:
    """Seeded sample without replacement of ceil(alpha * |G|), independent per
    (client, round)."""
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"alpha must be in (0, 1], got {alpha}")
    count = math.ceil(alpha * len(G))
    if count < 1:
        raise ConfigError(f"alpha={alpha} over |G|={len(G)} yields an empty shard")
    rng = rng_from(seed, TAG_LOCAL_PUBLIC, client_id, round_idx)
    idx = rng.choice(len(G), size=count, replace=False)
    return G.subset(idx)


def save_dataset(ds: Dataset, path) -> None:
    """File layout: magic line, ASCII "n d num_classes" line, little-endian
    float64 feature rows, then little-endian uint16 labels."""
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(f"{len(ds)} {ds.dim} {ds.num_classes}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(ds.features, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.labels, dtype="<u2").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(DATASET_MAGIC):
        raise FormatError(f"{path}: bad dataset magic")
    header_end = blob.find(b"\n", len(DATASET_MAGIC))
    if header_end < 0:
        raise FormatError(f"{path}: missing dataset header")
    try:
        n, dim, num_classes = (int(tok) for tok in blob[len(DATASET_MAGIC):header_end].split())
    except ValueError as exc:
        raise FormatError(f"{path}: unparseable dataset header") from exc
    if n < 0 or dim < 1 or not 1 <= num_classes <= MAX_CLASSES:
        raise FormatError(f"{path}: invalid dataset header ({n}, {dim}, {num_classes})")
    body = blob[header_end + 1 :]
    feat_bytes = 8 * n * dim
    label_bytes = 2 * n
    if len(body) != feat_bytes + label_bytes:
        raise FormatError(f"{path}: expected {feat_bytes + label_bytes} body bytes, got {len(body)}")
    features = np.frombuffer(body, dtype="<f8", count=n * dim).reshape(n, dim).copy()
    labels = np.frombuffer(body, dtype="<u2", count=n, offset=feat_bytes).astype(np.int64)
    if labels.size and labels.max() >= num_classes:
        raise FormatError(f"{path}: label exceeds num_classes")
    return Dataset(features, labels, num_classes)
