"""Synthetic datasets, label corruption, episodic tasks, IDX files, metrics.

Randomness: every operation derives its own child stream from (seed, op tag)
through numpy's SeedSequence/PCG64, so results are reproducible bit-exactly
across platforms and one operation's draws never disturb another's.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

__all__ = [
    "Dataset",
    "Episode",
    "EpisodeSet",
    "gen_synthetic",
    "corrupt_labels",
    "split",
    "make_episodes",
    "load_idx",
    "write_idx",
    "dataset_to_csv",
    "f1_score",
    "stream",
]

# one fixed tag per randomized operation
_OP_TAGS = {"gen_synthetic": 1, "corrupt_labels": 2, "split": 3, "make_episodes": 4, "lambda0": 5}

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def stream(seed: int, op: str) -> np.random.Generator:
    """Child PCG64 stream for one operation call."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=(int(seed), _OP_TAGS[op]))))


@dataclass(frozen=True)
class Dataset:
    """Feature matrix, integer labels in [0, C), and a corruption mask."""

    X: np.ndarray
    y: np.ndarray
    mask: np.ndarray
    C: int

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],) or self.mask.shape != self.y.shape:
            raise ValueError("inconsistent dataset shapes")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("features contain non-finite entries")
        if self.C < 1 or self.y.min(initial=0) < 0 or self.y.max(initial=0) >= self.C:
            raise ValueError("bad-label: labels must lie in [0, C)")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.mask[idx], self.C)


@dataclass(frozen=True)
class Episode:
    X_tr: np.ndarray
    y_tr: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray


@dataclass(frozen=True)
class EpisodeSet:
    """Few-shot tasks with identical (way, shot, val_per_class) shape."""

    episodes: List[Episode]
    way: int
    shot: int
    val_per_class: int

    def __len__(self) -> int:
        return len(self.episodes)


def gen_synthetic(seed: int, n: int, d: int, C: int, margin: float) -> Dataset:
    """Gaussian blobs around C simplex-corner centers a fixed margin apart.

    Center c sits at (margin / sqrt(2)) * e_c, so every pair of centers is
    exactly `margin` apart; features add unit-variance noise.  Labels cycle
    round-robin so classes stay balanced.
    """
    if n < C:
        raise ValueError(f"too-few-samples: need at least {C} samples for {C} classes, got {n}")
    if margin <= 0:
        raise ValueError("margin must be positive")
    if d < C:
        raise ValueError(f"feature dimension {d} cannot place {C} separated centers")
    rng = stream(seed, "gen_synthetic")
    centers = np.zeros((C, d))
    centers[np.arange(C), np.arange(C)] = margin / np.sqrt(2.0)
    y = (np.arange(n) % C).astype(np.int64)
    X = centers[y] + rng.standard_normal((n, d))
    return Dataset(X=X, y=y, mask=np.zeros(n, dtype=bool), C=C)


def corrupt_labels(ds: Dataset, rho: float, seed: int) -> Dataset:
    """Flip floor(rho*N) uniformly chosen labels to uniformly drawn different ones."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    if rho > 0 and ds.C < 2:
        raise ValueError("cannot-corrupt-single-class: need at least 2 classes to corrupt")
    rng = stream(seed, "corrupt_labels")
    n = len(ds)
    count = int(np.floor(rho * n))
    y = ds.y.copy()
    mask = np.zeros(n, dtype=bool)
    if count:
        chosen = rng.choice(n, size=count, replace=False)
        # uniform over the C-1 labels different from the original
        draws = rng.integers(0, ds.C - 1, size=count)
        draws = draws + (draws >= y[chosen])
        y[chosen] = draws
        mask[chosen] = True
    return Dataset(X=ds.X.copy(), y=y, mask=mask, C=ds.C)


def split(ds: Dataset, n_tr: int, n_val: int, seed: int) -> Tuple[Dataset, Dataset]:
    """Disjoint uniformly sampled train/validation subsets."""
    if n_tr + n_val > len(ds):
        raise ValueError(f"split-too-large: {n_tr}+{n_val} exceeds {len(ds)} samples")
    perm = stream(seed, "split").permutation(len(ds))
    return ds.take(perm[:n_tr]), ds.take(perm[n_tr:n_tr + n_val])


def make_episodes(ds: Dataset, way: int, shot: int, val_per_class: int,
                  n_tasks: int, seed: int) -> EpisodeSet:
    """Sample n_tasks few-shot episodes with per-task labels remapped to [0, way).

    Each task draws `way` classes (from those with enough inventory), then
    shot + val_per_class disjoint samples per class.
    """
    need = shot + val_per_class
    counts = np.bincount(ds.y, minlength=ds.C)
    eligible = np.flatnonzero(counts >= need)
    if eligible.size < way:
        raise ValueError(
            f"episode-infeasible: only {eligible.size} classes have {need} samples, need {way}")
    rng = stream(seed, "make_episodes")
    by_class = {c: np.flatnonzero(ds.y == c) for c in eligible}
    episodes = []
    for _ in range(n_tasks):
        classes = rng.choice(eligible, size=way, replace=False)
        Xtr, ytr, Xva, yva = [], [], [], []
        for new_label, c in enumerate(classes):
            pick = rng.choice(by_class[c], size=need, replace=False)
            Xtr.append(ds.X[pick[:shot]])
            ytr.append(np.full(shot, new_label, dtype=np.int64))
            Xva.append(ds.X[pick[shot:]])
            yva.append(np.full(val_per_class, new_label, dtype=np.int64))
        episodes.append(Episode(np.vstack(Xtr), np.concatenate(ytr),
                                np.vstack(Xva), np.concatenate(yva)))
    return EpisodeSet(episodes=episodes, way=way, shot=shot, val_per_class=val_per_class)


def load_idx(images_path, labels_path) -> Dataset:
    """Parse big-endian IDX image/label files into a flat-feature dataset.

    Image bytes scale linearly to [0, 1]; images flatten row-major to
    d = rows * cols.
    """
    with open(images_path, "rb") as f:
        magic, n_img, rows, cols = struct.unpack(">IIII", f.read(16))
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError(f"idx-bad-magic: expected {IDX_IMAGES_MAGIC:#010x} in image file, got {magic:#010x}")
        raw = f.read(n_img * rows * cols)
    if len(raw) != n_img * rows * cols:
        raise ValueError("idx-count-mismatch: image file truncated")
    with open(labels_path, "rb") as f:
        magic, n_lab = struct.unpack(">II", f.read(8))
        if magic != IDX_LABELS_MAGIC:
            raise ValueError(f"idx-bad-magic: expected {IDX_LABELS_MAGIC:#010x} in label file, got {magic:#010x}")
        lab = f.read(n_lab)
    if len(lab) != n_lab:
        raise ValueError("idx-count-mismatch: label file truncated")
    if n_img != n_lab:
        raise ValueError(f"idx-count-mismatch: {n_img} images vs {n_lab} labels")
    X = np.frombuffer(raw, dtype=np.uint8).astype(np.float64).reshape(n_img, rows * cols) / 255.0
    y = np.frombuffer(lab, dtype=np.uint8).astype(np.int64)
    C = int(y.max()) + 1 if n_img else 1
    return Dataset(X=X, y=y, mask=np.zeros(n_img, dtype=bool), C=C)


def write_idx(ds: Dataset, images_path, labels_path, rows: int = 1, cols: int = 0) -> None:
    """Write a dataset whose features lie in [0, 1] as an IDX pair.

    Features are quantized to bytes (round to nearest); a dataset already on
    the k/255 grid round-trips exactly.
    """
    if cols == 0:
        cols = ds.d // rows
    if rows * cols != ds.d:
        raise ValueError(f"rows*cols = {rows * cols} does not match feature dim {ds.d}")
    if ds.X.min(initial=0.0) < 0.0 or ds.X.max(initial=0.0) > 1.0:
        raise ValueError("features must lie in [0, 1] for byte quantization")
    if ds.C > 256:
        raise ValueError("labels beyond one byte")
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, len(ds), rows, cols))
        f.write(np.rint(ds.X * 255.0).astype(np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(ds)))
        f.write(ds.y.astype(np.uint8).tobytes())


def dataset_to_csv(ds: Dataset, path) -> None:
    """Export with header index,label,corrupted,feat_0..feat_{d-1}."""
    cols = ",".join(f"feat_{j}" for j in range(ds.d))
    with open(path, "w", newline="") as f:
        f.write(f"index,label,corrupted,{cols}\n")
        for i in range(len(ds)):
            feats = ",".join(f"{v:.17g}" for v in ds.X[i])
            f.write(f"{i},{ds.y[i]},{int(ds.mask[i])},{feats}\n")


def f1_score(predicted_corrupt, mask) -> float:
    """Harmonic mean of precision and recall; 0 by convention when TP = 0."""
    predicted_corrupt = np.asarray(predicted_corrupt, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if predicted_corrupt.shape != mask.shape:
        raise ValueError("prediction and mask lengths differ")
    tp = int(np.sum(predicted_corrupt & mask))
    if tp == 0:
        return 0.0
    fp = int(np.sum(predicted_corrupt & ~mask))
    fn = int(np.sum(~predicted_corrupt & mask))
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)
