"""Dataset ingestion (libsvm text), normalization, synthesis, and partitioning."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .losses import LOGISTIC_L2, LOGISTIC_NONCONVEX, QUADRATIC, Sample

LABEL_FLIP_NOISE = 0.05


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    samples: list
    dim: int
    name: str = ""
    _dense: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.samples:
            raise DataError("dataset must contain at least one sample")
        if self.dim < 1:
            raise DataError("dataset dimension must be positive")
        for z in self.samples:
            for i in z.features:
                if i < 0 or i >= self.dim:
                    raise DataError(f"feature index {i} out of range (dim={self.dim})")

    def __len__(self) -> int:
        return len(self.samples)

    def dense(self):
        """Dense (features, labels) arrays, built once and cached."""
        if self._dense is None:
            X = np.zeros((len(self.samples), self.dim))
            b = np.empty(len(self.samples))
            for row, z in enumerate(self.samples):
                for i, v in z.features.items():
                    X[row, i] = v
                b[row] = z.label
            self._dense = (X, b)
        return self._dense

    def max_row_norm_sq(self) -> float:
        return max(
            math.fsum(v * v for v in z.features.values()) for z in self.samples
        )


@dataclass(frozen=True)
class Partition:
    assignments: tuple
    worker_count: int

    def __post_init__(self):
        if len(self.assignments) != self.worker_count:
            raise DataError("assignment count does not match worker count")
        seen = set()
        for part in self.assignments:
            if not part:
                raise DataError("every worker must receive at least one sample")
            for i in part:
                if i in seen:
                    raise DataError(f"sample index {i} assigned twice")
                seen.add(i)
        if seen != set(range(len(seen))) or not seen:
            raise DataError("partition must cover sample indices 0..N-1 exactly")

    @property
    def sizes(self):
        return tuple(len(part) for part in self.assignments)


def parse_libsvm(source) -> Dataset:
    """Parse libsvm text (``label idx:val ...``, 1-based indices).

    0/1 labels are remapped to -1/+1.
    """
    if isinstance(source, str):
        lines = source.splitlines()
    else:
        lines = [line.rstrip("\n") for line in source]
    samples = []
    max_index = 0
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split()
        try:
            label = float(fields[0])
        except ValueError as exc:
            raise DataError(f"line {lineno}: bad label {fields[0]!r}") from exc
        features = {}
        for token in fields[1:]:
            try:
                idx_text, val_text = token.split(":", 1)
                idx = int(idx_text)
                val = float(val_text)
            except ValueError as exc:
                raise DataError(f"line {lineno}: bad feature token {token!r}") from exc
            if idx < 1:
                raise DataError(f"line {lineno}: indices are 1-based, got {idx}")
            features[idx - 1] = val
            max_index = max(max_index, idx)
        samples.append(Sample(features=features, label=label))
    if not samples:
        raise DataError("empty libsvm input")
    labels = {z.label for z in samples}
    if labels <= {0.0, 1.0}:
        samples = [
            Sample(features=z.features, label=1.0 if z.label == 1.0 else -1.0)
            for z in samples
        ]
    elif not labels <= {-1.0, 1.0}:
        raise DataError(f"unsupported label set: {sorted(labels)}")
    return Dataset(samples=samples, dim=max_index, name="libsvm")


def serialize_libsvm(dataset: Dataset) -> str:
    lines = []
    for z in dataset.samples:
        tokens = [repr(int(z.label)) if z.label in (-1.0, 1.0) else repr(z.label)]
        for i in sorted(z.features):
            tokens.append(f"{i + 1}:{z.features[i]!r}")
        lines.append(" ".join(tokens))
    return "\n".join(lines) + "\n"


def normalize_features(dataset: Dataset) -> Dataset:
    """Scale all feature vectors so that max_i ||a_i||^2 = 1."""
    max_sq = dataset.max_row_norm_sq()
    if max_sq == 0.0:
        raise DataError("cannot normalize a dataset with all-zero features")
    scale = 1.0 / math.sqrt(max_sq)
    samples = [
        Sample(features={i: v * scale for i, v in z.features.items()}, label=z.label)
        for z in dataset.samples
    ]
    return Dataset(samples=samples, dim=dataset.dim, name=dataset.name)


def _shuffled_indices(n_samples: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.permutation(n_samples)


def partition_equal(dataset: Dataset, n: int, seed: int) -> Partition:
    N = len(dataset)
    if n < 1 or n > N:
        raise DataError(f"worker count {n} invalid for {N} samples")
    perm = _shuffled_indices(N, seed)
    base, extra = divmod(N, n)
    parts = []
    offset = 0
    for k in range(n):
        size = base + (1 if k < extra else 0)
        parts.append(tuple(sorted(int(i) for i in perm[offset : offset + size])))
        offset += size
    return Partition(assignments=tuple(parts), worker_count=n)


def partition_fractions(dataset: Dataset, fractions, seed: int) -> Partition:
    """Seeded shuffle then split with largest-remainder rounding."""
    fractions = tuple(float(f) for f in fractions)
    if any(f <= 0 for f in fractions):
        raise DataError("fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions must sum to 1, got {sum(fractions)}")
    N = len(dataset)
    raw = [f * N for f in fractions]
    sizes = [int(math.floor(r)) for r in raw]
    remainders = sorted(
        range(len(fractions)), key=lambda k: (-(raw[k] - sizes[k]), k)
    )
    for k in remainders[: N - sum(sizes)]:
        sizes[k] += 1
    if any(s == 0 for s in sizes):
        raise DataError(f"a fraction rounds to zero samples: sizes {sizes}")
    perm = _shuffled_indices(N, seed)
    parts = []
    offset = 0
    for size in sizes:
        parts.append(tuple(sorted(int(i) for i in perm[offset : offset + size])))
        offset += size
    return Partition(assignments=tuple(parts), worker_count=len(fractions))


def partition_label_skewed(dataset: Dataset, n: int, seed: int) -> Partition:
    """Contiguous split after sorting by label: workers get label-homogeneous blocks."""
    N = len(dataset)
    if n < 1 or n > N:
        raise DataError(f"worker count {n} invalid for {N} samples")
    perm = _shuffled_indices(N, seed)
    order = sorted(perm, key=lambda i: (dataset.samples[i].label, int(i)))
    base, extra = divmod(N, n)
    parts = []
    offset = 0
    for k in range(n):
        size = base + (1 if k < extra else 0)
        parts.append(tuple(sorted(int(i) for i in order[offset : offset + size])))
        offset += size
    return Partition(assignments=tuple(parts), worker_count=n)


def synthesize(kind: str, N: int, d: int, seed: int) -> Dataset:
    """Seeded synthetic dataset.

    Logistic kinds: gaussian features normalized to max ||a_i||^2 = 1, labels
    from a planted linear model with 5% flip noise. Quadratic: gaussian
    per-sample targets.
    """
    if N < 1 or d < 1:
        raise DataError("N and d must be positive")
    rng = np.random.default_rng(seed)
    name = f"synthetic-{kind}-{N}x{d}-seed{seed}"
    if kind == QUADRATIC:
        targets = rng.standard_normal((N, d))
        samples = [
            Sample(features={i: float(row[i]) for i in range(d)}, label=1.0)
            for row in targets
        ]
        return Dataset(samples=samples, dim=d, name=name)
    if kind not in (LOGISTIC_L2, LOGISTIC_NONCONVEX, "logistic"):
        raise DataError(f"unknown synthetic kind: {kind!r}")
    A = rng.standard_normal((N, d))
    planted = rng.standard_normal(d)
    margins = A @ planted
    labels = np.where(margins >= 0.0, 1.0, -1.0)
    flips = rng.random(N) < LABEL_FLIP_NOISE
    labels[flips] *= -1.0
    samples = [
        Sample(
            features={i: float(A[row, i]) for i in range(d)},
            label=float(labels[row]),
        )
        for row in range(N)
    ]
    return normalize_features(Dataset(samples=samples, dim=d, name=name))
