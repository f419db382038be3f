"""MI quantities measured on a fixed training subset.

``IXY`` is the reference: MI between (optionally tiled) inputs and labels,
computed once per run. ``IHY`` is MI between one layer's activations and the
labels; on the output layer it is ``IHYLL``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mi_estimator import DEFAULT_JITTER, DEFAULT_K, MiEstimate, add_jitter, as_samples, ksg_mi

DEFAULT_PROBE_SIZE = 1000

CURVE_COLUMNS = ("sample_size", "mean_nats", "std_nats", "repeats")


def derive_seed(*parts: int) -> int:
    """Deterministic 63-bit seed from a tuple of integers."""
    state = np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)
    return int(state[0]) >> 1


@dataclass
class ProbeSubset:
    indices: np.ndarray
    x_probe: np.ndarray
    y_probe: np.ndarray


@dataclass(frozen=True)
class ReferenceBound:
    ixy: MiEstimate
    tiling_factor: int = 1

    @property
    def value(self) -> float:
        return self.ixy.value


@dataclass(frozen=True)
class MiCurvePoint:
    sample_size: int
    mean: float
    std: float
    repeats: int


def draw_probe_subset(dataset_size: int, probe_size: int, seed: int) -> np.ndarray:
    """Sorted, distinct indices drawn uniformly without replacement."""
    if probe_size < 1 or probe_size > dataset_size:
        raise ValueError(f"probe size {probe_size} must be in [1, {dataset_size}]")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(dataset_size, size=probe_size, replace=False))


def labels_to_real(labels, jitter_scale: float = DEFAULT_JITTER, seed: int = 0) -> np.ndarray:
    """Integer labels as one jittered real column."""
    col = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if col.shape[0] == 0:
        return col
    return add_jitter(col, jitter_scale, seed)


def tile_features(m, n: int) -> np.ndarray:
    """Concatenate ``n`` copies of every row along the feature axis."""
    if n < 1:
        raise ValueError("tiling factor must be >= 1")
    arr = as_samples(m)
    return arr if n == 1 else np.tile(arr, (1, n))


def make_probe(
    x,
    labels,
    probe_size: int = DEFAULT_PROBE_SIZE,
    seed: int = 0,
    jitter_scale: float = DEFAULT_JITTER,
) -> ProbeSubset:
    labels = np.asarray(labels)
    idx = draw_probe_subset(len(labels), min(probe_size, len(labels)), seed)
    y_probe = labels_to_real(labels[idx], jitter_scale, derive_seed(seed, 1))
    return ProbeSubset(indices=idx, x_probe=np.asarray(x)[idx], y_probe=y_probe)


def compute_reference(
    x,
    y_labels,
    k: int = DEFAULT_K,
    tiling_factor: int = 1,
    seed: int = 0,
    jitter_scale: float = DEFAULT_JITTER,
) -> ReferenceBound:
    """IXY on the given (probe) rows: jitter both sides, tile, run KSG.

    For convolutional models ``tiling_factor`` should be the number of
    first-layer filters; dense models use 1.
    """
    xj = add_jitter(x, jitter_scale, derive_seed(seed, 0))
    yj = labels_to_real(y_labels, jitter_scale, derive_seed(seed, 1))
    est = ksg_mi(tile_features(xj, tiling_factor), tile_features(yj, tiling_factor), k, jitter_seed=seed)
    return ReferenceBound(ixy=est, tiling_factor=tiling_factor)


def compute_ihy(
    activations,
    y_probe,
    k: int = DEFAULT_K,
    seed: int = 0,
    jitter_scale: float = DEFAULT_JITTER,
) -> MiEstimate:
    """I(H;Y) for one layer. ``y_probe`` is the already-jittered label column."""
    h = add_jitter(activations, jitter_scale, seed)
    return ksg_mi(h, y_probe, k, jitter_seed=seed)


def mi_vs_sample_size(
    x,
    y,
    sizes,
    repeats: int = 10,
    k: int = DEFAULT_K,
    seed: int = 0,
    jitter_scale: float = DEFAULT_JITTER,
) -> list[MiCurvePoint]:
    """Mean and standard deviation of the KSG estimate over random subsets.

    Each (size, repeat) pair gets its own subset and jitter seed, derived from
    ``seed``, so the curve does not depend on evaluation order.
    """
    x = as_samples(x)
    y = as_samples(y)
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError("x and y row counts differ")
    if repeats < 2:
        raise ValueError("repeats must be >= 2 to report a standard deviation")
    for size in sizes:
        if size > n:
            raise ValueError(f"sample size {size} exceeds the {n} available rows")

    points = []
    for size in sizes:
        values = []
        for rep in range(repeats):
            rep_seed = derive_seed(seed, size, rep)
            idx = draw_probe_subset(n, size, rep_seed)
            xs = add_jitter(x[idx], jitter_scale, derive_seed(rep_seed, 0))
            ys = add_jitter(y[idx], jitter_scale, derive_seed(rep_seed, 1))
            values.append(ksg_mi(xs, ys, k).value)
        values = np.asarray(values)
        points.append(MiCurvePoint(int(size), float(values.mean()), float(values.std(ddof=1)), repeats))
    return points


def write_curve_csv(points, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for p in points:
            w.writerow([p.sample_size, f"{p.mean:.9g}", f"{p.std:.9g}", p.repeats])
