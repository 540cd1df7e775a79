"""Datasets: AR(p) simulation, CSV streams, sliding windows and chronological splits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .signature import Stream

DEFAULT_AR_COEFFS = (0.4, -0.2, 0.1, -0.05, 0.05)


def companion_radius(coeffs: Sequence[float]) -> float:
    """Spectral radius of the AR companion matrix."""
    p = len(coeffs)
    if p == 0:
        return 0.0
    C = np.zeros((p, p))
    C[0] = coeffs
    C[1:, :-1] = np.eye(p - 1)
    return float(np.max(np.abs(np.linalg.eigvals(C))))


def simulate_ar(coeffs: Sequence[float] = DEFAULT_AR_COEFFS, noise_std: float = 1.0,
                length: int = 1000, burn_in: int = 500, seed=0) -> Stream:
    """Simulate ``x_t = sum_i coeffs[i] x_{t-1-i} + eps_t`` with unit-spaced timestamps."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.size and companion_radius(coeffs) >= 1.0:
        raise DataError(
            f"AR coefficients are not stationary (companion spectral radius "
            f"{companion_radius(coeffs):.4f} >= 1)"
        )
    if length < 1 or burn_in < 0 or noise_std < 0:
        raise DataError("need length >= 1, burn_in >= 0 and noise_std >= 0")
    p = coeffs.size
    total = length + burn_in
    eps = np.random.default_rng(seed).standard_normal(total) * noise_std
    x = np.zeros(total + p)
    rev = coeffs[::-1]
    for t in range(p, total + p):
        x[t] = np.dot(rev, x[t - p : t]) + eps[t - p] if p else eps[t - p]
    values = x[p + burn_in :]
    return Stream(np.arange(length, dtype=np.float64), values[:, None])


def load_csv(path, log_transform: bool = False) -> Stream:
    """Read a ``t,v1[,v2,...]`` CSV file with a header row."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise DataError(f"{path}: file is empty (header and at least one row required)")
    header, body = rows[0], rows[1:]
    ncol = len(header)
    if ncol < 2:
        raise DataError(f"{path}: need a time column and at least one value column")
    data = np.empty((len(body), ncol))
    for r, row in enumerate(body, start=2):
        if len(row) != ncol:
            raise DataError(f"{path}: row {r} has {len(row)} cells, expected {ncol}")
        for c, cell in enumerate(row):
            try:
                data[r - 2, c] = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric cell {cell!r} at row {r}, column {c + 1} ({header[c]})") from None
    t = data[:, 0]
    bad = np.nonzero(np.diff(t) <= 0)[0]
    if bad.size:
        raise DataError(f"{path}: timestamps not strictly increasing at row {int(bad[0]) + 3}")
    values = data[:, 1:]
    if log_transform:
        if np.any(values <= 0):
            raise DataError(f"{path}: log transform needs strictly positive values")
        values = np.log(values)
    return Stream(t, values)


def write_csv(s: Stream, path, names: Sequence[str] | None = None) -> None:
    names = list(names) if names else [f"v{i + 1}" for i in range(s.channels)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + names)
        for t, row in zip(s.times, s.values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def bucket_mean(s: Stream, width: float) -> Stream:
    """Average observations in fixed-width time buckets; empty buckets are dropped."""
    if not width > 0:
        raise DataError("bucket width must be positive")
    b = np.floor((s.times - s.times[0]) / width).astype(np.int64)
    keys, inv = np.unique(b, return_inverse=True)
    sums = np.zeros((keys.size, s.channels))
    np.add.at(sums, inv, s.values)
    counts = np.bincount(inv).astype(np.float64)
    return Stream(s.times[0] + keys * width, sums / counts[:, None])


@dataclass(frozen=True)
class WindowSpec:
    x_length: int = 60
    y_length: int = 40
    stride: int = 1

    def __post_init__(self):
        if min(self.x_length, self.y_length, self.stride) < 1:
            raise DataError("window lengths and stride must be >= 1")


def make_windows(s: Stream, spec: WindowSpec) -> list[tuple[Stream, Stream]]:
    span = spec.x_length + spec.y_length
    if s.length < span:
        raise DataError(f"stream of length {s.length} is shorter than one window ({span})")
    count = (s.length - span) // spec.stride + 1
    pairs = []
    for w in range(count):
        i = w * spec.stride
        j = i + spec.x_length
        pairs.append((Stream(s.times[i:j], s.values[i:j]),
                      Stream(s.times[j : j + spec.y_length], s.values[j : j + spec.y_length])))
    return pairs


@dataclass
class Dataset:
    train: list
    val: list
    test: list
    mean: np.ndarray
    std: np.ndarray
    info: dict = field(default_factory=dict)

    def normalize(self, s: Stream) -> Stream:
        return s.with_values((s.values - self.mean) / self.std)

    def denormalize(self, s: Stream) -> Stream:
        return s.with_values(s.values * self.std + self.mean)

    def manifest_lines(self) -> list[str]:
        lines = [f"n_train = {len(self.train)}", f"n_val = {len(self.val)}",
                 f"n_test = {len(self.test)}",
                 f"norm_mean = {','.join(repr(float(v)) for v in self.mean)}",
                 f"norm_std = {','.join(repr(float(v)) for v in self.std)}"]
        for split in ("train", "val", "test"):
            pairs = getattr(self, split)
            if pairs:
                lines.append(f"{split}_start_time = {pairs[0][0].times[0]!r}")
                lines.append(f"{split}_end_time = {pairs[-1][1].times[-1]!r}")
        lines += [f"{k} = {v}" for k, v in self.info.items()]
        return lines


def split_and_normalize(pairs: Sequence[tuple[Stream, Stream]], fractions=(0.7, 0.15, 0.15),
                        chronological: bool = True, seed=0, allow_empty: bool = False) -> Dataset:
    """Split pairs into train/val/test and standardize with training-input statistics."""
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.size != 3 or np.any(fr < 0) or not math.isclose(fr.sum(), 1.0, abs_tol=1e-9):
        raise DataError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    n = len(pairs)
    if chronological:
        order = sorted(range(n), key=lambda i: pairs[i][0].times[0])
    else:
        order = list(np.random.default_rng(seed).permutation(n))
    n_train = int(round(fr[0] * n))
    n_val = int(round(fr[1] * n))
    if fr[2] == 0:
        n_val = n - n_train
    parts = [order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]]
    for name, part, f in zip(("train", "val", "test"), parts, fr):
        if f > 0 and not part and not allow_empty:
            raise DataError(f"the {name} split received zero pairs")
    if not parts[0]:
        raise DataError("the train split received zero pairs")
    xv = np.concatenate([pairs[i][0].values for i in parts[0]], axis=0)
    mean = xv.mean(axis=0)
    std = xv.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)

    def norm(i):
        x, y = pairs[i]
        return (x.with_values((x.values - mean) / std), y.with_values((y.values - mean) / std))

    splits = [[norm(i) for i in part] for part in parts]
    info = {"chronological": chronological, "fractions": ",".join(repr(float(f)) for f in fr)}
    return Dataset(*splits, mean=mean, std=std, info=info)


def leak_free_stride(spec: WindowSpec) -> int:
    """Smallest stride for which no two windows share a timestamp."""
    return spec.x_length + spec.y_length


def ar_dataset(n_pairs: int, spec: WindowSpec, coeffs=DEFAULT_AR_COEFFS, noise_std=1.0,
               fractions=(0.8, 0.1, 0.1), seed=0, burn_in=500) -> Dataset:
    """Simulate an AR series long enough for ``n_pairs`` windows and split it."""
    length = (n_pairs - 1) * spec.stride + spec.x_length + spec.y_length
    series = simulate_ar(coeffs, noise_std, length, burn_in, seed)
    ds = split_and_normalize(make_windows(series, spec), fractions, chronological=True)
    ds.info.update({"source": "ar", "ar_coeffs": ",".join(repr(float(c)) for c in coeffs),
                    "noise_std": noise_std, "series_length": length, "seed": seed,
                    "x_length": spec.x_length, "y_length": spec.y_length, "stride": spec.stride})
    return ds
