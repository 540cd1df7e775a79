"""Streams, stream augmentations and truncated signatures of piecewise-linear paths.

A discrete stream is identified with its piecewise-linear interpolant, so the
signature is the ordered tensor product of the exponentials of its
increments.  Everything here also has a batched array form (leading batch
axes on the values, a shared time grid) which the training loss
differentiates through with :func:`path_signature_vjp`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError, NumericalError, ShapeError
from .tensoralg import (
    TruncTensor,
    feature_dimension,
    levels_exp,
    levels_exp_vjp,
    levels_flatten,
    levels_mul,
    levels_mul_vjp,
    levels_split,
    levels_unit,
)


@dataclass(frozen=True, eq=False)
class Stream:
    """Timestamped multichannel observations.

    ``times`` has shape (L,) and is strictly increasing; ``values`` has shape
    (L, c).
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=np.float64).reshape(-1)
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != t.size:
            raise ShapeError(f"values shape {v.shape} does not match {t.size} timestamps")
        if t.size == 0:
            raise DataError("a stream needs at least one observation")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise DataError("stream contains non-finite entries")
        if np.any(np.diff(t) <= 0):
            bad = int(np.argmax(np.diff(t) <= 0)) + 1
            raise DataError(f"timestamps must be strictly increasing (row {bad})")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def length(self) -> int:
        return self.times.size

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.length

    def with_values(self, values) -> "Stream":
        return Stream(self.times, values)

    def __repr__(self):
        return f"Stream(length={self.length}, channels={self.channels}, t=[{self.times[0]:g}..{self.times[-1]:g}])"


@dataclass(frozen=True)
class AugmentOptions:
    basepoint: bool = False
    time: bool = False
    cumsum: bool = False

    def channels_out(self, c: int) -> int:
        return c * (1 + int(self.cumsum)) + int(self.time)

    def length_out(self, length: int) -> int:
        return length + int(self.basepoint)


ALL_AUGMENTATIONS = AugmentOptions(basepoint=True, time=True, cumsum=True)


def augment_arrays(times: np.ndarray, values: np.ndarray, opts: AugmentOptions):
    """Array form of :func:`augment`; ``values`` may carry leading batch axes.

    Order is fixed: cumsum channels appended, then the time channel, then the
    all-zero basepoint row prepended one time step before the first stamp.
    """
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    batch = values.shape[:-2]
    parts = [values]
    if opts.cumsum:
        parts.append(np.cumsum(values, axis=-2))
    if opts.time:
        parts.append(np.broadcast_to(times[:, None], batch + (times.size, 1)))
    out = np.concatenate(parts, axis=-1) if len(parts) > 1 else values
    if opts.basepoint:
        dt = times[1] - times[0] if times.size > 1 else 1.0
        times = np.concatenate([[times[0] - dt], times])
        zero = np.zeros(batch + (1, out.shape[-1]))
        out = np.concatenate([zero, out], axis=-2)
    return times, out


def augment_values_vjp(cot: np.ndarray, c: int, opts: AugmentOptions) -> np.ndarray:
    """Pull a cotangent on the augmented values back to the original values."""
    if opts.basepoint:
        cot = cot[..., 1:, :]
    grad = cot[..., :c].copy()
    if opts.cumsum:
        # adjoint of a running sum is a reversed running sum
        grad += np.flip(np.cumsum(np.flip(cot[..., c : 2 * c], axis=-2), axis=-2), axis=-2)
    return grad


def augment(s: Stream, basepoint: bool = False, time: bool = False, cumsum: bool = False) -> Stream:
    opts = AugmentOptions(basepoint, time, cumsum)
    if not (basepoint or time or cumsum):
        return s
    t, v = augment_arrays(s.times, s.values, opts)
    return Stream(t, v)


def path_signature_levels(path: np.ndarray, depth: int, keep_prefixes: bool = False):
    """Truncated signature of batched piecewise-linear paths.

    ``path`` has shape (..., L, d).  Returns the level list, and when
    ``keep_prefixes`` is set also the increments and running products needed
    by :func:`path_signature_vjp`.
    """
    path = np.asarray(path, dtype=np.float64)
    if path.shape[-2] < 2:
        raise ShapeError(f"signature needs at least 2 points, got {path.shape[-2]}")
    d = path.shape[-1]
    inc = np.diff(path, axis=-2)
    run = levels_unit(d, depth, path.shape[:-2])
    prefixes = [run] if keep_prefixes else None
    for i in range(inc.shape[-2]):
        run = levels_mul(run, levels_exp(inc[..., i, :], depth), d)
        if keep_prefixes:
            prefixes.append(run)
    if keep_prefixes:
        return run, (inc, prefixes)
    return run


def path_signature_vjp(saved, cot_levels: Sequence[np.ndarray]) -> np.ndarray:
    """Cotangent on the path points given a cotangent on the signature levels."""
    inc, prefixes = saved
    depth = len(prefixes[0]) - 1
    d = inc.shape[-1]
    n = inc.shape[-2]
    cot = [np.array(c, dtype=np.float64) for c in cot_levels]
    path_bar = np.zeros(inc.shape[:-2] + (n + 1, d))
    for i in range(n - 1, -1, -1):
        seg = levels_exp(inc[..., i, :], depth)
        cot, seg_bar = levels_mul_vjp(prefixes[i], seg, cot, d)
        vbar = levels_exp_vjp(inc[..., i, :], seg, seg_bar)
        path_bar[..., i + 1, :] += vbar
        path_bar[..., i, :] -= vbar
    return path_bar


def signature(s: Stream, depth: int) -> TruncTensor:
    if depth < 1:
        raise ValueError(f"signature depth must be >= 1, got {depth}")
    if s.length < 2:
        raise ShapeError(f"signature needs at least 2 points, got {s.length}")
    levels = path_signature_levels(s.values, depth)
    return TruncTensor(s.channels, depth, tuple(levels))


def batch_signature(streams: Sequence[Stream], depth: int) -> list[TruncTensor]:
    out = []
    for i, s in enumerate(streams):
        try:
            out.append(signature(s, depth))
        except (ShapeError, NumericalError, DataError) as exc:
            raise type(exc)(f"item {i}: {exc}") from exc
    return out


def one_variation(s: Stream) -> float:
    """Sum of Euclidean segment lengths of the piecewise-linear path."""
    return float(np.linalg.norm(np.diff(s.values, axis=0), axis=1).sum())


def concat(a: Stream, b: Stream) -> Stream:
    """Join two streams that share an endpoint (b's first point is dropped)."""
    if not np.allclose(a.values[-1], b.values[0]):
        raise DataError("streams do not share an endpoint")
    shift = a.times[-1] - b.times[0]
    return Stream(np.concatenate([a.times, b.times[1:] + shift]), np.concatenate([a.values, b.values[1:]]))


@dataclass(frozen=True)
class FeatureSpec:
    """How a stream becomes a signature feature vector (levels 1..depth).

    With ``rebase_time`` the timestamps of each stream are mapped affinely onto
    [0, 1] before augmentation, so the time channel encodes position inside
    the window rather than absolute calendar time.
    """

    depth: int
    augment: AugmentOptions = ALL_AUGMENTATIONS
    rebase_time: bool = True

    def channels_out(self, c: int) -> int:
        return self.augment.channels_out(c)

    def dim(self, c: int) -> int:
        return feature_dimension(self.channels_out(c), self.depth)

    def prepare_times(self, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=np.float64)
        if not self.rebase_time:
            return times
        if times.size < 2:
            return times - times[0]
        return (times - times[0]) / (times[-1] - times[0])

    def path(self, times, values) -> np.ndarray:
        _, aug = augment_arrays(self.prepare_times(times), values, self.augment)
        return aug

    def transform_arrays(self, times, values, keep_tape: bool = False):
        """Features of batched values (..., L, c) sharing one time grid."""
        aug = self.path(times, values)
        if keep_tape:
            levels, saved = path_signature_levels(aug, self.depth, keep_prefixes=True)
            return levels_flatten(levels, 1), saved
        return levels_flatten(path_signature_levels(aug, self.depth), 1)

    def transform_arrays_vjp(self, saved, cot_features: np.ndarray, c: int) -> np.ndarray:
        d = self.channels_out(c)
        cot = levels_split(cot_features, d, self.depth, start=1)
        cot = [np.zeros(cot_features.shape[:-1] + (1,))] + cot
        path_bar = path_signature_vjp(saved, cot)
        return augment_values_vjp(path_bar, c, self.augment)

    def transform(self, s: Stream) -> np.ndarray:
        return self.transform_arrays(s.times, s.values)

    def transform_many(self, streams: Sequence[Stream]) -> np.ndarray:
        """Feature matrix for many streams; equal-length streams are batched."""
        if not streams:
            raise DataError("no streams to featurize")
        c = streams[0].channels
        out = np.empty((len(streams), self.dim(c)))
        groups: dict[int, list[int]] = {}
        for i, s in enumerate(streams):
            if s.channels != c:
                raise ShapeError(f"item {i}: {s.channels} channels, expected {c}")
            groups.setdefault(s.length, []).append(i)
        for idx in groups.values():
            times = np.stack([self.prepare_times(streams[i].times) for i in idx])
            if np.all(times == times[0]):
                vals = np.stack([streams[i].values for i in idx])
                out[idx] = self.transform_arrays(streams[idx[0]].times, vals)
            else:
                for i in idx:
                    out[i] = self.transform(streams[i])
        return out
