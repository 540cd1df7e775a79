"""Truncated tensor algebra T^(N)(R^d).

An element is stored as ``N + 1`` flat coefficient blocks; block ``k`` holds
the ``d**k`` coefficients of the level-``k`` tensor in row-major
(lexicographic multi-index) order.  Level 0 is a single scalar.

The ``levels_*`` helpers operate on plain lists of arrays with arbitrary
leading batch dimensions, shape ``(..., d**k)``.  :class:`TruncTensor` wraps a
single (unbatched) element with validation and arithmetic operators.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NumericalError, ShapeError


def dimension(d: int, depth: int) -> int:
    """Number of coefficients of T^(depth)(R^d), level 0 included."""
    if d < 1 or depth < 0:
        raise ValueError(f"need d >= 1 and depth >= 0, got d={d}, depth={depth}")
    if d == 1:
        return depth + 1
    return (d ** (depth + 1) - 1) // (d - 1)


def feature_dimension(d: int, depth: int) -> int:
    """Number of coefficients of levels 1..depth (level 0 excluded)."""
    return dimension(d, depth) - 1


def level_offsets(d: int, depth: int) -> list[int]:
    """Start offset of each level inside the flat concatenated vector."""
    offsets = [0]
    for k in range(depth + 1):
        offsets.append(offsets[-1] + d**k)
    return offsets


# -- batched level-list kernels ---------------------------------------------


def levels_unit(d: int, depth: int, batch_shape: tuple[int, ...] = ()) -> list[np.ndarray]:
    out = [np.zeros(batch_shape + (d**k,)) for k in range(depth + 1)]
    out[0][...] = 1.0
    return out


def levels_mul(a: Sequence[np.ndarray], b: Sequence[np.ndarray], d: int) -> list[np.ndarray]:
    """Truncated tensor product of two batched level lists of equal depth."""
    depth = len(a) - 1
    out = []
    for k in range(depth + 1):
        acc = a[0] * b[k] if k else a[0] * b[0]
        for i in range(1, k + 1):
            j = k - i
            outer = a[i][..., :, None] * b[j][..., None, :]
            acc = acc + outer.reshape(outer.shape[:-2] + (d**k,))
        out.append(acc)
    return out


def levels_exp(v: np.ndarray, depth: int) -> list[np.ndarray]:
    """Tensor exponential of a batched vector ``v`` of shape (..., d)."""
    d = v.shape[-1]
    out = levels_unit(d, depth, v.shape[:-1])
    for k in range(1, depth + 1):
        prod = out[k - 1][..., :, None] * v[..., None, :]
        out[k] = prod.reshape(v.shape[:-1] + (d**k,)) / k
    return out


def levels_mul_vjp(
    a: Sequence[np.ndarray], b: Sequence[np.ndarray], cot: Sequence[np.ndarray], d: int
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Cotangents of ``levels_mul(a, b)`` with respect to ``a`` and ``b``.

    Level-0 cotangents are included for completeness; callers that hold level 0
    fixed at 1 simply ignore them.
    """
    depth = len(a) - 1
    abar = [np.zeros_like(x) for x in a]
    bbar = [np.zeros_like(x) for x in b]
    for k in range(depth + 1):
        g = cot[k]
        for i in range(k + 1):
            j = k - i
            gm = g.reshape(g.shape[:-1] + (d**i, d**j))
            abar[i] += np.einsum("...ij,...j->...i", gm, b[j])
            bbar[j] += np.einsum("...ij,...i->...j", gm, a[i])
    return abar, bbar


def levels_exp_vjp(v: np.ndarray, levels: Sequence[np.ndarray], cot: Sequence[np.ndarray]) -> np.ndarray:
    """Cotangent of ``levels_exp(v)`` with respect to ``v``."""
    d = v.shape[-1]
    depth = len(levels) - 1
    run = [c.copy() for c in cot]
    vbar = np.zeros_like(v)
    for k in range(depth, 0, -1):
        gm = run[k].reshape(run[k].shape[:-1] + (d ** (k - 1), d)) / k
        run[k - 1] += np.einsum("...ij,...j->...i", gm, v)
        vbar += np.einsum("...ij,...i->...j", gm, levels[k - 1])
    return vbar


def levels_flatten(levels: Sequence[np.ndarray], start: int = 0) -> np.ndarray:
    return np.concatenate([np.asarray(x) for x in levels[start:]], axis=-1)


def levels_split(flat: np.ndarray, d: int, depth: int, start: int = 0) -> list[np.ndarray]:
    offs = level_offsets(d, depth)
    base = offs[start]
    return [flat[..., offs[k] - base : offs[k + 1] - base] for k in range(start, depth + 1)]


# -- single-element wrapper -------------------------------------------------


@dataclass(frozen=True, eq=False)
class TruncTensor:
    """An element of T^(depth)(R^d) with coefficients in float64."""

    d: int
    depth: int
    levels: tuple[np.ndarray, ...]

    def __post_init__(self):
        if self.d < 1 or self.depth < 0:
            raise ShapeError(f"invalid shape d={self.d}, depth={self.depth}")
        if len(self.levels) != self.depth + 1:
            raise ShapeError(f"expected {self.depth + 1} levels, got {len(self.levels)}")
        frozen = []
        for k, block in enumerate(self.levels):
            arr = np.array(block, dtype=np.float64).reshape(-1)
            if arr.size != self.d**k:
                raise ShapeError(f"level {k} must have {self.d ** k} entries, got {arr.size}")
            if not np.all(np.isfinite(arr)):
                raise NumericalError(f"level {k} has non-finite entries")
            arr.setflags(write=False)
            frozen.append(arr)
        object.__setattr__(self, "levels", tuple(frozen))

    @classmethod
    def zeros(cls, d: int, depth: int) -> "TruncTensor":
        return cls(d, depth, tuple(np.zeros(d**k) for k in range(depth + 1)))

    @classmethod
    def unit(cls, d: int, depth: int) -> "TruncTensor":
        return cls(d, depth, tuple(levels_unit(d, depth)))

    @classmethod
    def from_vector(cls, flat, d: int, depth: int, include_level0: bool = True) -> "TruncTensor":
        """Build from a flat vector; without level 0 the scalar term is set to 1."""
        flat = np.asarray(flat, dtype=np.float64)
        if include_level0:
            if flat.size != dimension(d, depth):
                raise ShapeError(f"expected {dimension(d, depth)} coefficients, got {flat.size}")
            return cls(d, depth, tuple(levels_split(flat, d, depth)))
        if flat.size != feature_dimension(d, depth):
            raise ShapeError(f"expected {feature_dimension(d, depth)} coefficients, got {flat.size}")
        return cls(d, depth, (np.ones(1),) + tuple(levels_split(flat, d, depth, start=1)))

    def to_vector(self, include_level0: bool = True) -> np.ndarray:
        return levels_flatten(self.levels, 0 if include_level0 else 1)

    @property
    def size(self) -> int:
        return sum(block.size for block in self.levels)

    def level(self, k: int) -> np.ndarray:
        """Level ``k`` reshaped to a k-dimensional array of side ``d``."""
        return self.levels[k].reshape((self.d,) * k)

    def _check(self, other: "TruncTensor"):
        if not isinstance(other, TruncTensor):
            raise TypeError(f"expected TruncTensor, got {type(other).__name__}")
        if (self.d, self.depth) != (other.d, other.depth):
            raise ShapeError(
                f"shape mismatch: (d={self.d}, N={self.depth}) vs (d={other.d}, N={other.depth})"
            )

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, c):
        return scale(self, c)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return tensor_product(self, other)

    def allclose(self, other: "TruncTensor", atol: float = 1e-12) -> bool:
        self._check(other)
        return bool(np.allclose(self.to_vector(), other.to_vector(), rtol=0.0, atol=atol))

    def __repr__(self):
        return f"TruncTensor(d={self.d}, depth={self.depth}, norm={l2_norm(self):.6g})"


def tensor_product(a: TruncTensor, b: TruncTensor) -> TruncTensor:
    a._check(b)
    return TruncTensor(a.d, a.depth, tuple(levels_mul(a.levels, b.levels, a.d)))


def tensor_exp(v, depth: int) -> TruncTensor:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise NumericalError("tensor_exp of a non-finite vector")
    return TruncTensor(v.size, depth, tuple(levels_exp(v, depth)))


def add(a: TruncTensor, b: TruncTensor) -> TruncTensor:
    a._check(b)
    return TruncTensor(a.d, a.depth, tuple(x + y for x, y in zip(a.levels, b.levels)))


def scale(a: TruncTensor, c: float) -> TruncTensor:
    return TruncTensor(a.d, a.depth, tuple(x * c for x in a.levels))


def l2_norm(a: TruncTensor) -> float:
    """Euclidean norm over levels 1..N; level 0 never contributes."""
    return float(np.sqrt(sum(np.dot(block, block) for block in a.levels[1:])))
