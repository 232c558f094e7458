"""Uniform tensor-product grids on axis-aligned boxes."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class StructuredGrid:
    """Node lattice of the box ``prod([lows[i], highs[i]])``.

    Node arrays use ``indexing="ij"`` so axis ``i`` of every field array is
    coordinate ``x_i``; flat node indices follow C order of ``shape``.
    """

    lows: tuple[float, ...]
    highs: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        lows = tuple(float(v) for v in self.lows)
        highs = tuple(float(v) for v in self.highs)
        counts = tuple(int(c) for c in self.counts)
        if not (len(lows) == len(highs) == len(counts)):
            raise ParameterError("lows, highs and counts must have equal length")
        if len(counts) not in (2, 3):
            raise ParameterError(f"grid dimension must be 2 or 3, got {len(counts)}")
        if any(c < 3 for c in counts):
            raise ParameterError(f"need at least 3 nodes per axis, got {counts}")
        if any(not hi > lo for lo, hi in zip(lows, highs)):
            raise ParameterError("every axis needs highs > lows")
        object.__setattr__(self, "lows", lows)
        object.__setattr__(self, "highs", highs)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def square(cls, low, high, count, dim=2):
        return cls((low,) * dim, (high,) * dim, (count,) * dim)

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @cached_property
    def spacing(self) -> np.ndarray:
        lo, hi, n = map(np.asarray, (self.lows, self.highs, self.counts))
        return (hi - lo) / (n - 1)

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(
            np.linspace(lo, hi, n) for lo, hi, n in zip(self.lows, self.highs, self.counts)
        )

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates as an ``(size, dim)`` array in flat order."""
        return np.stack([c.ravel() for c in self.coords], axis=1)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for axis in range(self.dim):
            index = [slice(None)] * self.dim
            index[axis] = 0
            mask[tuple(index)] = True
            index[axis] = -1
            mask[tuple(index)] = True
        return mask

    @property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.highs, self.lows)))

    def refined(self, factor=2) -> StructuredGrid:
        """Same box with spacing divided by ``factor`` (nodes are nested)."""
        counts = tuple((n - 1) * factor + 1 for n in self.counts)
        return StructuredGrid(self.lows, self.highs, counts)

    def evaluate(self, func) -> np.ndarray:
        """Sample ``func(*coords)`` on the node arrays."""
        return np.asarray(func(*self.coords), dtype=float) * np.ones(self.shape)

    def to_dict(self) -> dict:
        return {"lows": list(self.lows), "highs": list(self.highs), "counts": list(self.counts)}
