"""Shared domain types: datasets, integer intervals, partitions, change points.

Time indices are 1-based. An interval ``(s, e]`` holds the points
``s + 1, ..., e``; a change point is the first index of a new regime.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when a domain object would violate its invariants."""


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float, copy=True)
        y = np.array(self.y, dtype=float, copy=True).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise ValidationError("X must be a 2-d array")
        if X.shape[0] != y.shape[0]:
            raise ValidationError(
                f"X has {X.shape[0]} rows but y has length {y.shape[0]}")
        if X.shape[0] < 2 or X.shape[1] < 1:
            raise ValidationError("need n >= 2 and p >= 1")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValidationError("non-finite entries in X or y")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def rows(self, interval: "IntegerInterval"):
        """Return ``(X_I, y_I)`` for the points of ``interval``."""
        return self.X[interval.s:interval.e], self.y[interval.s:interval.e]

    def subset(self, index: np.ndarray) -> "Dataset":
        """Rows selected by a 0-based index array."""
        return Dataset(self.X[index], self.y[index])


@dataclass(frozen=True, order=True)
class IntegerInterval:
    """The integer interval ``(s, e] = {s+1, ..., e}``."""

    s: int
    e: int

    def __post_init__(self):
        if int(self.s) != self.s or int(self.e) != self.e:
            raise ValidationError("interval endpoints must be integers")
        object.__setattr__(self, "s", int(self.s))
        object.__setattr__(self, "e", int(self.e))
        if not 0 <= self.s < self.e:
            raise ValidationError(f"invalid interval ({self.s}, {self.e}]")

    def __len__(self) -> int:
        return self.e - self.s

    def __contains__(self, t) -> bool:
        return self.s < t <= self.e

    def check_within(self, n: int) -> None:
        if self.e > n:
            raise ValidationError(f"interval ({self.s}, {self.e}] exceeds n={n}")


@dataclass(frozen=True)
class Partition:
    intervals: tuple[IntegerInterval, ...]

    def __post_init__(self):
        ivs = tuple(self.intervals)
        if not ivs:
            raise ValidationError("a partition needs at least one interval")
        if ivs[0].s != 0:
            raise ValidationError("first interval must start at s = 0")
        for a, b in zip(ivs, ivs[1:]):
            if a.e != b.s:
                raise ValidationError(f"gap or overlap between {a} and {b}")
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def from_bounds(cls, bounds: Sequence[int]) -> "Partition":
        """Build from ``0 = b_0 < b_1 < ... < b_m = n``."""
        return cls(tuple(IntegerInterval(a, b) for a, b in zip(bounds, bounds[1:])))

    @property
    def n(self) -> int:
        return self.intervals[-1].e

    @property
    def bounds(self) -> list[int]:
        return [self.intervals[0].s] + [iv.e for iv in self.intervals]

    def __len__(self) -> int:
        return len(self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    def locate(self, t: int) -> int:
        """Index of the interval containing 1-based time ``t``."""
        b = np.asarray(self.bounds)
        k = int(np.searchsorted(b, t, side="left")) - 1
        if k < 0 or k >= len(self.intervals):
            raise ValidationError(f"time {t} outside (0, {self.n}]")
        return k


@dataclass(frozen=True)
class ChangePointSet:
    locations: tuple[int, ...] = field(default_factory=tuple)
    n: int | None = field(default=None, compare=False)

    def __post_init__(self):
        locs = tuple(int(v) for v in self.locations)
        if any(b <= a for a, b in zip(locs, locs[1:])):
            raise ValidationError(f"change points not strictly increasing: {locs}")
        if locs and locs[0] < 2:
            raise ValidationError("change points must be >= 2")
        if self.n is not None and locs and locs[-1] > self.n:
            raise ValidationError(f"change point {locs[-1]} exceeds n={self.n}")
        object.__setattr__(self, "locations", locs)

    @property
    def k_hat(self) -> int:
        return len(self.locations)

    def __len__(self) -> int:
        return len(self.locations)

    def __iter__(self):
        return iter(self.locations)

    def as_list(self) -> list[int]:
        return list(self.locations)


def partition_to_changepoints(part: Partition) -> ChangePointSet:
    """Left endpoints of every interval but the first."""
    return ChangePointSet(tuple(iv.s + 1 for iv in part.intervals[1:]), n=part.n)


def changepoints_to_partition(cps: ChangePointSet | Iterable[int], n: int) -> Partition:
    locs = cps.locations if isinstance(cps, ChangePointSet) else tuple(cps)
    cps = ChangePointSet(locs, n=n)
    bounds = [0] + [c - 1 for c in cps.locations] + [n]
    return Partition.from_bounds(bounds)
