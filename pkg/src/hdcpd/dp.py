"""Penalised minimal-partition search with Lasso segment losses.

The Bellman recursion runs over candidate endpoints ``{0, q, 2q, ...} + {n}``:

    B(0) = 0
    B(e) = min_{s < e admissible} B(s) + L((s, e]) + gamma

so that ``B(n) = sum_I L(I) + gamma * |P|``, every interval charged once.
Segment losses are computed once per interval and kept in a
:class:`LossCache`; the same cache serves every ``gamma`` for a fixed Lasso
configuration.
"""
from __future__ import annotations

import logging
import math
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .core import (ChangePointSet, Dataset, IntegerInterval, Partition,
                   ValidationError, partition_to_changepoints)
from .lasso import (LassoConfig, LassoFit, fit_lasso, gram_rss, penalty_scale,
                    solve_gram)

log = logging.getLogger(__name__)

_TIE_RTOL = 1e-10


@dataclass(frozen=True)
class DpConfig:
    gamma: float
    lasso: LassoConfig
    min_seg_len: int = 2
    stride: int = 1
    warm_start: bool = True

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValidationError(f"gamma must be >= 0, got {self.gamma}")
        if self.min_seg_len < 1:
            raise ValidationError("min_seg_len must be >= 1")
        if self.stride < 1:
            raise ValidationError("stride must be >= 1")


class LossCache:
    """Interval -> (loss, LassoFit), safe for concurrent insert-or-get."""

    def __init__(self):
        self._store: dict[IntegerInterval, tuple[float, LassoFit]] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self):
        return len(self._store)

    def __contains__(self, interval):
        return interval in self._store

    def get(self, interval):
        with self._lock:
            hit = self._store.get(interval)
            if hit is not None:
                self.hits += 1
            return hit

    def put(self, interval, loss: float, fit: LassoFit):
        with self._lock:
            # first writer wins; values are deterministic so races are benign
            return self._store.setdefault(interval, (loss, fit))

    def get_or_compute(self, interval, compute: Callable[[], tuple[float, LassoFit]]):
        hit = self.get(interval)
        if hit is not None:
            return hit
        loss, fit = compute()
        with self._lock:
            self.misses += 1
        return self.put(interval, loss, fit)

    def items(self):
        with self._lock:
            return list(self._store.items())

    def stats(self) -> dict:
        return {"entries": len(self._store), "hits": self.hits, "misses": self.misses}


def segment_loss(data: Dataset, interval: IntegerInterval, cfg: LassoConfig,
                 cache: LossCache | None = None) -> float:
    """Residual sum of squares of the interval's Lasso fit (penalty excluded)."""
    def compute():
        fit = fit_lasso(data, interval, cfg)
        return fit.rss, fit

    if cache is None:
        return compute()[0]
    return cache.get_or_compute(interval, compute)[0]


def candidate_points(n: int, stride: int) -> list[int]:
    pts = list(range(0, n, stride))
    if pts[-1] != n:
        pts.append(n)
    return pts


@dataclass
class LossTable:
    """All admissible segment losses for one dataset and Lasso config."""

    n: int
    points: list[int]
    min_seg_len: int
    cache: LossCache
    nonconverged: int = 0
    max_kkt: float = 0.0
    build_seconds: float = 0.0

    def loss(self, s: int, e: int) -> float:
        return self.cache.get(IntegerInterval(s, e))[0]

    def fit(self, s: int, e: int) -> LassoFit:
        return self.cache.get(IntegerInterval(s, e))[1]

    def admissible(self, s: int, e: int) -> bool:
        return e - s >= self.min_seg_len or (s == 0 and e == self.n)


def build_loss_table(data: Dataset, lasso: LassoConfig, min_seg_len: int = 2,
                     stride: int = 1, warm_start: bool = True,
                     cache: LossCache | None = None) -> LossTable:
    """Fit every admissible interval between candidate points.

    For each left end ``s`` the Gram statistics grow one block at a time and
    the fit on ``(s, e]`` starts from the fit on the previous admissible
    ``(s, e']``.
    """
    t0 = time.perf_counter()
    n, p = data.n, data.p
    X, y = data.X, data.y
    pts = candidate_points(n, stride)
    cache = LossCache() if cache is None else cache
    table = LossTable(n=n, points=pts, min_seg_len=min_seg_len, cache=cache)
    for i, s in enumerate(pts[:-1]):
        G = np.zeros((p, p))
        c = np.zeros(p)
        yy = 0.0
        prev = None
        last = s
        for e in pts[i + 1:]:
            Xb, yb = X[last:e], y[last:e]
            G += Xb.T @ Xb
            c += Xb.T @ yb
            yy += float(yb @ yb)
            last = e
            if not table.admissible(s, e):
                continue
            iv = IntegerInterval(s, e)
            hit = cache.get(iv)
            if hit is not None:
                prev = hit[1].beta
                continue
            scale = penalty_scale(e - s, n, p)
            mu = lasso.lam * scale
            beta0 = prev if (warm_start and prev is not None) else None
            beta, sweeps, conv, kkt = solve_gram(G, c, mu, lasso.tol, lasso.max_sweeps, beta0)
            rss = gram_rss(G, c, yy, beta)
            fit = LassoFit(beta=beta, objective=rss + mu * float(np.abs(beta).sum()),
                           scale=scale, converged=conv, sweeps_used=sweeps,
                           kkt_violation=kkt, rss=rss)
            cache.put(iv, rss, fit)
            cache.misses += 1
            if not conv:
                table.nonconverged += 1
            table.max_kkt = max(table.max_kkt, kkt)
            prev = beta
    table.build_seconds = time.perf_counter() - t0
    if table.nonconverged:
        log.warning("%d segment fits did not converge", table.nonconverged)
    return table


@dataclass
class DpResult:
    partition: Partition
    objective: float
    prefix_objective: dict[int, float]
    diagnostics: dict = field(default_factory=dict)

    @property
    def changepoints(self) -> ChangePointSet:
        return partition_to_changepoints(self.partition)


def bellman(table: LossTable, gamma: float) -> DpResult:
    """Solve the recursion on a precomputed loss table.

    Among (numerically) tied optima the partition with fewest intervals wins,
    then the lexicographically smallest change-point list.
    """
    pts = table.points
    m = len(pts)
    B = [math.inf] * m
    K = [0] * m
    cps: list[tuple] = [()] * m
    back = [-1] * m
    B[0] = 0.0
    for j in range(1, m):
        e = pts[j]
        best, best_key, best_i = math.inf, None, -1
        for i in range(j):
            s = pts[i]
            if B[i] == math.inf or not table.admissible(s, e):
                continue
            val = B[i] + table.loss(s, e) + gamma
            key = (K[i] + 1, cps[i] + ((s + 1,) if s > 0 else ()))
            if best_i < 0 or val < best - _TIE_RTOL * max(1.0, abs(best)):
                best, best_key, best_i = val, key, i
            elif abs(val - best) <= _TIE_RTOL * max(1.0, abs(best)) and key < best_key:
                best, best_key, best_i = min(val, best), key, i
        if best_i >= 0:
            B[j], K[j], cps[j], back[j] = best, best_key[0], best_key[1], best_i
    if B[-1] == math.inf:
        raise ValidationError("no admissible partition")
    bounds = [m - 1]
    while bounds[-1] != 0:
        bounds.append(back[bounds[-1]])
    bounds = [pts[b] for b in reversed(bounds)]
    part = Partition.from_bounds(bounds)
    prefix = {pts[j]: B[j] for j in range(m) if B[j] < math.inf}
    return DpResult(part, B[-1], prefix)


def run_dp(data: Dataset, cfg: DpConfig, table: LossTable | None = None) -> DpResult:
    t0 = time.perf_counter()
    if table is None:
        table = build_loss_table(data, cfg.lasso, cfg.min_seg_len, cfg.stride, cfg.warm_start)
    res = bellman(table, cfg.gamma)
    res.diagnostics = {
        "nonconverged_fits": table.nonconverged,
        "max_kkt": table.max_kkt,
        "cache": table.cache.stats(),
        "loss_table_seconds": table.build_seconds,
        "wall_seconds": time.perf_counter() - t0,
    }
    return res


def dp_partition(data: Dataset, cfg: DpConfig) -> tuple[Partition, float]:
    res = run_dp(data, cfg)
    return res.partition, res.objective


def detect(data: Dataset, cfg: DpConfig) -> ChangePointSet:
    return run_dp(data, cfg).changepoints


def partition_objective(data: Dataset, part: Partition, gamma: float, lasso: LassoConfig,
                        cache: LossCache | None = None) -> float:
    """Evaluate ``sum_I L(I) + gamma |P|`` for a given partition."""
    return sum(segment_loss(data, iv, lasso, cache) for iv in part) + gamma * len(part)


def with_gamma(cfg: DpConfig, gamma: float) -> DpConfig:
    return replace(cfg, gamma=gamma)
