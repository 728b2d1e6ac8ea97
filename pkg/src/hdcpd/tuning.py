"""Odd/even cross-validation for the DP and DP + refinement pipelines.

Odd time points (1, 3, 5, ...) form the training series and even points the
validation series. A training change point at training index ``j`` maps to
full index ``2j - 1``; a training segment ``(s, e]`` covers the full
interval ``(2s, 2e]`` (clamped to ``n``), which keeps every even point inside
exactly one segment.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (ChangePointSet, Dataset, Partition,
                   ValidationError, changepoints_to_partition,
                   partition_to_changepoints)
from .dp import DpConfig, LossTable, bellman, build_loss_table, run_dp
from .lasso import LassoConfig, penalty_scale, solve_gram
from .refine import RefineConfig, local_refine

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TuningGrid:
    lambdas: tuple[float, ...]
    gammas: tuple[float, ...]
    zetas: tuple[float, ...] | None = None

    def __post_init__(self):
        for name in ("lambdas", "gammas", "zetas"):
            vals = getattr(self, name)
            if vals is None:
                if name != "zetas":
                    raise ValidationError(f"{name} is required")
                continue
            vals = tuple(float(v) for v in vals)
            if not vals or any(not v >= 0 for v in vals):
                raise ValidationError(f"{name} must be a non-empty list of values >= 0")
            object.__setattr__(self, name, vals)

    @classmethod
    def default(cls, n: int, p: int, refine: bool = False) -> "TuningGrid":
        """Grids anchored on sqrt(log(n v p)) for the penalties and log(n v p) for gamma."""
        L = math.log(max(n, p))
        return cls(
            lambdas=tuple(f * math.sqrt(L) for f in (0.5, 1, 2, 4, 8)),
            gammas=tuple(f * L for f in (0.5, 1, 2, 4, 8, 16)),
            zetas=tuple(f * math.sqrt(L) for f in (0.5, 1, 2, 4)) if refine else None,
        )


@dataclass(frozen=True)
class IndexMaps:
    n: int

    @property
    def n_train(self) -> int:
        return (self.n + 1) // 2

    @property
    def n_valid(self) -> int:
        return self.n // 2

    @staticmethod
    def train_to_full(j: int) -> int:
        return 2 * j - 1

    @staticmethod
    def valid_to_full(j: int) -> int:
        return 2 * j

    @staticmethod
    def full_to_train(t: int) -> int:
        if t % 2 != 1:
            raise ValidationError(f"full index {t} is not a training point")
        return (t + 1) // 2

    @staticmethod
    def full_to_valid(t: int) -> int:
        if t % 2 != 0:
            raise ValidationError(f"full index {t} is not a validation point")
        return t // 2

    def partition_to_full(self, part: Partition) -> Partition:
        bounds = [min(2 * b, self.n) for b in part.bounds]
        return Partition.from_bounds(bounds)

    def changepoints_to_full(self, cps) -> ChangePointSet:
        return ChangePointSet(tuple(self.train_to_full(j) for j in cps), n=self.n)

    def changepoints_to_train(self, cps) -> ChangePointSet:
        """First training index on or after each full-timeline change point."""
        return ChangePointSet(tuple(c // 2 + 1 for c in cps), n=self.n_train)


def split_odd_even(data: Dataset):
    if data.n < 4:
        raise ValidationError("cross-validation needs n >= 4")
    train = Dataset(data.X[0::2], data.y[0::2])
    valid = Dataset(data.X[1::2], data.y[1::2])
    return train, valid, IndexMaps(data.n)


def validation_loss(valid: Dataset, segment_betas, full_index=None) -> float:
    """Mean squared prediction error over the validation rows.

    ``segment_betas`` pairs full-timeline intervals with coefficient vectors;
    validation row ``j`` (1-based) sits at full time ``full_index[j-1]``,
    ``2j`` by default.
    """
    segs = sorted(((iv, np.asarray(b, dtype=float)) for iv, b in segment_betas),
                  key=lambda sb: sb[0].s)
    starts = np.array([iv.s for iv, _ in segs])
    ends = np.array([iv.e for iv, _ in segs])
    t = (np.arange(1, valid.n + 1) * 2 if full_index is None
         else np.asarray(full_index))
    k = np.searchsorted(starts, t, side="left") - 1
    if np.any(k < 0) or np.any(t > ends[np.clip(k, 0, None)]):
        raise ValidationError("validation point outside every segment")
    B = np.stack([b for _, b in segs])
    yhat = np.einsum("ij,ij->i", valid.X, B[k])
    return float(np.mean((yhat - valid.y) ** 2))


@dataclass
class CvResult:
    best: tuple[float, ...]
    table: dict[tuple[float, ...], float]
    train_changepoints: ChangePointSet
    param_names: tuple[str, ...]
    diagnostics: dict = field(default_factory=dict)
    changepoints_by_tuple: dict[tuple[float, ...], list[int]] = field(default_factory=dict)

    @property
    def best_params(self) -> dict[str, float]:
        return dict(zip(self.param_names, self.best))

    def rows(self) -> list[dict]:
        return [dict(zip(self.param_names, k)) | {"validation_loss": v,
                                                  "changepoints": self.changepoints_by_tuple.get(k)}
                for k, v in sorted(self.table.items())]


def _select(table):
    return min(table, key=lambda k: (table[k], k))


def refit_segments(data: Dataset, part: Partition, penalty, tol: float = 1e-8,
                   max_sweeps: int = 10000) -> list[np.ndarray]:
    """Lasso fit per interval; ``penalty(len)`` gives the l1 weight."""
    out = []
    for iv in part:
        X, y = data.rows(iv)
        beta, *_ = solve_gram(X.T @ X, X.T @ y, penalty(len(iv)), tol, max_sweeps)
        out.append(beta)
    return out


def _table_betas(table: LossTable, part: Partition):
    return [table.fit(iv.s, iv.e).beta for iv in part]


def cross_validate_dp(data: Dataset, grid: TuningGrid, min_seg_len: int = 2, stride: int = 1,
                      lasso_tol: float = 1e-8, max_sweeps: int = 10000) -> CvResult:
    train, valid, maps = split_odd_even(data)
    table, cps_by = {}, {}
    nonconv = 0
    for lam in grid.lambdas:
        lt = build_loss_table(train, LassoConfig(lam, lasso_tol, max_sweeps), min_seg_len, stride)
        nonconv += lt.nonconverged
        for gamma in grid.gammas:
            part = bellman(lt, gamma).partition
            full = maps.partition_to_full(part)
            key = (lam, gamma)
            table[key] = validation_loss(valid, zip(full, _table_betas(lt, part)))
            cps_by[key] = maps.changepoints_to_full(partition_to_changepoints(part)).as_list()
    best = _select(table)
    return CvResult(best, table, ChangePointSet(tuple(cps_by[best]), n=data.n),
                    ("lambda", "gamma"), {"nonconverged_fits": nonconv}, cps_by)


def cross_validate_refined(data: Dataset, grid: TuningGrid, min_seg_len: int = 2,
                           stride: int = 1, lasso_tol: float = 1e-8, max_sweeps: int = 10000,
                           refine_opts: dict | None = None) -> CvResult:
    """Joint (lambda, gamma, zeta) search for DP followed by refinement.

    The scoring refit on each refined training segment uses the penalty
    ``zeta * sqrt(|I|) * ||v||_1``.
    """
    if grid.zetas is None:
        raise ValidationError("refined cross-validation needs a zeta grid")
    refine_opts = refine_opts or {}
    train, valid, maps = split_odd_even(data)
    table, cps_by = {}, {}
    memo: dict[tuple, tuple[float, list[int]]] = {}
    nonconv = 0
    for lam in grid.lambdas:
        lt = build_loss_table(train, LassoConfig(lam, lasso_tol, max_sweeps), min_seg_len, stride)
        nonconv += lt.nonconverged
        for gamma in grid.gammas:
            prelim = partition_to_changepoints(bellman(lt, gamma).partition)
            for zeta in grid.zetas:
                mkey = (prelim.locations, zeta)
                if mkey not in memo:
                    refined = local_refine(train, prelim, RefineConfig(zeta, **refine_opts)).changepoints
                    part = changepoints_to_partition(refined, train.n)
                    betas = refit_segments(train, part, lambda m, z=zeta: z * math.sqrt(m),
                                           lasso_tol, max_sweeps)
                    loss = validation_loss(valid, zip(maps.partition_to_full(part), betas))
                    memo[mkey] = (loss, maps.changepoints_to_full(refined).as_list())
                key = (lam, gamma, zeta)
                table[key], cps_by[key] = memo[mkey]
    best = _select(table)
    return CvResult(best, table, ChangePointSet(tuple(cps_by[best]), n=data.n),
                    ("lambda", "gamma", "zeta"), {"nonconverged_fits": nonconv}, cps_by)


def oracle_lambda_curve(data: Dataset, truth, true_betas: np.ndarray, lambdas,
                        tol: float = 1e-8):
    """Simulation-only helper: coefficient error of per-segment Lasso fits
    on the training half when the true change points are known.

    Returns ``(lambdas, mse, best_lambda)``. Never used on real data.
    """
    train, _, maps = split_odd_even(data)
    part = changepoints_to_partition(maps.changepoints_to_train(truth), train.n)
    bt = true_betas[0::2]
    mse = []
    for lam in lambdas:
        err = 0.0
        for iv in part:
            X, y = train.rows(iv)
            mu = lam * penalty_scale(len(iv), train.n, train.p)
            beta, *_ = solve_gram(X.T @ X, X.T @ y, mu, tol)
            err += float(((bt[iv.s:iv.e] - beta) ** 2).sum())
        mse.append(err / train.n)
    lambdas = list(lambdas)
    return lambdas, mse, lambdas[int(np.argmin(mse))]


def centered_grid(center: float, factors=(0.5, 0.75, 1.0, 1.5, 2.0)) -> tuple[float, ...]:
    return tuple(center * f for f in factors)


# pipelines used by the CLI and the benchmark harness

@dataclass
class PipelineResult:
    changepoints: ChangePointSet
    params: dict[str, float]
    preliminary: ChangePointSet | None = None
    cv: CvResult | None = None
    diagnostics: dict = field(default_factory=dict)


def run_dp_pipeline(data: Dataset, lam: float, gamma: float, min_seg_len: int = 2,
                    stride: int = 1, lasso_tol: float = 1e-8) -> PipelineResult:
    res = run_dp(data, DpConfig(gamma, LassoConfig(lam, lasso_tol), min_seg_len, stride))
    return PipelineResult(res.changepoints, {"lambda": lam, "gamma": gamma},
                          diagnostics=res.diagnostics)


def run_dp_lr_pipeline(data: Dataset, lam: float, gamma: float, zeta: float,
                       min_seg_len: int = 2, stride: int = 1, lasso_tol: float = 1e-8,
                       refine_opts: dict | None = None) -> PipelineResult:
    res = run_dp(data, DpConfig(gamma, LassoConfig(lam, lasso_tol), min_seg_len, stride))
    ref = local_refine(data, res.changepoints, RefineConfig(zeta, **(refine_opts or {})))
    diag = dict(res.diagnostics, refine_flags=ref.flags)
    return PipelineResult(ref.changepoints, {"lambda": lam, "gamma": gamma, "zeta": zeta},
                          preliminary=res.changepoints, diagnostics=diag)


def tuned_dp(data: Dataset, grid: TuningGrid, min_seg_len: int = 2, stride: int = 1,
             lasso_tol: float = 1e-8) -> PipelineResult:
    cv = cross_validate_dp(data, grid, min_seg_len, stride, lasso_tol)
    out = run_dp_pipeline(data, *cv.best, min_seg_len=min_seg_len, stride=stride,
                          lasso_tol=lasso_tol)
    out.cv = cv
    return out


def tuned_dp_lr(data: Dataset, grid: TuningGrid, min_seg_len: int = 2, stride: int = 1,
                lasso_tol: float = 1e-8, refine_opts: dict | None = None) -> PipelineResult:
    cv = cross_validate_refined(data, grid, min_seg_len, stride, lasso_tol,
                                refine_opts=refine_opts)
    out = run_dp_lr_pipeline(data, *cv.best, min_seg_len=min_seg_len, stride=stride,
                             lasso_tol=lasso_tol, refine_opts=refine_opts)
    out.cv = cv
    return out
