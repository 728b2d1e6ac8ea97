"""Synthetic data, the scaled Hausdorff metric and the Monte-Carlo harness."""
from __future__ import annotations

import json
import logging
import math
import time
import traceback
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import ChangePointSet, Dataset, IntegerInterval, ValidationError
from .dp import LossCache, segment_loss
from .lasso import LassoConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimulationConfig:
    n: int = 600
    p: int = 200
    change_points: tuple[int, ...] = (121, 221, 351, 451)
    kappa: float = 4.0
    d0: int = 10
    sigma_eps: float = 1.0
    sigma: str | np.ndarray = "identity"
    seed: int = 0
    alternating: bool = True

    def __post_init__(self):
        object.__setattr__(self, "change_points", tuple(int(c) for c in self.change_points))
        ChangePointSet(self.change_points, n=self.n)
        if not 1 <= self.d0 <= self.p:
            raise ValidationError(f"need 1 <= d0 <= p, got d0={self.d0}")
        if not self.kappa > 0:
            raise ValidationError("kappa must be > 0")
        if not self.sigma_eps >= 0:
            raise ValidationError("sigma_eps must be >= 0")

    @property
    def k(self) -> int:
        return len(self.change_points)

    @property
    def spacing(self) -> int:
        """Minimal gap between consecutive change points (ends included)."""
        b = [1] + list(self.change_points) + [self.n + 1]
        return min(q - a for a, q in zip(b, b[1:]))

    def with_seed(self, seed: int) -> "SimulationConfig":
        from dataclasses import replace
        return replace(self, seed=seed)

    def label(self) -> str:
        return f"n={self.n},p={self.p},kappa={self.kappa:g},d0={self.d0}"


def _covariance_factor(sigma, p):
    if isinstance(sigma, str):
        if sigma == "identity":
            return None
        raise ValidationError(f"unknown covariance spec {sigma!r}")
    S = np.asarray(sigma, dtype=float)
    if S.ndim == 1:
        if S.shape != (p,) or np.any(S <= 0):
            raise ValidationError("diagonal covariance must be positive with length p")
        return np.diag(np.sqrt(S))
    if S.shape != (p, p) or not np.allclose(S, S.T):
        raise ValidationError("covariance must be a symmetric p x p matrix")
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise ValidationError("covariance is not positive definite") from None


def coefficient_path(cfg: SimulationConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Piecewise-constant ``n x p`` coefficients.

    With ``alternating`` the segments use ``+b0, -b0, +b0, ...`` where ``b0``
    equals ``kappa / (2 sqrt(d0))`` on the first ``d0`` coordinates. Otherwise
    each segment moves by ``kappa`` in a random direction on that support.
    """
    p, d0 = cfg.p, cfg.d0
    b0 = np.zeros(p)
    b0[:d0] = cfg.kappa / (2.0 * math.sqrt(d0))
    bounds = [0] + [c - 1 for c in cfg.change_points] + [cfg.n]
    betas = np.empty((cfg.n, p))
    cur = b0.copy()
    for k, (a, b) in enumerate(zip(bounds, bounds[1:])):
        if k > 0:
            if cfg.alternating:
                cur = -cur
            else:
                u = np.zeros(p)
                u[:d0] = rng.standard_normal(d0)
                cur = cur + cfg.kappa * u / np.linalg.norm(u)
        betas[a:b] = cur
    return betas


def generate_simulation(cfg: SimulationConfig,
                        covariates: Callable[[np.random.Generator, int, int], np.ndarray] | None = None):
    """Draw ``y_t = x_t' beta_t + eps_t`` with Gaussian covariates and noise.

    ``covariates(rng, n, p)`` may replace the standard normal draw; the
    covariance factor is applied on top of it. Returns ``(Dataset, betas)``.
    """
    rng = np.random.default_rng(cfg.seed)
    L = _covariance_factor(cfg.sigma, cfg.p)
    Z = covariates(rng, cfg.n, cfg.p) if covariates else rng.standard_normal((cfg.n, cfg.p))
    X = Z if L is None else Z @ L.T
    betas = coefficient_path(cfg, rng)
    eps = cfg.sigma_eps * rng.standard_normal(cfg.n)
    y = np.einsum("ij,ij->i", X, betas) + eps
    return Dataset(X, y), betas


def change_indices(betas: np.ndarray) -> list[int]:
    """1-based times t with beta_t != beta_{t-1}."""
    diff = np.any(betas[1:] != betas[:-1], axis=1)
    return [int(i) + 2 for i in np.flatnonzero(diff)]


@dataclass
class EvalResult:
    hausdorff_raw: float
    hausdorff_scaled: float
    k_hat: int
    k_true: int
    per_point_errors: list[int] | None = None


def hausdorff_scaled(est, truth, n: int) -> EvalResult:
    """Hausdorff distance between two change-point sets, divided by ``n``.

    If exactly one set is empty the distance is ``n``; two empty sets are at
    distance 0.
    """
    a = np.asarray(list(est), dtype=float)
    b = np.asarray(list(truth), dtype=float)
    if len(a) == 0 and len(b) == 0:
        D = 0.0
    elif len(a) == 0 or len(b) == 0:
        D = float(n)
    else:
        d = np.abs(a[:, None] - b[None, :])
        D = float(max(d.min(axis=1).max(), d.min(axis=0).max()))
    errs = None
    if len(a) == len(b):
        errs = [int(v) for v in np.abs(np.sort(a) - np.sort(b))]
    return EvalResult(D, D / n, len(a), len(b), errs)


def binseg_baseline(data: Dataset, lasso: LassoConfig, gamma: float, min_seg_len: int = 10,
                    stride: int = 1, max_depth: int = 8,
                    cache: LossCache | None = None) -> ChangePointSet:
    """Greedy binary segmentation on the Lasso segment loss.

    A split is kept while it lowers the summed loss by more than ``gamma``.
    """
    cache = LossCache() if cache is None else cache

    def loss(s, e):
        return segment_loss(data, IntegerInterval(s, e), lasso, cache)

    found = []
    stack = [(0, data.n, 0)]
    while stack:
        s, e, depth = stack.pop()
        if depth >= max_depth or e - s < 2 * min_seg_len:
            continue
        parent = loss(s, e)
        best, best_m = math.inf, None
        for m in range(s + min_seg_len, e - min_seg_len + 1):
            if (m - s) % stride and m != e - min_seg_len:
                continue
            v = loss(s, m) + loss(m, e)
            if v < best:
                best, best_m = v, m
        if best_m is not None and parent - best > gamma:
            found.append(best_m + 1)
            stack.append((s, best_m, depth + 1))
            stack.append((best_m, e, depth + 1))
    return ChangePointSet(tuple(sorted(found)), n=data.n)


@dataclass
class ReplicateRecord:
    setting: str
    method: str
    replicate: int
    seed: int
    hausdorff_scaled: float | None
    k_hat: int | None
    k_true: int
    changepoints: list[int] | None
    seconds: float
    error: str | None = None


@dataclass
class BenchmarkTable:
    rows: list[dict]
    records: list[ReplicateRecord] = field(default_factory=list)

    COLUMNS = ("setting", "method", "mean", "sd", "n_reps", "frac_khat_eq_k",
               "mean_khat_eq_k", "sd_khat_eq_k", "n_khat_eq_k", "failures")

    def to_delimited(self, sep: str = "\t") -> str:
        lines = [sep.join(self.COLUMNS)]
        for r in self.rows:
            lines.append(sep.join(_fmt(r[c]) for c in self.COLUMNS))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows,
                           "replicates": [asdict(r) for r in self.records]}, indent=2)

    def lookup(self, setting: str, method: str) -> dict:
        for r in self.rows:
            if r["setting"] == setting and r["method"] == method:
                return r
        raise KeyError((setting, method))


def _fmt(v):
    if v is None:
        return "NA"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _mean_sd(vals):
    if not vals:
        return None, None
    arr = np.asarray(vals, dtype=float)
    sd = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return float(arr.mean()), sd


Method = Callable[[Dataset], ChangePointSet]


def _run_one(cfg: SimulationConfig, name: str, method: Method, rep: int):
    data, betas = generate_simulation(cfg)
    truth = ChangePointSet(cfg.change_points, n=cfg.n)
    t0 = time.perf_counter()
    try:
        est = method(data)
        ev = hausdorff_scaled(est, truth, cfg.n)
        return ReplicateRecord(cfg.label(), name, rep, cfg.seed, ev.hausdorff_scaled, ev.k_hat,
                               ev.k_true, est.as_list(), time.perf_counter() - t0)
    except Exception as exc:  # a failed replicate is recorded, never fatal
        log.error("replicate %d of %s/%s failed: %s", rep, cfg.label(), name, exc)
        return ReplicateRecord(cfg.label(), name, rep, cfg.seed, None, None, truth.k_hat, None,
                               time.perf_counter() - t0,
                               error="".join(traceback.format_exception_only(type(exc), exc)).strip())


def run_benchmark(settings: Sequence[SimulationConfig], methods: dict[str, Method],
                  reps: int, base_seed: int = 0, n_jobs: int = 1,
                  progress: Callable[[ReplicateRecord], None] | None = None) -> BenchmarkTable:
    """Mean and standard deviation of the scaled Hausdorff distance.

    Replicate ``r`` of every setting uses seed ``base_seed + r``, so each
    method sees the same datasets. Summaries are given over all replicates
    and over those with the correct number of change points.
    """
    if reps < 1:
        raise ValidationError("reps must be >= 1")
    jobs = [(cfg.with_seed(base_seed + r), name, fn, r)
            for cfg in settings for name, fn in methods.items() for r in range(reps)]
    if n_jobs == 1:
        records = []
        for job in jobs:
            rec = _run_one(*job)
            if progress:
                progress(rec)
            records.append(rec)
    else:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            records = list(ex.map(_run_one, *zip(*jobs)))
    rows = []
    for cfg in settings:
        for name in methods:
            recs = [r for r in records if r.setting == cfg.label() and r.method == name]
            ok = [r for r in recs if r.error is None]
            eq = [r for r in ok if r.k_hat == r.k_true]
            m, sd = _mean_sd([r.hausdorff_scaled for r in ok])
            me, sde = _mean_sd([r.hausdorff_scaled for r in eq])
            rows.append({
                "setting": cfg.label(), "method": name, "mean": m, "sd": sd,
                "n_reps": len(ok),
                "frac_khat_eq_k": len(eq) / len(ok) if ok else None,
                "mean_khat_eq_k": me, "sd_khat_eq_k": sde, "n_khat_eq_k": len(eq),
                "failures": len(recs) - len(ok),
            })
    return BenchmarkTable(rows, records)
