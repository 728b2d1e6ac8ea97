"""Local refinement of preliminary change points.

Each preliminary estimate is re-localised inside a window cut from its
neighbours. For every split ``eta`` in the window a two-segment regression
is solved with a per-coordinate group penalty

    zeta * sum_i sqrt((eta - s) * b1_i^2 + (e - eta) * b2_i^2)

that ties the two segments' coefficients together. The split with the
smallest objective wins.

Split locations follow the two-segment objective: ``eta`` is the last point
of the left segment, so the reported change point is ``eta + 1``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .core import ChangePointSet, Dataset, ValidationError

log = logging.getLogger(__name__)

_TIE_RTOL = 1e-10


@dataclass(frozen=True)
class RefineConfig:
    zeta: float
    group_tol: float = 1e-7
    max_block_sweeps: int = 5000
    eta_stride: int = 1

    def __post_init__(self):
        if not self.zeta >= 0:
            raise ValidationError(f"zeta must be >= 0, got {self.zeta}")
        if self.eta_stride < 1 or self.max_block_sweeps < 1:
            raise ValidationError("strides and sweep caps must be >= 1")
        if not self.group_tol > 0:
            raise ValidationError("group_tol must be > 0")


@dataclass(frozen=True, eq=False)
class TwoSegmentFit:
    beta1: np.ndarray
    beta2: np.ndarray
    s: int
    e: int
    eta: int
    objective: float
    converged: bool = True
    sweeps_used: int = 0

    @property
    def changepoint(self) -> int:
        return self.eta + 1


@dataclass
class RefineResult:
    changepoints: ChangePointSet
    fits: list[TwoSegmentFit | None]
    windows: list[tuple[int, int]]
    flags: list[str] = field(default_factory=list)

    def __iter__(self):
        # allows ``cps, fits = local_refine(...)``
        return iter((self.changepoints, self.fits))


def shrink_interval(prev: int, cur: int, nxt: int) -> tuple[int, int]:
    """Window ``(floor(2 prev/3 + cur/3), ceil(cur/3 + 2 nxt/3))``."""
    if not prev < cur < nxt:
        raise ValidationError(f"need prev < cur < next, got {prev}, {cur}, {nxt}")
    s = (2 * prev + cur) // 3
    e = -((-(cur + 2 * nxt)) // 3)
    return s, e


@numba.njit(cache=True)
def _group_prox2(h1, h2, w1, w2, zeta):
    """argmin of h1/2 u^2 - w1 u + h2/2 v^2 - w2 v + zeta * ||(u, v)||."""
    if h1 <= 0.0:
        w1 = 0.0
    if h2 <= 0.0:
        w2 = 0.0
    norm = math.sqrt(w1 * w1 + w2 * w2)
    if norm <= zeta:
        return 0.0, 0.0
    if zeta == 0.0:
        u = w1 / h1 if h1 > 0.0 else 0.0
        v = w2 / h2 if h2 > 0.0 else 0.0
        return u, v
    # radius r = ||(u, v)|| solves sum_j w_j^2 / (h_j r + zeta)^2 = 1;
    # the left side is convex decreasing in r, so Newton from r = 0 is monotone
    r = 0.0
    for _ in range(200):
        d1 = h1 * r + zeta
        d2 = h2 * r + zeta
        f = w1 * w1 / (d1 * d1) + w2 * w2 / (d2 * d2) - 1.0
        fp = -2.0 * (w1 * w1 * h1 / (d1 * d1 * d1) + w2 * w2 * h2 / (d2 * d2 * d2))
        if fp == 0.0:
            break
        step = f / fp
        r_new = r - step
        if r_new <= r or (r_new - r) <= 1e-15 * (1.0 + r_new):
            r = max(r_new, r)
            break
        r = r_new
    u = w1 * r / (h1 * r + zeta)
    v = w2 * r / (h2 * r + zeta)
    return u, v


@numba.njit(cache=True)
def _group_sweep(GL, cL, GR, cR, qL, qR, b1, b2, sa, sb, zeta, active_only):
    p = b1.shape[0]
    dmax = 0.0
    for i in range(p):
        if active_only and b1[i] == 0.0 and b2[i] == 0.0:
            continue
        g1 = cL[i] - qL[i] + GL[i, i] * b1[i]
        g2 = cR[i] - qR[i] + GR[i, i] * b2[i]
        h1 = 2.0 * GL[i, i] / (sa * sa)
        h2 = 2.0 * GR[i, i] / (sb * sb)
        u, v = _group_prox2(h1, h2, 2.0 * g1 / sa, 2.0 * g2 / sb, zeta)
        n1 = u / sa
        n2 = v / sb
        d1 = n1 - b1[i]
        d2 = n2 - b2[i]
        if d1 != 0.0:
            b1[i] = n1
            for k in range(p):
                qL[k] += GL[k, i] * d1
        if d2 != 0.0:
            b2[i] = n2
            for k in range(p):
                qR[k] += GR[k, i] * d2
        d = max(abs(d1), abs(d2))
        if d > dmax:
            dmax = d
    return dmax


@numba.njit(cache=True)
def _group_bcd(GL, cL, GR, cR, na, nb, zeta, b1, b2, tol, max_sweeps):
    sa = math.sqrt(na)
    sb = math.sqrt(nb)
    qL = GL @ b1
    qR = GR @ b2
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        dmax = _group_sweep(GL, cL, GR, cR, qL, qR, b1, b2, sa, sb, zeta, False)
        sweeps += 1
        bmax = max(np.max(np.abs(b1)), np.max(np.abs(b2)))
        if dmax <= tol * (1.0 + bmax):
            converged = True
            break
        while sweeps < max_sweeps:
            dmax = _group_sweep(GL, cL, GR, cR, qL, qR, b1, b2, sa, sb, zeta, True)
            sweeps += 1
            bmax = max(np.max(np.abs(b1)), np.max(np.abs(b2)))
            if dmax <= tol * (1.0 + bmax):
                break
    return sweeps, converged


def group_objective(XL, yL, XR, yR, beta1, beta2, zeta) -> float:
    """Two-segment objective in the original coefficients."""
    na, nb = len(yL), len(yR)
    rL = yL - XL @ beta1
    rR = yR - XR @ beta2
    pen = np.sqrt(na * np.asarray(beta1) ** 2 + nb * np.asarray(beta2) ** 2).sum()
    return float(rL @ rL + rR @ rR + zeta * pen)


def group_objective_uv(XL, yL, XR, yR, u, v, zeta) -> float:
    """Same objective after rescaling ``u = sqrt(na) b1``, ``v = sqrt(nb) b2``."""
    na, nb = len(yL), len(yR)
    rL = yL - (XL / math.sqrt(na)) @ u
    rR = yR - (XR / math.sqrt(nb)) @ v
    return float(rL @ rL + rR @ rR + zeta * np.hypot(u, v).sum())


def kill_threshold(cL, cR, na, nb) -> float:
    """Smallest ``zeta`` at which both coefficient vectors are exactly zero."""
    return float(2.0 * np.hypot(np.asarray(cL) / math.sqrt(na),
                                np.asarray(cR) / math.sqrt(nb)).max(initial=0.0))


def _solve_stats(GL, cL, yyL, GR, cR, yyR, na, nb, zeta, tol, max_sweeps, warm=None):
    p = cL.shape[0]
    if zeta == 0.0:
        raise ValueError("use the least-squares path for zeta = 0")
    if kill_threshold(cL, cR, na, nb) <= zeta:
        return np.zeros(p), np.zeros(p), yyL + yyR, 0, True
    if warm is None:
        b1, b2 = np.zeros(p), np.zeros(p)
    else:
        b1, b2 = warm[0].copy(), warm[1].copy()
    sweeps, conv = _group_bcd(GL, cL, GR, cR, float(na), float(nb), float(zeta),
                              b1, b2, float(tol), int(max_sweeps))
    rss = (max(yyL - 2.0 * cL @ b1 + b1 @ GL @ b1, 0.0)
           + max(yyR - 2.0 * cR @ b2 + b2 @ GR @ b2, 0.0))
    pen = zeta * np.sqrt(na * b1 ** 2 + nb * b2 ** 2).sum()
    return b1, b2, float(rss + pen), int(sweeps), bool(conv)


def group_two_segment_solve(data: Dataset, s: int, e: int, eta: int, cfg: RefineConfig,
                            warm: tuple[np.ndarray, np.ndarray] | None = None) -> TwoSegmentFit:
    """Fit both segments of ``(s, eta]`` and ``(eta, e]`` under the group penalty."""
    if not 0 <= s < eta < e <= data.n:
        raise ValidationError(f"need 0 <= s < eta < e <= n, got {s}, {eta}, {e}")
    XL, yL = data.X[s:eta], data.y[s:eta]
    XR, yR = data.X[eta:e], data.y[eta:e]
    na, nb = eta - s, e - eta
    if cfg.zeta == 0.0:
        b1 = np.linalg.lstsq(XL, yL, rcond=None)[0]
        b2 = np.linalg.lstsq(XR, yR, rcond=None)[0]
        return TwoSegmentFit(b1, b2, s, e, eta, group_objective(XL, yL, XR, yR, b1, b2, 0.0))
    b1, b2, _, sweeps, conv = _solve_stats(
        np.ascontiguousarray(XL.T @ XL), XL.T @ yL, float(yL @ yL),
        np.ascontiguousarray(XR.T @ XR), XR.T @ yR, float(yR @ yR),
        na, nb, cfg.zeta, cfg.group_tol, cfg.max_block_sweeps, warm)
    obj = group_objective(XL, yL, XR, yR, b1, b2, cfg.zeta)
    return TwoSegmentFit(b1, b2, s, e, eta, obj, conv, sweeps)


def scan_window(data: Dataset, s: int, e: int, cfg: RefineConfig):
    """Objective of every candidate split in ``(s, e)``.

    Returns ``(etas, objectives, fits)``; each split's solve starts from the
    previous split's solution.
    """
    X, y = data.X, data.y
    p = data.p
    etas = list(range(s + 1, e, cfg.eta_stride))
    Xw, yw = X[s:e], y[s:e]
    G_all = Xw.T @ Xw
    c_all = Xw.T @ yw
    yy_all = float(yw @ yw)
    GL = np.zeros((p, p))
    cL = np.zeros(p)
    yyL = 0.0
    last = s
    warm = None
    objs, fits = [], []
    for eta in etas:
        Xb, yb = X[last:eta], y[last:eta]
        GL += Xb.T @ Xb
        cL += Xb.T @ yb
        yyL += float(yb @ yb)
        last = eta
        na, nb = eta - s, e - eta
        if cfg.zeta == 0.0:
            fit = group_two_segment_solve(data, s, e, eta, cfg)
        else:
            GR = G_all - GL
            b1, b2, obj, sweeps, conv = _solve_stats(
                GL, cL, yyL, GR, c_all - cL, yy_all - yyL, na, nb, cfg.zeta,
                cfg.group_tol, cfg.max_block_sweeps, warm)
            fit = TwoSegmentFit(b1, b2, s, e, eta, obj, conv, sweeps)
            warm = (b1, b2)
        objs.append(fit.objective)
        fits.append(fit)
    return etas, np.asarray(objs), fits


def _argmin_first(values: np.ndarray) -> int:
    best = values.min()
    return int(np.flatnonzero(values <= best + _TIE_RTOL * max(1.0, abs(best)))[0])


def local_refine(data: Dataset, prelim: ChangePointSet, cfg: RefineConfig) -> RefineResult:
    """Refine every preliminary change point inside its window.

    The count of change points never changes.
    """
    n = data.n
    locs = list(prelim.locations) if isinstance(prelim, ChangePointSet) else list(prelim)
    prelim = ChangePointSet(tuple(locs), n=n)
    if not locs:
        return RefineResult(ChangePointSet((), n=n), [], [])
    # split boundaries: change point c separates (.., c-1] from (c-1, ..]
    bnd = [0] + [c - 1 for c in locs] + [n]
    out, fits, windows, flags = [], [], [], []
    for k in range(1, len(bnd) - 1):
        s, e = shrink_interval(bnd[k - 1], bnd[k], bnd[k + 1])
        windows.append((s, e))
        if e - s < 2:
            out.append(locs[k - 1])
            fits.append(None)
            flags.append(f"window ({s}, {e}] has no interior split; kept {locs[k - 1]}")
            continue
        etas, objs, wfits = scan_window(data, s, e, cfg)
        j = _argmin_first(objs)
        best = wfits[j]
        if not best.converged:
            flags.append(f"block descent did not converge at eta={best.eta}")
        out.append(best.changepoint)
        fits.append(best)
    out = _repair_order(out, locs, flags)
    return RefineResult(ChangePointSet(tuple(out), n=n), fits, windows, flags)


def _repair_order(refined: list[int], prelim: list[int], flags: list[str]) -> list[int]:
    # neighbouring windows overlap, so refined points can in principle collide;
    # colliding pairs fall back to their preliminary locations
    out = list(refined)
    changed = True
    while changed:
        changed = False
        for k in range(len(out) - 1):
            if out[k + 1] <= out[k]:
                for j in (k, k + 1):
                    if out[j] != prelim[j]:
                        out[j] = prelim[j]
                        changed = True
                flags.append(f"refined points {k} and {k + 1} collided; reverted")
    if out and out[0] < 2:
        out[0] = prelim[0]
    return out
