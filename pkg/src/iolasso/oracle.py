"""Slow, independent minimizer used to certify the thresholding solver.

Plain subgradient descent on the full nonsmooth objective with a
diminishing c/sqrt(t) step and best-iterate tracking.  Deliberately
naive: no thresholding, no DAG, no residual bookkeeping shared with the
production path.  Capped at K*J <= 200 coefficients; this is a
certification tool, not a solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .model import CoefMatrix

_SIZE_CAP = 200


@dataclass
class OracleSettings:
    max_steps: int = 200_000
    objective_tol: float = 1e-5
    # steps with no best-objective improvement before giving up early
    stall_window: int = 20_000

    def __post_init__(self):
        if self.max_steps < 1:
            raise InputError("max_steps must be >= 1")


def _penalty(B, G, H, lam1_col, lam2, lam3):
    total = float(np.sum(np.abs(B) * lam1_col[None, :]))
    if lam2 > 0:
        for g in G:
            total += lam2 * float(np.linalg.norm(B[:, g], axis=1).sum())
    if lam3 > 0:
        for h in H:
            total += lam3 * float(np.linalg.norm(B[h, :], axis=0).sum())
    return total


def _subgradient(B, BXXT, YXT, G, H, lam1_col, lam2, lam3):
    grad = BXXT - YXT + lam1_col[None, :] * np.sign(B)
    if lam2 > 0:
        for g in G:
            sub = B[:, g]
            norms = np.linalg.norm(sub, axis=1)
            scale = np.divide(lam2, norms, out=np.zeros_like(norms), where=norms > 0)
            grad[:, g] += sub * scale[:, None]
    if lam3 > 0:
        for h in H:
            sub = B[h, :]
            norms = np.linalg.norm(sub, axis=0)
            scale = np.divide(lam3, norms, out=np.zeros_like(norms), where=norms > 0)
            grad[h, :] += sub * scale[None, :]
    return grad


def subgradient_solve(ds, gs, pc, settings=None, B0=None):
    """Minimize the penalized objective by subgradient descent.

    Ungrouped variables are wrapped in singleton groups, matching the
    model the thresholding solver optimizes.  Returns (CoefMatrix,
    best objective).
    """
    settings = settings or OracleSettings()
    K, J = ds.n_outputs, ds.n_inputs
    if K * J > _SIZE_CAP:
        raise InputError("oracle limited to K*J <= %d, got %d" % (_SIZE_CAP, K * J))
    groups = gs.with_singletons(J, K)
    G = [np.asarray(g, dtype=np.intp) for g in groups.input_groups]
    H = [np.asarray(h, dtype=np.intp) for h in groups.output_groups]
    lam1_col = pc.l1_weights(J, ds.pair_columns)

    XXT = ds.X @ ds.X.T
    YXT = ds.Y @ ds.X.T
    yy = float(np.vdot(ds.Y, ds.Y))

    def objective(B, BXXT=None):
        if BXXT is None:
            BXXT = B @ XXT
        smooth = 0.5 * (yy - 2.0 * float(np.vdot(B, YXT)) + float(np.vdot(B, BXXT)))
        return smooth + _penalty(B, G, H, lam1_col, pc.lambda2, pc.lambda3)

    B = np.zeros((K, J)) if B0 is None else np.array(B0, dtype=np.float64)
    f = objective(B)
    grad = _subgradient(B, B @ XXT, YXT, G, H, lam1_col, pc.lambda2, pc.lambda3)

    # backtrack the base step at t=1 so the first move is a descent step
    c = 1.0
    for _ in range(60):
        if objective(B - c * grad) < f or c < 1e-12:
            break
        c *= 0.5

    best_B = B.copy()
    best_f = f
    last_improvement = 0
    for t in range(1, settings.max_steps + 1):
        BXXT = B @ XXT
        grad = _subgradient(B, BXXT, YXT, G, H, lam1_col, pc.lambda2, pc.lambda3)
        B -= (c / np.sqrt(t)) * grad
        f = objective(B)
        if f < best_f - settings.objective_tol * max(1.0, abs(best_f)) * 1e-3:
            last_improvement = t
        if f < best_f:
            best_f = f
            best_B = B.copy()
        if t - last_improvement >= settings.stall_window:
            break

    return CoefMatrix(best_B), best_f


def kkt_residual(ds, gs, pc, B):
    """Worst-coordinate stationarity violation at B.

    For each coefficient the residual correlation (y_k - beta_k X) x_j^T
    must land in lambda1 d|.| + lambda2 (group terms) + lambda3 (group
    terms).  Each term is a point where its norm is differentiable and an
    interval otherwise; the per-coordinate inclusion is solved by
    interval arithmetic and the largest distance is returned.
    """
    values = B.values if isinstance(B, CoefMatrix) else np.asarray(B, dtype=np.float64)
    K, J = ds.n_outputs, ds.n_inputs
    if values.shape != (K, J):
        raise InputError("B shape %s does not match data" % (values.shape,))
    groups = gs.with_singletons(J, K)
    lam1_col = pc.l1_weights(J, ds.pair_columns)

    corr = (ds.Y - values @ ds.X) @ ds.X.T
    center = np.where(values != 0, lam1_col[None, :] * np.sign(values), 0.0)
    halfwidth = np.where(values != 0, 0.0, np.broadcast_to(lam1_col[None, :], (K, J)))
    halfwidth = np.array(halfwidth)
    if pc.lambda2 > 0:
        for g in groups.input_groups:
            g = np.asarray(g, dtype=np.intp)
            sub = values[:, g]
            norms = np.linalg.norm(sub, axis=1)
            live = norms > 0
            if live.any():
                center[np.ix_(live, g)] += pc.lambda2 * sub[live] / norms[live, None]
            if (~live).any():
                halfwidth[np.ix_(~live, g)] += pc.lambda2
    if pc.lambda3 > 0:
        for h in groups.output_groups:
            h = np.asarray(h, dtype=np.intp)
            sub = values[h, :]
            norms = np.linalg.norm(sub, axis=0)
            live = norms > 0
            if live.any():
                center[np.ix_(h, live)] += pc.lambda3 * sub[:, live] / norms[live][None, :]
            if (~live).any():
                halfwidth[np.ix_(h, ~live)] += pc.lambda3
    lo = center - halfwidth
    hi = center + halfwidth
    dist = np.maximum(np.maximum(lo - corr, corr - hi), 0.0)
    return float(dist.max(initial=0.0))
