"""Derivative-free optimisation utilities: a deterministic
dividing-rectangles global search over a box, Latin hypercube designs,
and central-difference Hessians.
"""

import math

import numpy as np
from dataclasses import dataclass

from .errors import ContractViolation, DomainError
from .models import SearchBox


@dataclass(frozen=True)
class DirectBudget:
    max_evaluations: int = 2000
    max_rectangle_splits: int = 10**9
    epsilon_direct: float = 1e-4

    def __post_init__(self):
        if self.max_evaluations < 1:
            raise DomainError("max_evaluations must be >= 1")
        if self.epsilon_direct < 0:
            raise DomainError("epsilon_direct must be >= 0")


def _half_diagonal(levels):
    return round(0.5 * math.sqrt(float(np.sum(9.0 ** (-levels)))), 12)


def _potentially_optimal(sizes, values, eps):
    """Indices on the lower-right hull of (size, value), minimisation sign.

    One candidate per distinct size (lowest value, then lowest index);
    a candidate stays when some positive slope makes it the pointwise
    minimum and beats the incumbent by the eps slack. The largest
    rectangle always qualifies, which keeps the search global.
    """
    n = sizes.shape[0]
    order = np.lexsort((np.arange(n), values, sizes))
    s_sorted = sizes[order]
    head = np.ones(n, dtype=bool)
    head[1:] = s_sorted[1:] != s_sorted[:-1]
    cand = order[head]
    d = sizes[cand]
    g = values[cand]
    m = cand.shape[0]
    if m == 1:
        return [int(cand[0])]
    with np.errstate(divide="ignore", invalid="ignore"):
        slopes = (g[:, None] - g[None, :]) / (d[:, None] - d[None, :])
    below = np.tril(np.ones((m, m), dtype=bool), -1)
    above = np.triu(np.ones((m, m), dtype=bool), 1)
    k_low = np.maximum(np.where(below, slopes, -np.inf).max(axis=1), 0.0)
    k_high = np.where(above, slopes, np.inf).min(axis=1)
    fmin = values.min()
    slack = eps * max(abs(fmin), 1e-8)
    has_larger = np.isfinite(k_high)
    descent = g - np.where(has_larger, k_high, 0.0) * d <= fmin - slack
    keep = (k_low <= k_high) & (descent | ~has_larger)
    return [int(i) for i in cand[keep]]


def direct_optimize(objective, box: SearchBox, budget: DirectBudget,
                    vectorized: bool = False):
    """Global maximisation of ``objective`` over ``box`` by dividing
    rectangles; returns (argmax point, max value, evaluation count).

    Deterministic given a deterministic objective: rectangles are
    trisected along their longest side (lowest dimension index on ties)
    and processed in creation order, so a larger budget extends rather
    than reorders the evaluation sequence. With ``vectorized=True`` the
    objective receives an (m, p) array and must return m values.
    """
    p = box.dim
    lo = box.lower_array()
    span = box.widths()

    def evaluate(unit_points):
        pts = np.atleast_2d(lo + np.asarray(unit_points) * span)
        if vectorized:
            vals = np.asarray(objective(pts), dtype=float).ravel()
        else:
            vals = np.array([float(objective(q)) for q in pts])
        if np.isnan(vals).any():
            at = pts[int(np.flatnonzero(np.isnan(vals))[0])]
            raise ContractViolation(f"objective returned NaN at {at.tolist()}")
        return -vals  # minimisation sign internally

    centers = [np.full(p, 0.5)]
    levels = [np.zeros(p)]
    g0 = float(evaluate(centers[0])[0])
    values = [g0]
    sizes = [_half_diagonal(levels[0])]
    evals = 1
    best_g = g0
    best_center = centers[0]

    rounds = 0
    while evals < budget.max_evaluations and rounds < budget.max_rectangle_splits:
        selected = _potentially_optimal(
            np.asarray(sizes), np.asarray(values), budget.epsilon_direct)
        if not selected:
            break
        selected = sorted(selected)[: (budget.max_evaluations - evals) // 2]
        if not selected:
            break
        batch = np.empty((2 * len(selected), p))
        split_dim = []
        for pos, i in enumerate(selected):
            e = int(np.argmin(levels[i]))  # longest side, lowest index on ties
            delta = 3.0 ** (-(levels[i][e] + 1.0))
            batch[2 * pos] = centers[i]
            batch[2 * pos, e] -= delta
            batch[2 * pos + 1] = centers[i]
            batch[2 * pos + 1, e] += delta
            split_dim.append(e)
        g_new = evaluate(batch)
        evals += batch.shape[0]
        for pos, i in enumerate(selected):
            e = split_dim[pos]
            child_levels = levels[i].copy()
            child_levels[e] += 1.0
            levels[i] = child_levels  # parent keeps its centre, now a third
            sizes[i] = _half_diagonal(child_levels)
            for k in (2 * pos, 2 * pos + 1):
                centers.append(batch[k])
                levels.append(child_levels.copy())
                values.append(float(g_new[k]))
                sizes.append(sizes[i])
                if g_new[k] < best_g:
                    best_g = float(g_new[k])
                    best_center = batch[k]
        rounds += 1

    return lo + best_center * span, -best_g, evals


def latin_hypercube(L: int, box: SearchBox, rng: np.random.Generator) -> np.ndarray:
    """L points, one per equal-width stratum in every dimension."""
    if L < 1:
        raise DomainError("need at least one design point")
    p = box.dim
    unit = np.empty((L, p))
    for d in range(p):
        order = rng.permutation(L)
        unit[:, d] = (order + rng.random(L)) / L
    return box.lower_array() + unit * box.widths()


def finite_difference_hessian(f, x, h, box: SearchBox = None) -> np.ndarray:
    """Symmetric central-difference Hessian of ``f`` at ``x`` with
    per-dimension steps ``h``.

    When a box is given the full stencil must stay inside it; a step
    that falls outside is shrunk by 10 once, then it is an error.
    """
    x = np.asarray(x, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), x.shape).copy()
    if np.any(h <= 0):
        raise DomainError("steps must be positive")
    if box is not None:
        lo, hi = box.lower_array(), box.upper_array()
        if np.any(x - h < lo) or np.any(x + h > hi):
            h = h / 10.0
            if np.any(x - h < lo) or np.any(x + h > hi):
                raise DomainError(
                    "point too close to the box boundary for a central stencil")
    p = x.shape[0]
    H = np.empty((p, p))
    f0 = float(f(x))
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = h[i]
        H[i, i] = (float(f(x + ei)) - 2.0 * f0 + float(f(x - ei))) / (h[i] * h[i])
        for j in range(i + 1, p):
            ej = np.zeros(p)
            ej[j] = h[j]
            val = (float(f(x + ei + ej)) - float(f(x + ei - ej))
                   - float(f(x - ei + ej)) + float(f(x - ei - ej)))
            H[i, j] = H[j, i] = val / (4.0 * h[i] * h[j])
    return H
