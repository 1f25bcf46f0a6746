"""Vectorised adaptive Gauss-Kronrod (7/15) panel quadrature.

The integrand is called with a flat numpy array holding the nodes of every
panel being refined at once, so one refinement sweep costs one Python call.
Each panel carries the error estimate ``SAFETY * |K15 - G7|``; refinement is
global, and the sum of the estimates is the reported error bound.
"""

from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceeded

SAFETY = 10.0

_XGK = np.array([
    -0.991455371120812639206854697526329,
    -0.949107912342758524526189684047851,
    -0.864864423359769072789712788640926,
    -0.741531185599394439863864773280788,
    -0.586087235467691130294144845693013,
    -0.405845151377397166906606412076961,
    -0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
    0.207784955007898467600689403773245,
    0.405845151377397166906606412076961,
    0.586087235467691130294144845693013,
    0.741531185599394439863864773280788,
    0.864864423359769072789712788640926,
    0.949107912342758524526189684047851,
    0.991455371120812639206854697526329,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
    0.204432940075298892414161999234649,
    0.190350578064785409913256402421014,
    0.169004726639267902826583426598550,
    0.140653259715525918745189590510238,
    0.104790010322250183839876322541518,
    0.063092092629978553290700663189204,
    0.022935322010529224963732008058970,
])
# Gauss nodes are the odd-indexed Kronrod nodes.
_WG = np.zeros(15)
_WG[1::2] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
    0.381830050505118944950369775488975,
    0.279705391489276667901467771423780,
    0.129484966168869693270611432679082,
]


@dataclass(frozen=True)
class QuadratureBudget:
    """Tolerances and limits for one integral.

    ``tol`` is absolute; the effective target is ``max(tol, rel_tol * |I|)``.
    """

    tol: float = 1e-10
    rel_tol: float = 1e-12
    max_panels: int = 200_000


@dataclass(frozen=True)
class QuadResult:
    value: float
    error: float
    n_evals: int


def _panels(func, lo, hi):
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    nodes = mid[:, None] + half[:, None] * _XGK[None, :]
    fx = np.asarray(func(nodes.ravel()), dtype=float).reshape(nodes.shape)
    kron = half * (fx @ _WGK)
    if not np.all(np.isfinite(kron)):
        raise BudgetExceeded("integrand is not finite on a panel")
    err = SAFETY * np.abs(kron - half * (fx @ _WG))
    # Panels at floating resolution cannot be split further, and an error
    # estimate at the rounding level of the panel sum is noise.
    eps = np.finfo(float).eps
    frozen = (half <= 4 * eps * np.maximum(np.abs(mid), 1e-300)) | (
        err <= 50.0 * eps * half * (np.abs(fx) @ _WGK))
    return kron, err, frozen, fx.size


def integrate(func, breakpoints, budget=None, *, tol=None):
    """Integrate ``func`` over ``[breakpoints[0], breakpoints[-1]]``.

    ``breakpoints`` must be sorted; interior points (kinks, support ends) start
    as panel boundaries so the integrand is smooth inside every panel.  Each
    sweep bisects the panels carrying the largest error estimates until the
    summed estimate is below ``max(tol, rel_tol * |I|)``.  Panels at floating
    resolution or at the rounding floor are not split; their estimates still
    count towards the reported error.  Raises :class:`BudgetExceeded` if the
    panel budget runs out.
    """
    budget = budget or QuadratureBudget()
    target = budget.tol if tol is None else tol
    pts = np.asarray(breakpoints, dtype=float)
    if pts.ndim != 1 or pts.size < 2:
        raise ValueError("need at least two breakpoints")
    if np.any(np.diff(pts) < 0):
        raise ValueError("breakpoints must be sorted")
    keep = np.concatenate([[True], np.diff(pts) > 0])
    pts = pts[keep]
    if pts.size < 2:
        return QuadResult(0.0, 0.0, 0)

    lo, hi = pts[:-1].copy(), pts[1:].copy()
    val, err, frozen, n_evals = _panels(func, lo, hi)
    n_panels = lo.size
    while True:
        total = float(np.sum(err))
        goal = max(target, budget.rel_tol * abs(float(np.sum(val))))
        open_idx = np.flatnonzero(~frozen)
        if total <= goal or open_idx.size == 0:
            break
        # Split the worst open panels until what remains is under half the goal.
        order = open_idx[np.argsort(-err[open_idx], kind="stable")]
        excess = total - 0.5 * goal
        k = int(np.searchsorted(np.cumsum(err[order]), excess)) + 1
        split = order[:k]
        n_panels += split.size
        if n_panels > budget.max_panels:
            raise BudgetExceeded(
                f"quadrature budget of {budget.max_panels} panels exhausted "
                f"(partial value {float(np.sum(val)):.6g}, error estimate {total:.3g})")
        mid = 0.5 * (lo[split] + hi[split])
        new_lo = np.concatenate([lo[split], mid])
        new_hi = np.concatenate([mid, hi[split]])
        v2, e2, f2, n2 = _panels(func, new_lo, new_hi)
        n_evals += n2
        rest = np.ones(lo.size, dtype=bool)
        rest[split] = False
        lo = np.concatenate([lo[rest], new_lo])
        hi = np.concatenate([hi[rest], new_hi])
        val = np.concatenate([val[rest], v2])
        err = np.concatenate([err[rest], e2])
        frozen = np.concatenate([frozen[rest], f2])
    order = np.argsort(lo, kind="stable")
    return QuadResult(float(np.sum(val[order])), float(np.sum(err)), n_evals)


def integrate_intervals(func, intervals, budget=None, *, tol=None, extra_breaks=()):
    """Sum of :func:`integrate` over disjoint closed intervals.

    Half the tolerance is shared out in proportion to length and half
    equally, so very short intervals are not starved.
    """
    budget = budget or QuadratureBudget()
    target = budget.tol if tol is None else tol
    intervals = [(float(a), float(b)) for a, b in intervals if b > a]
    if not intervals:
        return QuadResult(0.0, 0.0, 0)
    extra = np.sort(np.asarray(extra_breaks, dtype=float))
    total = sum(b - a for a, b in intervals)
    value = err = 0.0
    n = 0
    for a, b in intervals:
        inner = extra[(extra > a) & (extra < b)]
        bp = np.concatenate([[a], inner, [b]])
        share = 0.5 * ((b - a) / total + 1.0 / len(intervals))
        res = integrate(func, bp, budget, tol=max(target * share, 1e-300))
        value += res.value
        err += res.error
        n += res.n_evals
    return QuadResult(value, err, n)


def geometric_breaks(a, b, ratio=2.0):
    """Breakpoints between ``0 <= a < b`` growing geometrically from ``max(a, 1)``."""
    pts = [a]
    x = max(a, 1.0) * ratio if a > 0 else 1.0
    while x < b:
        if x > a:
            pts.append(x)
        x *= ratio
    pts.append(b)
    return np.array(pts)
