"""Target densities: the abstraction, the catalog, and the counterexample constructions."""

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np
from scipy import special, stats

from .errors import BudgetExceeded, OverflowAtScale, TailEnvelopeMissing, ValidationError
from .quadrature import QuadratureBudget, geometric_breaks, integrate, integrate_intervals

FULL = "full-space"
INTERVALS = "interval-union"
BALL = "ball"


@dataclass(frozen=True, eq=False)
class SupportDescriptor:
    """Where a density may be positive.

    ``intervals`` is an ``(n, 2)`` array of sorted, disjoint, closed intervals
    and is only used for ``kind == "interval-union"`` (1-D).
    """

    kind: str = FULL
    intervals: Optional[np.ndarray] = None
    radius: Optional[float] = None

    def __post_init__(self):
        if self.kind == INTERVALS:
            iv = np.asarray(self.intervals, dtype=float).reshape(-1, 2)
            if iv.shape[0] == 0:
                raise ValidationError("interval union must be nonempty")
            if np.any(iv[:, 1] <= iv[:, 0]):
                raise ValidationError("intervals must be nondegenerate")
            if np.any(iv[1:, 0] <= iv[:-1, 1]):
                raise ValidationError("intervals must be sorted and pairwise disjoint")
            iv.setflags(write=False)
            object.__setattr__(self, "intervals", iv)
        elif self.kind == BALL:
            if not self.radius or self.radius <= 0:
                raise ValidationError("ball support needs a positive radius")
        elif self.kind != FULL:
            raise ValidationError(f"unknown support kind {self.kind!r}")

    @property
    def measure(self):
        if self.kind == INTERVALS:
            return float(math.fsum(self.intervals[:, 1] - self.intervals[:, 0]))
        return math.inf if self.kind == FULL else None

    def interval_index(self, x):
        """Index of the support interval holding each point, -1 if none."""
        x = np.asarray(x, dtype=float)
        iv = self.intervals
        i = np.searchsorted(iv[:, 0], x, side="right") - 1
        ok = (i >= 0) & (x <= iv[np.clip(i, 0, None), 1])
        return np.where(ok, i, -1)

    def contains_interval(self, a, b):
        """True where ``[a, b]`` lies inside the support (vectorised, 1-D)."""
        if self.kind == FULL:
            return np.ones(np.shape(a), dtype=bool)
        if self.kind == BALL:
            return (np.abs(a) <= self.radius) & (np.abs(b) <= self.radius)
        i = self.interval_index(a)
        return (i >= 0) & (np.asarray(b) <= self.intervals[np.clip(i, 0, None), 1])


@dataclass(frozen=True)
class SecondMoment:
    kind: str  # "finite", "infinite" or "unknown"
    value: Optional[float] = None


@dataclass(frozen=True, eq=False)
class Density:
    """An evaluable target density f with the metadata the constructions need.

    ``tail_envelope(R)`` bounds the mass outside the ball of radius R;
    ``moment_envelope(R)``, when present, bounds the second moment there.
    ``continuous`` and ``strictly_positive`` are definitional metadata.
    """

    name: str
    dim: int
    pdf: Callable
    logpdf: Callable
    sampler: Callable
    support: SupportDescriptor
    tail_envelope: Optional[Callable]
    second_moment: SecondMoment
    continuous: bool
    strictly_positive: bool
    sup: float = math.inf
    moment_envelope: Optional[Callable] = None
    tail_formula: Optional[Callable] = None
    breakpoints: tuple = ()
    scale: float = 1.0
    params: dict = field(default_factory=dict)

    @property
    def second_moment_kind(self):
        return self.second_moment.kind

    def eval(self, x):
        return self.pdf(x)

    def log_eval(self, x):
        return self.logpdf(x)

    def sample(self, n, seed):
        """``n`` draws from F; ``seed`` is anything ``np.random.default_rng`` accepts."""
        return self.sampler(int(n), np.random.default_rng(seed))

    def quadrature_intervals(self, radius):
        """Integration domain for 1-D quadrature truncated to ``[-radius, radius]``."""
        if self.support.kind == INTERVALS:
            iv = self.support.intervals
            lo = np.maximum(iv[:, 0], -radius)
            hi = np.minimum(iv[:, 1], radius)
            keep = hi > lo
            return np.column_stack([lo[keep], hi[keep]])
        if self.support.kind == BALL:
            radius = min(radius, self.support.radius)
        return np.array([[-radius, radius]])

    def core_radius(self):
        """Radius outside which the density carries no mass (inf if unbounded support)."""
        if self.support.kind == INTERVALS:
            return float(np.abs(self.support.intervals).max())
        if self.support.kind == BALL:
            return float(self.support.radius)
        return math.inf


@dataclass(frozen=True)
class TailQuantities:
    """(alpha_R, beta_R, mu2_R): mass, positive entropy and second moment outside B_R."""

    R: float
    alpha: float
    beta: float
    mu2: float
    error: float = 0.0
    mu2_diverges: bool = False


def _log_plus(x):
    return max(math.log(x), 0.0) if x > 0 else 0.0


def tail_quantities(f, R, budget=None):
    """Tail mass, tail positive entropy and tail second moment of ``f`` outside B_R.

    One-dimensional targets are integrated with the adaptive panel rule;
    the part beyond the truncation radius is bounded through the density's
    envelopes.  When no second-moment envelope exists the second moment is
    reported as ``inf`` with ``mu2_diverges=True``.
    """
    budget = budget or QuadratureBudget()
    R = float(R)
    if R <= 0:
        raise ValueError("R must be positive")
    if f.tail_formula is not None and f.dim > 1:
        return f.tail_formula(R)
    if f.dim != 1:
        raise TailEnvelopeMissing(f"{f.name}: no analytic tail formula for dim {f.dim}")

    def plogp(x):
        lf = f.logpdf(x)
        return np.where(lf > 0, np.exp(lf) * np.maximum(lf, 0.0), 0.0)

    def x2f(x):
        return x * x * f.pdf(x)

    q_tol = budget.tol / 4.0
    mu2_diverges = False
    if f.support.kind != FULL:
        core = f.core_radius()
        if R >= core:
            return TailQuantities(R, 0.0, 0.0, 0.0, 0.0, False)
        iv = f.quadrature_intervals(core)
        pieces = []
        for a, b in iv:
            if b > R:
                pieces.append((max(a, R), b))
            if a < -R:
                pieces.append((a, min(b, -R)))
        pieces.sort()
        res = [integrate_intervals(h, pieces, budget, tol=q_tol, extra_breaks=f.breakpoints)
               for h in (f.pdf, plogp, x2f)]
        err = sum(r.error for r in res)
        return TailQuantities(R, res[0].value, res[1].value, res[2].value, err, False)

    if f.tail_envelope is None:
        raise TailEnvelopeMissing(f"{f.name} has no tail envelope")
    lp_sup = _log_plus(f.sup)
    T = max(2.0 * R, R + 8.0 * f.scale)
    for _ in range(400):
        rem_a = f.tail_envelope(T)
        rem_m = f.moment_envelope(T) if f.moment_envelope is not None else 0.0
        if rem_a * (1.0 + lp_sup) <= q_tol and rem_m <= q_tol:
            break
        T *= 2.0
    else:
        raise BudgetExceeded(f"{f.name}: tail envelope does not fall below {q_tol:g}")
    right = geometric_breaks(R, T)
    left = -right[::-1]
    extra = np.asarray(f.breakpoints, dtype=float)

    def both(h):
        a = integrate(h, np.unique(np.concatenate([left, extra[(extra > -T) & (extra < -R)]])), budget, tol=q_tol / 2)
        b = integrate(h, np.unique(np.concatenate([right, extra[(extra > R) & (extra < T)]])), budget, tol=q_tol / 2)
        return a.value + b.value, a.error + b.error

    alpha, ea = both(f.pdf)
    beta, eb = both(plogp)
    alpha += 0.0
    err = ea + eb + f.tail_envelope(T) * (1.0 + lp_sup)
    if f.moment_envelope is not None:
        mu2, em = both(x2f)
        err += em + f.moment_envelope(T)
    else:
        mu2 = math.inf
        mu2_diverges = True
    if err > budget.tol * 1.000001:
        raise BudgetExceeded(f"{f.name}: tail quantities error {err:.3g} above {budget.tol:g}")
    return TailQuantities(R, alpha, beta, mu2, err, mu2_diverges)


def truncated_second_moment(f, R, budget=None):
    """Integral of |x|^2 f over B_R (1-D quadrature); returns (value, error)."""
    budget = budget or QuadratureBudget()
    if f.dim != 1:
        raise ValidationError("truncated second moment is implemented for 1-D targets")
    iv = f.quadrature_intervals(float(R))
    if f.support.kind == FULL:
        right = geometric_breaks(0.0, float(R))
        bp = np.unique(np.concatenate([-right[::-1], right, np.asarray(f.breakpoints, float)]))
        bp = bp[(bp >= -R) & (bp <= R)]
        res = integrate(lambda x: x * x * f.pdf(x), bp, budget)
    else:
        res = integrate_intervals(lambda x: x * x * f.pdf(x), iv, budget, extra_breaks=f.breakpoints)
    return res.value, res.error


# catalog ----------------------------------------------------------------------

_SQRT2PI = math.sqrt(2.0 * math.pi)


def standard_normal(dim=1):
    if dim == 1:
        return Density(
            name="normal", dim=1,
            pdf=lambda x: np.exp(-0.5 * np.asarray(x, float) ** 2) / _SQRT2PI,
            logpdf=lambda x: -0.5 * np.asarray(x, float) ** 2 - math.log(_SQRT2PI),
            sampler=lambda n, rng: rng.standard_normal(n),
            support=SupportDescriptor(FULL),
            tail_envelope=lambda R: float(special.erfc(R / math.sqrt(2.0))),
            moment_envelope=lambda R: 2.0 * (R * math.exp(-0.5 * R * R) / _SQRT2PI
                                             + 0.5 * float(special.erfc(R / math.sqrt(2.0)))),
            second_moment=SecondMoment("finite", 1.0),
            continuous=True, strictly_positive=True, sup=1.0 / _SQRT2PI,
        )
    if dim != 2:
        raise ValidationError("the catalog normal exists for dim 1 and 2")

    def logpdf(x):
        x = np.asarray(x, float).reshape(-1, 2)
        return -0.5 * np.sum(x * x, axis=1) - math.log(2.0 * math.pi)

    def formula(R):
        e = math.exp(-0.5 * R * R)
        return TailQuantities(R, e, 0.0, (R * R + 2.0) * e, 0.0, False)

    return Density(
        name="normal2d", dim=2,
        pdf=lambda x: np.exp(logpdf(x)), logpdf=logpdf,
        sampler=lambda n, rng: rng.standard_normal((n, 2)),
        support=SupportDescriptor(FULL),
        tail_envelope=lambda R: math.exp(-0.5 * R * R),
        moment_envelope=lambda R: (R * R + 2.0) * math.exp(-0.5 * R * R),
        tail_formula=formula,
        second_moment=SecondMoment("finite", 2.0),
        continuous=True, strictly_positive=True, sup=1.0 / (2.0 * math.pi),
    )


def normal(scale=1.0, name=None):
    """Centered normal with standard deviation ``scale`` (1-D)."""
    s = float(scale)
    c = math.log(s * _SQRT2PI)
    return Density(
        name=name or f"normal(sd={s:g})", dim=1,
        pdf=lambda x: np.exp(-0.5 * (np.asarray(x, float) / s) ** 2 - c),
        logpdf=lambda x: -0.5 * (np.asarray(x, float) / s) ** 2 - c,
        sampler=lambda n, rng: s * rng.standard_normal(n),
        support=SupportDescriptor(FULL),
        tail_envelope=lambda R: float(special.erfc(R / (s * math.sqrt(2.0)))),
        moment_envelope=lambda R: s * s * 2.0 * ((R / s) * math.exp(-0.5 * (R / s) ** 2) / _SQRT2PI
                                                 + 0.5 * float(special.erfc(R / (s * math.sqrt(2.0))))),
        second_moment=SecondMoment("finite", s * s),
        continuous=True, strictly_positive=True, sup=1.0 / (s * _SQRT2PI), scale=s,
    )


def laplace():
    return Density(
        name="laplace", dim=1,
        pdf=lambda x: 0.5 * np.exp(-np.abs(np.asarray(x, float))),
        logpdf=lambda x: -np.abs(np.asarray(x, float)) - math.log(2.0),
        sampler=lambda n, rng: rng.laplace(0.0, 1.0, n),
        support=SupportDescriptor(FULL),
        tail_envelope=lambda R: math.exp(-R),
        moment_envelope=lambda R: math.exp(-R) * (R * R + 2.0 * R + 2.0),
        second_moment=SecondMoment("finite", 2.0),
        continuous=True, strictly_positive=True, sup=0.5,
        breakpoints=(0.0,),
    )


def student_t3():
    dist = stats.t(3)
    c = 2.0 / (math.pi * math.sqrt(3.0))

    def moment_tail(R):
        one = (0.5 / math.sqrt(3.0)) * (0.5 * math.pi - math.atan(R / math.sqrt(3.0))) + R / (2.0 * (3.0 + R * R))
        return 2.0 * 9.0 * c * one

    return Density(
        name="student-t3", dim=1,
        pdf=lambda x: c * (1.0 + np.asarray(x, float) ** 2 / 3.0) ** -2,
        logpdf=lambda x: math.log(c) - 2.0 * np.log1p(np.asarray(x, float) ** 2 / 3.0),
        sampler=lambda n, rng: rng.standard_t(3, n),
        support=SupportDescriptor(FULL),
        tail_envelope=lambda R: 2.0 * float(dist.sf(R)),
        moment_envelope=moment_tail,
        second_moment=SecondMoment("finite", 3.0),
        continuous=True, strictly_positive=True, sup=c,
    )


def cauchy():
    return Density(
        name="cauchy", dim=1,
        pdf=lambda x: 1.0 / (math.pi * (1.0 + np.asarray(x, float) ** 2)),
        logpdf=lambda x: -math.log(math.pi) - np.log1p(np.asarray(x, float) ** 2),
        sampler=lambda n, rng: rng.standard_cauchy(n),
        support=SupportDescriptor(FULL),
        tail_envelope=lambda R: 1.0 - 2.0 * math.atan(R) / math.pi,
        moment_envelope=None,
        second_moment=SecondMoment("infinite"),
        continuous=True, strictly_positive=True, sup=1.0 / math.pi,
    )


def piecewise_constant(intervals, levels, name, params=None):
    """Density equal to ``levels[i]`` on the i-th closed interval, zero elsewhere.

    Levels are taken as given; callers normalise.
    """
    support = SupportDescriptor(INTERVALS, intervals)
    iv = support.intervals
    lev = np.broadcast_to(np.asarray(levels, dtype=float), (iv.shape[0],)).copy()
    lev.setflags(write=False)
    loglev = np.log(lev)
    lengths = iv[:, 1] - iv[:, 0]
    masses = lev * lengths
    probs = masses / masses.sum()
    lo_edge, hi_edge = float(iv[0, 0]), float(iv[-1, 1])

    def logpdf(x):
        x = np.asarray(x, dtype=float)
        i = support.interval_index(x)
        return np.where(i >= 0, loglev[np.clip(i, 0, None)], -np.inf)

    def sampler(n, rng):
        k = rng.choice(iv.shape[0], size=n, p=probs)
        return iv[k, 0] + lengths[k] * rng.random(n)

    def envelope(R):
        out = 0.0
        for (a, b), v in zip(iv, lev):
            if b > R:
                out += v * (b - max(a, R))
            if a < -R:
                out += v * (min(b, -R) - a)
        return out

    # b^3 - a^3 expanded around a so narrow intervals far out keep their digits
    a0 = iv[:, 0]
    mean_sq = float(math.fsum(lev * lengths * (a0 * a0 + a0 * lengths + lengths * lengths / 3.0)))
    return Density(
        name=name, dim=1,
        pdf=lambda x: np.exp(logpdf(x)), logpdf=logpdf, sampler=sampler,
        support=support, tail_envelope=envelope,
        moment_envelope=None,
        second_moment=SecondMoment("finite", mean_sq),
        continuous=False, strictly_positive=False, sup=float(lev.max()),
        scale=float(max(hi_edge - lo_edge, 1e-300)),
        params=dict(params or {}),
    )


def uniform(a=0.0, b=1.0, name=None):
    d = piecewise_constant([[a, b]], [1.0 / (b - a)], name or f"uniform[{a:g},{b:g}]",
                           {"left": a, "right": b})
    return d


def make_fstar(n_max=50):
    """Truncation of the comb f_star: height 1/Z on J_n = [n^2, n^2 + n^-6], n <= n_max.

    Z is the truncated sum of n^-6, so the truncation is exactly normalised.
    """
    n_max = int(n_max)
    if n_max < 2:
        raise ValidationError("n_max must be at least 2")
    n = np.arange(1, n_max + 1, dtype=float)
    widths = n ** -6.0
    z = math.fsum(widths)
    iv = np.column_stack([n * n, n * n + widths])
    return piecewise_constant(iv, 1.0 / z, "fstar", {"n_max": n_max, "Z": z})


@dataclass(frozen=True, eq=False)
class FatCantor:
    depth: int
    measure: Fraction
    intervals: np.ndarray
    density: Density


MAX_CANTOR_DEPTH = 22


def fat_cantor_intervals(depth):
    """Closed intervals of the depth-K Smith-Volterra-Cantor approximation A_K.

    Stage n removes the open middle interval of length 4^-n from each of the
    2^(n-1) current intervals.  All endpoints are dyadic, hence exact in
    double precision.
    """
    iv = np.array([[0.0, 1.0]])
    for n in range(1, depth + 1):
        mid = 0.5 * (iv[:, 0] + iv[:, 1])
        gap = 0.5 * 4.0 ** -n
        left = np.column_stack([iv[:, 0], mid - gap])
        right = np.column_stack([mid + gap, iv[:, 1]])
        iv = np.stack([left, right], axis=1).reshape(-1, 2)
    return iv


def make_fat_cantor(depth):
    depth = int(depth)
    if not 1 <= depth <= 40:
        raise ValidationError("depth must be between 1 and 40")
    if depth > MAX_CANTOR_DEPTH:
        raise ValidationError(
            f"depth {depth} needs 2^{depth} explicit intervals; the interval list is "
            f"materialised only up to depth {MAX_CANTOR_DEPTH}")
    measure = Fraction(1, 2) + Fraction(1, 2 ** (depth + 1))
    iv = fat_cantor_intervals(depth)
    iv.setflags(write=False)
    dens = piecewise_constant(iv, 1.0 / float(measure), f"fat-cantor(K={depth})",
                              {"depth": depth, "measure": float(measure)})
    return FatCantor(depth, measure, iv, dens)


def export_intervals_csv(intervals, file):
    lines = ["left,right"]
    lines += [f"{a:.17g},{b:.17g}" for a, b in np.asarray(intervals)]
    text = "\n".join(lines) + "\n"
    if hasattr(file, "write"):
        file.write(text)
    else:
        with open(file, "w") as fh:
            fh.write(text)


@dataclass(frozen=True)
class FNaturalParams:
    """Exact parameters of the n-th tent block of f_natural.

    ``log_w`` = -n^4 is exact; ``N`` is an exact Python int;
    ``w`` underflows to 0.0 in double precision for n >= 6.
    """

    n: int
    log_w: float
    w: float
    N: int
    block_width: float  # 4 N w, the length of I_n

    def center(self, k):
        return self.n + (4 * k + 2) * self.w

    def support(self, k):
        return (self.n + (4 * k + 1) * self.w, self.n + (4 * k + 3) * self.w)

    @property
    def interval(self):
        return (float(self.n), self.n + self.block_width)

    def centers(self):
        return self.n + (4.0 * np.arange(self.N) + 2.0) * self.w


def fnatural_params(n):
    """Parameters w_n = e^-n^4, N_n = ceil(e^n^4 / (32 n^4)) of the tent comb.

    Raises :class:`OverflowAtScale` when N_n does not fit in a signed 64-bit
    integer; the log-scale comparison decides this before any exponential.
    """
    import mpmath

    n = int(n)
    if n < 2:
        raise ValidationError("n must be at least 2")
    n4 = n ** 4
    log_n = n4 - math.log(32.0 * n4)
    if log_n > 63.0 * math.log(2.0):
        raise OverflowAtScale(f"N_{n} ~ exp({log_n:.1f}) exceeds 2^63")
    with mpmath.workdps(60):
        N = int(mpmath.ceil(mpmath.exp(n4) / (32 * n4)))
        w = mpmath.exp(-n4)
        width = 4 * N * w
    if not width < mpmath.mpf(1) / 4:
        raise AssertionError("tent block does not fit in [n, n + 1/4]")
    return FNaturalParams(n, -float(n4), float(w), N, float(width))


def catalog(fstar_n_max=50, cantor_depth=8):
    """Named catalog densities; names are stable CLI identifiers."""
    return {
        "normal": standard_normal(1),
        "normal2d": standard_normal(2),
        "normal-narrow": normal(0.25, name="normal-narrow"),
        "laplace": laplace(),
        "student-t3": student_t3(),
        "cauchy": cauchy(),
        "uniform": uniform(0.0, 1.0, name="uniform"),
        "fstar": make_fstar(fstar_n_max),
        "fat-cantor": make_fat_cantor(cantor_depth).density,
    }


def get_density(name, **kw):
    cat = catalog(**kw)
    if name not in cat:
        raise KeyError(f"unknown target {name!r}; choose from {', '.join(sorted(cat))}")
    return cat[name]


def is_ent_eligible(f):
    """Catalog metadata reduction: continuous, strictly positive and bounded targets
    have finite positive entropy integral."""
    return f.continuous and f.strictly_positive and math.isfinite(f.sup)
