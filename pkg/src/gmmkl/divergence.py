"""KL estimators, the log-ratio (uniform integrability) profile, and inequality checks."""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp, xlogy

from .densities import FULL, INTERVALS, Density, SecondMoment, SupportDescriptor, truncated_second_moment
from .errors import DimensionMismatch, ValidationError
from .gmm import FiniteGMM, log_exp_quadratic_moment
from .quadrature import QuadratureBudget, geometric_breaks, integrate, integrate_intervals

QUADRATURE = "quadrature-1d"
MONTE_CARLO = "monte-carlo"


@dataclass(frozen=True)
class KLEstimate:
    """A KL value with its error: an absolute bound for quadrature, a standard error for MC."""

    value: float
    method: str
    error: float
    n_evals: int
    diagnostic: str = ""
    workers: int = 1

    @property
    def finite(self):
        return math.isfinite(self.value)


def _kl_integrand(f, g, positive=False):
    def h(x):
        lf = f.logpdf(x)
        out = np.zeros_like(lf)
        pos = np.isfinite(lf)
        if np.any(pos):
            lr = lf[pos] - g.logpdf(x[pos])
            if positive:
                lr = np.maximum(lr, 0.0)
            out[pos] = np.exp(lf[pos]) * lr
        return out
    return h


def _shell_bound(f, g, T, n_shells=64, n_probe=64):
    """Envelope bound on the KL integrand mass beyond |x| = T.

    Sums tail_envelope(T 2^j) * max |log f - log g| over dyadic shells; returns
    inf when the terms stop decaying (the integrand is not integrable).  With a
    second-moment envelope the shell term may instead be
    max(|log f - log g| / (1 + x^2)) * (tail mass + tail second moment), which
    decays whenever log g is quadratic and F has a finite second moment.
    """
    menv = f.moment_envelope
    total = 0.0
    prev = math.inf
    growth = 0
    first = None
    for j in range(n_shells):
        a = T * 2.0 ** j
        env = f.tail_envelope(a)
        if env <= 0.0:
            return total
        xs = np.linspace(a, 2.0 * a, n_probe)
        xs = np.concatenate([xs, -xs])
        lr = np.abs(f.logpdf(xs) - g.logpdf(xs))
        ok = np.isfinite(lr)
        lr, xs = lr[ok], xs[ok]
        term = env * (float(lr.max()) if lr.size else 0.0)
        if menv is not None and lr.size:
            term = min(term, float(np.max(lr / (1.0 + xs * xs))) * (env + menv(a)))
        total += term
        if first is None:
            first = term
        if term >= prev:
            growth += 1
            if growth >= 6:
                return math.inf
        else:
            growth = 0
        if term <= 1e-3 * max(first, 1e-300) and term < prev and j >= 3:
            # geometric decay from here on: remainder is at most a few more terms
            return total + 2.0 * term
        prev = term
    return math.inf


def kl_quadrature_1d(f, g, budget=None):
    """KL(f || g) by adaptive panel quadrature for a 1-D target.

    Integrates over each support interval of ``f``; for full-space targets the
    truncation radius is doubled until the envelope bound on the neglected tails
    is below a quarter of the tolerance.  When the tails cannot be certified the
    estimate is returned with ``value=inf`` and a diagnostic.
    """
    return _quadrature_1d(f, g, budget, positive=False)


def log_ratio_mean_1d(f, g, budget=None):
    """Integral of log_+(f / g) dF by the same quadrature as :func:`kl_quadrature_1d`."""
    return _quadrature_1d(f, g, budget, positive=True)


def _quadrature_1d(f, g, budget, positive):
    budget = budget or QuadratureBudget()
    if f.dim != 1 or g.dim != 1:
        raise DimensionMismatch("kl_quadrature_1d needs 1-D f and g")
    h = _kl_integrand(f, g, positive)
    tol = budget.tol
    if f.support.kind != FULL:
        core = f.core_radius()
        res = integrate_intervals(h, f.quadrature_intervals(core), budget, tol=tol,
                                  extra_breaks=f.breakpoints)
        return KLEstimate(res.value, QUADRATURE, res.error, res.n_evals)

    g_reach = float(np.max(np.abs(g.means[:, 0]) + 8.0 * np.sqrt(g.covs[:, 0, 0])))
    T = max(8.0 * f.scale, 1.0)
    rem = math.inf
    history = []
    for _ in range(60):
        rem = _shell_bound(f, g, T)
        history.append(rem)
        if rem <= tol / 4.0:
            break
        if len(history) >= 8 and all(not math.isfinite(r) for r in history[-8:]):
            break
        T *= 2.0
    if not rem <= tol / 4.0:
        return KLEstimate(math.inf, QUADRATURE, math.inf, 0,
                          diagnostic=f"DivergentIntegrand: tail bound of log f - log g does not "
                                     f"decay (last truncation radius {T:.3g})")
    right = geometric_breaks(0.0, T)
    inner = [b for b in (g_reach, *f.breakpoints) if -T < b < T]
    bp = np.unique(np.concatenate([-right[::-1], right, inner, [-x for x in inner]]))
    res = integrate(h, bp, budget, tol=0.75 * tol)
    return KLEstimate(res.value, QUADRATURE, res.error + rem, res.n_evals)


def _seeded_draws(f, n, seed, workers):
    """Draws of F split across workers; worker i uses SeedSequence([seed, i])."""
    workers = max(1, int(workers))
    sizes = [len(c) for c in np.array_split(np.arange(n), workers)]
    seqs = [np.random.SeedSequence([int(seed), i]) for i in range(workers)]
    if workers == 1:
        return [f.sample(sizes[0], seqs[0])]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda a: f.sample(*a), zip(sizes, seqs)))


def kl_monte_carlo(f, g, n, seed, workers=1):
    """Sample mean of log f(X) - log g(X), X ~ F, with its standard error."""
    n = int(n)
    if n < 100:
        raise ValidationError("kl_monte_carlo needs n >= 100")
    x = np.concatenate(_seeded_draws(f, n, seed, workers))
    v = f.logpdf(x) - g.logpdf(x)
    mean = float(np.mean(v))
    se = float(np.std(v, ddof=1) / math.sqrt(n))
    return KLEstimate(mean, MONTE_CARLO, se, n, workers=max(1, int(workers)))


@dataclass(frozen=True)
class LogRatioProfile:
    """Per-index means and truncated tail means of L_m = log_+(f / g_m) under F.

    ``tail[m, i]`` estimates the integral of L_m over {L_m > thresholds[i]}.
    """

    thresholds: np.ndarray
    mean_L: np.ndarray
    se_L: np.ndarray
    tail: np.ndarray
    tail_se: np.ndarray
    n: int
    seed: int

    def sup_tail(self, M):
        i = int(np.flatnonzero(self.thresholds == M)[0])
        return float(self.tail[:, i].max())


def log_ratio_profile(f, gs, thresholds, n, seed, workers=1):
    thr = np.sort(np.asarray(thresholds, dtype=float))
    x = np.concatenate(_seeded_draws(f, int(n), seed, workers))
    lf = f.logpdf(x)
    means, ses, tails, tail_ses = [], [], [], []
    for g in gs:
        L = np.maximum(lf - g.logpdf(x), 0.0)
        means.append(L.mean())
        ses.append(L.std(ddof=1) / math.sqrt(L.size))
        cut = L[None, :] * (L[None, :] > thr[:, None])
        tails.append(cut.mean(axis=1))
        tail_ses.append(cut.std(axis=1, ddof=1) / math.sqrt(L.size))
    return LogRatioProfile(thr, np.array(means), np.array(ses), np.array(tails),
                           np.array(tail_ses), int(n), int(seed))


# inequality checks ----------------------------------------------------------

@dataclass(frozen=True)
class InequalityCheck:
    """Both sides of ``lhs <= rhs``; ``gap = rhs - lhs``."""

    lhs: float
    rhs: float
    error: float = 0.0

    @property
    def gap(self):
        return self.rhs - self.lhs

    @property
    def holds(self):
        return self.lhs <= self.rhs + self.error


def check_log_sum(a, b):
    """(sum a) log(sum a / sum b) <= sum a_i log(a_i / b_i), with 0 log 0 = 0."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(f"a has {a.size} entries, b has {b.size}")
    if np.any(a < 0) or np.any(b <= 0):
        raise ValidationError("need a >= 0 and b > 0")
    sa, sb = math.fsum(a), math.fsum(b)
    lhs = float(xlogy(sa, sa) - xlogy(sa, sb))
    rhs = math.fsum(xlogy(a, a) - xlogy(a, b))
    return InequalityCheck(lhs, rhs)


def mixture_density(a, qs, name="mixture"):
    """The 1-D density sum_i a_i q_i as a :class:`Density`."""
    a = np.asarray(a, dtype=float)
    if len(qs) == 1:
        return qs[0]
    if any(q.dim != 1 for q in qs):
        raise DimensionMismatch("mixture_density is 1-D")
    loga = np.log(np.where(a > 0, a, 1.0))
    live = [i for i in range(len(qs)) if a[i] > 0]

    def logpdf(x):
        x = np.asarray(x, dtype=float)
        return logsumexp(np.stack([loga[i] + qs[i].logpdf(x) for i in live]), axis=0)

    def sampler(n, rng):
        k = rng.choice(len(qs), size=n, p=a / a.sum())
        out = np.empty(n)
        for i in live:
            sel = k == i
            out[sel] = qs[i].sampler(int(sel.sum()), rng)
        return out

    if all(q.support.kind == INTERVALS for q in qs):
        iv = sorted(tuple(map(float, row)) for i in live for row in qs[i].support.intervals)
        merged = [list(iv[0])]
        for lo, hi in iv[1:]:
            if lo <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], hi)
            else:
                merged.append([lo, hi])
        support = SupportDescriptor(INTERVALS, merged)
    else:
        support = SupportDescriptor(FULL)
    bps = {float(b) for i in live for b in qs[i].breakpoints}
    for i in live:
        if qs[i].support.kind == INTERVALS:
            bps.update(map(float, qs[i].support.intervals.ravel()))
    envs = [(a[i], qs[i].tail_envelope) for i in live]
    menvs = [(a[i], qs[i].moment_envelope) for i in live]
    has_m = all(m is not None for _, m in menvs)
    kinds = {qs[i].second_moment.kind for i in live}
    if kinds == {"finite"}:
        sm = SecondMoment("finite", float(sum(a[i] * qs[i].second_moment.value for i in live)))
    elif "infinite" in kinds:
        sm = SecondMoment("infinite")
    else:
        sm = SecondMoment("unknown")
    return Density(
        name=name, dim=1,
        pdf=lambda x: np.exp(logpdf(x)), logpdf=logpdf, sampler=sampler,
        support=support,
        tail_envelope=lambda R: float(sum(w * e(R) for w, e in envs)),
        moment_envelope=(lambda R: float(sum(w * m(R) for w, m in menvs))) if has_m else None,
        second_moment=sm,
        continuous=all(qs[i].continuous for i in live),
        strictly_positive=any(qs[i].strictly_positive for i in live),
        sup=float(sum(a[i] * qs[i].sup for i in live)),
        breakpoints=tuple(sorted(bps)),
        scale=max(qs[i].scale for i in live),
    )


@dataclass(frozen=True)
class ConvexityCheck(InequalityCheck):
    lhs_estimate: Optional[KLEstimate] = None
    rhs_terms: tuple = field(default_factory=tuple)


def check_mixture_convexity(a, qs, rs, budget=None):
    """KL(sum a_i q_i || sum a_i r_i) <= sum a_i KL(q_i || r_i), both sides by quadrature."""
    a = np.asarray(a, dtype=float)
    if not (len(a) == len(qs) == len(rs)):
        raise DimensionMismatch("a, qs and rs must have equal length")
    if np.any(a < 0) or abs(math.fsum(a) - 1.0) > 1e-12:
        raise ValidationError("a must lie on the simplex")
    if len(qs) == 1:
        q_mix, r_mix = qs[0], rs[0]
    else:
        q_mix = mixture_density(a, qs)
        r_mix = FiniteGMM.combine(list(zip(a, rs)))
    lhs = kl_quadrature_1d(q_mix, r_mix, budget)
    terms = tuple(kl_quadrature_1d(q, r, budget) if ai > 0 else None for ai, q, r in zip(a, qs, rs))
    rhs = math.fsum(ai * t.value for ai, t in zip(a, terms) if t is not None)
    err = lhs.error + math.fsum(ai * t.error for ai, t in zip(a, terms) if t is not None)
    return ConvexityCheck(lhs.value, rhs, err, lhs, terms)


@dataclass(frozen=True)
class VariationalRecord:
    R: float
    lhs_truncated: float
    rhs: float
    error: float

    @property
    def holds(self):
        return self.lhs_truncated <= self.rhs + self.error


def check_variational(f, g, t0, R_grid, kl=None, budget=None):
    """t0 * int_{B_R} |x|^2 dF <= KL(f||g) + log Z for each radius R.

    ``kl`` may be supplied (an assumed or previously measured value); otherwise
    it is measured with :func:`kl_quadrature_1d`.  With an assumed finite KL for
    a target of infinite second moment, some record eventually fails: that is
    the contradiction the necessity argument rests on.
    """
    log_z = log_exp_quadratic_moment(g, t0)
    if kl is None:
        est = kl_quadrature_1d(f, g, budget)
        kl_value, kl_err = est.value, est.error
    else:
        kl_value, kl_err = float(kl), 0.0
    out = []
    for R in R_grid:
        m2, e2 = truncated_second_moment(f, R, budget)
        out.append(VariationalRecord(float(R), t0 * m2, kl_value + log_z, t0 * e2 + kl_err))
    return out


def check_plogp(p, t_grid):
    """max over the grid of t log_+ t - t^p / (p - 1); nonpositive when the inequality holds."""
    p = float(p)
    if p <= 1:
        raise ValidationError("p must exceed 1")
    t = np.asarray(t_grid, dtype=float)
    lhs = t * np.log(np.maximum(t, 1.0))
    rhs = t ** p / (p - 1.0)
    return float(np.max(lhs - rhs))
