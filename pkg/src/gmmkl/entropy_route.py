"""Entropy-route construction: radius schedule, compact smoothing approximation, two-part mixtures.

For a continuous, strictly positive target with finite second moment the
m-th approximant is

    g_m = (1 - alpha_R) h_m + alpha_R N(0, R^2 I),   R = R_m,

where h_m is within eta_m = 2^(-m-3) m_m of f on the ball B_R and m_m is a
lower bound for f there.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .densities import FULL, Density, TailQuantities, is_ent_eligible, tail_quantities
from .divergence import KLEstimate, kl_monte_carlo, kl_quadrature_1d, log_ratio_mean_1d, log_ratio_profile
from .errors import InfimumTooSmall, ScheduleInfeasible, ToleranceUnreachable, ValidationError
from .gmm import FiniteGMM
from .quadrature import QuadratureBudget

GRID_RATIO = 2.0 ** (1.0 / 64.0)
# lattice step as a fraction of the smoothing bandwidth; at 1/2 the lattice
# ripple is of relative size exp(-8 pi^2)
STEP_RATIO = 0.5
DELTA = 0.1
INF_SAFETY = 0.9
REFINEMENT_CAP = 12
MAX_COMPONENTS = 400_000
# bound on lattice points generated before zero-weight points are dropped
LATTICE_FACTOR = 8


@dataclass(frozen=True)
class Condition:
    """One schedule inequality ``lhs < rhs``."""

    name: str
    lhs: float
    rhs: float

    @property
    def holds(self):
        return self.lhs < self.rhs


def schedule_conditions(tail: TailQuantities, m, dim):
    """The five tail inequalities a radius must satisfy at index m."""
    R, a = tail.R, tail.alpha
    thr = 2.0 ** (-m - 4)
    a_log = a * math.log(1.0 / a) if a > 0 else 0.0
    return (
        Condition("alpha<1/4", a, 0.25),
        Condition("beta", tail.beta, thr),
        Condition("alpha*log(1/alpha)", a_log, thr),
        Condition("alpha*(d/2)*log(2*pi*R^2)", a * 0.5 * dim * math.log(2.0 * math.pi * R * R), thr),
        Condition("mu2/(2R^2)", tail.mu2 / (2.0 * R * R), thr),
    )


@dataclass(frozen=True)
class RadiusChoice:
    m: int
    R: float
    tail: TailQuantities
    conditions: tuple

    @property
    def all_hold(self):
        return all(c.holds for c in self.conditions)


def select_radius(f: Density, m, R_prev=None, *, R0=1.0, ratio=GRID_RATIO, delta=DELTA,
                  R_max=1e6, budget=None):
    """Smallest grid radius R0 * ratio^k >= max(1, (1 + delta) R_prev) meeting all five conditions."""
    if f.second_moment_kind == "infinite":
        raise ScheduleInfeasible(
            f"{f.name}: infinite second moment, the tail second-moment condition can never hold")
    floor = max(1.0, (1.0 + delta) * R_prev) if R_prev is not None else 1.0
    k = max(0, math.ceil(math.log(floor / R0) / math.log(ratio) - 1e-9))
    while True:
        R = R0 * ratio ** k
        if R > R_max:
            raise ScheduleInfeasible(f"{f.name}: no grid radius up to {R_max:g} satisfies the conditions at m={m}")
        if R >= floor:
            tail = tail_quantities(f, R, budget)
            if tail.mu2_diverges:
                raise ScheduleInfeasible(
                    f"{f.name}: tail second moment diverges at R={R:g}; it does not vanish as R grows")
            conds = schedule_conditions(tail, m, f.dim)
            if all(c.holds for c in conds):
                return RadiusChoice(m, R, tail, conds)
        k += 1


def radius_schedule(f: Density, m_max, budget=None):
    """R_1 < ... < R_{m_max} chosen by :func:`select_radius` in turn."""
    out, R_prev = [], None
    for m in range(1, int(m_max) + 1):
        choice = select_radius(f, m, R_prev, budget=budget)
        out.append(choice)
        R_prev = choice.R
    return out


def ball_grid(R, step, dim):
    """Points of the lattice step*Z^d inside the closed ball of radius R."""
    n = int(math.floor(R / step))
    ax = step * np.arange(-n, n + 1)
    if dim == 1:
        return ax[:, None]
    mesh = np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    return mesh[np.sum(mesh * mesh, axis=1) <= R * R]


def _verification_points(R, step, dim, centres=None, sigma=None):
    """Grid of the given step on B_R; in 1-D, when the lattice ``centres`` is
    given, the fine step is used only within 12 sigma of the lattice hull.
    Beyond that the mixture is below exp(-72) of its peak and the target
    vanishes, so a coarse grid of step R/4096 suffices there."""
    if dim == 1 and centres is not None:
        lo = max(-R, float(centres[:, 0].min()) - 12.0 * sigma)
        hi = min(R, float(centres[:, 0].max()) + 12.0 * sigma)
        fine = lo + step * np.arange(int(math.floor((hi - lo) / step)) + 1)
        coarse = np.linspace(-R, R, 8193)
        coarse = coarse[(coarse < lo) | (coarse > hi)]
        return np.unique(np.concatenate([fine, coarse, [lo, hi, -R, R]]))[:, None]
    pts = ball_grid(R, step, dim)
    if dim == 1:
        pts = np.unique(np.concatenate([pts[:, 0], [-R, R]]))[:, None]
    return pts


def _eval(f, pts):
    return f.pdf(pts[:, 0] if f.dim == 1 else pts)


@dataclass(frozen=True)
class CompactApprox:
    h: FiniteGMM
    sup_error: float
    sigma: float
    R_ext: float
    h_min: float
    attempts: int


def compact_uniform_approx(f: Density, R, eta, *, sigma0=None, cap=REFINEMENT_CAP,
                           max_components=MAX_COMPONENTS):
    """Gaussian smoothing of ``f`` discretised on a lattice, refined until the sup-error on B_R is below eta.

    Components sit at lattice points of step ``STEP_RATIO * sigma`` (sigma is
    the shared standard deviation) with raw weights f(x_i) * step^d, renormalised.  The lattice
    covers B_{R+3 sigma} and is widened until the mass it misses cannot
    disturb the sup-error through renormalisation.  sigma is halved until a
    verification grid of a quarter lattice step passes; after ``cap`` halvings, or when
    the next lattice would carry more than ``max_components`` nonzero weights,
    ToleranceUnreachable is raised carrying the best approximant found.
    """
    R, eta = float(R), float(eta)
    if not eta > 0:
        raise ValidationError("eta must be positive")
    d = f.dim
    if eta > f.sup:
        wide = FiniteGMM.normal(np.zeros(d), max(R, 1.0) ** 2, d)
        pts = _verification_points(R, R / 256.0, d)
        hv = wide.pdf(pts if d > 1 else pts[:, 0])
        err = float(np.max(np.abs(hv - _eval(f, pts))))
        if err < eta:
            return CompactApprox(wide, err, max(R, 1.0), R, float(hv.min()), 0)
    if sigma0 is None:
        sigma0 = min(f.scale, R) * min(1.0, 4.0 * math.sqrt(eta / f.sup))
    best: Optional[CompactApprox] = None
    for k in range(cap + 1):
        sigma = sigma0 / 2.0 ** k
        R_ext = R + 3.0 * sigma
        if f.support.kind == FULL and f.tail_envelope is not None:
            while f.tail_envelope(R_ext) * f.sup >= eta / 8.0:
                R_ext += max(sigma, 0.25 * f.scale)
        else:
            R_ext = min(R_ext, max(f.core_radius(), R) + 3.0 * sigma)
        step = STEP_RATIO * sigma
        n_axis = 2 * int(math.floor(R_ext / step)) + 1
        if n_axis ** d > LATTICE_FACTOR * max_components:
            break
        centres = ball_grid(R_ext, step, d)
        raw = _eval(f, centres) * step ** d
        keep = raw > 0
        if np.count_nonzero(keep) > max_components:
            break
        centres, raw = centres[keep], raw[keep]
        if raw.size == 0:
            raise ToleranceUnreachable(f"{f.name}: density vanishes on the smoothing lattice")
        h = FiniteGMM.isotropic(raw / math.fsum(raw), centres, sigma * sigma)
        pts = _verification_points(R, step / 4.0, d, centres, sigma)
        hv = h.pdf(pts if d > 1 else pts[:, 0])
        err = float(np.max(np.abs(hv - _eval(f, pts))))
        cand = CompactApprox(h, err, sigma, R_ext, float(hv.min()), k + 1)
        if best is None or err < best.sup_error:
            best = cand
        if err < eta:
            return cand
    achieved = best.sup_error if best is not None else math.inf
    raise ToleranceUnreachable(
        f"{f.name}: sup-error {achieved:.3g} on B_{R:g} did not reach eta={eta:.3g}",
        best=best, achieved=achieved)


def ball_infimum(f: Density, R, n=8193):
    """Grid minimum of f on B_R times the safety factor."""
    pts = _verification_points(R, 2.0 * R / (n - 1), f.dim)
    return INF_SAFETY * float(np.min(_eval(f, pts)))


@dataclass(frozen=True)
class EntropyApproximant:
    m: int
    radius: RadiusChoice
    m_inf: float
    eta: float
    h: FiniteGMM
    g: FiniteGMM
    sup_error: float
    sigma: float
    h_min: float
    tolerance_met: bool

    @property
    def R(self):
        return self.radius.R

    @property
    def alpha(self):
        return self.radius.tail.alpha

    @property
    def compact_bound(self):
        return 2.0 ** (-self.m - 2) + 2.0 * self.alpha

    @property
    def tail_bound(self):
        t = self.radius.tail
        a, R = t.alpha, t.R
        a_log = a * math.log(1.0 / a) if a > 0 else 0.0
        return t.beta + a_log + a * 0.5 * self.g.dim * math.log(2.0 * math.pi * R * R) + t.mu2 / (2.0 * R * R)

    @property
    def bound(self):
        return self.compact_bound + self.tail_bound

    @property
    def proof_bound(self):
        """2^(-m-1) + 2 alpha: the compact and tail bounds with both 2^(-m-2) terms summed."""
        return 2.0 ** (-self.m - 1) + 2.0 * self.alpha


def two_part_mixture(h: FiniteGMM, alpha, R):
    """(1 - alpha) h + alpha N(0, R^2 I), the wide Gaussian kept last even at weight 0."""
    d = h.dim
    w = np.concatenate([(1.0 - alpha) * h.weights, [alpha]])
    mu = np.concatenate([h.means, np.zeros((1, d))])
    cov = np.concatenate([h.covs, (R * R * np.eye(d))[None]])
    return FiniteGMM(w, mu, cov)


def build_entropy_approximant(f: Density, m, R_prev=None, *, strict=True, budget=None, radius=None):
    """The m-th entropy-route approximant.

    With ``strict=False`` an unreachable sup-error tolerance is recorded in
    ``tolerance_met`` and the best smoothing found is used; every downstream
    inequality is still measured.
    """
    radius = radius or select_radius(f, m, R_prev, budget=budget)
    R = radius.R
    m_inf = ball_infimum(f, R)
    if not m_inf > 1e-300:
        raise InfimumTooSmall(f"{f.name}: infimum on B_{R:g} underflows ({m_inf:.3g})")
    eta = 2.0 ** (-m - 3) * m_inf
    try:
        approx = compact_uniform_approx(f, R, eta)
        met = True
    except ToleranceUnreachable as exc:
        if strict or exc.best is None:
            raise
        approx, met = exc.best, False
    g = two_part_mixture(approx.h, radius.tail.alpha, R)
    return EntropyApproximant(m, radius, m_inf, eta, approx.h, g, approx.sup_error,
                              approx.sigma, approx.h_min, met)


SCHEDULE_COLUMNS = ("m", "R_m", "alpha", "beta", "mu2", "eta_m", "components", "bound",
                    "measured_L", "measured_KL", "measured_L_error", "measured_KL_error",
                    "mc_L", "mc_L_se", "proof_bound", "compact_bound", "tail_bound",
                    "m_inf", "sigma", "sup_error", "tolerance_met", "ratio_deviation")


@dataclass(frozen=True)
class EntropySchedule:
    target: str
    approximants: tuple
    rows: tuple
    profile: object
    kl: tuple
    L: tuple
    seed: int
    strict: bool = True
    probe: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def write_csv(self, file):
        write_rows(file, SCHEDULE_COLUMNS, self.rows)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_rows(file, columns, rows):
    """CSV with 17-significant-digit numbers; ``file`` is a path or a text stream."""
    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
    if hasattr(file, "write"):
        emit(file)
    else:
        with open(file, "w", newline="") as fh:
            emit(fh)


def probe_grid(f: Density, n=601):
    return np.linspace(-3.0 * f.scale, 3.0 * f.scale, n)


def entropy_schedule(f: Density, m_max, *, strict=True, seed=0, n_mc=100_000,
                     thresholds=(0.25, 0.5, 1.0, 2.0, 4.0), budget=None, workers=1):
    """Build g_1..g_{m_max} and measure KL and the mean log-ratio for each."""
    if f.second_moment_kind == "infinite":
        raise ScheduleInfeasible(
            f"{f.name}: infinite second moment; the quadratic-moment lower bound on KL(f||g) "
            "grows without limit for every finite GMM g, so no sequence can drive KL to 0")
    if not is_ent_eligible(f):
        raise ScheduleInfeasible(f"{f.name}: not continuous, strictly positive and bounded")
    budget = budget or QuadratureBudget()
    apps = [build_entropy_approximant(f, r.m, strict=strict, budget=budget, radius=r)
            for r in radius_schedule(f, m_max, budget)]
    gs = [a.g for a in apps]
    profile = log_ratio_profile(f, gs, thresholds, n_mc, seed, workers)
    kls, Ls = [], []
    for a in apps:
        if f.dim == 1:
            kls.append(kl_quadrature_1d(f, a.g, budget))
            Ls.append(log_ratio_mean_1d(f, a.g, budget))
        else:
            kls.append(kl_monte_carlo(f, a.g, n_mc, seed, workers))
            Ls.append(KLEstimate(float(profile.mean_L[a.m - 1]), "monte-carlo",
                                 float(profile.se_L[a.m - 1]), n_mc))
    probe = probe_grid(f) if f.dim == 1 else None
    rows = []
    for i, (a, kl, L) in enumerate(zip(apps, kls, Ls)):
        t = a.radius.tail
        if probe is not None:
            dev = float(np.max(np.abs(f.pdf(probe) / a.g.pdf(probe) - 1.0)))
        else:
            dev = math.nan
        rows.append({
            "m": a.m, "R_m": a.R, "alpha": t.alpha, "beta": t.beta, "mu2": t.mu2,
            "eta_m": a.eta, "components": a.g.n_components, "bound": a.bound,
            "measured_L": L.value, "measured_KL": kl.value,
            "measured_L_error": L.error, "measured_KL_error": kl.error,
            "mc_L": float(profile.mean_L[i]), "mc_L_se": float(profile.se_L[i]),
            "proof_bound": a.proof_bound, "compact_bound": a.compact_bound,
            "tail_bound": a.tail_bound, "m_inf": a.m_inf, "sigma": a.sigma,
            "sup_error": a.sup_error, "tolerance_met": a.tolerance_met,
            "ratio_deviation": dev,
        })
    return EntropySchedule(f.name, tuple(apps), tuple(rows), profile, tuple(kls), tuple(Ls),
                           int(seed), strict, probe if probe is not None else np.zeros(0))
