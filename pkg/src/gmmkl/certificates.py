"""Certificates: necessity lower bounds, class-membership checks and counterexample verifiers.

A certificate is a list of inequality records, each with both sides
evaluated, a tolerance and a pass flag, plus a verdict and provenance.  The
flags and the verdict can be recomputed from the stored numbers (:meth:`Certificate.audit`).
"""

import json
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .densities import (FULL, INTERVALS, Density, FatCantor, SupportDescriptor, SecondMoment,
                        fnatural_params, make_fat_cantor, make_fstar, standard_normal,
                        truncated_second_moment)
from .divergence import kl_quadrature_1d
from .entropy_route import build_entropy_approximant, compact_uniform_approx, radius_schedule
from .errors import ParseError, ValidationError
from .gmm import FiniteGMM, default_t0, log_exp_quadratic_moment
from .quadrature import QuadratureBudget, geometric_breaks, integrate, integrate_intervals
from .support_route import fstar_pieces

NECESSITY = "necessity"
MEMBERSHIP = "membership"
REFUTATION = "refutation"

HOLDS = "holds"
FAILS = "fails"
DIVERGES = "diverges"
REFUTATION_DIVERGES = "refutation-diverges"

# Verdicts that assert every record passes; "fails" asserts at least one does not.
_ALL_PASS = (HOLDS, DIVERGES, REFUTATION_DIVERGES)

LE, LT, GE, GT, INFO = "<=", "<", ">=", ">", "info"


def _passes(lhs, rel, rhs, tol):
    if rel == INFO:
        return True
    if any(isinstance(v, float) and math.isnan(v) for v in (lhs, rhs)):
        return False
    if rel == LE:
        return lhs <= rhs + tol
    if rel == LT:
        return lhs < rhs + tol
    if rel == GE:
        return lhs >= rhs - tol
    if rel == GT:
        return lhs > rhs - tol
    raise ValidationError(f"unknown relation {rel!r}")


@dataclass(frozen=True)
class Record:
    """``lhs rel rhs`` up to ``tolerance``; relation ``info`` records a value without a claim."""

    name: str
    lhs: float
    rel: str
    rhs: float
    tolerance: float = 0.0
    passed: bool = True

    @classmethod
    def make(cls, name, lhs, rel, rhs, tolerance=0.0):
        lhs, rhs, tolerance = float(lhs), float(rhs), float(tolerance)
        return cls(name, lhs, rel, rhs, tolerance, _passes(lhs, rel, rhs, tolerance))

    def recompute(self):
        return _passes(self.lhs, self.rel, self.rhs, self.tolerance)


@dataclass(frozen=True)
class Certificate:
    kind: str
    subject: str
    statement: tuple
    verdict: str
    provenance: dict = field(default_factory=dict)
    witness: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.verdict != FAILS

    def failing(self):
        return [r for r in self.statement if not r.passed]

    def audit(self):
        """True when every stored flag and the verdict follow from the stored numbers."""
        if any(r.recompute() != r.passed for r in self.statement):
            return False
        all_pass = all(r.passed for r in self.statement)
        return all_pass if self.verdict in _ALL_PASS else not all_pass

    def to_dict(self):
        return {
            "kind": self.kind, "subject": self.subject, "verdict": self.verdict,
            "statement": [{"name": r.name, "lhs": r.lhs, "rel": r.rel, "rhs": r.rhs,
                           "tolerance": r.tolerance, "pass": r.passed} for r in self.statement],
            "provenance": self.provenance, "witness": self.witness,
        }

    def dumps(self):
        return dumps_certificate(self)


def _verdict(records, success=HOLDS):
    return success if all(r.passed for r in records) else FAILS


def _jnum(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isfinite(v):
            return format(v, ".17g")
        return json.dumps("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    return None


def _jdump(v):
    num = _jnum(v)
    if num is not None:
        return num
    if isinstance(v, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_jdump(x)}" for k, x in sorted(v.items())) + "}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_jdump(x) for x in v) + "]"
    if v is None:
        return "null"
    return json.dumps(str(v))


def dumps_certificate(cert: Certificate):
    """JSON with 17-digit numbers, one statement record per line; non-finite numbers as strings."""
    d = cert.to_dict()
    lines = ["{", f'  "kind": {json.dumps(d["kind"])},', f'  "subject": {json.dumps(d["subject"])},',
             f'  "verdict": {json.dumps(d["verdict"])},', '  "statement": [']
    for i, r in enumerate(d["statement"]):
        sep = "," if i + 1 < len(d["statement"]) else ""
        lines.append(f"    {_jdump(r)}{sep}")
    lines += ["  ],", f'  "provenance": {_jdump(d["provenance"])},', f'  "witness": {_jdump(d["witness"])}', "}"]
    return "\n".join(lines) + "\n"


def _unnum(v, where):
    if isinstance(v, str) and v in ("inf", "-inf", "nan"):
        return float(v)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError("must be a number", where)
    return float(v)


def loads_certificate(text):
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"line {exc.lineno}, column {exc.colno}") from None
    for key in ("kind", "subject", "verdict", "statement"):
        if key not in d:
            raise ParseError("missing field", key)
    recs = []
    for i, r in enumerate(d["statement"]):
        where = f"statement[{i}]"
        for key in ("name", "lhs", "rel", "rhs", "tolerance", "pass"):
            if key not in r:
                raise ParseError("missing field", f"{where}.{key}")
        recs.append(Record(r["name"], _unnum(r["lhs"], f"{where}.lhs"), r["rel"],
                           _unnum(r["rhs"], f"{where}.rhs"), _unnum(r["tolerance"], f"{where}.tolerance"),
                           bool(r["pass"])))
    return Certificate(d["kind"], d["subject"], tuple(recs), d["verdict"],
                       d.get("provenance", {}), d.get("witness", {}))


def write_certificate(cert, file):
    text = dumps_certificate(cert)
    if hasattr(file, "write"):
        file.write(text)
    else:
        with open(file, "w") as fh:
            fh.write(text)


# necessity --------------------------------------------------------------------

@dataclass(frozen=True)
class NecessityPoint:
    R: float
    second_moment: float
    lower_bound: float
    error: float


def hand_fit_mixture():
    """Five centred components with variances from 0.3 to 25, a rough fit to a heavy-tailed core."""
    return FiniteGMM.isotropic([0.35, 0.25, 0.2, 0.12, 0.08], [0.0] * 5, [0.3, 1.0, 3.0, 9.0, 25.0])


CANDIDATES = ("normal", "hand5", "entropy-g3")


def candidate_mixture(name, budget=None):
    """Stock mixtures for necessity runs; ``entropy-g3`` is the third entropy-route mixture for N(0,1)."""
    if name == "normal":
        return FiniteGMM.normal(0.0, 1.0, 1)
    if name == "hand5":
        return hand_fit_mixture()
    if name == "entropy-g3":
        f = standard_normal(1)
        r = radius_schedule(f, 3, budget)[-1]
        return build_entropy_approximant(f, 3, budget=budget, radius=r).g
    raise ValidationError(f"unknown candidate {name!r}; choose from {', '.join(CANDIDATES)}")


def necessity_points(f: Density, g, R_grid, t0=None, budget=None):
    t0 = default_t0(g) if t0 is None else float(t0)
    log_z = log_exp_quadratic_moment(g, t0)
    out = []
    for R in sorted(R_grid):
        m2, e2 = truncated_second_moment(f, R, budget)
        out.append(NecessityPoint(float(R), m2, t0 * m2 - log_z, t0 * e2))
    return t0, log_z, out


def necessity_bound(f: Density, g, R_grid, *, threshold=10.0, t0=None, measured_kl=None,
                    budget=None, g_label="g"):
    """Lower bounds KL(f||g) >= t0 int_{B_R} |x|^2 dF - log E_g exp(t0 |X|^2), one per radius.

    Verdict ``diverges`` when the bound at the largest radius exceeds
    ``threshold`` and the last three bounds still increase; otherwise the
    records claim the bounds stay below the threshold (and below a measured
    KL when one is supplied).
    """
    t0, log_z, pts = necessity_points(f, g, R_grid, t0, budget)
    info = [Record.make(f"lower_bound(R={p.R:g})", p.lower_bound, INFO, 0.0, p.error) for p in pts]
    tail = pts[-3:]
    diverging = (pts[-1].lower_bound > threshold
                 and all(b.lower_bound > a.lower_bound for a, b in zip(tail, tail[1:])))
    prov = {"target": f.name, "mixture": g_label, "components": g.n_components, "t0": t0,
            "log_Z": log_z, "threshold": threshold, "R_grid": [p.R for p in pts]}
    if diverging:
        recs = [Record.make("threshold < lower_bound(R_max)", threshold, LT, pts[-1].lower_bound)]
        recs += [Record.make(f"lower_bound(R={a.R:g}) < lower_bound(R={b.R:g})", a.lower_bound, LT,
                             b.lower_bound) for a, b in zip(tail, tail[1:])]
        return Certificate(NECESSITY, f.name, tuple(recs + info), DIVERGES, prov,
                           {"R_max": pts[-1].R, "lower_bound": pts[-1].lower_bound})
    recs = [Record.make(f"lower_bound(R={p.R:g}) <= threshold", p.lower_bound, LE, threshold, p.error)
            for p in pts]
    if measured_kl is not None:
        kl_val, kl_err = measured_kl
        prov["measured_kl"] = kl_val
        recs += [Record.make(f"lower_bound(R={p.R:g}) <= measured KL", p.lower_bound, LE, kl_val,
                             3.0 * kl_err + p.error) for p in pts]
    return Certificate(NECESSITY, f.name, tuple(recs + info), _verdict(recs), prov)


# class membership -------------------------------------------------------------

def _flag(name, ok):
    return Record.make(name, 0.0 if ok else 1.0, LE, 0.0)


def positive_entropy_integral(f: Density, budget=None):
    """(value, error) of int f log_+ f; exactly 0 when sup f <= 1."""
    budget = budget or QuadratureBudget()
    if f.sup <= 1.0:
        return 0.0, 0.0
    if f.dim != 1:
        raise ValidationError("positive entropy integral is computed by 1-D quadrature")

    def h(x):
        lf = f.logpdf(x)
        return np.where(lf > 0, np.exp(lf) * np.maximum(lf, 0.0), 0.0)

    if f.support.kind != FULL:
        res = integrate_intervals(h, f.quadrature_intervals(f.core_radius()), budget,
                                  extra_breaks=f.breakpoints)
        return res.value, res.error
    lp = math.log(f.sup)
    T = max(8.0 * f.scale, 1.0)
    while f.tail_envelope(T) * lp > budget.tol / 4.0:
        T *= 2.0
    right = geometric_breaks(0.0, T)
    bp = np.unique(np.concatenate([-right[::-1], right, np.asarray(f.breakpoints, float)]))
    res = integrate(h, bp[(bp >= -T) & (bp <= T)], budget)
    return res.value, res.error + f.tail_envelope(T) * lp


def check_ent(f: Density, budget=None):
    """Finite log-moment class: continuous and strictly positive (catalog metadata) with finite int f log_+ f."""
    val, err = positive_entropy_integral(f, budget)
    recs = [_flag("continuous", f.continuous), _flag("strictly_positive", f.strictly_positive),
            Record.make("int f log_+ f < inf", val, LT, math.inf, err)]
    return Certificate(MEMBERSHIP, f.name, tuple(recs), _verdict(recs),
                       {"target": f.name, "class": "ent", "integral": val, "integral_error": err})


def _best_interval_infimum(f: Density, y, r, n_shift=33, n_grid=65):
    """For each y, max over length-r intervals [y - s, y - s + r] of the grid infimum of f."""
    shifts = np.linspace(0.0, r, n_shift)
    offs = np.linspace(0.0, r, n_grid)
    lo = y[:, None] - shifts[None, :]
    best = np.zeros(y.size)
    for j in range(n_shift):
        a = lo[:, j]
        vals = f.pdf((a[:, None] + offs[None, :]).ravel()).reshape(y.size, n_grid)
        inf_ = vals.min(axis=1)
        if f.support.kind == INTERVALS:
            inside = np.array([f.support.contains_interval(ai, ai + r) for ai in a])
            inf_ = np.where(inside, inf_, 0.0)
        best = np.maximum(best, inf_)
    return best


def check_fssa_scale(f: Density, r, probe_n=4096, seed=0):
    """Probe D_r(y) = log(f(y) / best length-r interval infimum) at draws y ~ F.

    Fails with a witness when D_r is infinite on a probed set of positive
    empirical mass; otherwise reports the empirical oscillation integral.
    """
    if f.dim != 1:
        raise ValidationError("check_fssa_scale is 1-D")
    r = float(r)
    y = f.sample(int(probe_n), np.random.SeedSequence([int(seed), 0]))
    fy = f.pdf(y)
    inf_ = _best_interval_infimum(f, y, r)
    with np.errstate(divide="ignore"):
        D = np.where(inf_ > 0, np.log(fy) - np.log(np.where(inf_ > 0, inf_, 1.0)), math.inf)
    bad = ~np.isfinite(D)
    frac = float(bad.mean())
    finite = D[~bad]
    integral = float(finite.mean()) if finite.size else math.nan
    prov = {"target": f.name, "class": "fssa", "r": r, "probe_n": int(probe_n), "seed": int(seed)}
    recs = [Record.make("empirical mass of {D_r = inf}", frac, LE, 0.0),
            Record.make("empirical oscillation integral", integral if finite.size else 0.0, INFO, 0.0),
            Record.make("max finite D_r", float(finite.max()) if finite.size else 0.0, INFO, 0.0)]
    witness = {}
    if bad.any() and f.support.kind == INTERVALS:
        idx = np.unique(f.support.interval_index(y[bad]))
        iv = f.support.intervals[idx]
        witness = {"pieces": [int(i) + 1 for i in idx], "intervals": iv.tolist(),
                   "widths": (iv[:, 1] - iv[:, 0]).tolist(),
                   "note": "every length-r interval containing these points leaves the support"}
    return Certificate(MEMBERSHIP, f.name, tuple(recs), _verdict(recs), prov, witness)


# f_star ------------------------------------------------------------------------

def fstar_summability_terms(n_max, z):
    n = np.arange(1, n_max + 1, dtype=float)
    return n ** -6 * np.log(4.0 * n ** 6) / z


def verify_fstar_cssa(n_max=50, increment_tol=1e-12, budget=None):
    """Countable-scale witnesses of the truncated f_star comb.

    Oscillations vanish on every piece, and the scale series
    sum p_n log_+(1/r_n) = (1/Z) sum n^-6 log(4 n^6) converges; the last
    increment is compared with ``increment_tol``.
    """
    f = make_fstar(n_max)
    pieces = fstar_pieces(f)
    z = f.params["Z"]
    terms = fstar_summability_terms(n_max, z)
    partial = np.cumsum(terms)
    d_sum = math.fsum(pc.p * pc.oscillation for pc in pieces)
    scale_terms = [pc.p * max(math.log(1.0 / pc.r), 0.0) for pc in pieces]
    with mpmath.workdps(30):
        limit = float(mpmath.nsum(lambda k: k ** -6 * mpmath.log(4 * k ** 6), [1, mpmath.inf]) / z)
        zeta2 = float(mpmath.zeta(2))
    m2 = f.second_moment.value
    recs = [
        Record.make("sum p_n D_n = 0", d_sum, LE, 0.0),
        Record.make("max_n D_n = 0", max(pc.oscillation for pc in pieces), LE, 0.0),
        Record.make("scale series matches closed form", math.fsum(scale_terms), LE, float(partial[-1]),
                    1e-12 * partial[-1]),
        Record.make(f"increment at n={n_max}", float(terms[-1]), LT, increment_tol),
        Record.make("increments decrease", float(np.max(np.diff(terms[1:]))), LT, 0.0),
        Record.make("partial sum below series limit", float(partial[-1]), LE, limit, 1e-12),
        Record.make("second moment <= (4/Z) sum n^-2", m2, LE, 4.0 / z * zeta2),
    ]
    prov = {"n_max": n_max, "Z": z, "partial_sum": float(partial[-1]), "series_limit": limit,
            "last_increment": float(terms[-1]), "increment_tol": increment_tol}
    return Certificate(MEMBERSHIP, "fstar", tuple(recs), _verdict(recs), prov)


# f_natural -----------------------------------------------------------------------

def fnatural_z_bar(dps=30):
    """Upper bound int e^{-x^4} dx + sum_{n>=2} (1/(32 n^4) + e^{-n^4}) on the normaliser of f_natural."""
    with mpmath.workdps(dps):
        quartic = mpmath.quad(lambda x: mpmath.exp(-x ** 4), [-mpmath.inf, 0, mpmath.inf])
        series = (mpmath.zeta(4) - 1) / 32 + mpmath.nsum(lambda n: mpmath.exp(-n ** 4), [2, mpmath.inf])
        return quartic + series, quartic, series


EXACT_BLOCKS = 8


def refute_fnatural_cssa(N=100, dps=30):
    """Symbolic lower-bound chain showing the CSSA oscillation integral of f_natural diverges.

    For n = 2..N: |H_n| = N_n w_n >= 1/(32 n^4), F(H_n) >= n^-4 / (64 Z_bar), and
    the per-point bound D + R >= n^4 - log 2 on H_n give the partial sum
    S(N) = (1/(64 Z_bar)) sum_{n=2}^N (1 - log 2 / n^4), which grows linearly.
    All exponentials are handled on the log scale.
    """
    N = int(N)
    if N < 2:
        raise ValidationError("N must be at least 2")
    with mpmath.workdps(dps):
        z_bar, quartic, series = fnatural_z_bar(dps)
        slope = 1 / (64 * z_bar)
        log2 = mpmath.log(2)

        def S(M):
            return slope * mpmath.fsum(1 - log2 / mpmath.mpf(n) ** 4 for n in range(2, M + 1))

        s_N, s_2N = S(N), S(2 * N)
        # |H_n| = N_n e^{-n^4} >= 1/(32 n^4) holds by the ceiling in N_n; for small n
        # it is checked with N_n computed exactly at a precision that holds e^{n^4}
        h_ratio = []
        for n in range(2, min(N, EXACT_BLOCKS) + 1):
            n4 = n ** 4
            with mpmath.workdps(int(n4 / math.log(10)) + 40):
                Nn = mpmath.ceil(mpmath.exp(n4) / (32 * n4))
                h_ratio.append(float(32 * n4 * Nn * mpmath.exp(-n4)))
        # I_n fits in [n, n + 1/4]: 4 N_n w_n <= 1/(8 n^4) + 4 e^{-n^4}
        block_max = max(1 / (8 * mpmath.mpf(n) ** 4) + 4 * mpmath.exp(-mpmath.mpf(n) ** 4)
                        for n in range(2, N + 1))
        quartic_closed = 2 * mpmath.gamma(mpmath.mpf(5) / 4)
        p2 = fnatural_params(2)
        h2 = mpmath.mpf(p2.N) * mpmath.exp(-16)
        first = slope * (1 - log2 / 16)
        recs = [
            Record.make("|H_2| = N_2 w_2 >= 1/512 (exact integers)", float(h2), GE, 1.0 / 512),
            Record.make(f"min 32 n^4 |H_n| >= 1, n=2..{min(N, EXACT_BLOCKS)} (exact N_n)", min(h_ratio), GE, 1.0),
            Record.make("max_n 4 N_n w_n < 1/4", float(block_max), LT, 0.25),
            Record.make("per-point bound n^4 - log 2 at n=2", float(16 - log2), GT, 0.0),
            Record.make("first term slope (1 - log2/16)", float(first), GT, 0.0),
            Record.make(f"S({N}) >= 0.9 (N-1) slope", float(s_N), GE, float(0.9 * (N - 1) * slope)),
            Record.make(f"S({2 * N}) - S({N}) >= 0.9 N slope", float(s_2N - s_N), GE, float(0.9 * N * slope)),
            Record.make("int e^{-x^4} matches 2 Gamma(5/4)", float(abs(quartic - quartic_closed)), LE, 1e-20),
        ]
        prov = {"N": N, "Z_bar": float(z_bar), "quartic_integral": float(quartic), "series": float(series),
                "slope": float(slope), "partial_sum": float(s_N), "partial_sum_2N": float(s_2N),
                "dps": dps}
    return Certificate(REFUTATION, "fnatural", tuple(recs), _verdict(recs, REFUTATION_DIVERGES), prov,
                       {"claim": "D + R >= n^4 - log 2 on H_n", "partial_sum_growth": "linear"})


# fat Cantor ------------------------------------------------------------------------

def distance_to_intervals(x, iv):
    """Distance from each x to the union of sorted disjoint closed intervals."""
    x = np.asarray(x, dtype=float)
    i = np.searchsorted(iv[:, 0], x, side="right") - 1
    ic = np.clip(i, 0, len(iv) - 1)
    inside = (i >= 0) & (x <= iv[ic, 1])
    left = np.where(i >= 0, x - iv[ic, 1], np.inf)
    nxt = np.clip(i + 1, 0, len(iv) - 1)
    right = np.where(i + 1 < len(iv), iv[nxt, 0] - x, np.inf)
    return np.where(inside, 0.0, np.minimum(np.abs(left), np.abs(right)))


def ramp_integral(iv, delta):
    """Exact integral of max(0, 1 - dist(x, A)/delta) for the interval union A."""
    lam = float(np.sum(iv[:, 1] - iv[:, 0]))
    gaps = iv[1:, 0] - iv[:-1, 1]
    wide = gaps >= 2.0 * delta
    total = lam + delta  # the two outer ramps
    total += delta * int(np.count_nonzero(wide))
    g = gaps[~wide]
    total += float(np.sum(g - g * g / (4.0 * delta)))
    return total


def ramp_excess_measure(iv, delta):
    """Lebesgue measure of {0 < dist(x, A) < delta}."""
    gaps = iv[1:, 0] - iv[:-1, 1]
    return 2.0 * delta + float(np.sum(np.minimum(gaps, 2.0 * delta)))


def urysohn_density(iv, delta, c_m):
    """s_m = c_m max(0, 1 - dist(x, A)/delta) as a Density."""
    lo, hi = float(iv[0, 0]) - delta, float(iv[-1, 1]) + delta
    grown = [[iv[0, 0] - delta, iv[0, 1] + delta]]
    for a, b in iv[1:]:
        if a - delta <= grown[-1][1]:
            grown[-1][1] = b + delta
        else:
            grown.append([a - delta, b + delta])

    def pdf(x):
        return c_m * np.maximum(0.0, 1.0 - distance_to_intervals(x, iv) / delta)

    def logpdf(x):
        with np.errstate(divide="ignore"):
            return np.log(pdf(x))

    def sampler(n, rng):
        raise NotImplementedError("s_m is only evaluated")

    return Density(
        name="urysohn", dim=1, pdf=pdf, logpdf=logpdf, sampler=sampler,
        support=SupportDescriptor(INTERVALS, grown),
        tail_envelope=lambda R: 0.0 if R >= max(abs(lo), abs(hi)) else 1.0,
        second_moment=SecondMoment("finite"), continuous=True, strictly_positive=False,
        sup=float(c_m), breakpoints=tuple(np.concatenate([iv.ravel(), iv.ravel() - delta, iv.ravel() + delta])),
        scale=1.0,
    )


@dataclass(frozen=True)
class CantorStep:
    m: int
    delta: float
    c_m: float
    eta: float
    sup_error: float
    min_on_A: float
    kl: float
    kl_error: float
    bound: float
    components: int


def cantor_kl_demo(K=8, m_max=6, eps=0.05, ramp0=1e-3, radius=2.0, budget=None):
    """Urysohn smoothing, compact GMM approximation and the |log(c/c_m)| + 2 eta_m / c_m bound on A_K.

    delta_m = ramp0 / m, eta_m = c_m / (2 (m + 1)) (so eta_m < c_m / 2 and
    decreasing); the verdict holds when every bound record passes and the
    final KL is below ``eps``.
    """
    K = int(K)
    if not 1 <= K <= 20:
        raise ValidationError("K must be between 1 and 20")
    fc: FatCantor = make_fat_cantor(K)
    iv = np.asarray(fc.intervals)
    c = 1.0 / float(fc.measure)
    steps = []
    recs = []
    for m in range(1, int(m_max) + 1):
        delta = ramp0 / m
        I_m = ramp_integral(iv, delta)
        c_m = 1.0 / I_m
        eta = c_m / (2.0 * (m + 1))
        s_m = urysohn_density(iv, delta, c_m)
        approx = compact_uniform_approx(s_m, radius, eta, sigma0=10.0 * eta * delta / c_m)
        g = approx.h
        probe = np.concatenate([np.linspace(a, b, 9) for a, b in iv])
        gA = g.pdf(probe)
        est = kl_quadrature_1d(fc.density, g, budget)
        bound = abs(math.log(c / c_m)) + 2.0 * eta / c_m
        steps.append(CantorStep(m, delta, c_m, eta, approx.sup_error, float(gA.min()), est.value,
                                est.error, bound, g.n_components))
        recs += [
            Record.make(f"m={m}: lambda(O_m minus A) < 1/m", ramp_excess_measure(iv, delta), LT, 1.0 / m),
            Record.make(f"m={m}: eta_m < c_m/2", eta, LT, c_m / 2.0),
            Record.make(f"m={m}: sup_B2 |g_m - s_m| < eta_m", approx.sup_error, LT, eta),
            Record.make(f"m={m}: min_A g_m > c_m/2", float(gA.min()), GT, c_m / 2.0),
            Record.make(f"m={m}: KL <= |log(c/c_m)| + 2 eta_m/c_m", est.value, LE, bound, est.error),
        ]
    for a, b in zip(steps, steps[1:]):
        recs.append(Record.make(f"|c_m/c - 1| decreasing at m={b.m}", abs(b.c_m / c - 1), LT, abs(a.c_m / c - 1)))
    recs.append(Record.make(f"final KL < {eps:g}", steps[-1].kl, LT, eps))
    prov = {"K": K, "m_max": int(m_max), "eps": eps, "ramp0": ramp0, "radius": radius, "c": c,
            "measure": str(fc.measure),
            "note": ("A_K is a finite interval union standing in for the limit set; the run illustrates "
                     "the approximation mechanism and does not test non-membership of the limit")}
    witness = {"steps": [s.__dict__ for s in steps]}
    return Certificate(MEMBERSHIP, f"fat-cantor(K={K})", tuple(recs), _verdict(recs), prov, witness)


# fixed-scale entropy ----------------------------------------------------------------

def _log_plus(x):
    return max(math.log(x), 0.0) if x > 0 else 0.0


def fixed_scale_entropy_bound(piece, dim=1):
    """int q log_+ q <= int D_r dQ + d log_+(2/r) for a constant-on-interval piece, evaluated exactly."""
    lhs = _log_plus(1.0 / piece.width)
    rhs = piece.oscillation + dim * _log_plus(2.0 / piece.r)
    recs = [Record.make(f"piece {piece.ell}: entropy bound", lhs, LE, rhs)]
    return Certificate(MEMBERSHIP, f"piece {piece.ell}", tuple(recs), _verdict(recs),
                       {"ell": piece.ell, "width": piece.width, "r": piece.r, "gap": rhs - lhs})


def aggregate_entropy_bound(f: Density, pieces, dim=1, budget=None):
    """int f log_+ f <= sum p_l int q_l log_+ q_l <= sum p_l int D dF_l + d sum p_l log_+(2/r_l)."""
    direct, err = positive_entropy_integral(f, budget)
    mid = math.fsum(pc.p * _log_plus(1.0 / pc.width) for pc in pieces)
    rhs = math.fsum(pc.p * pc.oscillation for pc in pieces) + dim * math.fsum(
        pc.p * _log_plus(2.0 / pc.r) for pc in pieces)
    recs = [Record.make("int f log_+ f <= sum p_l int q_l log_+ q_l", direct, LE, mid, err),
            Record.make("sum p_l int q_l log_+ q_l <= oscillation + scale sums", mid, LE, rhs)]
    recs += [fixed_scale_entropy_bound(pc, dim).statement[0] for pc in pieces]
    return Certificate(MEMBERSHIP, f.name, tuple(recs), _verdict(recs),
                       {"target": f.name, "pieces": len(pieces)})
