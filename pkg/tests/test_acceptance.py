"""Acceptance criteria 1-7 at their stated tolerances.

Each test prints one ``criterion N: PASS|FAIL`` line (visible in ``pytest -v``
output) and then asserts every sub-check of that criterion.
"""

import math
import time

import mpmath
import numpy as np
import pytest

from gmmkl.certificates import (CANDIDATES, candidate_mixture, cantor_kl_demo, necessity_bound,
                                refute_fnatural_cssa, verify_fstar_cssa)
from gmmkl.densities import (cauchy, catalog, laplace, make_fstar, normal, student_t3,
                             tail_quantities, uniform)
from gmmkl.divergence import (check_log_sum, check_mixture_convexity, check_plogp, kl_quadrature_1d)
from gmmkl.entropy_route import schedule_conditions
from gmmkl.gmm import FiniteGMM, default_t0, exp_quadratic_moment
from gmmkl.support_route import build_cssa_approximant, fstar_pieces, tail_terms_decrease

from oracles import gl_moment_oracle

R_GRID = (10.0, 30.0, 100.0, 300.0, 1e3, 3e3, 1e4)
TRIALS = 10_000


@pytest.fixture
def report(capsys):
    def emit(n, checks):
        ok = all(v for _, v in checks)
        failed = [name for name, v in checks if not v]
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}"
        if failed:
            line += " (failed: " + "; ".join(failed) + ")"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


def test_criterion_1_normal_entropy_route(timed_normal_schedule, report):
    sched, seconds = timed_normal_schedule
    kl = [k.value for k in sched.kl]
    err = [k.error for k in sched.kl]
    checks = [("runtime < 300 s", seconds < 300.0)]
    checks.append(("KL nonincreasing after m=2",
                   all(kl[i + 1] <= kl[i] + err[i] + err[i + 1] for i in range(1, len(kl) - 1))))
    checks.append(("KL_6 < 1e-2", kl[-1] < 1e-2))
    for row in sched.rows:
        m = row["m"]
        checks.append((f"m={m}: L <= proof bound + 3 err",
                       row["measured_L"] <= row["proof_bound"] + 3 * row["measured_L_error"]))
        checks.append((f"m={m}: MC L <= proof bound + 3 SE",
                       row["mc_L"] <= row["proof_bound"] + 3 * row["mc_L_se"]))
        # the proof bound itself from its ingredients
        checks.append((f"m={m}: proof bound formula",
                       row["proof_bound"] == 2.0 ** (-m - 1) + 2.0 * row["alpha"]))
    report(1, checks)


def test_criterion_2_laplace_entropy_route(laplace_schedule, report):
    f = laplace()
    checks = [("KL_6 < 5e-2", laplace_schedule.kl[-1].value < 5e-2)]
    for app in laplace_schedule.approximants:
        # recomputed from scratch at the chosen radius
        tail = tail_quantities(f, app.R)
        for c in schedule_conditions(tail, app.m, 1):
            checks.append((f"m={app.m}: {c.name}", c.holds))
        # closed-form Laplace tail mass e^{-R}
        checks.append((f"m={app.m}: alpha matches e^-R", abs(tail.alpha - math.exp(-app.R)) <= 1e-12))
    report(2, checks)


def test_criterion_3_support_route(report):
    f = make_fstar(50)
    pieces = fstar_pieces(f)
    app = build_cssa_approximant(f, pieces, 50, 0.1)
    kl = kl_quadrature_1d(f, app.G)
    tail_part = app.p_tail * app.tail_kl.value if app.tail_kl is not None else 0.0
    checks = [
        ("KL(f* || G_50) < 0.1", kl.value < 0.1),
        ("KL split with recorded per-piece KLs",
         kl.value <= app.first_term + tail_part + kl.error + app.first_term_error),
        ("per-piece KLs recorded", len(app.piece_rows()) == 50),
        ("first term <= eps/2", app.first_term <= 0.05 + app.first_term_error),
    ]
    reports, flags = tail_terms_decrease(f, pieces, [5, 20])
    r5, r20 = reports
    checks.append(("L=5 summands finite", all(math.isfinite(s) for s in r5.summands)))
    names = ("log_+ f", "Gaussian constant", "half second moment", "mass entropy")
    for name, a, b in zip(names, r5.summands, r20.summands):
        checks.append((f"summand {name} strictly smaller at L=20 ({a:.3g} -> {b:.3g})", b < a))
    report(3, checks)


def test_criterion_4_necessity(report):
    t = time.perf_counter()
    mixtures = {name: candidate_mixture(name) for name in CANDIDATES}
    checks = []
    for name, g in mixtures.items():
        cert = necessity_bound(cauchy(), g, R_GRID, threshold=10.0, g_label=name)
        bounds = [r.lhs for r in cert.statement if r.rel == "info"]
        checks.append((f"cauchy/{name}: bound at 1e4 > 10", bounds[-1] > 10.0))
        checks.append((f"cauchy/{name}: still increasing", bounds[-1] > bounds[-2] > bounds[-3]))
        checks.append((f"cauchy/{name}: verdict diverges", cert.verdict == "diverges"))
    t3 = student_t3()
    for name, g in mixtures.items():
        kl = kl_quadrature_1d(t3, g)
        cert = necessity_bound(t3, g, R_GRID, measured_kl=(kl.value, kl.error), g_label=name)
        bounds = [r.lhs for r in cert.statement if r.rel == "info"]
        errs = [r.tolerance for r in cert.statement if r.rel == "info"]
        checks.append((f"t3/{name}: plateau below measured KL + 3 err",
                       all(b <= kl.value + 3 * kl.error + e for b, e in zip(bounds, errs))))
        checks.append((f"t3/{name}: plateau", abs(bounds[-1] - bounds[-2]) < 1e-3 * max(1.0, abs(bounds[-1]))))
    seconds = time.perf_counter() - t
    checks.append((f"runtime < 60 s ({seconds:.1f} s)", seconds < 60.0))
    report(4, checks)


def z_bar_oracle():
    with mpmath.workdps(40):
        quartic = 2 * mpmath.gamma(mpmath.mpf(5) / 4)
        series = (mpmath.zeta(4) - 1) / 32
        series += mpmath.fsum(mpmath.exp(-mpmath.mpf(n) ** 4) for n in range(2, 8))
        return float(quartic + series)


def test_criterion_5_counterexamples(report):
    a = verify_fstar_cssa(50, increment_tol=1e-12)
    b = refute_fnatural_cssa(100)
    z_bar = z_bar_oracle()
    c = cantor_kl_demo(K=8, m_max=6)
    steps = c.witness["steps"]
    checks = [
        (f"(a) increment at n=50 < 1e-12 ({a.provenance['last_increment']:.3g})",
         a.provenance["last_increment"] < 1e-12),
        ("(a) verdict holds", a.verdict == "holds"),
        ("(b) partial sum >= 0.9*99/(64 Z_bar)", b.provenance["partial_sum"] >= 0.9 * 99 / (64 * z_bar)),
        ("(b) Z_bar matches oracle", abs(b.provenance["Z_bar"] - z_bar) <= 1e-14 * z_bar),
        ("(b) verdict refutation-diverges", b.verdict == "refutation-diverges"),
        ("(c) final KL < 0.05", steps[-1]["kl"] < 0.05),
    ]
    checks += [(f"(c) m={s['m']}: KL <= bound", s["kl"] <= s["bound"] + s["kl_error"]) for s in steps]
    report(5, checks)


def random_gmm(rng, k_max=3):
    k = int(rng.integers(1, k_max + 1))
    w = rng.dirichlet(np.ones(k))
    return FiniteGMM.isotropic(w, rng.uniform(-2, 2, k), rng.uniform(0.2, 3.0, k))


def random_piece(rng):
    if rng.random() < 0.5:
        return normal(float(rng.uniform(0.3, 2.0)))
    a = float(rng.uniform(-2, 1))
    return uniform(a, a + float(rng.uniform(0.2, 2.0)))


def test_criterion_6_inequality_suites(report):
    rng = np.random.default_rng(20240601)
    log_sum_min, prop_max = math.inf, 0.0
    for _ in range(TRIALS):
        k = int(rng.integers(1, 12))
        a = rng.exponential(size=k) * (rng.random(k) > 0.2)
        b = rng.exponential(size=k) + 1e-3
        log_sum_min = min(log_sum_min, check_log_sum(a, b).gap)
        prop_max = max(prop_max, abs(check_log_sum(float(rng.uniform(0.1, 10)) * b, b).gap))

    conv_ok = 0
    for _ in range(TRIALS):
        w = float(rng.uniform(0.05, 0.95))
        res = check_mixture_convexity([w, 1.0 - w], [random_piece(rng), random_piece(rng)],
                                      [random_gmm(rng), random_gmm(rng)])
        conv_ok += res.gap >= -res.error

    plogp_max = -math.inf
    for _ in range(TRIALS):
        p = float(rng.uniform(1.01, 8.0))
        t = np.concatenate([rng.uniform(0, 50, 200), np.exp(rng.uniform(-20, 3, 200))])
        plogp_max = max(plogp_max, check_plogp(p, t))

    moment_ok = 0
    for i in range(100):
        d = 1 + i % 2
        k = int(rng.integers(1, 5))
        covs = []
        for _ in range(k):
            m = rng.uniform(-1, 1, (d, d))
            covs.append(m @ m.T + rng.uniform(0.1, 2.0) * np.eye(d))
        g = FiniteGMM(rng.dirichlet(np.ones(k)), rng.uniform(-3, 3, (k, d)), np.array(covs))
        t0 = float(rng.uniform(0.1, 2.0)) * default_t0(g)
        closed = exp_quadratic_moment(g, t0)
        moment_ok += abs(closed - gl_moment_oracle(g, t0)) <= 1e-6 * closed

    cat = {k: v for k, v in catalog().items() if v.dim == 1}
    names = sorted(cat)
    gibbs_ok = 0
    for i in range(TRIALS):
        est = kl_quadrature_1d(cat[names[i % len(names)]], random_gmm(rng))
        gibbs_ok += est.value >= -est.error

    report(6, [
        (f"log-sum gap >= -1e-12 (min {log_sum_min:.3g})", log_sum_min >= -1e-12),
        (f"log-sum equality on proportional inputs (max {prop_max:.3g})", prop_max <= 1e-12),
        (f"mixture convexity ({conv_ok}/{TRIALS})", conv_ok == TRIALS),
        (f"plogp sweep (max {plogp_max:.3g})", plogp_max <= 1e-12),
        (f"exp_quadratic_moment vs quadrature ({moment_ok}/100)", moment_ok == 100),
        (f"Gibbs on catalog pairs ({gibbs_ok}/{TRIALS})", gibbs_ok == TRIALS),
    ])


def test_criterion_7_uniform_integrability(normal_schedule, report):
    prof = normal_schedule.profile
    i = int(np.flatnonzero(prof.thresholds == 1.0)[0])
    m = int(np.argmax(prof.tail[:, i]))
    sup = prof.sup_tail(1.0)
    report(7, [(f"sup_m tail(m, 1) = {sup:.3g} < 0.02 + 3 SE", sup < 0.02 + 3 * prof.tail_se[m, i])])
