import csv
import io
import math

import numpy as np
import pytest
from scipy import integrate as sint, stats

from gmmkl.densities import cauchy, normal, standard_normal, tail_quantities
from gmmkl.divergence import kl_quadrature_1d
from gmmkl.entropy_route import (SCHEDULE_COLUMNS, RadiusChoice, ball_grid, build_entropy_approximant,
                                 compact_uniform_approx, entropy_schedule, radius_schedule,
                                 schedule_conditions, select_radius, two_part_mixture)
from gmmkl.errors import InfimumTooSmall, ScheduleInfeasible
from gmmkl.gmm import FiniteGMM


def normal_tail_conditions(R, m):
    """The five schedule inequalities for N(0,1) from closed-form tails."""
    a = 2 * stats.norm.sf(R)
    mu2 = 2 * (R * stats.norm.pdf(R) + stats.norm.sf(R))
    thr = 2.0 ** (-m - 4)
    return [a < 0.25, 0.0 < thr, a * math.log(1 / a) < thr,
            a * 0.5 * math.log(2 * math.pi * R * R) < thr, mu2 / (2 * R * R) < thr]


def test_select_radius_normal_m1():
    r = select_radius(standard_normal(), 1)
    assert r.R >= 1 and r.tail.alpha < 0.25
    assert all(normal_tail_conditions(r.R, 1))
    # the grid point just below fails at least one condition
    below = r.R / 2.0 ** (1 / 64)
    if below >= 1:
        assert not all(normal_tail_conditions(below, 1))


def test_radius_schedule_increasing():
    rs = radius_schedule(standard_normal(), 5)
    R = [r.R for r in rs]
    assert all(b >= 1.1 * a * (1 - 1e-12) for a, b in zip(R, R[1:]))
    for r in rs:
        assert all(normal_tail_conditions(r.R, r.m))
        assert all(c.holds for c in schedule_conditions(r.tail, r.m, 1))


def test_cauchy_rejected():
    with pytest.raises(ScheduleInfeasible):
        select_radius(cauchy(), 1)
    with pytest.raises(ScheduleInfeasible) as exc:
        entropy_schedule(cauchy(), 2)
    assert "second moment" in str(exc.value)


def test_compact_approx_normal():
    f = standard_normal()
    res = compact_uniform_approx(f, 4.0, 1e-3)
    x = np.linspace(-4, 4, 40_001)
    assert np.max(np.abs(res.h.pdf(x) - f.pdf(x))) < 1e-3
    mass = sint.quad(lambda t: res.h.pdf(np.array([t]))[0], -15, 15, limit=200, epsabs=1e-12)[0]
    assert abs(mass - 1.0) < 1e-8


def test_compact_approx_huge_eta():
    res = compact_uniform_approx(standard_normal(), 2.0, 10.0)
    assert res.h.n_components == 1


def test_compact_approx_2d():
    f = standard_normal(2)
    res = compact_uniform_approx(f, 2.0, 0.01)
    g = np.linspace(-1.4, 1.4, 57)
    pts = np.array([(a, b) for a in g for b in g])
    assert np.max(np.abs(res.h.pdf(pts) - f.pdf(pts))) < 0.01


def test_ball_grid_2d():
    pts = ball_grid(1.0, 0.25, 2)
    assert np.all(np.sum(pts ** 2, axis=1) <= 1.0)
    assert len(pts) == sum(1 for a in range(-4, 5) for b in range(-4, 5) if a * a + b * b <= 16)


def test_two_part_mixture_layout():
    h = FiniteGMM.isotropic([0.5, 0.5], [-1, 1], [0.1, 0.1])
    g = two_part_mixture(h, 0.02, 3.0)
    assert abs(math.fsum(g.weights) - 1) < 1e-15
    assert g.weights[-1] == 0.02 and g.covs[-1, 0, 0] == 9.0 and g.means[-1, 0] == 0.0


def test_build_m3_bounds():
    f = standard_normal()
    r3 = radius_schedule(f, 3)[-1]
    app = build_entropy_approximant(f, 3, radius=r3)
    assert app.bound <= 2 ** -4 + 2 * app.alpha + 2 ** -5
    assert app.sup_error < app.eta
    assert abs(app.eta - 2 ** -6 * app.m_inf) < 1e-18
    # m_m is below the true infimum on the ball
    assert app.m_inf <= stats.norm.pdf(app.R)
    x = np.linspace(-app.R, app.R, 20_001)
    assert np.min(app.h.pdf(x)) >= app.m_inf / 2
    assert np.max(np.abs(app.h.pdf(x) - f.pdf(x))) < app.eta
    kl = kl_quadrature_1d(f, app.g)
    assert kl.value <= app.bound + kl.error


def test_infimum_too_small():
    f = normal(0.05)
    R = 200.0
    tail = tail_quantities(f, R)
    radius = RadiusChoice(1, R, tail, schedule_conditions(tail, 1, 1))
    with pytest.raises(InfimumTooSmall):
        build_entropy_approximant(f, 1, radius=radius)


def test_schedule_table(normal_schedule):
    rows = normal_schedule.rows
    kl = [r["measured_KL"] for r in rows]
    assert all(b < a for a, b in zip(kl, kl[1:]))
    assert kl[-1] < 1e-2
    for r, app in zip(rows, normal_schedule.approximants):
        assert r["measured_L"] <= r["proof_bound"] + 3 * r["measured_L_error"]
        assert r["mc_L"] <= r["proof_bound"] + 3 * r["mc_L_se"]
        assert r["measured_KL"] <= r["measured_L"] + r["measured_KL_error"] + r["measured_L_error"]
        assert all(normal_tail_conditions(r["R_m"], r["m"]))
        assert app.g.covs[-1, 0, 0] == app.R ** 2
        assert abs(math.fsum(app.g.weights) - 1) < 1e-12


def test_ratio_convergence(normal_schedule):
    f = standard_normal()
    probe = np.linspace(-3, 3, 1201)
    g = normal_schedule.approximants[-1].g
    assert np.max(np.abs(f.pdf(probe) / g.pdf(probe) - 1)) < 0.01


def test_schedule_csv(normal_schedule):
    a, b = io.StringIO(), io.StringIO()
    normal_schedule.write_csv(a)
    normal_schedule.write_csv(b)
    assert a.getvalue() == b.getvalue()
    rows = list(csv.reader(io.StringIO(a.getvalue())))
    assert tuple(rows[0]) == SCHEDULE_COLUMNS
    assert rows[0][:10] == ["m", "R_m", "alpha", "beta", "mu2", "eta_m", "components", "bound",
                            "measured_L", "measured_KL"]
    assert len(rows) == 7
    assert float(rows[3][9]) == normal_schedule.rows[2]["measured_KL"]


def test_profile_shows_uniform_integrability(normal_schedule):
    prof = normal_schedule.profile
    for eps in (0.1, 0.01):
        assert any(prof.tail[:, i].max() < eps + 3 * prof.tail_se[:, i].max()
                   for i in range(len(prof.thresholds)))
    # tails shrink with the threshold for every index
    assert np.all(np.diff(prof.tail, axis=1) <= 0)
