import io
import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate as sint, stats

from gmmkl.densities import (FULL, INTERVALS, SupportDescriptor, catalog, export_intervals_csv,
                             fat_cantor_intervals, fnatural_params, get_density, is_ent_eligible,
                             make_fat_cantor, make_fstar, tail_quantities, truncated_second_moment)
from gmmkl.errors import OverflowAtScale, TailEnvelopeMissing, ValidationError

CAT = catalog()
ONE_D = [n for n, f in CAT.items() if f.dim == 1]


def _mass(f):
    if f.support.kind == INTERVALS:
        return math.fsum(sint.quad(f.pdf, a, b, epsabs=1e-14)[0] for a, b in f.support.intervals)
    return sint.quad(f.pdf, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13, limit=400)[0]


@pytest.mark.parametrize("name", ONE_D)
def test_total_mass(name):
    assert abs(_mass(CAT[name]) - 1.0) < 1e-8


def test_normal2d_mass():
    f = CAT["normal2d"]
    val, _ = sint.dblquad(lambda y, x: f.pdf(np.array([[x, y]]))[0], -9, 9, -9, 9, epsabs=1e-11)
    assert abs(val - 1.0) < 1e-8


@pytest.mark.parametrize("name", ONE_D)
@given(x=st.floats(-60, 2600))
def test_log_eval_consistent(name, x):
    f = CAT[name]
    p = float(f.pdf(np.array([x]))[0])
    lp = float(f.logpdf(np.array([x]))[0])
    assert p >= 0
    if p > 0:
        assert abs(math.exp(lp) - p) <= 1e-12 * p
    elif f.support.kind == FULL:
        assert lp < math.log(np.finfo(float).tiny)  # underflow, not a zero
    else:
        assert lp == -math.inf


@pytest.mark.parametrize("name", ONE_D)
def test_tail_envelope_nonincreasing_and_valid(name):
    f = CAT[name]
    radii = np.geomspace(0.1, 5000, 60)
    env = np.array([f.tail_envelope(R) for R in radii])
    assert np.all(np.diff(env) <= 1e-15)
    for R in (0.5, 2.0, 7.0):
        if f.support.kind == FULL:
            true = 2 * sint.quad(f.pdf, R, np.inf, epsabs=1e-14)[0]
            assert true <= env[np.searchsorted(radii, R)] + 1e-12 or true <= f.tail_envelope(R) + 1e-12


def test_tail_quantities_normal_oracle():
    f = CAT["normal"]
    t = tail_quantities(f, 1.0)
    assert abs(t.alpha - 2 * stats.norm.sf(1.0)) < 1e-10
    assert t.beta == 0.0  # the density never exceeds 1
    mu2 = 2 * sint.quad(lambda x: x * x * stats.norm.pdf(x), 1.0, np.inf, epsabs=1e-14)[0]
    assert abs(t.mu2 - mu2) < 1e-10


def test_tail_quantities_vanish_far_out():
    t = tail_quantities(CAT["normal"], 40.0)
    assert t.alpha < 1e-300 and t.mu2 < 1e-300 and t.beta == 0.0


def test_tail_quantities_monotone_in_R():
    for name in ("normal", "laplace", "student-t3", "fstar"):
        f = CAT[name]
        tq = [tail_quantities(f, R) for R in (1.0, 2.0, 4.0, 8.0, 16.0)]
        for a, b in zip(tq, tq[1:]):
            tol = a.error + b.error + 1e-12
            assert b.alpha <= a.alpha + tol
            assert b.beta <= a.beta + tol
            assert b.mu2 <= a.mu2 + tol


def test_tail_quantities_positive_entropy_part():
    f = get_density("normal-narrow")  # sd 1/4 so f exceeds 1 near 0
    t = tail_quantities(f, 0.1)
    h = lambda x: f.pdf(x) * max(math.log(f.pdf(x)), 0.0)
    ref = 2 * sint.quad(h, 0.1, 2.0, epsabs=1e-14, epsrel=1e-13)[0]
    assert abs(t.beta - ref) < 1e-9


def test_cauchy_second_moment_tail_diverges():
    t = tail_quantities(CAT["cauchy"], 10.0)
    assert t.mu2_diverges and t.mu2 == math.inf
    # the truncated second moment keeps growing like 2R/pi
    m = [truncated_second_moment(CAT["cauchy"], R)[0] for R in (10.0, 100.0, 1000.0)]
    assert m[0] < m[1] < m[2]
    assert abs(m[2] - 2 / math.pi * (1000 - math.atan(1000))) < 1e-7


def test_tail_quantities_needs_envelope_in_2d():
    from dataclasses import replace
    f = replace(CAT["normal2d"], tail_formula=None)
    with pytest.raises(TailEnvelopeMissing):
        tail_quantities(f, 1.0)


def test_fstar_normaliser():
    with mpmath.workdps(30):
        z = mpmath.fsum(mpmath.mpf(n) ** -6 for n in range(1, 51))
    f = make_fstar(50)
    assert abs(f.params["Z"] - float(z)) < 1e-15
    assert abs(f.params["Z"] - 1.01734) < 1e-5
    assert f.support.kind == INTERVALS and len(f.support.intervals) == 50


def test_fstar_second_moment_series():
    f = make_fstar(50)
    z = f.params["Z"]
    # exact rational arithmetic on the stored (floating) endpoints
    level = Fraction(1) / Fraction(z)
    exact = float(sum(level * (Fraction(b) ** 3 - Fraction(a) ** 3) / 3 for a, b in f.support.intervals))
    assert abs(f.second_moment.value - exact) <= 1e-14 * exact
    assert abs(truncated_second_moment(f, 3000.0)[0] - exact) <= 1e-9 * exact
    # the ideal comb differs only through endpoint rounding near n^2
    with mpmath.workdps(40):
        ideal = float(mpmath.fsum(((n * n + mpmath.mpf(n) ** -6) ** 3 - mpmath.mpf(n) ** 6) / 3
                                  for n in range(1, 51)) / z)
    assert abs(exact - ideal) < 1e-6 * ideal


def test_fstar_tail_log_markov():
    f = make_fstar(50)
    vals = [tail_quantities(f, float(n * n)).alpha * math.log(n * n) for n in range(2, 40, 4)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-6


def test_fstar_needs_two_pieces():
    with pytest.raises(ValidationError):
        make_fstar(1)


def test_fnatural_n2():
    p = fnatural_params(2)
    with mpmath.workdps(40):
        assert p.N == int(mpmath.ceil(mpmath.exp(16) / 512))
    assert p.N == 17356
    assert p.block_width < 0.25
    assert p.log_w == -16.0 and abs(p.w - math.exp(-16)) < 1e-22
    assert abs(p.center(0) - (2 + 2 * p.w)) < 1e-15


def test_fnatural_overflow():
    # log N_3 ~ 81 - log(2592) is larger than 63 log 2
    assert 81 - math.log(32 * 81) > 63 * math.log(2)
    with pytest.raises(OverflowAtScale):
        fnatural_params(3)


def test_fat_cantor_k1():
    fc = make_fat_cantor(1)
    assert fc.intervals.tolist() == [[0.0, 0.375], [0.625, 1.0]]
    assert fc.measure == Fraction(3, 4)


def test_fat_cantor_k3_measure():
    fc = make_fat_cantor(3)
    assert float(fc.measure) == 0.5625
    assert math.fsum(fc.intervals[:, 1] - fc.intervals[:, 0]) == 0.5625
    x = np.array([0.01, 0.5, 0.99])
    assert np.allclose(fc.density.pdf(x), [1 / 0.5625, 0.0, 1 / 0.5625], rtol=0, atol=1e-15)


@given(st.integers(1, 12))
def test_fat_cantor_refines(K):
    outer = fat_cantor_intervals(K)
    inner = fat_cantor_intervals(K + 1)
    assert len(inner) == 2 * len(outer)
    parents = np.repeat(outer, 2, axis=0)
    assert np.all(inner[:, 0] >= parents[:, 0]) and np.all(inner[:, 1] <= parents[:, 1])
    assert math.fsum(inner[:, 1] - inner[:, 0]) == 0.5 + 2.0 ** -(K + 2)


def test_fat_cantor_depth_validation():
    with pytest.raises(ValidationError):
        make_fat_cantor(0)
    with pytest.raises(ValidationError):
        make_fat_cantor(41)


def test_export_intervals_csv():
    buf = io.StringIO()
    export_intervals_csv(make_fat_cantor(1).intervals, buf)
    assert buf.getvalue() == "left,right\n0,0.375\n0.625,1\n"


def test_catalog_metadata():
    assert CAT["cauchy"].second_moment_kind == "infinite"
    assert CAT["student-t3"].second_moment_kind == "finite"
    assert is_ent_eligible(CAT["laplace"])
    assert not is_ent_eligible(CAT["fstar"])
    assert CAT["fstar"].support.kind == INTERVALS
    assert CAT["normal2d"].dim == 2
    with pytest.raises(KeyError):
        get_density("nope")


def test_support_descriptor_validation():
    with pytest.raises(ValidationError):
        SupportDescriptor(INTERVALS, [[0, 1], [0.5, 2]])
    with pytest.raises(ValidationError):
        SupportDescriptor(INTERVALS, [[1, 1]])


@pytest.mark.parametrize("name,mean,var", [("normal", 0, 1), ("laplace", 0, 2), ("uniform", 0.5, 1 / 12)])
def test_samplers(name, mean, var):
    f = CAT[name]
    x = f.sample(200_000, 3)
    se = math.sqrt(var / x.size)
    assert abs(x.mean() - mean) < 4 * se
    assert np.array_equal(x, f.sample(200_000, 3))


def test_fstar_samples_on_support():
    f = CAT["fstar"]
    x = f.sample(10_000, 0)
    assert np.all(f.support.interval_index(x) >= 0)
