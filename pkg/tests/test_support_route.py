import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import integrate as sint

from gmmkl.densities import make_fstar, uniform
from gmmkl.divergence import kl_quadrature_1d
from gmmkl.errors import ToleranceUnreachable, ValidationError
from gmmkl.gmm import FiniteGMM
from gmmkl.support_route import (PieceSpec, build_cssa_approximant, build_piece_approximant, bump_train,
                                 fstar_pieces, mass_entropy, piece_tolerances, residual_density,
                                 tail_term_report, tail_terms_decrease)

F = make_fstar(50)
PIECES = fstar_pieces(F)
Z = F.params["Z"]


def uniform_piece(a, b, ell=1):
    return PieceSpec(ell, a, b, 1.0, (b - a) / 4, uniform(a, b))


def kl_uniform_oracle(a, b, g):
    """KL(U[a,b] || g) = -log(b - a) - mean of log g over [a, b]."""
    val = sint.quad(lambda x: g.logpdf(np.array([x]))[0], a, b, epsabs=1e-14, epsrel=1e-13, limit=400)[0]
    return -math.log(b - a) - val / (b - a)


def test_fstar_pieces():
    p2 = PIECES[1]
    assert p2.p == 2.0 ** -6 / Z and p2.r == 2.0 ** -6 / 4
    assert all(pc.oscillation == 0 for pc in PIECES)
    assert abs(math.fsum(pc.p for pc in PIECES) - 1.0) < 1e-12
    for pc in PIECES[:10]:
        mass = sint.quad(F.pdf, pc.left, pc.right, epsabs=1e-16)[0]
        assert abs(mass - pc.p) < 1e-10
    with pytest.raises(ValidationError):
        fstar_pieces(uniform(0, 1))


def test_piece_approximant_small_interval():
    piece = uniform_piece(4.0, 4.0 + 2.0 ** -6)
    res = build_piece_approximant(piece, 2.0 ** -3)
    assert res.kl.value < 2.0 ** -3
    assert abs(kl_uniform_oracle(piece.left, piece.right, res.g) - res.kl.value) < 1e-9


def test_piece_approximant_huge_eps():
    res = build_piece_approximant(uniform_piece(1.0, 3.0), 10.0)
    assert res.k == 1
    assert res.g.means[0, 0] == 2.0 and abs(res.g.covs[0, 0, 0] - 4 / 12) < 1e-15
    # the matched Gaussian for a uniform law: KL = log(sqrt(2 pi e / 12))
    assert abs(res.kl.value - 0.5 * math.log(2 * math.pi * math.e / 12)) < 1e-9


def test_piece_approximant_unreachable():
    with pytest.raises(ToleranceUnreachable) as exc:
        build_piece_approximant(uniform_piece(0.0, 1.0), 1e-9, k_max=8)
    assert exc.value.best is not None and exc.value.achieved > 1e-9


def test_bump_train_positive():
    g = bump_train(0.0, 1.0, 16)
    assert np.all(g.logpdf(np.linspace(-50, 50, 1001)) > -np.inf)
    assert g.n_components == 16


def test_piece_tolerances_budget():
    eps = 0.1
    tol = piece_tolerances(eps, PIECES)
    assert abs(math.fsum(pc.p * e for pc, e in zip(PIECES, tol)) - eps / 2) < 1e-15


def test_mass_entropy():
    assert abs(mass_entropy(1 / math.e) - 1 / math.e) < 1e-16
    assert mass_entropy(0.0) == 0.0 and mass_entropy(1.0) == 0.0


def exact_tail_terms(L):
    """The four summands over pieces n > L in exact rational arithmetic on the stored endpoints."""
    level = Fraction(1) / Fraction(Z)
    rest = [(Fraction(a), Fraction(b)) for a, b in F.support.intervals[L:]]
    p = float(sum(level * (b - a) for a, b in rest))
    half_m2 = float(sum(level * (b ** 3 - a ** 3) / 6 for a, b in rest))
    log_plus = p * max(math.log(1 / Z), 0.0)
    return log_plus, 0.5 * math.log(2 * math.pi) * p, half_m2, mass_entropy(p), p


def test_tail_terms_oracle():
    for L in (5, 20):
        rep = tail_term_report(F, PIECES, L)
        ex = exact_tail_terms(L)
        for got, want in zip(rep.summands + (rep.p_tail,), ex):
            assert abs(got - want) <= 1e-10 * max(abs(want), 1e-300) + 1e-18
    empty = tail_term_report(F, PIECES, 50)
    assert empty.summands == (0.0, 0.0, 0.0, 0.0)


def test_tail_terms_decrease_l_to_l_plus_5():
    reps, flags = tail_terms_decrease(F, PIECES, [10, 15])
    assert all(math.isfinite(s) for r in reps for s in r.summands)
    # the density level 1/Z is below 1, so the log_+ summand is identically 0
    assert reps[0].log_plus == 0.0 == reps[1].log_plus
    assert flags == (False, True, True, True)


def test_residual_density():
    nu = residual_density(PIECES, 5)
    total = math.fsum(sint.quad(nu.pdf, a, b, epsabs=1e-16)[0] for a, b in nu.support.intervals)
    assert abs(total - 1.0) < 1e-10
    assert nu.support.intervals[0, 0] == 36.0


@pytest.fixture(scope="module")
def full_cssa():
    return build_cssa_approximant(F, PIECES, 50, 0.1)


def test_cssa_all_pieces(full_cssa):
    app = full_cssa
    assert app.p_tail == 0.0 and app.tail.total == 0.0 and app.tail_kl is None
    assert app.bound == app.first_term
    assert app.first_term <= 0.05 + app.first_term_error
    assert all(a.kl.value < e for a, e in zip(app.piece_approx, app.piece_eps))
    assert abs(math.fsum(app.G.weights) - 1.0) < 1e-12


def test_cssa_flattening(full_cssa):
    app = full_cssa
    x = np.concatenate([np.linspace(pc.left, pc.right, 7) for pc in PIECES[:8]] + [np.array([-1.0, 10.5])])
    flat = app.G.pdf(x)
    summed = sum(pc.p * a.g.pdf(x) for pc, a in zip(app.pieces, app.piece_approx))
    assert np.allclose(flat, summed, rtol=1e-12, atol=0)


def test_cssa_kl_split(full_cssa):
    app = full_cssa
    kl = kl_quadrature_1d(F, app.G)
    assert kl.value < 0.1
    assert kl.value <= app.first_term + kl.error + app.first_term_error


def test_cssa_partial_l5():
    app = build_cssa_approximant(F, PIECES, 5, 0.1)
    p_used = math.fsum(pc.p for pc in PIECES[:5])
    assert abs(app.p_tail - (1 - p_used)) < 1e-12
    assert app.G.weights[-1] == pytest.approx(app.p_tail, rel=1e-12)
    assert app.G.covs[-1, 0, 0] == 1.0 and app.G.means[-1, 0] == 0.0
    assert all(math.isfinite(s) for s in app.tail.summands)
    kl = kl_quadrature_1d(F, app.G)
    rhs = app.first_term + app.p_tail * app.tail_kl.value
    assert kl.value <= rhs + kl.error + app.first_term_error + app.p_tail * app.tail_kl.error
    assert app.p_tail * app.tail_kl.value <= app.tail.total + app.tail.error
