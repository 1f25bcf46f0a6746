"""Countable-scale (support-aware) construction for piecewise targets.

G_L = sum_{l <= L} p_l g_l + p_{>L} N(0, 1), where each g_l approximates the
normalised restriction f_l of f to its piece Y_l.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .densities import INTERVALS, Density, piecewise_constant, uniform
from .divergence import KLEstimate, kl_quadrature_1d
from .errors import ToleranceUnreachable, ValidationError
from .gmm import FiniteGMM
from .quadrature import QuadratureBudget, integrate_intervals

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
# bump spacing is kept this many ulps above the floating resolution at the piece
MIN_SPACING_ULPS = 1e4


@dataclass(frozen=True)
class PieceSpec:
    """Piece Y = [left, right] of mass p with witness scale r and oscillation D."""

    ell: int
    left: float
    right: float
    p: float
    r: float
    density: Density
    oscillation: float = 0.0

    @property
    def width(self):
        return self.right - self.left


def fstar_pieces(f: Density):
    """One piece per interval J_n of an f_star truncation: p_n = n^-6 / Z, r_n = n^-6 / 4."""
    if "Z" not in f.params or f.support.kind != INTERVALS:
        raise ValidationError("fstar_pieces expects a density from make_fstar")
    z = f.params["Z"]
    out = []
    for i, (a, b) in enumerate(f.support.intervals):
        n = i + 1
        w = float(n) ** -6
        out.append(PieceSpec(n, float(a), float(b), w / z, w / 4.0,
                             uniform(float(a), float(b), name=f"J_{n}"), 0.0))
    return out


def bump_train(left, right, k):
    """k equal-weight Gaussians with spacing (right-left)/k and matching bandwidth.

    k = 1 is the Gaussian matched to the mean and variance of the uniform law.
    """
    w = right - left
    if k == 1:
        return FiniteGMM.normal(0.5 * (left + right), w * w / 12.0, 1)
    h = w / k
    centres = left + h * (np.arange(k) + 0.5)
    return FiniteGMM.isotropic(np.full(k, 1.0 / k), centres, h * h)


@dataclass(frozen=True)
class PieceApprox:
    g: FiniteGMM
    kl: KLEstimate
    k: int


def build_piece_approximant(piece: PieceSpec, eps, budget=None, k_max=1 << 16):
    """Bump train on the piece with k = 1, 2, 4, ... until the measured KL(f_l || g_l) < eps."""
    budget = budget or QuadratureBudget()
    floor = MIN_SPACING_ULPS * np.spacing(max(abs(piece.left), abs(piece.right)))
    best: Optional[PieceApprox] = None
    k = 1
    while k <= k_max and (k == 1 or piece.width / k >= floor):
        g = bump_train(piece.left, piece.right, k)
        est = kl_quadrature_1d(piece.density, g, budget)
        cand = PieceApprox(g, est, k)
        if best is None or est.value < best.kl.value:
            best = cand
        if est.value < eps:
            return cand
        k *= 2
    raise ToleranceUnreachable(
        f"piece {piece.ell}: best KL {best.kl.value:.3g} with {best.k} bumps, target {eps:.3g}",
        best=best, achieved=best.kl.value)


@dataclass(frozen=True)
class TailTerms:
    """The four summands bounding p_{>L} KL(nu_L || N(0,1)) over the residual pieces."""

    L: int
    log_plus: float
    gauss_const: float
    half_moment: float
    mass_entropy: float
    p_tail: float
    error: float

    @property
    def summands(self):
        return (self.log_plus, self.gauss_const, self.half_moment, self.mass_entropy)

    @property
    def total(self):
        return math.fsum(self.summands)


SUMMAND_NAMES = ("log_plus_f", "gauss_const", "half_second_moment", "mass_entropy")


def mass_entropy(p):
    """p log(1/p) with the value 0 at p = 0."""
    return -p * math.log(p) if p > 0 else 0.0


def tail_term_report(f: Density, pieces, L, budget=None):
    """Summands over the union of pieces with index > L, each integrated on those intervals."""
    budget = budget or QuadratureBudget()
    rest = [(pc.left, pc.right) for pc in pieces if pc.ell > L]
    if not rest:
        return TailTerms(int(L), 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def lp(x):
        lf = f.logpdf(x)
        return np.where(lf > 0, np.exp(lf) * np.maximum(lf, 0.0), 0.0)

    res_p = integrate_intervals(f.pdf, rest, budget)
    res_l = integrate_intervals(lp, rest, budget)
    res_m = integrate_intervals(lambda x: x * x * f.pdf(x), rest, budget)
    p = res_p.value
    dim = f.dim
    return TailTerms(int(L), res_l.value, dim * HALF_LOG_2PI * p, 0.5 * res_m.value,
                     mass_entropy(p), p, res_p.error + res_l.error + 0.5 * res_m.error)


def tail_terms_decrease(f, pieces, Ls, budget=None):
    """Reports along increasing L and, per summand, whether each step is a strict decrease."""
    reports = [tail_term_report(f, pieces, L, budget) for L in sorted(Ls)]
    flags = []
    for j in range(4):
        seq = [r.summands[j] for r in reports]
        flags.append(all(b < a for a, b in zip(seq, seq[1:])))
    return reports, tuple(flags)


def residual_density(pieces, L):
    """nu_L: normalised restriction of a piecewise-constant target to pieces with index > L."""
    rest = [pc for pc in pieces if pc.ell > L]
    iv = [[pc.left, pc.right] for pc in rest]
    lev = [pc.p / pc.width for pc in rest]
    total = math.fsum(pc.p for pc in rest)
    return piecewise_constant(iv, np.asarray(lev) / total, f"nu_{L}")


@dataclass(frozen=True)
class CssaApproximant:
    L: int
    eps: float
    pieces: tuple
    piece_approx: tuple
    piece_eps: tuple
    G: FiniteGMM
    p_tail: float
    first_term: float
    tail: TailTerms
    tail_kl: Optional[KLEstimate]

    @property
    def first_term_error(self):
        return math.fsum(pc.p * a.kl.error for pc, a in zip(self.pieces, self.piece_approx))

    @property
    def bound(self):
        return self.first_term + self.tail.total

    def piece_rows(self):
        return [{"ell": pc.ell, "left": pc.left, "right": pc.right, "p": pc.p, "r": pc.r,
                 "kl_piece": a.kl.value, "kl_piece_error": a.kl.error, "eps_piece": e,
                 "bumps": a.k}
                for pc, a, e in zip(self.pieces, self.piece_approx, self.piece_eps)]


PIECE_COLUMNS = ("ell", "left", "right", "p", "r", "kl_piece", "kl_piece_error", "eps_piece", "bumps")


def piece_tolerances(eps, pieces):
    """Per-piece KL targets eps_l with sum_l p_l eps_l = eps/2.

    The budget eps/2 is shared in proportion to sqrt(p_l), so eps_l grows like
    p_l^(-1/2) on light pieces.  Light pieces are also the narrow ones, where
    floating point cannot resolve a fine bump train.
    """
    roots = [math.sqrt(pc.p) for pc in pieces]
    total = math.fsum(roots)
    return tuple(0.5 * eps * r / (total * pc.p) if pc.p > 0 else math.inf
                 for r, pc in zip(roots, pieces))


def build_cssa_approximant(f: Density, pieces, L, eps, budget=None):
    """Assemble G_L and record the two halves of its KL bound."""
    budget = budget or QuadratureBudget()
    L = int(L)
    used = [pc for pc in pieces if pc.ell <= L]
    if not used:
        raise ValidationError("L must cover at least one piece")
    piece_eps = piece_tolerances(eps, used)
    approx = tuple(build_piece_approximant(pc, e, budget) for pc, e in zip(used, piece_eps))
    p_used = math.fsum(pc.p for pc in used)
    p_tail = 0.0 if len(used) == len(pieces) else max(0.0, 1.0 - p_used)
    parts = [(pc.p, a.g) for pc, a in zip(used, approx)]
    if p_tail > 0:
        parts.append((p_tail, FiniteGMM.normal(0.0, 1.0, 1)))
    G = FiniteGMM.combine(parts)
    first = math.fsum(pc.p * a.kl.value for pc, a in zip(used, approx))
    tail = tail_term_report(f, pieces, L, budget)
    tail_kl = None
    if p_tail > 0:
        tail_kl = kl_quadrature_1d(residual_density(pieces, L), FiniteGMM.normal(0.0, 1.0, 1), budget)
    return CssaApproximant(L, float(eps), tuple(used), approx, piece_eps, G, p_tail, first, tail, tail_kl)
