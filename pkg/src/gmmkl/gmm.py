"""Finite Gaussian mixtures: evaluation, sampling, closed-form moments, file I/O."""

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import MomentDiverges, ParseError, ValidationError

LOG_2PI = math.log(2.0 * math.pi)

# Groups larger than this use the windowed 1-D evaluator.
_DENSE_GROUP = 256
# Cap on the size of temporary (points x components) blocks.
_BLOCK = 4_000_000


@dataclass(frozen=True)
class GaussComponent:
    weight: float
    mean: np.ndarray
    cov: np.ndarray


class FiniteGMM:
    """A validated finite Gaussian mixture on R^d.

    Parameters
    ----------
    weights : array_like, shape (k,)
        Nonnegative mixing weights summing to one within 1e-12.
    means : array_like, shape (k, d) or (k,) when d == 1
    covs : array_like, shape (k, d, d), or (k,) of variances when d == 1

    The object is immutable.  Points passed to :meth:`logpdf` may have shape
    ``(n, d)`` or ``(n,)`` in one dimension.
    """

    def __init__(self, weights, means, covs):
        w = np.array(weights, dtype=float).ravel()
        mu = np.array(means, dtype=float)
        if mu.ndim == 1:
            mu = mu[:, None]
        cov = np.array(covs, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None, None]
        if w.size == 0:
            raise ValidationError("a mixture needs at least one component")
        if mu.ndim != 2 or mu.shape[0] != w.size:
            raise ValidationError(f"means have shape {mu.shape}, expected ({w.size}, d)")
        d = mu.shape[1]
        if cov.shape != (w.size, d, d):
            raise ValidationError(f"covariances have shape {cov.shape}, expected ({w.size}, {d}, {d})")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(cov))):
            raise ValidationError("mixture parameters must be finite")
        if np.any(w < 0):
            raise ValidationError("weights must be nonnegative")
        total = math.fsum(w)
        if abs(total - 1.0) > 1e-12:
            raise ValidationError(f"weights sum to {total!r}, not 1")
        asym = np.abs(cov - np.swapaxes(cov, 1, 2)).max(axis=(1, 2))
        if np.any(asym > 1e-12 * np.maximum(np.abs(cov).max(axis=(1, 2)), 1e-300)):
            raise ValidationError("covariances must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValidationError("a covariance matrix is not positive definite") from None
        if np.any(np.diagonal(chol, axis1=1, axis2=2) <= 0) or not np.all(np.isfinite(chol)):
            raise ValidationError("a covariance matrix is not positive definite")

        for arr in (w, mu, cov, chol):
            arr.setflags(write=False)
        self.dim = d
        self.weights = w
        self.means = mu
        self.covs = cov
        self.chol = chol
        self._prepare()

    # construction helpers -------------------------------------------------

    @classmethod
    def isotropic(cls, weights, means, variances):
        """Mixture with covariances ``variances[j] * I``."""
        mu = np.asarray(means, dtype=float)
        if mu.ndim == 1:
            mu = mu[:, None]
        var = np.asarray(variances, dtype=float).ravel()
        if var.size == 1 and mu.shape[0] > 1:
            var = np.full(mu.shape[0], var[0])
        eye = np.eye(mu.shape[1])
        return cls(weights, mu, var[:, None, None] * eye[None])

    @classmethod
    def normal(cls, mean=0.0, var=1.0, dim=1):
        mean = np.broadcast_to(np.asarray(mean, dtype=float), (dim,))
        return cls.isotropic([1.0], mean[None, :], [var])

    @classmethod
    def combine(cls, parts):
        """Flatten ``[(weight, FiniteGMM), ...]`` into one mixture.

        Weights are renormalised with ``math.fsum`` to absorb rounding.
        """
        parts = [(float(a), g) for a, g in parts if a > 0]
        d = parts[0][1].dim
        w = np.concatenate([a * g.weights for a, g in parts])
        w = w / math.fsum(w)
        mu = np.concatenate([g.means for _, g in parts])
        cov = np.concatenate([g.covs for _, g in parts])
        if any(g.dim != d for _, g in parts):
            raise ValidationError("cannot combine mixtures of different dimension")
        return cls(w, mu, cov)

    @property
    def n_components(self):
        return self.weights.size

    @property
    def components(self):
        return [GaussComponent(float(w), m, c) for w, m, c in zip(self.weights, self.means, self.covs)]

    def __repr__(self):
        return f"FiniteGMM(dim={self.dim}, n_components={self.n_components})"

    # evaluation ------------------------------------------------------------

    def _prepare(self):
        live = np.flatnonzero(self.weights > 0)
        logw = np.log(self.weights[live])
        if self.dim == 1:
            mu = self.means[live, 0]
            var = self.covs[live, 0, 0]
            # Canonical order makes evaluation invariant under permutation.
            order = np.lexsort((logw, mu, var))
            mu, var, logw = mu[order], var[order], logw[order]
            cuts = np.flatnonzero(np.diff(var)) + 1
            self._groups = []
            for idx in np.split(np.arange(var.size), cuts):
                lw = logw[idx]
                spread = float(lw.max() - lw.min())
                self._groups.append((mu[idx], math.sqrt(var[idx[0]]), lw,
                                     math.sqrt(2.0 * (spread + 750.0))))
        else:
            mu = self.means[live]
            cov = self.covs[live]
            keys = np.column_stack([mu, cov.reshape(len(live), -1), logw])
            order = np.lexsort(keys.T[::-1])
            chol = self.chol[live][order]
            self._dense = (
                mu[order],
                np.linalg.inv(chol),
                logw[order] - np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
                - 0.5 * self.dim * LOG_2PI,
            )

    def _points(self, x):
        x = np.asarray(x, dtype=float)
        if self.dim == 1:
            if x.ndim == 0:
                return x.reshape(1)
            if x.ndim == 2 and x.shape[1] == 1:
                return x[:, 0]
            if x.ndim != 1:
                raise ValidationError(f"points of shape {x.shape} do not match dim 1")
            return x
        if x.ndim == 1 and x.shape[0] == self.dim:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValidationError(f"points of shape {x.shape} do not match dim {self.dim}")
        return x

    def logpdf(self, x):
        """log g(x), stable in log space; never -inf for finite x."""
        pts = self._points(x)
        if self.dim == 1:
            out = None
            for mu, s, lw, reach in self._groups:
                if mu.size <= _DENSE_GROUP:
                    part = _group_dense(pts, mu, s, lw)
                else:
                    part = _group_windowed(pts, mu, s, lw, reach)
                out = part if out is None else np.logaddexp(out, part)
            return out
        mu, linv, lconst = self._dense
        k = mu.shape[0]
        out = np.empty(pts.shape[0])
        step = max(1, _BLOCK // (k * self.dim))
        for i in range(0, pts.shape[0], step):
            diff = pts[i:i + step, None, :] - mu[None, :, :]
            sol = np.einsum("kij,nkj->nki", linv, diff)
            out[i:i + step] = logsumexp(lconst[None, :] - 0.5 * np.sum(sol * sol, axis=2), axis=1)
        return out

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def sample(self, n, seed):
        """Draw ``n`` points; ``seed`` is anything ``np.random.default_rng`` accepts."""
        rng = np.random.default_rng(seed)
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        x = self.means[comp] + np.einsum("nij,nj->ni", self.chol[comp], z)
        return x[:, 0] if self.dim == 1 else x


def _group_dense(x, mu, s, lw):
    out = np.empty(x.shape[0])
    step = max(1, _BLOCK // mu.size)
    for i in range(0, x.shape[0], step):
        z = (x[i:i + step, None] - mu[None, :]) / s
        out[i:i + step] = logsumexp(lw[None, :] - 0.5 * z * z, axis=1)
    return out - math.log(s) - 0.5 * LOG_2PI


def _group_windowed(x, mu, s, lw, reach):
    """Shared-bandwidth group with sorted means.

    Only components within ``reach`` bandwidths of the nearest mean are summed;
    ``reach`` is chosen so every dropped term is below 1e-320 of the nearest
    term, i.e. the result equals the dense sum to floating precision.
    """
    k = mu.size
    idx = np.searchsorted(mu, x)
    left = np.clip(idx - 1, 0, k - 1)
    right = np.clip(idx, 0, k - 1)
    dmin = np.minimum(np.abs(x - mu[left]), np.abs(x - mu[right]))
    half = dmin + reach * s
    lo = np.searchsorted(mu, x - half, side="left")
    hi = np.searchsorted(mu, x + half, side="right")
    n = x.shape[0]
    out = np.empty(n)
    width = hi - lo
    order = np.argsort(width, kind="stable")
    sw = width[order]
    # Blocks of similar window width keep the padded temporaries small.
    start = 0
    while start < n:
        stop = min(n, start + max(1, _BLOCK // max(1, int(sw[start]))))
        if (stop - start) * int(sw[stop - 1]) > _BLOCK:
            stop = start + max(1, _BLOCK // int(sw[stop - 1]))
        sel = order[start:stop]
        wmax = int(sw[stop - 1])
        j = lo[sel, None] + np.arange(wmax)[None, :]
        valid = j < hi[sel, None]
        j = np.minimum(j, k - 1)
        z = (x[sel, None] - mu[j]) / s
        terms = np.where(valid, lw[j] - 0.5 * z * z, -np.inf)
        out[sel] = logsumexp(terms, axis=1)
        start = stop
    return out - math.log(s) - 0.5 * LOG_2PI


def gmm_logpdf(g, x):
    return g.logpdf(x)


def log_exp_quadratic_moment(g, t0):
    """log of the closed-form integral of exp(t0 |x|^2) g(x).

    Per component N(mu, S): det(I - 2 t0 S)^(-1/2) exp(t0 mu^T (I - 2 t0 S)^(-1) mu).
    """
    t0 = float(t0)
    if t0 < 0:
        raise ValueError("t0 must be nonnegative")
    lam_max = np.linalg.eigvalsh(g.covs)[:, -1]
    if np.any(2.0 * t0 * lam_max >= 1.0):
        raise MomentDiverges(
            f"t0={t0!r} is outside the convergence domain t0 < 1/(2*lambda_max) = "
            f"{1.0 / (2.0 * lam_max.max())!r}")
    eye = np.eye(g.dim)
    a = eye[None] - 2.0 * t0 * g.covs
    sign, logdet = np.linalg.slogdet(a)
    quad = np.einsum("ki,ki->k", g.means, np.linalg.solve(a, g.means[:, :, None])[:, :, 0])
    live = g.weights > 0
    terms = np.log(g.weights[live]) - 0.5 * logdet[live] + t0 * quad[live]
    return float(logsumexp(terms))


def exp_quadratic_moment(g, t0):
    return math.exp(log_exp_quadratic_moment(g, t0))


def default_t0(g):
    """1 / (8 max_j lambda_max(S_j)), safely inside the convergence domain."""
    return 1.0 / (8.0 * float(np.linalg.eigvalsh(g.covs)[:, -1].max()))


def gmm_second_moment(g):
    """sum_j pi_j (|mu_j|^2 + tr S_j)."""
    per = np.sum(g.means ** 2, axis=1) + np.trace(g.covs, axis1=1, axis2=2)
    return float(math.fsum(g.weights * per))


# file I/O -------------------------------------------------------------------

def _num(x):
    return format(float(x), ".17g")


def dumps_mixture(g):
    lines = ["{", f'  "dim": {g.dim},', '  "components": [']
    for j in range(g.n_components):
        mean = ", ".join(_num(v) for v in g.means[j])
        cov = ", ".join("[" + ", ".join(_num(v) for v in row) + "]" for row in g.covs[j])
        sep = "," if j + 1 < g.n_components else ""
        lines.append(f'    {{"weight": {_num(g.weights[j])}, "mean": [{mean}], "cov": [{cov}]}}{sep}')
    lines += ["  ]", "}"]
    return "\n".join(lines) + "\n"


def write_mixture(g, file):
    text = dumps_mixture(g)
    if hasattr(file, "write"):
        file.write(text)
    else:
        with open(file, "w") as fh:
            fh.write(text)


def loads_mixture(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"line {exc.lineno}, column {exc.colno}") from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object", "document")
    dim = doc.get("dim")
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise ParseError("must be a positive integer", "dim")
    comps = doc.get("components")
    if not isinstance(comps, list) or not comps:
        raise ParseError("must be a nonempty array", "components")
    w, mu, cov = [], [], []
    for j, c in enumerate(comps):
        where = f"components[{j}]"
        if not isinstance(c, dict):
            raise ParseError("must be an object", where)
        for key in ("weight", "mean", "cov"):
            if key not in c:
                raise ParseError("missing field", f"{where}.{key}")
        w.append(_parse_number(c["weight"], f"{where}.weight"))
        mean = c["mean"]
        if not isinstance(mean, list) or len(mean) != dim:
            raise ParseError(f"must be an array of {dim} numbers", f"{where}.mean")
        mu.append([_parse_number(v, f"{where}.mean[{i}]") for i, v in enumerate(mean)])
        rows = c["cov"]
        if not isinstance(rows, list) or len(rows) != dim:
            raise ParseError(f"must be a {dim}x{dim} array", f"{where}.cov")
        mat = []
        for i, row in enumerate(rows):
            if not isinstance(row, list) or len(row) != dim:
                raise ParseError(f"row must have {dim} entries", f"{where}.cov[{i}]")
            mat.append([_parse_number(v, f"{where}.cov[{i}][{k}]") for k, v in enumerate(row)])
        cov.append(mat)
    return FiniteGMM(np.array(w), np.array(mu), np.array(cov))


def _parse_number(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError("must be a number", where)
    return float(v)


def read_mixture(file):
    if hasattr(file, "read"):
        return loads_mixture(file.read())
    with open(file) as fh:
        return loads_mixture(fh.read())
