"""Exact reference posteriors for small ``d``.

* Gaussian slab: enumeration of all ``2^d`` support patterns, each with a
  conjugate Gaussian conditional.
* Any slab, ``d <= 2``: adaptive quadrature of the unnormalized posterior.
* ``d = 1``: numerical check of the measure decomposition.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, linalg, special

from . import _seeding
from .errors import ConfigError, PreconditionError, QuadratureError
from .potential import slab_transform
from .priors import GaussianSlab

MAX_ENUM_D = 20
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class ExactPosterior:
    """Finite Gaussian mixture over support patterns.

    ``patterns[k]`` is a boolean mask; ``means[k]``/``covs[k]`` are the
    conditional moments of the active coordinates (in increasing index order).
    """

    patterns: np.ndarray
    log_weights: np.ndarray
    means: tuple
    covs: tuple

    @property
    def d(self):
        return self.patterns.shape[1]

    @property
    def weights(self):
        return np.exp(self.log_weights)

    def _coordinate(self, i):
        """Per-pattern (weight, mean, sd) for coordinate ``i`` over patterns containing it."""
        w, mu, sd = [], [], []
        for k, mask in enumerate(self.patterns):
            if mask[i]:
                pos = int(np.count_nonzero(mask[:i]))
                w.append(math.exp(self.log_weights[k]))
                mu.append(self.means[k][pos])
                sd.append(math.sqrt(self.covs[k][pos, pos]))
        return np.array(w), np.array(mu), np.array(sd)

    def atom_prob(self, i):
        return float(np.sum(np.exp(self.log_weights[~self.patterns[:, i]])))

    def marginal_cdf(self, i, t):
        """CDF of ``theta_i`` at ``t`` (array allowed); the atom counts for ``t >= 0``."""
        t = np.asarray(t, dtype=float)
        w, mu, sd = self._coordinate(i)
        cont = np.zeros_like(t)
        for wk, mk, sk in zip(w, mu, sd):
            cont = cont + wk * special.ndtr((t - mk) / sk)
        return cont + self.atom_prob(i) * (t >= 0.0)

    def marginal_moments(self, i):
        w, mu, sd = self._coordinate(i)
        m1 = float(np.sum(w * mu))
        m2 = float(np.sum(w * (mu * mu + sd * sd)))
        return m1, m2 - m1 * m1

    def support(self, i, width=10.0):
        """An interval holding essentially all continuous mass of coordinate ``i``."""
        _, mu, sd = self._coordinate(i)
        if mu.size == 0:
            return 0.0, 0.0
        return float(np.min(mu - width * sd)), float(np.max(mu + width * sd))


def _pattern_masks(d):
    """All subsets in binary-counter order: pattern ``k`` contains ``j`` iff bit ``j`` of ``k`` is set."""
    k = np.arange(2**d)[:, None]
    return ((k >> np.arange(d)[None, :]) & 1).astype(bool)


def enumerate_exact_posterior(X, y, noise_std, prior):
    """Exact posterior under a Gaussian slab by enumerating support patterns."""
    if not isinstance(prior.slab, GaussianSlab):
        raise ConfigError("exact enumeration requires a Gaussian slab")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    n, d = X.shape
    if d > MAX_ENUM_D:
        raise ConfigError(f"enumeration is capped at d <= {MAX_ENUM_D}, got d={d}")
    s2 = float(noise_std) ** 2
    v = prior.slab.variance
    log_q, log_1mq = math.log(prior.q), math.log1p(-prior.q)
    gram = X.T @ X / s2
    b_all = X.T @ y / s2
    yy = float(y @ y) / s2
    base = -0.5 * (n * _LOG_2PI + n * math.log(s2) + yy)

    masks = _pattern_masks(d)
    logw = np.empty(len(masks))
    means, covs = [], []
    for k, mask in enumerate(masks):
        idx = np.flatnonzero(mask)
        size = idx.size
        prior_term = size * log_q + (d - size) * log_1mq
        if size == 0:
            logw[k] = prior_term + base
            means.append(np.zeros(0))
            covs.append(np.zeros((0, 0)))
            continue
        prec = gram[np.ix_(idx, idx)] + np.eye(size) / v
        c = linalg.cho_factor(prec, lower=True)
        b = b_all[idx]
        mu = linalg.cho_solve(c, b)
        logdet_prec = 2.0 * float(np.sum(np.log(np.diag(c[0]))))
        logw[k] = prior_term + base - 0.5 * (size * math.log(v) + logdet_prec) + 0.5 * float(b @ mu)
        cov = linalg.cho_solve(c, np.eye(size))
        means.append(mu)
        covs.append(0.5 * (cov + cov.T))
    logw -= special.logsumexp(logw)
    return ExactPosterior(masks, logw, tuple(means), tuple(covs))


def exact_marginal_query(post, i, t):
    """``(P(theta_i = 0), P(theta_i <= t))`` under the exact posterior."""
    if not 0 <= i < post.d:
        raise ConfigError(f"coordinate {i} out of range")
    return post.atom_prob(i), float(post.marginal_cdf(i, t))


def sample_exact(post, n, seed):
    """``n`` draws: pattern by categorical weight, then its Gaussian conditional."""
    rng = _seeding.rng(seed, _seeding.THETA)
    w = post.weights
    ks = rng.choice(len(w), size=int(n), p=w / w.sum())
    out = np.zeros((int(n), post.d))
    for k in np.unique(ks):
        rows = np.flatnonzero(ks == k)
        idx = np.flatnonzero(post.patterns[k])
        if idx.size:
            L = linalg.cholesky(post.covs[k], lower=True)
            z = rng.standard_normal((rows.size, idx.size))
            out[np.ix_(rows, idx)] = post.means[k] + z @ L.T
    return out


def marginal_table(post, i, ts):
    """Rows ``(t, cdf(t))`` for overlaying sampled and exact marginals of coordinate ``i``."""
    ts = np.asarray(ts, dtype=float)
    return np.column_stack([ts, post.marginal_cdf(i, ts)])


def wasserstein1(samples, post, i, grid_points=20001):
    """W1 distance between the empirical law of ``samples`` and the exact marginal ``i``."""
    samples = np.sort(np.asarray(samples, dtype=float))
    lo, hi = post.support(i)
    lo = min(lo, samples[0], 0.0) - 1e-9
    hi = max(hi, samples[-1], 0.0) + 1e-9
    t = np.union1d(np.linspace(lo, hi, grid_points), [0.0, -1e-15])
    emp = np.searchsorted(samples, t, side="right") / samples.size
    diff = np.abs(emp - post.marginal_cdf(i, t))
    # left-Riemann sum: both CDFs are right-continuous step/smooth functions
    return float(np.sum(diff[:-1] * np.diff(t)))


# --------------------------------------------------------------------------
# quadrature oracle (d <= 2, any slab)

_QUAD = {"epsabs": 1e-13, "epsrel": 1e-11, "limit": 500}


@dataclass(frozen=True, eq=False)
class QuadraturePosterior:
    """Posterior of a ``d <= 2`` instance by adaptive quadrature (any slab).

    Pattern masses are integrals of ``exp(loglik - shift) prod mu`` over the
    active coordinates; ``log_norm`` is the log of their prior-weighted sum.
    """

    instance: object
    prior: object
    patterns: np.ndarray
    log_weights: np.ndarray
    shift: float
    log_norm: float

    @property
    def weights(self):
        return np.exp(self.log_weights)

    def atom_prob(self, i):
        return float(np.sum(self.weights[~self.patterns[:, i]]))

    def marginal_cdf(self, i, t):
        """``P(theta_i <= t)`` by nested quadrature."""
        t = float(t)
        masses = _pattern_masses(self.instance, self.prior, self.shift, upper=t, coord=i)
        logp = _prior_logw(self.patterns, self.prior.q)
        total = self.atom_prob(i) if t >= 0.0 else 0.0
        for k, mask in enumerate(self.patterns):
            if mask[i] and masses[k] > 0.0:
                total += math.exp(math.log(masses[k]) + logp[k] - self.log_norm)
        return total


def _prior_logw(patterns, q):
    size = patterns.sum(axis=1)
    return size * math.log(q) + (patterns.shape[1] - size) * math.log1p(-q)


def _pattern_masses(instance, prior, shift, upper=None, coord=None):
    """Integral of ``exp(loglik - shift) prod mu`` over each pattern's active coordinates.

    If ``upper`` is given, the integral over coordinate ``coord`` is restricted to ``(-inf, upper]``.
    """
    X, y, s = instance.X, instance.y, instance.noise_std
    d = X.shape[1]
    logpdf = prior.slab.logpdf

    def integrand(theta):
        r = y - X @ theta
        return -0.5 * float(r @ r) / s**2 - shift

    masks = _pattern_masks(d)
    out = np.empty(len(masks))
    for k, mask in enumerate(masks):
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            out[k] = math.exp(integrand(np.zeros(d)))
            continue

        def f(*args):
            theta = np.zeros(d)
            theta[idx] = args[::-1] if len(args) > 1 else args
            return math.exp(integrand(theta) + float(np.sum(logpdf(np.asarray(args, float)))))

        def hi_for(j):
            return upper if (upper is not None and j == coord) else np.inf

        if idx.size == 1:
            b = hi_for(idx[0])
            pieces = [(-np.inf, min(0.0, b))] + ([(0.0, b)] if b > 0.0 else [])
            val = sum(_quad1(f, a, c) for a, c in pieces if c > a)
        else:
            # dblquad integrates f(inner, outer); args[::-1] maps to (theta_0, theta_1)
            b0, b1 = hi_for(idx[0]), hi_for(idx[1])
            val = 0.0
            for a0, c0 in _halves(b0):
                for a1, c1 in _halves(b1):
                    val += _quad2(f, a0, c0, a1, c1)
        out[k] = val
    return out


def _halves(b):
    pieces = [(-np.inf, min(0.0, b))]
    if b > 0.0:
        pieces.append((0.0, b))
    return [(a, c) for a, c in pieces if c > a]


def _quad1(f, a, b):
    val, err = integrate.quad(f, a, b, **_QUAD)
    if not math.isfinite(val):
        raise QuadratureError("one-dimensional oracle quadrature failed")
    return val


def _quad2(f, a0, b0, a1, b1):
    # outer variable theta_0 on [a0, b0], inner theta_1 on [a1, b1]; f(inner, outer)
    val, err = integrate.dblquad(f, a0, b0, a1, b1, epsabs=1e-13, epsrel=1e-10)
    if not math.isfinite(val):
        raise QuadratureError("two-dimensional oracle quadrature failed")
    return val


def quadrature_posterior(instance, prior):
    """Pattern weights of a ``d <= 2`` posterior by adaptive quadrature (any slab)."""
    if instance.d > 2:
        raise ConfigError("the quadrature oracle supports d <= 2")
    X, y, s = instance.X, instance.y, instance.noise_std
    theta_ls = np.linalg.lstsq(X, y, rcond=None)[0]
    r = y - X @ theta_ls
    shift = -0.5 * float(r @ r) / s**2
    masses = _pattern_masses(instance, prior, shift)
    patterns = _pattern_masks(instance.d)
    logw = np.log(masses) + _prior_logw(patterns, prior.q)
    log_norm = float(special.logsumexp(logw))
    return QuadraturePosterior(instance, prior, patterns, logw - log_norm, shift, log_norm)


# --------------------------------------------------------------------------
# measure-decomposition check


@dataclass(frozen=True)
class ConsistencyResult:
    max_abs_error: float
    atom_error: float
    density_error: float
    grid: np.ndarray


def decomposition_consistency_check(decomp, prior, instance, nodes=400, grid_points=200,
                                    detail=False):
    """Compare the posterior with the ``theta``-marginal of the joint ``(theta, phi)`` law (d = 1).

    The ``phi`` integral is done by Gauss-Legendre on ``A theta +- 10 sqrt(A)``
    with ``nodes`` points; the joint is normalized by adaptive quadrature over
    ``theta``; the posterior is normalized in closed form. Returns the largest
    absolute difference of the atom mass and of the continuous density on a
    ``grid_points`` grid (a :class:`ConsistencyResult` if ``detail``).
    """
    if instance.d != 1 or decomp.d != 1:
        raise ConfigError("the consistency check is defined for d = 1")
    x = instance.X[:, 0]
    s2 = instance.noise_std ** 2
    lam = float(x @ x) / s2
    h = float(x @ instance.y) / s2
    gamma = decomp.gamma
    A = gamma - lam
    if not A > 0.0:
        raise PreconditionError(f"gamma={gamma!r} must exceed lambda_max={lam!r}")
    if lam <= 0.0:
        raise PreconditionError("the design column must be nonzero")
    q = prior.q
    slab = prior.slab

    nodes_std, w_std = np.polynomial.legendre.leggauss(int(nodes))
    half = 10.0 * math.sqrt(A)
    log_w = np.log(w_std * half)

    def log_inner(theta):
        """``log int exp(-phi^2 / (2A) + phi theta) dphi`` by Gauss-Legendre."""
        phi = A * theta + half * nodes_std
        return float(special.logsumexp(-0.5 * phi * phi / A + phi * theta + log_w))

    def log_joint(theta):
        return h * theta - 0.5 * gamma * theta * theta + log_inner(theta) \
            + float(slab.logpdf(np.atleast_1d(theta))[0])

    # posterior side: exp(h t - lam t^2 / 2) pi_0(dt), normalized in closed form.
    st = slab_transform(slab, lam, h)
    logg, mean, var = st.log_g, st.mean, st.variance
    log_z6 = np.logaddexp(math.log1p(-q), math.log(q) + logg)

    sd = math.sqrt(var)
    lo, hi = mean - 8.0 * sd, mean + 8.0 * sd
    grid = np.linspace(lo, hi, grid_points)

    # phi side: normalize by quadrature over theta.
    qlo, qhi = mean - 40.0 * sd, mean + 40.0 * sd
    shift = max(log_joint(t) for t in grid)
    points = [0.0] if qlo < 0.0 < qhi else None
    mass, err = integrate.quad(lambda t: math.exp(log_joint(t) - shift), qlo, qhi,
                               points=points, epsabs=0.0, epsrel=1e-13, limit=500)
    if not (math.isfinite(mass) and mass > 0.0):
        raise QuadratureError("normalization quadrature failed")
    log_atom_phi = math.log1p(-q) + log_inner(0.0)
    log_m = np.logaddexp(log_atom_phi, math.log(q) + shift + math.log(mass))

    atom_6 = math.exp(math.log1p(-q) - log_z6)
    atom_phi = math.exp(log_atom_phi - log_m)
    logf = slab.logpdf(grid)
    dens_6 = np.exp(math.log(q) + h * grid - 0.5 * lam * grid * grid + logf - log_z6)
    dens_phi = np.exp(math.log(q) + np.array([log_joint(t) for t in grid]) - log_m)
    atom_err = abs(atom_6 - atom_phi)
    dens_err = float(np.max(np.abs(dens_6 - dens_phi)))
    result = ConsistencyResult(max(atom_err, dens_err), atom_err, dens_err, grid)
    return result if detail else result.max_abs_error


__all__ = [
    "ExactPosterior", "enumerate_exact_posterior", "exact_marginal_query", "sample_exact",
    "marginal_table", "wasserstein1", "QuadraturePosterior", "quadrature_posterior",
    "decomposition_consistency_check", "ConsistencyResult", "MAX_ENUM_D",
]
