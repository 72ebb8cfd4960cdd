"""Tilted-slab transform, the potential ``V_gamma`` and the field energy ``H``.

With ``A = gamma I - X^T X / sigma^2`` and ``h = X^T y / sigma^2`` the
auxiliary field has energy

    H(phi) = phi^T A^{-1} phi / 2 + sum_i V_gamma(h_i + phi_i),
    V_gamma(x) = -log((1 - q) + q g(x)),  g(x) = int exp(x t - gamma t^2 / 2) mu(dt).

Closed forms (Gaussian, Laplace slabs) live in the kernel backends; the
generic slab goes through adaptive quadrature here.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, linalg, optimize

from . import _backend, _pykernels
from ._pykernels import KIND_GENERIC, KIND_QUADRATIC
from .errors import ConfigError, NonConvergenceError, PreconditionError, QuadratureError

QUAD_TOL = 1e-10
QUAD_HALF_WIDTH = 12.0
TABLE_POINTS = 4097
TABLE_CHUNK = 128


# --------------------------------------------------------------------------
# slab transform


@dataclass(frozen=True)
class SlabTransform:
    """``g`` and its derivatives at a point, stored in overflow-safe form.

    ``log_g`` is ``log g(x)``; ``mean`` and ``variance`` are the first two
    moments of the tilted slab ``exp(x t - gamma t^2 / 2) mu(dt) / g(x)``,
    i.e. ``g'/g`` and ``g''/g - (g'/g)^2``.
    """

    log_g: float
    mean: float
    variance: float

    @property
    def g(self):
        return math.exp(self.log_g)

    @property
    def g_prime(self):
        return self.g * self.mean

    @property
    def g_second(self):
        return self.g * (self.variance + self.mean * self.mean)


def _check_gamma(gamma):
    gamma = float(gamma)
    if not (math.isfinite(gamma) and gamma > 0.0):
        raise ConfigError(f"gamma must be positive, got {gamma!r}")
    return gamma


def _quad(fun, lo, hi, points):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(fun, lo, hi, points=points, epsabs=QUAD_TOL,
                                      epsrel=QUAD_TOL, limit=500)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"quadrature on [{lo}, {hi}] did not converge: {exc}") from None
    return val


def _generic_moments(slab, gamma, x):
    """Tilted moments of a generic slab by Gauss-Kronrod quadrature."""
    def psi(t):
        return x * t - 0.5 * gamma * t * t + float(slab.logpdf(t)[0])

    # The tilted density is gamma-strongly log-concave with mode between 0 and x/gamma.
    lo, hi = sorted((0.0, x / gamma))
    res = optimize.minimize_scalar(lambda t: -psi(t), bounds=(lo - 1e-12, hi + 1e-12),
                                   method="bounded", options={"xatol": 1e-10})
    m = float(res.x)
    top = psi(m)
    s = 1.0 / math.sqrt(gamma)
    a, b = m - QUAD_HALF_WIDTH * s, m + QUAD_HALF_WIDTH * s
    points = [0.0] if a < 0.0 < b else None

    def dens(t):
        return math.exp(psi(t) - top)

    z = _quad(dens, a, b, points)
    m1 = _quad(lambda t: (t - m) * dens(t), a, b, points) / z
    m2 = _quad(lambda t: (t - m) ** 2 * dens(t), a, b, points) / z
    return top + math.log(z), m + m1, max(m2 - m1 * m1, 0.0)


def _tilted(slab, gamma, x):
    x = np.asarray(x, dtype=float)
    if slab.kind == KIND_GENERIC:
        uniq, inverse = np.unique(x.ravel(), return_inverse=True)
        out = np.array([_generic_moments(slab, gamma, float(v)) for v in uniq], dtype=float)
        arr = out.reshape(-1, 3)[inverse.reshape(-1)].reshape(x.shape + (3,))
        return arr[..., 0], arr[..., 1], arr[..., 2]
    return _backend.kernels.tilted_moments(slab.kind, slab.param, gamma, x)


def slab_transform(slab, gamma, x):
    """``g(x)``, ``g'(x)``, ``g''(x)`` of the Gaussian-tilted slab (as :class:`SlabTransform`)."""
    gamma = _check_gamma(gamma)
    logg, mean, var = _tilted(slab, gamma, float(x))
    return SlabTransform(float(logg), float(mean), float(var))


def potential_terms(prior, gamma, x):
    """``(V, V', V'', p)`` of ``V_gamma`` at ``x`` (scalar or array, elementwise)."""
    gamma = _check_gamma(gamma)
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=float)
    slab = prior.slab
    if slab.kind == KIND_GENERIC:
        logg, mean, var = _tilted(slab, gamma, x)
        out = _pykernels.combine_terms(math.log(prior.q), math.log1p(-prior.q), logg, mean, var)
    else:
        out = _backend.kernels.potential_terms(slab.kind, slab.param, prior.q, gamma, x)
    if scalar:
        return tuple(float(v) for v in out)
    return tuple(np.asarray(v) for v in out)


def v_second(prior, gamma, x):
    return potential_terms(prior, gamma, x)[2]


def tabulated_tilted_draw(slab, gamma, x, u):
    """Inverse-CDF draws from ``exp(x t - gamma t^2 / 2) mu(dt)`` by a tabulated CDF.

    Used for generic slabs. ``x`` and ``u`` are equal-length arrays; the CDF
    of each tilted density is tabulated on a uniform grid wide enough to
    hold all but ``exp(-72)`` of its mass and integrated by the trapezoid rule.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    out = np.empty_like(x)
    if gamma > 0.0:
        s = QUAD_HALF_WIDTH / math.sqrt(gamma)
    else:
        top = float(slab.logpdf(0.0)[0])
        s = 1.0
        while float(slab.logpdf(s)[0]) > top - 80.0:
            s *= 2.0
            if s > 1e12:
                raise QuadratureError("slab tails too heavy to tabulate")
    frac = np.linspace(0.0, 1.0, TABLE_POINTS)
    for start in range(0, x.shape[0], TABLE_CHUNK):
        xs, us = x[start:start + TABLE_CHUNK, None], u[start:start + TABLE_CHUNK]
        centre = xs / gamma if gamma > 0.0 else np.zeros_like(xs)
        lo, hi = np.minimum(0.0, centre) - s, np.maximum(0.0, centre) + s
        t = lo + (hi - lo) * frac
        logd = xs * t - 0.5 * gamma * t * t + slab.logpdf(t).reshape(t.shape)
        dens = np.exp(logd - np.max(logd, axis=1, keepdims=True))
        cdf = np.zeros_like(t)
        np.cumsum(0.5 * (dens[:, 1:] + dens[:, :-1]), axis=1, out=cdf[:, 1:])
        total = cdf[:, -1]
        if not (np.all(np.isfinite(total)) and np.all(total > 0.0)):
            raise QuadratureError("tilted CDF table is degenerate")
        # inverse CDF by linear interpolation within the bracketing table cell
        target = us * total
        rows = np.arange(t.shape[0])
        k = np.clip(np.sum(cdf < target[:, None], axis=1), 1, TABLE_POINTS - 1)
        c0, c1 = cdf[rows, k - 1], cdf[rows, k]
        w = np.divide(target - c0, c1 - c0, out=np.zeros_like(target), where=c1 > c0)
        out[start:start + TABLE_CHUNK] = t[rows, k - 1] + w * (t[rows, k] - t[rows, k - 1])
    return out


# --------------------------------------------------------------------------
# decomposition and field energy


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Shift ``gamma``, tilt ``h`` and the factorized matrix ``A = gamma I - X^T X / sigma^2``."""

    gamma: float
    h: np.ndarray
    A: np.ndarray
    chol: np.ndarray
    lambda_min: float
    lambda_max: float

    @classmethod
    def from_instance(cls, instance, gamma=None, offset=0.1):
        """Build from a :class:`~slabdecomp.priors.RegressionInstance`.

        ``gamma=None`` selects ``lambda_max + offset``.
        """
        X, y, sigma = instance.X, instance.y, instance.noise_std
        gram = X.T @ X / sigma**2
        lam_min, lam_max = extreme_eigenvalues(gram)
        if gamma is None:
            gamma = lam_max + offset
        gamma = _check_gamma(gamma)
        if not gamma > lam_max:
            raise PreconditionError(
                f"gamma={gamma!r} must exceed lambda_max={lam_max!r} for A to be positive definite")
        A = gamma * np.eye(X.shape[1]) - gram
        A = 0.5 * (A + A.T)
        try:
            chol = linalg.cholesky(A, lower=True)
        except linalg.LinAlgError as exc:
            raise PreconditionError(f"A is not numerically positive definite: {exc}") from None
        h = X.T @ y / sigma**2
        for arr in (h, A):
            arr.setflags(write=False)
        chol = np.ascontiguousarray(chol)
        chol.setflags(write=False)
        return cls(gamma, h, A, chol, lam_min, lam_max)

    @property
    def d(self):
        return self.h.shape[0]

    def solve(self, v):
        """``A^{-1} v`` using the cached Cholesky factor."""
        return linalg.cho_solve((self.chol, True), v, check_finite=False)


def extreme_eigenvalues(gram):
    """Smallest (clipped at 0) and largest eigenvalue of a PSD matrix."""
    ev = linalg.eigvalsh(gram)
    return max(float(ev[0]), 0.0), max(float(ev[-1]), 0.0)


@dataclass(frozen=True, eq=False)
class FieldModel:
    """Flat description of ``H`` consumed by the kernel backends."""

    kind: int
    param: float
    q: float
    gamma: float
    chol: np.ndarray
    h: np.ndarray
    prior: object = None

    @property
    def d(self):
        return self.h.shape[0]

    def generic_terms(self, x):
        v, v1, _, _ = potential_terms(self.prior, self.gamma, x)
        return v, v1

    @property
    def kernels(self):
        """Backend able to evaluate this model."""
        return _pykernels if self.kind == KIND_GENERIC else _backend.kernels


def field_model(decomp, prior):
    slab = prior.slab
    return FieldModel(slab.kind, float(slab.param), prior.q, decomp.gamma,
                      decomp.chol, np.asarray(decomp.h), prior)


def quadratic_model(d):
    """Test hook: the standard Gaussian target ``H(phi) = |phi|^2 / 2``."""
    return FieldModel(KIND_QUADRATIC, 0.0, 0.5, 1.0, np.eye(d), np.zeros(d))


def field_hamiltonian(decomp, prior, phi):
    """``(H(phi), grad H(phi))``; ``A^{-1} phi`` comes from the Cholesky factor."""
    phi = np.asarray(phi, dtype=float).reshape(-1)
    if phi.shape[0] != decomp.d:
        raise ConfigError(f"phi has length {phi.shape[0]}, expected {decomp.d}")
    model = field_model(decomp, prior)
    return model.kernels.field_energy(model, phi)


# --------------------------------------------------------------------------
# infimum of V''


GRID_POINTS = 1024
MAX_DOUBLINGS = 60
TAIL_RATIO = 1.0 - 1e-3
FLAT_TOL = 1e-12


def _search_grid(x_max):
    half = GRID_POINTS // 2
    return np.unique(np.concatenate(([0.0], np.linspace(0.0, x_max, half),
                                     np.geomspace(1e-6 * x_max, x_max, half))))


def inf_v_second(prior, gamma):
    """Global infimum of ``V_gamma''`` over the real line and a minimizer ``x >= 0``.

    ``V''`` is even, so only ``x >= 0`` is searched: a dense grid on
    ``[0, x_max]`` locates the basin and a bounded Brent/golden-section step
    refines it. ``x_max`` doubles until the tail is clearly above the best
    value found, or until the tail has flattened onto its asymptote.
    """
    gamma = _check_gamma(gamma)
    x_max = 8.0 * (1.0 + math.sqrt(gamma) + 1.0 / math.sqrt(gamma))
    for _ in range(MAX_DOUBLINGS):
        grid = _search_grid(x_max)
        vals = v_second(prior, gamma, grid)
        i = int(np.argmin(vals))
        best = float(vals[i])
        tail = float(vals[-1])
        if tail > TAIL_RATIO * best:
            break
        if abs(v_second(prior, gamma, 2.0 * x_max) - tail) < FLAT_TOL:
            break
        x_max *= 2.0
    else:
        raise NonConvergenceError(
            f"inf V'' tail search did not settle after {MAX_DOUBLINGS} doublings")
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, grid.shape[0] - 1)]
    if hi > lo:
        res = optimize.minimize_scalar(lambda t: v_second(prior, gamma, t), bounds=(lo, hi),
                                       method="bounded", options={"xatol": 1e-7})
        if res.fun < best:
            return float(res.fun), float(res.x)
    return best, float(grid[i])
