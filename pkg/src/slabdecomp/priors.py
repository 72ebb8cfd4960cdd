"""Spike-and-slab priors, design ensembles and synthetic data.

The prior on each coordinate is ``(1 - q) * delta_0 + q * mu`` with a
symmetric log-concave slab ``mu``. Every generator is a pure function of its
arguments and a seed; see :mod:`slabdecomp._seeding` for the stream layout.
"""

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from . import _seeding
from ._pykernels import KIND_GAUSSIAN, KIND_GENERIC, KIND_LAPLACE
from .errors import ConfigError, QuadratureError

_NORM_TOL = 1e-8


def _positive(name, value):
    value = float(value)
    if not (math.isfinite(value) and value > 0.0):
        raise ConfigError(f"{name} must be a positive finite number, got {value!r}")
    return value


def _check_normalized(logpdf, name):
    mass, _ = integrate.quad(lambda t: math.exp(logpdf(t)), -np.inf, np.inf,
                             epsabs=1e-12, epsrel=1e-12, limit=200)
    if abs(mass - 1.0) > _NORM_TOL:
        raise ConfigError(f"{name} density integrates to {mass!r}, not 1")


# --------------------------------------------------------------------------
# slab families


@dataclass(frozen=True)
class GaussianSlab:
    """Centered Gaussian slab ``N(0, variance)``."""

    variance: float = 1.0

    kind = KIND_GAUSSIAN

    def __post_init__(self):
        object.__setattr__(self, "variance", _positive("variance", self.variance))
        _check_normalized(lambda t: float(self.logpdf(t)), "GaussianSlab")

    @property
    def param(self):
        return self.variance

    def logpdf(self, t):
        t = np.asarray(t, dtype=float)
        return -0.5 * (t * t / self.variance + math.log(2.0 * math.pi * self.variance))

    def sample(self, rng, size):
        return math.sqrt(self.variance) * rng.standard_normal(size)

    def to_dict(self):
        return {"kind": "gaussian", "params": {"variance": self.variance}}


@dataclass(frozen=True)
class LaplaceSlab:
    """Laplace slab with density ``(rate / 2) exp(-rate |t|)``."""

    rate: float = math.sqrt(2.0)

    kind = KIND_LAPLACE

    def __post_init__(self):
        object.__setattr__(self, "rate", _positive("rate", self.rate))
        _check_normalized(lambda t: float(self.logpdf(t)), "LaplaceSlab")

    @property
    def param(self):
        return self.rate

    def logpdf(self, t):
        t = np.asarray(t, dtype=float)
        return math.log(0.5 * self.rate) - self.rate * np.abs(t)

    def sample(self, rng, size):
        return rng.laplace(0.0, 1.0 / self.rate, size)

    def to_dict(self):
        return {"kind": "laplace", "params": {"rate": self.rate}}


@dataclass(frozen=True)
class GenericSlab:
    """Symmetric log-concave slab given by a (possibly unnormalized) log-density.

    ``log_density`` must accept numpy arrays. ``tail_order`` (k) and the
    tail constants ``c1, c2`` document the lower bound
    ``f(x) >= c1 exp(-c2 x^(2k))``; they are validated for positivity only.
    The normalizing constant is computed by quadrature at construction.
    """

    log_density: Callable
    tail_order: int = 1
    c1: float = 1.0
    c2: float = 1.0
    name: str = "generic"
    log_norm: float = field(init=False, default=0.0)

    kind = KIND_GENERIC
    param = float("nan")

    def __post_init__(self):
        if int(self.tail_order) != self.tail_order or self.tail_order < 1:
            raise ConfigError("tail_order must be a positive integer")
        _positive("c1", self.c1)
        _positive("c2", self.c2)
        grid = np.linspace(-10.0, 10.0, 2001)
        vals = np.asarray(self.log_density(grid), dtype=float)
        if vals.shape != grid.shape or not np.all(np.isfinite(vals)):
            raise ConfigError("log_density must be finite and vectorized on [-10, 10]")
        if np.max(np.abs(vals - vals[::-1])) > 1e-8 * (1.0 + np.max(np.abs(vals))):
            raise ConfigError("slab log-density must be symmetric about 0")
        second = vals[2:] - 2.0 * vals[1:-1] + vals[:-2]
        if np.max(second) > 1e-8:
            raise ConfigError("slab log-density is not concave on the test grid")
        shift = float(self.log_density(np.array([0.0]))[0])
        mass, err = integrate.quad(
            lambda t: math.exp(float(self.log_density(np.array([t]))[0]) - shift),
            -np.inf, np.inf, epsabs=1e-12, epsrel=1e-10, limit=200)
        if not (math.isfinite(mass) and mass > 0.0) or err > 1e-6 * mass:
            raise QuadratureError("could not normalize the generic slab density")
        object.__setattr__(self, "log_norm", shift + math.log(mass))

    def logpdf(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.asarray(self.log_density(t), dtype=float) - self.log_norm

    def sample(self, rng, size):
        from .potential import tabulated_tilted_draw
        x = np.zeros(size)
        return tabulated_tilted_draw(self, 0.0, x, rng.random(size))

    def to_dict(self):
        return {"kind": "generic", "params": {"name": self.name, "tail_order": self.tail_order,
                                              "c1": self.c1, "c2": self.c2}}


@dataclass(frozen=True)
class SpikeSlabPrior:
    """``(1 - q) delta_0 + q mu`` applied independently per coordinate."""

    q: float
    slab: object = field(default_factory=GaussianSlab)

    def __post_init__(self):
        q = float(self.q)
        if not (0.0 < q < 1.0):
            raise ConfigError(f"q must lie in (0, 1), got {q!r}")
        object.__setattr__(self, "q", q)
        if not isinstance(self.slab, (GaussianSlab, LaplaceSlab, GenericSlab)):
            raise ConfigError(f"unsupported slab {self.slab!r}")

    def to_dict(self):
        return {"q": self.q, "slab": self.slab.to_dict()}


@dataclass(frozen=True)
class RegressionInstance:
    """Observed data for ``y = X theta + eps`` with ``eps ~ N(0, noise_std^2 I)``."""

    X: np.ndarray
    y: np.ndarray
    noise_std: float

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float).reshape(-1)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ConfigError(f"X must be a non-empty matrix, got shape {X.shape}")
        if y.shape[0] != X.shape[0]:
            raise ConfigError(f"y has length {y.shape[0]} but X has {X.shape[0]} rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ConfigError("X and y must be finite")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "noise_std", _positive("noise_std", self.noise_std))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]


# --------------------------------------------------------------------------
# design ensembles


@dataclass(frozen=True)
class IidGaussian:
    """Entries i.i.d. ``N(0, variance)``."""

    variance: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "variance", _positive("variance", self.variance))

    def _row(self, rng, d):
        return math.sqrt(self.variance) * rng.standard_normal(d)

    def to_dict(self):
        return {"kind": "iid_gaussian", "variance": self.variance}


@dataclass(frozen=True)
class CorrelatedGaussian:
    """Rows ``N(0, Sigma)`` with AR(1) covariance ``Sigma_ij = rho^|i-j|``."""

    rho: float

    def __post_init__(self):
        rho = float(self.rho)
        if not (0.0 <= rho < 1.0):
            raise ConfigError(f"rho must lie in [0, 1), got {rho!r}")
        object.__setattr__(self, "rho", rho)

    def covariance(self, d):
        idx = np.arange(d)
        return self.rho ** np.abs(idx[:, None] - idx[None, :])

    def _row(self, rng, d):
        # Bidiagonal Cholesky factor of the AR(1) covariance, applied as a recursion.
        z = rng.standard_normal(d)
        scale = math.sqrt(1.0 - self.rho * self.rho)
        row = np.empty(d)
        row[0] = z[0]
        for j in range(1, d):
            row[j] = self.rho * row[j - 1] + scale * z[j]
        return row

    def to_dict(self):
        return {"kind": "correlated_gaussian", "rho": self.rho}


@dataclass(frozen=True)
class IidGeneric:
    """Entries i.i.d. from ``sampler(rng, size)`` (zero mean, unit variance)."""

    sampler: Callable
    name: str = "generic"

    def _row(self, rng, d):
        return np.asarray(self.sampler(rng, d), dtype=float).reshape(d)

    def to_dict(self):
        return {"kind": "iid_generic", "name": self.name}


# --------------------------------------------------------------------------
# generators


def sample_prior(prior, d, seed):
    """Draw ``theta in R^d`` from the product spike-and-slab prior."""
    d = int(d)
    if d < 1:
        raise ConfigError("d must be positive")
    rng = _seeding.rng(seed, _seeding.PRIOR)
    active = rng.random(d) < prior.q
    theta = np.zeros(d)
    theta[active] = prior.slab.sample(rng, int(active.sum()))
    return theta


def generate_design(spec, n, d, seed):
    """An ``n x d`` design with rows i.i.d. per ``spec``; row ``i`` uses its own stream."""
    n, d = int(n), int(d)
    if n < 1 or d < 1:
        raise ConfigError("n and d must be positive")
    X = np.empty((n, d))
    for i in range(n):
        X[i] = spec._row(_seeding.rng(seed, _seeding.DESIGN, i), d)
    return X


def generate_response(X, theta, noise_std, seed):
    """``y = X theta + eps`` with ``eps ~ N(0, noise_std^2 I)``."""
    X = np.asarray(X, dtype=float)
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if X.ndim != 2 or X.shape[1] != theta.shape[0]:
        raise ConfigError(f"shape mismatch: X {X.shape} vs theta {theta.shape}")
    noise_std = _positive("noise_std", noise_std)
    rng = _seeding.rng(seed, _seeding.NOISE)
    return X @ theta + noise_std * rng.standard_normal(X.shape[0])


def simulate(prior, design, n, d, noise_std, seed):
    """Draw ``(theta, RegressionInstance)`` from the full generative model."""
    theta = sample_prior(prior, d, seed)
    X = generate_design(design, n, d, seed)
    y = generate_response(X, theta, noise_std, seed)
    return theta, RegressionInstance(X, y, noise_std)
