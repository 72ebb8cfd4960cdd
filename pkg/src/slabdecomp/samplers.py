"""Two-stage sampling: a log-concave chain on the field ``phi``, then ``theta | phi``.

The chain kernels (MALA, HMC) live in the backend modules; this module
handles configuration, random-number streams, burn-in/thinning bookkeeping
and the product conditional draw of ``theta``.

Random numbers are generated here in fixed-size blocks and handed to the
kernels, so a run is a pure function of ``(instance, prior, config)`` and
the compiled and pure backends consume identical streams.
"""

import enum
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import linalg, special

from . import _io, _pykernels, _seeding
from ._pykernels import KIND_GAUSSIAN, KIND_GENERIC, KIND_LAPLACE
from .errors import ChainError, ConfigError, ModeFindingError
from .potential import (field_model, inf_v_second, potential_terms, quadratic_model,
                        tabulated_tilted_draw)

log = logging.getLogger(__name__)

BLOCK = 4096
MODE_LR = 0.01
MODE_MAX_ITERS = 100_000
MODE_TOL = 1e-8
DEFAULT_RETAINED = 10_000


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class MALA:
    """Metropolis-adjusted Langevin with step ``tau``."""

    tau: float

    def __post_init__(self):
        if not (math.isfinite(self.tau) and self.tau > 0.0):
            raise ConfigError(f"MALA step tau must be positive, got {self.tau!r}")

    def to_dict(self):
        return {"method": "mala", "tau": self.tau}


@dataclass(frozen=True, eq=False)
class HMC:
    """Hamiltonian Monte Carlo with ``ell`` leapfrog steps of size ``epsilon``.

    ``mass`` is the momentum covariance Omega (``None`` means identity).
    """

    epsilon: float
    ell: int
    mass: np.ndarray | None = None

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise ConfigError(f"HMC step epsilon must be positive, got {self.epsilon!r}")
        if int(self.ell) != self.ell or self.ell < 1:
            raise ConfigError(f"HMC leapfrog count ell must be a positive integer, got {self.ell!r}")
        object.__setattr__(self, "ell", int(self.ell))
        if self.mass is not None:
            mass = np.array(self.mass, dtype=float)
            if mass.ndim != 2 or mass.shape[0] != mass.shape[1] or not np.allclose(mass, mass.T):
                raise ConfigError("HMC mass matrix must be square and symmetric")
            try:
                chol = linalg.cholesky(mass, lower=True)
            except linalg.LinAlgError:
                raise ConfigError("HMC mass matrix must be positive definite") from None
            object.__setattr__(self, "mass", mass)
            object.__setattr__(self, "_chol", np.ascontiguousarray(chol))
        else:
            object.__setattr__(self, "_chol", None)

    @property
    def mass_chol(self):
        return self._chol

    def to_dict(self):
        out = {"method": "hmc", "epsilon": self.epsilon, "ell": self.ell}
        if self.mass is not None:
            out["mass"] = self.mass.tolist()
        return out


class RejectionPolicy(enum.Enum):
    STAY_ON_REJECT = "stay_on_reject"
    RETRY_UNTIL_ACCEPT = "retry_until_accept"


@dataclass(frozen=True)
class ChainConfig:
    """Chain settings.

    The chain runs ``total_steps`` transitions; the first ``burn_in`` are
    discarded and every ``thinning``-th of the rest is retained. By default
    ``total_steps`` leaves ``DEFAULT_RETAINED`` states after burn-in. Under
    :attr:`RejectionPolicy.RETRY_UNTIL_ACCEPT` a transition is only counted
    once a proposal is accepted; this variant does not preserve the target in general.
    """

    method: object
    total_steps: int | None = None
    burn_in: int = 10_000
    thinning: int = 1
    rejection_policy: RejectionPolicy = RejectionPolicy.STAY_ON_REJECT
    seed: int = 0
    init_smoothness: float = 10.0
    mode_learning_rate: float = MODE_LR
    mode_max_iters: int = MODE_MAX_ITERS
    retain_phi: bool = False
    max_proposals_per_step: int = 1000

    def __post_init__(self):
        if not isinstance(self.method, (MALA, HMC)):
            raise ConfigError("method must be MALA(...) or HMC(...)")
        if int(self.burn_in) != self.burn_in or self.burn_in < 0:
            raise ConfigError(f"burn_in must be a nonnegative integer, got {self.burn_in!r}")
        if int(self.thinning) != self.thinning or self.thinning < 1:
            raise ConfigError(f"thinning must be a positive integer, got {self.thinning!r}")
        if self.total_steps is None:
            object.__setattr__(self, "total_steps",
                               int(self.burn_in) + DEFAULT_RETAINED * int(self.thinning))
        for name in ("total_steps", "mode_max_iters", "max_proposals_per_step"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.burn_in > self.total_steps:
            raise ConfigError("burn_in cannot exceed total_steps")
        if not (self.init_smoothness > 0.0 and self.mode_learning_rate > 0.0):
            raise ConfigError("init_smoothness and mode_learning_rate must be positive")
        object.__setattr__(self, "rejection_policy", RejectionPolicy(self.rejection_policy))

    @property
    def retained(self):
        return (self.total_steps - self.burn_in) // self.thinning

    def for_samples(self, n):
        """Copy with ``total_steps`` set so exactly ``n`` states are retained."""
        return replace(self, total_steps=self.burn_in + int(n) * self.thinning)

    def to_dict(self):
        out = {k: v for k, v in asdict(self).items() if k != "method"}
        out["method"] = self.method.to_dict()
        out["rejection_policy"] = self.rejection_policy.value
        return out


# --------------------------------------------------------------------------
# mode finding


@dataclass(frozen=True)
class ModeResult:
    phi: np.ndarray
    grad_norm: float
    iterations: int
    energy: float
    converged: bool


def _find_mode(model, learning_rate, max_iters, tol=MODE_TOL):
    phi = np.zeros(model.d)
    iters, gnorm, energy, status = model.kernels.gradient_descent(
        model, phi, float(learning_rate), int(max_iters), float(tol))
    if status == _pykernels.GD_DIVERGED or not np.all(np.isfinite(phi)):
        raise ModeFindingError(f"gradient descent diverged after {iters} iterations", iters)
    if status == _pykernels.GD_MAX_ITERS:
        log.warning("mode search stopped at max_iters=%d with |grad|_inf=%.3g", max_iters, gnorm)
    return ModeResult(phi, float(gnorm), int(iters), float(energy),
                      status == _pykernels.GD_CONVERGED)


def find_mode(decomp, prior, learning_rate=MODE_LR, max_iters=MODE_MAX_ITERS, tol=MODE_TOL):
    """Fixed-step gradient descent on ``H`` from ``phi = 0``."""
    return _find_mode(field_model(decomp, prior), learning_rate, max_iters, tol)


# --------------------------------------------------------------------------
# chains


class _Proposals:
    """Block-wise source of proposal noise and acceptance uniforms."""

    def __init__(self, rng, d):
        self.rng, self.d = rng, d
        self.pos = BLOCK

    def view(self):
        if self.pos == BLOCK:
            self.noise = self.rng.standard_normal((BLOCK, self.d))
            self.unif = self.rng.random(BLOCK)
            self.pos = 0
        return self.noise[self.pos:], self.unif[self.pos:]

    def consume(self, n):
        self.pos += n


@dataclass(frozen=True, eq=False)
class PhiChain:
    """Retained field states and acceptance bookkeeping."""

    states: np.ndarray
    proposals: int
    accepted: int
    steps: int
    mode: ModeResult
    init: np.ndarray

    @property
    def acceptance_rate(self):
        return self.accepted / self.proposals if self.proposals else float("nan")


def run_chain(model, config, n_retained=None):
    """Run the configured chain on a :class:`~slabdecomp.potential.FieldModel`.

    Retains ``n_retained`` states (default ``config.retained``) after
    ``config.burn_in`` steps. Raises :class:`ChainError` on a non-finite
    energy or gradient.
    """
    if n_retained is None:
        n_retained = config.retained
    elif config.burn_in + n_retained * config.thinning > config.total_steps:
        config = config.for_samples(n_retained)
    d = model.d
    kern = model.kernels
    method = config.method
    retry = config.rejection_policy is RejectionPolicy.RETRY_UNTIL_ACCEPT

    mode = _find_mode(model, config.mode_learning_rate, config.mode_max_iters)
    init_rng = _seeding.rng(config.seed, _seeding.CHAIN_INIT)
    phi = mode.phi + init_rng.standard_normal(d) / math.sqrt(config.init_smoothness)
    init = phi.copy()
    energy, grad = kern.field_energy(model, phi)
    grad = np.ascontiguousarray(grad, dtype=float)
    if not (math.isfinite(energy) and np.all(np.isfinite(grad))):
        raise ChainError("non-finite energy at the initial state", 0)

    source = _Proposals(_seeding.rng(config.seed, _seeding.CHAIN), d)
    out = np.empty((int(n_retained), d))
    totals = {"proposals": 0, "accepted": 0, "steps": 0}
    cap = config.max_proposals_per_step * (config.burn_in + n_retained * config.thinning) + BLOCK

    def advance(n_steps, thin, buf):
        nonlocal energy
        done = recorded = 0
        while done < n_steps:
            noise, unif = source.view()
            if isinstance(method, MALA):
                res = kern.mala_advance(model, method.tau, retry, phi, grad, energy, noise, unif,
                                        n_steps - done, done, thin, buf[recorded:])
            else:
                res = kern.hmc_advance(model, method.epsilon, method.ell, method.mass_chol, retry,
                                       phi, grad, energy, noise, unif, n_steps - done, done, thin,
                                       buf[recorded:])
            used, steps, rec, acc, energy, status = res
            source.consume(used)
            done += steps
            recorded += rec
            totals["proposals"] += used
            totals["accepted"] += acc
            totals["steps"] += steps
            if status != _pykernels.STATUS_OK:
                raise ChainError(
                    f"non-finite energy or gradient at proposal for state {totals['steps'] + 1}",
                    totals["steps"] + 1)
            if totals["proposals"] > cap:
                raise ChainError("retry-until-accept exceeded the proposal budget", totals["steps"])
        return recorded

    advance(config.burn_in, 1, out[:0])
    recorded = advance(int(n_retained) * config.thinning, config.thinning, out)
    assert recorded == n_retained
    return PhiChain(out, totals["proposals"], totals["accepted"], totals["steps"], mode, init)


def _check_method(config, kind):
    if not isinstance(config.method, kind):
        raise ConfigError(f"config.method must be {kind.__name__}")


def run_mala(decomp, prior, config):
    """MALA chain on the field marginal."""
    _check_method(config, MALA)
    return run_chain(field_model(decomp, prior), config)


def run_hmc(decomp, prior, config):
    """HMC chain on the field marginal."""
    _check_method(config, HMC)
    return run_chain(field_model(decomp, prior), config)


def leapfrog(model, epsilon, n_leap, phi, rho, mass=None):
    """Leapfrog integration of ``H(phi) + rho^T Omega^{-1} rho / 2``.

    Returns ``(phi, rho, H(phi))`` after ``n_leap`` steps.
    """
    chol = None if mass is None else np.ascontiguousarray(linalg.cholesky(mass, lower=True))
    x, r, h, _, ok = model.kernels.leapfrog(model, float(epsilon), int(n_leap), chol,
                                            np.asarray(phi, float), np.asarray(rho, float))
    if not ok:
        raise ChainError("non-finite energy during leapfrog integration")
    return x, r, h


# --------------------------------------------------------------------------
# theta | phi


def _truncated_positive(t, u):
    """Draw ``t + Z`` with ``Z ~ N(0, 1)`` conditioned on ``t + Z > 0``."""
    return t - special.ndtri_exp(np.log(u) + special.log_ndtr(t))


def draw_theta(prior, gamma, x, rng):
    """Independent draws from the tilted conditionals ``theta_i | x_i`` (``x = h + phi``)."""
    x = np.asarray(x, dtype=float)
    shape = x.shape
    p = potential_terms(prior, gamma, x)[3]
    active = rng.random(shape) < p
    slab = prior.slab
    theta = np.zeros(shape)
    if slab.kind == KIND_GAUSSIAN:
        c1 = slab.variance / (1.0 + gamma * slab.variance)
        z = rng.standard_normal(shape)
        vals = x * c1 + math.sqrt(c1) * z
    elif slab.kind == KIND_LAPLACE:
        lam, isg = slab.rate, 1.0 / math.sqrt(gamma)
        t_pos = (x - lam) * isg
        t_neg = (-x - lam) * isg
        lp, _, _ = _pykernels.gaussian_tail(t_pos)
        lm, _, _ = _pykernels.gaussian_tail(t_neg)
        w_pos = np.exp(lp - np.logaddexp(lp, lm))
        side = rng.random(shape) < w_pos
        u = rng.random(shape)
        u = np.where(u > 0.0, u, np.finfo(float).tiny)
        vals = np.where(side, _truncated_positive(t_pos, u), -_truncated_positive(t_neg, u)) * isg
    elif slab.kind == KIND_GENERIC:
        u = rng.random(shape)
        vals = tabulated_tilted_draw(slab, gamma, x.ravel(), u.ravel()).reshape(shape)
    else:
        raise ConfigError("unsupported slab")
    theta[active] = vals[active]
    return theta


def sample_theta_given_phi(decomp, prior, phi, seed):
    """One draw of ``theta`` from the product conditional given ``phi``."""
    phi = np.asarray(phi, dtype=float).reshape(-1)
    if phi.shape[0] != decomp.d:
        raise ConfigError("phi has the wrong dimension")
    return draw_theta(prior, decomp.gamma, decomp.h + phi, _seeding.rng(seed, _seeding.THETA))


# --------------------------------------------------------------------------
# two-stage sampling


@dataclass(frozen=True, eq=False)
class SampleSet:
    """``N`` posterior draws of ``theta`` with chain metadata."""

    thetas: np.ndarray
    acceptance_rate: float
    config: ChainConfig
    seed: int
    gamma: float
    proposals: int
    accepted: int
    convexity_margin: float
    mode_grad_norm: float
    phis: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.thetas.shape[0]

    def metadata(self):
        return {
            "n_samples": self.n,
            "d": self.thetas.shape[1],
            "acceptance_rate": self.acceptance_rate,
            "proposals": self.proposals,
            "accepted": self.accepted,
            "burn_in": self.config.burn_in,
            "thinning": self.config.thinning,
            "seed": self.seed,
            "gamma": self.gamma,
            "convexity_margin": self.convexity_margin,
            "mode_grad_norm": self.mode_grad_norm,
            "config": self.config.to_dict(),
            **self.extra,
        }

    def write_csv(self, path):
        d = self.thetas.shape[1]
        _io.write_csv(path, [f"theta_{j + 1}" for j in range(d)], self.thetas.tolist())

    def write_metadata(self, path):
        _io.write_json(path, self.metadata())


def convexity_margin(decomp, prior):
    """``1/(gamma - lambda_min) + inf V_gamma''`` at the decomposition's own shift."""
    return 1.0 / (decomp.gamma - decomp.lambda_min) + inf_v_second(prior, decomp.gamma)[0]


def two_stage_sample(decomp, prior, config, n):
    """Two-stage sampler: run the field chain, then pair each retained ``phi`` with a ``theta`` draw."""
    n = int(n)
    if n < 0:
        raise ConfigError("number of samples must be nonnegative")
    margin = convexity_margin(decomp, prior)
    if margin <= 0.0:
        log.warning("H is not strongly convex at gamma=%.6g (margin %.3g); sampling anyway",
                    decomp.gamma, margin)
    config = config.for_samples(n)
    chain = run_chain(field_model(decomp, prior), config, n)
    rng = _seeding.rng(config.seed, _seeding.THETA)
    thetas = draw_theta(prior, decomp.gamma, decomp.h[None, :] + chain.states, rng)
    return SampleSet(thetas, chain.acceptance_rate, config, config.seed, decomp.gamma,
                     chain.proposals, chain.accepted, float(margin), chain.mode.grad_norm,
                     chain.states if config.retain_phi else None)


__all__ = [
    "MALA", "HMC", "RejectionPolicy", "ChainConfig", "ModeResult", "PhiChain", "SampleSet",
    "find_mode", "run_chain", "run_mala", "run_hmc", "leapfrog", "draw_theta",
    "sample_theta_given_phi", "two_stage_sample", "convexity_margin", "quadratic_model",
]
