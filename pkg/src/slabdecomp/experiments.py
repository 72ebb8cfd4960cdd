"""Evaluation protocol: credible intervals, coverage experiments, chain diagnostics."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _io, _seeding
from .errors import ChainError, ConfigError, InfeasibleError, ModeFindingError, PreconditionError
from .feasibility import empirical_feasibility
from .potential import Decomposition
from .priors import CorrelatedGaussian, IidGaussian, SpikeSlabPrior, simulate
from .samplers import ChainConfig, SampleSet, two_stage_sample

log = logging.getLogger(__name__)

MIN_SAMPLES = 40


def credible_intervals(samples, level=0.95):
    """Per-coordinate equal-tailed intervals from type-7 (linear) empirical quantiles.

    ``samples`` is a :class:`SampleSet` or an ``N x d`` array. Returns a
    ``d x 2`` array of ``(lo, hi)``.
    """
    thetas = samples.thetas if isinstance(samples, SampleSet) else np.asarray(samples, float)
    if thetas.ndim == 1:
        thetas = thetas[:, None]
    if not 0.0 < level < 1.0:
        raise ConfigError(f"level must lie in (0, 1), got {level!r}")
    if thetas.shape[0] < MIN_SAMPLES:
        raise ConfigError(f"credible intervals need at least {MIN_SAMPLES} samples, "
                          f"got {thetas.shape[0]}")
    alpha = 0.5 * (1.0 - level)
    return np.quantile(thetas, [alpha, 1.0 - alpha], axis=0, method="linear").T


def default_burn_in(rho):
    """Default burn-in: ``2e4`` for strongly correlated designs (rho > 0.6), else ``1e4``."""
    return 20_000 if rho > 0.6 else 10_000


# --------------------------------------------------------------------------
# coverage


@dataclass(frozen=True)
class CoverageSetting:
    """Generative model plus sampler settings for a coverage experiment.

    ``assumed_prior`` is the prior handed to the sampler (defaults to the
    true ``prior``; set it to study misspecification).
    """

    n: int
    d: int
    prior: SpikeSlabPrior
    noise_std: float
    chain: ChainConfig
    design: object = field(default_factory=lambda: CorrelatedGaussian(0.0))
    samples: int = 2000
    level: float = 0.95
    gamma_offset: float = 0.1
    assumed_prior: SpikeSlabPrior | None = None

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ConfigError("n and d must be positive")
        if self.samples < MIN_SAMPLES:
            raise ConfigError(f"samples per repetition must be at least {MIN_SAMPLES}")

    @property
    def sampler_prior(self):
        return self.assumed_prior if self.assumed_prior is not None else self.prior

    def to_dict(self):
        return {
            "n": self.n, "d": self.d, "prior": self.prior.to_dict(),
            "assumed_prior": self.sampler_prior.to_dict(), "noise_std": self.noise_std,
            "design": self.design.to_dict(), "samples": self.samples, "level": self.level,
            "gamma_offset": self.gamma_offset, "chain": self.chain.to_dict(),
        }


@dataclass(frozen=True, eq=False)
class CoverageResult:
    """Containment indicators of the true ``theta`` in the credible intervals.

    ``indicators`` has one row per successful repetition (listed in
    ``completed``); failed repetitions are listed in ``failures`` and
    excluded from the aggregate.
    """

    repetitions: int
    completed: tuple
    indicators: np.ndarray
    acceptance_rates: np.ndarray
    failures: tuple
    setting: dict
    master_seed: int

    @property
    def aggregate_rate(self):
        return float(self.indicators.mean()) if self.indicators.size else float("nan")

    @property
    def per_coordinate_rate(self):
        return self.indicators.mean(axis=0)

    def summary(self):
        return {
            "repetitions": self.repetitions,
            "completed": len(self.completed),
            "failed": [{"repetition": r, "error": msg} for r, msg in self.failures],
            "aggregate_rate": self.aggregate_rate,
            "per_coordinate_rate": self.per_coordinate_rate.tolist(),
            "mean_acceptance_rate": float(np.mean(self.acceptance_rates))
            if self.acceptance_rates.size else float("nan"),
            "master_seed": self.master_seed,
            "setting": self.setting,
        }

    def rows(self):
        for r, row in zip(self.completed, self.indicators):
            for j, covered in enumerate(row):
                yield (r, j, bool(covered))

    def write_csv(self, path):
        _io.write_csv(path, ["repetition", "coordinate", "covered"], self.rows())


def repetition_seed(master_seed, r):
    """Integer seed of repetition ``r``; independent of scheduling."""
    ss = _seeding.seed_sequence(master_seed, _seeding.REPETITION, r)
    return int(ss.generate_state(1, np.uint64)[0])


def run_repetition(setting, seed):
    """One coverage repetition: returns ``(indicator vector, acceptance rate)``."""
    theta, inst = simulate(setting.prior, setting.design, setting.n, setting.d,
                           setting.noise_std, seed)
    decomp = Decomposition.from_instance(inst, offset=setting.gamma_offset)
    config = replace(setting.chain, seed=seed)
    samples = two_stage_sample(decomp, setting.sampler_prior, config, setting.samples)
    ci = credible_intervals(samples, setting.level)
    covered = (ci[:, 0] <= theta) & (theta <= ci[:, 1])
    return covered, samples.acceptance_rate


def coverage_experiment(setting, repetitions, master_seed, threads=1, force=False):
    """Repeat (draw theta, X, y -> sample -> intervals -> containment) ``repetitions`` times.

    Unless ``force``, the design of repetition 0 must pass the empirical
    feasibility check; otherwise :class:`InfeasibleError` is raised.
    """
    repetitions = int(repetitions)
    if repetitions < 1:
        raise ConfigError("repetitions must be positive")
    seeds = [repetition_seed(master_seed, r) for r in range(repetitions)]
    if not force:
        _, inst = simulate(setting.prior, setting.design, setting.n, setting.d,
                           setting.noise_std, seeds[0])
        report = empirical_feasibility(inst.X, inst.noise_std, setting.sampler_prior)
        if not report.feasible:
            raise InfeasibleError(
                f"setting is infeasible (best margin {report.margin:.3g}); pass force=True to run")

    def job(r):
        try:
            return run_repetition(setting, seeds[r])
        except (ChainError, ModeFindingError, PreconditionError, ArithmeticError) as exc:
            return exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, range(repetitions)))
    else:
        results = [job(r) for r in range(repetitions)]

    completed, rows, rates, failures = [], [], [], []
    for r, res in enumerate(results):
        if isinstance(res, Exception):
            failures.append((r, f"{type(res).__name__}: {res}"))
            continue
        completed.append(r)
        rows.append(res[0])
        rates.append(res[1])
    if failures:
        log.warning("%d of %d repetitions failed and were excluded", len(failures), repetitions)
    indicators = np.array(rows, dtype=bool).reshape(len(rows), setting.d)
    return CoverageResult(repetitions, tuple(completed), indicators, np.array(rates),
                          tuple(failures), setting.to_dict(), master_seed)


def setting_one(n=100, d=50, q=0.2, rho=0.0, slab=None, sigma_scale=3.0, **kw):
    """Benchmark family with a Gaussian slab: ``sigma_d = sigma_scale * sqrt(d)``, AR(1) design."""
    from .priors import GaussianSlab
    prior = SpikeSlabPrior(q, slab if slab is not None else GaussianSlab(1.0))
    return dict(n=n, d=d, prior=prior, noise_std=sigma_scale * math.sqrt(d),
                design=CorrelatedGaussian(rho) if rho > 0 else IidGaussian(1.0), **kw)


# --------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True, eq=False)
class DiagnosticsBundle:
    """Trace, autocorrelations and effective sample size of one coordinate.

    ``degenerate`` flags a constant trace, for which the autocorrelation is
    undefined beyond lag 0 and the ESS is reported as NaN.
    """

    coordinate: int
    trace: np.ndarray
    autocorrelation: np.ndarray
    acceptance_rate: float | None
    ess: float
    degenerate: bool

    def summary(self):
        return {"coordinate": self.coordinate, "n": int(self.trace.size),
                "acceptance_rate": self.acceptance_rate, "ess": self.ess,
                "degenerate": self.degenerate, "max_lag": int(self.autocorrelation.size - 1)}

    def write_csv(self, trace_path, acf_path):
        _io.write_csv(trace_path, ["step", "value"], enumerate(self.trace.tolist()))
        _io.write_csv(acf_path, ["lag", "autocorrelation"],
                      enumerate(self.autocorrelation.tolist()))


def autocorrelation(x, max_lag):
    """Biased sample autocorrelation ``rho(k)`` for ``k = 0..max_lag`` (NaN if constant)."""
    x = np.asarray(x, dtype=float)
    c = x - x.mean()
    var = float(c @ c) / x.size
    if var == 0.0:
        out = np.full(max_lag + 1, np.nan)
        out[0] = 1.0
        return out
    n = x.size
    acov = np.array([float(c[: n - k] @ c[k:]) / n for k in range(max_lag + 1)])
    out = acov / (acov[0] if acov[0] > 0.0 else var)
    out[0] = 1.0
    return out


def effective_sample_size(acf, n):
    """``n / (1 + 2 sum rho(k))`` summed up to the first negative autocorrelation."""
    total = 0.0
    for r in acf[1:]:
        if not r >= 0.0:
            break
        total += r
    return n / (1.0 + 2.0 * total)


def chain_diagnostics(chain, coordinate, max_lag=50):
    """Trace, autocorrelation and ESS of ``chain[:, coordinate]``.

    ``chain`` may be an ``N x d`` array, a :class:`SampleSet` (theta draws)
    or a :class:`~slabdecomp.samplers.PhiChain`.
    """
    rate = getattr(chain, "acceptance_rate", None)
    if isinstance(chain, SampleSet):
        states = chain.thetas
    elif hasattr(chain, "states"):
        states = chain.states
    else:
        states = np.asarray(chain, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    if not 0 <= coordinate < states.shape[1]:
        raise ConfigError(f"coordinate {coordinate} out of range")
    max_lag = int(max_lag)
    if max_lag < 0 or states.shape[0] <= max_lag:
        raise ConfigError(f"chain of length {states.shape[0]} is too short for max_lag={max_lag}")
    trace = np.array(states[:, coordinate], dtype=float)
    acf = autocorrelation(trace, max_lag)
    degenerate = bool(np.isnan(acf[1:]).any()) if max_lag > 0 else float(np.var(trace)) == 0.0
    ess = float("nan") if degenerate else effective_sample_size(acf, trace.size)
    return DiagnosticsBundle(coordinate, trace, acf, None if rate is None else float(rate),
                             ess, degenerate)
