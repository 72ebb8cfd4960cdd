"""Feasibility of the measure decomposition.

The field energy ``H`` is strongly convex for shift ``gamma`` iff

    1 / (gamma - lambda_min) + inf_x V_gamma''(x) > 0,   gamma > lambda_max,

with ``lambda_*`` the extreme eigenvalues of ``X^T X / sigma^2``. The
empirical check uses the observed design; the asymptotic check substitutes
the Bai-Yin limits for i.i.d. designs with ``n/d -> delta`` and
``sigma = sqrt(d) sigma0``.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import _io
from .errors import ConfigError, PreconditionError
from .potential import extreme_eigenvalues, inf_v_second
from .priors import SpikeSlabPrior

GRID_POINTS = 200
CAP_FACTOR = 100.0
BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class FeasibilityReport:
    """Verdict of the gamma-grid search.

    ``margin`` and ``inf_v_second`` are evaluated at ``gamma_star`` when
    feasible, else at ``gamma_best`` (the grid point with the largest margin).
    """

    feasible: bool
    gamma_star: float | None
    margin: float
    inf_v_second: float
    lambda_min: float
    lambda_max: float
    gammas_tested: int
    gamma_best: float

    def to_dict(self):
        return asdict(self)


def gamma_grid(lambda_max, points=GRID_POINTS, cap_factor=CAP_FACTOR):
    """Log-spaced shifts on ``(lambda_max (1 + 1e-6), cap_factor (lambda_max + 1)]``."""
    if points < 1:
        raise ConfigError("gamma grid needs at least one point")
    lo = lambda_max * (1.0 + 1e-6) if lambda_max > 0.0 else 1e-6
    hi = cap_factor * (lambda_max + 1.0)
    if hi <= lo:
        raise ConfigError("gamma grid cap must exceed lambda_max")
    return np.geomspace(lo, hi, points)


def search_gamma(lambda_min, lambda_max, prior, points=GRID_POINTS, cap_factor=CAP_FACTOR):
    """Scan the gamma grid for the first shift with ``1/(gamma - lambda_min) + inf V'' > 0``."""
    best = None
    tested = 0
    for gamma in gamma_grid(lambda_max, points, cap_factor):
        gamma = float(gamma)
        inf_v, _ = inf_v_second(prior, gamma)
        margin = 1.0 / (gamma - lambda_min) + inf_v
        tested += 1
        if margin > BOUNDARY_TOL:
            return FeasibilityReport(True, gamma, margin, inf_v, lambda_min, lambda_max,
                                     tested, gamma)
        if best is None or margin > best[0]:
            best = (margin, inf_v, gamma)
    margin, inf_v, gamma = best
    return FeasibilityReport(False, None, margin, inf_v, lambda_min, lambda_max, tested, gamma)


def empirical_feasibility(X, noise_std, prior, points=GRID_POINTS, cap_factor=CAP_FACTOR):
    """Feasibility of the observed design ``X`` (independent of ``y``)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise ConfigError("X must be a finite matrix")
    if not np.any(X):
        raise PreconditionError("X must be nonzero")
    noise_std = float(noise_std)
    if not noise_std > 0.0:
        raise ConfigError("noise_std must be positive")
    lam_min, lam_max = extreme_eigenvalues(X.T @ X / noise_std**2)
    return search_gamma(lam_min, lam_max, prior, points, cap_factor)


@dataclass(frozen=True)
class AsymptoticPoint:
    """Proportional limit ``n/d -> delta`` with ``sigma_d = sqrt(d) sigma0``."""

    delta: float
    sigma0: float
    prior: SpikeSlabPrior

    def __post_init__(self):
        for name in ("delta", "sigma0"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0.0):
                raise ConfigError(f"{name} must be positive, got {v!r}")
            object.__setattr__(self, name, v)


def bai_yin_limits(delta, sigma0):
    """Limits of ``(lambda_min, lambda_max)`` of ``X^T X / sigma^2`` (``lambda_min = 0`` if delta < 1)."""
    r = 1.0 / math.sqrt(delta)
    lam_max = delta * (1.0 + r) ** 2 / sigma0**2
    lam_min = delta * (1.0 - r) ** 2 / sigma0**2 if delta >= 1.0 else 0.0
    return lam_min, lam_max


def asymptotic_feasibility(pt, points=GRID_POINTS, cap_factor=CAP_FACTOR):
    """Proportional-limit feasibility: the gamma search with Bai-Yin eigenvalue limits."""
    lam_min, lam_max = bai_yin_limits(pt.delta, pt.sigma0)
    return search_gamma(lam_min, lam_max, pt.prior, points, cap_factor)


def mp_density(x, delta):
    """Marchenko-Pastur density ``delta / (2 pi x) sqrt((b - x)(x - a))`` (continuous part)."""
    x = np.asarray(x, dtype=float)
    r = 1.0 / math.sqrt(delta)
    a, b = (1.0 - r) ** 2, (1.0 + r) ** 2
    inside = (x > a) & (x < b) & (x > 0.0)
    out = np.zeros_like(x)
    xi = x[inside]
    out[inside] = delta / (2.0 * math.pi * xi) * np.sqrt((b - xi) * (x[inside] - a))
    return out


# --------------------------------------------------------------------------
# region scans

AXES = ("delta", "sigma0", "q")


@dataclass(frozen=True)
class RegionScan:
    """Grid of asymptotic reports; ``reports[i][j]`` is at ``(axis1[i], axis2[j])``."""

    axis1_name: str
    axis1: tuple
    axis2_name: str
    axis2: tuple
    reports: tuple

    def verdicts(self):
        return np.array([[r.feasible for r in row] for row in self.reports], dtype=bool)

    def margins(self):
        return np.array([[r.margin for r in row] for row in self.reports], dtype=float)

    def boundary(self):
        """Boundary polyline: per ``axis1`` value, the ``axis2`` positions where the verdict flips.

        Crossings are placed by linear interpolation of the margin.
        """
        verdicts, margins = self.verdicts(), self.margins()
        poly = []
        for i, a1 in enumerate(self.axis1):
            for j in range(len(self.axis2) - 1):
                if verdicts[i, j] != verdicts[i, j + 1]:
                    m0, m1 = margins[i, j], margins[i, j + 1]
                    w = m0 / (m0 - m1) if m0 != m1 else 0.5
                    w = min(max(w, 0.0), 1.0)
                    poly.append((a1, self.axis2[j] + w * (self.axis2[j + 1] - self.axis2[j])))
        return poly

    def crossings_per_slice(self):
        v = self.verdicts()
        return [int(np.count_nonzero(row[1:] != row[:-1])) for row in v]

    def rows(self):
        for i, a1 in enumerate(self.axis1):
            for j, a2 in enumerate(self.axis2):
                r = self.reports[i][j]
                yield (a1, a2, r.feasible, r.gamma_star, r.margin)

    def write_csv(self, path):
        _io.write_csv(path, [self.axis1_name, self.axis2_name, "feasible", "gamma_star", "margin"],
                      self.rows())


def _point(prior, values):
    q = values.pop("q", None)
    if q is not None:
        prior = replace(prior, q=q)
    return AsymptoticPoint(values["delta"], values["sigma0"], prior)


def scan_region(axis1, axis2, fixed, threads=1, points=GRID_POINTS, cap_factor=CAP_FACTOR):
    """Asymptotic verdicts on a rectangular grid.

    ``axis1``/``axis2`` are ``(name, values)`` pairs with names from
    ``delta``, ``sigma0``, ``q``; ``fixed`` supplies the remaining
    parameter(s) plus ``prior`` (a :class:`SpikeSlabPrior`, whose ``q`` is
    overridden when ``q`` is scanned or fixed).
    """
    (n1, v1), (n2, v2) = axis1, axis2
    if n1 not in AXES or n2 not in AXES or n1 == n2:
        raise ConfigError(f"axes must be two distinct names from {AXES}")
    v1 = tuple(float(v) for v in v1)
    v2 = tuple(float(v) for v in v2)
    if not v1 or not v2 or len(v1) * len(v2) > 10**6:
        raise ConfigError("grid must have between 1 and 1e6 points")
    fixed = dict(fixed)
    prior = fixed.pop("prior")
    missing = set(AXES) - {n1, n2} - set(fixed)
    if missing - {"q"}:
        raise ConfigError(f"missing fixed parameters: {sorted(missing)}")

    pts = [_point(prior, {**fixed, n1: a, n2: b}) for a in v1 for b in v2]

    def run(pt):
        return asymptotic_feasibility(pt, points, cap_factor)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            flat = list(pool.map(run, pts))
    else:
        flat = [run(pt) for pt in pts]
    grid = tuple(tuple(flat[i * len(v2):(i + 1) * len(v2)]) for i in range(len(v1)))
    return RegionScan(n1, v1, n2, v2, grid)
