import math

import numpy as np
import pytest
from scipy import integrate

from slabdecomp.errors import ConfigError, PreconditionError
from slabdecomp.feasibility import (AsymptoticPoint, asymptotic_feasibility, bai_yin_limits,
                                    empirical_feasibility, gamma_grid, mp_density, scan_region)
from slabdecomp.potential import inf_v_second
from slabdecomp.priors import (GaussianSlab, IidGaussian, LaplaceSlab, SpikeSlabPrior,
                               generate_design)

GAUSS03 = SpikeSlabPrior(0.3, GaussianSlab(1.0))


def test_small_gaussian_design_mostly_feasible():
    verdicts = [empirical_feasibility(generate_design(IidGaussian(1 / 40), 20, 10, s), 1.0,
                                      GAUSS03).feasible for s in range(20)]
    assert sum(verdicts) >= 15


def test_tiny_column_margin_identity():
    X = np.full((3, 1), 1e-8)
    rep = empirical_feasibility(X, 1.0, GAUSS03)
    assert rep.feasible
    inf_v, _ = inf_v_second(GAUSS03, rep.gamma_star)
    assert rep.margin == pytest.approx(1 / (rep.gamma_star - rep.lambda_min) + inf_v, rel=1e-12)
    assert rep.inf_v_second == pytest.approx(inf_v, rel=1e-12)


def test_margin_is_consistent_when_infeasible():
    X = generate_design(IidGaussian(1.0), 5, 20, 0)
    rep = empirical_feasibility(X, 1.0, SpikeSlabPrior(0.2, GaussianSlab(1.0)))
    assert not rep.feasible and rep.gamma_star is None
    assert rep.margin <= 1e-9
    inf_v, _ = inf_v_second(SpikeSlabPrior(0.2, GaussianSlab(1.0)), rep.gamma_best)
    assert rep.margin == pytest.approx(1 / (rep.gamma_best - rep.lambda_min) + inf_v, rel=1e-10)
    assert rep.gammas_tested == 200


def test_well_conditioned_moderate_design_feasible():
    # n/d = 20 and sigma^2 = d; the Gaussian slab needs q well above 1/2 here (see ledger)
    prior = SpikeSlabPrior(0.7, GaussianSlab(1.0))
    d = 30
    ok = [empirical_feasibility(generate_design(IidGaussian(1.0), 20 * d, d, s),
                                math.sqrt(d), prior).feasible for s in range(20)]
    assert sum(ok) >= 19


def test_verdict_independent_of_response():
    # the check takes only X and sigma: identical for every y by construction
    X = generate_design(IidGaussian(1 / 40), 20, 10, 3)
    a = empirical_feasibility(X, 1.0, GAUSS03)
    b = empirical_feasibility(X.copy(), 1.0, GAUSS03)
    assert a == b


def test_zero_design_rejected():
    with pytest.raises(PreconditionError):
        empirical_feasibility(np.zeros((4, 3)), 1.0, GAUSS03)
    with pytest.raises(ConfigError):
        empirical_feasibility(np.ones((4, 3)), 0.0, GAUSS03)


def test_gamma_grid_bounds():
    g = gamma_grid(2.0)
    assert g.size == 200
    assert g[0] == pytest.approx(2.0 * (1 + 1e-6))
    assert g[-1] == pytest.approx(300.0)
    assert np.all(np.diff(np.log(g)) > 0)
    assert gamma_grid(0.0)[0] == 1e-6


def test_bai_yin_limits():
    assert bai_yin_limits(1.0, 1.0) == (0.0, 4.0)
    lo, hi = bai_yin_limits(4.0, 2.0)
    assert lo == pytest.approx(0.25) and hi == pytest.approx(2.25)
    assert bai_yin_limits(0.5, 1.0)[0] == 0.0


def test_asymptotic_square_case_uses_zero_lambda_min():
    rep = asymptotic_feasibility(AsymptoticPoint(1.0, 1.0, GAUSS03))
    assert rep.lambda_min == 0.0 and rep.lambda_max == pytest.approx(4.0)


def test_asymptotic_point_validation():
    with pytest.raises(ConfigError):
        AsymptoticPoint(0.0, 1.0, GAUSS03)
    with pytest.raises(ConfigError):
        AsymptoticPoint(1.0, float("nan"), GAUSS03)


@pytest.mark.parametrize("delta", [0.5, 1.0, 4.0])
def test_mp_density_mass(delta):
    r = 1 / math.sqrt(delta)
    a, b = (1 - r) ** 2, (1 + r) ** 2
    mass, _ = integrate.quad(lambda x: float(mp_density(np.array([x]), delta)[0]), a, b,
                             limit=200)
    assert mass == pytest.approx(min(1.0, delta), rel=1e-6)


def test_large_delta_small_noise_feasible():
    assert asymptotic_feasibility(AsymptoticPoint(1e4, 1.0, GAUSS03)).feasible


def test_margin_improves_with_more_data():
    margins = [asymptotic_feasibility(AsymptoticPoint(delta, 1.0, GAUSS03)).margin
               for delta in (1.0, 10.0, 100.0, 1e3, 1e4)]
    verdicts = [asymptotic_feasibility(AsymptoticPoint(delta, 1.0, GAUSS03)).feasible
                for delta in (1.0, 10.0, 100.0, 1e3, 1e4)]
    # once feasible, stays feasible
    first = verdicts.index(True)
    assert all(verdicts[first:])
    assert margins[-1] > 0


def test_single_point_scan():
    scan = scan_region(("delta", [1e4]), ("sigma0", [1.0]), {"prior": GAUSS03})
    assert scan.verdicts().shape == (1, 1)
    assert scan.verdicts()[0, 0]
    assert scan.boundary() == []
    assert scan.crossings_per_slice() == [0]


def test_scan_single_boundary_per_slice(tmp_path):
    deltas = np.geomspace(1, 1e4, 8).tolist()
    sigmas = np.geomspace(0.05, 20, 25).tolist()
    scan = scan_region(("delta", deltas), ("sigma0", sigmas), {"prior": GAUSS03}, threads=2)
    assert all(c <= 1 for c in scan.crossings_per_slice())
    for a1, a2 in scan.boundary():
        assert sigmas[0] <= a2 <= sigmas[-1]
    path = tmp_path / "r.csv"
    scan.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "delta,sigma0,feasible,gamma_star,margin"
    assert len(lines) == 1 + 8 * 25


def test_scan_threads_identical():
    args = (("delta", [1.0, 100.0, 1e4]), ("q", [0.1, 0.5, 0.9]), {"prior": GAUSS03, "sigma0": 1.0})
    a, b = scan_region(*args, threads=1), scan_region(*args, threads=3)
    assert np.array_equal(a.margins(), b.margins())


def test_laplace_prior_scan_runs():
    prior = SpikeSlabPrior(0.5, LaplaceSlab(math.sqrt(2)))
    rep = asymptotic_feasibility(AsymptoticPoint(20.0, 1.0, prior))
    assert rep.gammas_tested >= 1 and math.isfinite(rep.margin)
