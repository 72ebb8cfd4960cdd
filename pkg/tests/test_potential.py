import math

import numpy as np
import pytest
from scipy import integrate

from slabdecomp.errors import ConfigError, PreconditionError
from slabdecomp.potential import (Decomposition, field_hamiltonian, inf_v_second,
                                  potential_terms, slab_transform)
from slabdecomp.priors import (GaussianSlab, GenericSlab, IidGaussian, LaplaceSlab,
                               RegressionInstance, SpikeSlabPrior, generate_design,
                               generate_response, sample_prior)

LAPLACE = LaplaceSlab(math.sqrt(2.0))


def quad_moments(slab, gamma, x):
    """Oracle: log g, mean and variance of the tilted slab by adaptive quadrature."""
    # centre and shift the exponent so the integrand peaks near 1
    grid = np.linspace(-50, 50, 20001) / math.sqrt(gamma) + x / gamma
    logd = x * grid - 0.5 * gamma * grid**2 + slab.logpdf(grid)
    shift = float(np.max(logd))
    m = float(grid[np.argmax(logd)])

    def f(t, k):
        return (t - m) ** k * math.exp(x * t - 0.5 * gamma * t * t + float(slab.logpdf(t)) - shift)

    pts = [0.0] if abs(m) < 60 / math.sqrt(gamma) else None
    lo, hi = m - 60 / math.sqrt(gamma), m + 60 / math.sqrt(gamma)
    z, m1, m2 = (integrate.quad(f, lo, hi, args=(k,), points=pts, epsabs=0, epsrel=1e-13,
                                limit=500)[0] for k in range(3))
    return shift + math.log(z), m + m1 / z, m2 / z - (m1 / z) ** 2


def test_gaussian_transform_closed_form(backend):
    st = slab_transform(GaussianSlab(1.0), 3.0, 0.0)
    assert st.g == pytest.approx(0.5, rel=1e-14)
    assert st.g_prime == 0.0
    assert st.g_second == pytest.approx(0.125, rel=1e-14)
    logg, _, _ = quad_moments(GaussianSlab(1.0), 3.0, 0.0)
    assert math.exp(logg) == pytest.approx(0.5, rel=1e-10)


@pytest.mark.parametrize("slab", [GaussianSlab(0.7), LAPLACE,
                                  GenericSlab(lambda t: -0.5 * t**2 - 0.1 * t**4)])
def test_transform_symmetry_at_zero(backend, slab):
    assert abs(slab_transform(slab, 2.5, 0.0).g_prime) < 1e-12


@pytest.mark.parametrize("gamma,x", [(2.0, 1.0), (0.05, 0.3), (5.0, -2.0), (1.0, 30.0),
                                     (0.2, 0.0), (3.0, -120.0), (40.0, 500.0), (0.01, 0.05)])
def test_laplace_transform_matches_quadrature(backend, gamma, x):
    st = slab_transform(LAPLACE, gamma, x)
    logg, mean, var = quad_moments(LAPLACE, gamma, x)
    assert st.log_g == pytest.approx(logg, rel=1e-8, abs=1e-10)
    assert st.mean == pytest.approx(mean, rel=1e-8, abs=1e-10)
    assert st.variance == pytest.approx(var, rel=1e-7)


def test_laplace_transform_no_overflow(backend):
    for x in [30.0, 300.0, 3000.0, -3000.0]:
        st = slab_transform(LAPLACE, 2.0, x)
        assert math.isfinite(st.log_g) and math.isfinite(st.mean) and st.variance > 0


@pytest.mark.parametrize("slab", [GaussianSlab(1.3), LAPLACE])
def test_generic_slab_matches_closed_form(slab):
    generic = GenericSlab(lambda t: np.asarray(slab.logpdf(t)))
    for gamma, x in [(2.0, 1.0), (0.5, -3.0), (4.0, 7.0)]:
        a, b = slab_transform(generic, gamma, x), slab_transform(slab, gamma, x)
        assert a.log_g == pytest.approx(b.log_g, rel=1e-8, abs=1e-9)
        assert a.mean == pytest.approx(b.mean, rel=1e-8, abs=1e-9)
        assert a.variance == pytest.approx(b.variance, rel=1e-7)


@pytest.mark.parametrize("slab", [GaussianSlab(1.0), LAPLACE])
@pytest.mark.parametrize("x", [-2.0, 0.3, 1.7, 4.0])
def test_transform_derivatives_match_finite_differences(backend, slab, x):
    gamma, h = 1.5, 1e-4
    g = [slab_transform(slab, gamma, x + k * h).g for k in (-2, -1, 0, 1, 2)]
    d1 = (-g[4] + 8 * g[3] - 8 * g[1] + g[0]) / (12 * h)
    d2 = (-g[4] + 16 * g[3] - 30 * g[2] + 16 * g[1] - g[0]) / (12 * h * h)
    st = slab_transform(slab, gamma, x)
    assert st.g_prime == pytest.approx(d1, rel=1e-6, abs=1e-9)
    assert st.g_second == pytest.approx(d2, rel=1e-6, abs=1e-7)


@pytest.mark.parametrize("slab", [GaussianSlab(2.0), LAPLACE])
def test_conditional_variance_identity_and_brascamp_lieb(backend, slab):
    gamma = 1.7
    for x in np.linspace(-6, 6, 13):
        st = slab_transform(slab, gamma, x)
        _, _, var = quad_moments(slab, gamma, x)
        assert st.variance == pytest.approx(var, abs=1e-7)
        assert 0.0 <= st.variance <= 1.0 / gamma
        assert st.g > 0


def test_tilted_mean_monotone_with_bounded_slope(backend):
    gamma = 0.8
    xs = np.linspace(-20, 20, 4001)
    for slab in (GaussianSlab(1.0), LAPLACE):
        means = np.array([slab_transform(slab, gamma, x).mean for x in xs[::40]])
        slopes = np.diff(means) / np.diff(xs[::40])
        assert np.all(slopes >= -1e-12) and np.all(slopes <= 1 / gamma + 1e-12)


def test_potential_terms_reference_values(backend):
    prior = SpikeSlabPrior(0.5, GaussianSlab(1.0))
    v, v1, v2, p = potential_terms(prior, 3.0, 0.0)
    assert v == pytest.approx(-math.log(0.75), rel=1e-14)
    assert v1 == 0.0
    assert v2 == pytest.approx(-1 / 12, rel=1e-14)
    assert p == pytest.approx(1 / 3, rel=1e-14)
    h = 1e-4
    fd = (potential_terms(prior, 3.0, h)[0] - 2 * v + potential_terms(prior, 3.0, -h)[0]) / h**2
    assert v2 == pytest.approx(fd, rel=1e-6)


def test_potential_parity(backend):
    prior = SpikeSlabPrior(0.3, LAPLACE)
    a, b = potential_terms(prior, 5.0, -2.0), potential_terms(prior, 5.0, 2.0)
    assert abs(a[0] - b[0]) < 1e-10
    assert abs(a[1] + b[1]) < 1e-10
    assert abs(a[2] - b[2]) < 1e-10
    assert potential_terms(prior, 5.0, 0.0)[1] == 0.0


def test_potential_vectorized_equals_scalar(backend):
    prior = SpikeSlabPrior(0.4, LAPLACE)
    xs = np.linspace(-9, 9, 17)
    vec = potential_terms(prior, 1.2, xs)
    for i, x in enumerate(xs):
        sc = potential_terms(prior, 1.2, x)
        for k in range(4):
            assert vec[k][i] == pytest.approx(sc[k], rel=1e-15, abs=1e-300)


def test_gamma_must_be_positive():
    with pytest.raises(ConfigError):
        potential_terms(SpikeSlabPrior(0.5, GaussianSlab()), 0.0, 1.0)
    with pytest.raises(ConfigError):
        slab_transform(GaussianSlab(), -1.0, 1.0)


def test_inf_v_second_gaussian_reference(backend):
    prior = SpikeSlabPrior(0.5, GaussianSlab(1.0))
    inf, arg = inf_v_second(prior, 3.0)
    assert inf <= -1 / 12
    assert arg >= 0
    grid = np.linspace(0, 50, 10**6)
    dense = potential_terms(prior, 3.0, grid)[2]
    assert inf <= dense.min() + 1e-12
    assert inf >= dense.min() - 1e-9
    xs = np.linspace(-20, 20, 4001)
    assert np.all(potential_terms(prior, 3.0, xs)[2] >= -1 / 3 - xs**2 / 9)


@pytest.mark.parametrize("q", [0.05, 0.3, 0.9])
@pytest.mark.parametrize("slab", [GaussianSlab(1.0), LAPLACE, GaussianSlab(25.0)])
@pytest.mark.parametrize("gamma", [0.01, 0.5, 4.0, 300.0])
def test_inf_v_second_against_dense_grid(backend, q, slab, gamma):
    prior = SpikeSlabPrior(q, slab)
    inf, arg = inf_v_second(prior, gamma)
    assert inf <= 0.0
    assert potential_terms(prior, gamma, arg)[2] == pytest.approx(inf, abs=1e-12)
    scale = 60 * (1 + math.sqrt(gamma) + 1 / math.sqrt(gamma))
    grid = np.linspace(0, scale, 200001)
    dense = potential_terms(prior, gamma, grid)[2]
    assert inf <= dense.min() + 1e-12


def make_decomp(d, seed, slab=GaussianSlab(1.0), zero_y=False):
    prior = SpikeSlabPrior(0.3, slab)
    X = generate_design(IidGaussian(1.0 / d), 2 * d, d, seed)
    theta = sample_prior(prior, d, seed)
    y = np.zeros(2 * d) if zero_y else generate_response(X, theta, 1.0, seed)
    inst = RegressionInstance(X, y, 1.0)
    return Decomposition.from_instance(inst), prior, inst


def test_decomposition_factorization():
    dec, _, inst = make_decomp(8, 1)
    gram = inst.X.T @ inst.X
    ev = np.linalg.eigvalsh(gram)
    assert dec.lambda_max == pytest.approx(ev[-1], rel=1e-12)
    assert dec.gamma == pytest.approx(ev[-1] + 0.1, rel=1e-12)
    v = np.random.default_rng(0).standard_normal(8)
    assert np.allclose(dec.chol @ (dec.chol.T @ v), dec.A @ v, rtol=1e-10, atol=0)
    assert np.allclose(dec.A @ dec.solve(v), v, rtol=1e-10, atol=1e-12)
    assert np.allclose(dec.h, inst.X.T @ inst.y)


def test_decomposition_rejects_small_gamma():
    _, _, inst = make_decomp(4, 2)
    lam = np.linalg.eigvalsh(inst.X.T @ inst.X)[-1]
    with pytest.raises(PreconditionError):
        Decomposition.from_instance(inst, gamma=lam * 0.999)
    with pytest.raises(PreconditionError):
        Decomposition.from_instance(inst, gamma=lam)


def test_field_hamiltonian_zero_gradient_at_origin(backend):
    dec, prior, _ = make_decomp(6, 3, zero_y=True)
    H, grad = field_hamiltonian(dec, prior, np.zeros(6))
    assert np.all(grad == 0.0)
    assert H == pytest.approx(6 * -math.log(1.0), abs=1e-15) or math.isfinite(H)


@pytest.mark.parametrize("slab", [GaussianSlab(1.0), LAPLACE])
def test_field_hamiltonian_gradient_finite_differences(backend, slab):
    dec, prior, _ = make_decomp(5, 4, slab)
    phi = np.random.default_rng(5).standard_normal(5)
    H, grad = field_hamiltonian(dec, prior, phi)
    w = np.linalg.solve(dec.A, phi)
    v = potential_terms(prior, dec.gamma, dec.h + phi)
    assert H == pytest.approx(0.5 * phi @ w + v[0].sum(), rel=1e-12)
    for i in range(5):
        step = 1e-5 * (1 + abs(phi[i]))
        e = np.zeros(5)
        e[i] = step
        fd = (field_hamiltonian(dec, prior, phi + e)[0] - field_hamiltonian(dec, prior, phi - e)[0]) / (2 * step)
        assert grad[i] == pytest.approx(fd, rel=1e-6, abs=1e-8)


def test_field_hamiltonian_generic_matches_closed_form():
    dec, prior, _ = make_decomp(4, 6, LAPLACE)
    generic = SpikeSlabPrior(prior.q, GenericSlab(lambda t: -math.sqrt(2.0) * np.abs(t)))
    phi = np.random.default_rng(6).standard_normal(4)
    a, b = field_hamiltonian(dec, prior, phi), field_hamiltonian(dec, generic, phi)
    assert a[0] == pytest.approx(b[0], rel=1e-9)
    assert np.allclose(a[1], b[1], rtol=1e-8, atol=1e-10)


def test_field_hamiltonian_rejects_wrong_shape():
    dec, prior, _ = make_decomp(3, 7)
    with pytest.raises(ConfigError):
        field_hamiltonian(dec, prior, np.zeros(4))


def test_kernels_accept_read_only_arrays(backend):
    prior = SpikeSlabPrior(0.3, LAPLACE)
    x = np.linspace(-3, 3, 7)
    x.setflags(write=False)
    expected = potential_terms(prior, 2.0, x.copy())
    assert np.array_equal(potential_terms(prior, 2.0, x)[2], expected[2])
    dec, prior, _ = make_decomp(3, 8)
    phi = np.ones(3)
    phi.setflags(write=False)
    assert math.isfinite(field_hamiltonian(dec, prior, phi)[0])
