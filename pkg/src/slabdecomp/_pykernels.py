"""Pure numpy kernels.

Reference implementation of everything in ``_ckernels``. The chain drivers
consume random numbers in identical order on both backends, so the two
produce the same chains up to floating-point summation order.
"""

import math

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import erfc, erfcx

KIND_GAUSSIAN = 0
KIND_LAPLACE = 1
KIND_QUADRATIC = 2
KIND_GENERIC = 3

STATUS_OK = 0
STATUS_NONFINITE = 1

GD_CONVERGED = 0
GD_MAX_ITERS = 1
GD_DIVERGED = 2

_SQRT2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_LOG_2PI = math.log(2.0 * math.pi)

# Below this standardized truncation point the direct Mills-ratio formulas
# cancel; switch to the continued fraction.
TAIL_SWITCH = -2.0
CF_DEPTH = 200


def cf_depth(u):
    """Continued-fraction depth giving rounding-level accuracy for ``u = -t >= 2``.

    Fitted against a depth-2000 reference (worst relative error 7e-16).
    """
    return min(CF_DEPTH, int(math.ceil(6.0 + 120.0 / u + 240.0 / (u * u))))


def gaussian_tail(t):
    """Moments of a unit Gaussian truncated to ``Z > -t``.

    Returns ``(log(exp(t**2/2) * Phi(t)), E[Z] + t, Var[Z])`` elementwise,
    i.e. the log-mass, mean and variance of ``N(t, 1)`` restricted to the
    positive half-line.
    """
    t = np.asarray(t, dtype=float)
    logphi = np.empty_like(t)
    mean = np.empty_like(t)
    var = np.empty_like(t)

    direct = t >= TAIL_SWITCH
    neg = direct & (t < 0)
    pos = direct & (t >= 0)

    if neg.any():
        tn = t[neg]
        ex = erfcx(-tn / _SQRT2)
        r = _SQRT_2_OVER_PI / ex
        logphi[neg] = np.log(0.5 * ex)
        mean[neg] = tn + r
        var[neg] = 1.0 - r * mean[neg]
    if pos.any():
        tp = t[pos]
        big_phi = 1.0 - 0.5 * erfc(tp / _SQRT2)
        r = _INV_SQRT_2PI * np.exp(-0.5 * tp * tp) / big_phi
        logphi[pos] = 0.5 * tp * tp + np.log(big_phi)
        mean[pos] = tp + r
        var[pos] = 1.0 - r * mean[pos]

    far = ~direct
    if far.any():
        u = -t[far]
        f = np.zeros_like(u)
        for k in range(cf_depth(float(u.min())), 2, -1):
            f = k / (u + f)
        c = 2.0 / (u + f)
        e = 1.0 / (u + c)
        mean[far] = e
        var[far] = e * (u + 2.0 * c - f) / ((u + f) * (u + c))
        logphi[far] = np.log(0.5 * erfcx(u / _SQRT2))
    return logphi, mean, var


def tilted_moments(kind, param, gamma, x):
    """Log-normalizer, mean and variance of ``exp(x t - gamma t^2 / 2) mu(dt)``.

    ``param`` is the slab variance for the Gaussian slab and the rate for
    the Laplace slab.
    """
    x = np.asarray(x, dtype=float)
    if kind == KIND_GAUSSIAN:
        c1 = param / (1.0 + gamma * param)
        logg = -0.5 * math.log1p(gamma * param) + 0.5 * x * x * c1
        return logg, x * c1, np.full_like(x, c1)
    if kind == KIND_LAPLACE:
        lam = param
        isg = 1.0 / math.sqrt(gamma)
        c0 = math.log(0.5 * lam) + 0.5 * (_LOG_2PI - math.log(gamma))
        lp, mp, vp = gaussian_tail((x - lam) * isg)
        lm, mm, vm = gaussian_tail((-x - lam) * isg)
        lse = np.logaddexp(lp, lm)
        wp = np.exp(lp - lse)
        wm = np.exp(lm - lse)
        mup = mp * isg
        mum = -mm * isg
        mean = wp * mup + wm * mum
        var = (wp * vp + wm * vm) * isg * isg + wp * wm * (mup - mum) ** 2
        return c0 + lse, mean, var
    raise ValueError(f"no closed-form tilted moments for kind {kind}")


def combine_terms(log_q, log_1mq, logg, mean, var):
    """Mixture potential terms from tilted-slab moments."""
    a = log_q + logg
    lse = np.logaddexp(log_1mq, a)
    p = np.exp(a - lse)
    pm = np.exp(log_1mq - lse)
    v1 = -p * mean
    v2 = -p * var - p * pm * mean * mean
    return -lse, v1, v2, p


def potential_terms(kind, param, q, gamma, x):
    """``(V, V', V'', p)`` of the spike-and-slab potential at ``x``."""
    logg, mean, var = tilted_moments(kind, param, gamma, x)
    return combine_terms(math.log(q), math.log1p(-q), logg, mean, var)


def field_energy(model, phi):
    """Auxiliary-field energy ``H`` and its gradient."""
    phi = np.asarray(phi, dtype=float)
    if model.kind == KIND_QUADRATIC:
        return 0.5 * float(phi @ phi), phi.copy()
    w = cho_solve((model.chol, True), phi, check_finite=False)
    x = model.h + phi
    if model.kind == KIND_GENERIC:
        v, v1 = model.generic_terms(x)
    else:
        v, v1, _, _ = potential_terms(model.kind, model.param, model.q, model.gamma, x)
    return 0.5 * float(phi @ w) + float(np.sum(v)), w + v1


def _record(out, recorded, phi, offset, steps, thin):
    if (offset + steps) % thin == 0 and recorded < out.shape[0]:
        out[recorded] = phi
        recorded += 1
    return recorded


def mala_advance(model, tau, retry, phi, grad, energy, noise, unif, n_steps, offset, thin, out):
    """Advance a MALA chain in place.

    Consumes proposals ``noise[i], unif[i]`` in order until ``n_steps``
    transitions complete or the proposals run out. Returns
    ``(used, steps, recorded, accepted, energy, status)``.
    """
    used = steps = recorded = accepted = 0
    status = STATUS_OK
    sq = math.sqrt(2.0 * tau)
    n_prop = noise.shape[0]
    while steps < n_steps and used < n_prop:
        prop = phi - tau * grad + sq * noise[used]
        h_prop, g_prop = field_energy(model, prop)
        if not (math.isfinite(h_prop) and np.all(np.isfinite(g_prop))):
            status = STATUS_NONFINITE
            break
        fwd = prop - phi + tau * grad
        bwd = phi - prop + tau * g_prop
        log_ratio = energy - h_prop - (float(bwd @ bwd) - float(fwd @ fwd)) / (4.0 * tau)
        u = unif[used]
        used += 1
        accept = u <= math.exp(min(log_ratio, 700.0))
        if accept:
            phi[:] = prop
            grad[:] = g_prop
            energy = h_prop
            accepted += 1
        if accept or not retry:
            steps += 1
            recorded = _record(out, recorded, phi, offset, steps, thin)
    return used, steps, recorded, accepted, energy, status


def _mass_solve(mass_chol, rho):
    if mass_chol is None:
        return rho
    return cho_solve((mass_chol, True), rho, check_finite=False)


def leapfrog(model, eps, n_leap, mass_chol, phi, rho, grad=None):
    """Run ``n_leap`` leapfrog steps; returns ``(phi, rho, H, grad, ok)``."""
    phi = np.array(phi, dtype=float)
    rho = np.array(rho, dtype=float)
    if grad is None:
        h, g = field_energy(model, phi)
    else:
        h, g = float("nan"), np.array(grad, dtype=float)
    if n_leap == 0:
        return phi, rho, h, g, True
    rho -= 0.5 * eps * g
    for i in range(n_leap):
        phi += eps * _mass_solve(mass_chol, rho)
        h, g = field_energy(model, phi)
        if not (math.isfinite(h) and np.all(np.isfinite(g))):
            return phi, rho, h, g, False
        rho -= (eps if i < n_leap - 1 else 0.5 * eps) * g
    return phi, rho, h, g, True


def hmc_advance(model, eps, n_leap, mass_chol, retry, phi, grad, energy, noise, unif,
                n_steps, offset, thin, out):
    """Advance an HMC chain in place; same contract as :func:`mala_advance`."""
    used = steps = recorded = accepted = 0
    status = STATUS_OK
    n_prop = noise.shape[0]
    while steps < n_steps and used < n_prop:
        z = noise[used]
        rho = z if mass_chol is None else mass_chol @ z
        kin0 = 0.5 * float(z @ z)
        x, r, h_prop, g_prop, ok = leapfrog(model, eps, n_leap, mass_chol, phi, rho, grad)
        if not ok:
            status = STATUS_NONFINITE
            break
        kin1 = 0.5 * float(r @ _mass_solve(mass_chol, r))
        log_ratio = energy - h_prop + kin0 - kin1
        u = unif[used]
        used += 1
        accept = u <= math.exp(min(log_ratio, 700.0))
        if accept:
            phi[:] = x
            grad[:] = g_prop
            energy = h_prop
            accepted += 1
        if accept or not retry:
            steps += 1
            recorded = _record(out, recorded, phi, offset, steps, thin)
    return used, steps, recorded, accepted, energy, status


def gradient_descent(model, phi, lr, max_iters, tol):
    """Fixed-step gradient descent on ``H`` starting from ``phi`` (in place).

    Returns ``(iterations, grad_inf_norm, energy, status)``.
    """
    energy, grad = field_energy(model, phi)
    rising = 0
    it = 0
    gnorm = float(np.max(np.abs(grad)))
    while it < max_iters:
        if gnorm < tol:
            return it, gnorm, energy, GD_CONVERGED
        phi -= lr * grad
        new_energy, grad = field_energy(model, phi)
        it += 1
        rising = rising + 1 if new_energy > energy else 0
        energy = new_energy
        gnorm = float(np.max(np.abs(grad)))
        if rising >= 10:
            return it, gnorm, energy, GD_DIVERGED
    return it, gnorm, energy, GD_CONVERGED if gnorm < tol else GD_MAX_ITERS
