import math

import mpmath
import numpy as np
import pytest
from scipy import integrate

from wlfrailty import wl
from wlfrailty.errors import DataError, DomainError
from wlfrailty.model import (
    Cluster,
    Dataset,
    StepBaseline,
    Subject,
    WeibullBaseline,
    cluster_density,
    cluster_survival,
    cluster_sufficients,
    conditional_hazard,
    failure_frailty_law,
    observed_loglik,
    posterior_frailty,
    survivor_frailty_law,
)

EXP1 = WeibullBaseline(1.0, 1.0)
GRID = np.linspace(0.02, 6.0, 50)


def test_conditional_hazard():
    assert conditional_hazard(2.0, 1.0, [0.0], [0.0], EXP1) == pytest.approx(1.0)
    assert conditional_hazard(2.0, 2.0, [0.3], [1.0], EXP1) == pytest.approx(2 * math.exp(0.3))
    assert conditional_hazard(1.0, 1.0, [], [], WeibullBaseline(0.514, 0.440)) == pytest.approx(0.2262, abs=1e-4)
    step = StepBaseline(np.array([1.0, 2.0]), np.array([0.2, 0.3]))
    assert conditional_hazard(2.0, 1.0, [], [], step) == pytest.approx(0.3)
    with pytest.raises(DomainError):
        conditional_hazard(1.5, 1.0, [], [], step)


def test_step_baseline():
    b = StepBaseline(np.array([1.0, 2.0, 4.0]), np.array([0.1, 0.2, 0.3]))
    assert np.allclose(b.cumhaz([0.5, 1.0, 3.0, 10.0]), [0.0, 0.1, 0.3, 0.6])


def test_cluster_survival():
    assert cluster_survival([1e-300], [[0.0]], [0.0], 0.5, EXP1) == pytest.approx(1.0)
    ref = (1 + 0.45 * 3) ** (-25 / 9) * 1.75
    v = cluster_survival([1.0, 2.0], [[0.0], [0.0]], [0.0], 0.5, EXP1)
    assert v == pytest.approx(ref, rel=1e-14)
    assert v == pytest.approx(0.16304, abs=1e-5)
    z = wl.sample(400_000, 0.5, 9)
    assert np.mean(np.exp(-3 * z)) == pytest.approx(v, abs=2e-3)
    # n = 1 is the Laplace transform at exp(x'b) Lambda0(t)
    assert cluster_survival([1.3], [[0.4]], [0.7], 0.3, EXP1) == pytest.approx(
        wl.laplace(math.exp(0.28) * 1.3, 0.3), rel=1e-14)


def test_cluster_survival_monotone():
    times = np.array([1.0, 2.0])
    xs = np.array([[1.0], [0.5]])
    vals = [cluster_survival(times * s, xs, [0.2], 0.4, EXP1) for s in np.linspace(0.5, 3, 10)]
    assert np.all(np.diff(vals) < 0)
    vals = [cluster_survival(times, xs, [b], 0.4, EXP1) for b in np.linspace(-1, 1, 10)]
    assert np.all(np.diff(vals) < 0)


def test_cluster_density_single_subject():
    t, eta, th = 1.7, 0.3, 0.6
    ref = -math.exp(eta) * wl.laplace_deriv(1, math.exp(eta) * t, th)
    assert cluster_density([t], [[1.0]], [eta], th, EXP1) == pytest.approx(ref, rel=1e-13)


def test_cluster_density_integrates_to_one():
    def dens(t2, t1):
        return cluster_density([t1, t2], [[0.0], [0.0]], [0.0], 0.25, EXP1)

    v, _ = integrate.dblquad(dens, 0, np.inf, 0, np.inf, epsabs=1e-10, epsrel=1e-10)
    assert v == pytest.approx(1.0, abs=1e-6)


def test_cluster_density_large_cluster_finite():
    times = np.linspace(0.1, 5, 23)
    v = cluster_density(times, np.zeros((23, 1)), [0.0], 0.6, EXP1, log=True)
    assert math.isfinite(v)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_cluster_density_is_derivative_of_survival(d):
    t0 = np.array([0.6, 1.1, 1.7])[:d]
    xs = np.array([[0.2], [-0.4], [0.9]])[:d]
    beta, theta = [0.5], 0.35

    def surv(*ts):
        return cluster_survival(list(ts), xs, beta, theta, EXP1)

    h = 1e-3
    # nested central differences: (-1)^d d^d S / dt_1 ... dt_d
    total = 0.0
    for signs in np.ndindex(*([2] * d)):
        s = np.array(signs) * 2 - 1
        total += np.prod(s) * surv(*(t0 + s * h))
    fd = (-1) ** d * total / (2 * h) ** d
    assert cluster_density(t0, xs, beta, theta, EXP1) == pytest.approx(fd, rel=1e-4)


THETAS = [0.1, 0.5, 1.0]
LAMBDAS = [0.1, 1.0, 5.0]


@pytest.mark.parametrize("theta", THETAS)
@pytest.mark.parametrize("cum", LAMBDAS)
def test_survivor_law_bayes_identity(theta, cum):
    b = WeibullBaseline(cum, 1.0)
    law = survivor_frailty_law(1.0, theta, b)
    prior = wl.reparam(theta)
    lhs = wl.pdf_general(GRID, law)
    rhs = wl.pdf_general(GRID, prior) * np.exp(-GRID * cum) / wl.laplace(cum, theta)
    assert np.max(np.abs(lhs - rhs)) < 1e-10


@pytest.mark.parametrize("theta", THETAS)
@pytest.mark.parametrize("cum", LAMBDAS)
def test_failure_law_bayes_identity(theta, cum):
    b = WeibullBaseline(cum, 1.0)
    law = failure_frailty_law(1.0, theta, b)
    prior = wl.reparam(theta)
    # f(t|z) = z lambda0 e^{-z Lambda0}; f(t) = -lambda0 L'(Lambda0)
    lhs = wl.pdf_general(GRID, law)
    rhs = wl.pdf_general(GRID, prior) * GRID * np.exp(-GRID * cum) / -wl.laplace_deriv(1, cum, theta)
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_conditioned_law_values():
    law = survivor_frailty_law(1.0, 0.5, EXP1)
    assert 1 / law.alpha == pytest.approx(0.45 / 1.45, rel=1e-13)
    assert law.phi == pytest.approx(16 / 9, rel=1e-13)
    fail = failure_frailty_law(1.0, 0.5, EXP1)
    assert fail.phi == pytest.approx(25 / 9, rel=1e-13)
    assert wl.moments_general(fail)[0] > wl.moments_general(law)[0]
    prior = survivor_frailty_law(1e-300, 0.5, EXP1)
    assert prior.alpha == pytest.approx(wl.reparam(0.5).alpha, rel=1e-12)


def test_posterior_toy_cluster():
    c = Cluster("a", (Subject(1.0, True, (0.0,)),))
    law, suff = posterior_frailty(c, [0.0], 0.5, EXP1)
    assert law.phi == pytest.approx(25 / 9, rel=1e-13)
    assert law.alpha == pytest.approx(29 / 9, rel=1e-13)
    assert suff.a_psi <= 0.45
    assert wl.moments_general(law)[0] == pytest.approx(1.00575, abs=1e-5)
    fail = failure_frailty_law(1.0, 0.5, EXP1)
    assert (law.alpha, law.phi) == pytest.approx((fail.alpha, fail.phi), rel=1e-14)


def _toy_data():
    return Dataset(
        [0.5, 1.2, 2.0, 0.7, 3.1, 1.4],
        [1, 0, 1, 1, 1, 0],
        np.array([[0.2, 1.0], [-0.5, 0.0], [1.0, 1.0], [0.0, 0.0], [0.3, 1.0], [-1.0, 0.0]]),
        ["a", "a", "b", "b", "c", "a"],
    )


def _quadrature_loglik(beta, theta, b, data):
    # log of int prod_j [z lambda0 e^{x b}]^delta exp(-z Lambda0 e^{x b}) f(z) dz per cluster
    prior = wl.reparam(theta)
    total = mpmath.mpf(0)
    eta = data.X @ beta
    for i in range(data.m):
        sel = data.cluster == i
        r = int(data.event[sel].sum())
        s_star = float(np.sum(b.cumhaz(data.time[sel]) * np.exp(eta[sel])))
        lam = [float(v) for v in np.exp(b.log_hazard(data.time[sel][data.event[sel]]) + eta[sel][data.event[sel]])]

        def integrand(z):
            return mpmath.power(z, r) * mpmath.exp(-z * s_star) * mpmath.exp(
                mpmath.mpf(float(wl.logpdf_general(float(z) if z > 0 else 1e-300, prior))))

        val = mpmath.quad(integrand, [0, 1, 5, mpmath.inf])
        total += mpmath.log(val) + sum(mpmath.log(v) for v in lam)
    return float(total)


@pytest.mark.parametrize("theta", [0.2, 0.8])
def test_observed_loglik_integral_identity(theta):
    data = _toy_data()
    beta = np.array([0.4, -0.3])
    b = WeibullBaseline(0.6, 1.3)
    assert observed_loglik(beta, theta, b, data) == pytest.approx(
        _quadrature_loglik(beta, theta, b, data), abs=1e-8)


def test_observed_loglik_no_frailty_limit():
    data = _toy_data()
    beta = np.array([0.4, -0.3])
    b = WeibullBaseline(0.6, 1.3)
    eta = data.X @ beta
    ref = float(np.sum(data.event * (np.log(b.hazard(data.time)) + eta)) - np.sum(b.cumhaz(data.time) * np.exp(eta)))
    assert observed_loglik(beta, 1e-5, b, data) == pytest.approx(ref, abs=1e-3)


def test_observed_loglik_invariances():
    data = _toy_data()
    beta = np.array([0.4, -0.3])
    b = WeibullBaseline(0.6, 1.3)
    v = observed_loglik(beta, 0.5, b, data)
    perm = np.array([4, 3, 2, 1, 0, 5])
    shuffled = Dataset(data.time[perm], data.event[perm], data.X[perm],
                       [data.cluster_ids[c] for c in data.cluster[perm]])
    assert observed_loglik(beta, 0.5, b, shuffled) == pytest.approx(v, rel=1e-13)
    # a censored subject with zero cumulative hazard carries no information
    step = StepBaseline(np.array([0.5, 0.7, 2.0, 3.1]), np.array([0.1, 0.2, 0.3, 0.4]))
    v1 = observed_loglik(beta, 0.5, step, data)
    extra = Dataset(np.append(data.time, 0.1), np.append(data.event, False),
                    np.vstack([data.X, [[5.0, 1.0]]]), [*(data.cluster_ids[c] for c in data.cluster), "a"])
    assert observed_loglik(beta, 0.5, step, extra) == pytest.approx(v1, rel=1e-13)


def test_observed_loglik_zero_jump_is_minus_inf():
    data = _toy_data()
    step = StepBaseline(np.array([0.5, 0.7, 2.0, 3.1]), np.array([0.1, 0.0, 0.3, 0.4]))
    with pytest.warns(RuntimeWarning):
        assert observed_loglik([0.0, 0.0], 0.5, step, data) == -math.inf


def test_cluster_sufficients_bounds():
    data = _toy_data()
    alpha, bp = cluster_sufficients(data, [0.1, 0.2], 0.5, EXP1)
    f = wl.WLFrailty(0.5)
    assert np.all(1 / alpha <= f.a_theta)
    assert np.allclose(bp - f.b_theta, [1, 2, 1])


def test_dataset_grouping_and_validation():
    d = Dataset([3.0, 1.0, 2.0], [1, 0, 1], np.zeros((3, 0)), ["y", "x", "y"])
    assert d.cluster_ids == ["y", "x"]
    assert list(d.time) == [3.0, 2.0, 1.0]
    assert list(d.sizes) == [2, 1]
    with pytest.raises(DataError):
        Dataset([0.0], [1], np.zeros((1, 0)), [0])
    with pytest.raises(DataError):
        Dataset([1.0], [2], np.zeros((1, 0)), [0])
    clusters = d.clusters
    assert Dataset.from_clusters(clusters).cluster_ids == ["y", "x"]
