import math

import numpy as np
import pytest

from egsde.poe import (GridDistribution, PoeError, approx_kernel,
                       discretize_gaussian, empirical_distribution,
                       exact_product, gaussian_support, lattice,
                       product_check_cell, tv_distance)
from egsde.sde import VpSchedule, beta, em_step


def test_grid_distribution_validation():
    sup = lattice(-4, 4, 512)
    probs = np.full(512, 1.0 / 512)
    GridDistribution(sup, probs)
    with pytest.raises(PoeError):
        GridDistribution(sup[:100], probs[:100])  # too few points
    with pytest.raises(PoeError):
        GridDistribution(sup, probs * 2.0)  # not normalized
    with pytest.raises(PoeError):
        GridDistribution(sup, -probs)


def test_support_coverage_enforced():
    sup = lattice(-2, 2, 512)
    with pytest.raises(PoeError):
        discretize_gaussian(0.0, 1.0, sup)  # < 6 sigma


def test_zero_energy_reproduces_the_gaussian():
    sup = gaussian_support(0.3, 0.5)
    base = discretize_gaussian(0.3, 0.5, sup)
    prod = exact_product(0.3, 0.5, lambda y: np.zeros_like(y), sup)
    assert tv_distance(base, prod) < 1e-14


def test_linear_energy_completes_the_square():
    # N(0,1) * exp(-2y) ~ N(-2, 1)
    sup = gaussian_support(0.0, 1.0, also_cover=(-2.0,))
    prod = exact_product(0.0, 1.0, lambda y: 2.0 * y, sup)
    shifted = discretize_gaussian(-2.0, 1.0, sup)
    assert tv_distance(prod, shifted) < 1e-12


def test_quadratic_energy_adds_precision():
    # N(mu, v) * exp(-k(y-c)^2/2): precision 1/v + k
    mu, v, k, c = 0.5, 0.8, 2.0, -0.3
    prec = 1.0 / v + k
    post_var = 1.0 / prec
    post_mean = (mu / v + k * c) * post_var
    sup = gaussian_support(mu, v, also_cover=(c, post_mean))
    prod = exact_product(mu, v, lambda y: 0.5 * k * (y - c) ** 2, sup)
    want = discretize_gaussian(post_mean, post_var, sup)
    assert tv_distance(prod, want) < 1e-12


def test_energy_overflow_rejected():
    sup = gaussian_support(0.0, 1.0)
    with pytest.raises(PoeError):
        exact_product(0.0, 1.0, lambda y: np.full_like(y, np.inf), sup)
    # a large constant offset cancels in the normalization instead of
    # overflowing (at the cost of float cancellation in the exponent)
    prod = exact_product(0.0, 1.0, lambda y: np.full_like(y, 1e9), sup)
    base = discretize_gaussian(0.0, 1.0, sup)
    assert tv_distance(prod, base) < 1e-6


def test_approx_kernel_examples():
    assert approx_kernel(0.7, 0.3, lambda y: np.zeros_like(np.asarray(y))) == (0.7, 0.3)
    mean, var = approx_kernel(0.0, 1.0, lambda y: 2.0 * np.asarray(y))
    assert mean == pytest.approx(-2.0, abs=1e-9)
    assert var == 1.0
    # quadratic, low curvature: mean mu - var*k*(mu - c)
    mean, var = approx_kernel(1.0, 0.01, lambda y: 0.5 * 0.1 * np.asarray(y) ** 2)
    assert mean == pytest.approx(0.999, abs=1e-9)


def test_linear_energy_first_order_kernel_is_exact():
    for a in (-1.5, 0.3, 2.0):
        for mu, var in ((0.0, 1.0), (0.4, 0.2), (-1.0, 2.5)):
            energy = lambda y: a * np.asarray(y)
            mean_k, var_k = approx_kernel(mu, var, energy, lambda y: a)
            sup = gaussian_support(mu, var, also_cover=(mean_k,))
            exact = exact_product(mu, var, energy, sup)
            approx = discretize_gaussian(mean_k, var_k, sup)
            assert tv_distance(exact, approx) < 1e-8


def test_low_curvature_quadratic_within_tolerance():
    mu, var = 1.0, 0.01
    k = 1.0  # k*var = 0.01
    tv = product_check_cell(k, var, mu=mu, center=0.0)
    assert tv < 0.01


def test_curvature_error_scales_first_order():
    mu, var = 0.8, 0.05
    tv_hi = product_check_cell(2.0, var, mu=mu, center=0.0)
    tv_lo = product_check_cell(1.0, var, mu=mu, center=0.0)
    assert tv_hi / tv_lo >= 1.8


def test_tv_examples():
    sup = lattice(-8, 8, 4096)
    p = discretize_gaussian(0.0, 1.0, sup)
    assert tv_distance(p, p) == 0.0
    q = discretize_gaussian(0.1, 1.0, sup)
    assert tv_distance(p, q) == pytest.approx(0.039878, abs=1e-4)
    # disjoint point masses
    a = np.zeros(4096)
    a[10] = 1.0
    b = np.zeros(4096)
    b[20] = 1.0
    assert tv_distance(GridDistribution(sup, a), GridDistribution(sup, b)) == 1.0


def test_tv_rejects_support_mismatch():
    p = discretize_gaussian(0.0, 1.0, lattice(-8, 8, 4096))
    q = discretize_gaussian(0.0, 1.0, lattice(-9, 9, 4096))
    with pytest.raises(PoeError):
        tv_distance(p, q)


def test_empirical_em_step_matches_first_order_kernel():
    # one guided reverse step from a fixed state, compared on a 512-point lattice
    sched = VpSchedule()
    s, h, y_s = 0.5, 0.002, 0.6
    b = beta(sched, s)
    g_val = math.sqrt(b)
    score_val = -0.8          # fixed score value at y_s
    k_curv, center = 0.5, 0.0  # low curvature: k * Sigma << 1
    grad = k_curv * (y_s - center)
    mu = y_s - (-0.5 * b * y_s - b * score_val) * h
    var = b * h

    rng = np.random.Generator(np.random.Philox(key=404))
    z = rng.standard_normal(1_000_000)
    draws = em_step(np.full(z.shape, y_s), np.full(z.shape, -0.5 * b * y_s),
                    g_val, h, np.full(z.shape, score_val),
                    np.full(z.shape, grad), z)

    mean_k, var_k = approx_kernel(mu, var, lambda y: 0.5 * k_curv * (np.asarray(y) - center) ** 2)
    sup = gaussian_support(mean_k, var_k, num_points=512)
    hist = empirical_distribution(draws, sup)
    first_order = discretize_gaussian(mean_k, var_k, sup)
    assert tv_distance(hist, first_order) < 0.02

    exact = exact_product(mu, var, lambda y: 0.5 * k_curv * (np.asarray(y) - center) ** 2, sup)
    assert tv_distance(hist, exact) < 0.03
