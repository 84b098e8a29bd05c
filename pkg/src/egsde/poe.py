"""Brute-force verification that one guided reverse step samples a product
of experts.

The unguided step is a Gaussian transition N(mu, var). Multiplying it by an
energy expert exp(-E(y)) and renormalizing gives the target kernel; a
first-order expansion of E around mu turns that product into the shifted
Gaussian N(mu - var * E'(mu), var), which is exactly what the guided update
realizes. On a dense 1-D lattice all three objects (exact product, shifted
Gaussian, empirical step histogram) can be compared in total variation:
exact agreement for linear energies, first-order agreement when the
curvature of E is small against 1/var.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import as_grid


class PoeError(ValueError):
    pass


MIN_POINTS = 512


@dataclass(frozen=True)
class GridDistribution:
    """Normalized probability table on a uniform 1-D lattice."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        support = as_grid(self.support, "support")
        probs = as_grid(self.probs, "probs")
        if support.ndim != 1 or support.shape != probs.shape:
            raise PoeError("support and probs must be matching 1-D arrays")
        if support.size < MIN_POINTS:
            raise PoeError(f"lattice needs >= {MIN_POINTS} points, got {support.size}")
        if np.any(np.diff(support) <= 0.0):
            raise PoeError("support must be strictly increasing")
        if np.any(probs < 0.0):
            raise PoeError("probabilities must be nonnegative")
        if abs(float(np.sum(probs)) - 1.0) > 1e-10:
            raise PoeError(f"probabilities sum to {np.sum(probs)}, not 1")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)


def lattice(lo, hi, num_points=4096):
    if hi <= lo:
        raise PoeError(f"empty interval [{lo}, {hi}]")
    return np.linspace(lo, hi, int(num_points))


def gaussian_support(mu, var, span=8.0, num_points=4096, also_cover=()):
    """Uniform lattice covering mu +- span*sigma and any extra points."""
    sigma = np.sqrt(var)
    lo = min([mu - span * sigma, *[p - span * sigma for p in also_cover]])
    hi = max([mu + span * sigma, *[p + span * sigma for p in also_cover]])
    return lattice(lo, hi, num_points)


def _require_coverage(mu, var, support):
    sigma = np.sqrt(var)
    if support[0] > mu - 6.0 * sigma or support[-1] < mu + 6.0 * sigma:
        raise PoeError(
            f"support [{support[0]:.4g}, {support[-1]:.4g}] covers less than 6 sigma "
            f"around mu={mu:.4g} (sigma={sigma:.4g})"
        )


def discretize_gaussian(mu, var, support):
    """Pointwise-normalized N(mu, var) on the lattice."""
    if var <= 0.0:
        raise PoeError(f"variance must be positive, got {var}")
    support = as_grid(support, "support")
    _require_coverage(mu, var, support)
    logp = -0.5 * (support - mu) ** 2 / var
    w = np.exp(logp - np.max(logp))
    return GridDistribution(support, w / np.sum(w))


def exact_product(mu, var, energy_fn, support):
    """Renormalized N(mu, var)(y) * exp(-E(y)) on the lattice."""
    if var <= 0.0:
        raise PoeError(f"variance must be positive, got {var}")
    support = as_grid(support, "support")
    _require_coverage(mu, var, support)
    e = np.asarray(energy_fn(support), dtype=np.float64)
    if e.shape != support.shape:
        raise PoeError("energy_fn must evaluate elementwise on the lattice")
    logw = -0.5 * (support - mu) ** 2 / var - e
    finite = np.isfinite(logw)
    if not np.any(finite):
        raise PoeError("energy overflow: the product vanishes on the whole lattice")
    m = np.max(logw[finite])
    w = np.where(finite, np.exp(logw - m), 0.0)
    z = float(np.sum(w))
    if z <= 0.0 or not np.isfinite(z):
        raise PoeError("energy overflow: the product vanishes on the whole lattice")
    return GridDistribution(support, w / z)


def approx_kernel(mu, var, energy_fn, energy_grad_fn=None, fd_step=1e-6):
    """First-order product kernel: mean mu - var * E'(mu), variance var.

    The gradient defaults to a central finite difference, which is exact for
    linear and quadratic energies.
    """
    if var <= 0.0:
        raise PoeError(f"variance must be positive, got {var}")
    if energy_grad_fn is not None:
        grad = float(energy_grad_fn(mu))
    else:
        grad = float(energy_fn(mu + fd_step) - energy_fn(mu - fd_step)) / (2.0 * fd_step)
    return mu - var * grad, var


def tv_distance(p, q):
    """Total variation on a shared lattice: 0.5 * sum |p - q|."""
    if p.support.shape != q.support.shape or not np.array_equal(p.support, q.support):
        raise PoeError("distributions live on different supports")
    return 0.5 * float(np.sum(np.abs(p.probs - q.probs)))


def empirical_distribution(samples, support):
    """Histogram of samples binned to the nearest lattice point."""
    support = as_grid(support, "support")
    if support.size < MIN_POINTS:
        raise PoeError(f"lattice needs >= {MIN_POINTS} points, got {support.size}")
    samples = np.asarray(samples, dtype=np.float64)
    edges = 0.5 * (support[1:] + support[:-1])
    idx = np.searchsorted(edges, samples)
    counts = np.bincount(idx, minlength=support.size).astype(np.float64)
    return GridDistribution(support, counts / counts.sum())


def product_check_cell(curvature, var, mu=0.3, center=0.0, num_points=4096):
    """One verification cell: quadratic energy 0.5*k*(y-c)^2 at the given
    transition variance. Returns the TV distance between the exact lattice
    product and the discretized first-order Gaussian.
    """
    energy_fn = lambda y: 0.5 * curvature * (np.asarray(y) - center) ** 2
    grad_fn = lambda y: curvature * (y - center)
    mean_a, var_a = approx_kernel(mu, var, energy_fn, grad_fn)
    support = gaussian_support(mu, var, num_points=num_points,
                               also_cover=(center, mean_a))
    exact = exact_product(mu, var, energy_fn, support)
    approx = discretize_gaussian(mean_a, var_a, support)
    return tv_distance(exact, approx)
