"""Variance-preserving diffusion: noise schedule, perturbation kernels and
the two reverse-time step rules.

The schedule is linear in time, beta(t) = beta_min + t*(beta_max - beta_min),
so the integral needed by the perturbation kernel has a closed form:

    int_0^t beta = beta_min*t + 0.5*(beta_max - beta_min)*t^2
    alpha_t = exp(-0.5 * int_0^t beta)        (mean coefficient)
    sigma_t = sqrt(1 - exp(-int_0^t beta))    (std), with alpha^2 + sigma^2 = 1

Reverse-time updates move from time s to t = s - h:

  * Euler-Maruyama:
      y_t = y_s - [f(y_s,s) - g(s)^2 (score - energy_grad)] h + g(s) sqrt(h) z
    with drift f(y,s) = -0.5 beta(s) y and diffusion g(s) = sqrt(beta(s)).
  * Ancestral (requires beta(s) h < 1):
      y_t = (y_s + beta(s) h (score - energy_grad)) / sqrt(1 - beta(s) h)
            + sqrt(beta(s) h) z
    The two rules agree to O(h^2) per step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import GridError, check_finite


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class VpSchedule:
    beta_min: float = 0.1
    beta_max: float = 20.0
    T: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.beta_min < self.beta_max):
            raise ScheduleError(
                f"need 0 < beta_min < beta_max, got {self.beta_min}, {self.beta_max}"
            )
        if self.T <= 0.0:
            raise ScheduleError(f"horizon must be positive, got {self.T}")


@dataclass(frozen=True)
class PerturbationKernel:
    """Closed-form marginal of the forward diffusion at time t."""

    t: float
    mean_coef: float  # alpha_t
    std: float        # sigma_t


def _check_time(schedule, t):
    if not (0.0 <= t <= schedule.T + 1e-12):
        raise ScheduleError(f"time {t} outside [0, {schedule.T}]")


def beta(schedule, t):
    _check_time(schedule, t)
    return schedule.beta_min + t * (schedule.beta_max - schedule.beta_min)


def beta_integral(schedule, t):
    _check_time(schedule, t)
    return schedule.beta_min * t + 0.5 * (schedule.beta_max - schedule.beta_min) * t * t


def perturbation_kernel(schedule, t):
    integral = beta_integral(schedule, t)
    alpha = math.exp(-0.5 * integral)
    sigma = math.sqrt(max(0.0, 1.0 - math.exp(-integral)))
    return PerturbationKernel(t=t, mean_coef=alpha, std=sigma)


def kernel_coeffs(schedule, t):
    """Vectorized (alpha_t, sigma_t) for an array of times."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > schedule.T + 1e-12):
        raise ScheduleError("times outside schedule horizon")
    integral = schedule.beta_min * t + 0.5 * (schedule.beta_max - schedule.beta_min) * t * t
    alpha = np.exp(-0.5 * integral)
    sigma = np.sqrt(np.maximum(0.0, 1.0 - np.exp(-integral)))
    return alpha, sigma


def perturb(x0, kernel, noise):
    """Sample the forward marginal: alpha_t * x0 + sigma_t * noise."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape != noise.shape:
        raise GridError(f"perturb shape mismatch {x0.shape} vs {noise.shape}")
    return kernel.mean_coef * x0 + kernel.std * noise


def em_step(y_s, drift_val, g_val, h, score_val, energy_grad, noise):
    """Euler-Maruyama reverse step with explicit drift/diffusion values."""
    if h <= 0.0:
        raise ValueError(f"step size must be positive, got {h}")
    for name, arr in (("state", y_s), ("drift", drift_val),
                      ("score", score_val), ("energy_grad", energy_grad)):
        check_finite(np.asarray(arr), f"in em_step {name}")
    return (
        y_s
        - (drift_val - (g_val * g_val) * (score_val - energy_grad)) * h
        + g_val * math.sqrt(h) * noise
    )


def vp_em_step(schedule, y_s, s, h, score_val, energy_grad, noise):
    b = beta(schedule, s)
    return em_step(y_s, -0.5 * b * y_s, math.sqrt(b), h, score_val, energy_grad, noise)


def vp_ancestral_step(schedule, y_s, s, h, score_val, energy_grad, noise):
    b = beta(schedule, s)
    bh = b * h
    if bh >= 1.0:
        raise ScheduleError(
            f"beta(s)*h = {bh:.6g} >= 1 at s={s}: the ancestral prefactor is undefined; "
            "use more steps or a smaller horizon"
        )
    for name, arr in (("state", y_s), ("score", score_val), ("energy_grad", energy_grad)):
        check_finite(np.asarray(arr), f"in vp_ancestral_step {name}")
    return (y_s + bh * (score_val - energy_grad)) / math.sqrt(1.0 - bh) + math.sqrt(bh) * noise


def eps_to_score(eps_val, kernel):
    """Convert a noise prediction into a score: score = -eps / sigma_t."""
    if kernel.std <= 0.0:
        raise ScheduleError(f"sigma_t = 0 at t={kernel.t}: score undefined")
    return -np.asarray(eps_val, dtype=np.float64) / kernel.std


def score_to_eps(score_val, kernel):
    if kernel.std <= 0.0:
        raise ScheduleError(f"sigma_t = 0 at t={kernel.t}: conversion undefined")
    return -np.asarray(score_val, dtype=np.float64) * kernel.std
