"""Translation samplers: energy-guided reverse diffusion and the two
unguided baselines.

All samplers share the same skeleton: start from a perturbed version of the
source (or from the prior), then walk the reverse-time SDE through N uniform
steps, optionally steering each step with the energy gradient. Per
trajectory there are two independent random streams, one for the sampler
noise and one for the energy's Monte Carlo draws, so switching guidance on
or off never shifts the sampler noise sequence: the guided sampler with all
weights zero reproduces the unguided baseline bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import energy as energy_mod
from . import sde
from .autodiff import GridError, as_grid
from .energy import (CLASSIFIER_GUIDANCE, COSINE, DOMAIN_INDEPENDENT,
                     DOMAIN_SPECIFIC, NEG_SQ_L2, EnergySpec, ExpertTerm)
from .extractors import LowPassFilter, low_pass
from .rng import RandomStream, gaussian_rows

EGSDE_EM = "egsde_em"
EGSDE_VP = "egsde_vp"
SDEDIT = "sdedit"
ILVR = "ilvr"

SAMPLERS = (EGSDE_EM, EGSDE_VP, SDEDIT, ILVR)


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class TranslationConfig:
    lambda_s: float = 500.0
    lambda_i: float = 2.0
    m_frac: float = 0.5
    steps: int = 500
    k_repeats: int = 1
    seed: int = 0
    sampler: str = EGSDE_EM
    filter_factor: int = 1
    range_t: int = 20
    mc_samples: int = 1
    noise_free: bool = False
    sim_s: str = COSINE
    sim_i: str = NEG_SQ_L2
    guidance_class: int = None
    guidance_lambda: float = 0.0
    record_every: int = 10

    def __post_init__(self):
        if not (0.0 < self.m_frac <= 1.0):
            raise ValueError(f"m_frac must be in (0, 1], got {self.m_frac}")
        if self.steps < 1 or self.k_repeats < 1:
            raise ValueError("steps and k_repeats must be >= 1")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}; choose from {SAMPLERS}")


@dataclass
class Models:
    """Everything a sampler evaluates: schedule, score field and extractors."""

    schedule: sde.VpSchedule
    score: object                      # callable (y, s) -> score array
    classifier: object = None          # DomainClassifier, when guidance needs it
    layout: tuple = None               # (C, H, W) for image rows, None for points


def build_energy_spec(config, models):
    """Assemble the expert terms a config asks for; zero weights drop out."""
    terms = []
    if config.lambda_s > 0.0:
        if models.classifier is None:
            raise SamplerError("lambda_s > 0 requires a domain classifier")
        terms.append(ExpertTerm(DOMAIN_SPECIFIC, config.lambda_s,
                                models.classifier, config.sim_s))
    if config.lambda_i > 0.0:
        filt = LowPassFilter(config.filter_factor if models.layout else 1, models.layout)
        terms.append(ExpertTerm(DOMAIN_INDEPENDENT, config.lambda_i,
                                filt, config.sim_i))
    if config.guidance_lambda > 0.0:
        if models.classifier is None:
            raise SamplerError("classifier guidance requires a domain classifier")
        terms.append(ExpertTerm(CLASSIFIER_GUIDANCE, config.guidance_lambda,
                                models.classifier, target_class=config.guidance_class))
    return EnergySpec(terms, config.mc_samples, config.noise_free)


@dataclass
class Trajectory:
    """Per-step summaries for a batch of trajectories plus retained states."""

    times: list = field(default_factory=list)        # s per step
    energies: list = field(default_factory=list)     # (B,) per step
    grad_norms: list = field(default_factory=list)   # (B,) per step
    draw_ids: list = field(default_factory=list)     # energy-stream call index
    states: list = field(default_factory=list)       # (step_count_so_far, y copy)

    def as_arrays(self):
        return (np.asarray(self.times), np.stack(self.energies),
                np.stack(self.grad_norms), np.asarray(self.draw_ids))


@dataclass
class TranslationResult:
    y: np.ndarray
    trajectory: Trajectory


def _streams(seed, batch):
    z = [RandomStream(seed, 2 * j) for j in range(batch)]
    e = [RandomStream(seed, 2 * j + 1) for j in range(batch)]
    return z, e


def _promote(x0):
    x = as_grid(x0, "source")
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise GridError(f"sources must be rows, got shape {x.shape}")
    return x, False


def _check_state(y, i, s):
    if not np.all(np.isfinite(y)):
        bad = int(np.sum(~np.isfinite(y)))
        raise SamplerError(
            f"non-finite state at step i={i}, s={s:.6g} ({bad} bad entries); "
            "the guidance weights or step size are too aggressive"
        )


def _guided_rounds(x0_rows, config, models, spec, use_ancestral):
    """Algorithm: K rounds of perturb-to-M then N guided reverse steps.

    Every round re-perturbs the previous round's output, but the energy keeps
    conditioning on the original source.
    """
    batch, dim = x0_rows.shape
    z_streams, e_streams = _streams(config.seed, batch)
    sched = models.schedule
    m_time = config.m_frac * sched.T
    h = m_time / config.steps
    kern_m = sde.perturbation_kernel(sched, m_time)

    traj = Trajectory()
    record = max(1, config.record_every)
    y0 = x0_rows
    step_count = 0
    for _ in range(config.k_repeats):
        y = sde.perturb(y0, kern_m, gaussian_rows(z_streams, (dim,)))
        if step_count == 0:
            traj.states.append((0, y.copy()))
        for i in range(config.steps, 0, -1):
            s = i * h
            draw_id = e_streams[0].counter
            e_vals, grads = energy_mod.batch_energy_and_gradient(
                y, x0_rows, s, spec, sched, e_streams
            )
            score_val = models.score(y, s)
            noise = gaussian_rows(z_streams, (dim,)) if i > 1 else np.zeros_like(y)
            try:
                if use_ancestral:
                    y = sde.vp_ancestral_step(sched, y, s, h, score_val, grads, noise)
                else:
                    y = sde.vp_em_step(sched, y, s, h, score_val, grads, noise)
            except GridError as exc:
                raise SamplerError(f"at step i={i}, s={s:.6g}: {exc}") from exc
            _check_state(y, i, s)
            step_count += 1
            traj.times.append(s)
            traj.energies.append(e_vals)
            traj.grad_norms.append(np.linalg.norm(grads, axis=1))
            traj.draw_ids.append(draw_id)
            if step_count % record == 0:
                traj.states.append((step_count, y.copy()))
        y0 = y
    if not traj.states or traj.states[-1][0] != step_count:
        traj.states.append((step_count, y0.copy()))
    return y0, traj


def egsde_translate(x0, config, models):
    """Energy-guided translation, one round (ignores k_repeats)."""
    return egsde_repeat(x0, replace(config, k_repeats=1), models)


def egsde_repeat(x0, config, models):
    """K rounds of guided translation; round k restarts from round k-1's output."""
    rows, single = _promote(x0)
    spec = build_energy_spec(config, models)
    use_ancestral = config.sampler == EGSDE_VP
    y, traj = _guided_rounds(rows, config, models, spec, use_ancestral)
    return TranslationResult(y[0] if single else y, traj)


def sdedit_translate(x0, config, models):
    """Unguided baseline: perturb to M, then plain reverse diffusion."""
    rows, single = _promote(x0)
    spec = EnergySpec(())
    use_ancestral = config.sampler == EGSDE_VP
    y, traj = _guided_rounds(rows, config, models, spec, use_ancestral)
    return TranslationResult(y[0] if single else y, traj)


def ilvr_translate(x0, config, models):
    """Low-pass refinement baseline: start from the prior; after every
    reverse step with index i > range_t, swap in the low-frequency content of
    the freshly perturbed source:  y <- (y - lp(y)) + lp(x_t).
    """
    rows, single = _promote(x0)
    batch, dim = rows.shape
    filt = LowPassFilter(config.filter_factor if models.layout else 1, models.layout)
    z_streams, e_streams = _streams(config.seed, batch)
    sched = models.schedule
    h = sched.T / config.steps

    traj = Trajectory()
    record = max(1, config.record_every)
    y = gaussian_rows(z_streams, (dim,))
    traj.states.append((0, y.copy()))
    zero = np.zeros_like(rows)
    for i in range(config.steps, 0, -1):
        s = i * h
        t_next = (i - 1) * h
        score_val = models.score(y, s)
        noise = gaussian_rows(z_streams, (dim,)) if i > 1 else np.zeros_like(y)
        try:
            y = sde.vp_em_step(sched, y, s, h, score_val, zero, noise)
        except GridError as exc:
            raise SamplerError(f"at step i={i}, s={s:.6g}: {exc}") from exc
        if i > config.range_t:
            kern = sde.perturbation_kernel(sched, t_next)
            x_t = sde.perturb(rows, kern, gaussian_rows(e_streams, (dim,)))
            y = (y - low_pass(y, filt)) + low_pass(x_t, filt)
        _check_state(y, i, s)
        step = config.steps - i + 1
        traj.times.append(s)
        traj.energies.append(np.zeros(batch))
        traj.grad_norms.append(np.zeros(batch))
        traj.draw_ids.append(e_streams[0].counter)
        if step % record == 0:
            traj.states.append((step, y.copy()))
    if traj.states[-1][0] != config.steps:
        traj.states.append((config.steps, y.copy()))
    return TranslationResult(y[0] if single else y, traj)


def translate(x0, config, models):
    """Dispatch on config.sampler."""
    if config.sampler == SDEDIT:
        return sdedit_translate(x0, config, models)
    if config.sampler == ILVR:
        return ilvr_translate(x0, config, models)
    return egsde_repeat(x0, config, models)
