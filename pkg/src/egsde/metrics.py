"""Faithfulness metrics (L2, PSNR, SSIM) and the Fréchet realism proxy.

Conventions, applied uniformly so that trends are comparable across runs:

* l2 is the root-mean-square difference; image pipelines feed it 0-255
  scaled values, point pipelines feed raw coordinates.
* psnr uses a fixed peak of 255 and is capped at 100 dB for exact matches.
* ssim is single-scale with uniform square windows (8x8 by default),
  population moments, and C1=(0.01 L)^2, C2=(0.03 L)^2 on the configured
  dynamic range L.
* the realism proxy is the Fréchet distance between Gaussian moment fits of
  two feature sets (penultimate classifier features at t=0, or raw
  coordinates for point data).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .autodiff import as_grid


class MetricError(ValueError):
    pass


PSNR_CAP_DB = 100.0
PSNR_PEAK = 255.0


def l2(x, y):
    """Root-mean-square difference."""
    x = as_grid(x, "x")
    y = as_grid(y, "y")
    if x.shape != y.shape:
        raise MetricError(f"shape mismatch {x.shape} vs {y.shape}")
    d = x - y
    return float(np.sqrt(np.mean(d * d)))


def psnr(x, y, peak=PSNR_PEAK):
    rmse = l2(x, y)
    if rmse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 20.0 * math.log10(peak / rmse))


def _window_moments(img, window):
    from numpy.lib.stride_tricks import sliding_window_view

    win = sliding_window_view(img, (window, window))
    flat = win.reshape(win.shape[0], win.shape[1], -1)
    mu = flat.mean(axis=-1)
    var = flat.var(axis=-1)
    return flat, mu, var


def ssim(x, y, data_range=1.0, window=8):
    """Mean single-scale SSIM over all sliding windows (and channels)."""
    x = as_grid(x, "x")
    y = as_grid(y, "y")
    if x.shape != y.shape:
        raise MetricError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.ndim == 3:
        return float(np.mean([ssim(xc, yc, data_range, window)
                              for xc, yc in zip(x, y)]))
    if x.ndim != 2:
        raise MetricError(f"ssim expects spatial data, got shape {x.shape}")
    if window > min(x.shape):
        raise MetricError(f"window {window} larger than image {x.shape}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    fx, mx, vx = _window_moments(x, window)
    fy, my, vy = _window_moments(y, window)
    cov = (fx * fy).mean(axis=-1) - mx * my
    num = (2.0 * mx * my + c1) * (2.0 * cov + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def frechet_from_moments(mu_a, cov_a, mu_b, cov_b, imag_tol=1e-6):
    """||mu_a - mu_b||^2 + Tr(Ca + Cb - 2 (Ca Cb)^{1/2})."""
    mu_a = np.atleast_1d(as_grid(mu_a, "mu_a"))
    mu_b = np.atleast_1d(as_grid(mu_b, "mu_b"))
    cov_a = np.atleast_2d(as_grid(cov_a, "cov_a"))
    cov_b = np.atleast_2d(as_grid(cov_b, "cov_b"))
    diff = mu_a - mu_b
    prod = cov_a @ cov_b
    root, _ = scipy.linalg.sqrtm(prod, disp=False)
    if np.iscomplexobj(root):
        imag = np.max(np.abs(root.imag))
        scale = max(1.0, np.max(np.abs(root.real)))
        if imag / scale > imag_tol:
            raise MetricError(
                f"covariance product is not PSD within tolerance (imag {imag:.3g})"
            )
        root = root.real
    if not np.all(np.isfinite(root)):
        raise MetricError("matrix square root failed; covariances are degenerate")
    val = float(diff @ diff + np.trace(cov_a + cov_b - 2.0 * root))
    # tiny negative values are discretization noise around zero
    if val < -1e-6:
        raise MetricError(f"negative Fréchet value {val}; moments are inconsistent")
    return max(0.0, val)


def frechet_distance(set_a, set_b):
    """Fréchet distance between Gaussian fits of two feature sets (rows)."""
    a = np.atleast_2d(as_grid(set_a, "set_a"))
    b = np.atleast_2d(as_grid(set_b, "set_b"))
    if a.shape[1] != b.shape[1]:
        raise MetricError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    for name, s in (("set_a", a), ("set_b", b)):
        if s.shape[0] < s.shape[1] + 1:
            raise MetricError(f"{name} needs at least dim+1 samples, got {s.shape[0]}")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False).reshape(a.shape[1], a.shape[1])
    cov_b = np.cov(b, rowvar=False).reshape(b.shape[1], b.shape[1])
    return frechet_from_moments(mu_a, cov_a, mu_b, cov_b)


# --- report container -----------------------------------------------------------


@dataclass
class MetricRow:
    seed: int
    sample_id: int
    l2: float
    psnr: float = None
    ssim: float = None


@dataclass
class MetricReport:
    """Per-sample rows plus per-seed Fréchet values; aggregates derive from rows."""

    rows: list = field(default_factory=list)
    frechet: dict = field(default_factory=dict)   # seed -> scalar

    def seeds(self):
        return sorted({r.seed for r in self.rows})

    def per_seed_mean(self, attr):
        out = {}
        for seed in self.seeds():
            vals = [getattr(r, attr) for r in self.rows
                    if r.seed == seed and getattr(r, attr) is not None]
            out[seed] = float(np.mean(vals)) if vals else None
        return out

    def aggregate(self):
        """Mean and std across repeat seeds of the per-seed batch means."""
        summary = {}
        for attr in ("l2", "psnr", "ssim"):
            per_seed = [v for v in self.per_seed_mean(attr).values() if v is not None]
            if per_seed:
                summary[f"{attr}_mean"] = float(np.mean(per_seed))
                summary[f"{attr}_std"] = float(np.std(per_seed))
        if self.frechet:
            vals = [self.frechet[s] for s in sorted(self.frechet)]
            summary["frechet_mean"] = float(np.mean(vals))
            summary["frechet_std"] = float(np.std(vals))
        return summary
