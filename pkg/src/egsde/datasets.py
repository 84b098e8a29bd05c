"""Toy multi-domain datasets for translation experiments.

Domains share their structure distribution and differ only in style:

* points2d: each domain is a Gaussian mixture whose components sit on arcs
  of the same radii with the same within-arc offsets; only the arc's base
  angle is domain-specific. The radius marginal is identical across domains
  by construction, which is the invariant the faithful expert should
  preserve. Being exact mixtures, the perturbed score has a closed form.
* shapes8 / shapes16: single-channel images of a disk at a shared random
  position; the stripe texture painted inside the disk (orientation) is the
  domain-specific style. Image rows live in [-1, 1] so the diffusion noise
  scale matches the data scale.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .scores import GaussianMixture, MixtureComponent

KINDS = ("points2d", "shapes8", "shapes16")

# wide radial band: the shared factor carries real variance, so anchoring it
# is worth something; arcs lean toward +angle so each domain's bulk sits away
# from its predecessor
POINT_RADII = (1.8, 3.0, 4.2)
POINT_ARC_OFFSETS = (-0.3, -0.1, 0.1, 0.3, 0.5, 0.7)
POINT_COMPONENT_VAR = 0.04
POINT_BASE_ANGLE = np.pi / 2
# adjacent arcs, not opposite ones: translation keeps a one-sided bias that
# the guidance energy has room to remove
POINT_DOMAIN_GAP = np.pi / 2


@dataclass(frozen=True)
class ToyDomainSpec:
    kind: str = "points2d"
    num_domains: int = 2
    samples_per_domain: int = 400
    test_samples_per_domain: int = 200
    seed: int = 0
    angle_gap: float = POINT_DOMAIN_GAP

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}; choose from {KINDS}")
        if self.num_domains not in (2, 3):
            raise ValueError(f"num_domains must be 2 or 3, got {self.num_domains}")
        if self.samples_per_domain < 1 or self.test_samples_per_domain < 1:
            raise ValueError("sample counts must be positive")
        if not (0.0 < self.angle_gap <= 2.0 * np.pi / self.num_domains):
            raise ValueError(f"angle_gap must be in (0, 2*pi/num_domains], got {self.angle_gap}")


@dataclass
class ToyData:
    spec: ToyDomainSpec
    layout: tuple                        # (C, H, W) for images, None for points
    domains: list                        # training rows per domain
    test_domains: list                   # held-out rows per domain
    mixtures: list = None                # exact per-domain mixtures (points2d)
    structure: list = field(default_factory=list)  # shared factor per domain

    @property
    def dim(self):
        return self.domains[0].shape[1]


def domain_mixture(domain, num_domains, angle_gap=POINT_DOMAIN_GAP):
    """The exact generating mixture of one points2d domain: an arc patch with
    the same radii in every domain and a domain-specific base angle."""
    base = POINT_BASE_ANGLE + domain * angle_gap
    comps = []
    w = 1.0 / (len(POINT_RADII) * len(POINT_ARC_OFFSETS))
    for off in POINT_ARC_OFFSETS:
        for r in POINT_RADII:
            angle = base + off
            mean = np.array([r * np.cos(angle), r * np.sin(angle)])
            comps.append(MixtureComponent(w, mean, np.full(2, POINT_COMPONENT_VAR)))
    return GaussianMixture(tuple(comps))


def _points_domain(spec, domain, n, stream):
    mix = domain_mixture(domain, spec.num_domains, spec.angle_gap)
    return mix.sample(n, stream), mix


def _shape_image(side, cx, cy, orientation):
    yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    radius = side / 4.0
    disk = ((yy - cy) ** 2 + (xx - cx) ** 2) <= radius * radius
    img = np.full((side, side), -1.0)
    img[disk] = 0.5
    if orientation == 0:
        coord = yy
    elif orientation == 1:
        coord = xx
    else:
        coord = yy + xx
    # fixed-phase stripes: orientation stays detectable by a dense network
    stripes = 0.5 * np.sign(np.sin(np.pi * (coord + 0.5) / 2.0))
    img = img + np.where(disk, stripes, 0.0)
    return np.clip(img, -1.0, 1.0)


def _shapes_domain(spec, side, domain, n, stream):
    # disk centers on a small shared lattice: a compact geometry family the
    # fixed-width networks can actually learn from a few hundred samples
    margin = side // 4 + 1
    positions = np.linspace(margin, side - margin, 3)
    grid_idx = rng.integers(stream, 2 * n, 0, 3).reshape(n, 2)
    centers = positions[grid_idx]
    imgs = np.stack([
        _shape_image(side, cx, cy, domain).reshape(-1)
        for cy, cx in centers
    ])
    return imgs, centers


def make_toy_domains(spec):
    """Deterministic labeled datasets; identical (spec, seed) yields identical data."""
    train, test, mixtures, structure = [], [], [], []
    for d in range(spec.num_domains):
        tr_stream = rng.RandomStream(spec.seed, stream_id=100 + d)
        te_stream = rng.RandomStream(spec.seed, stream_id=200 + d)
        if spec.kind == "points2d":
            rows, mix = _points_domain(spec, d, spec.samples_per_domain, tr_stream)
            test_rows, _ = _points_domain(spec, d, spec.test_samples_per_domain, te_stream)
            train.append(rows)
            test.append(test_rows)
            mixtures.append(mix)
            structure.append(np.linalg.norm(rows, axis=1))
        else:
            side = 8 if spec.kind == "shapes8" else 16
            rows, centers = _shapes_domain(spec, side, d, spec.samples_per_domain, tr_stream)
            test_rows, _ = _shapes_domain(spec, side, d, spec.test_samples_per_domain, te_stream)
            train.append(rows)
            test.append(test_rows)
            structure.append(centers)
    layout = None if spec.kind == "points2d" else (1, 8, 8) if spec.kind == "shapes8" else (1, 16, 16)
    return ToyData(spec, layout, train, test,
                   mixtures=mixtures or None, structure=structure)
