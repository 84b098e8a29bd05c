import numpy as np
import pytest
from scipy import stats

from egsde.datasets import ToyDomainSpec, domain_mixture, make_toy_domains
from egsde.scores import gmm_score
from egsde.sde import PerturbationKernel


def test_same_spec_same_data():
    spec = ToyDomainSpec(kind="points2d", samples_per_domain=50, seed=4)
    a = make_toy_domains(spec)
    b = make_toy_domains(spec)
    for da, db in zip(a.domains, b.domains):
        assert np.array_equal(da, db)
    for da, db in zip(a.test_domains, b.test_domains):
        assert np.array_equal(da, db)


def test_different_seed_different_data():
    a = make_toy_domains(ToyDomainSpec(samples_per_domain=50, seed=1))
    b = make_toy_domains(ToyDomainSpec(samples_per_domain=50, seed=2))
    assert not np.array_equal(a.domains[0], b.domains[0])


def test_spec_validation():
    with pytest.raises(ValueError):
        ToyDomainSpec(kind="cubes")
    with pytest.raises(ValueError):
        ToyDomainSpec(num_domains=5)
    with pytest.raises(ValueError):
        ToyDomainSpec(samples_per_domain=0)


def test_point_domains_share_radius_distribution():
    spec = ToyDomainSpec(kind="points2d", num_domains=2,
                         samples_per_domain=10_000, test_samples_per_domain=10,
                         seed=0)
    data = make_toy_domains(spec)
    r0 = np.linalg.norm(data.domains[0], axis=1)
    r1 = np.linalg.norm(data.domains[1], axis=1)
    stat = stats.ks_2samp(r0, r1).statistic
    critical_1pct = 1.628 * np.sqrt(2.0 / 10_000)
    assert stat < critical_1pct


def test_point_domains_differ_in_angle():
    data = make_toy_domains(ToyDomainSpec(samples_per_domain=500, seed=0))
    mean0 = data.domains[0].mean(axis=0)
    mean1 = data.domains[1].mean(axis=0)
    assert np.linalg.norm(mean0 - mean1) > 1.0


def test_three_domains_requested_sizes():
    spec = ToyDomainSpec(kind="points2d", num_domains=3, samples_per_domain=120,
                         test_samples_per_domain=30, seed=5)
    data = make_toy_domains(spec)
    assert len(data.domains) == 3
    assert all(d.shape == (120, 2) for d in data.domains)
    assert all(d.shape == (30, 2) for d in data.test_domains)
    assert len(data.mixtures) == 3


def test_samples_actually_follow_the_declared_mixture():
    # high-density check: the declared mixture must score its own samples well
    spec = ToyDomainSpec(kind="points2d", samples_per_domain=2000, seed=7)
    data = make_toy_domains(spec)
    mix = data.mixtures[0]
    sample_mean = data.domains[0].mean(axis=0)
    mix_mean = sum(c.weight * c.mean for c in mix.components)
    assert np.linalg.norm(sample_mean - mix_mean) < 0.05
    # sample covariance against the mixture's closed-form second moment
    second = sum(c.weight * (np.diag(c.var) + np.outer(c.mean, c.mean))
                 for c in mix.components)
    want_cov = second - np.outer(mix_mean, mix_mean)
    got_cov = np.cov(data.domains[0], rowvar=False)
    assert np.max(np.abs(got_cov - want_cov)) < 0.05
    k = PerturbationKernel(t=0.0, mean_coef=1.0, std=0.0)
    assert np.isfinite(gmm_score(mix, sample_mean, k)).all()


def test_domain_mixtures_share_radii():
    m0 = domain_mixture(0, 2)
    m1 = domain_mixture(1, 2)
    r0 = sorted(np.linalg.norm(c.mean) for c in m0.components)
    r1 = sorted(np.linalg.norm(c.mean) for c in m1.components)
    assert r0 == pytest.approx(r1, rel=1e-12)


def test_shapes_layout_and_range():
    for kind, side in (("shapes8", 8), ("shapes16", 16)):
        spec = ToyDomainSpec(kind=kind, samples_per_domain=20,
                             test_samples_per_domain=5, seed=1)
        data = make_toy_domains(spec)
        assert data.layout == (1, side, side)
        assert data.domains[0].shape == (20, side * side)
        assert data.domains[0].min() >= -1.0 and data.domains[0].max() <= 1.0
        assert data.mixtures is None


def test_shapes_domains_share_geometry_but_not_texture():
    spec = ToyDomainSpec(kind="shapes8", num_domains=2, samples_per_domain=3000,
                         test_samples_per_domain=5, seed=2)
    data = make_toy_domains(spec)
    # same lattice of disk centers on both domains
    centers0 = {tuple(c) for c in data.structure[0]}
    centers1 = {tuple(c) for c in data.structure[1]}
    assert centers0 == centers1
    # but the stripe orientation differs: per-pixel means differ inside disks
    assert not np.allclose(data.domains[0].mean(axis=0),
                           data.domains[1].mean(axis=0), atol=0.02)
