import numpy as np
import pytest

from egsde.datasets import ToyDomainSpec, make_toy_domains
from egsde.energy import (COSINE, DOMAIN_INDEPENDENT, DOMAIN_SPECIFIC,
                          NEG_SQ_L2, EnergyError, EnergySpec, ExpertTerm,
                          batch_energy_and_gradient, energy_gradient,
                          energy_value, i_similarity, s_similarity)
from egsde.extractors import (ClassifierHyper, DomainClassifier, LowPassFilter,
                              train_domain_classifier)
from egsde.rng import RandomStream, gaussian
from egsde.sde import VpSchedule, perturbation_kernel, perturb

SCHED = VpSchedule()
IDENTITY = LowPassFilter(1)


def tiny_identity_classifier(scale=1e-3):
    """Trunk that maps x to ~scale*x (tanh is linear near zero): cosine of the
    features equals cosine of the raw inputs to high accuracy."""
    clf = DomainClassifier.create(2, 2, RandomStream(50, 0), hidden=(2,))
    W0 = np.zeros((34, 2))
    W0[0, 0] = scale
    W0[1, 1] = scale
    clf.params["W0"] = W0
    clf.params["b0"] = np.zeros(2)
    return clf


@pytest.fixture(scope="module")
def trained_classifier():
    spec = ToyDomainSpec(kind="points2d", samples_per_domain=300,
                         test_samples_per_domain=50, seed=1)
    data = make_toy_domains(spec)
    clf, _ = train_domain_classifier(data.domains, SCHED,
                                     ClassifierHyper(steps=600, seed=1))
    return clf


# --- similarities -----------------------------------------------------------------


def test_s_similarity_self_is_one(trained_classifier):
    y = np.array([0.4, 0.9])
    assert s_similarity(y, y, 0.3, trained_classifier) == pytest.approx(1.0, abs=1e-12)


def test_s_similarity_orthogonal_features():
    clf = tiny_identity_classifier()
    val = s_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.2, clf)
    assert val == pytest.approx(0.0, abs=1e-8)


def test_s_similarity_cosine_arithmetic():
    clf = tiny_identity_classifier()
    val = s_similarity(np.array([3.0, 4.0]), np.array([4.0, 3.0]), 0.2, clf)
    assert val == pytest.approx(24.0 / 25.0, abs=1e-5)


def test_s_similarity_range(trained_classifier):
    stream = RandomStream(51, 0)
    for _ in range(10):
        y, x = gaussian(stream, (2,)), gaussian(stream, (2,))
        val = s_similarity(y, x, 0.5, trained_classifier)
        assert -1.0 - 1e-12 <= val <= 1.0 + 1e-12


def test_s_similarity_zero_feature_errors():
    clf = tiny_identity_classifier()
    with pytest.raises(EnergyError):
        s_similarity(np.zeros(2), np.array([1.0, 0.0]), 0.2, clf)


def test_cosine_scale_invariant():
    # scaling either feature block leaves the averaged cosine unchanged
    from egsde.autodiff import Tape
    from egsde.energy import _cosine_rows

    stream = RandomStream(60, 0)
    fy = gaussian(stream, (3, 8))
    fx = gaussian(stream, (3, 8))

    def cos_rows(a, b):
        t = Tape()
        return _cosine_rows(t, t.leaf(a), t.constant(b), (4, 1, 2)).value

    base = cos_rows(fy, fx)
    # powers of two scale without rounding: equality is exact
    assert np.array_equal(cos_rows(4.0 * fy, fx), base)
    assert np.array_equal(cos_rows(fy, 0.5 * fx), base)
    for c in (3.0, 17.0):
        assert np.allclose(cos_rows(c * fy, fx), base, rtol=1e-12)


def test_spatial_average_cosine():
    # feature block (2, 1, 2): two spatial cells, cosine averaged over cells
    clf = DomainClassifier.create(4, 2, RandomStream(52, 0), hidden=(4,),
                                  feature_shape=(2, 1, 2))
    eps = 1e-4
    W0 = np.zeros((36, 4))
    W0[:4, :4] = np.eye(4) * eps
    clf.params["W0"] = W0
    clf.params["b0"] = np.zeros(4)
    # feature layout (C, HW): cell 0 holds dims (0, 2), cell 1 holds (1, 3)
    y = np.array([1.0, 3.0, 0.0, 4.0])
    x = np.array([1.0, 4.0, 0.0, 3.0])
    # cell 0: cos((1,0),(1,0)) = 1 ; cell 1: cos((3,4),(4,3)) = 24/25
    val = s_similarity(y, x, 0.1, clf)
    assert val == pytest.approx(0.5 * (1.0 + 24.0 / 25.0), abs=1e-6)


def test_i_similarity_examples():
    assert i_similarity(np.array([1.0, 2.0]), np.array([1.0, 2.0]), 0.2, IDENTITY) == 0.0
    val = i_similarity(np.array([2.0, 3.0]), np.array([1.0, 1.0]), 0.2, IDENTITY)
    assert val == pytest.approx(-5.0, abs=1e-12)
    stream = RandomStream(53, 0)
    for _ in range(5):
        a, b = gaussian(stream, (4,)), gaussian(stream, (4,))
        filt = LowPassFilter(2, layout=(1, 2, 2))
        assert i_similarity(a, b, 0.3, filt) <= 0.0


# --- energy value ------------------------------------------------------------------


def test_empty_energy_is_zero():
    spec = EnergySpec(())
    stream = RandomStream(54, 0)
    y, x = gaussian(stream, (2,)), gaussian(stream, (2,))
    assert energy_value(y, x, 0.4, spec, SCHED, stream) == 0.0
    g = energy_gradient(y, x, 0.4, spec, SCHED, stream)
    assert np.array_equal(g, np.zeros(2))


def test_noise_free_identity_filter_examples():
    term = ExpertTerm(DOMAIN_INDEPENDENT, 1.0, IDENTITY, NEG_SQ_L2)
    spec = EnergySpec((term,), noise_free=True)
    x = np.array([0.5, -0.5])
    assert energy_value(x, x, 0.3, spec, SCHED) == 0.0

    term2 = ExpertTerm(DOMAIN_INDEPENDENT, 2.0, IDENTITY, NEG_SQ_L2)
    spec2 = EnergySpec((term2,), noise_free=True)
    y = x + np.array([1.0, 2.0])
    assert energy_value(y, x, 0.3, spec2, SCHED) == pytest.approx(10.0, abs=1e-12)


def test_noise_free_gradient_closed_form():
    term = ExpertTerm(DOMAIN_INDEPENDENT, 2.0, IDENTITY, NEG_SQ_L2)
    spec = EnergySpec((term,), noise_free=True)
    x = np.array([0.0, 0.0])
    y = np.array([1.0, 0.0])
    g = energy_gradient(y, x, 0.3, spec, SCHED)
    assert g == pytest.approx(np.array([4.0, 0.0]), abs=1e-12)


def test_full_energy_gradient_matches_finite_differences(trained_classifier):
    terms = (
        ExpertTerm(DOMAIN_SPECIFIC, 3.0, trained_classifier, COSINE),
        ExpertTerm(DOMAIN_INDEPENDENT, 1.5, IDENTITY, NEG_SQ_L2),
        ExpertTerm("classifier_guidance", 0.8, trained_classifier, target_class=1),
    )
    spec = EnergySpec(terms)
    stream = RandomStream(55, 0)
    x0 = np.array([0.8, 0.6])
    for t_val in (0.1, 0.3, 0.5, 0.7, 0.9):
        kern = perturbation_kernel(SCHED, t_val)
        frozen = [perturb(x0[None, :], kern, gaussian(stream, (1, 2)))]
        for _ in range(4):
            y = gaussian(stream, (2,))
            g = energy_gradient(y, x0, t_val, spec, SCHED, x_draws=frozen)
            h = 1e-5
            fd = np.zeros(2)
            for d in range(2):
                e = np.zeros(2)
                e[d] = h
                fd[d] = (energy_value(y + e, x0, t_val, spec, SCHED, x_draws=frozen)
                         - energy_value(y - e, x0, t_val, spec, SCHED, x_draws=frozen)) / (2 * h)
            assert np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-6)) < 1e-4


def test_energy_affine_in_weights(trained_classifier):
    stream = RandomStream(56, 0)
    y, x0 = gaussian(stream, (2,)), gaussian(stream, (2,))
    kern = perturbation_kernel(SCHED, 0.4)
    frozen = [perturb(x0[None, :], kern, gaussian(stream, (1, 2)))]

    def value(ls, li):
        terms = []
        if ls:
            terms.append(ExpertTerm(DOMAIN_SPECIFIC, ls, trained_classifier, COSINE))
        if li:
            terms.append(ExpertTerm(DOMAIN_INDEPENDENT, li, IDENTITY, NEG_SQ_L2))
        return energy_value(y, x0, 0.4, EnergySpec(tuple(terms)), SCHED, x_draws=frozen)

    s_unit = value(1.0, 0.0)
    i_unit = value(0.0, 1.0)
    for ls, li in ((2.0, 0.5), (7.0, 3.0), (0.25, 8.0)):
        assert value(ls, li) == pytest.approx(ls * s_unit + li * i_unit, rel=1e-12)


def test_gradient_linearity_across_terms(trained_classifier):
    stream = RandomStream(57, 0)
    y, x0 = gaussian(stream, (2,)), gaussian(stream, (2,))
    kern = perturbation_kernel(SCHED, 0.4)
    frozen = [perturb(x0[None, :], kern, gaussian(stream, (1, 2)))]
    t_s = ExpertTerm(DOMAIN_SPECIFIC, 2.0, trained_classifier, COSINE)
    t_i = ExpertTerm(DOMAIN_INDEPENDENT, 1.0, IDENTITY, NEG_SQ_L2)
    g_both = energy_gradient(y, x0, 0.4, EnergySpec((t_s, t_i)), SCHED, x_draws=frozen)
    g_s = energy_gradient(y, x0, 0.4, EnergySpec((t_s,)), SCHED, x_draws=frozen)
    g_i = energy_gradient(y, x0, 0.4, EnergySpec((t_i,)), SCHED, x_draws=frozen)
    assert np.array_equal(g_both, g_s + g_i)


def test_value_and_gradient_share_one_draw(trained_classifier):
    term = ExpertTerm(DOMAIN_INDEPENDENT, 1.0, IDENTITY, NEG_SQ_L2)
    spec = EnergySpec((term,))
    y = np.array([[0.1, 0.2]])
    x0 = np.array([[1.0, -1.0]])
    streams = [RandomStream(58, 0)]
    vals, grads = batch_energy_and_gradient(y, x0, 0.5, spec, SCHED, streams)
    assert streams[0].counter == 1  # exactly one Monte Carlo draw
    # reproduce the draw: value and gradient must come from the same x_s
    # (the independent expert enters the energy as -weight * similarity)
    kern = perturbation_kernel(SCHED, 0.5)
    x_s = perturb(x0, kern, gaussian(RandomStream(58, 0), (2,))[None, :])
    assert vals[0] == pytest.approx(float(np.sum((y - x_s) ** 2)), rel=1e-12)
    assert grads == pytest.approx(2.0 * (y - x_s), rel=1e-12)


def test_mc_std_shrinks_like_root_n(trained_classifier):
    term = ExpertTerm(DOMAIN_SPECIFIC, 1.0, trained_classifier, COSINE)
    y = np.array([0.3, 1.1])
    x0 = np.array([0.9, 0.4])

    def estimate_std(mc, n_rep, base_stream_id):
        vals = []
        for r in range(n_rep):
            spec = EnergySpec((term,), mc_samples=mc)
            stream = RandomStream(59, base_stream_id + r)
            vals.append(energy_value(y, x0, 0.5, spec, SCHED, stream))
        return np.std(vals)

    s1 = estimate_std(1, 256, 0)
    s16 = estimate_std(16, 256, 1000)
    ratio = s1 / s16
    assert abs(ratio - 4.0) < 0.8  # 1/sqrt(16) scaling within 20%


def test_shape_mismatch_rejected():
    spec = EnergySpec((ExpertTerm(DOMAIN_INDEPENDENT, 1.0, IDENTITY, NEG_SQ_L2),),
                      noise_free=True)
    with pytest.raises(EnergyError):
        energy_value(np.zeros(3), np.zeros(2), 0.3, spec, SCHED)


def test_expert_term_validation():
    with pytest.raises(EnergyError):
        ExpertTerm("nonsense", 1.0)
    with pytest.raises(EnergyError):
        ExpertTerm(DOMAIN_SPECIFIC, -1.0)
    with pytest.raises(EnergyError):
        ExpertTerm("classifier_guidance", 1.0)  # no target class
    with pytest.raises(EnergyError):
        EnergySpec((), mc_samples=0)
