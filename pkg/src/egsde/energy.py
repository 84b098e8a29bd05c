"""The guidance energy and its exact gradient.

The energy of a candidate y given a source x at diffusion time s is a
weighted sum of expert terms:

    E(y, x, s) = w_spec * S_spec(y, x_s, s) - w_indep * S_indep(y, x_s, s)
                 - w_guide * log p_s(c | y)

where x_s is the source perturbed to time s (one Monte Carlo draw by
default, or the clean x itself in the noise-free variant). S_spec compares
domain-specific classifier features, by default with a cosine averaged over
the spatial cells of the (C, H, W) feature block; S_indep compares low-pass
features, by default with a negative squared L2 distance. Either similarity
may be swapped onto either extractor.

Lowering the energy discards what the classifier can use to recognise the
source domain while preserving the low-frequency content, which is exactly
the push a translation sampler needs. Gradients come from the tape, so they
are exact for the recorded primitives.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng, sde
from .autodiff import Tape, as_grid, reverse_gradient

DOMAIN_SPECIFIC = "domain_specific"
DOMAIN_INDEPENDENT = "domain_independent"
CLASSIFIER_GUIDANCE = "classifier_guidance"

COSINE = "cosine"
NEG_SQ_L2 = "neg_sq_l2"


class EnergyError(ValueError):
    pass


@dataclass(frozen=True)
class ExpertTerm:
    kind: str
    weight: float
    extractor: object = None          # DomainClassifier or LowPassFilter
    similarity: str = None            # cosine | neg_sq_l2 (not for guidance terms)
    target_class: int = None          # guidance terms only

    def __post_init__(self):
        if self.kind not in (DOMAIN_SPECIFIC, DOMAIN_INDEPENDENT, CLASSIFIER_GUIDANCE):
            raise EnergyError(f"unknown expert kind {self.kind!r}")
        if self.weight < 0.0:
            raise EnergyError(f"weights must be nonnegative, got {self.weight}")
        if self.kind == CLASSIFIER_GUIDANCE:
            if self.target_class is None:
                raise EnergyError("guidance terms need a target class")
        else:
            sim = self.similarity or (COSINE if self.kind == DOMAIN_SPECIFIC else NEG_SQ_L2)
            if sim not in (COSINE, NEG_SQ_L2):
                raise EnergyError(f"unknown similarity {sim!r}")
            object.__setattr__(self, "similarity", sim)


@dataclass(frozen=True)
class EnergySpec:
    terms: tuple = ()
    mc_samples: int = 1
    noise_free: bool = False

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.mc_samples < 1:
            raise EnergyError(f"mc_samples must be >= 1, got {self.mc_samples}")

    @property
    def is_empty(self):
        return len(self.terms) == 0


def _rows(x):
    x = as_grid(x, "input")
    return (np.atleast_2d(x), x.ndim == 1)


def _cosine_rows(tape, fy, fx_const, feature_shape):
    """Mean-over-cells cosine between (n, C*H*W) feature blocks; returns (n,)."""
    c, h, w = feature_shape
    hw = h * w
    n = fy.value.shape[0]
    if hw > 1:
        fy = tape.reshape(fy, (n, c, hw))
        fx_const = tape.reshape(fx_const, (n, c, hw))
    axis = 1
    ny = tape.l2norm(fy, axis=axis)
    nx = tape.l2norm(fx_const, axis=axis)
    if np.min(ny.value) <= 0.0 or np.min(nx.value) <= 0.0:
        raise EnergyError("zero feature vector: cosine similarity undefined")
    cos = tape.mul(tape.dot(fy, fx_const, axis=axis),
                   tape.reciprocal(tape.mul(ny, nx)))
    if hw > 1:
        cos = tape.mean(cos, axis=1)
    return cos


def _neg_sq_l2_rows(tape, fy, fx_const):
    d = tape.sub(fy, fx_const)
    return tape.scale(tape.dot(d, d, axis=1), -1.0)


def _whole_vector_cosine_rows(tape, fy, fx_const):
    ny = tape.l2norm(fy, axis=1)
    nx = tape.l2norm(fx_const, axis=1)
    if np.min(ny.value) <= 0.0 or np.min(nx.value) <= 0.0:
        raise EnergyError("zero feature vector: cosine similarity undefined")
    return tape.mul(tape.dot(fy, fx_const, axis=1), tape.reciprocal(tape.mul(ny, nx)))


def _term_rows(tape, term, y_node, x_ref, t):
    """Per-sample contribution of one expert term, as an (n,) node."""
    from .extractors import low_pass, low_pass_node  # local import to avoid a cycle

    if term.kind == DOMAIN_SPECIFIC:
        clf = term.extractor
        fy = clf.features_node(tape, y_node, t)
        fx = tape.constant(clf.features(x_ref, t), "source features")
        if term.similarity == COSINE:
            sim = _cosine_rows(tape, fy, fx, clf.feature_shape)
        else:
            sim = _neg_sq_l2_rows(tape, fy, fx)
        return tape.scale(sim, term.weight)
    if term.kind == DOMAIN_INDEPENDENT:
        filt = term.extractor
        fy = low_pass_node(tape, y_node, filt)
        fx = tape.constant(low_pass(x_ref, filt), "source lowpass")
        if term.similarity == NEG_SQ_L2:
            sim = _neg_sq_l2_rows(tape, fy, fx)
        else:
            sim = _whole_vector_cosine_rows(tape, fy, fx)
        return tape.scale(sim, -term.weight)
    # classifier guidance: -weight * log p_t(c | y)
    clf = term.extractor
    logp = tape.log_softmax(clf.logits_node(tape, y_node, t))
    return tape.scale(tape.take_col(logp, term.target_class), -term.weight)


def _energy_rows_node(tape, y_node, x_refs, t, spec):
    """Average the per-draw energies over the Monte Carlo references."""
    per_draw = []
    for x_ref in x_refs:
        total = None
        for term in spec.terms:
            contrib = _term_rows(tape, term, y_node, x_ref, t)
            total = contrib if total is None else tape.add(total, contrib)
        per_draw.append(total)
    acc = per_draw[0]
    for extra in per_draw[1:]:
        acc = tape.add(acc, extra)
    if len(per_draw) > 1:
        acc = tape.scale(acc, 1.0 / len(per_draw))
    return acc


def _draw_refs(x0_rows, s, spec, schedule, streams, x_draws):
    """The perturbed-source references shared by value and gradient."""
    if spec.noise_free:
        return [x0_rows]
    if x_draws is not None:
        return [np.atleast_2d(as_grid(d, "x_draw")) for d in x_draws]
    kern = sde.perturbation_kernel(schedule, s)
    refs = []
    for _ in range(spec.mc_samples):
        noise = rng.gaussian_rows(streams, (x0_rows.shape[1],))
        refs.append(sde.perturb(x0_rows, kern, noise))
    return refs


def batch_energy_and_gradient(y, x0, s, spec, schedule, streams=None, x_draws=None):
    """Per-sample energies (n,) and gradients (n, D) from one shared draw.

    streams: one RandomStream per row (ignored when x_draws is given or the
    spec is noise-free). Rows are independent, so the gradient of the summed
    energy is exactly the stack of per-row gradients.
    """
    y_rows, _ = _rows(y)
    x_rows, _ = _rows(x0)
    if y_rows.shape != x_rows.shape:
        raise EnergyError(f"shape mismatch: y {y_rows.shape} vs x0 {x_rows.shape}")
    if spec.is_empty:
        return np.zeros(y_rows.shape[0]), np.zeros_like(y_rows)
    refs = _draw_refs(x_rows, s, spec, schedule, streams, x_draws)
    tape = Tape()
    y_node = tape.leaf(y_rows, "y")
    rows = _energy_rows_node(tape, y_node, refs, s, spec)
    total = tape.sum(rows)
    (grad,) = reverse_gradient(tape, total, [y_node])
    return rows.value.copy(), grad


def energy_value(y, x0, s, spec, schedule, stream=None, x_draws=None):
    """Energy of a single sample. Draws advance the stream unless frozen."""
    y_rows, _ = _rows(y)
    streams = [stream] if stream is not None else None
    vals, _ = batch_energy_and_gradient(
        y_rows, np.atleast_2d(as_grid(x0, "x0")), s, spec, schedule, streams, x_draws
    )
    return float(vals[0])


def energy_gradient(y, x0, s, spec, schedule, stream=None, x_draws=None):
    y_arr = as_grid(y, "y")
    streams = [stream] if stream is not None else None
    _, grad = batch_energy_and_gradient(
        np.atleast_2d(y_arr), np.atleast_2d(as_grid(x0, "x0")), s, spec, schedule,
        streams, x_draws
    )
    return grad.reshape(y_arr.shape)


# --- standalone similarities (values only) -------------------------------------


def s_similarity(y, x_t, t, clf, similarity=COSINE):
    """Spatial-average similarity of domain-specific features; in [-1, 1] for cosine."""
    y_rows, _ = _rows(y)
    x_rows, _ = _rows(x_t)
    tape = Tape()
    fy = clf.features_node(tape, tape.leaf(y_rows, "y"), t)
    fx = tape.constant(clf.features(x_rows, t), "x features")
    if similarity == COSINE:
        out = _cosine_rows(tape, fy, fx, clf.feature_shape)
    else:
        out = _neg_sq_l2_rows(tape, fy, fx)
    return float(out.value[0])


def i_similarity(y, x_t, t, filt, similarity=NEG_SQ_L2):
    """Similarity of low-pass features; <= 0 for the negative squared L2 form."""
    from .extractors import low_pass

    y_rows, _ = _rows(y)
    x_rows, _ = _rows(x_t)
    fy = low_pass(y_rows, filt)
    fx = low_pass(x_rows, filt)
    if similarity == NEG_SQ_L2:
        return float(-np.sum((fy - fx) ** 2))
    ny, nx = np.linalg.norm(fy), np.linalg.norm(fx)
    if ny <= 0.0 or nx <= 0.0:
        raise EnergyError("zero feature vector: cosine similarity undefined")
    return float(np.sum(fy * fx) / (ny * nx))
