"""Feature extractors used by the guidance energy.

Two extractors with opposite jobs:

* :class:`LowPassFilter` keeps the shared low-frequency content: block-average
  downsample by an integer factor, then nearest-neighbor upsample back. This
  is an exactly linear, idempotent projection and it is its own adjoint,
  which the tape exploits directly.
* :class:`DomainClassifier` learns what tells the domains apart: a dense trunk
  on [x, time-embedding] trained with cross-entropy on inputs perturbed to a
  uniformly random diffusion time. Its final hidden activations (everything
  but the last linear map) are the domain-specific features, viewed as a
  (channels, height, width) block.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets, rng, sde
from .autodiff import Tape, as_grid, reverse_gradient
from .nets import MlpSpec, SgdMomentum, TrainingDivergedError


class FilterError(ValueError):
    pass


@dataclass(frozen=True)
class LowPassFilter:
    """Block-average down + nearest-neighbor up on a (C, H, W) layout.

    factor=1 is the identity and is the only legal choice for non-spatial
    data (layout None).
    """

    factor: int
    layout: tuple = None  # (C, H, W) for image rows; None for point data

    def __post_init__(self):
        if self.factor < 1:
            raise FilterError(f"factor must be >= 1, got {self.factor}")
        if self.layout is None:
            if self.factor != 1:
                raise FilterError("non-spatial data admits only factor 1 (identity)")
        else:
            c, h, w = self.layout
            if h % self.factor or w % self.factor:
                raise FilterError(
                    f"spatial dims {h}x{w} not divisible by factor {self.factor}"
                )

    @property
    def dim(self):
        if self.layout is None:
            return None
        c, h, w = self.layout
        return c * h * w


def low_pass(x, filt):
    """Apply the projection to one flattened sample or a batch of rows."""
    x = as_grid(x, "x")
    if filt.factor == 1:
        return x
    c, h, w = filt.layout
    k = filt.factor
    lead = x.shape[:-1]
    if x.shape[-1] != c * h * w:
        raise FilterError(f"row length {x.shape[-1]} does not match layout {filt.layout}")
    blocks = x.reshape(*lead, c, h // k, k, w // k, k)
    means = blocks.mean(axis=-1).mean(axis=-2)
    up = np.repeat(np.repeat(means, k, axis=-2), k, axis=-1)
    return up.reshape(*lead, c * h * w)


def low_pass_node(tape, x_node, filt):
    if filt.factor == 1:
        return x_node
    return tape.lowpass(x_node, lambda arr: low_pass(arr, filt))


# --- domain classifier ---------------------------------------------------------


@dataclass
class ClassifierHyper:
    steps: int = 1500
    batch: int = 128
    lr: float = 5e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    t_min: float = 1e-3
    seed: int = 0


@dataclass
class DomainClassifier:
    """Trunk emitting (C, H, W) features plus a linear head over domains.

    The feature block is the gain-scaled final hidden layer, optionally padded
    with a fixed block of saturated anchor units. Deep feature spaces keep
    cosine similarities inside a narrow band; the (gain, anchor) pair gives
    the small trunk the same property, and thereby sets the temperature at
    which the guidance weights act. anchor_units = 0 disables the padding.
    """

    data_dim: int
    num_domains: int
    feature_shape: tuple
    spec: MlpSpec
    params: dict
    temb_dim: int = nets.TIME_EMBEDDING_DIM
    feature_gain: float = 1.0
    anchor_units: int = 0

    @classmethod
    def create(cls, data_dim, num_domains, stream, hidden=(64, 64),
               feature_shape=None, temb_dim=nets.TIME_EMBEDDING_DIM,
               feature_gain=1.0, anchor_units=0):
        if num_domains < 2:
            raise ValueError("need at least two domains")
        if anchor_units < 0 or feature_gain <= 0.0:
            raise ValueError("anchor_units must be >= 0 and feature_gain positive")
        hidden = tuple(hidden)
        feature_dim = hidden[-1] + anchor_units
        if feature_shape is None:
            feature_shape = (feature_dim, 1, 1)
        c, h, w = feature_shape
        if c * h * w != feature_dim:
            raise ValueError(
                f"feature shape {feature_shape} incompatible with "
                f"trunk width {hidden[-1]} + {anchor_units} anchor units"
            )
        spec = MlpSpec(in_dim=data_dim + temb_dim, hidden=hidden, out_dim=num_domains)
        return cls(data_dim, num_domains, tuple(feature_shape), spec,
                   nets.init_mlp(spec, stream), temb_dim,
                   float(feature_gain), int(anchor_units))

    # -- plain numpy paths

    def _with_temb(self, x, t):
        x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
        temb = np.broadcast_to(
            nets.time_embedding(float(t), self.temb_dim), (x2.shape[0], self.temb_dim)
        )
        return np.concatenate([x2, temb], axis=1)

    def _pad(self, hidden_act):
        if self.feature_gain != 1.0:
            hidden_act = self.feature_gain * hidden_act
        if self.anchor_units:
            anchor = np.ones((hidden_act.shape[0], self.anchor_units))
            hidden_act = np.concatenate([hidden_act, anchor], axis=1)
        return hidden_act

    def features(self, x, t):
        """Penultimate feature block, flat (n, C*H*W)."""
        h = nets.mlp_hidden_forward(self.spec, self.params, self._with_temb(x, t))
        return self._pad(h)

    def logits(self, x, t):
        # the head consumes the raw hidden block; the anchor padding would
        # only duplicate the bias term
        return nets.mlp_forward(self.spec, self.params, self._with_temb(x, t))

    def logits_batched(self, x, t_vec):
        x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
        temb = nets.time_embedding(np.asarray(t_vec, dtype=np.float64), self.temb_dim)
        return nets.mlp_forward(self.spec, self.params,
                                np.concatenate([x2, temb], axis=1))

    # -- tape paths

    def _hidden_node(self, tape, x_node, t):
        n = x_node.value.shape[0]
        temb = np.broadcast_to(
            nets.time_embedding(float(t), self.temb_dim), (n, self.temb_dim)
        )
        x_in = tape.concat(x_node, tape.constant(np.ascontiguousarray(temb), "temb"))
        consts = {k: tape.constant(v, k) for k, v in self.params.items()}
        return nets.mlp_forward_nodes(tape, self.spec, consts, x_in, upto_hidden=True)

    def features_node(self, tape, x_node, t):
        h = self._hidden_node(tape, x_node, t)
        if self.feature_gain != 1.0:
            h = tape.scale(h, self.feature_gain)
        if self.anchor_units:
            anchor = tape.constant(np.ones((h.value.shape[0], self.anchor_units)),
                                   "anchor")
            h = tape.concat(h, anchor, axis=1)
        return h

    def logits_node(self, tape, x_node, t):
        h = self._hidden_node(tape, x_node, t)
        k = len(self.spec.hidden)
        w = tape.constant(self.params[f"W{k}"], f"W{k}")
        b = tape.constant(self.params[f"b{k}"], f"b{k}")
        return tape.bias(tape.matmul(h, w), b)

    def save(self, path):
        meta = {
            "data_dim": self.data_dim,
            "num_domains": self.num_domains,
            "feature_shape": list(self.feature_shape),
            "hidden": list(self.spec.hidden),
            "temb_dim": self.temb_dim,
            "feature_gain": self.feature_gain,
            "anchor_units": self.anchor_units,
        }
        nets.save_checkpoint(path, "domain_classifier", meta, self.params)

    @classmethod
    def load(cls, path):
        kind, meta, params = nets.load_checkpoint(path)
        if kind != "domain_classifier":
            raise nets.CheckpointError(f"{path}: expected a domain classifier, got {kind}")
        spec = MlpSpec(
            in_dim=meta["data_dim"] + meta["temb_dim"],
            hidden=tuple(meta["hidden"]),
            out_dim=meta["num_domains"],
        )
        return cls(meta["data_dim"], meta["num_domains"], tuple(meta["feature_shape"]),
                   spec, params, meta["temb_dim"],
                   meta.get("feature_gain", 1.0), meta.get("anchor_units", 0))


def domain_features(clf, x, t):
    """Features as (C, H, W) for one sample or (n, C, H, W) for a batch."""
    x = as_grid(x, "x")
    flat = clf.features(x, t)
    if x.ndim == 1:
        return flat.reshape(clf.feature_shape)
    return flat.reshape(x.shape[0], *clf.feature_shape)


def classifier_log_prob(clf, x, t, c):
    """Log-softmax probability of domain c for a single sample."""
    if not (0 <= c < clf.num_domains):
        raise ValueError(f"domain index {c} out of range [0, {clf.num_domains})")
    z = clf.logits(x, t)[0]
    m = np.max(z)
    return float(z[c] - m - np.log(np.sum(np.exp(z - m))))


def classifier_accuracy(clf, domain_sets, t, seed=0):
    """Accuracy on inputs perturbed to time t (fresh noise per call with seed)."""
    stream = rng.RandomStream(seed, stream_id=7)
    correct = 0
    total = 0
    schedule = sde.VpSchedule()
    kern = sde.perturbation_kernel(schedule, t)
    for label, data in enumerate(domain_sets):
        noisy = sde.perturb(data, kern, rng.gaussian(stream, data.shape))
        pred = np.argmax(clf.logits(noisy, t), axis=1)
        correct += int(np.sum(pred == label))
        total += data.shape[0]
    return correct / total


def train_domain_classifier(domain_sets, schedule, hyper, hidden=(64, 64),
                            feature_shape=None, feature_gain=1.0, anchor_units=0):
    """Cross-entropy training on diffusion-perturbed inputs.

    domain_sets: one (n_i, D) array per domain; label = position in the list.
    Each batch draws fresh times t ~ U(t_min, T) and perturbs inputs through
    the closed-form kernel before classification.
    """
    domain_sets = [np.atleast_2d(as_grid(d, "domain data")) for d in domain_sets]
    if any(d.shape[0] == 0 for d in domain_sets):
        raise ValueError("every domain set must be nonempty")
    dim = domain_sets[0].shape[1]
    data = np.concatenate(domain_sets, axis=0)
    labels = np.concatenate(
        [np.full(d.shape[0], i, dtype=np.int64) for i, d in enumerate(domain_sets)]
    )
    init_stream = rng.RandomStream(hyper.seed, stream_id=11)
    train_stream = rng.RandomStream(hyper.seed, stream_id=12)
    clf = DomainClassifier.create(dim, len(domain_sets), init_stream,
                                  hidden=hidden, feature_shape=feature_shape,
                                  feature_gain=feature_gain,
                                  anchor_units=anchor_units)
    opt = SgdMomentum(lr=hyper.lr, momentum=hyper.momentum,
                      weight_decay=hyper.weight_decay)
    onehot = np.eye(len(domain_sets))

    n = data.shape[0]
    batch = min(hyper.batch, n)
    steps_per_epoch = max(1, n // batch)
    order = None
    losses = []
    for step in range(hyper.steps):
        k = step % steps_per_epoch
        if k == 0:
            order = rng.permutation(train_stream, n)
        idx = order[k * batch : (k + 1) * batch]
        xb, yb = data[idx], labels[idx]
        t = rng.uniform(train_stream, (len(idx),), hyper.t_min, schedule.T)
        eps = rng.gaussian(train_stream, xb.shape)
        alpha, sigma = sde.kernel_coeffs(schedule, t)
        noisy = alpha[:, None] * xb + sigma[:, None] * eps
        temb = nets.time_embedding(t, clf.temb_dim)

        tape = Tape()
        leaves = nets.param_leaves(tape, clf.params)
        x_in = tape.concat(tape.constant(noisy, "x"), tape.constant(temb, "temb"))
        logits = nets.mlp_forward_nodes(tape, clf.spec, leaves, x_in)
        logp = tape.log_softmax(logits)
        nll = tape.scale(tape.mean(tape.dot(logp, tape.constant(onehot[yb]), axis=1)), -1.0)
        if not np.isfinite(nll.value):
            raise TrainingDivergedError(
                f"classifier loss became {nll.value} at step {step}"
            )
        grads = reverse_gradient(tape, nll, [leaves[k2] for k2 in sorted(leaves)])
        opt.step(clf.params, dict(zip(sorted(leaves), grads)))
        losses.append(float(nll.value))
    return clf, losses
