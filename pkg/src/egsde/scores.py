"""Score fields: exact Gaussian-mixture scores and a trainable noise predictor.

For a mixture sum_k w_k N(m_k, diag(v_k)) diffused to time t, each component
becomes N(alpha_t m_k, alpha_t^2 v_k + sigma_t^2) and the marginal score is
the responsibility-weighted sum of component scores. This is the analytic
oracle that trained predictors are validated against.

The noise predictor eps(y, t) is an MLP on [y, time_embedding(t)] trained by
denoising score matching:  E ||eps - eps_hat(alpha x0 + sigma eps, t)||^2,
with plain SGD + momentum so training is deterministic given the seed. The
implied score is -eps_hat / sigma_t.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nets, rng, sde
from .autodiff import Tape, as_grid, reverse_gradient
from .nets import MlpSpec, SgdMomentum, TrainingDivergedError


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mean: np.ndarray
    var: np.ndarray  # per-dimension variance

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(as_grid(self.mean, "mean")))
        var = np.atleast_1d(as_grid(self.var, "var"))
        if var.shape != self.mean.shape:
            var = np.broadcast_to(var, self.mean.shape).copy()
        object.__setattr__(self, "var", var)
        if np.any(self.var <= 0.0):
            raise ValueError("component variances must be positive")


@dataclass(frozen=True)
class GaussianMixture:
    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise ValueError("mixture needs at least one component")
        total = sum(c.weight for c in comps)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total}")

    @property
    def dim(self):
        return self.components[0].mean.shape[0]

    def sample(self, n, stream):
        """n draws; component choice and noise both come from the stream."""
        weights = np.array([c.weight for c in self.components])
        u = rng.uniform(stream, (n,))
        idx = np.searchsorted(np.cumsum(weights), u)
        idx = np.minimum(idx, len(self.components) - 1)
        eps = rng.gaussian(stream, (n, self.dim))
        means = np.stack([c.mean for c in self.components])
        stds = np.sqrt(np.stack([c.var for c in self.components]))
        return means[idx] + stds[idx] * eps


def gmm_log_density(mix, y, kernel):
    """Log-density of the t-perturbed mixture at rows of y."""
    y = np.atleast_2d(as_grid(y, "y"))
    a, s2 = kernel.mean_coef, kernel.std * kernel.std
    logs = []
    for c in mix.components:
        var = a * a * c.var + s2
        diff = y - a * c.mean
        logs.append(
            np.log(c.weight)
            - 0.5 * np.sum(diff * diff / var, axis=1)
            - 0.5 * np.sum(np.log(2.0 * np.pi * var))
        )
    stacked = np.stack(logs)
    m = np.max(stacked, axis=0)
    return m + np.log(np.sum(np.exp(stacked - m), axis=0))


def gmm_score(mix, y, kernel):
    """Exact score of the t-perturbed mixture; shape follows y."""
    y_arr = as_grid(y, "y")
    y2 = np.atleast_2d(y_arr)
    a, s2 = kernel.mean_coef, kernel.std * kernel.std
    log_resp = []
    comp_scores = []
    for c in mix.components:
        var = a * a * c.var + s2
        diff = y2 - a * c.mean
        log_resp.append(
            np.log(c.weight)
            - 0.5 * np.sum(diff * diff / var, axis=1)
            - 0.5 * np.sum(np.log(var))
        )
        comp_scores.append(-diff / var)
    lr = np.stack(log_resp)                       # (K, n)
    lr = lr - np.max(lr, axis=0, keepdims=True)
    resp = np.exp(lr)
    resp = resp / np.sum(resp, axis=0, keepdims=True)
    out = np.einsum("kn,knd->nd", resp, np.stack(comp_scores))
    return out.reshape(y_arr.shape)


# --- trainable noise predictor ------------------------------------------------


@dataclass
class TrainHyper:
    steps: int = 2000
    batch: int = 256
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.0
    t_min: float = 1e-3
    seed: int = 0
    log_every: int = 0  # 0 disables step logging; per-epoch losses always recorded


@dataclass
class NoisePredictor:
    """eps(y, t): MLP on [y, time-embedding], output shaped like y."""

    data_dim: int
    spec: MlpSpec
    params: dict
    temb_dim: int = nets.TIME_EMBEDDING_DIM

    @classmethod
    def create(cls, data_dim, stream, hidden=(128, 128, 128, 128),
               temb_dim=nets.TIME_EMBEDDING_DIM):
        spec = MlpSpec(in_dim=data_dim + temb_dim, hidden=tuple(hidden), out_dim=data_dim)
        return cls(data_dim, spec, nets.init_mlp(spec, stream), temb_dim)

    def predict(self, y, t):
        y2 = np.atleast_2d(np.asarray(y, dtype=np.float64))
        temb = np.broadcast_to(
            nets.time_embedding(float(t), self.temb_dim), (y2.shape[0], self.temb_dim)
        )
        out = nets.mlp_forward(self.spec, self.params, np.concatenate([y2, temb], axis=1))
        return out.reshape(np.shape(y))

    def predict_nodes(self, tape, y_node, t):
        temb = np.broadcast_to(
            nets.time_embedding(float(t), self.temb_dim),
            (y_node.value.shape[0], self.temb_dim),
        )
        x_in = tape.concat(y_node, tape.constant(np.ascontiguousarray(temb), "temb"))
        consts = {k: tape.constant(v, k) for k, v in self.params.items()}
        return nets.mlp_forward_nodes(tape, self.spec, consts, x_in)

    def save(self, path):
        meta = {
            "data_dim": self.data_dim,
            "hidden": list(self.spec.hidden),
            "temb_dim": self.temb_dim,
        }
        nets.save_checkpoint(path, "noise_predictor", meta, self.params)

    @classmethod
    def load(cls, path):
        kind, meta, params = nets.load_checkpoint(path)
        if kind != "noise_predictor":
            raise nets.CheckpointError(f"{path}: expected a noise predictor, got {kind}")
        spec = MlpSpec(
            in_dim=meta["data_dim"] + meta["temb_dim"],
            hidden=tuple(meta["hidden"]),
            out_dim=meta["data_dim"],
        )
        return cls(meta["data_dim"], spec, params, meta["temb_dim"])


def _dsm_loss_and_grads(model, x0, schedule, t_min, stream):
    n, d = x0.shape
    t = rng.uniform(stream, (n,), t_min, schedule.T)
    eps = rng.gaussian(stream, (n, d))
    alpha, sigma = sde.kernel_coeffs(schedule, t)
    y = alpha[:, None] * x0 + sigma[:, None] * eps
    temb = nets.time_embedding(t, model.temb_dim)

    tape = Tape()
    leaves = nets.param_leaves(tape, model.params)
    x_in = tape.concat(tape.constant(y, "y"), tape.constant(temb, "temb"))
    out = nets.mlp_forward_nodes(tape, model.spec, leaves, x_in)
    resid = tape.sub(out, tape.constant(eps, "eps"))
    loss = tape.mean(tape.square(resid))
    if not np.isfinite(loss.value):
        return float(loss.value), None
    grads = reverse_gradient(tape, loss, [leaves[k] for k in sorted(leaves)])
    return float(loss.value), dict(zip(sorted(leaves), grads))


def train_noise_predictor(data, schedule, hyper, hidden=(128, 128, 128, 128)):
    """Fit eps(y, t) by denoising score matching.

    Returns (model, epoch_losses). One epoch = one pass over the shuffled
    dataset; losses are batch averages per epoch. Raises
    TrainingDivergedError if the loss goes non-finite.
    """
    data = np.atleast_2d(as_grid(data, "data"))
    if data.shape[0] == 0:
        raise ValueError("dataset must be nonempty")
    init_stream = rng.RandomStream(hyper.seed, stream_id=1)
    train_stream = rng.RandomStream(hyper.seed, stream_id=2)
    model = NoisePredictor.create(data.shape[1], init_stream, hidden=hidden)
    opt = SgdMomentum(lr=hyper.lr, momentum=hyper.momentum, weight_decay=hyper.weight_decay)

    n = data.shape[0]
    batch = min(hyper.batch, n)
    steps_per_epoch = max(1, n // batch)
    epoch_losses = []
    acc = []
    order = None
    for step in range(hyper.steps):
        k = step % steps_per_epoch
        if k == 0:
            order = rng.permutation(train_stream, n)
        idx = order[k * batch : (k + 1) * batch]
        loss, grads = _dsm_loss_and_grads(model, data[idx], schedule, hyper.t_min, train_stream)
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"denoising loss became {loss} at step {step}; lower the learning rate"
            )
        opt.step(model.params, grads)
        acc.append(loss)
        if len(acc) == steps_per_epoch:
            epoch_losses.append(float(np.mean(acc)))
            acc = []
    if acc:
        epoch_losses.append(float(np.mean(acc)))
    return model, epoch_losses


def dsm_loss(model, data, schedule, t_min=1e-3, seed=0, n_draws=1):
    """Monte Carlo denoising loss of a fixed model on a dataset (no training)."""
    data = np.atleast_2d(as_grid(data, "data"))
    stream = rng.RandomStream(seed, stream_id=99)
    total = 0.0
    for _ in range(n_draws):
        n, d = data.shape
        t = rng.uniform(stream, (n,), t_min, schedule.T)
        eps = rng.gaussian(stream, (n, d))
        alpha, sigma = sde.kernel_coeffs(schedule, t)
        y = alpha[:, None] * data + sigma[:, None] * eps
        temb = nets.time_embedding(t, model.temb_dim)
        pred = nets.mlp_forward(model.spec, model.params, np.concatenate([y, temb], axis=1))
        total += float(np.mean((pred - eps) ** 2))
    return total / n_draws


def score_of(model, y, kernel):
    """Implied score of a noise predictor at kernel time: -eps_hat / sigma_t."""
    return sde.eps_to_score(model.predict(y, kernel.t), kernel)


# --- score field wrappers (callables (y, s) -> score) -------------------------


@dataclass
class GmmScoreField:
    mixture: GaussianMixture
    schedule: sde.VpSchedule

    def __call__(self, y, s):
        return gmm_score(self.mixture, y, sde.perturbation_kernel(self.schedule, s))


@dataclass
class PredictorScoreField:
    model: NoisePredictor
    schedule: sde.VpSchedule

    def __call__(self, y, s):
        return score_of(self.model, y, sde.perturbation_kernel(self.schedule, s))
