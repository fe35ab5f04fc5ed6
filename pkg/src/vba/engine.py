"""Variational backdoor adjustment: training phases and estimators.

A :class:`VbaModel` holds a prior ``p(z)``, a decoder ``p(y | x, z)`` and an
encoder ``q(z | x, y)``. The interventional log-density is bounded below by

    E_q [ log p(z) + log p(y | x, z) - log q(z | x, y) ]

Training runs in two phases: :func:`train_separate` fits each component by
maximum likelihood on the observed triplets, then :func:`finetune_encoder`
maximizes the bound over the encoder alone. :func:`train_fully_joint`
maximizes the bound over all three components and exists to demonstrate that
doing so estimates ``p(y | x)`` instead.
"""

import copy
import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _rng
from . import scm_gaussian
from .nn import autodiff as ad
from .nn.autodiff import Tensor
from .nn.gaussian import gaussian_log_density, reparameterized_sample
from .nn.mlp import DiagonalGaussian, Mlp
from .nn.optim import OptimizerState, optimizer_step

COMPONENTS = ("prior", "decoder", "encoder")
MODES = ("untrained", "separate", "finetune", "fully-joint")
EVAL_CHUNK = 32768  # max (rows * samples) evaluated at once


class ContractError(RuntimeError):
    """Raised when a training phase is called on a model in the wrong state."""


@dataclass
class VbaModel:
    prior: DiagonalGaussian
    decoder: Mlp
    encoder: Mlp
    frozen: set = field(default_factory=set)
    mode: str = "untrained"

    def __post_init__(self):
        d = self.prior.dim
        if self.decoder.in_dim != 2 * d or self.decoder.out_dim != d:
            raise ValueError(f"decoder must map 2*{d} inputs to a {d}-dim head")
        if self.encoder.in_dim != 2 * d or self.encoder.out_dim != d:
            raise ValueError(f"encoder must map 2*{d} inputs to a {d}-dim head")
        self.frozen = set(self.frozen)

    @classmethod
    def initialize(cls, dim, seed=0, hidden=(64, 64), activation="relu", skip=True, data=None):
        """Fresh model. With ``data`` the networks standardize inputs and outputs
        using that dataset's column means and standard deviations."""
        norm_dec, norm_enc = {}, {}
        if data is not None:
            if data.dim != dim:
                raise ValueError(f"data dimension {data.dim} != model dimension {dim}")
            norm_dec = _standardizer(np.hstack([data.x, data.z]), data.y)
            norm_enc = _standardizer(np.hstack([data.x, data.y]), data.z)
        sizes = (2 * dim, *hidden, 2 * dim)
        decoder = Mlp.initialized(
            sizes, _rng.substream(seed, _rng.TAG_INIT, 1), activation, skip, **norm_dec
        )
        encoder = Mlp.initialized(
            sizes, _rng.substream(seed, _rng.TAG_INIT, 2), activation, skip, **norm_enc
        )
        return cls(DiagonalGaussian(dim), decoder, encoder)

    @property
    def dim(self):
        return self.prior.dim

    def component(self, name):
        if name not in COMPONENTS:
            raise ValueError(f"unknown component {name!r}")
        return getattr(self, name)

    def freeze(self, *names):
        for name in names:
            self.component(name)
            self.frozen.add(name)
        return self

    def unfreeze(self, *names):
        self.frozen.difference_update(names or COMPONENTS)
        return self

    def fingerprints(self):
        return {
            name: hashlib.sha256(self.component(name).params.astype("<f8").tobytes()).hexdigest()
            for name in COMPONENTS
        }

    def copy(self):
        return copy.deepcopy(self)

    # distribution heads; ``params`` overrides allow differentiation

    def prior_head(self, params=None):
        return self.prior.forward(params)

    def decoder_head(self, x, z, params=None):
        x = ad.broadcast_to(x, ad.shape_of(z)) if ad.shape_of(x) != ad.shape_of(z) else x
        return self.decoder.forward(ad.concat([x, z], axis=-1), params)

    def encoder_head(self, x, y, params=None):
        return self.encoder.forward(ad.concat([x, y], axis=-1), params)


def _standardizer(inputs, targets):
    def scale(a):
        s = a.std(axis=0)
        return np.where(s > 0, s, 1.0)

    return {
        "in_loc": inputs.mean(axis=0),
        "in_scale": scale(inputs),
        "out_loc": targets.mean(axis=0),
        "out_scale": scale(targets),
    }


@dataclass
class ElboEstimate:
    value: float
    term_prior: float
    term_decoder: float
    term_encoder_entropy: float
    k: int


@dataclass
class TrainReport:
    mode: str
    losses: dict
    wall_clock: float
    fingerprints: dict

    @property
    def epochs(self):
        return len(next(iter(self.losses.values()), []))

    def to_csv(self):
        names = list(self.losses)
        lines = ["epoch," + ",".join(names)]
        for e in range(self.epochs):
            lines.append(f"{e}," + ",".join(repr(float(self.losses[n][e])) for n in names))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# losses


def _mean_scalar(v):
    out = ad.mean(v)
    return out if isinstance(out, Tensor) else float(out)


def _check_batch(*arrays):
    for a in arrays:
        if ad.shape_of(a)[0] == 0:
            raise ValueError("batch must be nonempty")


def loss_prior(model, z, params=None):
    """Mean of ``-log p_theta(z)`` over the batch."""
    _check_batch(z)
    return _mean_scalar(-gaussian_log_density(model.prior_head(params), z))


def loss_decoder(model, x, y, z, params=None):
    """Mean of ``-log p_gamma(y | x, z)`` over the batch."""
    _check_batch(x, y, z)
    return _mean_scalar(-gaussian_log_density(model.decoder_head(x, z, params), y))


def loss_encoder_mle(model, x, y, z, params=None):
    """Mean of ``-log q_phi(z | x, y)`` over the batch."""
    _check_batch(x, y, z)
    return _mean_scalar(-gaussian_log_density(model.encoder_head(x, y, params), z))


def elbo_terms(model, x, y, noise, params=None):
    """Per-sample bound terms for noise of shape ``(k, n, d)``.

    ``params`` may map component names to tensors; the sample path runs
    through the encoder's parameters, so the ``-log q`` term is differentiated
    both directly and through ``z``.
    """
    params = params or {}
    q = model.encoder_head(x, y, params.get("encoder"))
    z = reparameterized_sample(q, noise)
    log_prior = gaussian_log_density(model.prior_head(params.get("prior")), z)
    log_dec = gaussian_log_density(model.decoder_head(x, z, params.get("decoder")), y)
    log_q = gaussian_log_density(q, z)
    return log_prior, log_dec, log_q


def loss_elbo(model, x, y, noise, params=None):
    """Negated bound averaged over samples and rows (the finetuning objective)."""
    log_prior, log_dec, log_q = elbo_terms(model, x, y, noise, params)
    return _mean_scalar(-(log_prior + log_dec - log_q))


# ---------------------------------------------------------------------------
# training


def _check_training_data(model, dataset):
    if dataset.dim != model.dim:
        raise ValueError(f"dataset dimension {dataset.dim} != model dimension {model.dim}")


def _batches(n, batch_size, seed, epoch):
    perm = _rng.substream(seed, _rng.TAG_SHUFFLE, epoch).permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def _leaf(model, name):
    return Tensor(model.component(name).params, requires_grad=name not in model.frozen)


def train_separate(model, dataset, epochs, batch_size=256, seed=0, lr=1e-3, callback=None):
    """Fit prior, decoder and encoder by maximum likelihood, each with its own Adam state.

    ``callback(epoch, model)``, if given, runs after every epoch.
    """
    _check_training_data(model, dataset)
    if batch_size < 1 or epochs < 0:
        raise ValueError("batch_size must be >= 1 and epochs >= 0")
    start = time.perf_counter()
    states = {n: OptimizerState.fresh(model.component(n).n_params, lr=lr) for n in COMPONENTS}
    losses = {f"loss_{n}": [] for n in COMPONENTS}
    for epoch in range(epochs):
        sums = dict.fromkeys(COMPONENTS, 0.0)
        for idx in _batches(dataset.n, batch_size, seed, epoch):
            x, y, z = dataset.x[idx], dataset.y[idx], dataset.z[idx]
            leaves = {n: _leaf(model, n) for n in COMPONENTS}
            parts = {
                "prior": loss_prior(model, z, leaves["prior"]),
                "decoder": loss_decoder(model, x, y, z, leaves["decoder"]),
                "encoder": loss_encoder_mle(model, x, y, z, leaves["encoder"]),
            }
            for name in COMPONENTS:
                part = parts[name]
                sums[name] += ad.value_of(part).item() * len(idx)
                if name in model.frozen:
                    continue
                (grad,) = ad.backward(part, [leaves[name]])
                optimizer_step(states[name], model.component(name).params, grad)
        for name in COMPONENTS:
            losses[f"loss_{name}"].append(sums[name] / dataset.n)
        if callback is not None:
            callback(epoch, model)
    if epochs:
        model.mode = "separate"
    return TrainReport("separate", losses, time.perf_counter() - start, model.fingerprints())


def _train_elbo(model, dataset, epochs, batch_size, k, seed, lr, trainable, mode, callback):
    _check_training_data(model, dataset)
    if k < 1 or batch_size < 1 or epochs < 0:
        raise ValueError("k and batch_size must be >= 1, epochs >= 0")
    start = time.perf_counter()
    states = {n: OptimizerState.fresh(model.component(n).n_params, lr=lr) for n in trainable}
    curve = []
    for epoch in range(epochs):
        total = 0.0
        for b, idx in enumerate(_batches(dataset.n, batch_size, seed, epoch)):
            x, y = dataset.x[idx], dataset.y[idx]
            noise = _rng.substream(seed, _rng.TAG_NOISE, epoch, b).standard_normal(
                (k, len(idx), model.dim)
            )
            leaves = {n: _leaf(model, n) for n in COMPONENTS}
            loss = loss_elbo(model, x, y, noise, leaves)
            total += -ad.value_of(loss).item() * len(idx)
            grads = ad.backward(loss, [leaves[n] for n in trainable])
            for name, grad in zip(trainable, grads):
                optimizer_step(states[name], model.component(name).params, grad)
        curve.append(total / dataset.n)
        if callback is not None:
            callback(epoch, model)
    if epochs:
        model.mode = mode
    return TrainReport(mode, {"elbo": curve}, time.perf_counter() - start, model.fingerprints())


def finetune_encoder(model, dataset, epochs, batch_size=256, k=1, seed=0, lr=1e-3, callback=None):
    """Maximize the bound over the encoder with prior and decoder frozen."""
    if not {"prior", "decoder"} <= model.frozen or "encoder" in model.frozen:
        raise ContractError(
            "finetuning requires prior and decoder frozen and the encoder trainable; "
            "call model.freeze('prior', 'decoder') after separate training"
        )
    return _train_elbo(
        model, dataset, epochs, batch_size, k, seed, lr, ("encoder",), "finetune", callback
    )


def train_fully_joint(model, dataset, epochs, batch_size=256, k=1, seed=0, lr=1e-3, callback=None):
    """Maximize the bound over all three components at once.

    This is the flawed objective: nothing ties the prior and decoder to the
    observed z, so the optimum estimates ``log p(y | x)``.
    """
    if model.frozen:
        raise ContractError(f"fully joint training needs no frozen components, got {model.frozen}")
    return _train_elbo(
        model, dataset, epochs, batch_size, k, seed, lr, COMPONENTS, "fully-joint", callback
    )


# ---------------------------------------------------------------------------
# estimators


def _row_noise(seed, tag, rows, k, d):
    return np.stack([_rng.substream(seed, tag, r).standard_normal((k, d)) for r in rows], axis=1)


def _chunks(n, k):
    step = max(1, EVAL_CHUNK // max(k, 1))
    return [np.arange(i, min(n, i + step)) for i in range(0, n, step)]


def elbo_rows(model, x, y, k=100, seed=0):
    """Per-row bound estimates for ``(n, d)`` inputs.

    Row ``i`` draws its ``k`` samples from the substream ``(seed, i)``, so a
    row's estimate does not depend on which other rows are evaluated with it.
    Returns a dict of ``(n,)`` arrays: value and the three terms.
    """
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    if k < 1:
        raise ValueError("k must be >= 1")
    out = {key: np.empty(x.shape[0]) for key in ("value", "term_prior", "term_decoder", "term_encoder_entropy")}
    for rows in _chunks(x.shape[0], k):
        noise = _row_noise(seed, _rng.TAG_EVAL, rows, k, model.dim)
        lp, ld, lq = elbo_terms(model, x[rows], y[rows], noise)
        out["term_prior"][rows] = lp.mean(axis=0)
        out["term_decoder"][rows] = ld.mean(axis=0)
        out["term_encoder_entropy"][rows] = -lq.mean(axis=0)
        out["value"][rows] = (lp + ld - lq).mean(axis=0)
    return out


def elbo_estimate(model, x, y, k=100, seed=0):
    """Monte-Carlo bound on ``log p(y | do(x))`` at one point, with its decomposition."""
    rows = elbo_rows(model, np.atleast_2d(x), np.atleast_2d(y), k, seed)
    return ElboEstimate(
        value=float(rows["value"][0]),
        term_prior=float(rows["term_prior"][0]),
        term_decoder=float(rows["term_decoder"][0]),
        term_encoder_entropy=float(rows["term_encoder_entropy"][0]),
        k=int(k),
    )


def naive_mc_rows(model, x, y, k=100, seed=0):
    """``log mean_j p_gamma(y | x, z_j)`` with ``z_j`` drawn from the prior, per row."""
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    if k < 1:
        raise ValueError("k must be >= 1")
    prior = model.prior_head()
    out = np.empty(x.shape[0])
    for rows in _chunks(x.shape[0], k):
        noise = _row_noise(seed, _rng.TAG_NAIVE, rows, k, model.dim)
        z = reparameterized_sample(prior, noise)
        log_dec = gaussian_log_density(model.decoder_head(x[rows], z), y[rows])
        out[rows] = logsumexp(log_dec, axis=0) - np.log(k)
    return out


def naive_mc_estimate(model, x, y, k=100, seed=0):
    """Naive Monte-Carlo backdoor adjustment at one point (prior samples, no encoder)."""
    return float(naive_mc_rows(model, np.atleast_2d(x), np.atleast_2d(y), k, seed)[0])


@dataclass
class Metrics:
    elbo_mean: float
    term_prior: float
    term_decoder: float
    term_encoder_entropy: float
    encoder_data_loglik: float
    naive_mc_mean: float
    ground_truth_mae: float
    mode: str
    k: int
    seed: int
    naive_mc_mae: float
    truth_mean: float

    KEYS = (
        "elbo_mean",
        "term_prior",
        "term_decoder",
        "term_encoder_entropy",
        "encoder_data_loglik",
        "naive_mc_mean",
        "ground_truth_mae",
        "mode",
        "k",
        "seed",
        "naive_mc_mae",
        "truth_mean",
    )

    def to_dict(self):
        return {key: getattr(self, key) for key in self.KEYS}

    def to_text(self):
        return "".join(
            f"{key},{v if isinstance(v, str) else repr(v)}\n" for key, v in self.to_dict().items()
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"


def evaluate(model, dataset, config, k=100, seed=0):
    """Bound, its decomposition, naive MC and ground-truth error over a dataset."""
    if dataset.config_fingerprint != config.fingerprint():
        raise ValueError(
            "dataset was generated from a different config: dataset fingerprint "
            f"{dataset.config_fingerprint.hex()} != config fingerprint {config.fingerprint().hex()}"
        )
    if dataset.dim != model.dim:
        raise ValueError(f"dataset dimension {dataset.dim} != model dimension {model.dim}")
    truth = scm_gaussian.log_interventional(config, dataset.x, dataset.y)
    rows = elbo_rows(model, dataset.x, dataset.y, k, seed)
    naive = naive_mc_rows(model, dataset.x, dataset.y, k, seed)
    enc_ll = gaussian_log_density(model.encoder_head(dataset.x, dataset.y), dataset.z)
    return Metrics(
        elbo_mean=float(rows["value"].mean()),
        term_prior=float(rows["term_prior"].mean()),
        term_decoder=float(rows["term_decoder"].mean()),
        term_encoder_entropy=float(rows["term_encoder_entropy"].mean()),
        encoder_data_loglik=float(np.mean(enc_ll)),
        naive_mc_mean=float(naive.mean()),
        ground_truth_mae=float(np.mean(np.abs(rows["value"] - truth))),
        mode=model.mode,
        k=int(k),
        seed=int(seed),
        naive_mc_mae=float(np.mean(np.abs(naive - truth))),
        truth_mean=float(truth.mean()),
    )


def _linear_mlp(d, w_mean, std):
    """Single affine layer ``(2d -> 2d)`` with head ``N(inp @ w_mean, std)``.

    The std is carried by the fixed output scale so that values below the
    softplus floor remain representable.
    """
    from .nn.mlp import STD_FLOOR, softplus_inverse

    std = np.broadcast_to(np.asarray(std, dtype=np.float64), (d,))
    w = np.zeros((2 * d, 2 * d))
    w[:, :d] = w_mean / std
    b = np.concatenate([np.zeros(d), np.full(d, softplus_inverse(1.0 - STD_FLOOR))])
    return Mlp((2 * d, 2 * d), "identity", np.concatenate([w.ravel(), b]), out_scale=std.copy())


def oracle_model(config, encoder="optimal"):
    """Model whose components are the true linear-Gaussian densities.

    ``encoder="optimal"`` uses the bound-maximizing ``q`` (the bound is then
    exact); ``encoder="posterior"`` uses the observational ``z | x, y``, which is
    what maximum-likelihood encoder training converges to.
    """
    from .nn.mlp import softplus_inverse

    d = config.dim
    c1, c2, c3, s1, s2 = config.c1, config.c2, config.c3, config.sigma1, config.sigma2
    prior = DiagonalGaussian(d)
    prior.params[d:] = softplus_inverse(1.0 - 1e-4)
    w_dec = np.zeros((2 * d, d))
    w_dec[np.arange(d), np.arange(d)] = c2
    w_dec[d + np.arange(d), np.arange(d)] = c3
    decoder = _linear_mlp(d, w_dec, s2)
    if encoder == "optimal":
        prec = 1.0 + c3**2 / s2**2
        wx, wy = -c3 * c2 / s2**2 / prec, c3 / s2**2 / prec
    elif encoder == "posterior":
        prec = 1.0 + c1**2 / s1**2 + c3**2 / s2**2
        wx, wy = (c1 / s1**2 - c3 * c2 / s2**2) / prec, c3 / s2**2 / prec
    else:
        raise ValueError(f"unknown encoder kind {encoder!r}")
    w_enc = np.zeros((2 * d, d))
    w_enc[np.arange(d), np.arange(d)] = wx
    w_enc[d + np.arange(d), np.arange(d)] = wy
    enc = _linear_mlp(d, w_enc, 1.0 / np.sqrt(prec))
    return VbaModel(prior, decoder, enc)
