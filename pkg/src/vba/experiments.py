"""End-to-end experiment drivers on linear-Gaussian data.

Every driver takes one master seed and derives all data, initialization,
shuffling and sampling streams from it, so results are reproducible.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _rng, engine, scm_gaussian

log = logging.getLogger(__name__)

DEFAULT_SWEEP_DIMS = (1, 2, 4, 8, 16, 32, 64)

# sub-seed keys
_K_CONFIG, _K_TRAIN, _K_EVAL, _K_OOD, _K_INIT, _K_FIT, _K_FINETUNE, _K_SCORE = range(8)


@dataclass
class ExperimentSettings:
    n_train: int = 10_000
    n_eval: int = 2_000
    epochs: int = 100
    finetune_epochs: int = 100
    batch_size: int = 256
    lr: float = 1e-3
    k_train: int = 1
    k_eval: int = 100
    hidden: tuple = (64, 64)
    skip: bool = True

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class ConfigRun:
    """Everything produced by separate training plus finetuning on one config."""

    config: scm_gaussian.ScmConfig
    separate: dict = field(default_factory=dict)  # dataset name -> Metrics
    finetuned: dict = field(default_factory=dict)
    model: engine.VbaModel = None


def make_data(dim, seed, settings):
    config = scm_gaussian.sample_config(dim, _rng.derive_seed(seed, _K_CONFIG))
    train = scm_gaussian.generate(config, settings.n_train, _rng.derive_seed(seed, _K_TRAIN))
    held_out = scm_gaussian.generate(config, settings.n_eval, _rng.derive_seed(seed, _K_EVAL))
    ood = scm_gaussian.generate_ood(config, settings.n_eval, _rng.derive_seed(seed, _K_OOD))
    return config, train, {"in_distribution": held_out, "out_of_distribution": ood}


def fresh_model(train, seed, settings):
    return engine.VbaModel.initialize(
        train.dim,
        _rng.derive_seed(seed, _K_INIT),
        hidden=settings.hidden,
        skip=settings.skip,
        data=train,
    )


def run_config(dim, seed, settings=None, evaluate_sets=("in_distribution", "out_of_distribution")):
    """Separate training, evaluation, encoder finetuning, evaluation."""
    settings = settings or ExperimentSettings()
    config, train, eval_sets = make_data(dim, seed, settings)
    model = fresh_model(train, seed, settings)
    fit_seed = _rng.derive_seed(seed, _K_FIT)
    engine.train_separate(model, train, settings.epochs, settings.batch_size, fit_seed, settings.lr)
    run = ConfigRun(config)
    score_seed = _rng.derive_seed(seed, _K_SCORE)
    for name in evaluate_sets:
        run.separate[name] = engine.evaluate(
            model, eval_sets[name], config, settings.k_eval, score_seed
        )
    model.freeze("prior", "decoder")
    engine.finetune_encoder(
        model,
        train,
        settings.finetune_epochs,
        settings.batch_size,
        settings.k_train,
        _rng.derive_seed(seed, _K_FINETUNE),
        settings.lr,
    )
    for name in evaluate_sets:
        run.finetuned[name] = engine.evaluate(
            model, eval_sets[name], config, settings.k_eval, score_seed
        )
    run.model = model
    log.info(
        "dim=%d seed=%d separate MAE %s finetuned MAE %s",
        dim,
        seed,
        {k: round(v.ground_truth_mae, 3) for k, v in run.separate.items()},
        {k: round(v.ground_truth_mae, 3) for k, v in run.finetuned.items()},
    )
    return run


SWEEP_COLUMNS = ("dim", "repeat", "method", "mae", "estimate_mean", "truth_mean")


def sweep(dims=DEFAULT_SWEEP_DIMS, repeats=10, seed=0, settings=None):
    """Dimension sweep: naive MC vs the bound after separate training and after finetuning.

    Returns one row per ``(dim, repeat, method)`` with the mean absolute error
    against the analytic interventional log-density on held-out data. Naive MC
    and the bound use the same number of samples per point.
    """
    settings = settings or ExperimentSettings()
    rows = []
    for dim in dims:
        for rep in range(repeats):
            run = run_config(dim, _rng.derive_seed(seed, _rng.TAG_SWEEP, dim, rep), settings, ("in_distribution",))
            sep = run.separate["in_distribution"]
            fin = run.finetuned["in_distribution"]
            rows.append((dim, rep, "naive_mc", sep.naive_mc_mae, sep.naive_mc_mean, sep.truth_mean))
            rows.append((dim, rep, "vba_separate", sep.ground_truth_mae, sep.elbo_mean, sep.truth_mean))
            rows.append((dim, rep, "vba_finetuned", fin.ground_truth_mae, fin.elbo_mean, fin.truth_mean))
    return rows


PITFALL_COLUMNS = (
    "epoch",
    "joint_estimate",
    "finetuned_estimate",
    "analytic_observational",
    "analytic_interventional",
)


@dataclass
class PitfallResult:
    config: scm_gaussian.ScmConfig
    rows: list
    joint_model: engine.VbaModel
    finetuned_model: engine.VbaModel

    @property
    def final(self):
        return dict(zip(PITFALL_COLUMNS, self.rows[-1]))

    def joint_is_observational(self):
        f = self.final
        return abs(f["joint_estimate"] - f["analytic_observational"]) < abs(
            f["joint_estimate"] - f["analytic_interventional"]
        )

    def finetuned_is_interventional(self):
        f = self.final
        return abs(f["finetuned_estimate"] - f["analytic_interventional"]) < abs(
            f["finetuned_estimate"] - f["analytic_observational"]
        )


def pitfall(dim=1, seed=0, settings=None):
    """Fully joint training vs separate training plus finetuning on the same data.

    Joint training starts from a fresh model and runs ``settings.epochs``;
    the two-phase model runs ``settings.epochs`` of separate training followed
    by ``settings.finetune_epochs`` of finetuning. Row ``e`` reports both mean
    held-out estimates after epoch ``e`` of joint training and of finetuning.
    """
    settings = settings or ExperimentSettings()
    config, train, eval_sets = make_data(dim, seed, settings)
    held_out = eval_sets["in_distribution"]
    obs = scm_gaussian.expected_log_observational(config, held_out)
    do = scm_gaussian.expected_log_interventional(config, held_out)
    score_seed = _rng.derive_seed(seed, _K_SCORE)

    def tracker(curve):
        def cb(epoch, model):
            curve.append(engine.elbo_rows(model, held_out.x, held_out.y, settings.k_eval, score_seed)["value"].mean())

        return cb

    joint_curve, ft_curve = [], []
    joint = fresh_model(train, seed, settings)
    engine.train_fully_joint(
        joint,
        train,
        settings.epochs,
        settings.batch_size,
        settings.k_train,
        _rng.derive_seed(seed, _K_FINETUNE),
        settings.lr,
        callback=tracker(joint_curve),
    )
    two_phase = fresh_model(train, seed, settings)
    engine.train_separate(
        two_phase, train, settings.epochs, settings.batch_size, _rng.derive_seed(seed, _K_FIT), settings.lr
    )
    two_phase.freeze("prior", "decoder")
    engine.finetune_encoder(
        two_phase,
        train,
        settings.finetune_epochs,
        settings.batch_size,
        settings.k_train,
        _rng.derive_seed(seed, _K_FINETUNE),
        settings.lr,
        callback=tracker(ft_curve),
    )
    rows = [
        (e, _at(joint_curve, e), _at(ft_curve, e), obs, do)
        for e in range(max(len(joint_curve), len(ft_curve)))
    ]
    return PitfallResult(config, rows, joint, two_phase)


def _at(curve, epoch):
    # shorter curve holds its final value
    return float(curve[min(epoch, len(curve) - 1)]) if curve else float("nan")


def decoder_z_sensitivity(model, x, z, delta=1.0):
    """Mean absolute change of the decoder mean when every z coordinate moves by ``delta``."""
    up = model.decoder_head(x, z + delta).mean
    down = model.decoder_head(x, z - delta).mean
    return np.abs(up - down).mean(axis=0) / 2.0
