"""scikit-learn style front end for variational backdoor adjustment."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _rng, engine
from ._validation import check_positive_int, check_triplets
from .scm_gaussian import Dataset, Origin


class VariationalBackdoorAdjustment(BaseEstimator):
    """Estimate ``log p(y | do(x))`` from observational ``(x, y, z)`` triplets.

    ``fit`` trains prior, decoder and encoder by maximum likelihood, then (if
    ``finetune_epochs > 0``) finetunes the encoder on the lower bound with the
    prior and decoder frozen. ``score_samples`` returns the per-row bound.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
        Hidden widths shared by decoder and encoder networks.
    activation : {"relu", "tanh", "softplus"}
    skip_connection : bool
        Add a linear input-to-mean path to each network.
    epochs, finetune_epochs : int
        Epochs of separate maximum-likelihood training and of encoder finetuning.
    batch_size : int
    learning_rate : float
        Adam step size for both phases.
    n_train_samples : int
        Encoder samples per row when finetuning.
    n_eval_samples : int
        Encoder (or prior, for the naive estimate) samples per row when scoring.
    standardize : bool
        Standardize network inputs and outputs with training-set statistics.
    random_state : int
        Master seed; every stream used by ``fit`` and the scoring methods derives from it.
    """

    def __init__(
        self,
        hidden_layer_sizes=(64, 64),
        activation="relu",
        skip_connection=True,
        epochs=100,
        finetune_epochs=100,
        batch_size=256,
        learning_rate=1e-3,
        n_train_samples=1,
        n_eval_samples=100,
        standardize=True,
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.skip_connection = skip_connection
        self.epochs = epochs
        self.finetune_epochs = finetune_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.n_train_samples = n_train_samples
        self.n_eval_samples = n_eval_samples
        self.standardize = standardize
        self.random_state = random_state

    def fit(self, X, Y, Z):
        X, Y, Z = check_triplets(X, Y, Z)
        epochs = check_positive_int(self.epochs, "epochs", allow_zero=True)
        ft_epochs = check_positive_int(self.finetune_epochs, "finetune_epochs", allow_zero=True)
        batch = check_positive_int(self.batch_size, "batch_size")
        k = check_positive_int(self.n_train_samples, "n_train_samples")
        seed = _rng.check_seed(self.random_state)

        data = Dataset(X, Y, Z, Origin.OBSERVATIONAL, bytes(32))
        model = engine.VbaModel.initialize(
            X.shape[1],
            _rng.derive_seed(seed, 0),
            hidden=tuple(self.hidden_layer_sizes),
            activation=self.activation,
            skip=self.skip_connection,
            data=data if self.standardize else None,
        )
        self.separate_report_ = engine.train_separate(
            model, data, epochs, batch, _rng.derive_seed(seed, 1), self.learning_rate
        )
        model.freeze("prior", "decoder")
        self.finetune_report_ = None
        if ft_epochs:
            self.finetune_report_ = engine.finetune_encoder(
                model, data, ft_epochs, batch, k, _rng.derive_seed(seed, 2), self.learning_rate
            )
        self.model_ = model
        self.n_features_in_ = X.shape[1]
        return self

    def _score_inputs(self, X, Y):
        check_is_fitted(self, "model_")
        return check_triplets(X, Y, n_features=self.n_features_in_)

    def score_samples(self, X, Y):
        """Per-row lower bound on ``log p(y | do(x))`` (nats)."""
        X, Y = self._score_inputs(X, Y)
        k = check_positive_int(self.n_eval_samples, "n_eval_samples")
        return engine.elbo_rows(self.model_, X, Y, k, _rng.derive_seed(self.random_state, 3))["value"]

    def score(self, X, Y):
        """Mean bound over the rows of ``(X, Y)``."""
        return float(np.mean(self.score_samples(X, Y)))

    def decompose(self, X, Y):
        """Per-row bound with its prior, decoder and encoder-entropy terms."""
        X, Y = self._score_inputs(X, Y)
        k = check_positive_int(self.n_eval_samples, "n_eval_samples")
        return engine.elbo_rows(self.model_, X, Y, k, _rng.derive_seed(self.random_state, 3))

    def naive_score_samples(self, X, Y):
        """Per-row naive Monte-Carlo estimate (prior samples, no encoder)."""
        X, Y = self._score_inputs(X, Y)
        k = check_positive_int(self.n_eval_samples, "n_eval_samples")
        return engine.naive_mc_rows(self.model_, X, Y, k, _rng.derive_seed(self.random_state, 4))
