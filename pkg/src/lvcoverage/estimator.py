"""Scikit-learn-style front end for the triplet classifier.

`FisherCNNClassifier` follows the estimator protocol (``fit`` returns self,
``get_params``/``set_params``, trailing-underscore fitted attributes) without
depending on scikit-learn, so it works with ``sklearn.base.clone``,
``cross_val_score`` and pipelines when scikit-learn is around.
"""

from __future__ import annotations

import inspect

import numpy as np

from . import network
from .errors import ParameterError
from .validation import check_binary_labels, check_triplet_blocks


class FisherCNNClassifier:
    """Binary classifier over short-axis slice triplets.

    Parameters mirror the training configuration; ``arch`` is an architecture
    name (``table1``, ``phantom``, ``tiny``, optionally ``+plainfc``) or a
    :class:`~lvcoverage.network.NetworkArch` instance. The positive class
    means "target structure absent".
    """

    def __init__(self, arch="table1", learning_rate=0.01, momentum=0.9,
                 dropout_rate=0.1, lam=1e-4, eta=0.1, batch_size=32,
                 max_epochs=40, stop_window=5, stop_sigma=0.01, seed=0,
                 dtype="float32"):
        self.arch = arch
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.dropout_rate = dropout_rate
        self.lam = lam
        self.eta = eta
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.stop_window = stop_window
        self.stop_sigma = stop_sigma
        self.seed = seed
        self.dtype = dtype

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **kwargs) -> "FisherCNNClassifier":
        for key, value in kwargs.items():
            if key not in self._param_names():
                raise ParameterError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def _resolve_arch(self) -> network.NetworkArch:
        if isinstance(self.arch, network.NetworkArch):
            return self.arch
        return network.make_arch(self.arch)

    def _config(self) -> network.TrainConfig:
        return network.TrainConfig(
            learning_rate=self.learning_rate, momentum=self.momentum,
            dropout_rate=self.dropout_rate, lam=self.lam, eta=self.eta,
            batch_size=self.batch_size, max_epochs=self.max_epochs,
            stop_window=self.stop_window, stop_sigma=self.stop_sigma,
            seed=self.seed,
        )

    def fit(self, X, y) -> "FisherCNNClassifier":
        arch = self._resolve_arch()
        X = check_triplet_blocks(X, arch.input_hwd)
        y = check_binary_labels(y, X.shape[0])
        result = network.train(
            arch, network.TrainingSet(X, y), self._config(),
            dtype=np.dtype(self.dtype),
        )
        self.arch_ = arch
        self.params_ = result.params
        self.trace_ = result.trace
        self.stop_reason_ = result.stop_reason
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = int(np.prod(arch.input_hwd))
        return self

    def _require_fit(self):
        if not hasattr(self, "params_"):
            raise ParameterError("this estimator is not fitted; call fit first")

    def predict_score(self, X) -> np.ndarray:
        """Probability that the structure is absent, one float per block."""
        self._require_fit()
        X = check_triplet_blocks(X, self.arch_.input_hwd)
        return network.predict(self.params_, X)

    def predict_proba(self, X) -> np.ndarray:
        p1 = self.predict_score(X)
        return np.column_stack([1 - p1, p1])

    def predict(self, X) -> np.ndarray:
        return (self.predict_score(X) > 0.5).astype(np.int64)

    def score(self, X, y) -> float:
        y = check_binary_labels(np.asarray(y))
        return float(np.mean(self.predict(X) == y))
