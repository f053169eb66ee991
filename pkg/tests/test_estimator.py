"""Estimator-protocol conformance and end-to-end fit/predict."""

import numpy as np
import pytest

from conftest import tiny_blob_dataset
from lvcoverage import FisherCNNClassifier
from lvcoverage.errors import DimensionError, ParameterError


def make_estimator(**overrides):
    defaults = dict(arch="tiny", max_epochs=3, batch_size=8, seed=1,
                    dropout_rate=0.0)
    defaults.update(overrides)
    return FisherCNNClassifier(**defaults)


class TestEstimatorProtocol:
    def test_get_params_round_trips_through_init(self):
        est = make_estimator(eta=0.05)
        params = est.get_params()
        clone = FisherCNNClassifier(**params)
        assert clone.get_params() == params

    def test_set_params_returns_self(self):
        est = make_estimator()
        assert est.set_params(eta=0.2) is est
        assert est.eta == 0.2

    def test_set_params_rejects_unknown(self):
        with pytest.raises(ParameterError):
            make_estimator().set_params(bogus=1)

    def test_sklearn_clone_compatible(self):
        sklearn = pytest.importorskip("sklearn")
        from sklearn.base import clone
        est = make_estimator(eta=0.07)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()

    def test_unfitted_predict_raises(self):
        with pytest.raises(ParameterError, match="not fitted"):
            make_estimator().predict(np.zeros((1, 8, 8, 3)))


class TestFitPredict:
    def test_fit_sets_attributes(self):
        x, y = tiny_blob_dataset(16, 0)
        est = make_estimator().fit(x, y)
        assert est.params_.epochs_trained >= 1
        assert len(est.trace_) == est.params_.epochs_trained
        assert list(est.classes_) == [0, 1]
        assert est.n_features_in_ == 8 * 8 * 3

    def test_predict_proba_shape_and_sum(self):
        x, y = tiny_blob_dataset(16, 0)
        est = make_estimator().fit(x, y)
        proba = est.predict_proba(x)
        assert proba.shape == (16, 2)
        assert np.allclose(proba.sum(axis=1), 1.0)

    def test_learns_blobs(self):
        x, y = tiny_blob_dataset(40, 3)
        xt, yt = tiny_blob_dataset(20, 4)
        est = make_estimator(max_epochs=25, seed=2).fit(x, y)
        assert est.score(xt, yt) >= 0.9

    def test_same_seed_reproducible(self):
        x, y = tiny_blob_dataset(16, 5)
        a = make_estimator().fit(x, y)
        b = make_estimator().fit(x, y)
        assert np.array_equal(a.predict_score(x), b.predict_score(x))

    def test_wrong_block_shape_rejected(self):
        est = make_estimator()
        with pytest.raises(DimensionError):
            est.fit(np.zeros((4, 9, 8, 3)), np.array([0, 1, 0, 1]))

    def test_arch_instance_accepted(self):
        from lvcoverage.network import tiny_arch
        x, y = tiny_blob_dataset(12, 6)
        est = make_estimator(arch=tiny_arch()).fit(x, y)
        assert est.arch_.name == "tiny"
