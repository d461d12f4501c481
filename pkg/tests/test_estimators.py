import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mirrorbert.estimators import MirrorTuner, MLMEncoder, check_texts
from mirrorbert.exceptions import DataError
from mirrorbert.synthetic import make_cluster_task

SMALL = dict(hidden_dim=16, num_heads=2, ff_dim=32, num_layers=1, max_len=8, epochs=1,
             batch_size=32)


@pytest.fixture(scope="module")
def texts():
    return [it.text for it in make_cluster_task(n_concepts=20, seed=0).tuning_items()]


@pytest.fixture(scope="module")
def base(texts):
    return MLMEncoder(**SMALL).fit(texts)


class TestMLMEncoder:
    def test_params_round_trip(self):
        est = MLMEncoder(hidden_dim=32, lr=0.01)
        assert est.get_params()["hidden_dim"] == 32
        est.set_params(hidden_dim=8)
        assert clone(est).hidden_dim == 8

    def test_transform_shape(self, base, texts):
        out = base.transform(texts[:5])
        assert out.shape == (5, 16) and out.dtype == np.float64
        assert base.n_features_out_ == 16
        assert np.array_equal(out, base.transform(texts[:5]))

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            MLMEncoder().transform(["a"])

    def test_input_validation(self, base):
        with pytest.raises(ValueError):
            base.transform("a single string")
        with pytest.raises(ValueError):
            base.transform([["nested"]])
        with pytest.raises(ValueError):
            check_texts(["ok", 3])

    def test_same_seed_same_model(self, texts):
        a = MLMEncoder(**SMALL).fit(texts[:60])
        b = MLMEncoder(**SMALL).fit(texts[:60])
        assert a.params_.equal(b.params_)

    def test_checkpoint_round_trip(self, base, texts, tmp_path):
        base.save(tmp_path / "m.npz")
        loaded = MLMEncoder.from_checkpoint(tmp_path / "m.npz")
        assert np.array_equal(loaded.transform(texts[:4]), base.transform(texts[:4]))


class TestMirrorTuner:
    def test_fit_transform(self, base, texts):
        tuner = MirrorTuner(base_encoder=base, epochs=1, pairs_per_batch=32, lr=1e-3,
                            temperature=0.2)
        out = tuner.fit_transform(texts)
        assert out.shape == (len(texts), 16)
        assert len(tuner.log_) == len(texts) // 32
        # the base is left as it was
        assert not tuner.params_.equal(base.params_)

    def test_unfitted_base_is_cloned(self, texts):
        proto = MLMEncoder(**SMALL)
        tuner = MirrorTuner(base_encoder=proto, epochs=1, pairs_per_batch=32).fit(texts)
        assert not hasattr(proto, "params_")
        assert hasattr(tuner.base_encoder_, "params_")

    def test_config_overrides(self, base, texts):
        tuner = MirrorTuner(base_encoder=base, epochs=1, pairs_per_batch=32, pooling="mean",
                            dropout_rate=0.0, augment="span_mask", augment_param=2)
        tuner.fit(texts)
        assert tuner.params_.config.pooling.value == "mean"
        assert tuner.params_.config.dropout_rate == 0.0

    def test_duplicates_rejected(self, base):
        with pytest.raises(DataError, match="duplicates"):
            MirrorTuner(base_encoder=base, pairs_per_batch=2).fit(["a b", "a b", "c"])
