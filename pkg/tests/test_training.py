import json
import os

import numpy as np
import pytest

from inverse_forge.datagen import build_dataset
from inverse_forge.errors import (ConfigError, DomainError, IntegrityError,
                                  NumericError, VersionError)
from inverse_forge.models import mdn_nll
from inverse_forge.simulator import SimulatorSpec
from inverse_forge.tensor import Tensor
from inverse_forge.training import (Checkpoint, TrainConfig, feature_stats,
                                    kfold_split, load, restore_model, save,
                                    train)

SMALL = dict(hidden=(16, 8), latent_dim=4, n_components=3, batch_size=25)


@pytest.fixture(scope="module")
def spec():
    return SimulatorSpec(seed=77)


@pytest.fixture(scope="module")
def desk_data(spec):
    return build_dataset("neighborhood", 150, spec, seed=21)


class TestKFold:
    def test_sizes(self):
        folds = kfold_split(10, 5, seed=0)
        assert all(len(f) == 2 for f in folds)

    def test_partition(self):
        folds = kfold_split(23, 5, seed=1)
        union = np.sort(np.concatenate(folds))
        assert np.array_equal(union, np.arange(23))
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1

    def test_seed_reproducible(self):
        a = kfold_split(40, 5, seed=7)
        b = kfold_split(40, 5, seed=7)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_too_small(self):
        with pytest.raises(DomainError):
            kfold_split(4, 5)


class TestConfig:
    def test_bad_kind(self):
        with pytest.raises(ConfigError):
            TrainConfig(model_kind="transformer")

    def test_bad_lam(self):
        with pytest.raises(ConfigError):
            TrainConfig(model_kind="mlp", lam=0.0)

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"model_kind": "mlp", "dropout": 0.5})

    def test_dict_roundtrip(self):
        cfg = TrainConfig(model_kind="cvae_mdn", epochs=3, seed=9)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg


class TestStats:
    def test_zero_variance_passthrough(self):
        rows = np.column_stack([np.full(10, 3.0), np.arange(10.0)])
        mean, std = feature_stats(rows)
        assert std[0] == 1.0 and mean[0] == 3.0
        assert std[1] > 1.0

    def test_standardizes(self, desk_data):
        mean, std = feature_stats(desk_data.xs)
        z = (desk_data.xs - mean) / std
        assert np.allclose(z.mean(axis=0), 0.0, atol=1e-9)


class TestTrainBasics:
    def test_epochs_zero_initial_params(self, desk_data):
        cfg = TrainConfig(model_kind="mlp", epochs=0, seed=1, **SMALL)
        ckpt = train(cfg, desk_data, [0, 1, 2, 3])
        assert ckpt.log == []
        model = restore_model(ckpt)
        assert model.predictor.out_dim == 10

    def test_no_test_leakage(self, desk_data):
        cfg = TrainConfig(model_kind="mlp", epochs=0, seed=1, **SMALL)
        ckpt = train(cfg, desk_data, [0, 1, 2, 3])
        rows = np.isin(desk_data.folds, [0, 1, 2, 3])
        mean, std = feature_stats(desk_data.ys[rows])
        assert np.array_equal(ckpt.arrays["norm.y_mean"], mean)
        assert np.array_equal(ckpt.arrays["norm.y_std"], std)

    def test_deterministic(self, desk_data):
        cfg = TrainConfig(model_kind="mdn", epochs=2, seed=5, **SMALL)
        a = train(cfg, desk_data, [0, 1, 2, 3])
        b = train(cfg, desk_data, [0, 1, 2, 3])
        for name in a.arrays:
            assert np.array_equal(a.arrays[name], b.arrays[name])
        assert a.log == b.log

    def test_mlp_matches_least_squares_on_linear_data(self):
        # y = A x with a linear map recoverable by the normal equations
        rng = np.random.default_rng(0)
        amat = rng.normal(size=(6, 3))
        xs = rng.normal(size=(200, 3))
        ys = xs @ amat.T
        from inverse_forge.datagen import Dataset
        data = Dataset(xs=xs, ys=ys, folds=np.arange(200) % 5,
                       provenance="synthetic", seed=0,
                       labels=tuple("ABCDEF"), n_phases=6)
        coef, *_ = np.linalg.lstsq(ys, xs, rcond=None)
        baseline = np.abs(ys @ coef - xs).mean()
        cfg = TrainConfig(model_kind="mlp", hidden=(128,), epochs=3000,
                          batch_size=200, seed=2, lr=0.003)
        model = restore_model(train(cfg, data, [0, 1, 2, 3]))
        pred = model.unstandardize_x(
            model.predictor.forward(Tensor(model.standardize_y(ys))).data)
        err = np.abs(pred - xs).mean()
        scale = np.abs(xs).mean()
        assert err / scale < baseline / scale + 0.01

    def test_cvae_mdn_objective_improves(self, desk_data):
        cfg = TrainConfig(model_kind="cvae_mdn", epochs=5, seed=3, **SMALL)
        ckpt = train(cfg, desk_data, [0, 1, 2, 3])
        drops = -np.diff(ckpt.log)
        slack = 0.05 * (max(ckpt.log) - min(ckpt.log))
        assert np.all(drops >= -slack)

    def test_cgan_trains_without_nan(self, desk_data):
        cfg = TrainConfig(model_kind="cgan_mlp", epochs=2, seed=4, **SMALL)
        ckpt = train(cfg, desk_data, [0, 1, 2, 3])
        assert len(ckpt.log) == 2
        assert np.all(np.isfinite(ckpt.log))

    def test_rf_checkpoint_predicts(self, desk_data):
        cfg = TrainConfig(model_kind="rf", n_trees=5, seed=6, **SMALL)
        model = restore_model(train(cfg, desk_data, [0, 1, 2, 3]))
        y = model.standardize_y(desk_data.ys[:3])
        pred = model.unstandardize_x(model.predictor.predict(y))
        assert pred.shape == (3, 10)

    def test_nan_abort_names_location(self, desk_data):
        from dataclasses import replace
        poisoned = replace(desk_data, ys=desk_data.ys.copy())
        victim = int(np.where(poisoned.folds != 4)[0][0])
        poisoned.ys[victim, 3] = np.nan
        cfg = TrainConfig(model_kind="mlp", epochs=3, seed=7, **SMALL)
        with pytest.raises(NumericError, match="epoch"):
            train(cfg, poisoned, [0, 1, 2, 3])


class TestHybridConsistency:
    def test_lambda_path_reproduces_plain_loss(self, desk_data):
        # with nothing hidden, the merged condition equals the raw input,
        # so the prediction term of the hybrid equals the plain objective
        from inverse_forge.models import hybrid_cvae_loss, cvae_elbo
        rng = np.random.default_rng(0)
        cfg = TrainConfig(model_kind="cvae_mdn", epochs=0, seed=8, **SMALL)
        ckpt = train(cfg, desk_data, [0, 1, 2, 3])
        model = restore_model(ckpt)
        yb = model.standardize_y(desk_data.ys[:10])
        xb = (desk_data.xs[:10] - model.x_mean) / model.x_std
        mask = np.zeros(model.y_dim)
        eps = rng.standard_normal((10, cfg.latent_dim))
        hybrid = hybrid_cvae_loss(model.imputer, model.predictor, yb, xb,
                                  mask, 1.0, eps)
        elbo = cvae_elbo(model.imputer, yb, mask, eps)
        plain = -mdn_nll(model.predictor, Tensor(yb), xb)
        assert float(hybrid.data) == pytest.approx(
            float(elbo.data) + float(plain.data), rel=1e-9)


class TestPersistence:
    def _ckpt(self, desk_data, kind="mdn"):
        cfg = TrainConfig(model_kind=kind, epochs=1, seed=10, **SMALL)
        return train(cfg, desk_data, [0, 1, 2, 3])

    def test_roundtrip_byte_identical(self, desk_data, tmp_path):
        ckpt = self._ckpt(desk_data)
        p1 = save(ckpt, str(tmp_path / "a"))
        again = load(str(tmp_path / "a"))
        p2 = save(again, str(tmp_path / "b"))
        assert open(p1, "rb").read() == open(p2, "rb").read()
        blob1 = open(os.path.join(os.path.dirname(p1), "weights.bin"), "rb").read()
        blob2 = open(os.path.join(os.path.dirname(p2), "weights.bin"), "rb").read()
        assert blob1 == blob2

    def test_restored_model_same_outputs(self, desk_data, tmp_path):
        ckpt = self._ckpt(desk_data)
        save(ckpt, str(tmp_path))
        m1 = restore_model(ckpt)
        m2 = restore_model(load(str(tmp_path)))
        y = m1.standardize_y(desk_data.ys[:4])
        a = m1.predictor.forward(Tensor(y))[1].data
        b = m2.predictor.forward(Tensor(y))[1].data
        assert np.array_equal(a, b)

    def test_rf_roundtrip(self, desk_data, tmp_path):
        cfg = TrainConfig(model_kind="rf", n_trees=3, seed=11, **SMALL)
        ckpt = train(cfg, desk_data, [0, 1, 2, 3])
        save(ckpt, str(tmp_path))
        m1 = restore_model(ckpt)
        m2 = restore_model(load(str(tmp_path)))
        y = m1.standardize_y(desk_data.ys[:5])
        assert np.array_equal(m1.predictor.predict(y), m2.predictor.predict(y))

    def test_version_mismatch(self, desk_data, tmp_path):
        save(self._ckpt(desk_data), str(tmp_path))
        mpath = tmp_path / "manifest.json"
        doc = json.loads(mpath.read_text())
        doc["version"] = 99
        mpath.write_text(json.dumps(doc))
        with pytest.raises(VersionError):
            load(str(tmp_path))

    def test_truncated_weights(self, desk_data, tmp_path):
        save(self._ckpt(desk_data), str(tmp_path))
        wpath = tmp_path / "weights.bin"
        wpath.write_bytes(wpath.read_bytes()[:-16])
        with pytest.raises(IntegrityError):
            load(str(tmp_path))

    def test_corrupted_weights(self, desk_data, tmp_path):
        save(self._ckpt(desk_data), str(tmp_path))
        wpath = tmp_path / "weights.bin"
        blob = bytearray(wpath.read_bytes())
        blob[0] ^= 0xFF
        wpath.write_bytes(bytes(blob))
        with pytest.raises(IntegrityError):
            load(str(tmp_path))
