import json

import numpy as np
import pytest

from inverse_forge.datagen import Mask, apply_mask, build_dataset
from inverse_forge.errors import (ConfigError, ContractError, DimensionError,
                                  DomainError)
from inverse_forge.inference import (Candidate, InferenceConfig, PredictionSet,
                                     designs_to_json, gumbel_select, impute,
                                     parse_query, predict_conditional,
                                     predict_designs)
from inverse_forge.models import MixtureDensity
from inverse_forge.simulator import TEMPERATURES, SimulatorSpec, simulate
from inverse_forge.tensor import Tensor
from inverse_forge.training import TrainConfig, restore_model, train

SMALL = dict(hidden=(32, 16), latent_dim=8, n_components=3, batch_size=25)


@pytest.fixture(scope="module")
def spec():
    return SimulatorSpec(seed=77)


@pytest.fixture(scope="module")
def desk_data(spec):
    return build_dataset("neighborhood", 150, spec, seed=31)


@pytest.fixture(scope="module")
def cvae_model(desk_data):
    cfg = TrainConfig(model_kind="cvae_mdn", epochs=10, seed=32, **SMALL)
    return restore_model(train(cfg, desk_data, [0, 1, 2, 3]))


@pytest.fixture(scope="module")
def cgan_model(desk_data):
    cfg = TrainConfig(model_kind="cgan_mlp", epochs=3, seed=33, **SMALL)
    return restore_model(train(cfg, desk_data, [0, 1, 2, 3]))


@pytest.fixture(scope="module")
def mlp_model(desk_data):
    cfg = TrainConfig(model_kind="mlp", epochs=10, seed=34, **SMALL)
    return restore_model(train(cfg, desk_data, [0, 1, 2, 3]))


@pytest.fixture
def half_mask():
    return Mask(ratio=0.5, hidden_phase_rows=(1, 3, 5, 7))


def _observed(desk_data, row, mask, spec):
    d = simulate(spec, desk_data.xs[row])
    v, h = apply_mask(d, mask)
    return v, h


class TestConfig:
    def test_bad_n(self):
        with pytest.raises(ConfigError):
            InferenceConfig(n_latent=0)

    def test_bad_modes(self):
        with pytest.raises(ConfigError):
            InferenceConfig(modes_per_mixture=0)


class TestImpute:
    def test_ratio_zero_empty(self, cvae_model, desk_data):
        v = desk_data.ys[0]
        out = impute(cvae_model, v, Mask(ratio=0.0), np.zeros(8))
        assert out.size == 0

    def test_fixed_z_repeatable(self, cvae_model, desk_data, half_mask, spec):
        v, _ = _observed(desk_data, 0, half_mask, spec)
        z = np.zeros(8)
        a = impute(cvae_model, v, half_mask, z)
        b = impute(cvae_model, v, half_mask, z)
        assert np.array_equal(a, b)
        assert len(a) == 4 * 31

    def test_cgan_path(self, cgan_model, desk_data, half_mask, spec):
        v, _ = _observed(desk_data, 1, half_mask, spec)
        out = impute(cgan_model, v, half_mask, np.zeros(8))
        assert len(out) == 4 * 31

    def test_plain_model_rejected(self, mlp_model, desk_data, half_mask, spec):
        v, _ = _observed(desk_data, 0, half_mask, spec)
        with pytest.raises(ContractError):
            impute(mlp_model, v, half_mask, np.zeros(8))

    def test_width_mismatch(self, cvae_model, desk_data, half_mask):
        with pytest.raises(DimensionError):
            impute(cvae_model, desk_data.ys[0], half_mask, np.zeros(8))


class TestPredictConditional:
    def test_n_one(self, cvae_model, desk_data, half_mask, spec):
        v, _ = _observed(desk_data, 2, half_mask, spec)
        pset = predict_conditional(cvae_model, v, half_mask,
                                   InferenceConfig(n_latent=1, seed=0))
        assert len(pset.records) == 1

    def test_weights_sum_to_one(self, cvae_model, desk_data, half_mask, spec):
        v, _ = _observed(desk_data, 3, half_mask, spec)
        pset = predict_conditional(cvae_model, v, half_mask,
                                   InferenceConfig(n_latent=5, seed=1))
        for rec in pset.records:
            assert rec.mixture.weights.sum() == pytest.approx(1.0, abs=1e-9)
            assert len(rec.z) == 8
            assert len(rec.h_bar) == 4 * 31

    def test_plain_with_mask_contract_error(self, mlp_model, desk_data,
                                            half_mask, spec):
        v, _ = _observed(desk_data, 0, half_mask, spec)
        with pytest.raises(ContractError, match="hybrid"):
            predict_conditional(mlp_model, v, half_mask, InferenceConfig())

    def test_plain_full_input(self, mlp_model, desk_data):
        pset = predict_conditional(mlp_model, desk_data.ys[0], None,
                                   InferenceConfig(n_latent=3, seed=2))
        assert len(pset.records) == 3
        means = [rec.mixture.means for rec in pset.records]
        assert np.array_equal(means[0], means[1])
        assert np.array_equal(means[0], means[2])


class TestGumbel:
    def test_zero_noise_argmax(self):
        mix = MixtureDensity(weights=[0.2, 0.5, 0.3],
                             means=np.zeros((3, 2)), variances=np.ones(3))
        assert gumbel_select(mix, np.zeros(3)) == 1

    def test_degenerate_weights(self):
        mix = MixtureDensity(weights=[1.0, 0.0, 0.0],
                             means=np.zeros((3, 2)), variances=np.ones(3))
        rng = np.random.default_rng(0)
        for _ in range(50):
            noise = -np.log(-np.log(rng.uniform(size=3)))
            assert gumbel_select(mix, noise) == 0

    def test_empirical_frequencies(self):
        alpha = np.array([0.6, 0.3, 0.1])
        mix = MixtureDensity(weights=alpha, means=np.zeros((3, 2)),
                             variances=np.ones(3))
        rng = np.random.default_rng(1)
        draws = 100_000
        u = rng.uniform(size=(draws, 3))
        noise = -np.log(-np.log(u))
        counts = np.zeros(3)
        for row in noise:
            counts[gumbel_select(mix, row)] += 1
        assert np.all(np.abs(counts / draws - alpha) < 0.01)

    def test_noise_length_checked(self):
        mix = MixtureDensity(weights=[1.0], means=np.zeros((1, 2)),
                             variances=np.ones(1))
        with pytest.raises(DimensionError):
            gumbel_select(mix, np.zeros(3))


class TestPredictDesigns:
    def test_candidate_count_and_validity(self, cvae_model, desk_data,
                                          half_mask, spec):
        v, _ = _observed(desk_data, 4, half_mask, spec)
        cfg = InferenceConfig(n_latent=20, seed=3)
        pset = predict_designs(cvae_model, v, half_mask, cfg)
        assert 1 <= len(pset.candidates) <= 20
        for c in pset.candidates:
            assert c.composition.sum() == pytest.approx(100.0, abs=1e-9)
            assert np.all(c.composition >= 0)
            assert 0 <= c.z_index < 20

    def test_deterministic(self, cvae_model, desk_data, half_mask, spec):
        v, _ = _observed(desk_data, 5, half_mask, spec)
        cfg = InferenceConfig(n_latent=10, seed=4)
        a = predict_designs(cvae_model, v, half_mask, cfg)
        b = predict_designs(cvae_model, v, half_mask, cfg)
        assert len(a.candidates) == len(b.candidates)
        for ca, cb in zip(a.candidates, b.candidates):
            assert np.array_equal(ca.composition, cb.composition)
            assert ca.log_density == cb.log_density

    def test_ranked_descending(self, cvae_model, desk_data, half_mask, spec):
        v, _ = _observed(desk_data, 6, half_mask, spec)
        pset = predict_designs(cvae_model, v, half_mask,
                               InferenceConfig(n_latent=15, seed=5))
        dens = [c.log_density for c in pset.candidates]
        assert dens == sorted(dens, reverse=True)

    def test_plain_mlp_single_candidate(self, mlp_model, desk_data):
        y = desk_data.ys[7]
        pset = predict_designs(mlp_model, y, None,
                               InferenceConfig(n_latent=20, seed=6))
        assert len(pset.candidates) == 1
        out = mlp_model.predictor.forward(
            Tensor(mlp_model.standardize_y(y).reshape(1, -1))).data[0]
        raw = mlp_model.unstandardize_x(out)
        expected = np.clip(raw, 0, None)
        expected *= 100.0 / expected.sum()
        assert np.allclose(pset.candidates[0].composition, expected, atol=1e-12)


class TestQueryFormat:
    def test_roundtrip(self, desk_data):
        labels = desk_data.labels
        doc = {"observed": {f"LIQUID@{TEMPERATURES[0]:g}": 0.25,
                            f"FCC@{TEMPERATURES[3]:g}": 0.5}}
        v, mask = parse_query(json.dumps(doc), labels, TEMPERATURES)
        assert len(v) == 2
        total = len(labels) * len(TEMPERATURES)
        assert mask.hidden_cells.sum() == total - 2
        assert v[0] == 0.25 and v[1] == 0.5

    def test_unknown_phase(self):
        doc = {"observed": {"BCC@0": 0.1}}
        with pytest.raises(DomainError):
            parse_query(json.dumps(doc), ("LIQUID", "FCC"), TEMPERATURES)

    def test_off_grid_temperature(self):
        doc = {"observed": {"FCC@33": 0.1}}
        with pytest.raises(DomainError):
            parse_query(json.dumps(doc), ("LIQUID", "FCC"), TEMPERATURES)

    def test_bad_top_key(self):
        with pytest.raises(ConfigError):
            parse_query(json.dumps({"cells": {}}), ("FCC",), TEMPERATURES)

    def test_json_output_parses(self):
        cand = Candidate(composition=np.array([50.0, 50.0]), log_density=-1.5,
                         z_index=0, component_index=2)
        text = designs_to_json(PredictionSet(records=[], candidates=[cand]))
        doc = json.loads(text)
        assert doc[0]["component_index"] == 2
        assert float(doc[0]["composition"][0]) == 50.0
