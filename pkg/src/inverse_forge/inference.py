"""Prediction pipeline: impute hidden diagram entries, form per-latent
mixtures, and extract ranked candidate compositions via Gumbel sampling.

All conditioning happens in the standardized feature space the model was
trained in; candidate compositions are mapped back to raw percent units
and post-processed (clip negatives, renormalize to 100).  Nothing here
ever calls the forward simulator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .datagen import Mask
from .errors import ConfigError, ContractError, DimensionError, DomainError
from .forest import ForestModel
from .models import CVAEImputer, MDNHead, MixtureDensity, mdn_log_density
from .tensor import Tensor
from .training import TrainedModel

DEDUP_TOL = 1e-6
LOG_CLAMP = -1e30


@dataclass
class InferenceConfig:
    n_latent: int = 20        # latent draws per query
    seed: int = 0
    modes_per_mixture: int = 1

    def __post_init__(self):
        if self.n_latent < 1:
            raise ConfigError("n_latent must be >= 1")
        if self.modes_per_mixture < 1:
            raise ConfigError("modes_per_mixture must be >= 1")


@dataclass
class PredictionRecord:
    z: np.ndarray             # latent draw (empty for plain models)
    h_bar: np.ndarray         # imputed hidden entries, raw units
    mixture: MixtureDensity   # over standardized composition space


@dataclass
class Candidate:
    composition: np.ndarray   # raw percent, clipped and renormalized
    log_density: float        # mixture log-density, standardized space
    z_index: int
    component_index: int


@dataclass
class PredictionSet:
    records: list
    candidates: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# conditioning helpers
# ---------------------------------------------------------------------------

def _indicator(model: TrainedModel, mask) -> np.ndarray:
    if mask is None:
        return np.zeros(model.y_dim)
    n_temps = model.y_dim // model.n_phases
    ind = mask.indicator(model.n_phases, n_temps)
    if len(ind) != model.y_dim:
        raise DimensionError(
            f"mask covers {len(ind)} cells, model expects {model.y_dim}")
    return ind


def _observed_standardized(model: TrainedModel, v: np.ndarray,
                           ind: np.ndarray) -> np.ndarray:
    """Full-layout standardized vector with hidden entries mean-filled."""
    obs = ind < 0.5
    v = np.asarray(v, dtype=np.float64)
    if len(v) != obs.sum():
        raise DimensionError(
            f"observed vector has {len(v)} entries, mask exposes {int(obs.sum())}")
    full = np.zeros(model.y_dim)
    full[obs] = (v - model.y_mean[obs]) / model.y_std[obs]
    return full


def _decoder_mean(model: TrainedModel, v_filled: np.ndarray, ind: np.ndarray,
                  z: np.ndarray) -> np.ndarray:
    """Full-layout reconstruction mean from the imputer, standardized."""
    z2 = z.reshape(1, -1)
    vf = v_filled.reshape(1, -1)
    if isinstance(model.imputer, CVAEImputer):
        return model.imputer.impute_mean(vf, ind, z2).data[0]
    return model.imputer.generate(Tensor(z2), vf, ind).data[0]


def impute(model: TrainedModel, v: np.ndarray, mask, z: np.ndarray) -> np.ndarray:
    """Hidden-part reconstruction h-bar in raw units for one latent draw."""
    if model.imputer is None:
        raise ContractError(
            f"model kind {model.config.model_kind!r} has no imputer; "
            "use a cvae_* or cgan_* model")
    ind = _indicator(model, mask)
    hidden = ind > 0.5
    if not hidden.any():
        return np.empty(0)
    v_filled = _observed_standardized(model, v, ind)
    mu = _decoder_mean(model, v_filled, ind, np.asarray(z, dtype=np.float64))
    return mu[hidden] * model.y_std[hidden] + model.y_mean[hidden]


def _mixture_at(model: TrainedModel, cond_std: np.ndarray) -> MixtureDensity:
    if isinstance(model.predictor, ForestModel):
        out = model.predictor.predict(cond_std.reshape(1, -1))[0]
        return MixtureDensity(weights=np.array([1.0]), means=out.reshape(1, -1),
                              variances=np.array([1e-12]))
    return model.predictor.mixture_for(cond_std)


def predict_conditional(model: TrainedModel, v: np.ndarray, mask,
                        cfg: InferenceConfig, rng=None) -> PredictionSet:
    """One mixture per latent draw; plain models require a full input."""
    ind = _indicator(model, mask)
    hidden = ind > 0.5
    if model.imputer is None and hidden.any():
        raise ContractError(
            f"plain model kind {model.config.model_kind!r} cannot accept a "
            "partial diagram; use a cvae_* or cgan_* hybrid model")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    v_filled = _observed_standardized(model, v, ind)
    latent_dim = model.config.latent_dim
    records = []
    for _ in range(cfg.n_latent):
        if model.imputer is not None and hidden.any():
            z = rng.standard_normal(latent_dim)
            mu = _decoder_mean(model, v_filled, ind, z)
            cond = np.where(hidden, mu, v_filled)
            h_bar = mu[hidden] * model.y_std[hidden] + model.y_mean[hidden]
        else:
            z = np.empty(0)
            cond = v_filled
            h_bar = np.empty(0)
        records.append(PredictionRecord(z=z, h_bar=h_bar,
                                        mixture=_mixture_at(model, cond)))
    return PredictionSet(records=records)


# ---------------------------------------------------------------------------
# mode extraction
# ---------------------------------------------------------------------------

def gumbel_select(mix: MixtureDensity, noise: np.ndarray) -> int:
    """argmax_k (ln alpha_k + noise_k) with zero weights clamped out."""
    noise = np.asarray(noise, dtype=np.float64)
    if len(noise) != mix.n_components:
        raise DimensionError(
            f"noise length {len(noise)} != {mix.n_components} components")
    if np.all(mix.weights == 0):
        raise ContractError("all mixture weights are zero")
    with np.errstate(divide="ignore"):
        log_w = np.where(mix.weights > 0,
                         np.log(np.maximum(mix.weights, 1e-300)), LOG_CLAMP)
    return int(np.argmax(log_w + noise))


def _postprocess(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, None)
    total = x.sum()
    if total <= 0:
        raise DomainError("candidate composition collapsed to all zeros")
    return x * (100.0 / total)


def predict_designs(model: TrainedModel, v: np.ndarray, mask,
                    cfg: InferenceConfig) -> PredictionSet:
    """Ranked candidate compositions; zero simulator calls."""
    rng = np.random.default_rng(cfg.seed)
    pset = predict_conditional(model, v, mask, cfg, rng=rng)
    raw = []  # (std-space mean, record index, component index)
    for zi, rec in enumerate(pset.records):
        for _ in range(cfg.modes_per_mixture):
            u = rng.uniform(0.0, 1.0, size=rec.mixture.n_components)
            noise = -np.log(-np.log(u))
            k = gumbel_select(rec.mixture, noise)
            raw.append((rec.mixture.means[k], zi, k))
    kept = []
    for mean_std, zi, k in raw:
        if any(np.max(np.abs(mean_std - other)) < DEDUP_TOL
               for other, _, _ in kept):
            continue
        kept.append((mean_std, zi, k))
    candidates = []
    for mean_std, zi, k in kept:
        composition = _postprocess(
            mean_std * model.x_std + model.x_mean)
        log_density = mdn_log_density(pset.records[zi].mixture, mean_std)
        candidates.append(Candidate(composition=composition,
                                    log_density=log_density,
                                    z_index=zi, component_index=k))
    candidates.sort(key=lambda c: -c.log_density)
    pset.candidates = candidates
    return pset


# ---------------------------------------------------------------------------
# query/response formats
# ---------------------------------------------------------------------------

def parse_query(text: str, labels, temperatures):
    """JSON {"observed": {"<phase>@<temp>": value}} -> (v, Mask).

    Cells absent from the document are the hidden part.
    """
    doc = json.loads(text)
    if set(doc) != {"observed"}:
        raise ConfigError(f"query must hold exactly one key 'observed', got {sorted(doc)}")
    labels = list(labels)
    temperatures = np.asarray(temperatures, dtype=np.float64)
    n_temps = len(temperatures)
    total = len(labels) * n_temps
    flat = np.zeros(total)
    observed = np.zeros(total, dtype=bool)
    for key, value in doc["observed"].items():
        label, _, temp = key.rpartition("@")
        if label not in labels:
            raise DomainError(f"unknown phase label {label!r} in query key {key!r}")
        ti = np.where(np.isclose(temperatures, float(temp)))[0]
        if len(ti) == 0:
            raise DomainError(f"temperature {temp} not on the grid in key {key!r}")
        i = labels.index(label) * n_temps + int(ti[0])
        flat[i] = float(value)
        observed[i] = True
    mask = Mask(ratio=1.0 - observed.mean(), hidden_cells=~observed)
    return flat[observed], mask


def designs_to_json(pset: PredictionSet) -> str:
    out = [{"composition": [repr(float(v)) for v in c.composition],
            "log_density": repr(float(c.log_density)),
            "z_index": c.z_index,
            "component_index": c.component_index}
           for c in pset.candidates]
    return json.dumps(out, indent=2, sort_keys=True) + "\n"
