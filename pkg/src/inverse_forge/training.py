"""Training loops, k-fold protocol and checkpoint persistence.

All seven model kinds train through one entry point: the forest fits in
one shot, the networks run seeded mini-batch Adam until a relative-change
convergence criterion or the epoch cap.  Inputs and targets are
standardized per feature from the training folds only; hidden diagram
entries are zero-filled in standardized space (i.e. mean-filled).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .datagen import N_FOLDS, Dataset, Mask
from .errors import (ConfigError, ContractError, DomainError, IntegrityError,
                     NumericError, VersionError)
from .forest import ForestModel, forest_fit, tree_from_array, tree_to_array
from .models import (CGANImputer, CVAEImputer, MDNHead, MLPPredictor,
                     hybrid_cgan_loss, hybrid_cvae_loss, mdn_nll)
from .nn import AdamOptimizer
from .tensor import Tensor

CHECKPOINT_VERSION = 1
MODEL_KINDS = ("rf", "mlp", "mdn", "cvae_mlp", "cvae_mdn", "cgan_mlp", "cgan_mdn")
CONVERGENCE_RTOL = 1e-5
CONVERGENCE_WINDOW = 5
DIVERGENCE_FACTOR = 10.0


@dataclass
class TrainConfig:
    model_kind: str
    hidden: tuple = (500, 100, 50)
    latent_dim: int = 30
    n_components: int = 5
    lam: float = 1.0
    lr: float = 0.001
    batch_size: int = 50
    epochs: int = 200
    seed: int = 0
    mask_ratio: float = 0.5
    n_trees: int = 30
    max_features: int = 100

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model_kind!r}; "
                              f"choose one of {MODEL_KINDS}")
        self.hidden = tuple(int(h) for h in self.hidden)
        if any(h < 1 for h in self.hidden) or not self.hidden:
            raise ConfigError("hidden sizes must be positive")
        for name in ("latent_dim", "n_components", "lr", "batch_size",
                     "n_trees", "max_features"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.lam <= 0:
            raise ConfigError("lam must be > 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not (0.0 <= self.mask_ratio <= 1.0):
            raise ConfigError("mask_ratio must lie in [0, 1]")

    @property
    def is_hybrid(self) -> bool:
        return self.model_kind.startswith(("cvae", "cgan"))

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["hidden"] = list(self.hidden)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class Checkpoint:
    config: TrainConfig
    arrays: dict            # name -> float64 ndarray, insertion-ordered
    log: list               # per-epoch mean objective (minimized)
    meta: dict              # y_dim, x_dim, n_phases, labels
    version: int = CHECKPOINT_VERSION


@dataclass
class TrainedModel:
    """A restored model plus the standardization it was trained with."""

    config: TrainConfig
    predictor: object       # MDNHead | MLPPredictor | ForestModel
    imputer: object         # CVAEImputer | CGANImputer | None
    y_mean: np.ndarray
    y_std: np.ndarray
    x_mean: np.ndarray
    x_std: np.ndarray
    n_phases: int
    labels: tuple

    @property
    def y_dim(self) -> int:
        return len(self.y_mean)

    @property
    def x_dim(self) -> int:
        return len(self.x_mean)

    def standardize_y(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std

    def unstandardize_x(self, x_std: np.ndarray) -> np.ndarray:
        return np.asarray(x_std, dtype=np.float64) * self.x_std + self.x_mean


# ---------------------------------------------------------------------------
# folds and standardization
# ---------------------------------------------------------------------------

def kfold_split(n: int, k: int = N_FOLDS, seed: int = 0):
    """k disjoint, exhaustive index sets with sizes differing by <= 1."""
    if n < k:
        raise DomainError(f"cannot split {n} rows into {k} folds")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    return [np.sort(perm[i::k]) for i in range(k)]


def feature_stats(rows: np.ndarray):
    """(mean, std) per column; zero-variance columns get std 1."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    std[std < 1e-12] = 1.0
    return mean, std


# ---------------------------------------------------------------------------
# model construction
# ---------------------------------------------------------------------------

def _build_networks(cfg: TrainConfig, y_dim: int, x_dim: int,
                    rng: np.random.Generator):
    """(predictor, imputer) freshly initialized from the given generator."""
    if cfg.model_kind.endswith("mdn"):
        predictor = MDNHead(rng, y_dim, x_dim, cfg.n_components, cfg.hidden)
    else:
        predictor = MLPPredictor(rng, y_dim, x_dim, cfg.hidden)
    imputer = None
    if cfg.model_kind.startswith("cvae"):
        imputer = CVAEImputer(rng, y_dim, cfg.latent_dim, cfg.hidden)
    elif cfg.model_kind.startswith("cgan"):
        imputer = CGANImputer(rng, y_dim, cfg.latent_dim, cfg.hidden)
    return predictor, imputer


def _network_arrays(predictor, imputer) -> dict:
    arrays = {}
    for i, p in enumerate(predictor.params()):
        arrays[f"predictor.{i:03d}"] = p.data
    if imputer is not None:
        for i, p in enumerate(_imputer_param_list(imputer)):
            arrays[f"imputer.{i:03d}"] = p.data
    return arrays


def _forest_arrays(model: ForestModel) -> dict:
    arrays = {"forest.shape": np.array([model.n_features, model.out_dim],
                                       dtype=np.float64)}
    for i, tree in enumerate(model.trees):
        arrays[f"forest.tree{i:03d}"] = tree_to_array(tree, model.out_dim)
    return arrays


def _imputer_param_list(imputer):
    if isinstance(imputer, CGANImputer):
        return imputer.gen_params() + imputer.disc_params()
    return imputer.params()


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _zero_grads(params):
    for p in params:
        p.grad = None


def _converged(log) -> bool:
    """True once 5 consecutive per-epoch relative changes stay below 1e-5."""
    if len(log) < CONVERGENCE_WINDOW + 1:
        return False
    window = log[-(CONVERGENCE_WINDOW + 1):]
    for prev, cur in zip(window, window[1:]):
        if abs(cur - prev) / max(abs(prev), 1e-12) >= CONVERGENCE_RTOL:
            return False
    return True


def _sample_masks(n_rows: int, ratio: float, n_phases: int, n_temps: int,
                  rng: np.random.Generator) -> np.ndarray:
    return np.stack([Mask.random_rows(ratio, n_phases, rng).indicator(n_phases, n_temps)
                     for _ in range(n_rows)])


def train(cfg: TrainConfig, data: Dataset, train_folds) -> Checkpoint:
    """Fit one model on the rows whose fold id is in train_folds."""
    train_folds = sorted(int(f) for f in np.atleast_1d(np.asarray(train_folds)))
    rows = np.where(np.isin(data.folds, train_folds))[0]
    if len(rows) == 0:
        raise ContractError(f"no rows in folds {train_folds}")
    ys, xs = data.ys[rows], data.xs[rows]
    y_mean, y_std = feature_stats(ys)
    x_mean, x_std = feature_stats(xs)
    ys_s = (ys - y_mean) / y_std
    xs_s = (xs - x_mean) / x_std
    meta = {"y_dim": ys.shape[1], "x_dim": xs.shape[1],
            "n_phases": data.n_phases, "labels": list(data.labels),
            "train_folds": train_folds}
    norm = {"norm.y_mean": y_mean, "norm.y_std": y_std,
            "norm.x_mean": x_mean, "norm.x_std": x_std}

    if cfg.model_kind == "rf":
        forest = forest_fit(ys_s, xs_s, n_trees=cfg.n_trees,
                            max_features=cfg.max_features, seed=cfg.seed)
        arrays = dict(norm)
        arrays.update(_forest_arrays(forest))
        return Checkpoint(config=cfg, arrays=arrays, log=[], meta=meta)

    rng = np.random.default_rng(cfg.seed)
    predictor, imputer = _build_networks(cfg, ys.shape[1], xs.shape[1], rng)
    n_temps = ys.shape[1] // data.n_phases
    log = []
    if cfg.model_kind.startswith("cgan"):
        gen_opt = AdamOptimizer(imputer.gen_params() + predictor.params(), lr=cfg.lr)
        disc_opt = AdamOptimizer(imputer.disc_params(), lr=cfg.lr)
        all_params = gen_opt.params + disc_opt.params
    else:
        extra = imputer.params() if imputer is not None else []
        opt = AdamOptimizer(predictor.params() + extra, lr=cfg.lr)
        all_params = opt.params

    best = np.inf
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(rows))
        batch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            yb, xb = ys_s[batch], xs_s[batch]
            b = len(batch)
            if cfg.model_kind == "mlp":
                # 0.5 * summed squared error: -log_prob minus its constant,
                # so the relative-change stop sees the improvable part only
                out = predictor.forward(Tensor(yb))
                loss = (0.5 * ((out - Tensor(xb)) ** 2.0).sum(
                    axis=1, keepdims=True)).mean()
            elif cfg.model_kind == "mdn":
                loss = mdn_nll(predictor, Tensor(yb), xb)
            elif cfg.model_kind.startswith("cvae"):
                masks = _sample_masks(b, cfg.mask_ratio, data.n_phases, n_temps, rng)
                eps = rng.standard_normal((b, cfg.latent_dim))
                loss = -hybrid_cvae_loss(imputer, predictor, yb, xb, masks,
                                         cfg.lam, eps)
            else:
                masks = _sample_masks(b, cfg.mask_ratio, data.n_phases, n_temps, rng)
                z = rng.standard_normal((b, cfg.latent_dim))
                disc_loss, joint = hybrid_cgan_loss(imputer, predictor, yb, xb,
                                                    masks, cfg.lam, z)
                loss = -joint
                _zero_grads(all_params)
                disc_loss.backward()
                disc_grads = [p.grad.copy() if p.grad is not None else None
                              for p in disc_opt.params]
            val = float(loss.data)
            if not np.isfinite(val):
                raise NumericError(
                    f"non-finite objective at epoch {epoch}, batch {start // cfg.batch_size}")
            _zero_grads(all_params)
            loss.backward()
            if cfg.model_kind.startswith("cgan"):
                gen_opt.step()
                for p, g in zip(disc_opt.params, disc_grads):
                    p.grad = g
                disc_opt.step()
            else:
                opt.step()
            batch_losses.append(val)
        epoch_loss = float(np.mean(batch_losses))
        log.append(epoch_loss)
        if epoch_loss > best + DIVERGENCE_FACTOR * max(abs(best), 1.0):
            raise NumericError(
                f"objective diverged at epoch {epoch}: {epoch_loss:.4g} "
                f"vs best {best:.4g}")
        best = min(best, epoch_loss)
        if _converged(log):
            break

    arrays = dict(norm)
    arrays.update(_network_arrays(predictor, imputer))
    return Checkpoint(config=cfg, arrays=arrays, log=log, meta=meta)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save(ckpt: Checkpoint, out_dir: str) -> str:
    """Write manifest.json + weights.bin; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    order = list(ckpt.arrays)
    blob = b"".join(np.asarray(ckpt.arrays[name], dtype="<f8").tobytes()
                    for name in order)
    digest = hashlib.sha256(blob).hexdigest()
    manifest = {
        "version": ckpt.version,
        "config": ckpt.config.to_dict(),
        "meta": ckpt.meta,
        "log": [repr(float(v)) for v in ckpt.log],
        "arrays": [{"name": name, "shape": list(np.asarray(ckpt.arrays[name]).shape)}
                   for name in order],
        "sha256": digest,
    }
    with open(os.path.join(out_dir, "weights.bin"), "wb") as fh:
        fh.write(blob)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load(path: str) -> Checkpoint:
    """Read a checkpoint directory (or its manifest.json path)."""
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.json")
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise VersionError(
            f"checkpoint version {manifest.get('version')} != {CHECKPOINT_VERSION}")
    with open(os.path.join(os.path.dirname(path), "weights.bin"), "rb") as fh:
        blob = fh.read()
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest["sha256"]:
        raise IntegrityError("weights.bin does not match its recorded checksum")
    total = sum(int(np.prod(e["shape"])) for e in manifest["arrays"])
    if len(blob) != 8 * total:
        raise IntegrityError(
            f"weights.bin holds {len(blob)} bytes, expected {8 * total}")
    flat = np.frombuffer(blob, dtype="<f8")
    arrays, i = {}, 0
    for entry in manifest["arrays"]:
        n = int(np.prod(entry["shape"]))
        arrays[entry["name"]] = flat[i:i + n].reshape(entry["shape"]).copy()
        i += n
    cfg = TrainConfig.from_dict(manifest["config"])
    return Checkpoint(config=cfg, arrays=arrays,
                      log=[float(v) for v in manifest["log"]],
                      meta=manifest["meta"], version=manifest["version"])


def restore_model(ckpt: Checkpoint) -> TrainedModel:
    """Rebuild a usable model from checkpoint arrays."""
    cfg = ckpt.config
    y_dim, x_dim = ckpt.meta["y_dim"], ckpt.meta["x_dim"]
    if cfg.model_kind == "rf":
        shape = ckpt.arrays["forest.shape"]
        out_dim = int(shape[1])
        trees = [tree_from_array(ckpt.arrays[name], out_dim)
                 for name in sorted(ckpt.arrays) if name.startswith("forest.tree")]
        predictor = ForestModel(trees, int(shape[0]), out_dim)
        imputer = None
    else:
        rng = np.random.default_rng(cfg.seed)
        predictor, imputer = _build_networks(cfg, y_dim, x_dim, rng)
        for i, p in enumerate(predictor.params()):
            p.data = ckpt.arrays[f"predictor.{i:03d}"].reshape(p.data.shape).copy()
        if imputer is not None:
            for i, p in enumerate(_imputer_param_list(imputer)):
                p.data = ckpt.arrays[f"imputer.{i:03d}"].reshape(p.data.shape).copy()
    return TrainedModel(
        config=cfg, predictor=predictor, imputer=imputer,
        y_mean=ckpt.arrays["norm.y_mean"], y_std=ckpt.arrays["norm.y_std"],
        x_mean=ckpt.arrays["norm.x_mean"], x_std=ckpt.arrays["norm.x_std"],
        n_phases=ckpt.meta["n_phases"], labels=tuple(ckpt.meta["labels"]))
