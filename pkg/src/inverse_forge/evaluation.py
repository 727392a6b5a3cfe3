"""Measurement suite: composition error metrics, model evaluation over
folds and mask ratios, closed-loop re-simulation checks, simulator-based
search baselines, PCA projections and file reports.

Composition errors follow two complementary definitions: a relative
error over the elements truly present in the alloy, and the spurious
predicted mass on elements that are truly absent.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import gp
from .datagen import AUX_BOX, AUX_CAP, Mask, apply_mask
from .errors import ContractError, DomainError
from .inference import InferenceConfig, predict_designs
from .simulator import simulate
from .training import Checkpoint, restore_model

NONZERO_EPS = 1e-9
PHASE_EPS = 1e-6

GA_POPULATION = 20
GA_TOURNAMENT = 3
GA_BLEND_ALPHA = 0.5
GA_MUTATION_PROB = 0.2
GA_MUTATION_SIGMA = 0.02  # fraction of the per-gene range


# ---------------------------------------------------------------------------
# error metrics
# ---------------------------------------------------------------------------

def composition_errors(x_true, x_pred):
    """(relative error over nonzero elements, mean mass on zero elements).

    The second value is None when the true composition has no zero
    elements at all.
    """
    x_true = np.asarray(x_true, dtype=np.float64)
    x_pred = np.asarray(x_pred, dtype=np.float64)
    if x_true.shape != x_pred.shape:
        raise DomainError(f"shape mismatch {x_true.shape} vs {x_pred.shape}")
    if np.any(x_true < 0):
        raise DomainError("true composition has negative entries")
    nonzero = x_true > NONZERO_EPS
    if not nonzero.any():
        raise DomainError("true composition is all zeros")
    rel = float(np.mean(np.abs(x_pred[nonzero] - x_true[nonzero]) / x_true[nonzero]))
    zero = ~nonzero
    absolute = float(np.mean(x_pred[zero])) if zero.any() else None
    return rel, absolute


@dataclass
class ErrorReport:
    """Mean +- std of one error variant, with the per-fold means behind it."""

    variant: str            # "min" | "mean" | "max"
    relative_mean: float
    relative_std: float
    absolute_mean: float
    absolute_std: float
    per_fold_relative: list
    per_fold_absolute: list


@dataclass
class FoldEvaluation:
    """Per-row error variants for one test fold."""

    fold: int
    rel_min: np.ndarray
    rel_mean: np.ndarray
    rel_max: np.ndarray
    abs_min: np.ndarray
    abs_mean: np.ndarray
    abs_max: np.ndarray

    def variant(self, name: str):
        return getattr(self, f"rel_{name}"), getattr(self, f"abs_{name}")


def evaluate_model(ckpt: Checkpoint, data, test_fold: int, mask_ratio: float,
                   cfg: InferenceConfig) -> FoldEvaluation:
    """Candidate errors per held-out row: min/mean/max over the prediction set.

    Plain (non-hybrid) models see hidden entries replaced by the
    training-set mean; hybrids impute them.
    """
    model = restore_model(ckpt)
    if data.ys.shape[1] != model.y_dim or data.xs.shape[1] != model.x_dim:
        raise ContractError(
            f"dataset dims ({data.ys.shape[1]}, {data.xs.shape[1]}) do not "
            f"match checkpoint ({model.y_dim}, {model.x_dim})")
    rows = np.where(data.folds == test_fold)[0]
    if len(rows) == 0:
        raise ContractError(f"fold {test_fold} has no rows")
    rng = np.random.default_rng(cfg.seed)
    n_temps = model.y_dim // model.n_phases
    out = {k: [] for k in ("rel_min", "rel_mean", "rel_max",
                           "abs_min", "abs_mean", "abs_max")}
    for row in rows:
        y, x_true = data.ys[row], data.xs[row]
        if mask_ratio > 0:
            mask = Mask.random_rows(mask_ratio, model.n_phases, rng)
            ind = mask.indicator(model.n_phases, n_temps).astype(bool)
            v = y[~ind]
            if model.imputer is None:
                # mean-fill the hidden entries and present a full input
                filled = y.copy()
                filled[ind] = model.y_mean[ind]
                pset = predict_designs(model, filled, None, cfg)
            else:
                pset = predict_designs(model, v, mask, cfg)
        else:
            pset = predict_designs(model, y, None, cfg)
        rels, absolutes = [], []
        for cand in pset.candidates:
            rel, absolute = composition_errors(x_true, cand.composition)
            rels.append(rel)
            if absolute is not None:
                absolutes.append(absolute)
        out["rel_min"].append(min(rels))
        out["rel_mean"].append(float(np.mean(rels)))
        out["rel_max"].append(max(rels))
        if absolutes:
            out["abs_min"].append(min(absolutes))
            out["abs_mean"].append(float(np.mean(absolutes)))
            out["abs_max"].append(max(absolutes))
    return FoldEvaluation(fold=test_fold,
                          **{k: np.array(v) for k, v in out.items()})


def crossfold_report(evals, variant: str) -> ErrorReport:
    """Mean +- std across folds of one error variant."""
    rel_folds, abs_folds = [], []
    for ev in evals:
        rel, absolute = ev.variant(variant)
        rel_folds.append(float(np.mean(rel)))
        abs_folds.append(float(np.mean(absolute)) if len(absolute) else 0.0)
    return ErrorReport(
        variant=variant,
        relative_mean=float(np.mean(rel_folds)),
        relative_std=float(np.std(rel_folds)),
        absolute_mean=float(np.mean(abs_folds)),
        absolute_std=float(np.std(abs_folds)),
        per_fold_relative=rel_folds,
        per_fold_absolute=abs_folds)


def missing_ratio_sweep(ckpt: Checkpoint, data, test_fold: int,
                        ratios, cfg: InferenceConfig):
    """[(ratio, mean min-relative-error)] over the given mask ratios."""
    curve = []
    for ratio in ratios:
        ev = evaluate_model(ckpt, data, test_fold, float(ratio), cfg)
        curve.append((float(ratio), float(np.mean(ev.rel_min))))
    return curve


# ---------------------------------------------------------------------------
# closed-loop verification
# ---------------------------------------------------------------------------

@dataclass
class PhaseErrors:
    per_phase: dict         # label -> min relative error over candidates
    average: float


def closed_loop_verify(sim_spec, candidates, mask, y_true,
                       labels=None) -> PhaseErrors:
    """Re-simulate candidates and score the observed phases against y_true.

    Each phase row is scaled to the global [0, 1] range of its true
    values; the relative error averages over the entries that are
    nonzero after scaling.  Phases entirely hidden by the mask, or with
    no nonzero entries, are skipped.
    """
    y_true = np.asarray(y_true, dtype=np.float64)
    n_phases = sim_spec.n_phases
    n_temps = len(y_true) // n_phases
    labels = list(labels if labels is not None else sim_spec.labels)
    ind = (mask.indicator(n_phases, n_temps).astype(bool) if mask is not None
           else np.zeros(len(y_true), dtype=bool))
    resims = [simulate(sim_spec, x).flat() for x in candidates]
    per_phase = {}
    for p, label in enumerate(labels):
        sl = slice(p * n_temps, (p + 1) * n_temps)
        observed = ~ind[sl]
        true_row = y_true[sl]
        lo, hi = true_row.min(), true_row.max()
        scale = hi - lo
        if not observed.any() or scale < PHASE_EPS:
            continue
        true_s = (true_row - lo) / scale
        use = observed & (true_s > PHASE_EPS)
        if not use.any():
            continue
        best = np.inf
        for sim_flat in resims:
            row_s = (sim_flat[sl] - lo) / scale
            err = float(np.mean(np.abs(row_s[use] - true_s[use]) / true_s[use]))
            best = min(best, err)
        per_phase[label] = best
    average = float(np.mean(list(per_phase.values()))) if per_phase else 0.0
    return PhaseErrors(per_phase=per_phase, average=average)


# ---------------------------------------------------------------------------
# simulator-based search baselines
# ---------------------------------------------------------------------------

@dataclass
class SearchTrace:
    method: str             # "random" | "ga" | "bo"
    steps: list             # [(simulator_calls, best_error)]
    budget: int
    y_target: np.ndarray = field(default=None)

    def best_error(self) -> float:
        return self.steps[-1][1] if self.steps else np.inf


def _observed_target_objective(sim_spec, y_target, mask):
    y_target = np.asarray(y_target, dtype=np.float64)
    n_temps = len(y_target) // sim_spec.n_phases
    ind = (mask.indicator(sim_spec.n_phases, n_temps).astype(bool)
           if mask is not None else np.zeros(len(y_target), dtype=bool))
    use = (~ind) & (y_target > PHASE_EPS)
    if not use.any():
        raise ContractError("target has no observed nonzero entries to match")

    def objective(aux):
        x = np.concatenate([aux, [100.0 - aux.sum()]])
        sim = simulate(sim_spec, x).flat()
        return float(np.mean(np.abs(sim[use] - y_target[use]) / y_target[use]))

    return objective


def _sample_aux(rng: np.random.Generator) -> np.ndarray:
    while True:
        aux = rng.uniform(0.0, AUX_BOX, size=9)
        if aux.sum() <= AUX_CAP:
            return aux


def _clip_aux(aux: np.ndarray) -> np.ndarray:
    aux = np.clip(aux, 0.0, AUX_BOX)
    total = aux.sum()
    if total > AUX_CAP:
        aux = aux * (AUX_CAP / total)
    return aux


def _trace_from_values(method, values, budget, y_target) -> SearchTrace:
    steps, best = [], np.inf
    for i, val in enumerate(values, start=1):
        best = min(best, val)
        steps.append((i, best))
    return SearchTrace(method=method, steps=steps, budget=budget,
                       y_target=y_target)


def _ga_search(objective, budget, rng):
    values = []

    def evaluate(aux):
        val = objective(aux)
        values.append(val)
        return val

    pop = [_sample_aux(rng) for _ in range(min(GA_POPULATION, budget))]
    fitness = [evaluate(a) for a in pop]
    while len(values) < budget:
        order = np.argsort(fitness)
        elite = pop[order[0]].copy()
        next_pop, next_fit = [elite], [fitness[order[0]]]
        while len(next_pop) < len(pop) and len(values) < budget:
            parents = []
            for _ in range(2):
                contenders = rng.integers(0, len(pop), size=GA_TOURNAMENT)
                parents.append(pop[min(contenders, key=lambda i: fitness[i])])
            u = rng.uniform(-GA_BLEND_ALPHA, 1.0 + GA_BLEND_ALPHA, size=9)
            child = u * parents[0] + (1.0 - u) * parents[1]
            mutate = rng.uniform(size=9) < GA_MUTATION_PROB
            child = child + mutate * rng.normal(
                0.0, GA_MUTATION_SIGMA * AUX_BOX, size=9)
            child = _clip_aux(child)
            next_pop.append(child)
            next_fit.append(evaluate(child))
        pop, fitness = next_pop, next_fit
    return values


def search_baseline(method: str, sim_spec, y_target, mask, budget: int,
                    seed: int = 0) -> SearchTrace:
    """Best-so-far error per simulator call for one search strategy."""
    if method not in ("random", "ga", "bo"):
        raise DomainError(f"unknown search method {method!r}")
    y_target = np.asarray(y_target, dtype=np.float64)
    if budget < 1:
        return SearchTrace(method=method, steps=[], budget=budget,
                           y_target=y_target)
    rng = np.random.default_rng(seed)
    objective = _observed_target_objective(sim_spec, y_target, mask)
    if method == "random":
        values = [objective(_sample_aux(rng)) for _ in range(budget)]
    elif method == "ga":
        values = _ga_search(objective, budget, rng)
    else:
        trajectory = gp.minimize(objective, _sample_aux, budget, rng)
        values = [val for _, val in trajectory]
    return _trace_from_values(method, values, budget, y_target)


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

@dataclass
class PCAResult:
    mean: np.ndarray
    components: np.ndarray          # [dims x features]
    explained_variance: np.ndarray  # ratio per kept component
    projected: np.ndarray           # [rows x dims]

    def project(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return (points - self.mean) @ self.components.T

    def reconstruct(self, projected: np.ndarray) -> np.ndarray:
        return np.atleast_2d(projected) @ self.components + self.mean


def pca_project(points: np.ndarray, dims: int = 2) -> PCAResult:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if dims > points.shape[1]:
        raise DomainError(f"cannot keep {dims} components of "
                          f"{points.shape[1]}-dimensional data")
    if len(points) < dims:
        raise DomainError("need at least as many rows as components")
    mean = points.mean(axis=0)
    centered = points - mean
    cov = centered.T @ centered / max(len(points) - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:dims]
    components = eigvecs[:, order].T
    total = eigvals.sum()
    explained = eigvals[order] / total if total > 0 else np.zeros(dims)
    return PCAResult(mean=mean, components=components,
                     explained_variance=explained,
                     projected=centered @ components.T)


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

_CSV_SPECS = {
    "tableA": ("tableA.csv",
               ["method", "relative_mean", "relative_std",
                "absolute_mean", "absolute_std"]),
    "tableB": ("tableB.csv",
               ["method", "variant", "relative_mean", "relative_std",
                "absolute_mean", "absolute_std"]),
    "phase_errors": ("phase_errors.csv", ["phase", "min_relative_error"]),
    "search_trace": ("search_trace.csv",
                     ["method", "simulator_calls", "best_error"]),
    "sweep": ("sweep.csv", ["ratio", "min_relative_error"]),
    "pca": ("pca.csv", ["kind", "pc1", "pc2"]),
}


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    return str(value)


def _write_csv(path: str, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(row[col]) for col in header) + "\n")


def _figures(results, out_dir):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "inverse-forge"
    made = []

    def finish(fig, name):
        path = os.path.join(out_dir, name)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        made.append(name)

    if results.get("sweep"):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        xs = [row["ratio"] for row in results["sweep"]]
        ys = [row["min_relative_error"] for row in results["sweep"]]
        ax.plot(xs, ys, marker="o", label="min relative error")
        ax.set_xlabel("hidden fraction of phases")
        ax.set_ylabel("relative error")
        ax.legend()
        fig.tight_layout()
        finish(fig, "sweep.svg")
    if results.get("search_trace"):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        by_method = {}
        for row in results["search_trace"]:
            by_method.setdefault(row["method"], []).append(
                (row["simulator_calls"], row["best_error"]))
        for method, steps in sorted(by_method.items()):
            steps.sort()
            ax.plot([s[0] for s in steps], [s[1] for s in steps], label=method)
        ax.set_xlabel("simulator calls")
        ax.set_ylabel("best relative error")
        ax.legend()
        fig.tight_layout()
        finish(fig, "search_trace.svg")
    if results.get("pca"):
        fig, ax = plt.subplots(figsize=(5, 4))
        by_kind = {}
        for row in results["pca"]:
            by_kind.setdefault(row["kind"], []).append((row["pc1"], row["pc2"]))
        for kind, pts in sorted(by_kind.items()):
            arr = np.array(pts)
            ax.scatter(arr[:, 0], arr[:, 1], s=12, label=kind)
        ax.set_xlabel("first principal component")
        ax.set_ylabel("second principal component")
        ax.legend()
        fig.tight_layout()
        finish(fig, "pca.svg")
    return made


def emit_report(results: dict, out_dir: str):
    """Write every table present in `results` as CSV, plus SVG figures
    and a manifest with seeds, config hashes and the package version."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for key, (name, header) in _CSV_SPECS.items():
        if key in results:
            _write_csv(os.path.join(out_dir, name), header, results[key])
            written.append(name)
    written.extend(_figures(results, out_dir))
    from . import __version__
    config_blob = json.dumps(results.get("configs", {}), sort_keys=True)
    manifest = {
        "version": __version__,
        "seeds": results.get("seeds", {}),
        "config_sha256": hashlib.sha256(config_blob.encode()).hexdigest(),
        "files": sorted(written),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [os.path.join(out_dir, name) for name in sorted(written)]
