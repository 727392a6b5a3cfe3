"""Dataset construction against the synthetic simulator.

Two dataset kinds: perturbation neighborhoods of the 30 base alloys,
and compositions harvested from a Bayesian-optimization search for a
target FCC property.  Masks split diagrams into observed and hidden
parts for the partial-specification experiments.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import gp
from .errors import ContractError, DomainError
from .simulator import (AL_INDEX, N_TEMPS, TEMPERATURES, PhaseDiagram,
                        SimulatorSpec, base_alloys, fcc_extract, simulate,
                        swap_pair, validate_composition, ELEMENTS)

N_FOLDS = 5
AUX_CAP = 15.0      # max total auxiliary mass for searched compositions
AUX_BOX = 5.0       # per-element search bound
PERTURB_PER_POINT = 15


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

@dataclass
class Mask:
    """Hidden/observed split of a phase diagram.

    Row mode hides whole phase rows; the per-cell mode (used by the
    missing-ratio sweep at fine ratios) hides individual cells.
    """

    ratio: float
    hidden_phase_rows: tuple = ()
    hidden_cells: np.ndarray = None  # flat boolean, set only in per-cell mode

    @classmethod
    def random_rows(cls, ratio: float, n_phases: int, rng: np.random.Generator):
        n_hidden = int(round(ratio * n_phases))
        rows = tuple(sorted(rng.choice(n_phases, size=n_hidden, replace=False).tolist()))
        return cls(ratio=ratio, hidden_phase_rows=rows)

    @classmethod
    def random_cells(cls, ratio: float, n_phases: int, n_temps: int,
                     rng: np.random.Generator):
        total = n_phases * n_temps
        n_hidden = int(round(ratio * total))
        idx = rng.choice(total, size=n_hidden, replace=False)
        flat = np.zeros(total, dtype=bool)
        flat[idx] = True
        return cls(ratio=ratio, hidden_cells=flat)

    def indicator(self, n_phases: int, n_temps: int = N_TEMPS) -> np.ndarray:
        """Flat 0/1 vector (1 = hidden), phase-major then temperature."""
        if self.hidden_cells is not None:
            return self.hidden_cells.astype(np.float64)
        flat = np.zeros(n_phases * n_temps)
        for row in self.hidden_phase_rows:
            if row >= n_phases:
                raise DomainError(f"mask row {row} out of range for {n_phases} phases")
            flat[row * n_temps:(row + 1) * n_temps] = 1.0
        return flat

    def to_json(self) -> str:
        return json.dumps({"ratio": self.ratio,
                           "hidden_phase_rows": list(self.hidden_phase_rows)},
                          sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Mask":
        doc = json.loads(text)
        return cls(ratio=doc["ratio"],
                   hidden_phase_rows=tuple(doc["hidden_phase_rows"]))


def apply_mask(diagram: PhaseDiagram, mask: Mask):
    """Split a diagram into (observed values, hidden values)."""
    flat = diagram.flat()
    ind = mask.indicator(diagram.n_phases, len(diagram.temperatures)).astype(bool)
    return flat[~ind], flat[ind]


def merge_mask(v: np.ndarray, h: np.ndarray, mask: Mask, n_phases: int,
               n_temps: int = N_TEMPS) -> np.ndarray:
    """Inverse of apply_mask on the flattened layout."""
    ind = mask.indicator(n_phases, n_temps).astype(bool)
    flat = np.empty(n_phases * n_temps)
    flat[~ind] = v
    flat[ind] = h
    return flat


# ---------------------------------------------------------------------------
# neighborhood perturbation
# ---------------------------------------------------------------------------

def perturb_neighborhood(base, rel: float = 0.20, n: int = 1, seed=0):
    """Independently rescale the auxiliary elements by uniform +-rel factors.

    Zero elements stay zero; the dominant element absorbs the remainder
    so every sample sums to 100.
    """
    base = validate_composition(base)
    if not (0.0 < rel < 1.0):
        raise DomainError(f"relative perturbation {rel} outside (0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = []
    while len(out) < n:
        factors = rng.uniform(1.0 - rel, 1.0 + rel, size=9)
        aux = base[:9] * factors
        al = 100.0 - aux.sum()
        if al < 0:
            continue  # resample; never emit an invalid composition
        out.append(np.concatenate([aux, [al]]))
    return out


# ---------------------------------------------------------------------------
# BO search objective
# ---------------------------------------------------------------------------

@dataclass
class BOObjectiveConfig:
    line_a: float = 0.45
    line_b: float = 0.56
    d1_threshold: float = 0.05
    cutoff: float = 0.88
    weights: tuple = (1.0, 1.0, 0.1, -0.01)
    diversity_bandwidth: float = 0.01  # squared length scale of the penalty
    constraint_cap: float = AUX_CAP
    visited: list = field(default_factory=list)  # FCC points seen so far


def bo_objective(y200: float, y500: float, x, cfg: BOObjectiveConfig) -> float:
    """Search loss over the FCC plane plus composition bonuses."""
    d1 = abs(y500 - cfg.line_a * y200 - cfg.line_b) / np.sqrt(1.0 + cfg.line_a**2)
    l1 = 0.0 if d1 < cfg.d1_threshold else d1**2
    d2 = y200 - cfg.cutoff
    l2 = 0.0 if d2 > 0 else d2**2
    if cfg.visited:
        y = np.array([y200, y500])
        dists = np.sum((np.asarray(cfg.visited) - y) ** 2, axis=1)
        l3 = float(np.exp(-dists.min() / cfg.diversity_bandwidth))
    else:
        l3 = 0.0
    l4 = float(np.count_nonzero(np.asarray(x)[:9] > 1e-6))
    w = cfg.weights
    return w[0] * l1 + w[1] * l2 + w[2] * l3 + w[3] * l4


def estimate_fcc_line(spec: SimulatorSpec):
    """Least-squares (slope, intercept) of y500 on y200 over the base alloys."""
    pts = np.array([fcc_extract(simulate(spec, x)) for _, x in base_alloys()])
    a, b = np.polyfit(pts[:, 0], pts[:, 1], 1)
    return float(a), float(b)


def in_target_region(y200: float, y500: float, cfg: BOObjectiveConfig) -> bool:
    """The acceptance region near the line and right of the cutoff."""
    d1 = abs(y500 - cfg.line_a * y200 - cfg.line_b) / np.sqrt(1.0 + cfg.line_a**2)
    return d1 < cfg.d1_threshold and (y200 - cfg.cutoff) > 0


def _sample_feasible_aux(rng: np.random.Generator) -> np.ndarray:
    for _ in range(10_000):
        aux = rng.uniform(0.0, AUX_BOX, size=9)
        if aux.sum() <= AUX_CAP:
            return aux
    raise ContractError("could not sample a feasible auxiliary composition")


def _aux_to_composition(aux: np.ndarray) -> np.ndarray:
    return np.concatenate([aux, [100.0 - aux.sum()]])


def bo_search(cfg: BOObjectiveConfig, spec: SimulatorSpec, budget: int, seed=0):
    """GP-EI search over the auxiliary space; returns [(composition, loss)]."""
    if budget < 1:
        raise DomainError("bo_search budget must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def objective(aux):
        x = _aux_to_composition(aux)
        y200, y500 = fcc_extract(simulate(spec, x))
        val = bo_objective(y200, y500, x, cfg)
        cfg.visited.append((y200, y500))
        return val

    trajectory = gp.minimize(objective, _sample_feasible_aux, budget, rng)
    return [(_aux_to_composition(aux), val) for aux, val in trajectory]


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    xs: np.ndarray          # [N x 10] compositions in percent
    ys: np.ndarray          # [N x P*T] flattened diagrams, phase-major
    folds: np.ndarray       # [N] fold ids in 0..4
    provenance: str
    seed: int
    labels: tuple
    n_phases: int

    def __len__(self) -> int:
        return len(self.xs)


def assign_folds(n: int, rng: np.random.Generator, k: int = N_FOLDS) -> np.ndarray:
    if n < k:
        raise DomainError(f"cannot split {n} rows into {k} folds")
    perm = rng.permutation(n)
    folds = np.empty(n, dtype=np.int64)
    folds[perm] = np.arange(n) % k
    return folds


def build_dataset(kind: str, size: int, spec: SimulatorSpec, seed: int = 0,
                  symmetrize: bool = False, bo_budget: int = 200,
                  base: str | None = None) -> Dataset:
    """Assemble a simulated dataset of the requested kind.

    symmetrize appends the pair-swapped twin of every sampled row (same
    diagram by construction), which makes the inverse ground truth
    explicitly two-moded.  base restricts the neighborhood kind to one
    named alloy instead of spreading the budget across all of them.
    """
    if kind not in ("neighborhood", "bo_driven"):
        raise DomainError(f"unknown dataset kind {kind!r}")
    if base is not None and kind != "neighborhood":
        raise DomainError("base alloy selection applies only to neighborhood data")
    rng = np.random.default_rng(seed)
    n_unique = size // 2 if symmetrize else size
    xs = []
    if kind == "neighborhood":
        alloys = base_alloys()
        if base is not None:
            by_name = dict(alloys)
            if base not in by_name:
                raise DomainError(f"unknown base alloy {base!r}")
            alloys = [(base, by_name[base])]
        per_alloy = n_unique // len(alloys)
        if per_alloy < 1:
            raise DomainError(f"size {size} too small for {len(alloys)} base alloys")
        for _, base_x in alloys:
            xs.extend(perturb_neighborhood(base_x, rel=0.20, n=per_alloy, seed=rng))
    else:
        line_a, line_b = estimate_fcc_line(spec)
        cfg = BOObjectiveConfig(line_a=line_a, line_b=line_b)
        trajectory = bo_search(cfg, spec, bo_budget, seed=rng)
        accepted = []
        for x, _ in trajectory:
            y200, y500 = fcc_extract(simulate(spec, x))
            if in_target_region(y200, y500, cfg):
                accepted.append(x)
        n_points = n_unique // PERTURB_PER_POINT
        if len(accepted) < n_points:
            raise ContractError(
                f"BO produced {len(accepted)} in-region points, need {n_points}; "
                f"raise the budget ({bo_budget})")
        chosen = [accepted[i] for i in rng.choice(len(accepted), size=n_points,
                                                  replace=False)]
        for point in chosen:
            kept = []
            while len(kept) < PERTURB_PER_POINT:
                cand = perturb_neighborhood(point, rel=0.20, n=1, seed=rng)[0]
                # perturbation must not break the auxiliary-mass cap the
                # search itself was constrained by
                if cand[:9].sum() <= AUX_CAP:
                    kept.append(cand)
            xs.extend(kept)
    if symmetrize:
        xs = xs + [swap_pair(x, spec.symmetric_pair) for x in xs]
    xs = np.array(xs)
    ys = np.array([simulate(spec, x).flat() for x in xs])
    folds = assign_folds(len(xs), rng)
    return Dataset(xs=xs, ys=ys, folds=folds, provenance=kind, seed=seed,
                   labels=spec.labels, n_phases=spec.n_phases)


# ---------------------------------------------------------------------------
# on-disk format
# ---------------------------------------------------------------------------

def dataset_headers(labels) -> list:
    cols = [f"element:{e}" for e in ELEMENTS]
    for label in labels:
        for t in TEMPERATURES:
            cols.append(f"phase:{label}@{t:g}")
    cols.append("fold")
    return cols


def save_dataset(ds: Dataset, out_dir: str, extra_manifest: dict | None = None):
    """Write data.csv plus a manifest.json echoing generation parameters."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "data.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(dataset_headers(ds.labels)) + "\n")
        for x, y, fold in zip(ds.xs, ds.ys, ds.folds):
            cells = [repr(float(v)) for v in x] + [repr(float(v)) for v in y]
            cells.append(str(int(fold)))
            fh.write(",".join(cells) + "\n")
    with open(path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    manifest = {
        "rows": len(ds),
        "provenance": ds.provenance,
        "seed": ds.seed,
        "labels": list(ds.labels),
        "n_phases": ds.n_phases,
        "sha256": digest,
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_dataset(path: str) -> Dataset:
    """Read a dataset written by save_dataset (path to data.csv or its dir)."""
    if os.path.isdir(path):
        path = os.path.join(path, "data.csv")
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    n_elem = sum(1 for c in header if c.startswith("element:"))
    phase_cols = [c for c in header if c.startswith("phase:")]
    labels = []
    for c in phase_cols:
        label = c.split(":", 1)[1].rsplit("@", 1)[0]
        if label not in labels:
            labels.append(label)
    data = np.array([[float(v) for v in row[:-1]] for row in rows])
    folds = np.array([int(row[-1]) for row in rows])
    manifest_path = os.path.join(os.path.dirname(path), "manifest.json")
    provenance, seed = "unknown", 0
    if os.path.exists(manifest_path):
        with open(manifest_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        provenance = doc.get("provenance", provenance)
        seed = doc.get("seed", seed)
    return Dataset(xs=data[:, :n_elem], ys=data[:, n_elem:], folds=folds,
                   provenance=provenance, seed=seed, labels=tuple(labels),
                   n_phases=len(labels))
