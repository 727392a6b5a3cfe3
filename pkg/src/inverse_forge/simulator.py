"""Deterministic synthetic forward model from compositions to phase diagrams.

A stand-in for a thermodynamic simulator: compositions map through a
swap-invariant feature vector to per-phase response parameters, then to
a column-stochastic matrix of phase fractions over a fixed temperature
grid.  The designated element pair can be exchanged without changing
the output, which gives the inverse problem an exact, known second
mode.

All coefficients are drawn once from the spec's seed and frozen, so a
serialized spec fully determines the forward function.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, VersionError

SPEC_VERSION = 1

ELEMENTS = ("Cr", "Cu", "Mg", "Ti", "Zn", "Zr", "Mn", "Si", "Ni", "Al")
AL_INDEX = 9
N_ELEMENTS = 10
DEFAULT_PAIR = (2, 4)  # Mg <-> Zn

TEMPERATURES = np.arange(0.0, 1501.0, 50.0)  # 31 points
N_TEMPS = len(TEMPERATURES)

DEFAULT_PHASES = ("LIQUID", "FCC", "CMP1", "CMP2", "CMP3", "CMP4", "CMP5", "CMP6")

# 30 known alloy series; the first four have published compositions
BASE_ALLOY_IDS = (
    "2014", "2018", "2024", "2025", "2218", "2219", "2618", "6053", "6061",
    "6063", "6066", "6070", "6082", "6101", "6151", "6201", "6351", "6463",
    "6951", "7001", "7005", "7020", "7034", "7039", "7068", "7075", "7076",
    "7175", "7178", "7475",
)

_KNOWN_COMPOSITIONS = {
    #        Cr     Cu     Mg    Ti    Zn   Zr   Mn    Si    Ni   Al
    "2024": [0.05, 4.35, 1.5, 0.05, 0.1, 0.0, 0.6, 0.1, 0.0, 93.25],
    "2025": [0.05, 4.45, 0.0, 0.05, 0.1, 0.0, 0.8, 0.85, 0.0, 93.7],
    "6061": [0.2, 0.275, 1.0, 0.05, 0.1, 0.0, 0.05, 0.6, 0.0, 97.725],
    "6066": [0.2, 0.95, 1.1, 0.1, 0.1, 0.0, 0.85, 1.35, 0.0, 95.35],
}


def validate_composition(x, require_dominant: bool = False) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (N_ELEMENTS,):
        raise DomainError(f"composition must have {N_ELEMENTS} entries, got {x.shape}")
    if np.any(x < -1e-12):
        raise DomainError("composition fractions must be non-negative")
    if abs(x.sum() - 100.0) > 1e-9:
        raise DomainError(f"composition must sum to 100, got {x.sum():.12f}")
    if require_dominant and x[AL_INDEX] < 80.0:
        raise DomainError(f"Al fraction {x[AL_INDEX]:.3f} below the in-domain bound 80")
    return x


def swap_pair(x, pair=DEFAULT_PAIR) -> np.ndarray:
    out = np.asarray(x, dtype=np.float64).copy()
    i, j = pair
    out[i], out[j] = out[j], out[i]
    return out


@dataclass
class PhaseDiagram:
    """Phase fractions [P x T] over the fixed temperature grid."""

    values: np.ndarray
    labels: tuple
    temperatures: np.ndarray = field(default_factory=lambda: TEMPERATURES.copy())

    def flat(self) -> np.ndarray:
        """Phase-major then temperature flattening."""
        return self.values.reshape(-1)

    @property
    def n_phases(self) -> int:
        return self.values.shape[0]


@dataclass
class SimulatorSpec:
    """Frozen coefficients of the synthetic forward model."""

    seed: int
    n_phases: int = len(DEFAULT_PHASES)
    labels: tuple = DEFAULT_PHASES
    symmetric_pair: tuple = DEFAULT_PAIR
    version: int = SPEC_VERSION
    feature_coef: np.ndarray = None     # [n_params x n_features]
    response_width: np.ndarray = None   # [n_solid]
    solid_base: np.ndarray = None       # [n_solid]
    solid_amp: np.ndarray = None        # [n_solid]
    solid_center: np.ndarray = None     # [n_solid]
    melt_slope: float = 0.04

    def __post_init__(self):
        if self.feature_coef is None:
            self._draw_coefficients()
        self.labels = tuple(self.labels)
        self.symmetric_pair = tuple(self.symmetric_pair)

    def _draw_coefficients(self):
        rng = np.random.default_rng(self.seed)
        n_solid = self.n_phases - 1
        n_feat = _n_features()
        n_params = 1 + 3 * n_solid  # melt shift + (base, amp, center) per solid
        self.feature_coef = rng.normal(scale=1.0, size=(n_params, n_feat))
        self.response_width = rng.uniform(40.0, 120.0, size=n_solid)
        # FCC (solid index 0) carries a high floor so it dominates mid range
        self.solid_base = np.concatenate([
            [2.5], rng.uniform(-2.0, -0.5, size=n_solid - 1)])
        self.solid_amp = np.concatenate([
            [0.6], rng.uniform(1.5, 4.0, size=n_solid - 1)])
        self.solid_center = np.concatenate([
            [rng.uniform(550.0, 650.0)], rng.uniform(150.0, 550.0, size=n_solid - 1)])

    def to_json(self) -> str:
        doc = {
            "version": self.version,
            "seed": self.seed,
            "n_phases": self.n_phases,
            "labels": list(self.labels),
            "symmetric_pair": list(self.symmetric_pair),
            "melt_slope": self.melt_slope,
            "feature_coef": self.feature_coef.tolist(),
            "response_width": self.response_width.tolist(),
            "solid_base": self.solid_base.tolist(),
            "solid_amp": self.solid_amp.tolist(),
            "solid_center": self.solid_center.tolist(),
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SimulatorSpec":
        doc = json.loads(text)
        if doc.get("version") != SPEC_VERSION:
            raise VersionError(
                f"simulator spec version {doc.get('version')} != {SPEC_VERSION}")
        return cls(
            seed=doc["seed"],
            n_phases=doc["n_phases"],
            labels=tuple(doc["labels"]),
            symmetric_pair=tuple(doc["symmetric_pair"]),
            melt_slope=doc["melt_slope"],
            feature_coef=np.asarray(doc["feature_coef"]),
            response_width=np.asarray(doc["response_width"]),
            solid_base=np.asarray(doc["solid_base"]),
            solid_amp=np.asarray(doc["solid_amp"]),
            solid_center=np.asarray(doc["solid_center"]),
        )


def _n_features() -> int:
    n = 9  # reduced auxiliary vector: 7 raw + pair sum + pair squared difference
    return n + n * (n + 1) // 2


def _features(x: np.ndarray, pair) -> np.ndarray:
    """Swap-invariant feature vector of the auxiliary composition.

    The symmetric pair enters only through its sum and squared
    difference, so exchanging the two elements cannot change anything
    downstream.  Pairwise products of the reduced vector add curvature.
    """
    i, j = pair
    aux = [x[k] / 5.0 for k in range(N_ELEMENTS - 1) if k not in (i, j)]
    s = (x[i] + x[j]) / 5.0
    q = (x[i] - x[j]) ** 2 / 25.0
    base = np.array(aux + [s, q])
    prods = np.outer(base, base)[np.triu_indices(len(base))]
    return np.concatenate([base, prods])


def _sigmoid(t):
    return 1.0 / (1.0 + np.exp(-np.clip(t, -500, 500)))


def simulate(spec: SimulatorSpec, x) -> PhaseDiagram:
    """Evaluate the frozen forward model at one composition."""
    x = validate_composition(x)
    p = spec.feature_coef @ _features(x, spec.symmetric_pair)
    n_solid = spec.n_phases - 1
    melt_point = 620.0 + 60.0 * np.tanh(p[0])
    base = spec.solid_base + 0.8 * np.tanh(p[1:1 + n_solid])
    amp = spec.solid_amp * (1.0 + 0.5 * np.tanh(p[1 + n_solid:1 + 2 * n_solid]))
    center = spec.solid_center + 150.0 * np.tanh(p[1 + 2 * n_solid:1 + 3 * n_solid])

    t = TEMPERATURES[None, :]
    logits = base[:, None] + amp[:, None] * _sigmoid(
        (center[:, None] - t) / spec.response_width[:, None])
    shifted = logits - logits.max(axis=0, keepdims=True)
    solid_share = np.exp(shifted)
    solid_share /= solid_share.sum(axis=0, keepdims=True)

    liquid = _sigmoid(spec.melt_slope * (TEMPERATURES - melt_point))
    values = np.vstack([liquid[None, :], (1.0 - liquid)[None, :] * solid_share])
    return PhaseDiagram(values=values, labels=spec.labels)


def base_alloys():
    """The 30 base compositions: four published rows plus 26 synthetic ones."""
    rng = np.random.default_rng(20240)  # frozen; independent of any run seed
    out = []
    for alloy_id in BASE_ALLOY_IDS:
        if alloy_id in _KNOWN_COMPOSITIONS:
            x = np.array(_KNOWN_COMPOSITIONS[alloy_id])
        else:
            aux = np.where(rng.random(9) < 0.25, 0.0, rng.uniform(0.05, 2.0, size=9))
            # series flavor: 2xxx lean on Cu, 6xxx on Si/Mg, 7xxx on Zn
            if alloy_id.startswith("2"):
                aux[1] = rng.uniform(3.5, 5.0)
            elif alloy_id.startswith("6"):
                aux[7] = rng.uniform(0.5, 1.5)
                aux[2] = rng.uniform(0.4, 1.2)
            else:
                aux[4] = rng.uniform(3.0, 6.0)
                aux[2] = rng.uniform(1.0, 3.0)
            aux = np.round(aux, 3)
            x = np.concatenate([aux, [100.0 - aux.sum()]])
        out.append((alloy_id, validate_composition(x, require_dominant=True)))
    return out


def fcc_extract(diagram: PhaseDiagram):
    """FCC-like phase fraction at 200 and 500 degrees C."""
    if "FCC" not in diagram.labels:
        raise DomainError("diagram has no FCC-like phase")
    row = diagram.labels.index("FCC")
    out = []
    for temp in (200.0, 500.0):
        hits = np.where(diagram.temperatures == temp)[0]
        if len(hits) == 0:
            raise DomainError(f"temperature grid lacks {temp} C")
        out.append(float(diagram.values[row, hits[0]]))
    return tuple(out)
