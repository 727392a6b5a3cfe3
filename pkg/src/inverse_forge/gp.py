"""Gaussian-process surrogate minimization with expected improvement.

Squared-exponential kernel with median-heuristic length scale, small
fixed observation noise, and acquisition maximized over a batch of
random feasible candidates each step.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm

OBS_NOISE = 1e-6
N_CANDIDATES = 1024
N_INIT = 5


def _median_length_scale(x: np.ndarray) -> float:
    if len(x) < 2:
        return 1.0
    d2 = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=2)
    vals = np.sqrt(d2[np.triu_indices(len(x), k=1)])
    med = float(np.median(vals))
    return med if med > 1e-12 else 1.0


def _kernel(a: np.ndarray, b: np.ndarray, ell: float) -> np.ndarray:
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-0.5 * d2 / ell**2)


class GaussianProcess:
    """Zero-mean GP regression on standardized targets."""

    def __init__(self, x: np.ndarray, y: np.ndarray):
        self.x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.y_mean = float(y.mean())
        self.y_std = float(y.std()) or 1.0
        self.y = (y - self.y_mean) / self.y_std
        self.ell = _median_length_scale(self.x)
        k = _kernel(self.x, self.x, self.ell) + OBS_NOISE * np.eye(len(self.x))
        self._chol = cho_factor(k, lower=True)
        self._alpha = cho_solve(self._chol, self.y)

    def predict(self, xs: np.ndarray):
        ks = _kernel(np.asarray(xs, dtype=np.float64), self.x, self.ell)
        mu = ks @ self._alpha
        v = cho_solve(self._chol, ks.T)
        var = np.maximum(1.0 - np.einsum("ij,ji->i", ks, v), 1e-12)
        return mu * self.y_std + self.y_mean, var * self.y_std**2


def expected_improvement(mu: np.ndarray, var: np.ndarray, best: float) -> np.ndarray:
    sigma = np.sqrt(var)
    gamma = (best - mu) / sigma
    return sigma * (gamma * norm.cdf(gamma) + norm.pdf(gamma))


def minimize(objective, sample_feasible, budget: int, rng: np.random.Generator,
             n_candidates: int = N_CANDIDATES, n_init: int = N_INIT):
    """Sequentially minimize a black box; returns [(x, value), ...].

    objective(x) -> float; sample_feasible(rng) -> candidate point.
    The first min(budget, n_init) evaluations are random feasible draws.
    """
    trajectory = []
    xs, ys = [], []
    for _ in range(min(budget, n_init)):
        x = sample_feasible(rng)
        val = float(objective(x))
        trajectory.append((x, val))
        xs.append(x)
        ys.append(val)
    while len(trajectory) < budget:
        gp = GaussianProcess(np.array(xs), np.array(ys))
        cands = np.array([sample_feasible(rng) for _ in range(n_candidates)])
        mu, var = gp.predict(cands)
        ei = expected_improvement(mu, var, min(ys))
        x = cands[int(np.argmax(ei))]
        val = float(objective(x))
        trajectory.append((x, val))
        xs.append(x)
        ys.append(val)
    return trajectory
