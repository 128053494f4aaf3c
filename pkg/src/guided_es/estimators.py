"""Antithetic ES, the surrogate-guided estimator and its iterative form.

All objective calls go through :func:`antithetic_values`, which evaluates
directions in fixed-size chunks. Chunk boundaries do not depend on the
executor, so results are identical for any worker count.
"""
from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    DimensionError,
    OrthoSet,
    gram_schmidt,
    sample_orthogonal_complement,
)
from .objectives import Objective
from .optimizers import fitness_shape

DIRECTION_CHUNK = 16
MIN_STORED_NORM = 1e-12


class EvaluationError(RuntimeError):
    def __init__(self, message: str, point: np.ndarray):
        super().__init__(message)
        self.point = point


@dataclass(frozen=True)
class EstimatorConfig:
    sigma: float = 0.001
    p_random: int = 127
    k_history: int = 1
    noise_permute_prob: float = 0.0
    fitness_shaping: bool = False

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.p_random < 0 or self.k_history < 0:
            raise ValueError("p_random and k_history must be non-negative")
        if self.p_random + self.k_history < 1:
            raise ValueError("need at least one direction (k_history + p_random >= 1)")
        if not 0.0 <= self.noise_permute_prob <= 1.0:
            raise ValueError("noise_permute_prob must lie in [0, 1]")

    @property
    def directions_per_update(self) -> int:
        return self.k_history + self.p_random


@dataclass(frozen=True)
class GradientEstimate:
    direction: np.ndarray
    surrogate_coeffs: np.ndarray
    random_coeffs: np.ndarray
    evals: int
    # Evaluated directions as rows, surrogates first.
    directions: np.ndarray = field(repr=False)
    permuted: bool = False

    def reconstruct(self) -> np.ndarray:
        coeffs = np.concatenate([self.surrogate_coeffs, self.random_coeffs])
        return coeffs @ self.directions


def _evaluate_chunk(f: Objective, theta, sigma, dirs):
    stack = np.concatenate([theta + sigma * dirs, theta - sigma * dirs])
    vals = f.evaluate_many(stack)
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        i = int(bad[0])
        raise EvaluationError(f"non-finite objective value {vals[i]!r}", stack[i].copy())
    m = dirs.shape[0]
    return vals[:m], vals[m:]


def antithetic_values(f: Objective, theta, sigma: float, dirs,
                      executor: Executor | None = None) -> tuple[np.ndarray, np.ndarray]:
    """f(theta + sigma*d) and f(theta - sigma*d) for each row d of ``dirs``."""
    theta = np.asarray(theta, dtype=np.float64)
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    if dirs.shape[0] == 0:
        return np.zeros(0), np.zeros(0)
    if dirs.shape[1] != theta.shape[0] or theta.shape[0] != f.dim:
        raise DimensionError("directions, parameters and objective dimension disagree")
    chunks = [dirs[s:s + DIRECTION_CHUNK] for s in range(0, dirs.shape[0], DIRECTION_CHUNK)]
    if executor is None or len(chunks) == 1:
        results = [_evaluate_chunk(f, theta, sigma, c) for c in chunks]
    else:
        results = list(executor.map(lambda c: _evaluate_chunk(f, theta, sigma, c), chunks))
    plus = np.concatenate([r[0] for r in results])
    minus = np.concatenate([r[1] for r in results])
    return plus, minus


def _coefficients(plus, minus, sigma, shaping: bool) -> np.ndarray:
    if shaping:
        s = fitness_shape(np.concatenate([plus, minus]))
        m = plus.shape[0]
        plus, minus = s[:m], s[m:]
    return (plus - minus) / (2.0 * sigma)


def directional_coefficient(f: Objective, theta, sigma: float, d) -> float:
    """(f(theta + sigma*d) - f(theta - sigma*d)) / (2 sigma) for a unit direction d."""
    d = np.asarray(d, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-10:
        raise ValueError("direction must have unit norm")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    plus, minus = antithetic_values(f, theta, sigma, d[None, :])
    return float((plus[0] - minus[0]) / (2.0 * sigma))


def permute_fitness(coeffs, active: bool, rng=None) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if not active or coeffs.size < 2:
        return coeffs.copy()
    return np.random.default_rng(rng).permutation(coeffs)


def es_gradient(f: Objective, theta, cfg: EstimatorConfig, rng=None, *,
                num_directions: int | None = None, permute: bool = False,
                executor: Executor | None = None) -> GradientEstimate:
    """Antithetic ES with raw Gaussian directions and the 1/P average.

    ``num_directions`` defaults to ``cfg.p_random``.
    """
    p = cfg.p_random if num_directions is None else num_directions
    if p < 1:
        raise ValueError("ES needs at least one direction")
    rng = np.random.default_rng(rng)
    theta = np.asarray(theta, dtype=np.float64)
    eps = rng.standard_normal((p, theta.shape[0]))
    plus, minus = antithetic_values(f, theta, cfg.sigma, eps, executor)
    coeffs = _coefficients(plus, minus, cfg.sigma, cfg.fitness_shaping)
    coeffs = permute_fitness(coeffs, permute, rng)
    return GradientEstimate(
        direction=coeffs @ eps / p,
        surrogate_coeffs=np.zeros(0),
        random_coeffs=coeffs / p,
        evals=2 * p,
        directions=eps,
        permuted=permute,
    )


def guided_gradient(f: Objective, theta, surrogates: OrthoSet, cfg: EstimatorConfig, rng=None, *,
                    p_random: int | None = None, random_dirs: OrthoSet | None = None,
                    permute: bool = False, executor: Executor | None = None) -> GradientEstimate:
    """Surrogate terms plus orthogonal-complement terms, each weighted by its
    antithetic coefficient; no 1/P factor.

    ``random_dirs`` replaces the sampled complement directions (they must be
    orthonormal and orthogonal to ``surrogates``).
    """
    theta = np.asarray(theta, dtype=np.float64)
    n = theta.shape[0]
    if surrogates.ambient_dim != n:
        raise DimensionError("surrogate dimension does not match parameters")
    if random_dirs is None:
        p = cfg.p_random if p_random is None else p_random
        random_dirs = sample_orthogonal_complement(surrogates, p, rng)
    elif random_dirs.count and surrogates.count:
        if np.abs(random_dirs.directions @ surrogates.directions.T).max() > 1e-10:
            raise ValueError("random directions are not orthogonal to the surrogates")
    dirs = np.vstack([surrogates.directions, random_dirs.directions]).reshape(-1, n)
    if dirs.shape[0] == 0:
        raise ValueError("no directions to evaluate")
    plus, minus = antithetic_values(f, theta, cfg.sigma, dirs, executor)
    coeffs = _coefficients(plus, minus, cfg.sigma, cfg.fitness_shaping)
    coeffs = permute_fitness(coeffs, permute, rng)
    k = surrogates.count
    return GradientEstimate(
        direction=coeffs @ dirs,
        surrogate_coeffs=coeffs[:k],
        random_coeffs=coeffs[k:],
        evals=2 * dirs.shape[0],
        directions=dirs,
        permuted=permute,
    )


@dataclass(frozen=True)
class SurrogateHistory:
    """Up to ``capacity`` raw past update steps, newest first."""

    capacity: int
    past_directions: tuple[np.ndarray, ...] = ()

    def push(self, v) -> "SurrogateHistory":
        if self.capacity == 0:
            return self
        v = np.array(v, dtype=np.float64)
        if not np.all(np.isfinite(v)) or np.linalg.norm(v) < MIN_STORED_NORM:
            return self
        v.setflags(write=False)
        return SurrogateHistory(self.capacity, ((v,) + self.past_directions)[:self.capacity])

    def surrogates(self, n: int) -> OrthoSet:
        if not self.past_directions:
            return OrthoSet.empty(n)
        return gram_schmidt(self.past_directions)[0]

    def __len__(self) -> int:
        return len(self.past_directions)


def iterative_step(hist: SurrogateHistory, f: Objective, theta, cfg: EstimatorConfig, rng=None, *,
                   permute: bool = False, executor: Executor | None = None
                   ) -> tuple[GradientEstimate, SurrogateHistory]:
    """One guided estimate using the history as surrogates.

    Missing surrogate slots are filled with extra random directions so each
    call costs exactly ``2 (k_history + p_random)`` evaluations.
    """
    theta = np.asarray(theta, dtype=np.float64)
    surrogates = hist.surrogates(theta.shape[0])
    p_eff = cfg.p_random + (cfg.k_history - surrogates.count)
    est = guided_gradient(f, theta, surrogates, cfg, rng, p_random=p_eff,
                          permute=permute, executor=executor)
    return est, hist.push(est.direction)
