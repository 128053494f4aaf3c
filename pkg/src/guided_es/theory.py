"""Closed-form drift bounds and Monte-Carlo simulators of the alignment process.

``X_t`` is the cosine between the estimate and the true gradient; the
process tracked everywhere is ``X_t^2`` (``x_sq``) and its complement
``Y_t = 1 - X_t^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .estimators import EstimatorConfig, SurrogateHistory, guided_gradient, iterative_step
from .linalg import OrthoSet, _haar_frames, sample_orthogonal_complement, sample_orthonormal_stack
from .objectives import linear_objective

MC_CHUNK = 2000


@dataclass(frozen=True)
class ChainParams:
    dim: int
    p_random: int
    alpha: float = 1.0
    delta: float = 0.1

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if not 1 <= self.p_random <= self.dim - 1:
            raise ValueError(f"need 1 <= p_random <= dim - 1, got {self.p_random}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")

    @property
    def rate(self) -> float:
        """P / (N - 1): expected squared alignment gained from the random directions."""
        return self.p_random / (self.dim - 1)


# --- closed forms -----------------------------------------------------------


def expected_drift_linear(x_sq: float, params: ChainParams) -> float:
    return (1.0 - x_sq) * params.rate


@dataclass(frozen=True)
class HittingTimeBound:
    bound: float
    additive: float
    variable: float


def hitting_time_bound(params: ChainParams) -> HittingTimeBound:
    d = params.delta
    scale = 1.0 / params.rate
    additive = scale * (1.0 - d) / d
    variable = scale * (1.0 + math.log(1.0 / d))
    return HittingTimeBound(min(additive, variable), additive, variable)


def additive_drift_bound(x0: float, c: float) -> float:
    """Expected hitting time of 0 from ``x0`` under drift at least ``c`` per step."""
    if x0 <= 0 or c <= 0:
        raise ValueError("x0 and c must be positive")
    return x0 / c


def variable_drift_bound(z0: float, params: ChainParams) -> float:
    """1/h(1) + integral_1^z0 du/h(u) with h(z) = z P/(N-1)."""
    if z0 < 1:
        raise ValueError(f"variable drift needs z0 >= 1, got {z0}")
    return (1.0 + math.log(z0)) / params.rate


def bound_crossover_delta() -> float:
    """The delta where (1-d)/d equals 1 + ln(1/d)."""
    return brentq(lambda d: (1.0 - d) / d - 1.0 - math.log(1.0 / d), 1e-6, 1.0 - 1e-9, xtol=1e-15)


def rotation_expected(x_sq: float, params: ChainParams) -> float:
    """E[X_t^2 | X_{t-1}^2 = x_sq] under the random gradient-rotation model."""
    a2 = params.alpha ** 2
    inv = 1.0 / (params.dim - 1)
    q = params.rate
    return (a2 * x_sq + (1.0 - a2) * (1.0 - x_sq) * inv) * (1.0 - q) + q


def fixed_point_A(params: ChainParams, tol: float = 1e-12) -> float:
    """Root of rotation_expected(x) - x on [0, 1] by bisection."""
    def h(x):
        return rotation_expected(x, params) - x

    lo, hi = 0.0, 1.0
    if h(hi) >= 0.0:
        return 1.0
    if h(lo) < 0.0:
        raise ValueError("no fixed point in [0, 1]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if h(mid) >= 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def fixed_point_A_closed_form(params: ChainParams) -> float:
    """Solve the linear recurrence directly: A = b / (1 - a)."""
    a2 = params.alpha ** 2
    inv = 1.0 / (params.dim - 1)
    q = params.rate
    b = (1.0 - a2) * inv * (1.0 - q) + q
    a = (a2 - (1.0 - a2) * inv) * (1.0 - q)
    return b / (1.0 - a)


# --- Monte-Carlo ------------------------------------------------------------


@dataclass(frozen=True)
class DriftTrace:
    x_sq: np.ndarray

    @property
    def y(self) -> np.ndarray:
        return 1.0 - self.x_sq

    def z(self, delta: float) -> np.ndarray:
        """Rescaled complement: Y/delta where Y >= delta, else 0."""
        y = self.y
        return np.where(y >= delta, y / delta, 0.0)


@dataclass(frozen=True)
class HittingTimeResult:
    samples: np.ndarray
    mean: float
    stderr: float
    bound: float

    @classmethod
    def from_samples(cls, samples, bound: float) -> "HittingTimeResult":
        s = np.asarray(samples, dtype=np.int64)
        se = float(s.std(ddof=1) / np.sqrt(s.size)) if s.size > 1 else 0.0
        return cls(s, float(s.mean()), se, bound)


@dataclass(frozen=True)
class ChainResult:
    trajectories: np.ndarray  # (trials, steps + 1) values of X_t^2
    hitting: HittingTimeResult | None = None

    @property
    def mean_x_sq(self) -> np.ndarray:
        return self.trajectories.mean(axis=0)

    def trace(self, trial: int) -> DriftTrace:
        return DriftTrace(self.trajectories[trial])

    def transitions(self, start: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """All (X_{t-1}^2, X_t^2) pairs with t - 1 >= start, flattened."""
        t = self.trajectories
        return t[:, start:-1].ravel(), t[:, start + 1:].ravel()

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.trajectories, axis=1) >= 0.0))


def _hitting_times(traj: np.ndarray, delta: float) -> np.ndarray:
    hit = traj >= 1.0 - delta
    if not hit.any(axis=1).all():
        raise RuntimeError("some trajectories never reached the threshold")
    return hit.argmax(axis=1)


def simulate_linear_chain(params: ChainParams, trials: int, rng=None, *, x0_sq: float = 0.0,
                          max_steps: int = 100_000) -> ChainResult:
    """Scalar recurrence X_t^2 = X_{t-1}^2 + (1 - X_{t-1}^2) Q_t.

    Q_t is the squared norm of the projection of a fixed unit vector onto P
    sampled orthonormal directions in dimension N - 1. Runs until every trial
    has hit X^2 >= 1 - delta.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(rng)
    target = 1.0 - params.delta
    x = np.full(trials, float(x0_sq))
    rows = [x.copy()]
    steps = 0
    while not np.all(x >= target):
        if steps >= max_steps:
            raise RuntimeError(f"not all trials hit within {max_steps} steps")
        frames = sample_orthonormal_stack(params.dim - 1, params.p_random, trials, rng)
        q = np.square(frames[:, :, 0]).sum(axis=1)
        x = x + (1.0 - x) * q
        rows.append(x.copy())
        steps += 1
    traj = np.stack(rows, axis=1)
    times = _hitting_times(traj, params.delta)
    return ChainResult(traj, HittingTimeResult.from_samples(times, hitting_time_bound(params).bound))


def measure_one_step(x_sq: float, params: ChainParams, trials: int, rng=None) -> tuple[float, float]:
    """Mean and standard error of X_t^2 - X_{t-1}^2 given X_{t-1}^2 = ``x_sq``.

    Vectors are materialized: the previous gradient is e_1, the previous
    estimate has squared cosine ``x_sq`` with it, the gradient rotates by a
    random orthogonal component of norm sqrt(1 - alpha^2), and P directions
    are drawn orthogonal to the previous estimate.
    """
    rng = np.random.default_rng(rng)
    n, p, a = params.dim, params.p_random, params.alpha
    zeta = np.zeros(n)
    zeta[0], zeta[1] = math.sqrt(x_sq), math.sqrt(1.0 - x_sq)
    out = []
    for s in range(0, trials, MC_CHUNK):
        m = min(MC_CHUNK, trials - s)
        u = rng.standard_normal((m, n))
        u[:, 0] = 0.0
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        g = math.sqrt(1.0 - a * a) * u
        g[:, 0] += a
        gauss = rng.standard_normal((m, n, p))
        gauss -= zeta[None, :, None] * np.einsum("i,mip->mp", zeta, gauss)[:, None, :]
        frames, _ = _haar_frames(gauss)
        frames -= np.einsum("mpi,i->mp", frames, zeta)[:, :, None] * zeta
        x_new = (g @ zeta) ** 2 + np.square(np.einsum("mpi,mi->mp", frames, g)).sum(axis=1)
        out.append(x_new - x_sq)
    d = np.concatenate(out)
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size))


def _unit_with_cosine(g_hat: np.ndarray, x_sq: float, rng) -> np.ndarray:
    other = sample_orthogonal_complement(OrthoSet.from_rows(g_hat), 1, rng).directions[0]
    return math.sqrt(x_sq) * g_hat + math.sqrt(1.0 - x_sq) * other


def simulate_rotating_chain(params: ChainParams, steps: int, trials: int, rng=None, *,
                            x0_sq: float | None = None) -> ChainResult:
    """Run the iterative estimator on a gradient that rotates each step.

    The gradient is ``alpha * g_prev + sqrt(1 - alpha^2) * u`` with ``u`` a
    uniform unit vector orthogonal to ``g_prev``; every estimate is produced
    by :func:`iterative_step` on the linear objective with that gradient.
    With ``x0_sq`` the history is seeded with a direction of that squared
    cosine; otherwise the first estimate uses P + 1 random directions.
    """
    if steps < 1 or trials < 1:
        raise ValueError("steps and trials must be >= 1")
    n, a = params.dim, params.alpha
    cfg = EstimatorConfig(sigma=1.0, p_random=params.p_random, k_history=1)
    theta = np.zeros(n)
    seeds = np.random.SeedSequence(_entropy(rng)).spawn(trials)
    traj = np.empty((trials, steps + 1))
    for i, ss in enumerate(seeds):
        r = np.random.default_rng(ss)
        g = r.standard_normal(n)
        g /= np.linalg.norm(g)
        hist = SurrogateHistory(1)
        if x0_sq is None:
            est, hist = iterative_step(hist, linear_objective(g), theta, cfg, r)
            traj[i, 0] = _cos_sq(est.direction, g)
        else:
            hist = hist.push(_unit_with_cosine(g, x0_sq, r))
            traj[i, 0] = x0_sq
        for t in range(1, steps + 1):
            if a < 1.0:
                u = sample_orthogonal_complement(OrthoSet.from_rows(g), 1, r).directions[0]
                g = a * g + math.sqrt(1.0 - a * a) * u
                g /= np.linalg.norm(g)
            est, hist = iterative_step(hist, linear_objective(g), theta, cfg, r)
            traj[i, t] = _cos_sq(est.direction, g)
    return ChainResult(traj)


def _cos_sq(v: np.ndarray, g: np.ndarray) -> float:
    return float((v @ g) ** 2 / ((v @ v) * (g @ g)))


def _entropy(rng) -> int:
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return int(np.random.default_rng(rng).integers(2**63))


@dataclass(frozen=True)
class BinStat:
    lo: float
    hi: float
    count: int
    mean: float
    stderr: float
    expected: float


def binned_transitions(x_prev, x_next, expected_fn, width: float = 0.05,
                       min_count: int = 100) -> list[BinStat]:
    """Group transitions by X_{t-1}^2 and compare mean X_t^2 with the model.

    ``expected`` is the model's prediction averaged over the bin's own
    starting points.
    """
    x_prev, x_next = np.asarray(x_prev), np.asarray(x_next)
    edges = np.arange(0.0, 1.0 + width, width)
    idx = np.clip(np.digitize(x_prev, edges) - 1, 0, edges.size - 2)
    stats = []
    for b in range(edges.size - 1):
        sel = idx == b
        c = int(sel.sum())
        if c < min_count:
            continue
        nxt = x_next[sel]
        exp = float(np.mean([expected_fn(v) for v in x_prev[sel]]))
        stats.append(BinStat(float(edges[b]), float(edges[b + 1]), c, float(nxt.mean()),
                             float(nxt.std(ddof=1) / math.sqrt(c)), exp))
    return stats


def span_energy_mean(n: int, p: int, samples: int, rng=None) -> tuple[float, float]:
    """Mean and standard error of sum_i <u, d_i>^2 over sampled orthonormal sets."""
    rng = np.random.default_rng(rng)
    u = rng.standard_normal(n)
    u /= np.linalg.norm(u)
    vals = []
    for s in range(0, samples, MC_CHUNK):
        frames = sample_orthonormal_stack(n, p, min(MC_CHUNK, samples - s), rng)
        vals.append(np.square(frames @ u).sum(axis=1))
    v = np.concatenate(vals)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


@dataclass(frozen=True)
class OptimalityReport:
    cosine_ours: float
    max_excess: float
    trials: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_excess <= self.tol


def optimality_check(grad, surrogates: OrthoSet, dirs: OrthoSet, trials: int, rng=None,
                     tol: float = 1e-9) -> OptimalityReport:
    """Try to beat the guided estimate's cosine with other vectors of the same span.

    Half of the candidates are random combinations, half are small
    perturbations of the estimate itself.
    """
    rng = np.random.default_rng(rng)
    grad = np.asarray(grad, dtype=np.float64)
    basis = np.vstack([surrogates.directions, dirs.directions])
    gnorm = np.linalg.norm(grad)
    if gnorm == 0.0:
        return OptimalityReport(0.0, 0.0, trials, tol)
    cfg = EstimatorConfig(sigma=1.0, p_random=dirs.count, k_history=surrogates.count)
    est = guided_gradient(linear_objective(grad), np.zeros(grad.size), surrogates, cfg,
                          random_dirs=dirs)
    coeffs = np.concatenate([est.surrogate_coeffs, est.random_coeffs])
    g_norm = np.linalg.norm(est.direction)
    ours = float(est.direction @ grad / (g_norm * gnorm)) if g_norm > 0 else 0.0
    half = trials // 2
    cand = rng.standard_normal((trials, basis.shape[0]))
    if g_norm > 0:
        scale = np.abs(coeffs).max()
        cand[half:] = coeffs + 1e-3 * scale * cand[half:]
    w = cand @ basis
    wn = np.linalg.norm(w, axis=1)
    ok = wn > 0
    cos = (w[ok] @ grad) / (wn[ok] * gnorm)
    excess = float(max(0.0, (cos - ours).max())) if cos.size else 0.0
    return OptimalityReport(ours, excess, trials, tol)
