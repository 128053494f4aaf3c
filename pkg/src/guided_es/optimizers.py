"""First-order update rules and rank-based fitness shaping.

Every ``step`` minimizes: it moves against ``g`` and returns the new
parameters together with the applied update ``new - theta``.
"""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .linalg import DimensionError


def _pair(theta, g) -> tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if theta.shape != g.shape:
        raise DimensionError(f"parameter shape {theta.shape} vs gradient shape {g.shape}")
    return theta, g


class SGD:
    def __init__(self, learning_rate: float):
        if learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        self.learning_rate = float(learning_rate)

    def step(self, theta, g) -> tuple[np.ndarray, np.ndarray]:
        theta, g = _pair(theta, g)
        new = theta - self.learning_rate * g
        return new, new - theta


class Adam:
    def __init__(self, learning_rate: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        if learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.first_moment: np.ndarray | None = None
        self.second_moment: np.ndarray | None = None
        self.step_count = 0

    def step(self, theta, g) -> tuple[np.ndarray, np.ndarray]:
        theta, g = _pair(theta, g)
        if self.first_moment is None:
            self.first_moment = np.zeros_like(theta)
            self.second_moment = np.zeros_like(theta)
        elif self.first_moment.shape != theta.shape:
            raise DimensionError("parameter dimension changed between steps")
        self.step_count += 1
        t = self.step_count
        self.first_moment = self.beta1 * self.first_moment + (1 - self.beta1) * g
        self.second_moment = self.beta2 * self.second_moment + (1 - self.beta2) * g * g
        m_hat = self.first_moment / (1 - self.beta1 ** t)
        v_hat = self.second_moment / (1 - self.beta2 ** t)
        new = theta - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)
        return new, new - theta

    def state_dict(self) -> dict:
        """JSON-safe state; float repr round-trips float64 exactly."""
        return {
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "step_count": self.step_count,
            "first_moment": None if self.first_moment is None else self.first_moment.tolist(),
            "second_moment": None if self.second_moment is None else self.second_moment.tolist(),
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "Adam":
        opt = cls(state["learning_rate"], state["beta1"], state["beta2"], state["epsilon"])
        opt.step_count = int(state["step_count"])
        if state["first_moment"] is not None:
            opt.first_moment = np.array(state["first_moment"], dtype=np.float64)
            opt.second_moment = np.array(state["second_moment"], dtype=np.float64)
        return opt


def make_optimizer(kind: str, learning_rate: float):
    kind = kind.lower()
    if kind == "sgd":
        return SGD(learning_rate)
    if kind == "adam":
        return Adam(learning_rate)
    raise ValueError(f"unknown optimizer {kind!r}")


def fitness_shape(values) -> np.ndarray:
    """Centered ranks in [-0.5, 0.5]; tied values share their average rank."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("fitness_shape needs at least one value")
    if v.size == 1:
        return np.zeros(1)
    ranks = rankdata(v, method="average") - 1.0
    return ranks / (v.size - 1) - 0.5
