"""Single-decision simulation settings and their closed-form policy values.

All three settings draw ``U ~ Uniform(0, 1)``, set ``x = w U`` and assign
``A ~ Bernoulli(0.5)``; the outcome is ``gamma0 + gamma1 x + A tau(x)`` with
no extra noise. Only the treatment-effect term ``tau`` differs:

1. ``1(x < 0.75 or x > 0.25) + 0.5 x (1 - 1(...))``, which is identically 1
   as written; ``setting1_corrected`` uses ``1(x < 0.25 or x > 0.75)``.
2. ``cos(2 pi x)``
3. ``cos(4 pi x)``
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from .estimators import TrajectoryData
from .policy import ParamBox, ThresholdPolicy, enumerate_grid

PROPENSITY = 0.5


@dataclass(frozen=True)
class DgpSpec:
    setting: int = 1
    w: float = 1.0
    gamma0: float = 0.0
    gamma1: float = 1.0
    n: int = 500
    setting1_corrected: bool = False

    def __post_init__(self):
        if self.setting not in (1, 2, 3):
            raise ValueError("setting must be 1, 2 or 3")
        if not self.w > 0:
            raise ValueError("w must be positive")
        if self.n < 1:
            raise ValueError("n must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class OracleValue:
    theta: tuple
    value: float
    method: str


def treatment_effect(spec: DgpSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if spec.setting == 1:
        if spec.setting1_corrected:
            ind = (x < 0.25) | (x > 0.75)
        else:
            ind = (x < 0.75) | (x > 0.25)
        return np.where(ind, 1.0, 0.5 * x)
    if spec.setting == 2:
        return np.cos(2 * np.pi * x)
    return np.cos(4 * np.pi * x)


def outcome(spec: DgpSpec, x, a) -> np.ndarray:
    return spec.gamma0 + spec.gamma1 * np.asarray(x, dtype=float) + np.asarray(a) * treatment_effect(spec, x)


def generate_dataset(spec: DgpSpec, seed=None) -> TrajectoryData:
    rng = np.random.default_rng(seed)
    x = spec.w * rng.uniform(size=spec.n)
    a = (rng.uniform(size=spec.n) < PROPENSITY).astype(np.int8)
    return TrajectoryData(x, a, outcome(spec, x, a), np.full(spec.n, PROPENSITY))


def _effect_antiderivative(spec: DgpSpec, x: np.ndarray) -> np.ndarray:
    if spec.setting == 1:
        if not spec.setting1_corrected:
            return x
        # tau = 1 outside [0.25, 0.75], 0.5 x inside
        lo = np.minimum(x, 0.25)
        mid = np.clip(x, 0.25, 0.75)
        hi = np.maximum(x, 0.75)
        return lo + 0.25 * (mid**2 - 0.25**2) + (hi - 0.75)
    k = 2.0 if spec.setting == 2 else 4.0
    return np.sin(k * np.pi * x) / (k * np.pi)


def treated_intervals(spec: DgpSpec, beta1, beta2):
    """Treated region within ``(0, w)`` as two intervals ``[0, e1]`` and ``[s2, w]``.

    When ``beta1 >= beta2`` the rule treats everyone; the second interval is
    then empty.
    """
    b1 = np.asarray(beta1, dtype=float)
    b2 = np.asarray(beta2, dtype=float)
    w = spec.w
    everyone = b1 >= b2
    e1 = np.where(everyone, w, np.clip(b1, 0.0, w))
    s2 = np.where(everyone, w, np.clip(b2, 0.0, w))
    return e1, s2


def oracle_values(spec: DgpSpec, beta1, beta2) -> np.ndarray:
    """Vectorized closed-form value of ``ThresholdPolicy(beta1, beta2)``."""
    F = lambda t: _effect_antiderivative(spec, t)
    e1, s2 = treated_intervals(spec, beta1, beta2)
    w = spec.w
    integral = (F(e1) - F(np.zeros_like(e1))) + (F(np.full_like(s2, w)) - F(s2))
    return spec.gamma0 + spec.gamma1 * w / 2.0 + integral / w


def oracle_value(spec: DgpSpec, policy: ThresholdPolicy) -> OracleValue:
    v = float(oracle_values(spec, policy.beta1, policy.beta2))
    return OracleValue(policy.theta, v, "closed-form")


def oracle_value_quadrature(spec: DgpSpec, policy: ThresholdPolicy) -> OracleValue:
    """Adaptive-quadrature cross-check of :func:`oracle_value`."""
    e1, s2 = treated_intervals(spec, policy.beta1, policy.beta2)
    e1, s2 = float(e1), float(s2)
    tau = lambda t: float(treatment_effect(spec, t))
    breaks = [0.25, 0.75] if spec.setting == 1 else None
    total = 0.0
    for lo, hi in ((0.0, e1), (s2, spec.w)):
        if hi > lo:
            pts = [p for p in (breaks or []) if lo < p < hi] or None
            total += quad(tau, lo, hi, points=pts, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    v = spec.gamma0 + spec.gamma1 * spec.w / 2.0 + total / spec.w
    return OracleValue(policy.theta, v, "quadrature")


@lru_cache(maxsize=64)
def true_optimum(spec: DgpSpec, resolution: int = 400) -> OracleValue:
    """Best oracle value over a ``resolution``-squared lattice on ``[0, 1]^2``."""
    grid = enumerate_grid(ParamBox.unit(2), resolution)
    vals = oracle_values(spec, grid[:, 0], grid[:, 1])
    i = int(np.argmax(vals))
    return OracleValue(tuple(grid[i]), float(vals[i]), "closed-form")


def oracle_grid(spec: DgpSpec, grid: np.ndarray) -> np.ndarray:
    return oracle_values(spec, grid[:, 0], grid[:, 1])
