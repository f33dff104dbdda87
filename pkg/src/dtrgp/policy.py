"""Finite-parameter decision rules and parameter boxes."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

Covariates = Mapping[str, Union[float, np.ndarray]]


@dataclass(frozen=True)
class ParamBox:
    """Axis-aligned hyper-rectangle of policy parameters."""

    lower: tuple
    upper: tuple
    names: tuple = ()

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        names = tuple(self.names) or tuple(f"theta{i + 1}" for i in range(len(lo)))
        if len(lo) != len(hi) or len(lo) != len(names):
            raise ValueError("lower, upper and names must have equal length")
        if any(not (a < b) for a, b in zip(lo, hi)):
            raise ValueError("need lower < upper in every dimension")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "names", names)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper)

    def contains(self, theta) -> bool:
        t = np.asarray(theta, dtype=float)
        return bool(np.all(t >= self.lo) and np.all(t <= self.hi))

    def clip(self, theta) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=float), self.lo, self.hi)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "names": list(self.names)}

    @classmethod
    def unit(cls, dim: int = 2, names: Sequence[str] = ()) -> "ParamBox":
        return cls((0.0,) * dim, (1.0,) * dim, tuple(names))


def _feature(covariates: Covariates, name: str):
    try:
        return covariates[name]
    except KeyError:
        raise ValueError(f"covariates lack required feature {name!r}") from None


def _as_action(mask):
    if np.ndim(mask) == 0:
        return int(bool(mask))
    return np.asarray(mask, dtype=np.int8)


@dataclass(frozen=True)
class ThresholdPolicy:
    """Treat when ``x < beta1`` or ``x > beta2``."""

    beta1: float
    beta2: float

    kind = "threshold"
    features = ("x",)

    def __post_init__(self):
        if not (np.isfinite(self.beta1) and np.isfinite(self.beta2)):
            raise ValueError("thresholds must be finite")

    @classmethod
    def from_theta(cls, theta) -> "ThresholdPolicy":
        b1, b2 = (float(v) for v in theta)
        return cls(b1, b2)

    @property
    def theta(self) -> tuple:
        return (self.beta1, self.beta2)

    def decide(self, covariates: Covariates):
        x = _feature(covariates, "x")
        return _as_action((np.asarray(x) < self.beta1) | (np.asarray(x) > self.beta2))


@dataclass(frozen=True)
class TwoFeaturePolicy:
    """Treat when baseline compliance ``c0 < theta1`` or wound size ``w0 > theta2``."""

    theta1: float
    theta2: float

    kind = "two-feature"
    features = ("c0", "w0")

    def __post_init__(self):
        if not 0.0 <= self.theta1 <= 1.0:
            raise ValueError("theta1 (compliance threshold) must lie in [0, 1]")
        if not 0.0 < self.theta2 <= 100.0:
            raise ValueError("theta2 (wound-size threshold) must lie in (0, 100]")

    @classmethod
    def from_theta(cls, theta) -> "TwoFeaturePolicy":
        t1, t2 = (float(v) for v in theta)
        return cls(t1, t2)

    @property
    def theta(self) -> tuple:
        return (self.theta1, self.theta2)

    def decide(self, covariates: Covariates):
        c0 = np.asarray(_feature(covariates, "c0"))
        w0 = np.asarray(_feature(covariates, "w0"))
        return _as_action((c0 < self.theta1) | (w0 > self.theta2))


Policy = Union[ThresholdPolicy, TwoFeaturePolicy]
POLICY_CLASSES = {cls.kind: cls for cls in (ThresholdPolicy, TwoFeaturePolicy)}


def decide(policy: Policy, covariates: Covariates):
    """Action(s) the policy assigns; scalar covariates give an int, arrays an int8 array."""
    return policy.decide(covariates)


def consistent(policy: Policy, covariates: Covariates, observed_action):
    d = policy.decide(covariates)
    out = np.asarray(d) == np.asarray(observed_action)
    return bool(out) if out.ndim == 0 else out


def policy_to_json(policy: Policy) -> str:
    return json.dumps({"class": policy.kind, "theta": list(policy.theta)})


def policy_from_json(text: str) -> Policy:
    doc = json.loads(text)
    try:
        cls = POLICY_CLASSES[doc["class"]]
    except KeyError:
        raise ValueError(f"unknown policy class {doc.get('class')!r}") from None
    return cls.from_theta(doc["theta"])


def enumerate_grid(box: ParamBox, resolution) -> np.ndarray:
    """Lattice over the closed box, endpoints included, first coordinate slowest."""
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (box.dim,))
    if np.any(res < 2):
        raise ValueError("resolution must be at least 2 in every dimension")
    axes = [np.linspace(lo, hi, int(k)) for lo, hi, k in zip(box.lower, box.upper, res)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)
