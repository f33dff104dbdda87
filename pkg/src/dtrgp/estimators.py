"""Policy-value estimators for single-decision trajectory data.

IPW, stabilized (Hájek) IPW, G-computation with a linear outcome model, and
augmented IPW. Every estimator returns a point value together with a plug-in
standard error so that the surrogate can be told how noisy each evaluation is.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .errors import EstimationError
from .policy import Policy, ThresholdPolicy

ADDITIVE_RECIPE = ("1", "x", "a")
INTERACTION_RECIPE = ("1", "x", "a", "a*x")
RIDGE_PENALTY = 1e-8


@dataclass(frozen=True)
class Trajectory:
    x: tuple
    a: int
    y: float
    propensity: float

    def __post_init__(self):
        if self.a not in (0, 1):
            raise ValueError("action must be 0 or 1")
        if not 0.0 < self.propensity < 1.0:
            raise ValueError("propensity must lie strictly inside (0, 1)")


@dataclass
class TrajectoryData:
    """Column-oriented trajectories. ``x`` is ``(n,)`` or ``(n, p)``."""

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    propensity: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.a = np.asarray(self.a, dtype=np.int8)
        self.y = np.asarray(self.y, dtype=float)
        self.propensity = np.broadcast_to(
            np.asarray(self.propensity, dtype=float), self.y.shape
        ).copy()
        n = self.y.size
        if self.x.shape[0] != n or self.a.size != n:
            raise ValueError("x, a, y and propensity must have the same length")
        if not np.all(np.isin(self.a, (0, 1))):
            raise ValueError("actions must be 0 or 1")
        if np.any((self.propensity <= 0) | (self.propensity >= 1)):
            raise ValueError("propensities must lie strictly inside (0, 1)")

    def __len__(self) -> int:
        return self.y.size

    @property
    def feature_names(self) -> tuple:
        if self.x.ndim == 1:
            return ("x",)
        return tuple(f"x{j + 1}" for j in range(self.x.shape[1]))

    def features(self) -> dict:
        if self.x.ndim == 1:
            return {"x": self.x}
        return {name: self.x[:, j] for j, name in enumerate(self.feature_names)}

    def subset(self, idx) -> "TrajectoryData":
        return TrajectoryData(self.x[idx], self.a[idx], self.y[idx], self.propensity[idx])

    @classmethod
    def from_records(cls, records: Sequence[Trajectory]) -> "TrajectoryData":
        x = np.array([r.x for r in records], dtype=float)
        if x.ndim == 2 and x.shape[1] == 1:
            x = x[:, 0]
        return cls(x, [r.a for r in records], [r.y for r in records], [r.propensity for r in records])

    def to_records(self) -> list:
        xs = self.x[:, None] if self.x.ndim == 1 else self.x
        return [
            Trajectory(tuple(float(v) for v in xs[i]), int(self.a[i]), float(self.y[i]), float(self.propensity[i]))
            for i in range(len(self))
        ]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*self.feature_names, "a", "y", "propensity"])
            xs = self.x[:, None] if self.x.ndim == 1 else self.x
            for i in range(len(self)):
                w.writerow(
                    [*(fmt(v) for v in xs[i]), int(self.a[i]), fmt(self.y[i]), fmt(self.propensity[i])]
                )

    @classmethod
    def from_csv(cls, path) -> "TrajectoryData":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        for col in ("a", "y", "propensity"):
            if col not in header:
                raise ValueError(f"CSV lacks column {col!r}")
        xcols = [i for i, h in enumerate(header) if h.startswith("x")]
        arr = np.array(body, dtype=float) if body else np.empty((0, len(header)))
        x = arr[:, xcols]
        if x.shape[1] == 1:
            x = x[:, 0]
        return cls(x, arr[:, header.index("a")], arr[:, header.index("y")], arr[:, header.index("propensity")])


def fmt(v: float) -> str:
    """Round-trippable decimal text (17 significant digits)."""
    return format(float(v), ".17g")


@dataclass(frozen=True)
class ValueEstimate:
    value: float
    std_dev: float


@dataclass(frozen=True)
class OutcomeModel:
    """Linear conditional-mean model over a recipe of product terms."""

    recipe: tuple
    coefficients: np.ndarray

    def predict(self, features: dict, a) -> np.ndarray:
        return design_matrix(self.recipe, features, a) @ self.coefficients

    @classmethod
    def zero(cls, recipe=ADDITIVE_RECIPE) -> "OutcomeModel":
        return cls(tuple(recipe), np.zeros(len(recipe)))


def design_matrix(recipe: Sequence[str], features: dict, a=None) -> np.ndarray:
    """Columns for each recipe term; a term is ``1`` or a ``*``-product of names."""
    n = np.asarray(next(iter(features.values()))).shape[0]
    env = dict(features)
    if a is not None:
        env["a"] = np.broadcast_to(np.asarray(a, dtype=float), (n,))
    cols = []
    for term in recipe:
        col = np.ones(n)
        if term.strip() != "1":
            for factor in term.split("*"):
                factor = factor.strip()
                if factor not in env:
                    raise ValueError(f"unknown factor {factor!r} in term {term!r}")
                col = col * np.asarray(env[factor], dtype=float)
        cols.append(col)
    return np.column_stack(cols)


def fit_outcome_model(data: TrajectoryData, recipe: Sequence[str] = ADDITIVE_RECIPE) -> OutcomeModel:
    """Least-squares fit; rank-deficient designs fall back to a tiny ridge."""
    X = design_matrix(recipe, data.features(), data.a)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        beta = np.linalg.solve(X.T @ X + RIDGE_PENALTY * np.eye(X.shape[1]), X.T @ data.y)
    else:
        beta = np.linalg.lstsq(X, data.y, rcond=None)[0]
    return OutcomeModel(tuple(recipe), beta)


def fit_propensity_logistic(data: TrajectoryData, recipe: Sequence[str] = ("1", "x")) -> np.ndarray:
    """P(A = a_i | x_i) from a maximum-likelihood logistic fit."""
    X = design_matrix(recipe, data.features(), 0.0)
    a = data.a.astype(float)

    def nll(beta):
        eta = X @ beta
        return np.sum(np.logaddexp(0.0, eta) - a * eta), X.T @ (expit(eta) - a)

    beta = minimize(nll, np.zeros(X.shape[1]), jac=True, method="BFGS").x
    p1 = np.clip(expit(X @ beta), 1e-6, 1 - 1e-6)
    return np.where(data.a == 1, p1, 1 - p1)


def _mean_and_se(terms: np.ndarray) -> ValueEstimate:
    n = terms.size
    sd = float(np.std(terms, ddof=1)) if n > 1 else 0.0
    return ValueEstimate(float(terms.mean()), sd / math.sqrt(n))


def _require_data(data: TrajectoryData) -> None:
    if len(data) == 0:
        raise ValueError("empty dataset")


def _consistency_weights(data: TrajectoryData, policy: Policy) -> np.ndarray:
    d = policy.decide(data.features())
    return (np.asarray(d) == data.a) / data.propensity


def ipw_value(data: TrajectoryData, policy: Policy) -> ValueEstimate:
    _require_data(data)
    return _mean_and_se(_consistency_weights(data, policy) * data.y)


def sipw_value(data: TrajectoryData, policy: Policy) -> ValueEstimate:
    """Hájek-normalized IPW with a linearization standard error."""
    _require_data(data)
    w = _consistency_weights(data, policy)
    total = w.sum()
    if total <= 0:
        raise EstimationError("no units consistent with the policy")
    value = float(w @ data.y / total)
    infl = w * (data.y - value) / w.mean()
    return ValueEstimate(value, _mean_and_se(infl).std_dev)


def gcomp_value(data: TrajectoryData, policy: Policy, model: OutcomeModel) -> ValueEstimate:
    _require_data(data)
    feats = data.features()
    return _mean_and_se(model.predict(feats, policy.decide(feats)))


def aipwe_value(data: TrajectoryData, policy: Policy, model: OutcomeModel) -> ValueEstimate:
    _require_data(data)
    feats = data.features()
    d = policy.decide(feats)
    w = (np.asarray(d) == data.a) / data.propensity
    terms = w * (data.y - model.predict(feats, data.a)) + model.predict(feats, d)
    return _mean_and_se(terms)


ESTIMATORS = ("ipw", "sipw", "gcomp", "aipwe")


def estimate(data: TrajectoryData, policy: Policy, estimator: str, recipe=ADDITIVE_RECIPE, model=None) -> ValueEstimate:
    """Dispatch by estimator name; outcome-model estimators fit ``recipe`` unless given ``model``."""
    if estimator == "ipw":
        return ipw_value(data, policy)
    if estimator == "sipw":
        return sipw_value(data, policy)
    if estimator in ("gcomp", "aipwe"):
        if model is None:
            model = fit_outcome_model(data, recipe)
        fn = gcomp_value if estimator == "gcomp" else aipwe_value
        return fn(data, policy, model)
    raise ValueError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")


def make_evaluator(
    data: TrajectoryData,
    estimator: str,
    recipe=ADDITIVE_RECIPE,
    policy_cls=ThresholdPolicy,
) -> Callable:
    """Map policy parameters to ``(value, std_dev)`` on a fixed dataset.

    The outcome model does not depend on the policy, so it is fit once here.
    """
    model = fit_outcome_model(data, recipe) if estimator in ("gcomp", "aipwe") else None
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}")

    def evaluate(theta):
        est = estimate(data, policy_cls.from_theta(theta), estimator, recipe, model)
        return est.value, est.std_dev

    return evaluate


def value_draws(
    data: TrajectoryData,
    policy: Policy,
    estimator: Union[str, Callable],
    n_draws: int,
    seed=None,
    recipe=ADDITIVE_RECIPE,
) -> np.ndarray:
    """Nonparametric bootstrap replicates of an estimator.

    Outcome models are refit on every resample. ``estimator`` is a name from
    :data:`ESTIMATORS` or a callable ``(data, policy) -> ValueEstimate``.
    """
    if n_draws < 2:
        raise ValueError("n_draws must be at least 2")
    _require_data(data)
    rng = np.random.default_rng(seed)
    if callable(estimator):
        fn = estimator
    else:
        def fn(d, p):
            return estimate(d, p, estimator, recipe)
    n = len(data)
    out = np.empty(n_draws)
    for b in range(n_draws):
        out[b] = fn(data.subset(rng.integers(0, n, n)), policy).value
    return out
