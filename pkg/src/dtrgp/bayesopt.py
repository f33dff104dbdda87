"""Expected-improvement search for a value-maximizing policy.

The surrogate is fit to negated value estimates so that EI keeps its usual
minimization form; everything reported back to callers is in value units.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr
from scipy.stats import qmc

from .estimators import fmt
from .gp import GpModel, KernelSpec, TuneConfig, gp_fit, gp_predict_many, tune_hyperparameters
from .policy import ParamBox

SIGMA_FLOOR = 1e-12
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class EvaluationRecord:
    theta: tuple
    value: float
    std_dev: float
    source: str  # "initial-design" or "ei-step"

    def __post_init__(self):
        if not self.std_dev >= 0:
            raise ValueError("std_dev must be non-negative")


@dataclass(frozen=True)
class Budget:
    n_initial: int = 50
    n_ei: int = 50
    ei_stop_threshold: float = 1e-6

    def __post_init__(self):
        if self.n_initial < 1 or self.n_ei < 0 or self.ei_stop_threshold < 0:
            raise ValueError("need n_initial >= 1, n_ei >= 0, ei_stop_threshold >= 0")


@dataclass(frozen=True)
class GpConfig:
    """Surrogate settings used inside the optimization loop.

    The first fit is tuned from ``tune.n_restarts`` space-filling starts;
    later refits warm-start from the previous optimum plus
    ``refit_restarts`` fresh starts.
    """

    tune: TuneConfig = TuneConfig()
    refit_restarts: int = 1
    per_point_noise: bool = False
    n_candidates: int = 2048
    n_refine: int = 5

    @classmethod
    def from_dict(cls, d: dict) -> "GpConfig":
        d = dict(d)
        if "tune" in d:
            d["tune"] = TuneConfig.from_dict(d["tune"])
        return cls(**d)


@dataclass
class OptimizationTrace:
    records: list = field(default_factory=list)
    kernel: Optional[KernelSpec] = None
    stopped_early: bool = False

    @property
    def budget_used(self) -> int:
        return len(self.records)

    @property
    def best_index(self) -> int:
        vals = [r.value for r in self.records]
        return int(np.argmax(vals))  # first occurrence wins

    @property
    def best_theta(self) -> tuple:
        return self.records[self.best_index].theta

    @property
    def best_value(self) -> float:
        return self.records[self.best_index].value

    def thetas(self) -> np.ndarray:
        return np.array([r.theta for r in self.records], dtype=float)

    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.records], dtype=float)

    def std_devs(self) -> np.ndarray:
        return np.array([r.std_dev for r in self.records], dtype=float)

    def to_dict(self) -> dict:
        return {
            "records": [
                {"theta": list(r.theta), "value": r.value, "std_dev": r.std_dev, "source": r.source}
                for r in self.records
            ],
            "best_theta": list(self.best_theta),
            "best_value": self.best_value,
            "budget_used": self.budget_used,
            "stopped_early": self.stopped_early,
            "kernel": None if self.kernel is None else self.kernel.to_dict(),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def to_csv(self, path, names=None) -> None:
        dim = len(self.records[0].theta) if self.records else 0
        names = list(names) if names else [f"theta{i + 1}" for i in range(dim)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", *names, "value", "std_dev", "source"])
            for i, r in enumerate(self.records):
                w.writerow([i, *(fmt(t) for t in r.theta), fmt(r.value), fmt(r.std_dev), r.source])


class OptimizationError(RuntimeError):
    def __init__(self, message, trace: OptimizationTrace):
        super().__init__(message)
        self.trace = trace


def space_filling_design(box: ParamBox, b: int, seed=None) -> np.ndarray:
    """Latin-hypercube sample: one point per stratum along every axis."""
    if b < 1:
        raise ValueError("design size must be at least 1")
    sampler = qmc.LatinHypercube(d=box.dim, seed=np.random.default_rng(seed))
    return qmc.scale(sampler.random(b), box.lo, box.hi)


def ei_from_moments(mu, sigma, f_min) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    gap = f_min - mu
    tiny = sigma < SIGMA_FLOOR
    s = np.where(tiny, 1.0, sigma)
    z = gap / s
    ei = s * (z * ndtr(z) + _INV_SQRT_2PI * np.exp(-0.5 * z * z))
    return np.where(tiny, np.maximum(gap, 0.0), np.maximum(ei, 0.0))


def expected_improvement(model: GpModel, theta, f_min: float) -> float:
    mu, var = gp_predict_many(model, np.asarray(theta, dtype=float).reshape(1, -1))
    return float(ei_from_moments(mu, np.sqrt(var), f_min)[0])


def _nelder_mead_batch(
    f: Callable,
    starts: np.ndarray,
    step: float = 0.02,
    xatol: float = 1e-3,
    frtol: float = 1e-3,
    maxiter: int = 120,
) -> np.ndarray:
    """Maximize ``f`` from several starts at once by Nelder-Mead on the unit box.

    ``f`` maps an ``(m, d)`` array to ``m`` values. Each iteration evaluates
    the reflection, expansion and both contraction points of every active
    simplex in one batched call, then applies the usual acceptance rules.
    Trial points are clipped to ``[0, 1]``. A start stops once its simplex
    is within ``xatol`` and its values agree to ``frtol`` relative to the
    best vertex.
    """
    k, d = starts.shape
    simp = np.repeat(starts[:, None, :], d + 1, axis=1)
    for j in range(d):
        up = simp[:, j + 1, j] + step
        simp[:, j + 1, j] = np.where(up <= 1.0, up, simp[:, j + 1, j] - step)
    vals = -f(simp.reshape(-1, d)).reshape(k, d + 1)  # minimize the negation
    active = np.ones(k, dtype=bool)
    rows = np.arange(k)[:, None]
    # reflection, expansion, outside and inside contraction as multiples of (centroid - worst)
    coef = np.array([1.0, 2.0, 0.5, -0.5])
    for _ in range(maxiter):
        order = np.argsort(vals, axis=1, kind="stable")
        simp, vals = simp[rows, order], vals[rows, order]
        spread = np.abs(simp[:, 1:] - simp[:, :1]).max(axis=(1, 2))
        fspread = np.abs(vals[:, 1:] - vals[:, :1]).max(axis=1)
        active &= ~((spread <= xatol) & (fspread <= frtol * np.abs(vals[:, 0])))
        if not active.any():
            break
        a = np.flatnonzero(active)
        s, v = simp[a], vals[a]
        centroid = s[:, :-1].mean(axis=1)
        worst = s[:, -1]
        trial = np.clip(centroid[:, None] + coef[None, :, None] * (centroid - worst)[:, None], 0.0, 1.0)
        ft = -f(trial.reshape(-1, d)).reshape(a.size, 4)
        fr, fe, fo, fi = ft.T
        best, second, last = v[:, 0], v[:, -2], v[:, -1]
        choice = np.full(a.size, -1)  # -1 means shrink
        choice[fr < second] = 0
        expand = (fr < best) & (fe < fr)
        choice[expand] = 1
        outside = (fr >= second) & (fr < last) & (fo <= fr)
        choice[outside] = 2
        inside = (fr >= last) & (fi < last)
        choice[inside] = 3
        take = choice >= 0
        s[take, -1] = trial[take, choice[take]]
        v[take, -1] = ft[take, choice[take]]
        shrink = ~take
        if shrink.any():
            anchor = s[shrink, :1]
            moved = anchor + 0.5 * (s[shrink, 1:] - anchor)
            s[shrink, 1:] = moved
            v[shrink, 1:] = -f(moved.reshape(-1, d)).reshape(moved.shape[:2])
        simp[a], vals[a] = s, v
    return simp[np.arange(k), np.argmin(vals, axis=1)]


def _rank(pts: np.ndarray, ei: np.ndarray, k: Optional[int] = None) -> np.ndarray:
    """Order by decreasing EI, ties broken lexicographically by coordinates.

    With ``k``, only the leading ``k`` or more entries are returned (every
    point tied with the k-th best EI is kept so the tie-break stays exact).
    """
    idx = np.arange(ei.size)
    if k is not None and k < ei.size:
        cut = np.partition(ei, ei.size - k)[ei.size - k]
        idx = np.flatnonzero(ei >= cut)
    keys = [pts[idx, j] for j in range(pts.shape[1] - 1, -1, -1)] + [-ei[idx]]
    return idx[np.lexsort(keys)]


def _candidates(box: ParamBox, n: int, evaluated, rng) -> np.ndarray:
    sobol = qmc.Sobol(d=box.dim, scramble=True, seed=rng)
    m = max(int(math.ceil(math.log2(max(n, 1)))), 0)
    pts = qmc.scale(sobol.random_base2(m)[:n], box.lo, box.hi)
    if evaluated is not None and len(evaluated):
        ev = np.asarray(evaluated, dtype=float)
        best = ev[0]
        width = box.hi - box.lo
        mids = 0.5 * (ev + best)
        jitter = ev + 0.01 * width * rng.standard_normal(ev.shape)
        pts = np.vstack([pts, box.clip(mids), box.clip(jitter)])
    return pts


def maximize_ei(
    model: GpModel,
    box: ParamBox,
    f_min: float,
    seed=None,
    evaluated=None,
    n_candidates: int = 2048,
    n_refine: int = 5,
) -> tuple[np.ndarray, float]:
    """Argmax of EI over the box and its EI value.

    Quasi-random Sobol candidates are augmented, when ``evaluated`` points are
    given (best first), with midpoints toward the best point and small
    perturbations of every evaluated point. The top ``n_refine`` candidates
    are polished by bounded Nelder-Mead; a polished point replaces its start
    only if it strictly improves EI.
    """
    rng = np.random.default_rng(seed)
    pts = _candidates(box, n_candidates, evaluated, rng)
    predict = model.fast_predictor()

    def ei_at(x):
        mu, var = predict(x)
        return ei_from_moments(mu, np.sqrt(var), f_min)

    ei = ei_at(pts)
    order = _rank(pts, ei, max(n_refine, 1))
    lo, width = box.lo, box.hi - box.lo
    top = order[:n_refine]
    polished = _nelder_mead_batch(lambda u: ei_at(lo + u * width), (pts[top] - lo) / width)
    cand = box.clip(lo + polished * width)
    cand_ei = ei_at(cand)
    better = cand_ei > ei[top]
    polished_pts, polished_ei = cand[better], cand_ei[better]
    if better.any():
        pts = np.vstack([pts, polished_pts])
        ei = np.r_[ei, polished_ei]
        order = _rank(pts, ei, 1)
    best = order[0]
    return pts[best].copy(), float(ei[best])


def _fit_surrogate(records, config: GpConfig, rng, previous: Optional[KernelSpec]) -> GpModel:
    x = np.array([r.theta for r in records], dtype=float)
    y = -np.array([r.value for r in records], dtype=float)
    ppn = np.array([r.std_dev for r in records]) ** 2 if config.per_point_noise else None
    tune = config.tune
    if previous is not None:
        tune = TuneConfig(**{**tune.__dict__, "n_restarts": config.refit_restarts})
    seed = int(rng.integers(2**32))
    if len(records) >= 3:
        kernel = tune_hyperparameters(x, y, ppn, tune, seed=seed, initial=previous)
    else:
        kernel = previous or KernelSpec(nu=tune.nu, lengthscales=(1.0,) * x.shape[1], noise_variance=1e-6)
    return gp_fit(kernel, x, y, per_point_noise=ppn, center=tune.center)


def optimize_policy(
    evaluator: Callable,
    box: ParamBox,
    budget: Budget = Budget(),
    gp_config: GpConfig = GpConfig(),
    seed=None,
) -> OptimizationTrace:
    """Initial space-filling design, then EI steps until budget or EI stalls.

    ``evaluator(theta) -> (value, std_dev)``. The surrogate is retuned after
    every evaluation. If the evaluator raises, :class:`OptimizationError`
    carries the partial trace.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    design_ss, tune_ss, ei_ss = ss.spawn(3)
    tune_rng = np.random.default_rng(tune_ss)
    ei_rng = np.random.default_rng(ei_ss)
    trace = OptimizationTrace()

    def run(theta, source):
        theta = tuple(float(t) for t in theta)
        try:
            value, sd = evaluator(np.asarray(theta))
        except Exception as exc:
            raise OptimizationError(f"evaluator failed at {theta}: {exc}", trace) from exc
        trace.records.append(EvaluationRecord(theta, float(value), float(sd), source))

    for theta in space_filling_design(box, budget.n_initial, np.random.default_rng(design_ss)):
        run(theta, "initial-design")

    kernel = None
    for _ in range(budget.n_ei):
        model = _fit_surrogate(trace.records, gp_config, tune_rng, kernel)
        kernel = model.kernel
        f_min = -trace.best_value
        by_value = np.argsort(-trace.values(), kind="stable")
        theta, ei = maximize_ei(
            model,
            box,
            f_min,
            seed=int(ei_rng.integers(2**32)),
            evaluated=trace.thetas()[by_value],
            n_candidates=gp_config.n_candidates,
            n_refine=gp_config.n_refine,
        )
        if ei <= budget.ei_stop_threshold:
            trace.stopped_early = True
            break
        run(theta, "ei-step")
    trace.kernel = kernel
    return trace
