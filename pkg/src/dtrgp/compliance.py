"""Imputation-based value estimation under one-sided partial compliance.

Untreated units (``a1 = 0``) reveal their compliance ``C1(0)``; treated units
comply fully (``c1 = 1``) and their ``C1(0)`` is latent. A truncated-normal
model for ``C1(0) | H1`` is fit on the untreated, a Bernoulli-logit model for
``Y`` is fit on realized compliance, and policy values come from resampled
counterfactual populations in which latent compliance is imputed whenever a
policy withholds treatment.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from . import truncnorm
from .estimators import design_matrix, fmt
from .mcmc import ChainResult, MCMCConfig, adaptive_metropolis, sample_or_raise
from .policy import Policy

SIGMA_FLOOR = 1e-3
COMPLIANCE_PRIOR_VAR = 3.0
HALF_CAUCHY_SCALE = 5.0
SEPARATION_LIMIT = 20.0
MIN_UNTREATED = 30


@dataclass(frozen=True)
class ComplianceTrajectory:
    x0: tuple
    c0: float
    x1: tuple
    a1: int
    c1: float
    y: int
    a0: int = 0

    def __post_init__(self):
        if self.a0 != 0:
            raise ValueError("a0 must be 0 for every record")
        if self.a1 not in (0, 1) or self.y not in (0, 1):
            raise ValueError("a1 and y must be 0 or 1")
        if not (0.0 <= self.c0 <= 1.0 and 0.0 <= self.c1 <= 1.0):
            raise ValueError("compliance values must lie in [0, 1]")
        if self.a1 == 1 and self.c1 != 1.0:
            raise ValueError("treated records comply fully (c1 = 1)")


@dataclass
class ComplianceData:
    """Columnar compliance trajectories.

    ``c1`` holds realized compliance: the observed value for ``a1 = 0`` and 1
    for ``a1 = 1``.
    """

    x0: np.ndarray
    c0: np.ndarray
    x1: np.ndarray
    a1: np.ndarray
    c1: np.ndarray
    y: np.ndarray
    x0_names: tuple = ("age", "w0")
    x1_names: tuple = ("x1",)

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).reshape(len(self.y), -1)
        self.x1 = np.asarray(self.x1, dtype=float).reshape(len(self.y), -1)
        self.c0 = np.asarray(self.c0, dtype=float)
        self.a1 = np.asarray(self.a1, dtype=np.int8)
        self.c1 = np.where(self.a1 == 1, 1.0, np.asarray(self.c1, dtype=float))
        self.y = np.asarray(self.y, dtype=np.int8)
        self.x0_names, self.x1_names = tuple(self.x0_names), tuple(self.x1_names)
        n = self.y.size
        if any(v.shape[0] != n for v in (self.x0, self.x1, self.c0, self.a1, self.c1)):
            raise ValueError("all columns must have the same length")
        if self.x0.shape[1] != len(self.x0_names) or self.x1.shape[1] != len(self.x1_names):
            raise ValueError("covariate names do not match column counts")
        if not (np.all(np.isin(self.a1, (0, 1))) and np.all(np.isin(self.y, (0, 1)))):
            raise ValueError("a1 and y must be 0 or 1")
        for name, v in (("c0", self.c0), ("c1", self.c1)):
            if np.any(np.isnan(v)) or np.any((v < 0) | (v > 1)):
                raise ValueError(f"{name} must lie in [0, 1] with no missing values for a1 = 0")

    def __len__(self) -> int:
        return self.y.size

    def history(self, idx=None) -> dict:
        """Features of ``H1`` keyed by name (``x0`` names, ``c0``, ``x1`` names)."""
        sel = slice(None) if idx is None else idx
        out = {name: self.x0[sel, j] for j, name in enumerate(self.x0_names)}
        out["c0"] = self.c0[sel]
        out.update({name: self.x1[sel, j] for j, name in enumerate(self.x1_names)})
        return out

    def features(self) -> dict:
        out = self.history()
        out["c1"] = self.c1
        out["a1"] = self.a1.astype(float)
        return out

    def subset(self, idx) -> "ComplianceData":
        return ComplianceData(
            self.x0[idx], self.c0[idx], self.x1[idx], self.a1[idx], self.c1[idx], self.y[idx],
            self.x0_names, self.x1_names,
        )

    def to_records(self) -> list:
        return [
            ComplianceTrajectory(
                tuple(float(v) for v in self.x0[i]), float(self.c0[i]), tuple(float(v) for v in self.x1[i]),
                int(self.a1[i]), float(self.c1[i]), int(self.y[i]),
            )
            for i in range(len(self))
        ]

    @classmethod
    def from_records(cls, records: Sequence[ComplianceTrajectory], x0_names=None, x1_names=None) -> "ComplianceData":
        r0 = records[0]
        x0_names = x0_names or tuple(f"x0_{j + 1}" for j in range(len(r0.x0)))
        x1_names = x1_names or tuple(f"x1_{j + 1}" for j in range(len(r0.x1)))
        return cls(
            [r.x0 for r in records], [r.c0 for r in records], [r.x1 for r in records],
            [r.a1 for r in records], [r.c1 for r in records], [r.y for r in records],
            x0_names, x1_names,
        )

    def to_csv(self, path) -> None:
        """Treated rows leave ``c1`` blank: their untreated compliance is unobserved."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*self.x0_names, "c0", *self.x1_names, "a1", "c1", "y"])
            for i in range(len(self)):
                c1 = "" if self.a1[i] == 1 else fmt(self.c1[i])
                w.writerow([*(fmt(v) for v in self.x0[i]), fmt(self.c0[i]), *(fmt(v) for v in self.x1[i]),
                            int(self.a1[i]), c1, int(self.y[i])])

    @classmethod
    def from_csv(cls, path) -> "ComplianceData":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        for col in ("c0", "a1", "c1", "y"):
            if col not in header:
                raise ValueError(f"CSV lacks column {col!r}")
        ic0, ia1 = header.index("c0"), header.index("a1")
        x0_names = tuple(header[:ic0])
        x1_names = tuple(h for h in header[ic0 + 1: ia1])
        col = {h: i for i, h in enumerate(header)}

        def num(name):
            return np.array([float(r[col[name]]) for r in body])

        a1 = num("a1")
        c1 = np.array([1.0 if r[col["c1"]].strip() == "" and a == 1 else float(r[col["c1"]] or "nan")
                       for r, a in zip(body, a1)])
        return cls(
            np.column_stack([num(h) for h in x0_names]) if x0_names else np.empty((len(body), 0)),
            num("c0"),
            np.column_stack([num(h) for h in x1_names]) if x1_names else np.empty((len(body), 0)),
            a1, c1, num("y"), x0_names, x1_names,
        )


def default_compliance_recipe(data: ComplianceData) -> tuple:
    return ("1", *data.x0_names, "c0", *data.x1_names)


def default_outcome_recipe(data: ComplianceData) -> tuple:
    return ("1", *data.x0_names, "c0", *data.x1_names, "c1", "a1")


# ---------------------------------------------------------------------------
# posteriors


@dataclass
class TruncNormPosterior:
    """Draws of ``(beta, sigma)`` for ``C1(0) | H1 ~ TN(X beta, sigma, 0, 1)``."""

    recipe: tuple
    beta: np.ndarray
    sigma: np.ndarray
    chains: Optional[ChainResult] = None

    def __post_init__(self):
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        self.sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if np.any(self.sigma <= 0):
            raise ValueError("sigma draws must be positive")

    @property
    def n_draws(self) -> int:
        return self.sigma.size

    def diagnostics(self) -> dict:
        return {} if self.chains is None else self.chains.diagnostics()

    def to_csv(self, path) -> None:
        _draws_csv(path, [f"beta[{t}]" for t in self.recipe] + ["sigma"], np.column_stack([self.beta, self.sigma]))

    @classmethod
    def from_csv(cls, path) -> "TruncNormPosterior":
        names, draws = _read_draws(path)
        return cls(tuple(_term(n) for n in names[:-1]), draws[:, :-1], draws[:, -1])


@dataclass
class LogitPosterior:
    recipe: tuple
    beta: np.ndarray
    prior_scale: np.ndarray
    chains: Optional[ChainResult] = None

    def __post_init__(self):
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        self.prior_scale = np.broadcast_to(np.asarray(self.prior_scale, dtype=float), (self.beta.shape[1],)).copy()

    @property
    def n_draws(self) -> int:
        return self.beta.shape[0]

    def diagnostics(self) -> dict:
        return {} if self.chains is None else self.chains.diagnostics()

    def to_csv(self, path) -> None:
        _draws_csv(path, [f"beta[{t}]" for t in self.recipe], self.beta)

    @classmethod
    def from_csv(cls, path, prior_scale=3.0) -> "LogitPosterior":
        names, draws = _read_draws(path)
        return cls(tuple(_term(n) for n in names), draws, prior_scale)


def _draws_csv(path, names, draws: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["draw", *names])
        for i, row in enumerate(draws):
            w.writerow([i, *(fmt(v) for v in row)])


def _read_draws(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0][1:], np.array([r[1:] for r in rows[1:]], dtype=float)


def _term(name: str) -> str:
    return name[5:-1] if name.startswith("beta[") else name


def _tn_logpost_factory(X: np.ndarray, c: np.ndarray):
    log_floor = math.log(SIGMA_FLOOR)
    p = X.shape[1]

    def logpost(params):
        params = np.atleast_2d(params)
        beta, log_sigma = params[:, :p], params[:, p]
        ok = log_sigma >= log_floor
        sigma = np.exp(np.maximum(log_sigma, log_floor))[:, None]
        mu = beta @ X.T
        z = (c[None, :] - mu) / sigma
        a, b = -mu / sigma, (1.0 - mu) / sigma
        ll = np.sum(-0.5 * z * z - np.log(sigma) - truncnorm.log_ndtr_diff(a, b), axis=1)
        lp_beta = -0.5 * np.sum(beta * beta, axis=1) / COMPLIANCE_PRIOR_VAR
        s = sigma[:, 0]
        lp_sigma = -np.log1p((s / HALF_CAUCHY_SCALE) ** 2) + np.log(s)  # half-Cauchy + log Jacobian
        out = ll + lp_beta + lp_sigma
        return np.where(ok & np.isfinite(out), out, -np.inf)

    return logpost


def fit_compliance_model(
    data: ComplianceData,
    recipe: Optional[Sequence[str]] = None,
    mcmc_config: MCMCConfig = MCMCConfig(),
    seed=None,
    check: bool = True,
) -> TruncNormPosterior:
    """Posterior for the truncated-normal compliance model on untreated records.

    Raises :class:`ConvergenceError` when ``check`` and any parameter misses
    the R-hat or ESS gate.
    """
    recipe = tuple(recipe or default_compliance_recipe(data))
    untreated = np.flatnonzero(data.a1 == 0)
    if untreated.size < MIN_UNTREATED:
        raise ValueError(f"need at least {MIN_UNTREATED} untreated records, got {untreated.size}")
    X = design_matrix(recipe, data.history(untreated))
    c = data.c1[untreated]
    logpost = _tn_logpost_factory(X, c)
    beta0 = np.linalg.lstsq(X, c, rcond=None)[0]
    resid = c - X @ beta0
    x0 = np.r_[beta0, math.log(max(float(resid.std()), 10 * SIGMA_FLOOR))]
    names = [f"beta[{t}]" for t in recipe] + ["log_sigma"]
    if check:
        res = sample_or_raise(logpost, x0, mcmc_config, seed, names, "compliance model")
    else:
        res = adaptive_metropolis(logpost, x0, mcmc_config, seed, names)
    flat = res.flat
    return TruncNormPosterior(recipe, flat[:, :-1], np.exp(flat[:, -1]), res)


def fit_outcome_model_bayes(
    data: ComplianceData,
    recipe: Optional[Sequence[str]] = None,
    prior_scale=3.0,
    mcmc_config: MCMCConfig = MCMCConfig(),
    seed=None,
    check: bool = True,
) -> LogitPosterior:
    """Bernoulli-logit posterior for ``Y`` given history, realized compliance and action.

    The prior is ``N(0, diag(prior_scale))``. A warning is issued when a
    standardized coefficient's 95% interval reaches beyond +-20, which signals
    (quasi-)separation.
    """
    recipe = tuple(recipe or default_outcome_recipe(data))
    y = data.y.astype(float)
    if y.min() == y.max():
        raise ValueError("both outcome classes must be present")
    X = design_matrix(recipe, data.features())
    scale = np.broadcast_to(np.asarray(prior_scale, dtype=float), (X.shape[1],))

    def logpost(beta):
        eta = np.atleast_2d(beta) @ X.T
        ll = eta @ y - np.sum(np.logaddexp(0.0, eta), axis=1)
        return ll - 0.5 * np.sum(np.atleast_2d(beta) ** 2 / scale, axis=1)

    names = [f"beta[{t}]" for t in recipe]
    x0 = np.zeros(X.shape[1])
    if check:
        res = sample_or_raise(logpost, x0, mcmc_config, seed, names, "outcome model")
    else:
        res = adaptive_metropolis(logpost, x0, mcmc_config, seed, names)
    post = LogitPosterior(recipe, res.flat, scale, res)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    lo, hi = np.percentile(post.beta * sd, [2.5, 97.5], axis=0)
    if np.any((lo < -SEPARATION_LIMIT) | (hi > SEPARATION_LIMIT)):
        warnings.warn("outcome model coefficients are extreme; the data may be separated", RuntimeWarning)
    return post


# ---------------------------------------------------------------------------
# imputation and counterfactual simulation


def impute_c1(posterior: TruncNormPosterior, record: ComplianceData, seed=None) -> np.ndarray:
    """Posterior-predictive draws of ``C1(0)`` for treated records.

    Each record gets its own ``(beta, sigma)`` draw from the posterior.
    """
    if np.any(record.a1 != 1):
        raise ValueError("imputation applies to treated records only; untreated compliance is observed")
    rng = np.random.default_rng(seed)
    k = rng.integers(posterior.n_draws, size=len(record))
    X = design_matrix(posterior.recipe, record.history())
    mu = np.sum(X * posterior.beta[k], axis=1)
    return truncnorm.sample(mu, posterior.sigma[k], rng)


@dataclass(frozen=True)
class SimConfig:
    population_size: int = 10_000
    repeats: int = 30
    n_value_draws: int = 100

    def __post_init__(self):
        if self.population_size < 1 or self.repeats < 1:
            raise ValueError("population_size and repeats must be positive")
        if self.n_value_draws < 2:
            raise ValueError("n_value_draws must be at least 2")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        return cls(**d)


def value_draw(
    data: ComplianceData,
    policy: Policy,
    compliance_post: TruncNormPosterior,
    outcome_post: LogitPosterior,
    sim_config: SimConfig = SimConfig(),
    seed=None,
) -> float:
    """Mean outcome of one simulated population following ``policy``.

    One parameter draw from each posterior is used for the whole population.
    """
    rng = np.random.default_rng(seed)
    m = sim_config.population_size
    idx = rng.integers(len(data), size=m)
    hist = data.history(idx)
    action = np.asarray(policy.decide(hist), dtype=float)
    c1 = data.c1[idx].copy()
    latent = (data.a1[idx] == 1) & (action == 0)
    jc = rng.integers(compliance_post.n_draws)
    if latent.any():
        Xc = design_matrix(compliance_post.recipe, {k: v[latent] for k, v in hist.items()})
        c1[latent] = truncnorm.sample(Xc @ compliance_post.beta[jc], compliance_post.sigma[jc], rng)
    c1[action == 1] = 1.0
    feats = dict(hist, c1=c1, a1=action)
    jy = rng.integers(outcome_post.n_draws)
    p = expit(design_matrix(outcome_post.recipe, feats) @ outcome_post.beta[jy])
    return float(np.mean(rng.uniform(size=m) < p))


@dataclass(frozen=True)
class ValuePosterior:
    draws: tuple

    @property
    def mean(self) -> float:
        return float(np.mean(self.draws))

    @property
    def median(self) -> float:
        return float(np.median(self.draws))

    @property
    def interval(self) -> tuple:
        lo, hi = np.percentile(self.draws, [2.5, 97.5])
        return float(lo), float(hi)

    def summary(self) -> dict:
        return {"mean": self.mean, "median": self.median, "interval95": list(self.interval),
                "n_draws": len(self.draws)}

    def to_dict(self) -> dict:
        return {**self.summary(), "draws": list(self.draws)}


def value_posterior(
    data: ComplianceData,
    policy: Policy,
    posteriors: tuple,
    sim_config: SimConfig = SimConfig(),
    seed=None,
) -> ValuePosterior:
    """Each of the ``n_value_draws`` draws averages ``repeats`` value draws."""
    compliance_post, outcome_post = posteriors
    children = np.random.SeedSequence(seed).spawn(sim_config.n_value_draws * sim_config.repeats)
    vals = np.array([value_draw(data, policy, compliance_post, outcome_post, sim_config, s) for s in children])
    draws = vals.reshape(sim_config.n_value_draws, sim_config.repeats).mean(axis=1)
    return ValuePosterior(tuple(float(v) for v in draws))


# ---------------------------------------------------------------------------
# synthetic PAD-like cohort


@dataclass(frozen=True)
class PadLikeSpec:
    """Coefficients of a synthetic cohort with known truth.

    History is ``H1 = (age, w0, c0, x1)``; ``age ~ N(0, 1)``, wound size
    ``w0 ~ LogNormal(log w0_median, w0_log_sd)`` clipped to ``[0.1, 100]``,
    ``c0 ~ Beta(c0_a, c0_b)`` and ``x1 = 0.5 age + N(0, 1)``. Coefficient
    vectors are ordered ``(1, age, w0, c0, x1)``; the outcome vector appends
    ``(c1, a1)``. ``Y`` depends on ``C1(0)`` only through realized compliance,
    so principal ignorability holds by construction.
    """

    treatment: tuple = (0.1, 0.3, 0.03, -1.0, 0.2)
    compliance: tuple = (0.2, 0.0, -0.004, 0.5, 0.03)
    compliance_sigma: float = 0.15
    outcome: tuple = (-1.0, 0.2, -0.02, 0.5, 0.2, 1.5, -0.9)
    w0_median: float = 8.0
    w0_log_sd: float = 0.9
    c0_a: float = 2.0
    c0_b: float = 2.0

    def __post_init__(self):
        if len(self.treatment) != 5 or len(self.compliance) != 5 or len(self.outcome) != 7:
            raise ValueError("coefficient vectors must have lengths 5, 5 and 7")
        if not self.compliance_sigma > 0:
            raise ValueError("compliance_sigma must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PadLikeSpec":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def _simulate_history(spec: PadLikeSpec, n: int, rng) -> np.ndarray:
    age = rng.standard_normal(n)
    w0 = np.clip(np.exp(math.log(spec.w0_median) + spec.w0_log_sd * rng.standard_normal(n)), 0.1, 100.0)
    c0 = rng.beta(spec.c0_a, spec.c0_b, n)
    x1 = 0.5 * age + rng.standard_normal(n)
    return np.column_stack([np.ones(n), age, w0, c0, x1])


def _latent_compliance(spec: PadLikeSpec, H: np.ndarray, rng) -> np.ndarray:
    return truncnorm.sample(H @ np.asarray(spec.compliance), spec.compliance_sigma, rng)


def _outcome_prob(spec: PadLikeSpec, H, c1, a1) -> np.ndarray:
    g = np.asarray(spec.outcome)
    return expit(H @ g[:5] + g[5] * c1 + g[6] * a1)


def generate_pad_like_data(spec: PadLikeSpec, n: int, seed=None) -> ComplianceData:
    rng = np.random.default_rng(seed)
    H = _simulate_history(spec, n, rng)
    a1 = (rng.uniform(size=n) < expit(H @ np.asarray(spec.treatment))).astype(np.int8)
    c1_latent = _latent_compliance(spec, H, rng)
    c1 = np.where(a1 == 1, 1.0, c1_latent)
    y = (rng.uniform(size=n) < _outcome_prob(spec, H, c1, a1)).astype(np.int8)
    return ComplianceData(H[:, 1:3], H[:, 3], H[:, 4:5], a1, c1, y)


def forward_oracle(spec: PadLikeSpec, policy: Policy, n: int = 1_000_000, seed=None) -> float:
    """Policy value by forward simulation from the true models.

    Averages the outcome probability rather than Bernoulli draws of it, which
    has the same expectation and less Monte Carlo noise.
    """
    rng = np.random.default_rng(seed)
    H = _simulate_history(spec, n, rng)
    c1_latent = _latent_compliance(spec, H, rng)
    d = np.asarray(policy.decide({"age": H[:, 1], "w0": H[:, 2], "c0": H[:, 3], "x1": H[:, 4]}), dtype=float)
    c1 = np.where(d == 1, 1.0, c1_latent)
    return float(np.mean(_outcome_prob(spec, H, c1, d)))


def write_diagnostics(path, compliance_post: TruncNormPosterior, outcome_post: LogitPosterior) -> None:
    doc = {"compliance": compliance_post.diagnostics(), "outcome": outcome_post.diagnostics()}
    with open(path, "w") as fh:
        fh.write(json.dumps(doc, indent=2) + "\n")
