"""Multi-chain adaptive random-walk Metropolis with split-R-hat and ESS.

Chains advance in lockstep so the log-density is evaluated on a
``(n_chains, dim)`` batch per iteration. Proposal adaptation (covariance
from pooled history plus a per-chain Robbins-Monro scale) happens only during
burn-in; kept draws come from a fixed kernel.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .errors import ConvergenceError


@dataclass(frozen=True)
class MCMCConfig:
    n_chains: int = 4
    n_iter: int = 5000
    burn_in: int = 2500
    target_accept: float = 0.234
    rhat_max: float = 1.05
    ess_min: float = 100.0
    adapt_every: int = 50

    def __post_init__(self):
        if self.n_chains < 2:
            raise ValueError("at least two chains are needed for R-hat")
        if not 0 < self.burn_in < self.n_iter:
            raise ValueError("need 0 < burn_in < n_iter")

    @classmethod
    def from_dict(cls, d: dict) -> "MCMCConfig":
        return cls(**d)


@dataclass
class ChainResult:
    """Post-burn-in draws, shape ``(n_chains, n_kept, dim)``."""

    draws: np.ndarray
    names: tuple
    acceptance: np.ndarray
    rhat: np.ndarray = field(default=None)
    ess: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.rhat is None:
            self.rhat = np.array([split_rhat(self.draws[:, :, j]) for j in range(self.draws.shape[2])])
        if self.ess is None:
            self.ess = np.array([effective_sample_size(self.draws[:, :, j]) for j in range(self.draws.shape[2])])

    @property
    def flat(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[2])

    def diagnostics(self) -> dict:
        return {
            "parameters": list(self.names),
            "rhat": [float(v) for v in self.rhat],
            "ess": [float(v) for v in self.ess],
            "acceptance": [float(v) for v in self.acceptance],
            "n_chains": int(self.draws.shape[0]),
            "n_kept": int(self.draws.shape[1]),
        }

    def converged(self, config: MCMCConfig) -> bool:
        return bool(np.all(self.rhat <= config.rhat_max) and np.all(self.ess >= config.ess_min))


def split_rhat(chains: np.ndarray) -> float:
    """Potential scale reduction on chains split in half, ``chains`` shape ``(m, n)``."""
    chains = np.asarray(chains, dtype=float)
    half = chains.shape[1] // 2
    parts = np.vstack([chains[:, :half], chains[:, chains.shape[1] - half:]])
    n = parts.shape[1]
    w = parts.var(axis=1, ddof=1).mean()
    b = n * parts.mean(axis=1).var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else np.inf
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.size
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    return np.fft.irfft(f * np.conjugate(f), size)[:n] / n


def effective_sample_size(chains: np.ndarray) -> float:
    """Multi-chain ESS with Geyer's initial monotone sequence truncation."""
    chains = np.asarray(chains, dtype=float)
    m, n = chains.shape
    acov = np.array([_autocov(c) for c in chains])
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    var_plus = w * (n - 1) / n
    if m > 1:
        var_plus += chains.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return float(m * n)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # sum consecutive pairs while positive, enforcing monotone decrease
    pairs = []
    for t in range(0, n - 1, 2):
        p = rho[t] + rho[t + 1]
        if p <= 0:
            break
        if pairs and p > pairs[-1]:
            p = pairs[-1]
        pairs.append(p)
    tau = -1.0 + 2.0 * sum(pairs) if pairs else 1.0
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def find_mode(logpost: Callable, x0: np.ndarray):
    """MAP estimate and an inverse-Hessian approximation at it."""
    fun = lambda x: -float(logpost(x[None, :])[0])
    res = minimize(fun, np.asarray(x0, dtype=float), method="BFGS", options={"gtol": 1e-6, "maxiter": 2000})
    cov = np.asarray(res.hess_inv, dtype=float)
    cov = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(cov)
    cov = (evecs * np.clip(evals, 1e-10, 1e4)) @ evecs.T
    return res.x, cov


def adaptive_metropolis(
    logpost: Callable,
    x0: np.ndarray,
    config: MCMCConfig = MCMCConfig(),
    seed=None,
    names=None,
) -> ChainResult:
    """Sample ``logpost`` (batched: ``(k, dim) -> (k,)``) starting near ``x0``.

    Chains start from overdispersed points around the mode.
    """
    rng = np.random.default_rng(seed)
    mode, cov0 = find_mode(logpost, x0)
    dim = mode.size
    m = config.n_chains
    chol0 = np.linalg.cholesky(cov0)
    x = mode + 2.0 * rng.standard_normal((m, dim)) @ chol0.T
    lp = logpost(x)
    bad = ~np.isfinite(lp)
    x[bad], lp[bad] = mode, logpost(mode[None, :])[0]

    base = 2.38**2 / dim
    chol = np.linalg.cholesky(base * cov0)
    log_scale = np.zeros(m)
    kept = np.empty((m, config.n_iter - config.burn_in, dim))
    history = np.empty((config.burn_in, m, dim))
    accepted = np.zeros(m)
    for t in range(config.n_iter):
        step = rng.standard_normal((m, dim)) @ chol.T
        prop = x + np.exp(log_scale)[:, None] * step
        lp_prop = logpost(prop)
        accept = np.log(rng.uniform(size=m)) < lp_prop - lp
        x = np.where(accept[:, None], prop, x)
        lp = np.where(accept, lp_prop, lp)
        if t < config.burn_in:
            history[t] = x
            gain = 1.0 / np.sqrt(t + 1.0)
            log_scale += gain * (accept - config.target_accept)
            if t >= 200 and (t + 1) % config.adapt_every == 0:
                pooled = history[t // 2: t + 1].reshape(-1, dim)
                emp = np.cov(pooled, rowvar=False).reshape(dim, dim)
                emp += 1e-10 * np.eye(dim)
                try:
                    chol = np.linalg.cholesky(base * emp)
                    # rescaling of the covariance is absorbed by log_scale from here on
                except np.linalg.LinAlgError:
                    pass
        else:
            kept[:, t - config.burn_in] = x
            accepted += accept
    names = tuple(names) if names is not None else tuple(f"p{j}" for j in range(dim))
    return ChainResult(kept, names, accepted / kept.shape[1])


def sample_or_raise(logpost, x0, config: MCMCConfig, seed, names, what: str) -> ChainResult:
    result = adaptive_metropolis(logpost, x0, config, seed, names)
    if not result.converged(config):
        raise ConvergenceError(
            f"{what} sampler failed diagnostics (max R-hat {result.rhat.max():.4f}, min ESS {result.ess.min():.1f})",
            result.diagnostics(),
        )
    return result
