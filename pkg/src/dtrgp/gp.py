"""Gaussian-process regression over policy-parameter space.

Zero-mean GP with an ARD Matérn kernel and white noise. Fitting factors the
Gram matrix once; prediction is exact conditioning of the joint Gaussian.
Hyperparameters are tuned by maximizing the log marginal likelihood over
log-parameters with multi-start local search.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.linalg.lapack import dpotrf, dpotri, dpotrs
from scipy.optimize import minimize
from scipy.stats import qmc

from .errors import NumericalError

SUPPORTED_NU = (0.5, 1.5, 2.5)
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
NEGATIVE_VARIANCE_TOL = 1e-10
_SQRT3 = math.sqrt(3.0)
_SQRT5 = math.sqrt(5.0)
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class KernelSpec:
    """Matérn covariance with ARD lengthscales and homoscedastic white noise."""

    nu: float = 1.5
    signal_variance: float = 1.0
    lengthscales: tuple = (1.0,)
    noise_variance: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "lengthscales", tuple(float(v) for v in self.lengthscales))
        if self.nu not in SUPPORTED_NU:
            raise ValueError(f"nu must be one of {SUPPORTED_NU}, got {self.nu}")
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")
        if any(not (ls > 0) for ls in self.lengthscales):
            raise ValueError("lengthscales must be positive")
        if not self.noise_variance >= 0:
            raise ValueError("noise_variance must be non-negative")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)

    def to_dict(self) -> dict:
        return {
            "nu": self.nu,
            "signal_variance": self.signal_variance,
            "lengthscales": list(self.lengthscales),
            "noise_variance": self.noise_variance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(
            nu=float(d["nu"]),
            signal_variance=float(d["signal_variance"]),
            lengthscales=tuple(d["lengthscales"]),
            noise_variance=float(d["noise_variance"]),
        )


@dataclass(frozen=True)
class PredictiveDistribution:
    mean: float
    variance: float

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)


def matern_correlation(r: np.ndarray, nu: float) -> np.ndarray:
    """Matérn correlation as a function of scaled distance ``r``."""
    if nu == 0.5:
        return np.exp(-r)
    if nu == 1.5:
        s = _SQRT3 * r
        return (1.0 + s) * np.exp(-s)
    if nu == 2.5:
        s = _SQRT5 * r
        return (1.0 + s + s * s / 3.0) * np.exp(-s)
    raise ValueError(f"unsupported nu {nu}")


def kernel_matrix(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross-covariance ``K(a, b)`` without the noise term."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    ls = np.asarray(spec.lengthscales)
    if a.shape[1] != ls.size or b.shape[1] != ls.size:
        raise ValueError(
            f"dimension mismatch: inputs {a.shape[1]}/{b.shape[1]}, lengthscales {ls.size}"
        )
    r2 = np.zeros((a.shape[0], b.shape[0]))
    for k in range(ls.size):
        r2 += np.subtract.outer(a[:, k] / ls[k], b[:, k] / ls[k]) ** 2
    r = np.sqrt(r2)
    return spec.signal_variance * matern_correlation(r, spec.nu)


def kernel_eval(spec: KernelSpec, a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != spec.dim or b.size != spec.dim:
        raise ValueError(
            f"dimension mismatch: a has {a.size}, b has {b.size}, kernel has {spec.dim}"
        )
    return float(kernel_matrix(spec, a[None, :], b[None, :])[0, 0])


def _as_pairs(inputs, targets=None):
    if targets is None:
        if len(inputs) == 0:
            raise ValueError("need at least one training pair")
        x = np.array([np.atleast_1d(np.asarray(t, dtype=float)) for t, _ in inputs])
        y = np.array([float(v) for _, v in inputs])
    else:
        x = np.asarray(inputs, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(targets, dtype=float).ravel()
    if x.shape[0] != y.size:
        raise ValueError(f"{x.shape[0]} inputs but {y.size} targets")
    if y.size < 1:
        raise ValueError("need at least one training pair")
    return x, y


def _noise_vector(kernel: KernelSpec, n: int, per_point_noise) -> np.ndarray:
    noise = np.full(n, kernel.noise_variance)
    if per_point_noise is not None:
        ppn = np.asarray(per_point_noise, dtype=float).ravel()
        if ppn.size != n:
            raise ValueError(f"per_point_noise has {ppn.size} entries, expected {n}")
        if np.any(ppn < 0):
            raise ValueError("per_point_noise must be non-negative")
        noise = noise + ppn
    return noise


def _factor(gram: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor with the jitter ladder; returns (L, jitter used)."""
    for jitter in JITTER_LADDER:
        try:
            if jitter == 0.0:
                return np.linalg.cholesky(gram), jitter
            return np.linalg.cholesky(gram + jitter * np.eye(gram.shape[0])), jitter
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(
        f"Gram matrix not positive definite after jitter {JITTER_LADDER[-1]:g}"
    )


@dataclass(frozen=True)
class GpModel:
    """A fitted GP surrogate. Immutable once built by :func:`gp_fit`."""

    kernel: KernelSpec
    train_inputs: np.ndarray
    train_targets: np.ndarray
    per_point_noise: Optional[np.ndarray]
    gram_factor: np.ndarray
    alpha: np.ndarray
    offset: float = 0.0
    center: bool = True
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.train_targets.size

    def predict(self, query) -> PredictiveDistribution:
        return gp_predict(self, query)

    def predict_many(self, queries) -> tuple[np.ndarray, np.ndarray]:
        return gp_predict_many(self, queries)

    def fast_predictor(self):
        """Vectorized ``(m, d) -> (means, variances)`` for many small repeated batches.

        Precomputes the inverse Cholesky factor once, so each call is two
        matrix products with no validation.
        """
        linv_t = solve_triangular(self.gram_factor, np.eye(self.n), lower=True, check_finite=False).T
        ls = np.asarray(self.kernel.lengthscales)
        xs = (self.train_inputs / ls).T
        alpha, offset, sf2, nu = self.alpha, self.offset, self.kernel.signal_variance, self.kernel.nu

        def predict(q):
            q = q / ls
            r2 = np.zeros((q.shape[0], xs.shape[1]))
            for k in range(xs.shape[0]):
                r2 += np.subtract.outer(q[:, k], xs[k]) ** 2
            ks = sf2 * matern_correlation(np.sqrt(r2), nu)
            v = ks @ linv_t
            return ks @ alpha + offset, _clamp_variance(sf2 - (v * v).sum(axis=1))

        return predict

    def point_predictor(self):
        """Scalar ``theta -> (mean, variance)`` built on :meth:`fast_predictor`."""
        batch = self.fast_predictor()

        def predict(theta):
            mean, var = batch(np.asarray(theta, dtype=float).reshape(1, -1))
            return float(mean[0]), float(var[0])

        return predict

    def to_json(self) -> str:
        doc = {
            "kernel": self.kernel.to_dict(),
            "train_inputs": self.train_inputs.tolist(),
            "train_targets": self.train_targets.tolist(),
            "per_point_noise": None
            if self.per_point_noise is None
            else self.per_point_noise.tolist(),
            "center": self.center,
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GpModel":
        doc = json.loads(text)
        return gp_fit(
            KernelSpec.from_dict(doc["kernel"]),
            doc["train_inputs"],
            doc["train_targets"],
            per_point_noise=doc["per_point_noise"],
            center=doc.get("center", True),
        )


def gp_fit(kernel: KernelSpec, inputs, targets=None, per_point_noise=None, center: bool = True) -> GpModel:
    """Condition a zero-mean GP on training pairs.

    ``inputs`` may be a list of ``(theta, value)`` pairs (``targets`` omitted)
    or an ``(n, d)`` array with ``targets`` given separately. With ``center``
    the sample mean of the targets is removed before fitting and added back
    at prediction time.
    """
    x, y = _as_pairs(inputs, targets)
    if x.shape[1] != kernel.dim:
        raise ValueError(f"inputs have dimension {x.shape[1]}, kernel has {kernel.dim}")
    noise = _noise_vector(kernel, y.size, per_point_noise)
    offset = float(y.mean()) if center else 0.0
    gram = kernel_matrix(kernel, x, x)
    gram[np.diag_indices_from(gram)] += noise
    L, jitter = _factor(gram)
    alpha = cho_solve((L, True), y - offset)
    ppn = None if per_point_noise is None else np.asarray(per_point_noise, dtype=float).ravel()
    return GpModel(
        kernel=kernel,
        train_inputs=x,
        train_targets=y,
        per_point_noise=ppn,
        gram_factor=L,
        alpha=alpha,
        offset=offset,
        center=center,
        jitter=jitter,
    )


def _clamp_variance(var: np.ndarray) -> np.ndarray:
    if np.any(var < -NEGATIVE_VARIANCE_TOL):
        raise NumericalError(f"negative predictive variance {var.min():.3g}")
    return np.maximum(var, 0.0)


def gp_predict_many(model: GpModel, queries) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized predictive mean and variance at each row of ``queries``."""
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    if q.shape[1] != model.kernel.dim:
        raise ValueError(f"query dimension {q.shape[1]} != model dimension {model.kernel.dim}")
    ks = kernel_matrix(model.kernel, q, model.train_inputs)
    mean = ks @ model.alpha + model.offset
    v = solve_triangular(model.gram_factor, ks.T, lower=True, check_finite=False)
    var = model.kernel.signal_variance - np.einsum("ij,ij->j", v, v)
    return mean, _clamp_variance(var)


def gp_predict(model: GpModel, query) -> PredictiveDistribution:
    mean, var = gp_predict_many(model, np.asarray(query, dtype=float).reshape(1, -1))
    return PredictiveDistribution(float(mean[0]), float(var[0]))


def log_marginal_likelihood(kernel: KernelSpec, inputs, targets=None, per_point_noise=None) -> float:
    """Gaussian log evidence of the targets under the zero-mean GP prior."""
    x, y = _as_pairs(inputs, targets)
    gram = kernel_matrix(kernel, x, x)
    gram[np.diag_indices_from(gram)] += _noise_vector(kernel, y.size, per_point_noise)
    L, _ = _factor(gram)
    a = cho_solve((L, True), y)
    return float(-0.5 * y @ a - np.log(np.diag(L)).sum() - 0.5 * y.size * _LOG_2PI)


# --------------------------------------------------------------------------
# hyperparameter tuning


@dataclass(frozen=True)
class TuneConfig:
    """Search box (natural-log scale) and restart policy for tuning."""

    nu: float = 1.5
    n_restarts: int = 8
    log_lengthscale_bounds: tuple = (-5.0, 7.0)
    log_signal_bounds: tuple = (-7.0, 4.0)
    log_noise_bounds: tuple = (-12.0, 2.0)
    method: str = "l-bfgs-b"
    maxiter: int = 200
    ftol: float = 1e-7
    center: bool = True

    def bounds(self, dim: int) -> list:
        return [self.log_lengthscale_bounds] * dim + [self.log_signal_bounds, self.log_noise_bounds]

    @classmethod
    def from_dict(cls, d: dict) -> "TuneConfig":
        d = dict(d)
        for key in ("log_lengthscale_bounds", "log_signal_bounds", "log_noise_bounds"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _unpack(params: np.ndarray, nu: float) -> KernelSpec:
    dim = params.size - 2
    return KernelSpec(
        nu=nu,
        signal_variance=float(np.exp(params[dim])),
        lengthscales=tuple(np.exp(params[:dim])),
        noise_variance=float(np.exp(params[dim + 1])),
    )


def _pack(kernel: KernelSpec) -> np.ndarray:
    return np.log(
        np.r_[np.asarray(kernel.lengthscales), kernel.signal_variance, max(kernel.noise_variance, 1e-300)]
    )


def _lengthscale_grad_factor(r: np.ndarray, nu: float) -> np.ndarray:
    """d corr / d log(l_k) = factor * s_k**2, with s_k the scaled difference."""
    if nu == 0.5:
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(r > 0, np.exp(-r) / r, 0.0)
        return f
    if nu == 1.5:
        return 3.0 * np.exp(-_SQRT3 * r)
    return (5.0 / 3.0) * (1.0 + _SQRT5 * r) * np.exp(-_SQRT5 * r)


def _sq_diffs(x: np.ndarray) -> np.ndarray:
    """Per-dimension squared differences, shape (dim, n, n)."""
    return np.stack([(c[:, None] - c[None, :]) ** 2 for c in x.T])


def _factor_lapack(gram: np.ndarray) -> Optional[np.ndarray]:
    """Lower Cholesky factor (upper triangle zeroed) via the jitter ladder, or None."""
    for jitter in JITTER_LADDER:
        g = gram if jitter == 0.0 else gram + jitter * np.eye(gram.shape[0])
        L, info = dpotrf(g, lower=1, clean=1)
        if info == 0:
            return L
    return None


def nlml_and_grad(params: np.ndarray, x: np.ndarray, y: np.ndarray, nu: float, ppn=None, d2=None):
    """Negative log marginal likelihood and its gradient in log-parameters.

    Parameter order: log lengthscales, log signal variance, log noise variance.
    ``d2`` caches :func:`_sq_diffs` of ``x`` across calls. Returns
    ``(inf, zeros)`` when the Gram matrix cannot be factored.
    """
    n, dim = x.shape
    if d2 is None:
        d2 = _sq_diffs(x)
    inv_l2 = np.exp(-2.0 * params[:dim])
    sf2 = math.exp(params[dim])
    sn2 = math.exp(params[dim + 1])
    sq = d2.reshape(dim, -1) * inv_l2[:, None]
    r = np.sqrt(sq.sum(axis=0)).reshape(n, n)
    corr = matern_correlation(r, nu)
    gram = sf2 * corr
    gram.flat[:: n + 1] += sn2 if ppn is None else sn2 + ppn
    L = _factor_lapack(gram)
    if L is None:
        return np.inf, np.zeros_like(params)
    a, _ = dpotrs(L, y, lower=1)
    nll = 0.5 * y @ a + np.log(np.diag(L)).sum() + 0.5 * n * _LOG_2PI
    kinv, info = dpotri(L, lower=1, overwrite_c=1)
    if info != 0:
        return np.inf, np.zeros_like(params)
    np.add(kinv, kinv.T, out=kinv)  # upper triangle of the dpotri output is zero
    kinv.flat[:: n + 1] *= 0.5
    w = np.outer(a, a) - kinv
    grad = np.empty_like(params)
    wg = w * (sf2 * _lengthscale_grad_factor(r, nu))
    grad[:dim] = -0.5 * (sq @ wg.ravel())
    grad[dim] = -0.5 * sf2 * np.vdot(w, corr)
    grad[dim + 1] = -0.5 * sn2 * np.trace(w)
    return float(nll), grad


def _nlml_only(params, x, y, nu, ppn, d2):
    return nlml_and_grad(params, x, y, nu, ppn, d2)[0]


def tune_hyperparameters(
    inputs,
    targets=None,
    per_point_noise=None,
    config: TuneConfig = TuneConfig(),
    seed=0,
    initial: Optional[KernelSpec] = None,
) -> KernelSpec:
    """Maximize the log marginal likelihood over the log-parameter box.

    Starting points come from a Latin-hypercube design over the box; an
    ``initial`` kernel, if given, is used as one extra warm start. The best
    local optimum over all starts wins; ties go to the earliest start.
    """
    x, y = _as_pairs(inputs, targets)
    if y.size < 3:
        raise ValueError("tuning needs at least 3 pairs")
    if config.center:
        y = y - y.mean()
    ppn = None if per_point_noise is None else np.asarray(per_point_noise, dtype=float).ravel()
    dim = x.shape[1]
    bounds = np.asarray(config.bounds(dim))
    starts = []
    if initial is not None:
        starts.append(np.clip(_pack(initial), bounds[:, 0], bounds[:, 1]))
    if config.n_restarts > 0:
        sampler = qmc.LatinHypercube(d=bounds.shape[0], seed=np.random.default_rng(seed))
        starts.extend(qmc.scale(sampler.random(config.n_restarts), bounds[:, 0], bounds[:, 1]))

    d2 = _sq_diffs(x)
    best_val, best_params = np.inf, None
    for x0 in starts:
        if config.method == "nelder-mead":
            res = minimize(
                _nlml_only,
                x0,
                args=(x, y, config.nu, ppn, d2),
                method="Nelder-Mead",
                bounds=bounds,
                options={"maxiter": config.maxiter * (dim + 2), "xatol": 1e-4, "fatol": 1e-8},
            )
        else:
            res = minimize(
                nlml_and_grad,
                x0,
                args=(x, y, config.nu, ppn, d2),
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": config.maxiter, "ftol": config.ftol},
            )
        if np.isfinite(res.fun) and res.fun < best_val:
            best_val, best_params = float(res.fun), np.clip(res.x, bounds[:, 0], bounds[:, 1])
    if best_params is None:
        raise NumericalError("hyperparameter tuning failed: no start produced a PD Gram matrix")
    return _unpack(best_params, config.nu)
