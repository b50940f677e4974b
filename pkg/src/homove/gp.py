"""Exact GP regression with a Matern-5/2 ARD kernel.

Hyperparameters live in the units of the observations.  ``fit_hyper`` works on
standardised targets internally (the fit bounds refer to that scale) and maps
the result back, so ``GpModel`` never has to know about standardisation.
All solves go through one Cholesky factor; nothing is explicitly inverted.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, lapack, solve_triangular
from scipy.optimize import minimize

LENGTHSCALE_BOUNDS = (0.005, 2.0)
SIGNAL_BOUNDS = (0.05, 20.0)
NOISE_BOUNDS = (1e-6, 0.2)
JITTER = 1e-6
JITTER_DOUBLINGS = 3
VAR_TOL = 1e-10
SQRT5 = math.sqrt(5.0)


@dataclass
class Dataset:
    """Observations on the unit cube; ``bounds`` records the physical box for exchange."""
    X: np.ndarray
    y: np.ndarray
    bounds: dict = field(default_factory=dict)
    origin: list = field(default_factory=list)  # per-row tag, e.g. "source"/"target"; empty = untagged

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.X.size == 0:
            self.X = self.X.reshape(0, self.X.shape[1] if self.X.ndim == 2 else 0)
        if len(self.X) != len(self.y):
            raise ValueError("X and y lengths differ")
        self.origin = list(self.origin)
        if self.origin and len(self.origin) != len(self.y):
            raise ValueError("origin tags must match the number of rows")
        if self.X.size and (self.X.min() < -1e-12 or self.X.max() > 1 + 1e-12):
            raise ValueError("dataset points must lie in [0, 1]^d")

    @classmethod
    def empty(cls, d: int, bounds: dict | None = None) -> Dataset:
        return cls(np.zeros((0, d)), np.zeros(0), bounds or {})

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def tags(self) -> list:
        return self.origin if self.origin else ["target"] * self.n

    def append(self, x, y: float, origin: str = "target") -> None:
        if self.origin or origin != "target":
            self.origin = self.tags() + [origin]
        self.X = np.vstack([self.X, np.asarray(x, dtype=float)[None, :]])
        self.y = np.append(self.y, float(y))

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=int)
        origin = [self.origin[i] for i in idx] if self.origin else []
        return Dataset(self.X[idx], self.y[idx], dict(self.bounds), origin)

    def to_dict(self) -> dict:
        doc = {"X": self.X.tolist(), "y": self.y.tolist(), "bounds": self.bounds}
        if self.origin:
            doc["origin"] = list(self.origin)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> Dataset:
        X = np.asarray(doc["X"], dtype=float)
        if X.size == 0:
            d = len(doc.get("bounds", {}).get("lower", [])) if doc.get("bounds") else 0
            X = X.reshape(0, d)
        return cls(X, np.asarray(doc["y"], dtype=float), dict(doc.get("bounds", {})), list(doc.get("origin", [])))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> Dataset:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class GpHyper:
    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float
    mean_const: float = 0.0

    @classmethod
    def default(cls, d: int) -> GpHyper:
        return cls(np.full(d, 0.5), 1.0, 0.01, 0.0)

    def to_dict(self) -> dict:
        return {"lengthscales": [float(v) for v in self.lengthscales], "signal_variance": self.signal_variance,
                "noise_variance": self.noise_variance, "mean_const": self.mean_const}


# --- kernel ---------------------------------------------------------------

def _scaled_dist(A: np.ndarray, B: np.ndarray, ls: np.ndarray) -> np.ndarray:
    a = A / ls
    b = B / ls
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(d2, 0.0))


def matern52(r: np.ndarray) -> np.ndarray:
    s = SQRT5 * r
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def kernel_matrix(A, B, hyper: GpHyper) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    return hyper.signal_variance * matern52(_scaled_dist(A, B, np.asarray(hyper.lengthscales, dtype=float)))


def kernel(x1, x2, hyper: GpHyper) -> float:
    """Matern-5/2 covariance between two points."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.shape != x2.shape:
        raise ValueError("dimension mismatch")
    r = math.sqrt(float(np.sum(((x1 - x2) / np.asarray(hyper.lengthscales, dtype=float)) ** 2)))
    return float(hyper.signal_variance * matern52(np.array(r)))


def stable_cholesky(K: np.ndarray, jitter: float = JITTER, doublings: int = JITTER_DOUBLINGS) -> np.ndarray:
    """Lower Cholesky factor, adding ``jitter`` (then 2x, 4x, 8x) to the diagonal on failure."""
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(len(K))
    for k in range(doublings + 1):
        try:
            return np.linalg.cholesky(K + jitter * (2 ** k) * eye)
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError(f"matrix not positive definite even with jitter {jitter * 2 ** doublings:g}")


# --- model ----------------------------------------------------------------

class GpModel:
    """GP posterior conditioned on ``(X, y)`` under fixed hyperparameters."""

    def __init__(self, X, y, hyper: GpHyper):
        self.hyper = hyper
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.y = np.asarray(y, dtype=float).reshape(-1)
        if len(self.y) == 0:
            self.X = self.X.reshape(0, len(hyper.lengthscales))
            self.L = None
            self.alpha = np.zeros(0)
            return
        K = kernel_matrix(self.X, self.X, hyper) + hyper.noise_variance * np.eye(len(self.y))
        self.L = stable_cholesky(K)
        self.alpha = cho_solve((self.L, True), self.y - hyper.mean_const)

    @classmethod
    def from_dataset(cls, data: Dataset, hyper: GpHyper) -> GpModel:
        return cls(data.X, data.y, hyper)

    @property
    def n(self) -> int:
        return len(self.y)

    def _cross(self, Xq: np.ndarray):
        Ks = kernel_matrix(Xq, self.X, self.hyper)
        V = solve_triangular(self.L, Ks.T, lower=True)
        return Ks, V

    def posterior(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and (latent, noise-free) variance at each query row."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        prior_var = np.full(len(Xq), self.hyper.signal_variance)
        if self.n == 0:
            return np.full(len(Xq), self.hyper.mean_const), prior_var
        Ks, V = self._cross(Xq)
        mean = self.hyper.mean_const + Ks @ self.alpha
        var = prior_var - (V * V).sum(0)
        return mean, _clamp_var(var)

    def posterior_cov(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        prior = kernel_matrix(Xq, Xq, self.hyper)
        if self.n == 0:
            return np.full(len(Xq), self.hyper.mean_const), prior
        Ks, V = self._cross(Xq)
        mean = self.hyper.mean_const + Ks @ self.alpha
        cov = prior - V.T @ V
        return mean, 0.5 * (cov + cov.T)


def _clamp_var(var: np.ndarray) -> np.ndarray:
    # negative values are cancellation round-off
    return np.maximum(var, 0.0)


def posterior(model: GpModel, x_query) -> tuple[np.ndarray, np.ndarray]:
    return model.posterior(x_query)


def sample_joint(model: GpModel, X_cand, rng: np.random.Generator) -> np.ndarray:
    """One draw of the latent function jointly over the candidate rows."""
    mean, cov = model.posterior_cov(X_cand)
    scale = max(float(np.mean(np.diag(cov))), 0.0)
    if scale <= VAR_TOL * max(model.hyper.signal_variance, 1.0):
        rng.standard_normal(len(mean))  # keep stream consumption independent of the branch
        return mean
    L = stable_cholesky(cov, jitter=JITTER * max(model.hyper.signal_variance, 1e-12))
    return mean + L @ rng.standard_normal(len(mean))


# --- hyperparameter fitting ----------------------------------------------

def _log_bounds(d: int) -> list[tuple[float, float]]:
    ls = (math.log(LENGTHSCALE_BOUNDS[0]), math.log(LENGTHSCALE_BOUNDS[1]))
    return [ls] * d + [(math.log(SIGNAL_BOUNDS[0]), math.log(SIGNAL_BOUNDS[1])),
                       (math.log(NOISE_BOUNDS[0]), math.log(NOISE_BOUNDS[1]))]


def neg_log_marginal_likelihood(theta: np.ndarray, X: np.ndarray, z: np.ndarray) -> tuple[float, np.ndarray]:
    """Negative LML of zero-mean targets ``z`` and its gradient in log-parameters."""
    n, d = X.shape
    ls = np.exp(theta[:d])
    sig = math.exp(theta[d])
    noise = math.exp(theta[d + 1])
    r = _scaled_dist(X, X, ls)
    e = np.exp(-SQRT5 * r)
    Kf = sig * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * e
    K = Kf + noise * np.eye(n)
    try:
        L = stable_cholesky(K)
    except np.linalg.LinAlgError:
        return 1e25, np.zeros_like(theta)
    alpha = cho_solve((L, True), z)
    nll = 0.5 * z @ alpha + np.log(np.diag(L)).sum() + 0.5 * n * math.log(2.0 * math.pi)
    # K^-1 from the same factor (needed for the trace terms of the gradient)
    Kinv, info = lapack.dpotri(L, lower=1)
    if info != 0:
        return 1e25, np.zeros_like(theta)
    Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
    W = np.outer(alpha, alpha) - Kinv
    G = W * (sig * 5.0 / 3.0 * (1.0 + SQRT5 * r) * e)
    Xs = X / ls
    # d/dlog(l_i) of 0.5 tr(W dK):  sum_j rowsum(G)_j xs_ji^2 - diag(xs^T G xs)_i
    grad_ls = G.sum(1) @ (Xs * Xs) - ((G @ Xs) * Xs).sum(0)
    grad = np.empty_like(theta)
    grad[:d] = -grad_ls
    grad[d] = -0.5 * np.sum(W * Kf)
    grad[d + 1] = -0.5 * noise * np.trace(W)
    return float(nll), grad


def _standardise(y: np.ndarray) -> tuple[float, float]:
    mu = float(np.mean(y))
    sd = float(np.std(y))
    return mu, (sd if sd > 1e-12 else 1.0)


def fit_hyper(data: Dataset, rng: np.random.Generator | int = 0, n_restarts: int = 8,
              warm_start: GpHyper | None = None, maxiter: int | None = None) -> GpHyper:
    """Multi-start L-BFGS-B on the log marginal likelihood of standardised targets.

    The first start is ``warm_start`` (if given, mapped to the standardised
    scale) or the default point; the rest are uniform in the log-box.
    """
    if data.n < 2:
        raise ValueError("need at least two observations to fit hyperparameters")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    X, d = data.X, data.d
    mu, sd = _standardise(data.y)
    z = (data.y - mu) / sd
    bounds = _log_bounds(d)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    if maxiter is None:
        maxiter = 200 if n_restarts > 1 or warm_start is None else 25
    starts = []
    if warm_start is not None:
        starts.append(np.concatenate([np.log(warm_start.lengthscales),
                                      [math.log(warm_start.signal_variance / sd ** 2),
                                       math.log(warm_start.noise_variance / sd ** 2)]]))
    else:
        starts.append(np.concatenate([np.full(d, math.log(0.5)), [0.0, math.log(0.01)]]))
    while len(starts) < max(n_restarts, 1):
        starts.append(rng.uniform(lo, hi))
    best, best_val = None, math.inf
    for x0 in starts:
        x0 = np.clip(x0, lo, hi)
        try:
            res = minimize(neg_log_marginal_likelihood, x0, args=(X, z), jac=True, method="L-BFGS-B",
                           bounds=bounds, options={"maxiter": maxiter})
        except (ValueError, np.linalg.LinAlgError, FloatingPointError):
            continue
        if np.all(np.isfinite(res.x)) and res.fun < best_val:
            best, best_val = res.x, float(res.fun)
    if best is None or best_val >= 1e24:
        var = float(np.var(data.y)) or 1.0
        return GpHyper(np.full(d, 0.5), var, 0.01 * var, mu)
    return GpHyper(np.exp(best[:d]), math.exp(best[d]) * sd ** 2, math.exp(best[d + 1]) * sd ** 2, mu)


def fit_model(data: Dataset, rng: np.random.Generator | int = 0, n_restarts: int = 8,
              warm_start: GpHyper | None = None) -> GpModel:
    return GpModel.from_dataset(data, fit_hyper(data, rng, n_restarts, warm_start))
