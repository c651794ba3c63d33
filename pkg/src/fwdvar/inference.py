"""Plug-in asymptotic covariance, studentization and confidence intervals.

With ``m_t = |sigma_hat_t|^2 / d`` and ``e_t = [d_a sigma_hat_t . sigma_hat_t / d]_a``
evaluated at the rows ``t_{i-1}``:

    B = (1/n) sum  4 / (m + eps)^2            e e^T
    D = (1/n) sum  8 m^2 / (m + eps)^4        e e^T
    Gamma = B^-1 D B^-1

and ``sqrt(n) Gamma^{-1/2} (theta_hat - theta)`` is approximately standard normal.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import ndtri

from .contrast import ContrastEvaluator
from .errors import InferenceError
from .surface import CumulativeVarianceSurface

CONDITION_LIMIT = 1e12
EIGEN_FLOOR = 1e-14


@dataclass
class CovarianceEstimate:
    B: np.ndarray
    D: np.ndarray
    gamma: np.ndarray
    condition_number_B: float
    free: np.ndarray

    def as_dict(self) -> dict:
        return {
            "B": self.B.tolist(),
            "D": self.D.tolist(),
            "gamma": self.gamma.tolist(),
            "condition_number_B": self.condition_number_B,
            "free": [int(a) for a in self.free],
        }


@dataclass
class InferenceResult:
    theta_hat: np.ndarray
    covariance: CovarianceEstimate
    n: int
    level: float
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    z: np.ndarray | None = None
    z_marginal: np.ndarray | None = None

    @property
    def gamma(self):
        return self.covariance.gamma

    def as_dict(self) -> dict:
        out = {
            "theta_hat": self.theta_hat.tolist(),
            "n": self.n,
            "level": self.level,
            "ci_lower": self.ci_lower.tolist(),
            "ci_upper": self.ci_upper.tolist(),
        }
        out.update(self.covariance.as_dict())
        if self.z is not None:
            out["z"] = self.z.tolist()
            out["z_marginal"] = self.z_marginal.tolist()
        return out


def sigma_hat_grad(s: CumulativeVarianceSurface, kernel, xi, i: int) -> np.ndarray:
    """``[d_a sigma_hat_{t_i}^j(xi)]``, shape ``(q, d)``."""
    if not 0 <= i <= s.n:
        raise IndexError(f"time index {i} outside 0..{s.n}")
    lags = s.T[1:] - s.t[i]
    alive = lags > 0
    g = np.zeros((kernel.q, s.d))
    g[:, alive] = kernel.grad(xi, lags[alive])
    return np.cumsum(g * np.diff(s.values[i])[None, :], axis=1)


def _sym(a):
    return 0.5 * (a + a.T)


def covariance_estimate(
    s: CumulativeVarianceSurface,
    kernel,
    xi,
    epsilon: float,
    free=None,
    evaluator: ContrastEvaluator | None = None,
) -> CovarianceEstimate:
    """B-hat, D-hat and the sandwich Gamma-hat at ``xi``.

    ``free`` restricts all three matrices to a subset of parameters (used
    when the other coordinates are held fixed during estimation).
    """
    ev = evaluator or ContrastEvaluator(s, kernel, epsilon)
    if ev.epsilon != epsilon:
        raise ValueError("evaluator epsilon differs from the requested epsilon")
    S, E = ev.row_stats(np.asarray(xi, dtype=float), grad=True)
    free = np.arange(kernel.q) if free is None else np.asarray(free, dtype=int)
    E = E[:, free]
    m = S / ev.d
    y = 4.0 / (m + epsilon) ** 2
    z = 8.0 * m**2 / (m + epsilon) ** 4
    B = _sym(np.einsum("r,ra,rb->ab", y, E, E) / ev.n)
    D = _sym(np.einsum("r,ra,rb->ab", z, E, E) / ev.n)
    if not (np.all(np.isfinite(B)) and np.all(np.isfinite(D))):
        raise InferenceError("B-hat or D-hat has non-finite entries", B)
    cond = float(np.linalg.cond(B)) if B.size else 1.0
    if not cond <= CONDITION_LIMIT:
        raise InferenceError(f"B-hat is numerically singular (condition number {cond:.3g})", B)
    X = linalg.solve(B, D, assume_a="sym")
    gamma = _sym(linalg.solve(B, X.T, assume_a="sym"))
    return CovarianceEstimate(B, D, gamma, cond, free)


def _inverse_sqrt(gamma):
    w, V = np.linalg.eigh(_sym(np.asarray(gamma, dtype=float)))
    top = w.max() if w.size else 0.0
    if not top > 0:
        raise InferenceError("Gamma-hat is not positive definite", gamma)
    floor = EIGEN_FLOOR * top
    if np.any(w < floor):
        warnings.warn(
            f"Gamma-hat has {int(np.sum(w < floor))} eigenvalue(s) below {EIGEN_FLOOR:g} * max; clipped",
            RuntimeWarning,
            stacklevel=3,
        )
        w = np.maximum(w, floor)
    return (V / np.sqrt(w)) @ V.T


def studentize(theta_hat, theta0, gamma, n: int) -> np.ndarray:
    """``sqrt(n) * Gamma^{-1/2} (theta_hat - theta0)`` with the symmetric square root."""
    diff = np.atleast_1d(np.asarray(theta_hat, dtype=float) - np.asarray(theta0, dtype=float))
    return math.sqrt(n) * _inverse_sqrt(np.atleast_2d(gamma)) @ diff


def studentize_marginal(theta_hat, theta0, gamma, n: int) -> np.ndarray:
    """Per-coordinate ``sqrt(n) (theta_hat_a - theta0_a) / sqrt(Gamma_aa)``."""
    diff = np.atleast_1d(np.asarray(theta_hat, dtype=float) - np.asarray(theta0, dtype=float))
    diag = np.diag(np.atleast_2d(gamma))
    if np.any(diag <= 0):
        raise InferenceError("Gamma-hat has a non-positive diagonal entry", gamma)
    return math.sqrt(n) * diff / np.sqrt(diag)


def normal_quantile(level: float) -> float:
    """Two-sided critical value ``z_{(1 + level)/2}``."""
    if not 0 <= level < 1:
        raise ValueError(f"confidence level must lie in [0, 1), got {level}")
    return float(ndtri(0.5 * (1.0 + level)))


def confidence_interval(theta_hat, gamma, n: int, level: float = 0.95):
    """Marginal intervals ``theta_hat_a -/+ z * sqrt(Gamma_aa / n)``."""
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    diag = np.diag(np.atleast_2d(gamma))
    if np.any(diag < 0):
        raise InferenceError("Gamma-hat has a negative diagonal entry", gamma)
    half = normal_quantile(level) * np.sqrt(diag / n)
    return theta_hat - half, theta_hat + half


def infer(
    s: CumulativeVarianceSurface,
    kernel,
    theta_hat,
    epsilon: float,
    free=None,
    theta0=None,
    level: float = 0.95,
    evaluator: ContrastEvaluator | None = None,
) -> InferenceResult:
    """Covariance, intervals and (given ``theta0``) studentized statistics over ``free``."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    cov = covariance_estimate(s, kernel, theta_hat, epsilon, free, evaluator)
    th = theta_hat[cov.free]
    lo, hi = confidence_interval(th, cov.gamma, s.n, level)
    result = InferenceResult(th, cov, s.n, level, lo, hi)
    if theta0 is not None:
        t0 = np.asarray(theta0, dtype=float)[cov.free]
        result.z = studentize(th, t0, cov.gamma, s.n)
        result.z_marginal = studentize_marginal(th, t0, cov.gamma, s.n)
    return result
