"""The epsilon-regularized contrast and its box-constrained minimization.

For a surface observed on ``t_i = i / n`` and ``T_0 < ... < T_d`` the
contrast is

    U(xi) = (1/n) sum_{i=1}^n F(xi, t_{i-1}, dI_i)

    F = log(|s|^2 / d + eps) + (|x|^2 + eps d) / (|s|^2 + eps d)

where ``x = dI_i`` is the scaled increment vector and ``s = sigma_hat``
the discretized volatility row

    sigma_hat_t^j(xi) = sum_{l <= j} k(xi, T_l - t) (I_t^{T_l} - I_t^{T_{l-1}}).

The ``eps * d`` terms keep the rank-one conditional covariance from making
the criterion singular.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from . import _core
from .errors import ConfigError, EstimationError, KernelEvaluationError
from .kernels import CORE_POWER_LAW, KERNEL_VALUE_LIMIT, Family, ParamBox
from .surface import CumulativeVarianceSurface

log = logging.getLogger(__name__)

BOUNDARY_RTOL = 1e-6
_CHUNK_CELLS = 1 << 21
# largest packed log-lag table kept per evaluator (cells)
_PACKED_LIMIT = 30_000_000


@dataclass(frozen=True)
class ContrastConfig:
    """Regularization and optimizer settings.

    ``descents`` is the number of best multistart points a simplex descent
    is launched from; ``profile_scale`` enables exact profiling of a kernel
    scale parameter (see :func:`minimize_contrast`).
    """

    epsilon: float = 1e-3
    multistart_count: int = 9
    simplex_tolerance: float = 1e-6
    max_iterations: int = 2000
    grid_refine: bool = False
    descents: int = 2
    profile_scale: bool = True

    def __post_init__(self):
        if not (isinstance(self.epsilon, (int, float)) and math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ConfigError(f"epsilon must be > 0 (the contrast is only defined for eps > 0), got {self.epsilon}")
        if self.multistart_count < 1:
            raise ConfigError("multistart_count must be >= 1")
        if not self.simplex_tolerance > 0:
            raise ConfigError("simplex_tolerance must be > 0")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")
        if self.descents < 0:
            raise ConfigError("descents must be >= 0")


@dataclass
class EstimationResult:
    theta_hat: np.ndarray
    contrast_value: float
    converged: bool
    at_boundary: np.ndarray
    evaluations: int
    epsilon: float
    free: np.ndarray = field(default=None)

    def as_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat.tolist(),
            "contrast_value": self.contrast_value,
            "converged": bool(self.converged),
            "at_boundary": [bool(b) for b in self.at_boundary],
            "evaluations": int(self.evaluations),
            "epsilon": self.epsilon,
            "free": [int(a) for a in self.free],
        }


def _core_args(kernel, xi):
    params = kernel.core_params(xi)
    if params is None:
        return None
    shape_sign = -1.0 if getattr(kernel, "family", None) is Family.NEGATIVE_POWER_LAW else 1.0
    return params + (shape_sign,)


class ContrastEvaluator:
    """Precomputed increment data for repeated contrast evaluations on one surface.

    Built-in kernels run through compiled loops; any other kernel object
    with vectorized ``eval``/``grad`` uses a chunked numpy sweep.
    """

    def __init__(self, surface: CumulativeVarianceSurface, kernel, epsilon: float):
        if not epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {epsilon}")
        self.surface = surface
        self.kernel = kernel
        self.epsilon = float(epsilon)
        I = surface.values
        self.n, self.d = surface.n, surface.d
        self.t = np.ascontiguousarray(surface.t[:-1])
        self.T = np.ascontiguousarray(surface.T[1:])
        self.dI = np.ascontiguousarray(np.diff(I[:-1], axis=1))
        inc = surface.increments()
        self.incr_sq = np.einsum("ij,ij->i", inc, inc)
        self.start = np.searchsorted(self.T, self.t, side="right").astype(np.int64)
        self.evaluations = 0
        self._log_lag = None

    def _packed_log_lag(self, shift):
        """``log(T_l - t_r + shift)`` over alive cells, packed row after row."""
        if self._log_lag is None or self._log_lag[0] != shift:
            counts = self.d - self.start
            offsets = np.zeros(self.n + 1, dtype=np.int64)
            np.cumsum(counts, out=offsets[1:])
            if offsets[-1] > _PACKED_LIMIT:
                return None
            rows = np.repeat(np.arange(self.n), counts)
            cols = np.arange(offsets[-1]) - np.repeat(offsets[:-1] - self.start, counts)
            self._log_lag = (shift, offsets, np.log(self.T[cols] - self.t[rows] + shift))
        return self._log_lag[1], self._log_lag[2]

    def __call__(self, xi) -> float:
        return self.value(xi)

    def value(self, xi) -> float:
        """``U(xi)``; raises :class:`KernelEvaluationError` on kernel overflow."""
        S = self.row_sq(xi)
        return _core.contrast_from_rows(S, self.incr_sq, self.epsilon, self.d) / self.n

    def row_sq(self, xi) -> np.ndarray:
        """Per-row ``|sigma_hat_{t_{i-1}}(xi)|^2``, shape ``(n,)``."""
        self.evaluations += 1
        xi = np.asarray(xi, dtype=float)
        args = _core_args(self.kernel, xi)
        if args is None:
            return self.row_stats(xi)[0]
        code, scale, rate, shift, _ = args
        packed = self._packed_log_lag(shift) if code == CORE_POWER_LAW else None
        if packed is not None:
            offsets, log_lag = packed
            K = np.exp(rate * log_lag)
            K *= scale
            if K.size and not np.abs(K).max() <= KERNEL_VALUE_LIMIT:
                raise KernelEvaluationError(f"kernel evaluation overflow at theta={xi.tolist()}")
            return _core.sq_rows_packed(self.dI, self.start, offsets, K)
        S, ok = _core.sigma_sq_rows(self.dI, self.start, self.t, self.T, code, scale, rate, shift)
        if not ok:
            raise KernelEvaluationError(f"kernel evaluation overflow at theta={xi.tolist()}")
        return S

    def _chunks(self):
        step = max(1, _CHUNK_CELLS // max(self.d, 1))
        for lo in range(0, self.n, step):
            yield slice(lo, min(lo + step, self.n))

    def row_stats(self, xi, grad: bool = False):
        """Per-row ``|sigma_hat|^2`` (and ``e_hat``, shape ``(n, q)``, when ``grad``)."""
        xi = np.asarray(xi, dtype=float)
        args = _core_args(self.kernel, xi)
        if args is not None and grad:
            code, scale, rate, shift, sign = args
            S, E, ok = _core.sigma_stats(self.dI, self.start, self.t, self.T, code, scale, rate, shift, sign)
            if not ok:
                raise KernelEvaluationError(f"kernel evaluation overflow at theta={xi.tolist()}")
            return S, E
        S = np.empty(self.n)
        E = np.empty((self.n, self.kernel.q)) if grad else None
        for sl in self._chunks():
            lags = self.T[None, :] - self.t[sl, None]
            sig = np.cumsum(self.kernel.eval(xi, lags) * self.dI[sl], axis=1)
            S[sl] = np.einsum("rj,rj->r", sig, sig)
            if grad:
                dsig = np.cumsum(self.kernel.grad(xi, lags) * self.dI[sl][None], axis=2)
                E[sl] = np.einsum("arj,rj->ra", dsig, sig) / self.d
        return (S, E) if grad else (S, None)


def sigma_hat(s: CumulativeVarianceSurface, kernel, xi, i: int) -> np.ndarray:
    """``[sigma_hat_{t_i}^j(xi)]_{j=1..d}`` by one prefix pass over maturities."""
    if not 0 <= i <= s.n:
        raise IndexError(f"time index {i} outside 0..{s.n}")
    lags = s.T[1:] - s.t[i]
    alive = lags > 0
    k = np.zeros(s.d)
    k[alive] = kernel.eval(xi, lags[alive])
    return np.cumsum(k * np.diff(s.values[i]))


def contrast_F(sigma_row, x, epsilon: float, d: int | None = None) -> float:
    """Single contrast term for volatility row ``sigma_row`` and increment ``x``."""
    if not epsilon > 0:
        raise ConfigError(f"epsilon must be > 0, got {epsilon}")
    sigma_row = np.asarray(sigma_row, dtype=float)
    x = np.asarray(x, dtype=float)
    d = sigma_row.size if d is None else d
    ss = float(sigma_row @ sigma_row)
    return math.log(ss / d + epsilon) + (float(x @ x) + epsilon * d) / (ss + epsilon * d)


def contrast_U(s: CumulativeVarianceSurface, kernel, xi, cfg: ContrastConfig | float) -> float:
    eps = cfg.epsilon if isinstance(cfg, ContrastConfig) else float(cfg)
    return ContrastEvaluator(s, kernel, eps).value(xi)


def _start_points(lower, upper, count, seed=0):
    q = lower.size
    k = round(count ** (1.0 / q))
    if k**q == count:
        axes = [np.linspace(lo, hi, k) if k > 1 else np.array([(lo + hi) / 2]) for lo, hi in zip(lower, upper)]
        return np.array(list(itertools.product(*axes)), dtype=float)
    sample = qmc.LatinHypercube(d=q, seed=seed).random(count)
    return lower + sample * (upper - lower)


def _rank_key(value, x):
    return (value, tuple(x))


class _ScaleProfile:
    """Exact minimization of the contrast over the scale coordinate.

    With ``k = eta * g`` every ``|sigma_hat|^2`` row equals ``eta**2 * G``,
    so for fixed shape the contrast is an O(n) function of ``eta``.
    """

    GRID = 65

    def __init__(self, ev: ContrastEvaluator, lower: float, upper: float):
        self.ev = ev
        self.lower, self.upper = float(lower), float(upper)
        if self.lower > 0:
            self.grid = np.geomspace(self.lower, self.upper, self.GRID)
        else:
            self.grid = np.linspace(self.lower, self.upper, self.GRID)

    def values(self, G, eta):
        ev = self.ev
        eps_d = ev.epsilon * ev.d
        a = np.asarray(eta, dtype=float)[..., None] ** 2 * G
        return np.mean(np.log(a / ev.d + ev.epsilon) + (ev.incr_sq + eps_d) / (a + eps_d), axis=-1)

    def minimize(self, G):
        vals = self.values(G, self.grid)
        b = int(np.argmin(vals))
        best_val, best_eta = float(vals[b]), float(self.grid[b])
        lo = self.grid[max(b - 1, 0)]
        hi = self.grid[min(b + 1, self.grid.size - 1)]
        if hi > lo:
            res = optimize.minimize_scalar(
                lambda e: float(self.values(G, e)),
                bounds=(lo, hi),
                method="bounded",
                options={"xatol": 1e-12 * max(1.0, abs(self.upper))},
            )
            if res.fun < best_val:
                best_val, best_eta = float(res.fun), float(res.x)
        return best_val, best_eta


def minimize_contrast(
    s: CumulativeVarianceSurface,
    kernel,
    box: ParamBox,
    cfg: ContrastConfig | None = None,
    fixed: dict | None = None,
    evaluator: ContrastEvaluator | None = None,
) -> EstimationResult:
    """Multistart Nelder-Mead minimization of the contrast over ``box``.

    ``fixed`` maps parameter indices to values held constant (e.g. the
    scale in fixed-eta estimation); only the remaining coordinates are
    searched.  Box coordinates with ``lower == upper`` are fixed as well.

    When the kernel declares a scale parameter (``kernel.scale_index``) that
    is free and non-negative on the box, it is profiled out exactly and the
    simplex only moves the remaining coordinates (``cfg.profile_scale``).
    """
    cfg = cfg or ContrastConfig()
    if box.q != kernel.q:
        raise ValueError(f"box dimension {box.q} does not match kernel dimension {kernel.q}")
    ev = evaluator or ContrastEvaluator(s, kernel, cfg.epsilon)
    fixed = {int(a): float(v) for a, v in (fixed or {}).items()}
    for a, v in fixed.items():
        if not 0 <= a < kernel.q:
            raise ConfigError(f"fixed component index {a} outside 0..{kernel.q - 1}")
        if not box.lower[a] <= v <= box.upper[a]:
            raise ConfigError(f"fixed value {v} for component {a} lies outside the box")
    base = box.lower.copy()
    for a, v in fixed.items():
        base[a] = v
    free = np.array([a for a in range(kernel.q) if a not in fixed and box.lower[a] < box.upper[a]], dtype=int)
    evals0 = ev.evaluations

    scale = getattr(kernel, "scale_index", None)
    profiled = bool(cfg.profile_scale and scale is not None and scale in free and box.lower[scale] >= 0)
    search = free[free != scale] if profiled else free
    lo, hi = box.lower[search], box.upper[search]
    profile = _ScaleProfile(ev, box.lower[scale], box.upper[scale]) if profiled else None
    scale_at = {}

    def assemble(y):
        theta = base.copy()
        theta[search] = y
        if profiled:
            theta[scale] = scale_at[tuple(y)]
        return theta

    def objective(y):
        y = np.clip(np.asarray(y, dtype=float), lo, hi)
        theta = base.copy()
        theta[search] = y
        try:
            if profiled:
                theta[scale] = 1.0
                val, scale_at[tuple(y)] = profile.minimize(ev.row_sq(theta))
            else:
                val = ev.value(theta)
        except KernelEvaluationError:
            return np.inf
        return val if math.isfinite(val) else np.inf

    def finish(y, converged):
        theta = assemble(y)
        try:
            val = ev.value(theta)
        except KernelEvaluationError as exc:
            raise EstimationError(f"contrast cannot be evaluated at the minimizer: {exc}") from None
        return _result(theta, val, converged, box, ev.evaluations - evals0, cfg.epsilon, free)

    if search.size == 0:
        y = np.empty(0)
        if not math.isfinite(objective(y)):
            raise EstimationError(f"contrast cannot be evaluated at the only admissible point {base.tolist()}")
        return finish(y, True)

    count = max(1, round(cfg.multistart_count ** (search.size / free.size)))
    starts = _start_points(lo, hi, count)
    candidates = [(objective(y), y) for y in starts]
    if cfg.grid_refine:
        best = min(candidates, key=lambda c: _rank_key(*c))[1]
        k = round(count ** (1.0 / search.size))
        half = (hi - lo) / (2 * (k - 1)) if k > 1 else (hi - lo) / 4
        extra = [np.clip(best + np.array(o), lo, hi) for o in itertools.product(*[(-h, 0.0, h) for h in half])]
        candidates += [(objective(y), y) for y in extra]
    finite = [c for c in candidates if math.isfinite(c[0])]
    if not finite:
        raise EstimationError("contrast could not be evaluated at any start point (kernel overflow everywhere)")
    finite.sort(key=lambda c: _rank_key(*c))

    results = list(finite)
    converged = True
    if cfg.max_iterations > 0 and cfg.descents > 0:
        seen = []
        width = hi - lo
        centre = (lo + hi) / 2
        for _, y0 in finite:
            if len(seen) >= cfg.descents:
                break
            if any(np.array_equal(y0, y) for y in seen):
                continue
            seen.append(y0)
            step = np.where(y0 <= centre, 1.0, -1.0) * 0.1 * width
            simplex = np.vstack([y0] + [y0 + np.eye(search.size)[a] * step[a] for a in range(search.size)])
            res = optimize.minimize(
                objective,
                y0,
                method="Nelder-Mead",
                bounds=list(zip(lo, hi)),
                options={
                    "initial_simplex": simplex,
                    "xatol": cfg.simplex_tolerance,
                    "fatol": cfg.simplex_tolerance**2,
                    "maxiter": cfg.max_iterations,
                    "maxfev": 4 * cfg.max_iterations,
                },
            )
            y = np.clip(res.x, lo, hi)
            fy = objective(y)
            if math.isfinite(fy):
                results.append((fy, y))
            converged = converged and bool(res.success)
    _, y = min(results, key=lambda c: _rank_key(*c))
    return finish(y, converged)


def _result(theta, val, converged, box, evaluations, eps, free):
    tol = BOUNDARY_RTOL * box.width
    at_boundary = (np.abs(theta - box.lower) <= tol) | (np.abs(box.upper - theta) <= tol)
    at_boundary[np.setdiff1d(np.arange(box.q), free)] = False
    return EstimationResult(np.asarray(theta, dtype=float), float(val), converged, at_boundary, evaluations, eps, free)
