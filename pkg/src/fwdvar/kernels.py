"""Parametric kernel families k(theta, t) and their parameter gradients.

Three built-in families, all with two parameters ``theta = (eta, shape)``:

=====================  ===============================  ===============
family                 k(theta, t)                      theta
=====================  ===============================  ===============
``exponential``        eta * exp(-xi * t)               (eta, xi)
``shifted_power_law``  eta * (t + c) ** (H - 1/2)       (eta, H)
``negative_power_law`` eta * (t + c) ** (-xi)           (eta, xi)
=====================  ===============================  ===============

``negative_power_law`` is the shifted power law under ``H = 1/2 - xi``; the
two names share one code path.  Every kernel is extended by zero to
``t < 0``.  Any other kernel can be plugged in through :class:`CustomKernel`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .errors import KernelEvaluationError

KERNEL_VALUE_LIMIT = 1e12
DEFAULT_SHIFT = 0.01

# integer codes understood by the compiled loops in ``_core``
CORE_EXPONENTIAL = 0
CORE_POWER_LAW = 1


class Family(str, Enum):
    EXPONENTIAL = "exponential"
    SHIFTED_POWER_LAW = "shifted_power_law"
    NEGATIVE_POWER_LAW = "negative_power_law"


def _check_theta(theta, q):
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.shape[0] != q:
        raise ValueError(f"parameter vector must have length {q}, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError(f"parameter vector has non-finite entries: {theta}")
    return theta


def _guard(values, theta):
    values = np.asarray(values)
    if not np.all(np.isfinite(values)) or np.any(np.abs(values) > KERNEL_VALUE_LIMIT):
        raise KernelEvaluationError(
            f"kernel evaluation overflow at theta={np.asarray(theta).tolist()} "
            f"(|k| > {KERNEL_VALUE_LIMIT:g} or non-finite)"
        )
    return values


@dataclass(frozen=True)
class KernelSpec:
    """A built-in kernel family.

    Parameters
    ----------
    family : Family or str
        One of ``exponential``, ``shifted_power_law``, ``negative_power_law``.
    shift : float, optional
        The shift ``c > 0`` of the power-law families (default 0.01).  Must
        be omitted for the exponential family.
    """

    family: Family
    shift: float | None = None
    q: int = field(default=2, init=False)
    # k is linear in theta[scale_index]; the optimizer profiles that coordinate out
    scale_index: int = field(default=0, init=False)

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.family is Family.EXPONENTIAL:
            if self.shift is not None:
                raise ValueError("the exponential kernel takes no shift")
        else:
            shift = DEFAULT_SHIFT if self.shift is None else float(self.shift)
            if not shift > 0:
                raise ValueError(f"kernel shift must be > 0, got {shift}")
            object.__setattr__(self, "shift", shift)

    @property
    def param_names(self) -> tuple[str, str]:
        if self.family is Family.SHIFTED_POWER_LAW:
            return ("eta", "H")
        return ("eta", "xi")

    def core_params(self, theta) -> tuple[int, float, float, float]:
        """Map ``theta`` to ``(code, scale, rate, shift)`` for the compiled loops.

        Exponential: ``k = scale * exp(-rate * t)``.
        Power law: ``k = scale * exp(rate * log(t + shift))``.
        """
        eta, b = _check_theta(theta, self.q)
        if self.family is Family.EXPONENTIAL:
            return CORE_EXPONENTIAL, eta, b, 0.0
        if self.family is Family.SHIFTED_POWER_LAW:
            return CORE_POWER_LAW, eta, b - 0.5, self.shift
        return CORE_POWER_LAW, eta, -b, self.shift

    def __call__(self, theta, t):
        return self.eval(theta, t)

    def eval(self, theta, t):
        theta = _check_theta(theta, self.q)
        t = np.asarray(t, dtype=float)
        alive = t >= 0
        ts = np.where(alive, t, 0.0)
        eta = theta[0]
        if self.family is Family.EXPONENTIAL:
            with np.errstate(over="ignore"):
                k = eta * np.exp(-theta[1] * ts)
        else:
            _, _, power, c = self.core_params(theta)
            with np.errstate(over="ignore"):
                k = eta * np.exp(power * np.log(ts + c))
        k = np.where(alive, k, 0.0)
        _guard(k, theta)
        return k[()] if k.ndim == 0 else k

    def grad(self, theta, t):
        """Analytic gradient, shape ``(q,) + t.shape``."""
        theta = _check_theta(theta, self.q)
        t = np.asarray(t, dtype=float)
        alive = t >= 0
        ts = np.where(alive, t, 0.0)
        eta = theta[0]
        with np.errstate(over="ignore"):
            if self.family is Family.EXPONENTIAL:
                base = np.exp(-theta[1] * ts)
                d_shape = -eta * ts * base
            else:
                _, _, power, c = self.core_params(theta)
                logt = np.log(ts + c)
                base = np.exp(power * logt)
                d_shape = eta * base * logt
                if self.family is Family.NEGATIVE_POWER_LAW:
                    d_shape = -d_shape
        g = np.stack([np.where(alive, base, 0.0), np.where(alive, d_shape, 0.0)])
        _guard(g, theta)
        return g


class CustomKernel:
    """User-supplied kernel.

    ``eval_fn(theta, t)`` and ``grad_fn(theta, t)`` must be vectorized over
    ``t >= 0``; ``grad_fn`` returns shape ``(q,) + t.shape``.  Values at
    ``t < 0`` are zeroed here, so the callables never see negative lags.
    Pass ``scale_index`` when ``k`` is linear in that parameter.  Custom
    kernels run on the pure-numpy path of the contrast.
    """

    def __init__(self, eval_fn: Callable, grad_fn: Callable, q: int, name: str = "custom", scale_index=None):
        self._eval = eval_fn
        self._grad = grad_fn
        self.q = int(q)
        self.name = name
        self.scale_index = scale_index
        self.param_names = tuple(f"theta{a}" for a in range(self.q))

    def __repr__(self):
        return f"CustomKernel(name={self.name!r}, q={self.q})"

    def core_params(self, theta):
        return None

    def __call__(self, theta, t):
        return self.eval(theta, t)

    def eval(self, theta, t):
        theta = _check_theta(theta, self.q)
        t = np.asarray(t, dtype=float)
        alive = t >= 0
        k = np.where(alive, np.broadcast_to(self._eval(theta, np.where(alive, t, 0.0)), t.shape), 0.0)
        _guard(k, theta)
        return k[()] if k.ndim == 0 else k

    def grad(self, theta, t):
        theta = _check_theta(theta, self.q)
        t = np.asarray(t, dtype=float)
        alive = t >= 0
        g = np.asarray(self._grad(theta, np.where(alive, t, 0.0)), dtype=float)
        g = np.where(alive, np.broadcast_to(g, (self.q,) + t.shape), 0.0)
        _guard(g, theta)
        return g


def constant_kernel() -> CustomKernel:
    """One-parameter kernel ``k(theta, t) = theta[0]`` for ``t >= 0``."""

    def f(theta, t):
        return np.full(np.shape(t), theta[0])

    def g(theta, t):
        return np.ones((1,) + np.shape(t))

    return CustomKernel(f, g, q=1, name="constant", scale_index=0)


@dataclass(frozen=True)
class ParamBox:
    """Closed box ``[lower, upper]`` standing in for the compact convex parameter set."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("box bounds must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValueError("box bounds must be finite")
        if np.any(lower > upper):
            raise ValueError(f"box lower bound exceeds upper bound: {lower} > {upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def q(self) -> int:
        return self.lower.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, theta) -> bool:
        return validate_params(theta, self)

    def project(self, theta) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=float), self.lower, self.upper)

    def __eq__(self, other):
        return (
            isinstance(other, ParamBox)
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    def __hash__(self):
        return hash((tuple(self.lower), tuple(self.upper)))


def kernel_eval(spec, theta, t):
    """Evaluate ``k(theta, t)``; zero for ``t < 0``."""
    return spec.eval(theta, t)


def kernel_grad(spec, theta, t):
    """Analytic ``[d k / d theta_a]_a``; zero vector for ``t < 0``."""
    return spec.grad(theta, t)


def validate_params(theta, box: ParamBox) -> bool:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != box.lower.shape:
        raise ValueError(f"parameter length {theta.shape[0]} does not match box dimension {box.q}")
    return bool(np.all(theta >= box.lower) and np.all(theta <= box.upper))
