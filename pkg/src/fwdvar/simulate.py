"""Simulation of forward variance curves and cumulative forward variance surfaces.

The forward variance ``V_t^u`` is carried on a mesh ``U`` of maturities
(the union of the time and maturity grids, optionally refined) and advanced
one time step at a time by the exact multiplicative update

    V_{t_i}^u = V_{t_{i-1}}^u * exp(k(u - t_{i-1}) dW_i - k(u - t_{i-1})**2 * dt / 2)

so that every ``V^u`` is a discrete lognormal martingale.  Cumulative
variance ``I_{t_i}^{T_j}`` is the left-endpoint Riemann sum of the current
row over ``U`` restricted to ``[t_i, T_j)``.  Only the current row is kept.

Random numbers come from the counter-based Philox generator.  A stream
seed for replication ``r`` of a study is derived from the master seed with
``numpy.random.SeedSequence(master_seed, spawn_key=(r,))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .errors import NumericalError
from .kernels import ParamBox, validate_params
from .surface import CumulativeVarianceSurface, ForwardVarianceCurve, MaturityGrid, TimeGrid

_MESH_TOL = 1e-12


def make_rng(seed: int) -> np.random.Generator:
    """Philox generator keyed by ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def derive_seed(master_seed: int, r: int) -> int:
    """64-bit stream seed for replication ``r``; independent of execution order."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(r),))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class BrownianPath:
    increments: np.ndarray
    seed: int | None = None

    @property
    def n(self) -> int:
        return self.increments.shape[-1]


def simulate_brownian(n: int, seed: int, paths: int | None = None) -> BrownianPath:
    """``n`` independent ``N(0, 1/n)`` increments (``paths`` rows of them if given)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed)
    shape = (n,) if paths is None else (paths, n)
    dW = rng.standard_normal(shape) * math.sqrt(1.0 / n)
    dW.flags.writeable = False
    return BrownianPath(dW, seed)


@dataclass(frozen=True)
class SimConfig:
    kernel: object
    theta0: np.ndarray
    time_grid: TimeGrid
    maturity_grid: MaturityGrid
    v0: ForwardVarianceCurve = field(default_factory=ForwardVarianceCurve.constant)
    refinement: int = 1
    seed: int = 0
    box: ParamBox | None = None

    def __post_init__(self):
        theta0 = np.atleast_1d(np.asarray(self.theta0, dtype=float))
        object.__setattr__(self, "theta0", theta0)
        if theta0.shape[0] != self.kernel.q:
            raise ValueError(f"theta0 has length {theta0.shape[0]}, kernel expects {self.kernel.q}")
        if int(self.refinement) != self.refinement or self.refinement < 1:
            raise ValueError("u-mesh refinement must be an integer >= 1")
        if self.box is not None and not validate_params(theta0, self.box):
            raise ValueError(f"theta0 {theta0.tolist()} lies outside the parameter box")

    @property
    def n(self) -> int:
        return self.time_grid.n

    @property
    def d(self) -> int:
        return self.maturity_grid.d


@dataclass(frozen=True)
class UMesh:
    """Maturity mesh with cell widths and the positions of grid points on it."""

    points: np.ndarray
    widths: np.ndarray
    time_index: np.ndarray
    maturity_index: np.ndarray

    @classmethod
    def build(cls, time_grid: TimeGrid, maturity_grid: MaturityGrid, refinement: int = 1) -> "UMesh":
        t = time_grid.times
        T = maturity_grid.maturities
        raw = np.sort(np.concatenate([t, T]))
        keep = np.concatenate([[True], np.diff(raw) > _MESH_TOL])
        base = raw[keep]
        if refinement > 1:
            frac = np.arange(refinement) / refinement
            fine = (base[:-1, None] + np.diff(base)[:, None] * frac[None, :]).ravel()
            base = np.concatenate([fine, base[-1:]])
        return cls(base, np.diff(base), _locate(base, t), _locate(base, T))


def _locate(mesh, points):
    idx = np.searchsorted(mesh, points - _MESH_TOL)
    idx = np.minimum(idx, mesh.size - 1)
    if np.any(np.abs(mesh[idx] - points) > _MESH_TOL):
        raise ValueError("grid point missing from the u-mesh")
    return idx


class ForwardVarianceRow(NamedTuple):
    """Forward variance at time ``t_i`` on mesh points ``points[start:]``."""

    i: int
    start: int
    values: np.ndarray

    @property
    def spot(self):
        """Spot variance proxy: the value at the first alive mesh point ``u = t_i``."""
        return self.values[..., 0]


def forward_variance_rows(cfg: SimConfig, increments, mesh: UMesh | None = None) -> Iterator[ForwardVarianceRow]:
    """Yield the forward variance row at ``t_0, t_1, ..., t_n``.

    ``increments`` has shape ``(n,)`` for one path or ``(paths, n)`` for a
    batch; row values then have shape ``(..., M - start)``.  The yielded
    arrays are views into the evolving state and are overwritten by the next
    step; copy them to keep them.
    """
    dW = np.asarray(increments.increments if isinstance(increments, BrownianPath) else increments, dtype=float)
    n = cfg.n
    if dW.shape[-1] != n:
        raise ValueError(f"Brownian path has {dW.shape[-1]} increments, time grid needs {n}")
    mesh = mesh or UMesh.build(cfg.time_grid, cfg.maturity_grid, cfg.refinement)
    u = mesh.points
    t = cfg.time_grid.times
    dt = cfg.time_grid.delta
    V = np.broadcast_to(cfg.v0(u), dW.shape[:-1] + u.shape).copy()
    yield ForwardVarianceRow(0, 0, V)
    for i in range(1, n + 1):
        a = mesh.time_index[i]
        k = cfg.kernel.eval(cfg.theta0, u[a:] - t[i - 1])
        dw = dW[..., i - 1, None]
        with np.errstate(over="ignore", invalid="ignore"):
            V[..., a:] *= np.exp(k * dw - 0.5 * k * k * dt)
        row = V[..., a:]
        if not np.all(np.isfinite(row)):
            bad = np.argwhere(~np.isfinite(row))[0]
            raise NumericalError(f"non-finite forward variance at i={i}, u={u[a + bad[-1]]:.6g}")
        yield ForwardVarianceRow(i, a, row)


def _row_cumulative(mesh: UMesh, row: ForwardVarianceRow, weights=None):
    """Left-endpoint cumulative sums from ``t_i``; entry m is the integral up to mesh point start + m."""
    a = row.start
    cells = row.values[..., :-1] * mesh.widths[a:]
    if weights is not None:
        cells = weights[:-1] * row.values[..., :-1] * mesh.widths[a:]
    out = np.zeros(row.values.shape)
    np.cumsum(cells, axis=-1, out=out[..., 1:])
    return out


def _gather(mesh: UMesh, row: ForwardVarianceRow, cum):
    out = np.zeros(cum.shape[:-1] + (mesh.maturity_index.size,))
    rel = mesh.maturity_index - row.start
    alive = rel > 0
    out[..., alive] = cum[..., rel[alive]]
    return out


def simulate_surface(cfg: SimConfig, path: BrownianPath | None = None) -> CumulativeVarianceSurface:
    """Simulate one cumulative forward variance surface.

    ``path`` defaults to ``simulate_brownian(n, cfg.seed)``.
    """
    if path is None:
        path = simulate_brownian(cfg.n, cfg.seed)
    if np.ndim(path.increments) != 1:
        raise ValueError("simulate_surface takes a single Brownian path")
    mesh = UMesh.build(cfg.time_grid, cfg.maturity_grid, cfg.refinement)
    I = np.zeros((cfg.n + 1, cfg.d + 1))
    for row in forward_variance_rows(cfg, path, mesh):
        I[row.i] = _gather(mesh, row, _row_cumulative(mesh, row))
    meta = {"seed": path.seed} if path.seed is not None else {}
    return CumulativeVarianceSurface(cfg.time_grid, cfg.maturity_grid, I, meta)


def row_sigma(cfg: SimConfig, mesh: UMesh, row: ForwardVarianceRow, xi, kernel=None) -> np.ndarray:
    """``sigma_{t_i}^{T_j}(xi)`` for every ``j`` from one forward variance row."""
    kernel = kernel or cfg.kernel
    u = mesh.points[row.start :]
    k = kernel.eval(xi, u - cfg.time_grid.times[row.i])
    return _gather(mesh, row, _row_cumulative(mesh, row, weights=k))


def sigma_exact(cfg: SimConfig, path: BrownianPath, xi, i: int, j: int | None = None, kernel=None):
    """Mesh quadrature of ``int_{t_i}^{T_j} k(xi, u - t_i) V_{t_i}^u du``.

    Replays the simulation up to row ``i``.  Returns the full vector over
    ``j = 0..d`` when ``j`` is omitted; zero wherever ``t_i >= T_j``.
    """
    if not 0 <= i <= cfg.n:
        raise IndexError(f"time index {i} outside 0..{cfg.n}")
    mesh = UMesh.build(cfg.time_grid, cfg.maturity_grid, cfg.refinement)
    for row in forward_variance_rows(cfg, path, mesh):
        if row.i == i:
            sig = row_sigma(cfg, mesh, row, xi, kernel)
            return sig if j is None else sig[..., j]
    raise AssertionError("unreachable")
