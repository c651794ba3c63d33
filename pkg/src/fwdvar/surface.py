"""Discretely observed cumulative forward variance ``I[i, j] = I_{t_i}^{T_j}``.

Surfaces live on a uniform time grid ``t_i = i / n`` and a maturity grid
``0 = T_0 < T_1 < ... < T_d <= 1``.  The matrix is stored time-major with
shape ``(n + 1, d + 1)``; cells with ``t_i >= T_j`` are zero by convention.

File format
-----------
Long-format CSV.  Grid metadata goes in leading ``#`` lines::

    # fwdvar-surface v1
    # n=100
    # maturities=0.0,0.02,0.04,...
    # <any other key>=<value>
    t_index,T_index,t,T,I
    0,1,0,0.02,0.0200001234...

Only cells with ``t_i < T_j`` (and ``j >= 1``) need to be listed; omitted
cells with ``t_i >= T_j`` read as zero.  Numbers are written as the
shortest decimal string (never in exponent notation) that reads back to
the same double, so a round trip is bit-exact.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import SurfaceFormatError

FORMAT_TAG = "fwdvar-surface v1"
SURFACE_COLUMNS = ["t_index", "T_index", "t", "T", "I"]
A5_THRESHOLD = 0.5
_GRID_TOL = 1e-12


@dataclass(frozen=True)
class TimeGrid:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"time grid needs integer n >= 1, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def delta(self) -> float:
        return 1.0 / self.n

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n + 1) / self.n


@dataclass(frozen=True, eq=False)
class MaturityGrid:
    maturities: np.ndarray

    def __post_init__(self):
        T = np.array(self.maturities, dtype=float).ravel()
        if T.size < 2:
            raise SurfaceFormatError("maturity grid needs T_0 = 0 and at least one positive maturity")
        if T[0] != 0.0:
            raise SurfaceFormatError(f"maturity grid must start at T_0 = 0, got {T[0]}")
        if np.any(np.diff(T) <= 0):
            bad = int(np.argmax(np.diff(T) <= 0)) + 1
            raise SurfaceFormatError(f"maturity grid is not strictly increasing at index {bad}")
        if T[-1] > 1.0:
            raise SurfaceFormatError(f"last maturity {T[-1]} exceeds 1")
        T.flags.writeable = False
        object.__setattr__(self, "maturities", T)

    @classmethod
    def uniform(cls, d: int) -> "MaturityGrid":
        if d < 1:
            raise ValueError("d must be >= 1")
        return cls(np.arange(d + 1) / d)

    @property
    def d(self) -> int:
        return self.maturities.size - 1

    @property
    def max_spacing(self) -> float:
        return float(np.max(np.diff(self.maturities)))

    def __eq__(self, other):
        return isinstance(other, MaturityGrid) and np.array_equal(self.maturities, other.maturities)

    def __hash__(self):
        return hash(self.maturities.tobytes())


def default_d(n: int) -> int:
    """``ceil(n ** 0.95)``, the maturity count used by the Monte Carlo designs."""
    return int(math.ceil(n**0.95))


@dataclass(frozen=True, eq=False)
class ForwardVarianceCurve:
    """Initial forward variance ``u -> V_0^u``, linear between knots, flat beyond them."""

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = np.atleast_1d(np.asarray(self.knots, dtype=float))
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if knots.shape != values.shape or knots.ndim != 1 or knots.size == 0:
            raise ValueError("forward variance knots and values must be non-empty and of equal length")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("forward variance knots must be strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise ValueError("forward variance values must be finite and positive")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, level: float = 1.0) -> "ForwardVarianceCurve":
        return cls(np.array([0.0, 1.0]), np.array([level, level]))

    def __call__(self, u):
        return np.interp(u, self.knots, self.values)

    def __eq__(self, other):
        return (
            isinstance(other, ForwardVarianceCurve)
            and np.array_equal(self.knots, other.knots)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class CumulativeVarianceSurface:
    """Immutable ``(n + 1) x (d + 1)`` matrix of observations ``I_{t_i}^{T_j}``."""

    time_grid: TimeGrid
    maturity_grid: MaturityGrid
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        I = np.array(self.values, dtype=float)
        expected = (self.time_grid.n + 1, self.maturity_grid.d + 1)
        if I.shape != expected:
            raise SurfaceFormatError(f"surface matrix has shape {I.shape}, expected {expected}")
        I.flags.writeable = False
        object.__setattr__(self, "values", I)

    @classmethod
    def from_array(cls, values, maturities=None, metadata=None):
        """Build a surface from a matrix; maturities default to the uniform grid."""
        values = np.asarray(values, dtype=float)
        n, d = values.shape[0] - 1, values.shape[1] - 1
        grid = MaturityGrid.uniform(d) if maturities is None else MaturityGrid(maturities)
        return cls(TimeGrid(n), grid, values, dict(metadata or {}))

    @property
    def n(self) -> int:
        return self.time_grid.n

    @property
    def d(self) -> int:
        return self.maturity_grid.d

    @property
    def t(self) -> np.ndarray:
        return self.time_grid.times

    @property
    def T(self) -> np.ndarray:
        return self.maturity_grid.maturities

    def alive_mask(self) -> np.ndarray:
        """Boolean ``(n + 1, d + 1)`` mask of cells with ``t_i < T_j``."""
        return self.t[:, None] < self.T[None, :]

    def increments(self) -> np.ndarray:
        """All increment vectors, shape ``(n, d)``; row ``i - 1`` is ``increment(s, i)``."""
        return np.diff(self.values[:, 1:], axis=0) * math.sqrt(self.n)

    def __eq__(self, other):
        return (
            isinstance(other, CumulativeVarianceSurface)
            and self.time_grid == other.time_grid
            and self.maturity_grid == other.maturity_grid
            and np.array_equal(self.values, other.values)
        )


def increment(s: CumulativeVarianceSurface, i: int) -> np.ndarray:
    """Scaled increment ``[(I[i, j] - I[i-1, j]) * sqrt(n)]_{j=1..d}``."""
    if not 1 <= i <= s.n:
        raise IndexError(f"increment index {i} outside 1..{s.n}")
    return (s.values[i, 1:] - s.values[i - 1, 1:]) * math.sqrt(s.n)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    count: int = 1
    cells: tuple = ()
    severity: str = "error"

    def __str__(self):
        return f"[{self.severity}] {self.code}: {self.message}"


def _cells_violation(code, mask, what, severity="error"):
    idx = np.argwhere(mask)
    shown = ", ".join(f"({i},{j})" for i, j in idx[:10])
    more = "" if len(idx) <= 10 else f" and {len(idx) - 10} more"
    return Violation(
        code,
        f"{len(idx)} cell(s) {what}: {shown}{more}",
        count=len(idx),
        cells=tuple(map(tuple, idx[:10].tolist())),
        severity=severity,
    )


def validate_surface(s: CumulativeVarianceSurface, strict: bool = False) -> list[Violation]:
    """List every violated surface invariant; an empty list means the surface is valid.

    With ``strict=True`` the grid is also checked against the high-frequency
    regime ``sqrt(n) * max_j (T_j - T_{j-1}) <= 0.5`` and a warning is added
    when it fails.
    """
    I = s.values
    out = []
    finite = np.isfinite(I)
    if not finite.all():
        out.append(_cells_violation("non_finite", ~finite, "are not finite"))
    Iz = np.where(finite, I, 0.0)
    if (Iz < 0).any():
        out.append(_cells_violation("negative", Iz < 0, "are negative"))
    dead = ~s.alive_mask()
    dead[:, 0] = False
    if (dead & (Iz != 0)).any():
        out.append(_cells_violation("zero_convention", dead & (Iz != 0), "with t_i >= T_j are non-zero"))
    if (Iz[:, 0] != 0).any():
        mask = np.zeros_like(dead)
        mask[:, 0] = Iz[:, 0] != 0
        out.append(_cells_violation("first_column", mask, "in the T_0 = 0 column are non-zero"))
    if s.d > 1:
        steps = np.diff(Iz[:, 1:], axis=1)
        scale = max(float(np.abs(Iz).max()), 1.0)
        decreasing = steps < -1e-12 * scale
        if decreasing.any():
            mask = np.zeros_like(dead)
            mask[:, 2:] = decreasing
            out.append(_cells_violation("not_monotone", mask, "decrease in maturity"))
    if strict:
        ratio = math.sqrt(s.n) * s.maturity_grid.max_spacing
        if ratio > A5_THRESHOLD:
            out.append(
                Violation(
                    "coarse_maturity_grid",
                    f"sqrt(n) * max maturity spacing = {ratio:.4g} exceeds {A5_THRESHOLD}",
                    severity="warning",
                )
            )
    return out


def errors_only(violations):
    return [v for v in violations if v.severity == "error"]


def _fmt(x) -> str:
    """Shortest round-trip decimal string, never in exponent notation."""
    text = repr(float(x))
    if "e" in text:
        text = np.format_float_positional(float(x), unique=True, trim="-")
    return text


def write_surface(s: CumulativeVarianceSurface, path, metadata: dict | None = None) -> None:
    """Write ``s`` in the long CSV format; ``metadata`` adds ``# key=value`` header lines."""
    meta = dict(s.metadata)
    meta.update(metadata or {})
    lines = [
        f"# {FORMAT_TAG}",
        f"# n={s.n}",
        "# maturities=" + ",".join(_fmt(T) for T in s.T),
    ]
    for key, value in meta.items():
        if key in ("n", "maturities"):
            continue
        lines.append(f"# {key}={value}")
    ii, jj = np.nonzero(s.alive_mask())
    keep = jj >= 1
    ii, jj = ii[keep], jj[keep]
    # also persist any non-zero dead cell so that a round trip never hides a violation
    di, dj = np.nonzero(~s.alive_mask() & (s.values != 0))
    if di.size:
        ii = np.concatenate([ii, di])
        jj = np.concatenate([jj, dj])
        order = np.lexsort((jj, ii))
        ii, jj = ii[order], jj[order]
    t_text = [_fmt(x) for x in s.t]
    T_text = [_fmt(x) for x in s.T]
    vals = s.values[ii, jj].tolist()
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
        fh.write(",".join(SURFACE_COLUMNS) + "\n")
        fh.writelines(
            f"{i},{j},{t_text[i]},{T_text[j]},{_fmt(v)}\n" for i, j, v in zip(ii.tolist(), jj.tolist(), vals)
        )


def _parse_header(fh):
    meta = {}
    header_lines = 0
    pos = fh.tell()
    line = fh.readline()
    while line.startswith("#"):
        header_lines += 1
        body = line[1:].strip()
        if "=" in body:
            key, value = body.split("=", 1)
            meta[key.strip()] = value.strip()
        pos = fh.tell()
        line = fh.readline()
    fh.seek(pos)
    return meta


def read_surface(path) -> CumulativeVarianceSurface:
    """Read a surface written by :func:`write_surface`.

    Raises :class:`SurfaceFormatError` on malformed rows, inconsistent grids,
    duplicate cells, or missing cells with ``t_i < T_j``.
    """
    with open(path, newline="") as fh:
        meta = _parse_header(fh)
        body = fh.read()
    if "n" not in meta or "maturities" not in meta:
        raise SurfaceFormatError(f"{path}: header must define n= and maturities=")
    try:
        n = int(meta.pop("n"))
        maturities = np.array([float(x) for x in meta.pop("maturities").split(",")])
    except ValueError as exc:
        raise SurfaceFormatError(f"{path}: malformed grid header: {exc}") from None
    time_grid = TimeGrid(n)
    grid = MaturityGrid(maturities)
    try:
        frame = pd.read_csv(io.StringIO(body), float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise SurfaceFormatError(f"{path}: malformed rows: {exc}") from None
    if list(frame.columns) != SURFACE_COLUMNS:
        raise SurfaceFormatError(f"{path}: expected header {','.join(SURFACE_COLUMNS)}, got {','.join(map(str, frame.columns))}")
    if frame.isna().any().any():
        bad = int(np.argmax(frame.isna().any(axis=1).to_numpy()))
        raise SurfaceFormatError(f"{path}: malformed row {bad + 1} (missing field)")
    try:
        ti = frame["t_index"].to_numpy()
        Tj = frame["T_index"].to_numpy()
        if not (np.all(ti == np.round(ti)) and np.all(Tj == np.round(Tj))):
            raise ValueError("non-integer index")
        ti = ti.astype(np.int64)
        Tj = Tj.astype(np.int64)
        t = frame["t"].to_numpy(dtype=float)
        T = frame["T"].to_numpy(dtype=float)
        vals = frame["I"].to_numpy(dtype=float)
    except (ValueError, TypeError) as exc:
        raise SurfaceFormatError(f"{path}: malformed rows: {exc}") from None
    if np.any((ti < 0) | (ti > n) | (Tj < 0) | (Tj > grid.d)):
        bad = int(np.argmax((ti < 0) | (ti > n) | (Tj < 0) | (Tj > grid.d)))
        raise SurfaceFormatError(f"{path}: row {bad + 1} has index ({ti[bad]},{Tj[bad]}) outside the grid")
    off = (np.abs(t - time_grid.times[ti]) > _GRID_TOL) | (np.abs(T - grid.maturities[Tj]) > _GRID_TOL)
    if off.any():
        bad = int(np.argmax(off))
        raise SurfaceFormatError(f"{path}: row {bad + 1} coordinates (t={t[bad]}, T={T[bad]}) disagree with the grid")
    flat = ti * (grid.d + 1) + Tj
    uniq, counts = np.unique(flat, return_counts=True)
    if np.any(counts > 1):
        dup = uniq[counts > 1][0]
        raise SurfaceFormatError(f"{path}: duplicate cell ({dup // (grid.d + 1)},{dup % (grid.d + 1)})")
    I = np.zeros((n + 1, grid.d + 1))
    seen = np.zeros_like(I, dtype=bool)
    I[ti, Tj] = vals
    seen[ti, Tj] = True
    need = time_grid.times[:, None] < grid.maturities[None, :]
    need[:, 0] = False
    missing = need & ~seen
    if missing.any():
        idx = np.argwhere(missing)
        shown = ", ".join(f"({i},{j})" for i, j in idx[:10])
        raise SurfaceFormatError(f"{path}: {len(idx)} missing cell(s) with t_i < T_j: {shown}")
    return CumulativeVarianceSurface(time_grid, grid, I, meta)
