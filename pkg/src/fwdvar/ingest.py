"""Option chains to cumulative forward variance surfaces.

Under the model, the cumulative forward variance is the value of a static
strip of out-of-the-money options,

    I_t^T = 2 int_0^{S_t} P(K) / K^2 dK + 2 int_{S_t}^inf C(K) / K^2 dK,

with prices in discounted units.  :func:`strip_integrate` applies the
trapezoid rule to that integral over the quoted strikes only (no tail
extrapolation).  :func:`build_surface` snaps observation times to the time
grid, strips every quoted (t, T) cell and fills the remaining maturities of
each row by monotone cubic Hermite interpolation.

Choices the source method leaves open (strike truncation, quote filtering,
time snapping) are stand-ins.  Every :class:`CoverageReport` flags them.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import ndtr

from .errors import IngestError
from .surface import CumulativeVarianceSurface, MaturityGrid, TimeGrid

CHAIN_COLUMNS = ("t", "T", "strike", "kind", "mid", "underlying")
OPTIONAL_COLUMNS = ("discount",)
KNOT_MATCH_TOL = 1e-9

STAND_IN_NOTES = (
    "strip: out-of-the-money quotes only, at-the-money strike on the put side",
    "strip: trapezoid over quoted strikes, no tail extrapolation (truncation bounds listed per cell)",
    "quotes: no filtering beyond schema checks",
    "times: observation times snapped to the nearest grid time within half a step",
    "maturities: missing cells imputed by monotone cubic Hermite interpolation with a zero anchor at T = t",
)


@dataclass(frozen=True)
class QuoteRecord:
    """One option quote.  Prices are in discounted units."""

    t: float
    T: float
    strike: float
    kind: str
    mid: float
    underlying: float

    def __post_init__(self):
        kind = str(self.kind).strip().upper()
        if kind not in ("C", "P"):
            raise IngestError(f"option kind must be C or P, got {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not self.strike > 0:
            raise IngestError(f"strike must be > 0, got {self.strike}")
        if not self.T > self.t:
            raise IngestError(f"expiry T={self.T} must exceed observation time t={self.t}")
        if not self.mid >= 0:
            raise IngestError(f"mid price must be >= 0, got {self.mid}")
        if not self.underlying > 0:
            raise IngestError(f"underlying level must be > 0, got {self.underlying}")


class OptionChain:
    """Quotes grouped by ``(t, T)``.

    Parameters
    ----------
    records : iterable of QuoteRecord

    Raises
    ------
    IngestError
        On duplicate ``(t, T, strike, kind)`` quotes, or on a group whose
        quotes disagree about the underlying level.
    """

    def __init__(self, records):
        self.records = list(records)
        seen = set()
        groups: dict = {}
        for rec in self.records:
            key = (rec.t, rec.T, rec.strike, rec.kind)
            if key in seen:
                raise IngestError(f"duplicate quote t={rec.t}, T={rec.T}, strike={rec.strike}, kind={rec.kind}")
            seen.add(key)
            groups.setdefault((rec.t, rec.T), []).append(rec)
        for (t, T), recs in groups.items():
            levels = np.array([r.underlying for r in recs])
            if np.ptp(levels) > 1e-12 * levels.max():
                raise IngestError(f"quotes at t={t}, T={T} disagree about the underlying level")
            recs.sort(key=lambda r: (r.strike, r.kind))
        self._groups = dict(sorted(groups.items()))

    def __len__(self):
        return len(self.records)

    @property
    def keys(self) -> list:
        return list(self._groups)

    def group(self, t, T) -> list:
        return self._groups[(t, T)]

    def groups(self):
        return self._groups.items()

    @property
    def observation_times(self) -> np.ndarray:
        return np.array(sorted({t for t, _ in self._groups}))


def read_chain(path) -> OptionChain:
    """Parse a chain CSV with header ``t,T,strike,kind,mid,underlying[,discount]``.

    The optional ``discount`` column multiplies the mid price.
    """
    try:
        frame = pd.read_csv(path, comment="#", dtype={"kind": str}, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise IngestError(f"cannot read chain file {path}: {exc}") from exc
    cols = [c.strip() for c in frame.columns]
    frame.columns = cols
    missing = [c for c in CHAIN_COLUMNS if c not in cols]
    unknown = [c for c in cols if c not in CHAIN_COLUMNS + OPTIONAL_COLUMNS]
    if missing or unknown:
        raise IngestError(
            f"chain header must be {','.join(CHAIN_COLUMNS)}[,discount]; "
            f"missing {missing or 'none'}, unknown {unknown or 'none'}"
        )
    records = []
    for line, row in enumerate(frame.itertuples(index=False), start=2):
        try:
            values = [float(getattr(row, c)) for c in ("t", "T", "strike", "mid", "underlying")]
            discount = float(row.discount) if "discount" in cols else 1.0
        except (TypeError, ValueError) as exc:
            raise IngestError(f"row {line}: non-numeric field ({exc})") from exc
        if not all(math.isfinite(v) for v in values + [discount]):
            raise IngestError(f"row {line}: missing or non-finite field")
        if not discount > 0:
            raise IngestError(f"row {line}: discount factor must be > 0, got {discount}")
        t, T, strike, mid, spot = values
        try:
            records.append(QuoteRecord(t, T, strike, row.kind, mid * discount, spot))
        except IngestError as exc:
            raise IngestError(f"row {line}: {exc}") from exc
    return OptionChain(records)


def write_chain(chain: OptionChain, path) -> None:
    frame = pd.DataFrame(
        [(r.t, r.T, r.strike, r.kind, r.mid, r.underlying) for r in chain.records], columns=CHAIN_COLUMNS
    )
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


@dataclass(frozen=True)
class StripResult:
    value: float
    strike_low: float
    strike_high: float
    n_strikes: int


def strip_quote(quotes, spot: float) -> StripResult:
    """Strip value with its truncation bounds.  See :func:`strip_integrate`."""
    spot = float(spot)
    if not spot > 0:
        raise IngestError(f"underlying level must be > 0, got {spot}")
    otm = {}
    for q in quotes:
        if (q.kind == "P" and q.strike <= spot) or (q.kind == "C" and q.strike > spot):
            otm[q.strike] = q.mid
    if len(otm) < 2:
        raise IngestError(f"strip needs at least 2 out-of-the-money strikes, got {len(otm)}")
    K = np.array(sorted(otm))
    if K[0] > spot or K[-1] <= spot:
        side = "above" if K[0] > spot else "at or below"
        raise IngestError(f"all usable strikes lie {side} the underlying level {spot:g}")
    Q = np.array([otm[k] for k in K])
    value = float(np.trapezoid(2.0 * Q / K**2, K))
    return StripResult(value, float(K[0]), float(K[-1]), int(K.size))


def strip_integrate(quotes, spot: float) -> float:
    """Trapezoid rule for ``2 int Q(K) / K^2 dK`` over the quoted strikes.

    ``Q`` is the put price for ``K <= spot`` and the call price above.
    Quotes of the other kind are ignored.

    Raises
    ------
    IngestError
        With fewer than two usable strikes, or when they all lie on one
        side of ``spot``.
    """
    return strip_quote(quotes, spot).value


@dataclass(frozen=True)
class Pchip:
    """Monotone cubic Hermite interpolant (knots, values and limited slopes)."""

    x: np.ndarray
    y: np.ndarray
    slopes: np.ndarray

    def __call__(self, x):
        return pchip_eval(self, x)


def pchip_fit(x, y) -> Pchip:
    """Fit with the Fritsch-Carlson slope limiter.

    Interior slopes start as the mean of the adjacent secants and are then
    limited interval by interval: zeroed where the data is flat or changes
    direction, and scaled back onto the circle of radius 3 otherwise.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError("knots and values must be 1-d arrays of equal length")
    if x.size < 2:
        raise ValueError(f"interpolation needs at least 2 knots, got {x.size}")
    if not np.all(np.diff(x) > 0):
        raise ValueError("knots must be strictly increasing")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("knots and values must be finite")
    secant = np.diff(y) / np.diff(x)
    m = np.empty_like(y)
    m[0], m[-1] = secant[0], secant[-1]
    m[1:-1] = 0.5 * (secant[:-1] + secant[1:])
    m[1:-1][secant[:-1] * secant[1:] <= 0] = 0.0
    for k, s in enumerate(secant):
        if s == 0.0:
            m[k] = m[k + 1] = 0.0
            continue
        if m[k] * s < 0:
            m[k] = 0.0
        if m[k + 1] * s < 0:
            m[k + 1] = 0.0
        # (m_k / s, m_k+1 / s) outside the radius-3 circle: scale both back
        # onto it (written without dividing by s, which may be tiny)
        norm = math.hypot(m[k], m[k + 1])
        if norm > 3.0 * abs(s):
            m[k] *= 3.0 * abs(s) / norm
            m[k + 1] *= 3.0 * abs(s) / norm
    return Pchip(x, y, m)


def pchip_eval(p: Pchip, x):
    """Evaluate inside ``[x_first, x_last]``; knots return their values exactly."""
    xq = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(xq)) or np.any(xq < p.x[0]) or np.any(xq > p.x[-1]):
        raise ValueError(f"query outside the interpolation range [{p.x[0]:g}, {p.x[-1]:g}]")
    k = np.clip(np.searchsorted(p.x, xq, side="right") - 1, 0, p.x.size - 2)
    h = p.x[k + 1] - p.x[k]
    s = (xq - p.x[k]) / h
    s2, s3 = s * s, s * s * s
    out = (
        (2 * s3 - 3 * s2 + 1) * p.y[k]
        + (s3 - 2 * s2 + s) * h * p.slopes[k]
        + (-2 * s3 + 3 * s2) * p.y[k + 1]
        + (s3 - s2) * h * p.slopes[k + 1]
    )
    out = np.where(xq == p.x[k], p.y[k], np.where(xq == p.x[k + 1], p.y[k + 1], out))
    return out[()] if out.ndim == 0 else out


@dataclass
class CoverageReport:
    """What :func:`build_surface` observed, imputed and clamped."""

    n: int
    d: int
    observed: int = 0
    imputed: int = 0
    clamped: int = 0
    snapped: list = field(default_factory=list)
    truncation: dict = field(default_factory=dict)
    notes: tuple = STAND_IN_NOTES

    def to_text(self) -> str:
        lines = [
            f"grid: n={self.n} d={self.d}",
            f"observed_cells={self.observed}",
            f"imputed_cells={self.imputed}",
            f"clamped_cells={self.clamped}",
        ]
        lines += [f"stand_in: {note}" for note in self.notes]
        lines.append("snapped observation times (t_raw, i, t_i):")
        lines += [f"  {t:.17g} {i} {ti:.17g}" for t, i, ti in self.snapped]
        lines.append("strike truncation per observed cell (i, j, T_raw, K_low, K_high, strikes):")
        for (i, j), (T, lo, hi, m) in sorted(self.truncation.items()):
            lines.append(f"  {i} {j} {T:.17g} {lo:.17g} {hi:.17g} {m}")
        return "\n".join(lines) + "\n"


def _snap(t, grid: TimeGrid) -> int:
    i = int(round(t / grid.delta))
    if not 0 <= i <= grid.n or abs(t - grid.times[i]) > 0.5 * grid.delta * (1 + 1e-9):
        raise IngestError(f"observation time {t} is not within half a step of the time grid")
    return i


def build_surface(
    chain: OptionChain,
    time_grid: TimeGrid,
    maturity_grid: MaturityGrid,
    workers: int = 1,
) -> tuple[CumulativeVarianceSurface, CoverageReport]:
    """Strip every quoted cell and impute the rest of each row.

    Each row ``t_i`` is interpolated over its stripped ``(T, I)`` knots plus
    the anchor ``(t_i, 0)``.  A grid maturity is observed when it coincides
    with a quoted expiry.  Imputed values below zero are clamped to zero
    and counted.

    Raises
    ------
    IngestError
        When two observation times snap to the same grid time, when a row
        that needs imputation has fewer than 2 quoted maturities, or when a
        grid maturity lies beyond the row's last quoted expiry.
    """
    n, d = time_grid.n, maturity_grid.d
    report = CoverageReport(n=n, d=d)
    rows: dict = {}
    for t in chain.observation_times:
        i = _snap(t, time_grid)
        if i in rows:
            raise IngestError(f"observation times {rows[i]} and {t} snap to the same grid time t_{i}")
        rows[i] = t
        report.snapped.append((float(t), i, float(time_grid.times[i])))
    row_of = {t: i for i, t in rows.items()}

    keys = chain.keys
    work = [(chain.group(t, T), chain.group(t, T)[0].underlying) for t, T in keys]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            strips = list(pool.map(lambda job: strip_quote(*job), work))
    else:
        strips = [strip_quote(*job) for job in work]
    knots: dict = {}
    for (t, T), res in zip(keys, strips):
        knots.setdefault(row_of[t], []).append((T, res))

    Tg = maturity_grid.maturities
    values = np.zeros((n + 1, d + 1))
    for i in range(n + 1):
        ti = time_grid.times[i]
        alive = np.flatnonzero(Tg > ti)
        if alive.size == 0:
            continue
        obs = sorted(knots.get(i, []), key=lambda kv: kv[0])
        obs_T = np.array([T for T, _ in obs])
        filled = np.zeros(d + 1, dtype=bool)
        for T, res in obs:
            j = int(np.argmin(np.abs(Tg - T)))
            if abs(Tg[j] - T) <= KNOT_MATCH_TOL and Tg[j] > ti:
                values[i, j] = res.value
                filled[j] = True
                report.truncation[(i, j)] = (float(T), res.strike_low, res.strike_high, res.n_strikes)
        missing = [j for j in alive if not filled[j]]
        report.observed += int(alive.size - len(missing))
        if not missing:
            continue
        if len(obs) < 2:
            raise IngestError(f"row t_{i}={ti:g} has {len(obs)} quoted maturities; at least 2 are needed to impute")
        xk = np.concatenate([[ti], obs_T[obs_T > ti]])
        yk = np.concatenate([[0.0], [res.value for T, res in obs if T > ti]])
        interp = pchip_fit(xk, yk)
        for j in missing:
            if Tg[j] > xk[-1]:
                raise IngestError(
                    f"maturity T_{j}={Tg[j]:g} lies beyond the last quoted expiry {xk[-1]:g} at t_{i}={ti:g}; "
                    "extrapolation is not performed"
                )
            v = float(pchip_eval(interp, Tg[j]))
            if v < 0:
                v = 0.0
                report.clamped += 1
            values[i, j] = v
            report.imputed += 1
    surface = CumulativeVarianceSurface(
        time_grid, maturity_grid, values, metadata={"source": "ingest", "stand_ins": "; ".join(STAND_IN_NOTES)}
    )
    return surface, report


def bs_call(spot, strike, tau, sigma):
    """Black-Scholes call price in discounted units (zero rate)."""
    spot, strike = np.asarray(spot, dtype=float), np.asarray(strike, dtype=float)
    sd = sigma * np.sqrt(tau)
    d1 = np.log(spot / strike) / sd + 0.5 * sd
    return spot * ndtr(d1) - strike * ndtr(d1 - sd)


def bs_put(spot, strike, tau, sigma):
    spot, strike = np.asarray(spot, dtype=float), np.asarray(strike, dtype=float)
    sd = sigma * np.sqrt(tau)
    d1 = np.log(spot / strike) / sd + 0.5 * sd
    return strike * ndtr(sd - d1) - spot * ndtr(-d1)


def log_strikes(spot: float, count: int, low: float = 0.01, high: float = 100.0) -> np.ndarray:
    """``count`` log-uniform strikes over ``[low * spot, high * spot]``."""
    return spot * np.geomspace(low, high, count)


def black_scholes_chain(times, expiries, sigma: float = 0.2, spot: float = 1.0, strikes=None) -> OptionChain:
    """Synthetic chain under flat volatility: both kinds at every strike, every ``T > t``."""
    strikes = log_strikes(spot, 4000) if strikes is None else np.asarray(strikes, dtype=float)
    records = []
    for t in times:
        for T in expiries:
            if T <= t:
                continue
            calls = bs_call(spot, strikes, T - t, sigma)
            puts = bs_put(spot, strikes, T - t, sigma)
            for K, c, p in zip(strikes, calls, puts):
                records.append(QuoteRecord(float(t), float(T), float(K), "C", max(float(c), 0.0), spot))
                records.append(QuoteRecord(float(t), float(T), float(K), "P", max(float(p), 0.0), spot))
    return OptionChain(records)
