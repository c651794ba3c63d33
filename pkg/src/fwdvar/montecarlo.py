"""Seeded Monte Carlo harness for the estimator and its studentization.

Replication ``r`` simulates one surface from the stream seed
``derive_seed(master_seed, r)``, then estimates and studentizes it once per
regularization level in the sweep.  Failures are recorded, never raised,
and are left out of the summary moments.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.special import ndtri

from .contrast import ContrastConfig, ContrastEvaluator, minimize_contrast
from .errors import FwdVarError
from .inference import infer
from .kernels import ParamBox
from .simulate import SimConfig, derive_seed, simulate_brownian, simulate_surface

log = logging.getLogger(__name__)

DEFAULT_EPSILON_SWEEP = (1e-2, 1e-3, 1e-4, 1e-5)


@dataclass(frozen=True)
class MCConfig:
    sim: SimConfig
    box: ParamBox
    contrast: ContrastConfig = field(default_factory=ContrastConfig)
    replications: int = 100
    master_seed: int = 0
    fixed: dict = field(default_factory=dict)
    epsilon_sweep: tuple = ()
    level: float = 0.95

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        q = self.sim.kernel.q
        if self.box.q != q:
            raise ValueError(f"box dimension {self.box.q} does not match kernel dimension {q}")
        fixed = {int(a): float(v) for a, v in dict(self.fixed).items()}
        for a in fixed:
            if not 0 <= a < q:
                raise ValueError(f"fixed component index {a} outside 0..{q - 1}")
        object.__setattr__(self, "fixed", fixed)
        object.__setattr__(self, "epsilon_sweep", tuple(float(e) for e in self.epsilon_sweep))

    @property
    def theta0(self) -> np.ndarray:
        return self.sim.theta0

    @property
    def epsilons(self) -> tuple:
        return self.epsilon_sweep or (self.contrast.epsilon,)

    @property
    def param_names(self) -> tuple:
        return tuple(self.sim.kernel.param_names)

    @property
    def free(self) -> np.ndarray:
        q = self.sim.kernel.q
        return np.array([a for a in range(q) if a not in self.fixed and self.box.lower[a] < self.box.upper[a]], dtype=int)


@dataclass
class ReplicationRecord:
    replication: int
    seed: int
    epsilon: float
    theta_hat: np.ndarray | None = None
    free: np.ndarray | None = None
    z: np.ndarray | None = None
    z_full: np.ndarray | None = None
    ci_lower: np.ndarray | None = None
    ci_upper: np.ndarray | None = None
    converged: bool = False
    condition_number: float = float("nan")
    contrast_value: float = float("nan")
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error) or not self.converged

    def hits(self, theta0) -> np.ndarray:
        t0 = np.asarray(theta0, dtype=float)[self.free]
        return (self.ci_lower <= t0) & (t0 <= self.ci_upper)


def run_replication(cfg: MCConfig, r: int) -> list[ReplicationRecord]:
    """Simulate replication ``r`` and estimate it at every regularization level."""
    if not 0 <= r < cfg.replications:
        raise IndexError(f"replication {r} outside 0..{cfg.replications - 1}")
    seed = derive_seed(cfg.master_seed, r)
    free = cfg.free
    records = []
    try:
        sim = replace(cfg.sim, seed=seed)
        surface = simulate_surface(sim, simulate_brownian(sim.n, seed))
    except FwdVarError as exc:
        return [ReplicationRecord(r, seed, eps, free=free, error=f"simulation: {exc}") for eps in cfg.epsilons]
    kernel = cfg.sim.kernel
    for eps in cfg.epsilons:
        rec = ReplicationRecord(r, seed, eps, free=free)
        try:
            ev = ContrastEvaluator(surface, kernel, eps)
            est = minimize_contrast(surface, kernel, cfg.box, replace(cfg.contrast, epsilon=eps), cfg.fixed, ev)
            rec.theta_hat = est.theta_hat
            rec.free = est.free
            rec.converged = est.converged
            rec.contrast_value = est.contrast_value
            res = infer(surface, kernel, est.theta_hat, eps, est.free, cfg.theta0, cfg.level, ev)
            rec.z = res.z_marginal
            rec.z_full = res.z
            rec.ci_lower, rec.ci_upper = res.ci_lower, res.ci_upper
            rec.condition_number = res.covariance.condition_number_B
        except FwdVarError as exc:
            rec.error = f"{type(exc).__name__}: {exc}"
        records.append(rec)
    return records


def _run_one(args):
    cfg, r = args
    return run_replication(cfg, r)


def run_study(cfg: MCConfig, workers: int = 1) -> list[ReplicationRecord]:
    """All replications, ordered by (replication, epsilon position) whatever ``workers`` is."""
    jobs = [(cfg, r) for r in range(cfg.replications)]
    if workers <= 1:
        nested = [_run_one(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            nested = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (8 * workers))))
    return [rec for recs in nested for rec in recs]


@dataclass
class ParameterSummary:
    epsilon: float
    parameter: str
    index: int
    mean_estimate: float
    bias: float
    rmse: float
    mean_z: float
    var_z: float
    coverage: float
    n_success: int
    n_failed: int


@dataclass
class MCSummary:
    rows: list

    def row(self, parameter, epsilon=None) -> ParameterSummary:
        for row in self.rows:
            if (row.parameter == parameter or row.index == parameter) and (epsilon is None or row.epsilon == epsilon):
                return row
        raise KeyError(f"no summary row for parameter {parameter!r}, epsilon {epsilon!r}")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(r) for r in self.rows])


def summarize(records, theta0, param_names=None) -> MCSummary:
    """Bias, RMSE, moments of the marginal statistic and coverage per (epsilon, parameter).

    Variances are population variances (divisor = number of successes).
    """
    theta0 = np.asarray(theta0, dtype=float)
    names = tuple(param_names) if param_names is not None else tuple(f"theta{a}" for a in range(theta0.size))
    rows = []
    epsilons = list(dict.fromkeys(rec.epsilon for rec in records))
    for eps in epsilons:
        group = [rec for rec in records if rec.epsilon == eps]
        ok = [rec for rec in group if not rec.failed]
        if not ok:
            raise ValueError(f"no successful replication at epsilon={eps:g}")
        free = ok[0].free
        est = np.array([rec.theta_hat for rec in ok])
        z = np.array([rec.z for rec in ok])
        hit = np.array([rec.hits(theta0) for rec in ok])
        for pos, a in enumerate(free):
            err = est[:, a] - theta0[a]
            bias = float(np.mean(err))
            var_err = float(np.mean((err - bias) ** 2))
            zm = float(np.mean(z[:, pos]))
            rows.append(
                ParameterSummary(
                    epsilon=eps,
                    parameter=names[a],
                    index=int(a),
                    mean_estimate=float(np.mean(est[:, a])),
                    bias=bias,
                    rmse=float(np.sqrt(bias * bias + var_err)),
                    mean_z=zm,
                    var_z=float(np.mean((z[:, pos] - zm) ** 2)),
                    coverage=float(np.mean(hit[:, pos])),
                    n_success=len(ok),
                    n_failed=len(group) - len(ok),
                )
            )
    return MCSummary(rows)


def qq_pairs(z) -> np.ndarray:
    """Sorted sample against normal quantiles at plotting positions ``(r - 0.5) / R``."""
    z = np.sort(np.asarray(z, dtype=float))
    R = z.size
    return np.column_stack([z, ndtri((np.arange(1, R + 1) - 0.5) / R)])


def records_frame(records, theta0, param_names) -> pd.DataFrame:
    """One row per (replication, epsilon, free parameter)."""
    rows = []
    for rec in records:
        done = rec.ci_lower is not None
        hits = rec.hits(theta0) if done else None
        for pos, a in enumerate(rec.free):
            rows.append(
                {
                    "replication": rec.replication,
                    "seed": rec.seed,
                    "epsilon": rec.epsilon,
                    "parameter": param_names[a],
                    "theta_hat": rec.theta_hat[a] if rec.theta_hat is not None else np.nan,
                    "z": rec.z[pos] if done else np.nan,
                    "ci_lower": rec.ci_lower[pos] if done else np.nan,
                    "ci_upper": rec.ci_upper[pos] if done else np.nan,
                    "hit": int(hits[pos]) if done else 0,
                    "converged": int(rec.converged),
                    "failed": int(rec.failed),
                }
            )
    return pd.DataFrame(rows)


def format_table(summary: MCSummary) -> str:
    """Plain-text table in the layout of the usual Monte Carlo tables."""
    head = f"{'eps':>8} {'param':>6} {'E[est]':>10} {'Bias':>9} {'RMSE':>9} {'E[Z]':>8} {'Var(Z)':>9} {'Cover':>7} {'ok':>5} {'fail':>5}"
    lines = [head, "-" * len(head)]
    for r in summary.rows:
        lines.append(
            f"{r.epsilon:>8.0e} {r.parameter:>6} {r.mean_estimate:>10.4f} {r.bias:>9.4f} {r.rmse:>9.4f} "
            f"{r.mean_z:>8.3f} {r.var_z:>9.3f} {r.coverage:>7.3f} {r.n_success:>5d} {r.n_failed:>5d}"
        )
    return "\n".join(lines) + "\n"


def focus_table(summary: MCSummary, parameter, means_of=()) -> pd.DataFrame:
    """One row per epsilon for ``parameter``, with the mean estimates of ``means_of`` in front.

    Columns: ``epsilon``, ``E[<p>_hat]`` for each ``p`` in ``means_of``,
    ``<parameter>_bias``, ``<parameter>_rmse``, ``E[Z]``, ``Var(Z)`` and ``coverage``.
    """
    rows = []
    for eps in dict.fromkeys(r.epsilon for r in summary.rows):
        focus = summary.row(parameter, eps)
        row = {"epsilon": eps}
        for other in means_of:
            row[f"E[{other}_hat]"] = summary.row(other, eps).mean_estimate
        row.update(
            {
                f"{focus.parameter}_bias": focus.bias,
                f"{focus.parameter}_rmse": focus.rmse,
                "E[Z]": focus.mean_z,
                "Var(Z)": focus.var_z,
                "coverage": focus.coverage,
            }
        )
        rows.append(row)
    return pd.DataFrame(rows)


def _write_csv(frame: pd.DataFrame, path, header_lines):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        frame.to_csv(fh, index=False, float_format="%.17g", lineterminator="\n")


def export_study(summary: MCSummary, records, out_dir, theta0, param_names, header: dict | None = None) -> dict:
    """Write ``summary.csv``, ``z_raw.csv``, one ``qq_*.csv`` per (epsilon, parameter) and ``summary.txt``."""
    os.makedirs(out_dir, exist_ok=True)
    header_lines = [f"{k}={v}" for k, v in (header or {}).items()]
    paths = {}
    paths["summary"] = os.path.join(out_dir, "summary.csv")
    _write_csv(summary.to_frame().drop(columns=["index"]), paths["summary"], header_lines)
    paths["z_raw"] = os.path.join(out_dir, "z_raw.csv")
    raw = records_frame(records, theta0, param_names)
    _write_csv(raw, paths["z_raw"], header_lines)
    epsilons = list(dict.fromkeys(r.epsilon for r in summary.rows))
    paths["qq"] = []
    for row in summary.rows:
        sel = raw[(raw["epsilon"] == row.epsilon) & (raw["parameter"] == row.parameter) & (raw["failed"] == 0)]
        qq = pd.DataFrame(qq_pairs(sel["z"].to_numpy()), columns=["z_sorted", "normal_quantile"])
        suffix = f"_eps{row.epsilon:g}" if len(epsilons) > 1 else ""
        path = os.path.join(out_dir, f"qq_{row.parameter}{suffix}.csv")
        _write_csv(qq, path, header_lines)
        paths["qq"].append(path)
    paths["table"] = os.path.join(out_dir, "summary.txt")
    with open(paths["table"], "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(format_table(summary))
    return paths


def summary_from_raw(path, theta0, param_names) -> MCSummary:
    """Recompute the summary from an exported ``z_raw.csv``."""
    raw = pd.read_csv(path, comment="#", float_precision="round_trip")
    theta0 = np.asarray(theta0, dtype=float)
    rows = []
    for eps in list(dict.fromkeys(raw["epsilon"])):
        g = raw[raw["epsilon"] == eps]
        for name in dict.fromkeys(g["parameter"]):
            a = list(param_names).index(name)
            sel = g[(g["parameter"] == name)]
            ok = sel[sel["failed"] == 0]
            err = ok["theta_hat"].to_numpy() - theta0[a]
            z = ok["z"].to_numpy()
            bias = float(np.mean(err))
            zm = float(np.mean(z))
            rows.append(
                ParameterSummary(
                    epsilon=float(eps),
                    parameter=name,
                    index=a,
                    mean_estimate=float(np.mean(ok["theta_hat"].to_numpy())),
                    bias=bias,
                    rmse=float(np.sqrt(bias * bias + float(np.mean((err - bias) ** 2)))),
                    mean_z=zm,
                    var_z=float(np.mean((z - zm) ** 2)),
                    coverage=float(np.mean(ok["hit"].to_numpy())),
                    n_success=len(ok),
                    n_failed=len(sel) - len(ok),
                )
            )
    return MCSummary(rows)
