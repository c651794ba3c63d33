import numpy as np
import pandas as pd
import pytest
from scipy.special import ndtri

from fwdvar.contrast import ContrastConfig, ContrastEvaluator, minimize_contrast
from fwdvar.inference import infer
from fwdvar.kernels import KernelSpec, ParamBox
from fwdvar.montecarlo import (
    MCConfig,
    ReplicationRecord,
    export_study,
    focus_table,
    format_table,
    qq_pairs,
    records_frame,
    run_replication,
    run_study,
    summarize,
    summary_from_raw,
)
from fwdvar.simulate import SimConfig, derive_seed, simulate_brownian, simulate_surface
from fwdvar.surface import MaturityGrid, TimeGrid

EXP = KernelSpec("exponential")
BOX = ParamBox([0.01, -3.0], [10.0, 3.0])


def small_config(replications=4, **kw):
    sim = SimConfig(EXP, [1.0, -1.0], TimeGrid(100), MaturityGrid.uniform(30))
    return MCConfig(sim=sim, box=BOX, replications=replications, master_seed=11, **kw)


def record(r, theta, z, lo, hi, eps=1e-3, converged=True):
    return ReplicationRecord(
        r, r, eps, np.array(theta, float), np.array([0, 1]), np.array(z, float), np.array(z, float),
        np.array(lo, float), np.array(hi, float), converged,
    )


@pytest.fixture(scope="module")
def study():
    cfg = small_config()
    return cfg, run_study(cfg)


class TestConfig:
    def test_rejects_zero_replications(self):
        with pytest.raises(ValueError):
            small_config(replications=0)

    def test_rejects_bad_fixed_index(self):
        with pytest.raises(ValueError):
            small_config(fixed={5: 1.0})

    def test_epsilons_default_to_contrast_level(self):
        assert small_config().epsilons == (1e-3,)
        assert small_config(epsilon_sweep=[1e-2, 1e-4]).epsilons == (1e-2, 1e-4)

    def test_free(self):
        np.testing.assert_array_equal(small_config(fixed={0: 1.0}).free, [1])


class TestReplication:
    def test_deterministic(self, study):
        cfg, records = study
        again = run_study(cfg)
        for a, b in zip(records, again):
            np.testing.assert_array_equal(a.theta_hat, b.theta_hat)
            np.testing.assert_array_equal(a.z, b.z)

    def test_seeds_are_derived(self, study):
        cfg, records = study
        assert [rec.seed for rec in records] == [derive_seed(11, r) for r in range(4)]

    def test_single_replication_is_the_manual_pipeline(self, study):
        cfg, records = study
        seed = derive_seed(11, 2)
        sim = SimConfig(EXP, [1.0, -1.0], TimeGrid(100), MaturityGrid.uniform(30), seed=seed)
        s = simulate_surface(sim, simulate_brownian(100, seed))
        ev = ContrastEvaluator(s, EXP, 1e-3)
        est = minimize_contrast(s, EXP, BOX, ContrastConfig(), None, ev)
        res = infer(s, EXP, est.theta_hat, 1e-3, est.free, [1.0, -1.0], 0.95, ev)
        np.testing.assert_array_equal(records[2].theta_hat, est.theta_hat)
        np.testing.assert_array_equal(records[2].z, res.z_marginal)
        np.testing.assert_array_equal(records[2].ci_lower, res.ci_lower)

    def test_fixed_component_stays_exact(self):
        cfg = small_config(replications=2, fixed={0: 1.0})
        for rec in run_study(cfg):
            assert rec.theta_hat[0] == 1.0
            assert rec.z.shape == (1,)

    def test_sweep_shares_the_surface(self):
        cfg = small_config(replications=1, epsilon_sweep=[1e-2, 1e-3])
        recs = run_replication(cfg, 0)
        assert [r.epsilon for r in recs] == [1e-2, 1e-3]
        assert recs[0].seed == recs[1].seed

    def test_index_range(self):
        with pytest.raises(IndexError):
            run_replication(small_config(), 4)

    def test_parallel_equals_serial(self, study):
        cfg, records = study
        par = run_study(cfg, workers=2)
        for a, b in zip(records, par):
            np.testing.assert_array_equal(a.theta_hat, b.theta_hat)
            np.testing.assert_array_equal(a.z, b.z)

    def test_failure_is_recorded(self):
        sim = SimConfig(EXP, [1.0, -1.0], TimeGrid(20), MaturityGrid.uniform(5))
        # a box that makes B-hat singular: the kernel scale pinned at 0
        cfg = MCConfig(sim=sim, box=ParamBox([0.0, -3.0], [10.0, 3.0]), replications=1, fixed={0: 0.0})
        rec = run_replication(cfg, 0)[0]
        assert rec.failed and rec.error


class TestSummary:
    def test_hand_computed(self):
        recs = [
            record(0, [1.1, -1.0], [1.0, 0.0], [0.9, -1.1], [1.2, -0.9]),
            record(1, [0.9, -1.0], [-1.0, 0.0], [0.8, -1.1], [0.95, -0.9]),
            record(2, [1.1, -1.0], [1.0, 0.0], [0.9, -1.1], [1.2, -0.9]),
            record(3, [0.9, -1.0], [-1.0, 0.0], [0.7, -1.1], [1.05, -0.9]),
        ]
        s = summarize(recs, [1.0, -1.0], ("eta", "xi"))
        eta, xi = s.row("eta"), s.row("xi")
        assert eta.bias == pytest.approx(0.0, abs=1e-15)
        assert eta.rmse == pytest.approx(0.1)
        assert eta.mean_z == 0.0 and eta.var_z == 1.0
        assert eta.coverage == 0.75
        assert (xi.mean_z, xi.var_z, xi.coverage) == (0.0, 0.0, 1.0)
        assert eta.n_success == 4 and eta.n_failed == 0

    def test_failures_are_excluded(self):
        recs = [record(0, [1.0, -1.0], [0.5, 0.5], [0, -2], [2, 0]), record(1, [5.0, 5.0], [9.0, 9.0], [0, 0], [0, 0], converged=False)]
        s = summarize(recs, [1.0, -1.0])
        assert s.row(0).n_failed == 1 and s.row(0).mean_z == 0.5

    def test_all_failed(self):
        with pytest.raises(ValueError):
            summarize([ReplicationRecord(0, 0, 1e-3, error="x")], [1.0, -1.0])

    def test_missing_row(self, study):
        cfg, records = study
        with pytest.raises(KeyError):
            summarize(records, cfg.theta0, cfg.param_names).row("H")

    def test_focus_table(self, study):
        cfg, records = study
        summary = summarize(records, cfg.theta0, cfg.param_names)
        table = focus_table(summary, "xi", means_of=("eta",))
        assert list(table.columns) == ["epsilon", "E[eta_hat]", "xi_bias", "xi_rmse", "E[Z]", "Var(Z)", "coverage"]
        assert table.loc[0, "xi_rmse"] == summary.row("xi").rmse
        assert table.loc[0, "E[eta_hat]"] == summary.row("eta").mean_estimate

    def test_table_lists_every_row(self, study):
        cfg, records = study
        text = format_table(summarize(records, cfg.theta0, cfg.param_names))
        assert len(text.splitlines()) == 4
        assert "E[Z]" in text.splitlines()[0]


class TestExport:
    def test_files_and_columns(self, study, tmp_path):
        cfg, records = study
        summary = summarize(records, cfg.theta0, cfg.param_names)
        paths = export_study(summary, records, tmp_path, cfg.theta0, cfg.param_names, {"config_digest": "abc"})
        table = pd.read_csv(paths["summary"], comment="#")
        assert list(table.columns) == [
            "epsilon", "parameter", "mean_estimate", "bias", "rmse", "mean_z", "var_z", "coverage", "n_success", "n_failed"
        ]
        raw = pd.read_csv(paths["z_raw"], comment="#")
        assert len(raw) == 2 * cfg.replications
        assert len(paths["qq"]) == 2
        assert (tmp_path / "summary.csv").read_text().startswith("# config_digest=abc\n")

    def test_qq_positions(self, study, tmp_path):
        cfg, records = study
        summary = summarize(records, cfg.theta0, cfg.param_names)
        paths = export_study(summary, records, tmp_path, cfg.theta0, cfg.param_names)
        qq = pd.read_csv(paths["qq"][0], comment="#")
        R = cfg.replications
        np.testing.assert_allclose(qq["normal_quantile"], ndtri((np.arange(1, R + 1) - 0.5) / R))
        assert np.all(np.diff(qq["z_sorted"]) >= 0)

    def test_summary_recomputed_from_raw(self, study, tmp_path):
        cfg, records = study
        summary = summarize(records, cfg.theta0, cfg.param_names)
        paths = export_study(summary, records, tmp_path, cfg.theta0, cfg.param_names)
        back = summary_from_raw(paths["z_raw"], cfg.theta0, cfg.param_names)
        for a, b in zip(summary.rows, back.rows):
            for key in ("bias", "rmse", "mean_z", "var_z", "coverage"):
                assert getattr(b, key) == pytest.approx(getattr(a, key), rel=1e-12, abs=1e-12)

    def test_sweep_names_qq_files_by_epsilon(self, tmp_path):
        recs = [record(r, [1.0 + 0.01 * r, -1.0], [r, -r], [0, -2], [2, 0], eps=e) for e in (1e-2, 1e-3) for r in range(3)]
        summary = summarize(recs, [1.0, -1.0], ("eta", "xi"))
        paths = export_study(summary, recs, tmp_path, [1.0, -1.0], ("eta", "xi"))
        names = sorted(p.split("/")[-1] for p in paths["qq"])
        assert names == ["qq_eta_eps0.001.csv", "qq_eta_eps0.01.csv", "qq_xi_eps0.001.csv", "qq_xi_eps0.01.csv"]

    def test_qq_pairs(self):
        out = qq_pairs([2.0, -1.0])
        np.testing.assert_array_equal(out[:, 0], [-1.0, 2.0])
        np.testing.assert_allclose(out[:, 1], [ndtri(0.25), ndtri(0.75)])

    def test_records_frame_marks_failures(self):
        frame = records_frame([ReplicationRecord(0, 7, 1e-3, free=np.array([0, 1]), error="boom")], [1.0, -1.0], ("eta", "xi"))
        assert list(frame["failed"]) == [1, 1]
        assert frame["z"].isna().all()
