import math

import numpy as np
import pytest
from conftest import random_surface
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fwdvar.errors import SurfaceFormatError
from fwdvar.surface import (
    CumulativeVarianceSurface,
    ForwardVarianceCurve,
    MaturityGrid,
    TimeGrid,
    default_d,
    errors_only,
    increment,
    read_surface,
    validate_surface,
    write_surface,
)


def toy_surface():
    # n = 2, d = 2: cells with t_i >= T_j are zero
    return CumulativeVarianceSurface.from_array([[0.0, 0.5, 1.0], [0.0, 0.0, 0.5], [0.0, 0.0, 0.0]])


class TestGrids:
    def test_time_grid(self):
        g = TimeGrid(4)
        assert g.delta == 0.25
        np.testing.assert_array_equal(g.times, [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_time_grid_rejects_zero(self):
        with pytest.raises(ValueError):
            TimeGrid(0)

    @pytest.mark.parametrize(
        "maturities",
        [[0.1, 0.5, 1.0], [0.0, 0.5, 0.5], [0.0, 0.7, 0.3], [0.0, 0.5, 1.2]],
    )
    def test_maturity_grid_invariants(self, maturities):
        with pytest.raises(SurfaceFormatError):
            MaturityGrid(maturities)

    def test_uniform_maturities(self):
        g = MaturityGrid.uniform(4)
        assert g.d == 4
        assert g.max_spacing == pytest.approx(0.25)

    def test_default_d_is_computed(self):
        assert default_d(2000) == math.ceil(2000**0.95) == 1368
        assert default_d(10000) == math.ceil(10000**0.95)
        assert default_d(1) == 1

    def test_forward_curve_interpolates_linearly(self):
        c = ForwardVarianceCurve([0.0, 1.0], [1.0, 3.0])
        np.testing.assert_allclose(c([0.0, 0.25, 1.0]), [1.0, 1.5, 3.0])
        assert ForwardVarianceCurve.constant(0.04)(0.3) == 0.04

    def test_forward_curve_must_be_positive(self):
        with pytest.raises(ValueError):
            ForwardVarianceCurve([0.0, 1.0], [1.0, 0.0])


class TestValidation:
    def test_valid_toy(self):
        assert validate_surface(toy_surface()) == []

    def test_random_surfaces_are_valid(self, rng):
        for _ in range(5):
            s = random_surface(rng, 30, 7, uniform=False)
            assert validate_surface(s, strict=False) == []

    def test_single_negative_cell(self):
        v = toy_surface().values.copy()
        v[0, 1] = -0.01
        out = validate_surface(CumulativeVarianceSurface.from_array(v))
        assert [x.code for x in out] == ["negative"]
        assert out[0].count == 1
        assert out[0].cells == ((0, 1),)

    def test_zero_convention(self):
        v = toy_surface().values.copy()
        v[2, 2] = 0.3
        out = validate_surface(CumulativeVarianceSurface.from_array(v))
        assert "zero_convention" in [x.code for x in out]

    def test_first_column(self):
        v = toy_surface().values.copy()
        v[0, 0] = 0.1
        assert [x.code for x in validate_surface(CumulativeVarianceSurface.from_array(v))] == ["first_column"]

    def test_monotone_in_maturity(self):
        v = toy_surface().values.copy()
        v[0, 2] = 0.4
        assert [x.code for x in validate_surface(CumulativeVarianceSurface.from_array(v))] == ["not_monotone"]

    def test_non_finite(self):
        v = toy_surface().values.copy()
        v[0, 1] = np.nan
        assert "non_finite" in [x.code for x in validate_surface(CumulativeVarianceSurface.from_array(v))]

    def test_grid_warning_only_in_strict_mode(self):
        s = random_surface(np.random.default_rng(0), 100, 4)
        assert validate_surface(s) == []
        out = validate_surface(s, strict=True)
        assert [(x.code, x.severity) for x in out] == [("coarse_maturity_grid", "warning")]
        assert errors_only(out) == []

    def test_large_n_grid_has_no_warning(self):
        # sqrt(10000) / 1374 ~ 0.073, and the computed d is finer still
        n = 10000
        ratio = math.sqrt(n) / 1374
        assert ratio == pytest.approx(0.0728, abs=1e-4)
        assert math.sqrt(n) * MaturityGrid.uniform(default_d(n)).max_spacing < 0.5

    def test_shape_mismatch(self):
        with pytest.raises(SurfaceFormatError):
            CumulativeVarianceSurface(TimeGrid(2), MaturityGrid.uniform(2), np.zeros((2, 3)))

    def test_values_are_read_only(self):
        s = toy_surface()
        with pytest.raises(ValueError):
            s.values[0, 0] = 1.0


class TestIncrements:
    def test_scaling(self):
        v = np.zeros((101, 2))
        v[:, 1] = np.linspace(1.0, 0.0, 101)
        v[1, 1] = v[0, 1] + 0.01
        s = CumulativeVarianceSurface.from_array(v)
        assert increment(s, 1)[0] == pytest.approx(0.1)

    def test_dead_rows_are_zero(self, rng):
        s = random_surface(rng, 10, 3, uniform=False)
        for i in range(1, s.n + 1):
            if s.t[i - 1] >= s.T[-1]:
                np.testing.assert_array_equal(increment(s, i), 0.0)

    def test_matches_double_loop(self, rng):
        s = random_surface(rng, 25, 6)
        full = s.increments()
        for i in range(1, s.n + 1):
            for j in range(1, s.d + 1):
                assert full[i - 1, j - 1] == (s.values[i, j] - s.values[i - 1, j]) * math.sqrt(s.n)
            np.testing.assert_array_equal(increment(s, i), full[i - 1])

    @pytest.mark.parametrize("i", [0, 11])
    def test_out_of_range(self, i, rng):
        with pytest.raises(IndexError):
            increment(random_surface(rng, 10, 3), i)

    @given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 1000))
    def test_linearity(self, a, b, seed):
        r = np.random.default_rng(seed)
        s1, s2 = random_surface(r, 8, 3), random_surface(r, 8, 3)
        mix = CumulativeVarianceSurface.from_array(a * s1.values + b * s2.values)
        for i in (1, 4, 8):
            np.testing.assert_allclose(
                increment(mix, i), a * increment(s1, i) + b * increment(s2, i), rtol=1e-12, atol=1e-12
            )


class TestSerialization:
    def test_toy_round_trip(self, tmp_path):
        s = toy_surface()
        write_surface(s, tmp_path / "s.csv")
        assert read_surface(tmp_path / "s.csv") == s

    @given(values=arrays(np.float64, (5, 4), elements=st.floats(0, 1e3, allow_subnormal=True)))
    def test_round_trip_is_bit_exact(self, values, tmp_path_factory):
        # arbitrary finite doubles in alive cells, including tiny and subnormal ones
        path = tmp_path_factory.mktemp("rt") / "s.csv"
        s = CumulativeVarianceSurface.from_array(values)
        write_surface(s, path)
        back = read_surface(path)
        assert np.array_equal(back.values, s.values)

    def test_non_uniform_maturities_and_metadata(self, tmp_path, rng):
        s = random_surface(rng, 12, 5, uniform=False)
        write_surface(s, tmp_path / "s.csv", {"seed": 9, "note": "a=b"})
        back = read_surface(tmp_path / "s.csv")
        assert back == s
        assert back.metadata["seed"] == "9"
        assert back.metadata["note"] == "a=b"

    def test_decimal_notation(self, tmp_path):
        s = CumulativeVarianceSurface.from_array([[0.0, 1.5e-7, 2.0e-7], [0.0, 0.0, 1.0e-9], [0.0, 0.0, 0.0]])
        write_surface(s, tmp_path / "s.csv")
        body = [line for line in (tmp_path / "s.csv").read_text().splitlines() if not line.startswith("#")]
        assert body[0] == "t_index,T_index,t,T,I"
        assert all("e" not in line.lower() for line in body[1:])
        assert "0.00000015" in body[1]

    def test_missing_cell_is_listed(self, tmp_path):
        write_surface(toy_surface(), tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        kept = [line for line in lines if not line.startswith("0,2,")]
        (tmp_path / "m.csv").write_text("\n".join(kept) + "\n")
        with pytest.raises(SurfaceFormatError, match=r"\(0,2\)"):
            read_surface(tmp_path / "m.csv")

    def test_duplicate_cell(self, tmp_path):
        write_surface(toy_surface(), tmp_path / "s.csv")
        text = (tmp_path / "s.csv").read_text()
        (tmp_path / "d.csv").write_text(text + "0,1,0.0,0.5,0.5\n")
        with pytest.raises(SurfaceFormatError, match="duplicate"):
            read_surface(tmp_path / "d.csv")

    def test_malformed_row(self, tmp_path):
        write_surface(toy_surface(), tmp_path / "s.csv")
        text = (tmp_path / "s.csv").read_text()
        (tmp_path / "b.csv").write_text(text + "1,2,0.5\n")
        with pytest.raises(SurfaceFormatError):
            read_surface(tmp_path / "b.csv")

    def test_non_monotone_grid_header(self, tmp_path):
        write_surface(toy_surface(), tmp_path / "s.csv")
        text = (tmp_path / "s.csv").read_text().replace("maturities=0.0,0.5,1.0", "maturities=0.0,1.0,0.5")
        (tmp_path / "g.csv").write_text(text)
        with pytest.raises(SurfaceFormatError):
            read_surface(tmp_path / "g.csv")

    def test_nonzero_dead_cell_survives_for_validation(self, tmp_path):
        v = toy_surface().values.copy()
        v[2, 2] = 0.25
        write_surface(CumulativeVarianceSurface.from_array(v), tmp_path / "z.csv")
        back = read_surface(tmp_path / "z.csv")
        assert [x.code for x in validate_surface(back)] == ["zero_convention"]
