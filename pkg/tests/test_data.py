import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridaladin.data import (
    OUT_ENV,
    ResultFiles,
    generate_synthetic,
    load_scenario,
    output_root,
    read_profiles_csv,
    run_dir,
    write_scenario,
)
from gridaladin.errors import ScenarioLoadError
from gridaladin.experiments import grid_at
from gridaladin.model import HouseholdParams
from gridaladin.qpkernel import solve_centralized

# rows of one horizon step that are SoC or rate limits (not the u >= 0 sign bounds)
LIMIT_ROWS = (0, 1, 2, 5, 6)


def write_csv(tmp_path, text, name="p.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoad:
    def test_reference_defaults(self, tmp_path):
        csv = write_csv(tmp_path, "timestamp,house_1,house_2\n0,1,2\n0.5,1,2\n")
        sc = load_scenario({"profiles_csv": str(csv)})
        h = sc.households[0]
        assert (h.alpha, h.beta, h.gamma, h.capacity) == (0.99, 0.95, 0.95, 2.0)
        assert (h.u_min, h.u_max, h.sigma) == (-0.5, 0.5, 1.0)
        assert (sc.T, sc.N, sc.sigma0) == (0.5, 24, 2.4e6)
        np.testing.assert_array_equal(sc.x0, [1.0, 1.0])

    def test_single_household_constant(self, tmp_path):
        rows = "".join(f"{0.5 * j},1.0\n" for j in range(60))
        csv = write_csv(tmp_path, "timestamp,house_1\n" + rows)
        sc = load_scenario({"profiles_csv": str(csv)})
        grid = grid_at(sc, 24)
        np.testing.assert_array_equal(grid.w_bar, np.ones(24))

    def test_ragged_row_named(self, tmp_path):
        csv = write_csv(tmp_path, "timestamp,house_1,house_2\n0,1,2\n0.5,1\n")
        with pytest.raises(ScenarioLoadError, match="row 3"):
            load_scenario({"profiles_csv": str(csv)})

    @pytest.mark.parametrize("bad", ["nan", "inf", "abc"])
    def test_non_finite(self, tmp_path, bad):
        csv = write_csv(tmp_path, f"timestamp,house_1\n0,1\n0.5,{bad}\n")
        with pytest.raises(ScenarioLoadError, match="row 3"):
            load_scenario({"profiles_csv": str(csv)})

    def test_bad_header(self, tmp_path):
        csv = write_csv(tmp_path, "time,house_1\n0,1\n")
        with pytest.raises(ScenarioLoadError):
            load_scenario({"profiles_csv": str(csv)})

    def test_household_count_mismatch(self, tmp_path):
        csv = write_csv(tmp_path, "timestamp,house_1\n0,1\n")
        with pytest.raises(ScenarioLoadError, match="households"):
            load_scenario({"profiles_csv": str(csv), "households": [{}, {}]})

    def test_invalid_household_param(self, tmp_path):
        csv = write_csv(tmp_path, "timestamp,house_1\n0,1\n")
        with pytest.raises(ScenarioLoadError, match="household 1"):
            load_scenario({"profiles_csv": str(csv), "households": [{"gamma": 1.5}]})

    def test_unknown_field(self, tmp_path):
        csv = write_csv(tmp_path, "timestamp,house_1\n0,1\n")
        with pytest.raises(ScenarioLoadError, match="unknown"):
            load_scenario({"profiles_csv": str(csv), "households": [{"colour": 1}]})

    def test_too_short(self, tmp_path):
        csv = write_csv(tmp_path, "timestamp,house_1\n0,1\n0.5,1\n")
        with pytest.raises(ScenarioLoadError, match="shorter"):
            load_scenario({"profiles_csv": str(csv)}, min_length=48)

    def test_missing_source(self):
        with pytest.raises(ScenarioLoadError):
            load_scenario({})

    def test_csv_path_relative_to_config(self, tmp_path):
        write_csv(tmp_path, "timestamp,house_1\n0,1\n")
        (tmp_path / "c.json").write_text(json.dumps({"profiles_csv": "p.csv"}))
        assert load_scenario(tmp_path / "c.json").I == 1

    def test_synthetic_block(self):
        sc = load_scenario({"synthetic": {"I": 3, "days": 1}, "seed": 5})
        ref = generate_synthetic(3, days=1, seed=5)
        np.testing.assert_array_equal(sc.series, ref.series)


class TestSynthetic:
    def test_same_seed_identical(self):
        a, b = generate_synthetic(5, seed=9), generate_synthetic(5, seed=9)
        assert np.array_equal(a.series, b.series) and np.array_equal(a.x0, b.x0)
        assert not np.array_equal(a.series, generate_synthetic(5, seed=10).series)

    def test_pure_sinusoid(self):
        sc = generate_synthetic(3, days=2, seed=1, noise=0.0, pv_peak=(0.0, 0.0))
        hours = np.arange(sc.length) * sc.T
        for w in sc.series:
            # a + b cos(wt) + c sin(wt) fits exactly
            X = np.column_stack([np.ones_like(hours), np.cos(2 * np.pi * hours / 24), np.sin(2 * np.pi * hours / 24)])
            coef, *_ = np.linalg.lstsq(X, w, rcond=None)
            np.testing.assert_allclose(X @ coef, w, atol=1e-12)

    def test_shape_and_length(self):
        sc = generate_synthetic(4, days=3, seed=0)
        assert sc.series.shape == (4, 144) and sc.I == 4

    def test_needs_household(self):
        with pytest.raises(ValueError):
            generate_synthetic(0)

    @pytest.mark.parametrize("seed", range(3))
    def test_census_active_limits(self, seed):
        sc = generate_synthetic(20, seed=seed)
        grid = grid_at(sc, sc.N)
        sol = solve_centralized(grid)
        hit = 0
        for loc, u in zip(grid.locals, sol.u):
            slack = loc.D @ u - loc.d
            rows = np.arange(slack.size) % 8
            hit += bool(np.any((np.abs(slack) <= 1e-8) & np.isin(rows, LIMIT_ROWS)))
        assert hit >= 0.5 * grid.I


class TestRoundTrip:
    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 6), st.sampled_from([1.0, 2.5]))
    def test_generated(self, seed, I, days):
        import tempfile

        sc = generate_synthetic(I, days=days, seed=seed, soc_range=(0.2, 0.8))
        with tempfile.TemporaryDirectory() as d:
            back = load_scenario(write_scenario(sc, d))
        assert np.array_equal(back.series, sc.series)
        assert np.array_equal(back.x0, sc.x0)
        assert back.households == sc.households
        assert (back.T, back.N, back.sigma0, back.seed) == (sc.T, sc.N, sc.sigma0, sc.seed)

    def test_custom_households(self, tmp_path):
        hh = [HouseholdParams(capacity=3.0), HouseholdParams(gamma=0.8)]
        sc = generate_synthetic(2, days=1, seed=0)
        sc.households = hh
        back = load_scenario(write_scenario(sc, tmp_path))
        assert back.households == hh

    def test_read_profiles(self):
        t, s = read_profiles_csv("timestamp,house_1,house_2\n0,1,2\n0.5,3,4\n")
        np.testing.assert_array_equal(t, [0, 0.5])
        np.testing.assert_array_equal(s, [[1, 3], [2, 4]])


class TestOutput:
    def test_env_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUT_ENV, str(tmp_path))
        assert output_root() == tmp_path
        assert run_dir("x").parent == tmp_path

    def test_layout(self, tmp_path):
        files = ResultFiles(tmp_path)
        names = [p.name for p in (files.history, files.ledger, files.mpc_log, files.summary)]
        assert names == ["history.csv", "ledger.csv", "mpc_log.csv", "summary.json"]
