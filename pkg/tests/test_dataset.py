import numpy as np
import pytest

from tmcf.dataset import (
    FlowSet,
    TmSeries,
    extract_flows,
    denormalize,
    fit_scale_params,
    load_tm_series,
    make_windows,
    normalize,
    reassemble,
    split,
    write_canonical_csv,
)
from tmcf.errors import ParseError, ValidationError


def _tiny_canonical(tmp_path, rows):
    path = tmp_path / "trace.csv"
    m = len(rows[0]) - 1
    header = "t," + ",".join(f"f{i}" for i in range(m))
    lines = [header] + [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


class TestCanonicalIngest:
    def test_fixture_round_trip(self, tmp_path):
        # N=2, T=3 fixture
        rows = [
            [0, 1.0, 2.0, 3.0, 4.0],
            [300, 5.0, 6.0, 7.0, 8.0],
            [600, 9.0, 10.0, 11.0, 12.0],
        ]
        tm = load_tm_series(_tiny_canonical(tmp_path, rows))
        assert tm.n_nodes == 2
        assert tm.n_steps == 3
        assert tm.n_flows == 4
        assert tm.interval_seconds == 300  # inferred from the t column
        assert np.array_equal(tm.values[0], [[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(tm.values[2], [[9.0, 10.0], [11.0, 12.0]])

    def test_ingestion_is_deterministic(self, tmp_path):
        rows = [[0, 1.25e6, 2.5, 0.0, 7e-3], [300, 4, 5, 6, 7]]
        path = _tiny_canonical(tmp_path, rows)
        a = load_tm_series(path)
        b = load_tm_series(path)
        assert np.array_equal(a.values, b.values)
        out1 = tmp_path / "echo1.csv"
        out2 = tmp_path / "echo2.csv"
        write_canonical_csv(a, str(out1))
        write_canonical_csv(b, str(out2))
        assert out1.read_bytes() == out2.read_bytes()

    def test_write_then_load_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        tm = TmSeries(3, 300, rng.random((7, 3, 3)) * 1e6)
        path = tmp_path / "echo.csv"
        write_canonical_csv(tm, str(path))
        back = load_tm_series(str(path))
        assert np.array_equal(back.values, tm.values)

    def test_malformed_row_reports_line(self, tmp_path):
        rows = [[0, 1, 2, 3, 4], [300, 1, "oops", 3, 4]]
        with pytest.raises(ParseError, match="line 3"):
            load_tm_series(_tiny_canonical(tmp_path, rows))

    def test_negative_value_rejected(self, tmp_path):
        rows = [[0, 1, 2, 3, 4], [300, 1, -2, 3, 4]]
        with pytest.raises(ValidationError, match="negative"):
            load_tm_series(_tiny_canonical(tmp_path, rows))

    def test_inconsistent_width_rejected(self, tmp_path):
        path = tmp_path / "trace.csv"
        path.write_text("t,f0,f1,f2,f3\n0,1,2,3,4\n300,1,2,3\n")
        with pytest.raises(ParseError, match="line 3"):
            load_tm_series(str(path))

    def test_missing_cell_policy(self, tmp_path):
        path = tmp_path / "trace.csv"
        path.write_text("t,f0,f1,f2,f3\n0,1,,3,4\n")
        with pytest.raises(ParseError):
            load_tm_series(str(path))
        tm = load_tm_series(str(path), missing="zero")
        assert tm.values[0, 0, 1] == 0.0

    def test_non_square_flow_count_rejected(self, tmp_path):
        path = tmp_path / "trace.csv"
        path.write_text("t,f0,f1,f2\n0,1,2,3\n")
        with pytest.raises(ValidationError, match="perfect square"):
            load_tm_series(str(path))


class TestArchiveAdapters:
    def test_abilene_directory(self, tmp_path):
        # whitespace matrix rows with 720 columns; only the first 144 are kept
        rng = np.random.default_rng(0)
        adir = tmp_path / "abilene"
        adir.mkdir()
        expected = []
        for fname in ("X01", "X02"):
            block = rng.random((3, 720)) * 1e4
            np.savetxt(adir / fname, block)
            expected.append(np.loadtxt(adir / fname)[:, :144])
        tm = load_tm_series(str(adir), format="abilene")
        assert tm.n_nodes == 12
        assert tm.interval_seconds == 300
        assert tm.n_steps == 6
        assert tm.n_flows == 144
        assert np.array_equal(tm.values.reshape(6, 144), np.concatenate(expected))

    def test_geant_flat_csv(self, tmp_path):
        rng = np.random.default_rng(1)
        block = rng.random((4, 529)) * 1e3
        path = tmp_path / "geant-flat.csv"
        lines = [
            "2005-01-01-00-%02d," % (15 * i) + ",".join(repr(v) for v in row)
            for i, row in enumerate(block)
        ]
        path.write_text("\n".join(lines) + "\n")
        tm = load_tm_series(str(path), format="geant")
        assert tm.n_nodes == 23
        assert tm.interval_seconds == 900
        assert tm.n_steps == 4
        assert np.allclose(tm.values.reshape(4, 529), block)


class TestFlows:
    def test_extract_definition_n2(self):
        values = np.array([[[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0], [7.0, 8.0]]])
        flows = extract_flows(TmSeries(2, 300, values))
        assert np.array_equal(flows.values, [[1, 5], [2, 6], [3, 7], [4, 8]])
        assert flows.pair_of(1) == (0, 1)
        assert flows.flow_of(1, 0) == 2

    def test_round_trip_exact(self):
        rng = np.random.default_rng(7)
        tm = TmSeries(5, 300, rng.random((40, 5, 5)) * 1e7)
        back = reassemble(extract_flows(tm))
        assert np.array_equal(back.values, tm.values)

    def test_abilene_flow_count(self):
        tm = TmSeries(12, 300, np.zeros((25, 12, 12)))
        assert extract_flows(tm).n_flows == 144


class TestNormalize:
    def test_basic_example(self):
        flows = FlowSet(1, 300, np.array([[0.0, 5.0, 10.0]]))
        params = fit_scale_params(flows)
        out = normalize(flows, params)
        assert np.array_equal(out.values, [[0.0, 0.5, 1.0]])

    def test_constant_flow_maps_to_zero(self):
        flows = FlowSet(1, 300, np.array([[7.0, 7.0, 7.0]]))
        params = fit_scale_params(flows)
        out = normalize(flows, params)
        assert np.array_equal(out.values, [[0.0, 0.0, 0.0]])
        restored = denormalize(out, params)
        assert np.array_equal(restored.values, [[7.0, 7.0, 7.0]])

    def test_round_trip_identity(self):
        rng = np.random.default_rng(11)
        flows = FlowSet(3, 300, rng.random((9, 50)) * 1e6)
        params = fit_scale_params(flows, (0, 40))
        back = denormalize(normalize(flows, params), params)
        assert np.allclose(back.values, flows.values, rtol=1e-12)

    def test_training_stats_only_no_clipping(self):
        # test-region values above the training max stay above 1
        flows = FlowSet(1, 300, np.array([[0.0, 1.0, 2.0, 8.0]]))
        params = fit_scale_params(flows, (0, 3))
        out = normalize(flows, params)
        assert out.values[0, 3] == pytest.approx(4.0)

    def test_param_mismatch_rejected(self):
        flows = FlowSet(2, 300, np.zeros((4, 5)))
        params = fit_scale_params(FlowSet(1, 300, np.zeros((1, 5))))
        with pytest.raises(ValidationError):
            normalize(flows, params)


class TestSplit:
    def test_stated_fractions_T100(self):
        # floor(0.8*100)=80 block; floor(0.1*80)=8 validation tail
        r = split(100, 0.8, 0.1)
        assert r.train == (0, 72)
        assert r.val == (72, 80)
        assert r.test == (80, 100)

    def test_no_test_window_is_error(self):
        with pytest.raises(ValidationError):
            split(10, 0.8, 0.1, window_length=10)

    def test_T1000_test_size(self):
        r = split(1000, 0.8, 0.1)
        assert r.test[1] - r.test[0] == 200

    def test_ranges_are_contiguous_and_ordered(self):
        for t in (53, 100, 997, 2048):
            r = split(t, 0.8, 0.1)
            assert r.train[0] == 0
            assert r.train[1] == r.val[0]
            assert r.val[1] == r.test[0]
            assert r.test[1] == t


class TestWindows:
    def test_definition(self):
        ds = make_windows(np.array([1.0, 2.0, 3.0, 4.0, 5.0]), 3)
        assert np.array_equal(ds.inputs[:, :, 0], [[1, 2], [2, 3], [3, 4]])
        assert np.array_equal(ds.targets[:, 0], [3, 4, 5])

    def test_exact_length_gives_one_sample(self):
        ds = make_windows(np.arange(4.0), 4)
        assert ds.n_samples == 1

    def test_too_short_raises(self):
        with pytest.raises(ValidationError):
            make_windows(np.arange(3.0), 4)

    def test_sample_count_formula_by_enumeration(self):
        # train region of an Abilene-scale split, L=11
        series = np.arange(500.0)[:, None]
        ds = make_windows(series, 11)
        count = 0
        s = 0
        while s + 11 <= series.shape[0]:
            count += 1
            s += 1
        assert ds.n_samples == count == 500 - 10

    def test_windows_never_straddle_split_boundaries(self):
        t = 200
        series = np.arange(float(t))[:, None]
        r = split(t, 0.8, 0.1, window_length=11)
        train = make_windows(series[r.train[0] : r.train[1]], 11)
        test = make_windows(series[r.test[0] : r.test[1]], 11)
        # the series value IS the observation index here
        assert train.inputs.max() < r.train[1]
        assert test.inputs.min() >= r.test[0]
        assert train.targets.max() < test.inputs.min()
