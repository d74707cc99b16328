from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmpstomo.correlations import (
    CorrTensor,
    Grid1D,
    ShotEnsemble,
    epsilon_metric,
    estimate_correlator,
    raw_phase_average,
    read_corr,
    read_shots,
    write_corr,
    write_shots,
)
from cmpstomo.errors import DimensionMismatch, FormatError, OddOrderUnavailable, SimplexViolation, ValidationError
from cmpstomo.simplex import gap_classes, simplex_indices, simplex_rank, simplex_size


class TestSimplex:
    @pytest.mark.parametrize("count,order", [(1, 2), (5, 2), (6, 4), (4, 6)])
    def test_enumeration_matches_itertools(self, count, order):
        expected = list(itertools.combinations_with_replacement(range(count), order))
        got = simplex_indices(count, order)
        assert len(got) == simplex_size(count, order)
        assert [tuple(r) for r in got] == expected

    @given(st.integers(1, 9), st.integers(1, 5))
    @settings(max_examples=40, deadline=None)
    def test_rank_inverts_enumeration(self, count, order):
        idx = simplex_indices(count, order)
        assert np.array_equal(simplex_rank(idx, count), np.arange(len(idx)))

    def test_gap_classes(self):
        gc = gap_classes(6, 4)
        full = simplex_indices(6, 4)
        assert np.array_equal(gc.gaps[gc.class_of], np.diff(full, axis=1))
        assert gc.multiplicity.sum() == len(full)
        assert np.array_equal(np.bincount(gc.class_of), gc.multiplicity)


def const_shots(values, count=5):
    return ShotEnsemble(Grid1D(0, 1, count), np.asarray(values, dtype=float))


class TestEstimator:
    def test_zero_phase(self):
        t = estimate_correlator(const_shots(np.zeros((3, 5))), 4)
        assert np.all(t.values == 1.0)

    def test_single_constant_shot(self):
        t = estimate_correlator(const_shots(np.full((1, 5), 0.83)), 2)
        assert np.all(t.values == 1.0)
        assert t.std_err is None and t.shot_count == 1

    def test_sign_convention(self):
        theta = np.array([[0.0, 0.3, 1.1]])
        t = estimate_correlator(ShotEnsemble(Grid1D(0, 1, 3), theta), 4)
        idx = t.indices()
        row = int(np.flatnonzero((idx == [0, 1, 1, 2]).all(axis=1))[0])
        assert t.values[row] == pytest.approx(np.cos(0.0 - 0.3 + 0.3 - 1.1))

    def test_uniform_phases_decorrelate(self):
        rng = np.random.default_rng(0)
        shots = ShotEnsemble(Grid1D(0, 1, 4), rng.uniform(0, 2 * np.pi, (10_000, 4)))
        t = estimate_correlator(shots, 2)
        off = np.diff(t.indices(), axis=1)[:, 0] > 0
        assert np.abs(t.values[off]).max() < 0.05

    def test_std_err(self):
        rng = np.random.default_rng(1)
        theta = rng.normal(size=(50, 3))
        t = estimate_correlator(ShotEnsemble(Grid1D(0, 1, 3), theta), 2)
        c = np.cos(theta[:, 0] - theta[:, 2])
        k = int(np.flatnonzero((t.indices() == [0, 2]).all(axis=1))[0])
        assert t.std_err[k] == pytest.approx(c.std(ddof=1) / np.sqrt(50))

    @pytest.mark.parametrize("order", [1, 3, 5])
    def test_odd_orders_refused(self, order):
        with pytest.raises(OddOrderUnavailable):
            estimate_correlator(const_shots(np.zeros((2, 5))), order)

    def test_max_order(self):
        with pytest.raises(ValidationError):
            estimate_correlator(const_shots(np.zeros((2, 5))), 8)

    def test_raw_average_allows_odd(self):
        shots = const_shots(np.zeros((2, 5)))
        assert raw_phase_average(shots, [0, 1, 2]) == pytest.approx(1.0)


class TestMetric:
    def test_hand_computed(self):
        g = Grid1D(0, 1, 2)
        d = epsilon_metric(CorrTensor(2, g, [1.0, 0.9, 0.8]), CorrTensor(2, g, [1.0, 1.0, 1.0]))
        assert d.mean == pytest.approx(0.1, abs=1e-15) and d.max == pytest.approx(0.2, abs=1e-15)
        assert d.excluded == 0

    def test_identical(self):
        g = Grid1D(0, 1, 2)
        t = CorrTensor(2, g, [0.3, -0.2, 0.5])
        assert epsilon_metric(t, t) == (0.0, 0.0, 0)

    def test_floor_exclusion(self):
        g = Grid1D(0, 1, 2)
        d = epsilon_metric(CorrTensor(2, g, [1.0, 0.5, 0.8]), CorrTensor(2, g, [1.0, 0.0, 1.0]))
        assert d.excluded == 1 and d.mean == pytest.approx(0.1)

    def test_all_excluded(self):
        g = Grid1D(0, 1, 2)
        with pytest.raises(ValidationError):
            epsilon_metric(CorrTensor(2, g, [1.0, 1, 1]), CorrTensor(2, g, [0.0, 0, 0]))

    def test_mismatch(self):
        with pytest.raises(DimensionMismatch):
            epsilon_metric(CorrTensor(2, Grid1D(0, 1, 2), [1, 1, 1]), CorrTensor(2, Grid1D(0, 2, 2), [1, 1, 1]))

    @given(st.lists(st.floats(-1, 1), min_size=6, max_size=6), st.lists(st.floats(0.1, 1), min_size=6, max_size=6))
    @settings(max_examples=50, deadline=None)
    def test_properties(self, a, b):
        g = Grid1D(0, 1, 3)
        d = epsilon_metric(CorrTensor(2, g, a), CorrTensor(2, g, b))
        assert 0 <= d.mean <= d.max


class TestFiles:
    def test_corr_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        g = Grid1D(0.5, 0.25, 6)
        n = simplex_size(6, 4)
        t = CorrTensor(4, g, rng.normal(size=n), shot_count=150, std_err=rng.uniform(0, 0.1, n))
        write_corr(t, tmp_path / "c.csv")
        back = read_corr(tmp_path / "c.csv")
        assert back.grid == g and back.shot_count == 150
        assert np.array_equal(back.values, t.values) and np.array_equal(back.std_err, t.std_err)

    def test_descending_row(self, tmp_path):
        g = Grid1D(0, 1, 2)
        write_corr(CorrTensor(2, g, [1, 0.5, 1]), tmp_path / "c.csv")
        lines = (tmp_path / "c.csv").read_text().splitlines()
        lines[2] = "1,0,0.5"
        (tmp_path / "c.csv").write_text("\n".join(lines))
        with pytest.raises(SimplexViolation):
            read_corr(tmp_path / "c.csv")

    def test_nan_rejected(self, tmp_path):
        (tmp_path / "c.csv").write_text("# order=2 grid_start=0 grid_step=1 grid_count=1 shots=none\n0,0,nan\n")
        with pytest.raises(FormatError):
            read_corr(tmp_path / "c.csv")

    def test_bad_header(self, tmp_path):
        (tmp_path / "c.csv").write_text("# order=2 grid_start=0\n0,0,1\n")
        with pytest.raises(FormatError):
            read_corr(tmp_path / "c.csv")

    def test_150_shot_file(self, tmp_path):
        rng = np.random.default_rng(3)
        ens = ShotEnsemble(Grid1D(0, 1, 20), rng.normal(size=(150, 20)))
        write_shots(ens, tmp_path / "s.csv")
        back = read_shots(tmp_path / "s.csv")
        assert back.shots.shape == (150, 20)
        assert np.array_equal(back.shots, ens.shots)

    def test_grid_parse(self):
        g = Grid1D.parse("0:0.1:30")
        assert (g.start, g.step, g.count) == (0.0, 0.1, 30)
        assert Grid1D.parse(str(g)) == g
        with pytest.raises(ValidationError):
            Grid1D.parse("0:0.1")
