import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from markov_mimic.errors import GridAlignmentError
from markov_mimic.paths import CadlagPath, TimeGrid, diff, shift, stop


def floor_path():
    """x(s) = floor(2s) on [0, 2] sampled at dt = 0.5: a unit jump at every step."""
    grid = TimeGrid(0.5, 4)
    return CadlagPath(grid, [0, 1, 2, 3, 4], [1, 2, 3, 4], [[1], [1], [1], [1]])


class TestTimeGrid:
    def test_times_uniform_from_zero(self):
        g = TimeGrid(0.25, 4)
        assert g.t0 == 0.0
        assert np.array_equal(g.times, [0, 0.25, 0.5, 0.75, 1.0])
        assert g.horizon == 1.0

    def test_from_horizon(self):
        assert TimeGrid.from_horizon(1.0, 2**-8).n_steps == 256
        with pytest.raises(GridAlignmentError):
            TimeGrid.from_horizon(1.0, 0.3)

    def test_index_of(self):
        g = TimeGrid(0.1, 10)
        assert g.index_of(0.3) == 3
        with pytest.raises(GridAlignmentError):
            g.index_of(0.35)
        with pytest.raises(GridAlignmentError):
            g.index_of(1.5)
        assert g.index_of(1.5, allow_beyond=True) == 15

    def test_single_point_grid(self):
        assert TimeGrid(0.5, 0).horizon == 0.0

    @pytest.mark.parametrize("dt,n", [(0.0, 3), (-1.0, 3), (0.1, -1), (0.1, 2.5)])
    def test_rejects_bad_grid(self, dt, n):
        with pytest.raises(ValueError):
            TimeGrid(dt, n)


class TestCadlagPath:
    def test_rejects_wrong_length(self):
        with pytest.raises(ValueError):
            CadlagPath(TimeGrid(1.0, 3), [0, 1])

    def test_rejects_zero_jump(self):
        with pytest.raises(ValueError):
            CadlagPath(TimeGrid(1.0, 2), [0, 0, 0], [1], [[0.0]])

    def test_rejects_jump_at_origin(self):
        with pytest.raises(ValueError):
            CadlagPath(TimeGrid(1.0, 2), [1, 1, 1], [0], [[1.0]])

    def test_immutable(self):
        x = floor_path()
        with pytest.raises(AttributeError):
            x.values = None
        with pytest.raises(ValueError):
            x.values[0, 0] = 3.0

    def test_right_continuous_evaluation(self):
        x = floor_path()
        assert x(0.5)[0] == 1.0
        assert x(0.74)[0] == 1.0
        assert x(2.0)[0] == 4.0


class TestShift:
    def test_constant(self):
        x = CadlagPath.constant(TimeGrid(0.1, 10), 5.0)
        y = shift(x, 0.4)
        assert y == CadlagPath.constant(TimeGrid(0.1, 6), 5.0)

    def test_jump_at_boundary_absorbed(self):
        grid = TimeGrid(0.25, 4)
        x = CadlagPath(grid, [0, 0, 1, 1, 1], [2], [[1.0]])
        y = shift(x, 0.5)
        assert y.values[0, 0] == x(0.5)[0]
        assert len(y.jump_index) == 0

    def test_floor_path(self):
        y = shift(floor_path(), 1.0)
        assert y.values[:, 0].tolist() == [2, 3, 4]
        assert y.jump_index.tolist() == [1, 2]

    def test_off_grid(self):
        with pytest.raises(GridAlignmentError):
            shift(floor_path(), 0.3)


class TestStop:
    def test_at_zero_is_constant(self):
        x = floor_path()
        assert stop(x, 0.0) == CadlagPath.constant(x.grid, x.values[0])

    def test_beyond_horizon_unchanged(self):
        x = floor_path()
        assert stop(x, 2.0) == x
        assert stop(x, 5.0) == x

    def test_floor_path(self):
        y = stop(floor_path(), 1.0)
        assert y.values[:, 0].tolist() == [0, 1, 2, 2, 2]
        assert y.jump_index.tolist() == [1, 2]

    def test_off_grid(self):
        with pytest.raises(GridAlignmentError):
            stop(floor_path(), 0.7)


class TestDiff:
    def test_at_zero(self):
        grid = TimeGrid(0.5, 2)
        x = CadlagPath(grid, [3.0, 4.0, 2.0], [1], [[1.0]])
        y = diff(x, 0.0)
        assert np.array_equal(y.values, x.values - 3.0)

    def test_constant_gives_zero(self):
        x = CadlagPath.constant(TimeGrid(0.1, 5), [1.5, -2.0])
        assert np.all(diff(x, 0.2).values == 0.0)

    def test_floor_path(self):
        y = diff(floor_path(), 0.5)
        assert y.values[:, 0].tolist() == [0, 1, 2, 3]


@st.composite
def grid_paths(draw):
    n = draw(st.integers(1, 12))
    m = draw(st.integers(1, 2))
    incr = draw(st.lists(st.lists(st.integers(-8, 8), min_size=m, max_size=m), min_size=n, max_size=n))
    flags = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    incr = np.array(incr, dtype=float) / 4.0
    values = np.vstack([np.zeros((1, m)), np.cumsum(incr, axis=0)])
    jumps = [i + 1 for i in range(n) if flags[i] and np.any(incr[i] != 0)]
    return CadlagPath(TimeGrid(0.125, n), values, jumps, incr[np.array(jumps, dtype=int) - 1] if jumps else None)


class TestOperatorProperties:
    @settings(max_examples=200, deadline=None)
    @given(grid_paths(), st.data())
    def test_stop_composes(self, x, data):
        k = data.draw(st.integers(0, x.n_steps))
        j = data.draw(st.integers(0, k))
        t, s = k * x.grid.dt, j * x.grid.dt
        assert stop(stop(x, t), s) == stop(x, s)

    @settings(max_examples=200, deadline=None)
    @given(grid_paths(), st.data())
    def test_diff_starts_at_zero(self, x, data):
        k = data.draw(st.integers(0, x.n_steps))
        assert np.all(diff(x, k * x.grid.dt).values[0] == 0.0)

    @settings(max_examples=200, deadline=None)
    @given(grid_paths(), st.data())
    def test_shift_is_diff_plus_value(self, x, data):
        k = data.draw(st.integers(0, x.n_steps))
        t = k * x.grid.dt
        assert np.array_equal(shift(x, t).values, diff(x, t).values + x.values[k])
