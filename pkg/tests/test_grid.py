import numpy as np
import pytest

from aggcox.errors import ConfigError
from aggcox.grid import build_grid


def test_build_grid_cell_area():
    g = build_grid((0, 0, 1, 1), 2, 2, times=[0])
    assert g.n_cells == 4
    assert g.cell_area == pytest.approx(0.25)


def test_build_grid_rectangular():
    g = build_grid((0, 0, 10, 5), 10, 5)
    assert g.dx == pytest.approx(1.0)
    assert g.dy == pytest.approx(1.0)


def test_time_gaps():
    g = build_grid((0, 0, 1, 1), 2, 2, times=[0, 1, 3])
    assert np.allclose(g.time_gaps, [1, 2])


def test_degenerate_bbox_rejected():
    with pytest.raises(ConfigError):
        build_grid((0, 0, 0, 1), 2, 2)


def test_nonmonotone_times_rejected():
    with pytest.raises(ConfigError):
        build_grid((0, 0, 1, 1), 2, 2, times=[0, 2, 1])


def test_cell_indexing_row_major():
    g = build_grid((0, 0, 4, 2), 4, 2)
    # cell 5 is ix=1, iy=1
    assert g.cell_bounds(5) == pytest.approx((1.0, 1.0, 2.0, 2.0))
    c = g.centroids()
    assert c[0] == pytest.approx([0.5, 0.5])
    assert c[5] == pytest.approx([1.5, 1.5])
