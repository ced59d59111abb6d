import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import cox_de_boor_recursive, row_kronecker_loop
from samort.basis import (
    BasisConfig,
    box_product,
    bspline_basis,
    build_basis_set,
    difference_matrix,
    nested_basis,
)
from samort.errors import DataError
from samort.simulate import Scenario, generate


def test_partition_of_unity_ages():
    b = bspline_basis(np.arange(91), 21, 3)
    assert b.matrix.shape == (91, 21)
    assert np.max(np.abs(b.matrix.sum(axis=1) - 1)) < 1e-12
    assert b.matrix.min() >= 0 and b.matrix.max() <= 1
    assert np.max((b.matrix > 0).sum(axis=1)) <= 4


def test_degree_zero_is_bin_indicator():
    x = np.array([0.0, 0.4, 1.0, 1.5, 2.2, 2.9, 3.0])
    b = bspline_basis(x, 3, 0)
    expected = np.eye(3)[[0, 0, 1, 1, 2, 2, 2]]
    np.testing.assert_array_equal(b.matrix, expected)


@pytest.mark.parametrize("x", [0.37, 13.2, 44.0, 89.99])
def test_against_recursive_oracle(x):
    b = bspline_basis(np.array([0.0, x, 90.0]), 21, 3)
    row = [cox_de_boor_recursive(x, b.knots, i, 3) for i in range(21)]
    np.testing.assert_allclose(b.matrix[1], row, atol=1e-14)


def test_basis_errors():
    with pytest.raises(ValueError):
        bspline_basis(np.arange(5.0), 3, 3)
    with pytest.raises(ValueError):
        bspline_basis(np.array([0.0, np.nan]), 5, 3)


def test_box_product_examples():
    np.testing.assert_array_equal(box_product([[1, 2]], [[3, 4]]), [[3, 4, 6, 8]])
    B = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_array_equal(box_product(np.ones((4, 1)), B), B)
    with pytest.raises(ValueError):
        box_product(np.ones((3, 2)), np.ones((4, 2)))


def test_box_product_loop_oracle():
    rng = np.random.default_rng(1)
    A, B = rng.normal(size=(5, 2)), rng.normal(size=(5, 3))
    np.testing.assert_allclose(box_product(A, B), row_kronecker_loop(A, B), rtol=0, atol=0)


def test_box_product_commutes_with_row_selection():
    rng = np.random.default_rng(2)
    A, B = rng.normal(size=(7, 3)), rng.normal(size=(7, 4))
    rows = [5, 0, 3]
    np.testing.assert_array_equal(box_product(A[rows], B[rows]), box_product(A, B)[rows])


def test_difference_matrix():
    np.testing.assert_array_equal(difference_matrix(4, 2).matrix, [[1, -2, 1, 0], [0, 1, -2, 1]])
    assert not (difference_matrix(6, 1).matrix @ np.ones(6)).any()
    D = difference_matrix(5, 2).matrix
    np.testing.assert_array_equal(D @ np.array([1, 4, 9, 16, 25.0]), [2, 2, 2])
    assert not (D @ np.arange(1, 6.0)).any()
    assert np.all((D != 0).sum(axis=1) == 3)
    with pytest.raises(ValueError):
        difference_matrix(2, 2)


def test_nested_space_contained():
    x = np.arange(1, 91.0)
    full = bspline_basis(x, 21, 3)
    red = nested_basis(full, x, 9)
    coef, *_ = np.linalg.lstsq(full.matrix, red.matrix, rcond=None)
    assert np.linalg.norm(full.matrix @ coef - red.matrix, axis=0).max() < 1e-8
    inner_full = full.knots[3:-3]
    inner_red = red.knots[3:-3]
    assert all(np.isclose(inner_full, k).any() for k in inner_red)
    with pytest.raises(ValueError):
        nested_basis(full, x, 8)


class _London:
    ages = np.arange(91)
    years = np.arange(2002, 2025)
    centroids = np.random.default_rng(4).uniform(0, 50_000, size=(60, 2))


def test_london_default_dimensions():
    basis = build_basis_set(_London(), BasisConfig())
    dims = basis.dims
    assert (dims["c_a"], dims["c_t"], dims["c_lon"], dims["c_lat"]) == (21, 7, 11, 11)
    assert dims["c_s"] == 121
    assert (dims["c_a_reduced"], dims["c_t_reduced"]) == (9, 5)
    assert basis.Ba.shape == (91, 22) and basis.Bt.shape == (23, 9)
    assert basis.Bt_reduced.shape == (23, 7)


def test_shock_columns_are_year_indicators():
    basis = build_basis_set(_London(), BasisConfig(shock_years=(2020, 2021)))
    shocks = basis.Bt[:, -2:]
    np.testing.assert_array_equal(shocks[:, 0], (_London.years == 2020).astype(float))
    np.testing.assert_array_equal(shocks[:, 1], (_London.years == 2021).astype(float))
    np.testing.assert_array_equal(basis.Bt_reduced[:, -2:], shocks)


def test_no_shocks_leaves_time_basis():
    basis = build_basis_set(_London(), BasisConfig(shock_years=()))
    np.testing.assert_array_equal(basis.Bt, bspline_basis(_London.years, 7, 3).matrix)


def test_unknown_shock_year():
    with pytest.raises(DataError, match="shock year 1999"):
        build_basis_set(_London(), BasisConfig(shock_years=(1999,)))


def test_infant_column():
    basis = build_basis_set(_London(), BasisConfig(shock_years=()))
    np.testing.assert_array_equal(basis.Ba[:, 0], np.eye(91)[0])
    assert not basis.Ba[0, 1:].any()
    assert not basis.Ba_reduced[0, 1:].any()
    np.testing.assert_allclose(basis.Ba.sum(axis=1), 1, atol=1e-12)


def test_spatial_basis_layout_and_unity():
    basis = build_basis_set(_London(), BasisConfig(shock_years=()))
    lon, lat = basis.spatial.lon_basis.matrix, basis.spatial.lat_basis.matrix
    j, a, b = 7, 3, 5
    assert basis.Bs[j, b * 11 + a] == lat[j, b] * lon[j, a]
    np.testing.assert_allclose(basis.Bs.sum(axis=1), 1, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=30, unique=True),
    st.integers(4, 12),
)
def test_partition_of_unity_property(points, n_basis):
    x = np.array(points)
    if np.ptp(x) < 1e-6:
        return
    b = bspline_basis(x, n_basis, 3)
    np.testing.assert_allclose(b.matrix.sum(axis=1), 1, atol=1e-10)


def test_simulated_centroids_basis():
    data, _ = generate(Scenario(n_areas=20, n_ages=5, n_years=4, seed=1))
    basis = build_basis_set(data, BasisConfig(n_age=4, n_age_reduced=4, n_time=4, n_time_reduced=4,
                                              n_lon=5, n_lat=5, shock_years=()))
    assert basis.Bs.shape == (20, 25)
