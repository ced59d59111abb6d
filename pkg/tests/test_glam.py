import numpy as np
import pytest
from scipy import linalg

from oracles import dense_design, random_design, unvec, vec
from samort import glam
from samort.errors import SingularSystemError


def _rel(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


@pytest.fixture
def toy():
    rng = np.random.default_rng(3)
    d = random_design(rng, m=4, n=6, l=3)
    return rng, d, dense_design(d)


def test_zero_theta_gives_zero_predictor(toy):
    _, d, _ = toy
    areas, totals = glam.linear_predictor(d, np.zeros(d.layout.total))
    assert not areas.any() and not totals.any()


def test_gamma_indicator(toy):
    _, d, _ = toy
    theta = np.zeros(d.layout.total)
    theta[d.layout.offsets[2] + 2] = 1.7
    areas, totals = glam.linear_predictor(d, theta)
    assert np.all(areas[:, 2, :] == 1.7)
    assert not np.delete(areas, 2, axis=1).any()
    assert not totals.any()


def test_predictor_matches_dense(toy):
    rng, d, X = toy
    theta = rng.normal(size=d.layout.total)
    eta = glam.predictor_array(d, theta)
    assert _rel(vec(eta), X @ theta) < 1e-10


def test_predictor_length_mismatch(toy):
    _, d, _ = toy
    with pytest.raises(ValueError):
        glam.linear_predictor(d, np.zeros(d.layout.total + 1))


def test_layout_sums_to_columns(toy):
    _, d, X = toy
    assert d.layout.total == X.shape[1]


def test_normal_matrix_zero_weights(toy):
    _, d, _ = toy
    G = glam.weighted_normal_matrix(d, np.zeros(d.obs_shape))
    assert not G.any()


def test_normal_matrix_unit_weights(toy):
    _, d, X = toy
    G = glam.weighted_normal_matrix(d, np.ones(d.obs_shape))
    assert _rel(G, X.T @ X) < 1e-10


def test_gamma_block_is_weight_sum(toy):
    rng, d, _ = toy
    W = rng.uniform(0, 3, size=d.obs_shape)
    G = glam.weighted_normal_matrix(d, W)
    s = d.layout.slices[2]
    np.testing.assert_allclose(np.diag(G[s, s]), W[:, :-1, :].sum(axis=(0, 2)), rtol=1e-12)
    off = G[s, s] - np.diag(np.diag(G[s, s]))
    assert not off.any()


def test_normal_matrix_rejects_negative(toy):
    _, d, _ = toy
    W = np.ones(d.obs_shape)
    W[0, 0, 0] = -1
    with pytest.raises(ValueError):
        glam.weighted_normal_matrix(d, W)


def test_rhs(toy):
    rng, d, X = toy
    W = rng.uniform(0, 3, size=d.obs_shape)
    z = rng.normal(size=d.obs_shape)
    r = glam.weighted_rhs(d, W, z)
    assert _rel(r, X.T @ (vec(W) * vec(z))) < 1e-10
    assert not glam.weighted_rhs(d, W, np.zeros(d.obs_shape)).any()
    np.testing.assert_allclose(
        r[d.layout.slices[2]], (W * z)[:, :-1, :].sum(axis=(0, 2)), rtol=1e-12
    )
    with pytest.raises(ValueError):
        glam.weighted_rhs(d, W, z[:, :-1, :])


def test_effective_dimension_without_penalty():
    rng = np.random.default_rng(5)
    d = random_design(rng, m=6, n=5, l=5)
    X = dense_design(d)
    assert np.linalg.matrix_rank(X) == X.shape[1]
    W = rng.uniform(0.5, 2, size=d.obs_shape)
    ed = glam.effective_dimension(d, W, np.zeros((X.shape[1],) * 2))
    assert ed == pytest.approx(X.shape[1], rel=1e-8)


def test_effective_dimension_heavy_penalty(toy):
    rng, d, X = toy
    W = rng.uniform(0.5, 2, size=d.obs_shape)
    ed = glam.effective_dimension(d, W, 1e12 * np.eye(X.shape[1]))
    assert 0 <= ed < 1e-8


def test_effective_dimension_matches_dense(toy):
    rng, d, X = toy
    W = rng.uniform(0.5, 2, size=d.obs_shape)
    P = np.diag(rng.uniform(0.1, 2, size=X.shape[1]))
    XtWX = X.T @ (vec(W)[:, None] * X)
    expected = np.trace(np.linalg.solve(XtWX + P, XtWX))
    assert glam.effective_dimension(d, W, P) == pytest.approx(expected, rel=1e-8)


def test_singular_system_raises(toy):
    _, d, X = toy
    with pytest.raises(SingularSystemError, match="singular penalized system"):
        glam.effective_dimension(d, np.zeros(d.obs_shape), np.zeros((X.shape[1],) * 2))


@pytest.mark.parametrize("seed", range(8))
def test_normal_matrix_symmetric_psd(seed):
    rng = np.random.default_rng(100 + seed)
    d = random_design(rng)
    G = glam.weighted_normal_matrix(d, rng.uniform(0, 2, size=d.obs_shape))
    scale = np.abs(G).max()
    assert np.max(np.abs(G - G.T)) <= 1e-12 * scale
    assert linalg.eigvalsh(G).min() >= -1e-8 * np.linalg.norm(G)


def test_predictor_is_linear(toy):
    rng, d, _ = toy
    t1, t2 = rng.normal(size=(2, d.layout.total))
    a, b = 1.3, -0.4
    lhs = glam.predictor_array(d, a * t1 + b * t2)
    rhs = a * glam.predictor_array(d, t1) + b * glam.predictor_array(d, t2)
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_non_spatial_design():
    rng = np.random.default_rng(9)
    d = glam.BlockDesign(rng.uniform(size=(5, 3)), rng.uniform(size=(4, 2)))
    X = dense_design(d)
    theta = rng.normal(size=d.layout.total)
    assert d.obs_shape == (5, 1, 4)
    assert _rel(vec(glam.predictor_array(d, theta)), X @ theta) < 1e-12
    W = rng.uniform(size=d.obs_shape)
    assert _rel(glam.weighted_normal_matrix(d, W), X.T @ (vec(W)[:, None] * X)) < 1e-10


def test_chunked_spatial_contraction(monkeypatch):
    rng = np.random.default_rng(12)
    d = random_design(rng, m=3, n=7, l=2)
    X = dense_design(d)
    W = rng.uniform(size=d.obs_shape)
    monkeypatch.setattr(glam, "_AREA_CHUNK", 2)
    assert _rel(glam.weighted_normal_matrix(d, W), X.T @ (vec(W)[:, None] * X)) < 1e-10
    assert unvec(vec(W), W.shape).shape == W.shape
