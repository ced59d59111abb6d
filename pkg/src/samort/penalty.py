"""Block-diagonal difference/ridge penalty for the three coefficient blocks."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import sparse

from .basis import BasisSet, difference_matrix

# ridge on infant and shock coefficients, which carry no difference penalty
FREE_RIDGE = 1e-6

LAMBDA_NAMES = (
    "lambda_a", "lambda_t", "lambda_lon", "lambda_lat",
    "lambda_a_reduced", "lambda_t_reduced", "kappa",
)


@dataclass(frozen=True)
class PenaltyConfig:
    lambda_a: float = 1.0
    lambda_t: float = 1.0
    lambda_lon: float = 1.0
    lambda_lat: float = 1.0
    lambda_a_reduced: float = 1.0
    lambda_t_reduced: float = 0.0
    kappa: float = 1.0

    def __post_init__(self):
        for name in LAMBDA_NAMES:
            value = float(getattr(self, name))
            object.__setattr__(self, name, value)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {value}")
        if self.kappa <= 0:
            raise ValueError("kappa must be strictly positive")

    def as_dict(self):
        return asdict(self)


def _padded_gram(D, n_before, n_after):
    """``D'D`` embedded in a larger index range with unpenalized columns."""
    rows = D.shape[0]
    full = np.hstack([np.zeros((rows, n_before)), D, np.zeros((rows, n_after))])
    return sparse.csr_matrix(full.T @ full)


def _eye(k):
    return sparse.identity(k, format="csr")


def _kron(*mats):
    out = mats[0]
    for m in mats[1:]:
        out = sparse.kron(out, m, format="csr")
    return out


def _free_mask(n_slow, n_fast, slow_free, fast_free):
    mask = np.zeros((n_slow, n_fast), dtype=bool)
    mask[slow_free, :] = True
    mask[:, fast_free] = True
    return mask


def block1_penalty(config: PenaltyConfig, basis: BasisSet):
    inf, sh, o = basis.n_infant, basis.n_shock, basis.order
    ca, ct = basis.age.n_basis, basis.time.n_basis
    pa, pt = inf + ca, ct + sh
    Pa = _padded_gram(difference_matrix(ca, o).matrix, inf, 0)
    Pt = _padded_gram(difference_matrix(ct, o).matrix, 0, sh)
    P = config.lambda_a * _kron(_eye(pt), Pa) + config.lambda_t * _kron(Pt, _eye(pa))
    free = _free_mask(pt, pa, slice(ct, None), slice(0, inf)).ravel()
    return P + sparse.diags(FREE_RIDGE * free.astype(float))


def block2_penalty(config: PenaltyConfig, basis: BasisSet):
    inf, sh, o = basis.n_infant, basis.n_shock, basis.order
    ca, ct = basis.age_reduced.n_basis, basis.time_reduced.n_basis
    clon = basis.spatial.lon_basis.n_basis
    clat = basis.spatial.lat_basis.n_basis
    pb, pu = inf + ca, ct + sh
    Pa = _padded_gram(difference_matrix(ca, o).matrix, inf, 0)
    Pt = _padded_gram(difference_matrix(ct, o).matrix, 0, sh)
    Plon = _padded_gram(difference_matrix(clon, o).matrix, 0, 0)
    Plat = _padded_gram(difference_matrix(clat, o).matrix, 0, 0)
    Iu, Ilat, Ilon, Ib = _eye(pu), _eye(clat), _eye(clon), _eye(pb)
    P = (
        config.lambda_lon * _kron(Iu, Ilat, Plon, Ib)
        + config.lambda_lat * _kron(Iu, Plat, Ilon, Ib)
        + config.lambda_a_reduced * _kron(Iu, Ilat, Ilon, Pa)
        + config.lambda_t_reduced * _kron(Pt, Ilat, Ilon, Ib)
    )
    free = _free_mask(pu, pb, slice(ct, None), slice(0, inf))
    free = np.broadcast_to(free[:, None, :], (pu, clat * clon, pb)).ravel()
    return P + sparse.diags(FREE_RIDGE * free.astype(float))


def assemble_penalty(config: PenaltyConfig, basis: BasisSet, spatial=True):
    """Sparse symmetric penalty ``diag(P1, P2, kappa * I_n)`` in CSR form.

    With ``spatial=False`` only the common age-time block is returned, for
    the model fitted to the totals alone.
    """
    blocks = [block1_penalty(config, basis)]
    if spatial:
        blocks.append(block2_penalty(config, basis))
        blocks.append(config.kappa * _eye(basis.Bs.shape[0]))
    return sparse.block_diag(blocks, format="csr")


def add_penalty(A: np.ndarray, P) -> np.ndarray:
    """Add a sparse penalty to a dense matrix in place."""
    if A.shape != P.shape:
        raise ValueError(f"penalty shape {P.shape} does not match system {A.shape}")
    coo = sparse.coo_matrix(P)
    coo.sum_duplicates()
    A[coo.row, coo.col] += coo.data
    return A
