"""Array kernels for the three-block model matrix.

Observations live in arrays of shape ``(m, n + 1, l)``: ages, areas plus one
trailing slot holding the all-area totals, years.  Vectorisation is
column-major (age fastest, then area, then year), so the model matrix is::

    [ Bt (x) 1_{n+1} (x) Ba  |  Bt_r (x) Bs0 (x) Ba_r  |  1_l (x) I0 (x) 1_m ]

where ``Bs0`` and ``I0`` carry a zero row for the totals slot.  Coefficient
blocks are ordered ``(t, a)``, ``(u, s, b)`` and ``(j,)`` with the last
index fastest.  None of the Kronecker products is ever formed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import SingularSystemError

# rows of the spatial row-tensor processed per chunk in the (2, 2) block
_AREA_CHUNK = 512


@dataclass(frozen=True)
class CoefficientLayout:
    sizes: tuple

    @property
    def total(self):
        return sum(self.sizes)

    @property
    def offsets(self):
        return tuple(int(v) for v in np.concatenate([[0], np.cumsum(self.sizes)[:-1]]))

    @property
    def slices(self):
        return tuple(slice(o, o + s) for o, s in zip(self.offsets, self.sizes))

    def split(self, theta):
        return tuple(theta[s] for s in self.slices)


@dataclass(frozen=True)
class BlockDesign:
    Ba: np.ndarray
    Bt: np.ndarray
    Ba_r: np.ndarray | None = None
    Bt_r: np.ndarray | None = None
    Bs: np.ndarray | None = None
    layout: CoefficientLayout = field(init=False)

    def __post_init__(self):
        p1 = self.Ba.shape[1] * self.Bt.shape[1]
        if self.spatial:
            p2 = self.Bt_r.shape[1] * self.Bs.shape[1] * self.Ba_r.shape[1]
            p3 = self.Bs.shape[0]
        else:
            p2 = p3 = 0
        object.__setattr__(self, "layout", CoefficientLayout((p1, p2, p3)))

    @classmethod
    def from_basis(cls, basis, spatial=True):
        if not spatial:
            return cls(basis.Ba, basis.Bt)
        return cls(basis.Ba, basis.Bt, basis.Ba_reduced, basis.Bt_reduced, basis.Bs)

    @property
    def spatial(self):
        return self.Bs is not None

    @property
    def n_areas(self):
        return self.Bs.shape[0] if self.spatial else 0

    @property
    def obs_shape(self):
        return (self.Ba.shape[0], self.n_areas + 1, self.Bt.shape[0])

    def reshape_blocks(self, theta):
        t1, t2, t3 = self.layout.split(np.asarray(theta, dtype=float))
        T1 = t1.reshape(self.Bt.shape[1], self.Ba.shape[1])
        if not self.spatial:
            return T1, None, None
        T2 = t2.reshape(self.Bt_r.shape[1], self.Bs.shape[1], self.Ba_r.shape[1])
        return T1, T2, t3


def _check_obs(design, arr, name):
    arr = np.asarray(arr, dtype=float)
    if arr.shape != design.obs_shape:
        raise ValueError(f"{name} has shape {arr.shape}, expected {design.obs_shape}")
    return arr


def predictor_array(design: BlockDesign, theta) -> np.ndarray:
    """``X theta`` as an ``(m, n + 1, l)`` array."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (design.layout.total,):
        raise ValueError(f"theta has length {theta.size}, layout needs {design.layout.total}")
    T1, T2, gamma = design.reshape_blocks(theta)
    common = design.Ba @ T1.T @ design.Bt.T
    eta = np.repeat(common[:, None, :], design.n_areas + 1, axis=1)
    if design.spatial:
        dev = np.einsum("ib,usb,js,ku->ijk", design.Ba_r, T2, design.Bs, design.Bt_r, optimize=True)
        eta[:, :-1, :] += dev + gamma[None, :, None]
    return eta


def linear_predictor(design: BlockDesign, theta):
    """Return ``(eta_areas, eta_totals)`` with shapes ``(m, n, l)`` and ``(m, l)``."""
    eta = predictor_array(design, theta)
    return eta[:, :-1, :], eta[:, -1, :]


def weighted_normal_matrix(design: BlockDesign, W) -> np.ndarray:
    """``X' diag(W) X`` assembled block by block."""
    W = _check_obs(design, W, "W")
    if np.any(W < 0) or not np.all(np.isfinite(W)):
        raise ValueError("weights must be finite and non-negative")
    Ba, Bt = design.Ba, design.Bt
    pa, pt = Ba.shape[1], Bt.shape[1]
    p1 = pa * pt

    S = W.sum(axis=1)
    G11 = np.einsum("ik,ia,ib,kt,ku->taub", S, Ba, Ba, Bt, Bt, optimize=True).reshape(p1, p1)
    if not design.spatial:
        return G11

    Bar, Btr, Bs = design.Ba_r, design.Bt_r, design.Bs
    pb, pu, cs, n = Bar.shape[1], Btr.shape[1], Bs.shape[1], Bs.shape[0]
    p2 = pu * cs * pb
    Wa = W[:, :-1, :]

    Ws = np.einsum("ijk,js->isk", Wa, Bs, optimize=True)
    G12 = np.einsum("isk,ia,ib,kt,ku->tausb", Ws, Ba, Bar, Bt, Btr, optimize=True).reshape(p1, p2)

    # (2, 2): contract age and time first, then space as one GEMM per chunk
    C = np.einsum("ijk,ib,ic,ku,kv->juvbc", Wa, Bar, Bar, Btr, Btr, optimize=True)
    C = C.reshape(n, pu * pu * pb * pb)
    acc = np.zeros((cs * cs, C.shape[1]))
    for lo in range(0, n, _AREA_CHUNK):
        hi = min(lo + _AREA_CHUNK, n)
        rt = (Bs[lo:hi, :, None] * Bs[lo:hi, None, :]).reshape(hi - lo, cs * cs)
        acc += rt.T @ C[lo:hi]
    G22 = (
        acc.reshape(cs, cs, pu, pu, pb, pb)
        .transpose(2, 0, 4, 3, 1, 5)
        .reshape(p2, p2)
    )

    G13 = np.einsum("ijk,ia,kt->taj", Wa, Ba, Bt, optimize=True).reshape(p1, n)
    M = np.einsum("ijk,ib,ku->jub", Wa, Bar, Btr, optimize=True)
    G23 = np.einsum("jub,js->usbj", M, Bs, optimize=True).reshape(p2, n)
    G33 = np.diag(Wa.sum(axis=(0, 2)))

    return np.block([
        [G11, G12, G13],
        [G12.T, G22, G23],
        [G13.T, G23.T, G33],
    ])


def weighted_rhs(design: BlockDesign, W, z) -> np.ndarray:
    """``X' diag(W) z``."""
    W = _check_obs(design, W, "W")
    z = _check_obs(design, z, "z")
    Wz = W * z
    parts = [np.einsum("ik,ia,kt->ta", Wz.sum(axis=1), design.Ba, design.Bt, optimize=True).ravel()]
    if design.spatial:
        Wa = Wz[:, :-1, :]
        parts.append(
            np.einsum("ijk,ib,js,ku->usb", Wa, design.Ba_r, design.Bs, design.Bt_r, optimize=True).ravel()
        )
        parts.append(Wa.sum(axis=(0, 2)))
    return np.concatenate(parts)


def cholesky(A):
    """Lower Cholesky factor of a symmetric positive definite matrix."""
    try:
        return linalg.cho_factor(A, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise SingularSystemError() from exc


def effective_dimension(design: BlockDesign, W, P) -> float:
    """Trace of the hat matrix, ``tr[(X'WX + P)^-1 X'WX]``."""
    XtWX = weighted_normal_matrix(design, W)
    factor = cholesky(XtWX + P)
    return trace_hat(factor, XtWX)


def trace_hat(factor, XtWX) -> float:
    return float(np.trace(linalg.cho_solve(factor, XtWX)))
