"""Density matrices and the per-state observables used by the estimators."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Optional

import numpy as np
from numba import njit

from .linalg import (
    BipartiteDims,
    DimensionError,
    GaussianMatrix,
    Matrix,
    _all_principal_minors_nonneg,
    as_complex,
    hermitian_eigenvalues,
    is_hermitian,
    is_pd_exact,
    is_psd_exact,
    partial_transpose,
)

PPT_EPS = 1e-12
POSITIVITY_EPS = 1e-12
TRACE_TOL = 1e-12


class InvalidStateError(ValueError):
    pass


@dataclass(frozen=True)
class SeparabilityVerdict:
    ppt: bool
    min_pt_eigenvalue: float


class DensityMatrix:
    """A strictly positive, unit-trace Hermitian matrix on ``dA x dB``.

    Construct through :func:`make_density`.  Lattice states keep their exact
    :class:`GaussianMatrix` so that positivity and the PPT verdict are decided
    without rounding.
    """

    def __init__(self, mat: np.ndarray, dims: BipartiteDims, exact: Optional[GaussianMatrix] = None):
        mat = np.array(mat, dtype=np.complex128)
        mat.setflags(write=False)
        self.mat = mat
        self.dims = dims
        self.exact = exact

    @classmethod
    def from_gaussian(cls, G: GaussianMatrix, dims: BipartiteDims, validate: bool = True) -> "DensityMatrix":
        if validate:
            return make_density(G, dims)
        return cls(G.to_complex(), dims, G)

    @property
    def N(self) -> int:
        return self.dims.N

    @cached_property
    def spectrum(self) -> np.ndarray:
        w = hermitian_eigenvalues(self.mat)
        w.setflags(write=False)
        return w

    @cached_property
    def pt_spectrum(self) -> np.ndarray:
        w = hermitian_eigenvalues(partial_transpose(self.mat, self.dims))
        w.setflags(write=False)
        return w

    def __repr__(self) -> str:
        kind = "exact" if self.exact is not None else "float"
        return f"DensityMatrix({self.dims}, {kind}, spectrum={np.round(self.spectrum, 6).tolist()})"


def make_density(M: Matrix, dims: BipartiteDims) -> DensityMatrix:
    """Validate ``M`` as a strictly positive density matrix on ``dims``."""
    n = M.n if isinstance(M, GaussianMatrix) else as_complex(M).shape[0]
    if n != dims.N:
        raise DimensionError(f"matrix dimension {n} does not match dims {dims}")
    if not is_hermitian(M):
        raise InvalidStateError("matrix is not Hermitian")
    if isinstance(M, GaussianMatrix):
        if M.trace() != 1:
            raise InvalidStateError(f"trace is {M.trace()}, not 1")
        if not is_pd_exact(M):
            raise InvalidStateError("matrix is not strictly positive definite")
        return DensityMatrix(M.to_complex(), dims, M)
    A = as_complex(M)
    tr = np.trace(A)
    if abs(tr - 1.0) > TRACE_TOL:
        raise InvalidStateError(f"trace is {tr.real:.15g}, not 1")
    rho = DensityMatrix(A, dims)
    if rho.spectrum[0] <= POSITIVITY_EPS:
        raise InvalidStateError(f"smallest eigenvalue {rho.spectrum[0]:.3g} is not strictly positive")
    return rho


def is_ppt(rho: DensityMatrix) -> SeparabilityVerdict:
    """Peres-Horodecki test.  Necessary and sufficient for 2x2 and 2x3 only."""
    lam_min = float(rho.pt_spectrum[0])
    if rho.exact is not None:
        ppt = is_psd_exact(partial_transpose(rho.exact, rho.dims))
    else:
        ppt = lam_min >= -PPT_EPS
    return SeparabilityVerdict(ppt, lam_min)


@njit(cache=True)
def _psd_rows(re, im):
    out = np.empty(re.shape[0], dtype=np.bool_)
    for r in range(re.shape[0]):
        out[r] = _all_principal_minors_nonneg(re[r], im[r])
    return out


def exact_ppt_batch(re: np.ndarray, im: np.ndarray, dims: BipartiteDims) -> np.ndarray:
    """Exact PPT verdicts for a stack of integer-scaled matrices ``(m, N, N)``."""
    pre = np.ascontiguousarray(partial_transpose(re, dims))
    pim = np.ascontiguousarray(partial_transpose(im, dims))
    return _psd_rows(pre, pim)


def ppt_is_sufficient(dims: BipartiteDims) -> bool:
    return dims.N <= 6


def verdict_label(dims: BipartiteDims) -> str:
    if ppt_is_sufficient(dims):
        return "separability probability"
    return "PPT-pass rate (upper bound on separability)"


def participation_ratio(rho: DensityMatrix) -> float:
    """``1 / tr(rho^2)``; equals ``N`` only at the maximally mixed state."""
    if rho.exact is not None:
        G = rho.exact
        s = int((G.re.astype(object) ** 2 + G.im.astype(object) ** 2).sum())
        return float(Fraction(G.denom**2, s))
    return float(1.0 / np.sum(np.abs(rho.mat) ** 2))


def degree_of_entanglement(rho: DensityMatrix) -> float:
    """``sum |lam'| - 1`` over the partial-transpose spectrum (twice the negativity)."""
    if is_ppt(rho).ppt:
        return 0.0
    return float(np.sum(np.abs(rho.pt_spectrum)) - 1.0)
