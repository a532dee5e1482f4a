"""Small Hermitian linear algebra, in floating point and exactly over Gaussian integers.

Lattice-generated matrices have entries whose real and imaginary parts are
rationals with a common denominator.  They are stored as
:class:`GaussianMatrix`: two integer arrays plus that denominator, so every
minor is an exact integer divided by a power of the denominator.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from fractions import Fraction
from typing import Iterable, Sequence, Union

import numpy as np
from numba import njit

HERMITIAN_TOL = 1e-12
JACOBI_TOL = 1e-14
MAX_SWEEPS = 60


class NotHermitianError(ValueError):
    pass


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class BipartiteDims:
    dA: int
    dB: int

    def __post_init__(self):
        if self.dA < 2 or self.dB < 2:
            raise DimensionError(f"subsystem dimensions must be >= 2, got {self.dA}x{self.dB}")

    @property
    def N(self) -> int:
        return self.dA * self.dB

    @classmethod
    def parse(cls, text: str) -> "BipartiteDims":
        """Parse ``"2x3"`` style labels."""
        try:
            a, b = text.lower().split("x")
            return cls(int(a), int(b))
        except ValueError as exc:
            raise DimensionError(f"cannot parse dims {text!r}; expected e.g. '2x2'") from exc

    def __str__(self) -> str:
        return f"{self.dA}x{self.dB}"


@dataclass(frozen=True, eq=False)
class GaussianMatrix:
    """Matrix ``(re + 1j*im) / denom`` with integer ``re``, ``im``."""

    re: np.ndarray
    im: np.ndarray
    denom: int = 1

    def __post_init__(self):
        re = np.ascontiguousarray(self.re, dtype=np.int64)
        im = np.ascontiguousarray(self.im, dtype=np.int64)
        if re.ndim != 2 or re.shape[0] != re.shape[1] or re.shape != im.shape:
            raise DimensionError("GaussianMatrix needs two square arrays of equal shape")
        if self.denom <= 0:
            raise ValueError("denominator must be positive")
        re.setflags(write=False)
        im.setflags(write=False)
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "im", im)

    @property
    def n(self) -> int:
        return self.re.shape[0]

    def entry(self, i: int, j: int) -> tuple[Fraction, Fraction]:
        return Fraction(int(self.re[i, j]), self.denom), Fraction(int(self.im[i, j]), self.denom)

    def to_complex(self) -> np.ndarray:
        return (self.re + 1j * self.im) / self.denom

    def trace(self) -> Fraction:
        return Fraction(int(np.trace(self.re)), self.denom)

    def __eq__(self, other):
        if not isinstance(other, GaussianMatrix):
            return NotImplemented
        # cross-multiply so equal rationals with different denominators compare equal
        return (
            self.n == other.n
            and np.array_equal(self.re * other.denom, other.re * self.denom)
            and np.array_equal(self.im * other.denom, other.im * self.denom)
        )

    def reduced(self) -> "GaussianMatrix":
        """Same matrix with the smallest possible denominator."""
        g = math.gcd(self.denom, *map(int, np.abs(self.re).ravel()), *map(int, np.abs(self.im).ravel()))
        return GaussianMatrix(self.re // g, self.im // g, self.denom // g)

    def __hash__(self):
        r = self.reduced()
        return hash((r.n, r.denom, r.re.tobytes(), r.im.tobytes()))


Matrix = Union[np.ndarray, GaussianMatrix]


def as_complex(M: Matrix) -> np.ndarray:
    if isinstance(M, GaussianMatrix):
        return M.to_complex()
    A = np.asarray(M, dtype=np.complex128)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")
    return A


def is_hermitian(M: Matrix, tol: float = HERMITIAN_TOL) -> bool:
    if isinstance(M, GaussianMatrix):
        return bool(np.array_equal(M.re, M.re.T) and np.array_equal(M.im, -M.im.T))
    A = as_complex(M)
    return bool(np.max(np.abs(A - A.conj().T), initial=0.0) <= tol)


def _require_hermitian(M: Matrix) -> None:
    if not is_hermitian(M):
        raise NotHermitianError("matrix is not Hermitian")


# -- Jacobi eigensolver -------------------------------------------------------


@njit(cache=True)
def _jacobi_eigvals(a):
    """Cyclic complex Jacobi sweeps on a Hermitian matrix; returns sorted eigenvalues.

    ``a`` is overwritten.
    """
    n = a.shape[0]
    norm2 = 0.0
    for i in range(n):
        for j in range(n):
            norm2 += a[i, j].real ** 2 + a[i, j].imag ** 2
    target = (JACOBI_TOL * JACOBI_TOL) * norm2
    for _ in range(MAX_SWEEPS):
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += 2.0 * (a[i, j].real ** 2 + a[i, j].imag ** 2)
        if off <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                z = a[p, q]
                g = abs(z)
                if g == 0.0:
                    continue
                ph = z / g
                app = a[p, p].real
                aqq = a[q, q].real
                theta = (aqq - app) / (2.0 * g)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # V = diag(1, conj(ph)) @ [[c, s], [-s, c]] on the (p, q) plane
                vpp = c + 0j
                vpq = s + 0j
                vqp = -s * np.conj(ph)
                vqq = c * np.conj(ph)
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = akp * vpp + akq * vqp
                    a[k, q] = akp * vpq + akq * vqq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = np.conj(vpp) * apk + np.conj(vqp) * aqk
                    a[q, k] = np.conj(vpq) * apk + np.conj(vqq) * aqk
                a[p, q] = 0j
                a[q, p] = 0j
                a[p, p] = app - t * g
                a[q, q] = aqq + t * g
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i].real
    w.sort()
    return w


@njit(cache=True)
def jacobi_eigvals_batch(mats):
    """Eigenvalues (ascending) of a stack of Hermitian matrices, shape ``(m, n, n)``."""
    m = mats.shape[0]
    n = mats.shape[1]
    out = np.empty((m, n))
    work = np.empty((n, n), dtype=np.complex128)
    for r in range(m):
        for i in range(n):
            for j in range(n):
                work[i, j] = mats[r, i, j]
        out[r] = _jacobi_eigvals(work)
    return out


def hermitian_eigenvalues(M: Matrix) -> np.ndarray:
    """Eigenvalues of a Hermitian matrix in ascending order."""
    _require_hermitian(M)
    A = as_complex(M)
    # symmetrize so rounding-level asymmetry cannot leak into the rotations
    A = 0.5 * (A + A.conj().T)
    return _jacobi_eigvals(np.array(A, dtype=np.complex128))


# -- exact minors -------------------------------------------------------------


@njit(cache=True)
def _popcount(x):
    c = 0
    while x:
        x &= x - 1
        c += 1
    return c


@njit(cache=True)
def gaussian_minor(re, im, rows, k):
    """Exact determinant of the principal submatrix on ``rows[:k]``.

    Laplace expansion by dynamic programming over column subsets, so no
    division is ever performed.  Returns ``(real, imag)`` as int64.
    """
    size = 1 << k
    dre = np.zeros(size, dtype=np.int64)
    dim = np.zeros(size, dtype=np.int64)
    dre[0] = 1
    for S in range(size - 1):
        if dre[S] == 0 and dim[S] == 0:
            continue
        r = rows[_popcount(S)]
        for c in range(k):
            if (S >> c) & 1:
                continue
            col = rows[c]
            ar = re[r, col]
            ai = im[r, col]
            pr = ar * dre[S] - ai * dim[S]
            pi = ar * dim[S] + ai * dre[S]
            T = S | (1 << c)
            if _popcount(S >> (c + 1)) & 1:
                dre[T] -= pr
                dim[T] -= pi
            else:
                dre[T] += pr
                dim[T] += pi
    return dre[size - 1], dim[size - 1]


@njit(cache=True)
def _all_principal_minors_nonneg(re, im):
    n = re.shape[0]
    rows = np.empty(n, dtype=np.int64)
    for mask in range(1, 1 << n):
        k = 0
        for i in range(n):
            if (mask >> i) & 1:
                rows[k] = i
                k += 1
        d, _ = gaussian_minor(re, im, rows, k)
        if d < 0:
            return False
    return True


def _int64_safe(M: GaussianMatrix) -> bool:
    # Hadamard bound on any minor, with slack for the Laplace partial sums
    n = M.n
    rows = np.sqrt((M.re.astype(float) ** 2 + M.im.astype(float) ** 2).sum(axis=1))
    bound = float(np.prod(np.maximum(rows, 1.0))) * max(1.0, float(np.max(np.abs(M.re)) + np.max(np.abs(M.im))))
    return bound * 2**n < 2.0**62


def _exact_minor_int(M: GaussianMatrix, rows: Sequence[int]) -> int:
    rows = list(rows)
    if _int64_safe(M):
        d, di = gaussian_minor(M.re, M.im, np.asarray(rows + [0], dtype=np.int64), len(rows))
        d, di = int(d), int(di)
    else:
        d, di = _bigint_minor(M, rows)
    if di != 0:
        raise NotHermitianError("principal minor has a nonzero imaginary part")
    return d


def _bigint_minor(M: GaussianMatrix, rows: Sequence[int]) -> tuple[int, int]:
    k = len(rows)
    dre = [0] * (1 << k)
    dim = [0] * (1 << k)
    dre[0] = 1
    for S in range((1 << k) - 1):
        if not (dre[S] or dim[S]):
            continue
        r = rows[bin(S).count("1")]
        for c in range(k):
            if S >> c & 1:
                continue
            ar, ai = int(M.re[r, rows[c]]), int(M.im[r, rows[c]])
            pr = ar * dre[S] - ai * dim[S]
            pi = ar * dim[S] + ai * dre[S]
            sign = -1 if bin(S >> (c + 1)).count("1") & 1 else 1
            dre[S | 1 << c] += sign * pr
            dim[S | 1 << c] += sign * pi
    return dre[-1], dim[-1]


def principal_minor(M: Matrix, rows: Iterable[int], exact: bool = True) -> Union[Fraction, float]:
    """Determinant of the principal submatrix on ``rows``; the empty minor is 1.

    Exact (a :class:`~fractions.Fraction`) for :class:`GaussianMatrix` input
    unless ``exact=False``.
    """
    rows = sorted(set(int(r) for r in rows))
    n = M.n if isinstance(M, GaussianMatrix) else as_complex(M).shape[0]
    if any(r < 0 or r >= n for r in rows):
        raise IndexError(f"row index out of range for {n}x{n} matrix")
    if not rows:
        return Fraction(1) if isinstance(M, GaussianMatrix) and exact else 1.0
    _require_hermitian(M)
    if isinstance(M, GaussianMatrix) and exact:
        return Fraction(_exact_minor_int(M, rows), M.denom ** len(rows))
    A = as_complex(M)[np.ix_(rows, rows)]
    return float(np.linalg.det(A).real)


def determinant(M: Matrix, exact: bool = True) -> Union[Fraction, float]:
    n = M.n if isinstance(M, GaussianMatrix) else as_complex(M).shape[0]
    return principal_minor(M, range(n), exact=exact)


def is_psd_exact(M: GaussianMatrix) -> bool:
    """Every principal minor nonnegative, which for Hermitian matrices is PSD."""
    _require_hermitian(M)
    if _int64_safe(M):
        return bool(_all_principal_minors_nonneg(M.re, M.im))
    n = M.n
    for mask in range(1, 1 << n):
        rows = [i for i in range(n) if mask >> i & 1]
        if _bigint_minor(M, rows)[0] < 0:
            return False
    return True


def is_pd_exact(M: GaussianMatrix) -> bool:
    """Sylvester's criterion: all leading principal minors strictly positive."""
    _require_hermitian(M)
    return all(_exact_minor_int(M, range(k)) > 0 for k in range(1, M.n + 1))


# -- partial transpose --------------------------------------------------------


def pt_permutation(dims: BipartiteDims) -> np.ndarray:
    """Flat index map for transposing the second factor.

    With composite index ``(a, b) -> a*dB + b``, ``PT[(a,b),(a',b')] = M[(a,b'),(a',b)]``.
    Returned as an ``(N, N, 2)`` array of source coordinates.
    """
    dA, dB = dims.dA, dims.dB
    src = np.empty((dims.N, dims.N, 2), dtype=np.int64)
    for a in range(dA):
        for b in range(dB):
            for a2 in range(dA):
                for b2 in range(dB):
                    src[a * dB + b, a2 * dB + b2] = (a * dB + b2, a2 * dB + b)
    return src


def _pt_array(A: np.ndarray, dims: BipartiteDims) -> np.ndarray:
    dA, dB = dims.dA, dims.dB
    lead = A.shape[:-2]
    T = A.reshape(lead + (dA, dB, dA, dB))
    return np.swapaxes(T, -3, -1).reshape(lead + (dims.N, dims.N))


def partial_transpose(M: Matrix, dims: BipartiteDims) -> Matrix:
    """Transpose on the second tensor factor.  Works on stacks of arrays too."""
    n = M.n if isinstance(M, GaussianMatrix) else np.shape(M)[-1]
    if n != dims.N:
        raise DimensionError(f"matrix dimension {n} does not match dims {dims} (N={dims.N})")
    if isinstance(M, GaussianMatrix):
        return GaussianMatrix(_pt_array(M.re, dims), _pt_array(M.im, dims), M.denom)
    return _pt_array(np.asarray(M), dims)
