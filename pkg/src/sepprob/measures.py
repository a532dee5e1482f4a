"""Random states: Dirichlet x Haar product measures and the random disc search."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence, Union

import numpy as np

from .linalg import BipartiteDims, jacobi_eigvals_batch
from .states import POSITIVITY_EPS, DensityMatrix, InvalidStateError


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Distinct stream ids give statistically independent streams from one seed,
    which is how sampling work is split between workers.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))


RngLike = Union[RngStream, np.random.Generator]


def _gen(rng: RngLike) -> np.random.Generator:
    return rng.generator() if isinstance(rng, RngStream) else rng


def dirichlet_params(nu: Union[float, Sequence[float]], N: int) -> np.ndarray:
    """Expand a scalar ``nu`` to the symmetric vector, and validate."""
    arr = np.full(N, float(nu)) if np.ndim(nu) == 0 else np.asarray(nu, dtype=float)
    if arr.shape != (N,):
        raise ValueError(f"need {N} Dirichlet parameters, got {arr.shape[0] if arr.ndim else 1}")
    if not np.all(arr > 0) or not np.all(np.isfinite(arr)):
        raise ValueError("Dirichlet parameters must be finite and strictly positive")
    return arr


def sample_dirichlet_batch(nu: np.ndarray, size: int, rng: RngLike) -> np.ndarray:
    """``size`` draws from Dirichlet(``nu``) as normalized independent gamma variates."""
    g = _gen(rng).standard_gamma(np.broadcast_to(nu, (size, len(nu))))
    return g / g.sum(axis=1, keepdims=True)


def sample_dirichlet(nu, rng: RngLike) -> np.ndarray:
    nu = np.asarray(nu, dtype=float)
    dirichlet_params(nu, len(nu))
    return sample_dirichlet_batch(nu, 1, rng)[0]


def sample_haar_batch(N: int, size: int, rng: RngLike) -> np.ndarray:
    """Haar-random unitaries: QR of a complex Ginibre matrix, with R's diagonal made positive."""
    gen = _gen(rng)
    Z = (gen.standard_normal((size, N, N)) + 1j * gen.standard_normal((size, N, N))) / np.sqrt(2.0)
    Q, R = np.linalg.qr(Z)
    d = np.diagonal(R, axis1=1, axis2=2)
    ph = d / np.abs(d)
    return Q * ph[:, None, :]


def sample_haar_unitary(N: int, rng: RngLike) -> np.ndarray:
    if N < 1:
        raise ValueError("N must be >= 1")
    return sample_haar_batch(N, 1, rng)[0]


def compose_batch(eigs: np.ndarray, U: np.ndarray) -> np.ndarray:
    """``U^dagger diag(eigs) U`` for stacks of spectra and unitaries."""
    Ud = np.conj(np.swapaxes(U, -1, -2))
    rho = (Ud * eigs[..., None, :]) @ U
    return 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))


def compose_density(eigs, U: np.ndarray, dims: BipartiteDims) -> DensityMatrix:
    eigs = np.asarray(eigs, dtype=float)
    if eigs.shape != (dims.N,) or np.shape(U) != (dims.N, dims.N):
        raise ValueError(f"spectrum and unitary must match N={dims.N}")
    if np.any(eigs <= 0):
        raise InvalidStateError("degenerate spectrum: every eigenvalue must be strictly positive")
    return DensityMatrix(compose_batch(eigs, np.asarray(U, dtype=complex)), dims)


def product_measure_batch(nu: np.ndarray, dims: BipartiteDims, size: int, rng: RngLike) -> np.ndarray:
    """``size`` states from Dirichlet(``nu``) spectra and Haar eigenvectors, shape ``(size, N, N)``.

    Draws with an exactly zero eigenvalue (a measure-zero event) are redrawn.
    """
    gen = _gen(rng)
    eigs = sample_dirichlet_batch(nu, size, gen)
    bad = np.flatnonzero(np.any(eigs <= 0, axis=1))
    while bad.size:
        eigs[bad] = sample_dirichlet_batch(nu, bad.size, gen)
        bad = bad[np.any(eigs[bad] <= 0, axis=1)]
    U = sample_haar_batch(dims.N, size, gen)
    return compose_batch(eigs, U)


def sample_product_measure(nu, dims: BipartiteDims, rng: RngLike) -> DensityMatrix:
    nu = dirichlet_params(nu, dims.N)
    return DensityMatrix(product_measure_batch(nu, dims, 1, rng)[0], dims)


# -- random disc search -------------------------------------------------------


TRIAL_LAWS = ("square", "disc")


@dataclass(frozen=True)
class DiscSearchSpec:
    """Random search settings.

    ``law="square"`` draws each off-diagonal uniformly from the square
    ``[-r, r]^2`` and counts a draw outside the disc as a failed trial;
    ``law="disc"`` draws directly inside the disc.  Accepted matrices have the
    same distribution under both; only the hit rate per trial differs, by
    ``(pi/4)**(N(N-1)/2)``.
    """

    dims: BipartiteDims
    radius: float
    trials: int
    law: str = "square"

    def __post_init__(self):
        if not 0 < self.radius <= 0.5:
            raise ValueError("radius must lie in (0, 1/2]")
        if self.trials < 0:
            raise ValueError("trials must be nonnegative")
        if self.law not in TRIAL_LAWS:
            raise ValueError(f"law must be one of {TRIAL_LAWS}")


def disc_candidates(dims: BipartiteDims, radius: float, size: int, rng: RngLike, law: str = "square"):
    """Trial Hermitian matrices with a uniform simplex diagonal.

    Returns ``(M, inside)`` where ``inside`` flags trials whose off-diagonals
    all fell in the disc (always true for ``law="disc"``).
    """
    gen = _gen(rng)
    N = dims.N
    diag = gen.dirichlet(np.ones(N), size)
    iu, ju = np.triu_indices(N, 1)
    if law == "disc":
        r = radius * np.sqrt(gen.random((size, len(iu))))
        z = r * np.exp(2j * np.pi * gen.random((size, len(iu))))
        inside = np.ones(size, dtype=bool)
    else:
        z = radius * (2.0 * gen.random((size, len(iu))) - 1.0) + 1j * radius * (2.0 * gen.random((size, len(iu))) - 1.0)
        inside = np.all(np.abs(z) <= radius, axis=1)
    M = np.zeros((size, N, N), dtype=complex)
    ar = np.arange(N)
    M[:, ar, ar] = diag
    M[:, iu, ju] = z
    M[:, ju, iu] = np.conj(z)
    return M, inside


def disc_hits(dims: BipartiteDims, radius: float, size: int, rng: RngLike, law: str = "square"):
    """Run ``size`` trials; return the accepted matrices and their spectra."""
    M, inside = disc_candidates(dims, radius, size, rng, law)
    # cheap necessary condition first: every 2x2 principal minor positive
    d = np.real(np.diagonal(M, axis1=1, axis2=2))
    iu, ju = np.triu_indices(dims.N, 1)
    ok = inside & np.all(d[:, iu] * d[:, ju] > np.abs(M[:, iu, ju]) ** 2, axis=1)
    M = M[ok]
    lam = jacobi_eigvals_batch(M) if len(M) else np.zeros((0, dims.N))
    keep = lam[:, 0] > POSITIVITY_EPS
    return M[keep], lam[keep]


def random_disc_search(spec: DiscSearchSpec, rng: RngLike, batch: int = 100_000) -> Iterator[DensityMatrix]:
    """Yield every trial that turns out to be a strictly positive density matrix."""
    gen = _gen(rng)
    left = spec.trials
    while left > 0:
        m = min(batch, left)
        left -= m
        mats, _ = disc_hits(spec.dims, spec.radius, m, gen, spec.law)
        for A in mats:
            yield DensityMatrix(A, spec.dims)
