"""Exhaustive lattice enumeration of strictly positive density matrices.

Diagonals run over the simplex lattice ``c / n1`` (compositions of ``n1``);
every upper off-diagonal entry runs over the square grid of spacing ``1/n2``
anchored at ``(+-1/2, +-1/2)`` and clipped to the disc ``|z| <= 1/2``.  All
acceptance decisions are made in exact integer arithmetic: the whole matrix is
scaled by ``D = lcm(n1, 2*n2)`` so that every entry becomes a Gaussian integer.

The search is a depth-first backtrack over the off-diagonal positions.  Each
position only offers grid points with ``|z|^2 < rho_ii rho_jj``, and after each
placement every principal minor that has just become fully determined must be
strictly positive (a principal submatrix of a positive-definite matrix is
positive definite), otherwise the branch is cut.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Iterator

import numpy as np
from numba import njit

from .linalg import BipartiteDims, GaussianMatrix, gaussian_minor


class BudgetExceeded(RuntimeError):
    """Raised when an enumeration run overruns its node budget.

    ``checkpoint`` holds the index of the first simplex point not yet
    processed, so the run can be resumed from there.
    """

    def __init__(self, message, checkpoint):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class EnumerationSpec:
    dims: BipartiteDims
    n1: int
    n2: int
    det_threshold: Fraction = Fraction(0)
    use_symmetry: bool = False

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1:
            raise ValueError("n1 and n2 must be >= 1")
        t = Fraction(self.det_threshold)
        object.__setattr__(self, "det_threshold", t)
        N = self.dims.N
        if t < 0 or t > Fraction(1, N**N):
            raise ValueError(f"det_threshold must lie in [0, 1/{N}^{N}]")

    @property
    def N(self) -> int:
        return self.dims.N

    @property
    def scale(self) -> int:
        return math.lcm(self.n1, 2 * self.n2)

    def to_dict(self) -> dict:
        return {
            "dims": str(self.dims),
            "n1": self.n1,
            "n2": self.n2,
            "det_threshold": str(self.det_threshold),
            "use_symmetry": self.use_symmetry,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# -- lattices -----------------------------------------------------------------


def compositions(n: int, k: int) -> Iterator[tuple[int, ...]]:
    """Compositions of ``n`` into ``k`` nonnegative parts, lexicographic order."""
    if k == 1:
        yield (n,)
        return
    for first in range(n + 1):
        for rest in compositions(n - first, k - 1):
            yield (first,) + rest


def composition_array(n: int, k: int) -> np.ndarray:
    arr = np.array(list(compositions(n, k)), dtype=np.int64)
    return arr.reshape(-1, k)


def simplex_points(n1: int, K: int) -> list[tuple[Fraction, ...]]:
    """Points ``c / n1`` of the regular simplex lattice, one per composition."""
    if n1 < 1 or K < 1:
        raise ValueError("n1 and K must be >= 1")
    return [tuple(Fraction(c, n1) for c in comp) for comp in compositions(n1, K)]


def _grid_numerators(n2: int) -> tuple[np.ndarray, np.ndarray]:
    # z = (u + i v) / (2 n2) with u, v = 2a - n2 for a = 0..n2
    axis = np.arange(-n2, n2 + 1, 2, dtype=np.int64)
    u, v = np.meshgrid(axis, axis, indexing="ij")
    u, v = u.ravel(), v.ravel()
    keep = u * u + v * v <= n2 * n2
    u, v = u[keep], v[keep]
    order = np.lexsort((v, u, u * u + v * v))
    return u[order], v[order]


@dataclass(frozen=True)
class DiscGrid:
    n2: int
    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)

    @property
    def points(self) -> list[complex]:
        return [complex(Fraction(int(a), 2 * self.n2), Fraction(int(b), 2 * self.n2)) for a, b in zip(self.u, self.v)]

    @property
    def exact_points(self) -> list[tuple[Fraction, Fraction]]:
        return [(Fraction(int(a), 2 * self.n2), Fraction(int(b), 2 * self.n2)) for a, b in zip(self.u, self.v)]

    def __len__(self) -> int:
        return len(self.u)

    @property
    def min_modulus(self) -> float:
        return math.sqrt(int(np.min(self.u * self.u + self.v * self.v))) / (2 * self.n2)

    @property
    def contains_origin(self) -> bool:
        return bool(np.any((self.u == 0) & (self.v == 0)))


def disc_grid(n2: int) -> DiscGrid:
    """Grid points of spacing ``1/n2`` with corners at ``(+-1/2, +-1/2)``, ``|z| <= 1/2``.

    Sorted by modulus so that the admissible points for a bound on ``|z|``
    form a prefix.
    """
    if n2 < 1:
        raise ValueError("n2 must be >= 1")
    u, v = _grid_numerators(n2)
    return DiscGrid(n2, u, v)


# -- fill order and pruning tables --------------------------------------------


def fill_order(N: int) -> list[tuple[int, int]]:
    """Column by column: (0,1), (0,2), (1,2), (0,3), ...

    Column order completes the leading k x k block after every column, so
    larger minors become available for pruning as early as possible.
    """
    return [(i, j) for j in range(1, N) for i in range(j)]


def _check_tables(N: int):
    """Principal index sets (size >= 3) that become fully filled at each step."""
    order = fill_order(N)
    filled: set[tuple[int, int]] = set()
    starts, masks = [0], []
    for i, j in order:
        filled.add((i, j))
        others = [t for t in range(N) if t not in (i, j)]
        for size in range(1, N - 1):
            for T in combinations(others, size):
                S = sorted((i, j) + T)
                if all((a, b) in filled for a, b in combinations(S, 2)):
                    masks.append(sum(1 << s for s in S))
        starts.append(len(masks))
    return (
        np.array([p[0] for p in order], dtype=np.int64),
        np.array([p[1] for p in order], dtype=np.int64),
        np.array(starts, dtype=np.int64),
        np.array(masks, dtype=np.int64),
    )


@njit(cache=True)
def _mask_minor(mre, mim, mask, rows):
    k = 0
    i = 0
    while mask:
        if mask & 1:
            rows[k] = i
            k += 1
        mask >>= 1
        i += 1
    d, _ = gaussian_minor(mre, mim, rows, k)
    return d


def prune_check(
    re: np.ndarray,
    im: np.ndarray,
    filled: set[tuple[int, int]],
    strict: bool = False,
) -> bool:
    """Return False when some fully-filled principal minor rules the branch out.

    ``re`` and ``im`` are integer numerators of a partially filled Hermitian
    matrix whose diagonal is complete.  ``filled`` lists the upper off-diagonal
    positions set so far; unfilled entries are ignored.  Minors equal to zero
    pass unless ``strict`` is set.
    """
    re = np.ascontiguousarray(re, dtype=np.int64)
    im = np.ascontiguousarray(im, dtype=np.int64)
    N = re.shape[0]
    filled = {(min(a, b), max(a, b)) for a, b in filled}
    rows = np.zeros(N, dtype=np.int64)
    for size in range(1, N + 1):
        for S in combinations(range(N), size):
            if all(p in filled for p in combinations(S, 2)):
                mask = sum(1 << s for s in S)
                d = _mask_minor(re, im, mask, rows)
                if d < 0 or (strict and d == 0):
                    return False
    return True


# -- the backtracking kernel --------------------------------------------------


@njit(cache=True)
def _enumerate_block(
    comps, diag_scale, gu, gv, off_scale, pi, pj, chk_start, chk_masks,
    det_min, use_symmetry, out, node_budget,
):
    """Enumerate all accepted matrices for a block of diagonal points.

    Each output row holds ``[comp_index, g_0 .. g_{P-1}, multiplicity, det]``
    where ``g_p`` indexes the grid point used at fill position ``p`` and
    ``det`` is the determinant of the scaled integer matrix.

    Returns ``(rows_written, nodes, status)``; status 1 means ``out`` is full,
    2 means the node budget ran out.  Either way the caller reruns the block.
    """
    K = comps.shape[0]
    N = comps.shape[1]
    P = pi.shape[0]
    G = gu.shape[0]
    mre = np.zeros((N, N), dtype=np.int64)
    mim = np.zeros((N, N), dtype=np.int64)
    rows = np.zeros(N, dtype=np.int64)
    mod2 = np.empty(G, dtype=np.int64)
    for g in range(G):
        mod2[g] = (gu[g] * off_scale) ** 2 + (gv[g] * off_scale) ** 2
    cnt = np.zeros(P, dtype=np.int64)
    idx = np.zeros(P, dtype=np.int64)
    real_so_far = np.zeros(P + 1, dtype=np.bool_)
    n_out = 0
    nodes = 0
    cap = out.shape[0]
    for kk in range(K):
        for a in range(N):
            for b in range(N):
                mre[a, b] = 0
                mim[a, b] = 0
            mre[a, a] = comps[kk, a] * diag_scale
        dead = False
        for p in range(P):
            bound = mre[pi[p], pi[p]] * mre[pj[p], pj[p]]
            c = 0
            while c < G and mod2[c] < bound:
                c += 1
            cnt[p] = c
            if c == 0:
                dead = True
        if dead:
            continue
        depth = 0
        idx[0] = -1
        real_so_far[0] = True
        while depth >= 0:
            idx[depth] += 1
            g = idx[depth]
            if g >= cnt[depth]:
                depth -= 1
                continue
            if use_symmetry and real_so_far[depth] and gv[g] < 0:
                continue
            nodes += 1
            i = pi[depth]
            j = pj[depth]
            mre[i, j] = gu[g] * off_scale
            mim[i, j] = gv[g] * off_scale
            mre[j, i] = mre[i, j]
            mim[j, i] = -mim[i, j]
            ok = True
            last = 0
            for t in range(chk_start[depth], chk_start[depth + 1]):
                last = _mask_minor(mre, mim, chk_masks[t], rows)
                if last <= 0:
                    ok = False
                    break
            if not ok:
                continue
            if depth == P - 1:
                # the full index set is the final check at the last position
                if last < det_min:
                    continue
                if n_out >= cap:
                    return n_out, nodes, 1
                out[n_out, 0] = kk
                for q in range(P):
                    out[n_out, 1 + q] = idx[q]
                mult = 1
                if use_symmetry and not (real_so_far[depth] and gv[g] == 0):
                    mult = 2
                out[n_out, P + 1] = mult
                out[n_out, P + 2] = last
                n_out += 1
                continue
            real_so_far[depth + 1] = real_so_far[depth] and gv[g] == 0
            depth += 1
            idx[depth] = -1
        if nodes > node_budget:
            return n_out, nodes, 2
    return n_out, nodes, 0


@dataclass
class EnumerationStats:
    emitted: int = 0
    records: int = 0
    nodes: int = 0
    partitions_done: int = 0

    def merge(self, other: "EnumerationStats") -> "EnumerationStats":
        return EnumerationStats(
            self.emitted + other.emitted,
            self.records + other.records,
            self.nodes + other.nodes,
            self.partitions_done + other.partitions_done,
        )


@dataclass
class StateBlock:
    """Accepted lattice matrices from one partition, as scaled integer arrays.

    ``re``/``im`` have shape ``(m, N, N)``; the matrices are ``(re + i im)/scale``.
    ``mult`` is 2 for a representative standing in for its complex conjugate too.
    ``det`` is the exact determinant of the integer matrix, so
    ``det(rho) = det / scale**N``.
    """

    spec: EnumerationSpec
    start: int
    stop: int
    re: np.ndarray
    im: np.ndarray
    mult: np.ndarray
    det: np.ndarray
    nodes: int

    def __len__(self) -> int:
        return len(self.mult)

    def matrices(self) -> np.ndarray:
        return (self.re + 1j * self.im) / self.spec.scale

    def gaussian(self, r: int) -> GaussianMatrix:
        return GaussianMatrix(self.re[r], self.im[r], self.spec.scale)


class LatticeEnumerator:
    """Partitioned enumeration for one :class:`EnumerationSpec`.

    The diagonal points are split into fixed partitions of ``block_size``
    consecutive compositions; partition ``b`` covers indices
    ``[b*block_size, (b+1)*block_size)``.  Partitions are independent.
    """

    def __init__(self, spec: EnumerationSpec, block_size: int = 16, node_budget: int | None = None):
        self.spec = spec
        self.block_size = block_size
        self.node_budget = node_budget
        N, D = spec.N, spec.scale
        self.comps = composition_array(spec.n1, N)
        self.grid = disc_grid(spec.n2)
        self.diag_scale = D // spec.n1
        self.off_scale = D // (2 * spec.n2)
        self.pi, self.pj, self.chk_start, self.chk_masks = _check_tables(N)
        # det(rho) >= t  <=>  det(D rho) >= t D^N ; integers, so take the ceiling; strictness needs >= 1
        t = spec.det_threshold * D**N
        self.det_min = max(1, math.ceil(t))
        self._check_overflow()

    def _check_overflow(self):
        N, D = self.spec.N, self.spec.scale
        row = math.sqrt(D**2 + (N - 1) * (D / 2) ** 2)
        if row**N * D * 2**N >= 2.0**62:
            raise OverflowError(f"scale {D} too large for exact int64 minors at N={N}")

    @property
    def n_partitions(self) -> int:
        return -(-len(self.comps) // self.block_size)

    def partition_bounds(self, b: int) -> tuple[int, int]:
        start = b * self.block_size
        return start, min(start + self.block_size, len(self.comps))

    def run_partition(self, b: int) -> StateBlock:
        start, stop = self.partition_bounds(b)
        return self.run_range(start, stop)

    def run_range(self, start: int, stop: int) -> StateBlock:
        spec = self.spec
        N, P = spec.N, len(self.pi)
        cap = 1 << 14
        budget = self.node_budget if self.node_budget is not None else np.iinfo(np.int64).max
        while True:
            out = np.empty((cap, P + 3), dtype=np.int64)
            n, nodes, status = _enumerate_block(
                self.comps[start:stop], self.diag_scale, self.grid.u, self.grid.v, self.off_scale,
                self.pi, self.pj, self.chk_start, self.chk_masks,
                self.det_min, spec.use_symmetry, out, budget,
            )
            if status == 1:
                cap *= 4
                continue
            if status == 2:
                raise BudgetExceeded(f"node budget {budget} exceeded in diagonal points [{start}, {stop})", start)
            break
        out = out[:n]
        return self._block_from_rows(start, stop, out, nodes)

    def _block_from_rows(self, start, stop, out, nodes) -> StateBlock:
        N, P = self.spec.N, len(self.pi)
        m = len(out)
        re = np.zeros((m, N, N), dtype=np.int64)
        im = np.zeros((m, N, N), dtype=np.int64)
        diag = self.comps[start:stop][out[:, 0]] * self.diag_scale if m else np.zeros((0, N), np.int64)
        ar = np.arange(N)
        re[:, ar, ar] = diag
        for p in range(P):
            i, j = self.pi[p], self.pj[p]
            g = out[:, 1 + p]
            u = self.grid.u[g] * self.off_scale
            v = self.grid.v[g] * self.off_scale
            re[:, i, j] = u
            re[:, j, i] = u
            im[:, i, j] = v
            im[:, j, i] = -v
        return StateBlock(self.spec, start, stop, re, im, out[:, P + 1].copy(), out[:, P + 2].copy(), nodes)

    def blocks(self, start_partition: int = 0) -> Iterator[StateBlock]:
        for b in range(start_partition, self.n_partitions):
            yield self.run_partition(b)


def enumerate_states(spec: EnumerationSpec, expand_symmetry: bool = True):
    """Yield every accepted lattice state as a :class:`~sepprob.states.DensityMatrix`.

    With ``use_symmetry`` the enumeration visits one of each conjugate pair;
    ``expand_symmetry`` then also yields the conjugate partner so the stream
    is the same set as the plain run.
    """
    from .states import DensityMatrix

    enum = LatticeEnumerator(spec)
    for block in enum.blocks():
        for r in range(len(block)):
            G = block.gaussian(r)
            yield DensityMatrix.from_gaussian(G, spec.dims, validate=False)
            if expand_symmetry and block.mult[r] == 2:
                conj = GaussianMatrix(G.re, -G.im, G.denom)
                yield DensityMatrix.from_gaussian(conj, spec.dims, validate=False)


def count_states(spec: EnumerationSpec) -> tuple[int, EnumerationStats]:
    enum = LatticeEnumerator(spec)
    stats = EnumerationStats()
    for block in enum.blocks():
        stats = stats.merge(EnumerationStats(int(block.mult.sum()), len(block), block.nodes, 1))
    return stats.emitted, stats
