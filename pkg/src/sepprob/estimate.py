"""Weighted tallies, reports and participation-ratio bins.

Weighted sums are held as exact :class:`~fractions.Fraction` values.  Each
batch contributes ``Fraction(math.fsum(batch))``, so merging partial tallies
is exact and the final numbers do not depend on how work was split or in which
order partitions finished.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .linalg import BipartiteDims, jacobi_eigvals_batch, partial_transpose
from .metrics import ALL_METRICS, MetricKind, SingularWeightError, log_volume_weight
from .states import (
    PPT_EPS,
    DensityMatrix,
    SeparabilityVerdict,
    degree_of_entanglement,
    exact_ppt_batch,
    is_ppt,
    participation_ratio,
    verdict_label,
)

log = logging.getLogger(__name__)

SCHEMA = "sepprob.report/1"
DEFAULT_BIN_WIDTH = Fraction(1, 20)


class EmptyTallyError(ValueError):
    pass


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(float(x))


@dataclass
class MetricSums:
    w: Fraction = Fraction(0)
    w_sep: Fraction = Fraction(0)
    w_d: Fraction = Fraction(0)
    skipped: int = 0

    def add(self, w, w_sep, w_d, skipped=0):
        self.w += _frac(w)
        self.w_sep += _frac(w_sep)
        self.w_d += _frac(w_d)
        self.skipped += skipped

    def merge(self, other: "MetricSums"):
        self.add(other.w, other.w_sep, other.w_d, other.skipped)

    def to_dict(self) -> dict:
        return {"w": str(self.w), "w_sep": str(self.w_sep), "w_d": str(self.w_d), "skipped": self.skipped}

    @classmethod
    def from_dict(cls, d) -> "MetricSums":
        return cls(Fraction(d["w"]), Fraction(d["w_sep"]), Fraction(d["w_d"]), int(d["skipped"]))


@dataclass
class BinSums:
    count: int = 0
    count_sep: int = 0
    metric: dict = field(default_factory=dict)  # MetricKind -> [w, w_sep]

    def add(self, kind, w, w_sep):
        cur = self.metric.setdefault(kind, [Fraction(0), Fraction(0)])
        cur[0] += _frac(w)
        cur[1] += _frac(w_sep)


@dataclass
class WeightedTally:
    """Running sums for one estimation run.

    Unweighted counters ``n``/``n_sep`` count every state; a state whose
    weight under some metric is not finite is left out of that metric's sums
    only and recorded in its ``skipped`` counter.
    """

    metrics: tuple[MetricKind, ...] = ALL_METRICS
    bin_width: Optional[Fraction] = None
    n: int = 0
    n_sep: int = 0
    sums: dict = field(default_factory=dict)
    bins: dict = field(default_factory=dict)

    def __post_init__(self):
        self.metrics = tuple(MetricKind(k) for k in self.metrics)
        if self.bin_width is not None:
            self.bin_width = Fraction(self.bin_width)
            if self.bin_width <= 0:
                raise ValueError("bin width must be positive")
        for k in self.metrics:
            self.sums.setdefault(k, MetricSums())

    def merge(self, other: "WeightedTally") -> "WeightedTally":
        if other.metrics != self.metrics or other.bin_width != self.bin_width:
            raise ValueError("cannot merge tallies with different metrics or bin widths")
        self.n += other.n
        self.n_sep += other.n_sep
        for k in self.metrics:
            self.sums[k].merge(other.sums[k])
        for b, src in other.bins.items():
            dst = self.bins.setdefault(b, BinSums())
            dst.count += src.count
            dst.count_sep += src.count_sep
            for k, (w, ws) in src.metric.items():
                dst.add(k, w, ws)
        return self

    def add_batch(
        self,
        ppt: np.ndarray,
        log_weights: Mapping[MetricKind, np.ndarray],
        d: np.ndarray,
        mult: Optional[np.ndarray] = None,
        bin_index: Optional[np.ndarray] = None,
    ) -> "WeightedTally":
        """Fold in a batch of states given their verdicts, log-weights and entanglement."""
        with np.errstate(over="ignore"):
            weights = {k: np.exp(log_weights[k]) for k in self.metrics}
        return self.add_weighted(ppt, weights, d, mult, bin_index)

    def add_weighted(
        self,
        ppt: np.ndarray,
        weights: Mapping[MetricKind, np.ndarray],
        d: np.ndarray,
        mult: Optional[np.ndarray] = None,
        bin_index: Optional[np.ndarray] = None,
    ) -> "WeightedTally":
        """Same as :meth:`add_batch` with plain (not logarithmic) weights."""
        ppt = np.asarray(ppt, dtype=bool)
        d = np.asarray(d, dtype=float)
        m = np.ones(len(ppt)) if mult is None else np.asarray(mult, dtype=float)
        self.n += int(m.sum())
        self.n_sep += int(m[ppt].sum())
        if self.bin_width is not None:
            if bin_index is None:
                raise ValueError("bin_index is required when binning is enabled")
            bin_index = np.asarray(bin_index)
            for b in np.unique(bin_index).tolist():
                sel = bin_index == b
                bs = self.bins.setdefault(int(b), BinSums())
                bs.count += int(m[sel].sum())
                bs.count_sep += int(m[sel & ppt].sum())
        for k in self.metrics:
            with np.errstate(over="ignore", invalid="ignore"):
                w = m * np.asarray(weights[k], dtype=float)
            ok = np.isfinite(w) & (w >= 0)
            skipped = int((~ok).sum())
            if skipped:
                log.warning("skipping %d state(s) with non-finite %s weight", skipped, k.value)
            w = np.where(ok, w, 0.0)
            self.sums[k].add(math.fsum(w), math.fsum(w[ppt]), math.fsum(w * d), skipped)
            if self.bin_width is not None:
                for b in np.unique(bin_index).tolist():
                    sel = bin_index == b
                    self.bins[int(b)].add(k, math.fsum(w[sel]), math.fsum(w[sel & ppt]))
        return self

    def to_dict(self) -> dict:
        return {
            "metrics": [k.value for k in self.metrics],
            "bin_width": None if self.bin_width is None else str(self.bin_width),
            "n": self.n,
            "n_sep": self.n_sep,
            "sums": {k.value: s.to_dict() for k, s in self.sums.items()},
            "bins": {
                str(b): {
                    "count": bs.count,
                    "count_sep": bs.count_sep,
                    "metric": {k.value: [str(w), str(ws)] for k, (w, ws) in bs.metric.items()},
                }
                for b, bs in sorted(self.bins.items())
            },
        }

    @classmethod
    def from_dict(cls, d) -> "WeightedTally":
        t = cls(tuple(MetricKind(k) for k in d["metrics"]), None if d["bin_width"] is None else Fraction(d["bin_width"]))
        t.n, t.n_sep = int(d["n"]), int(d["n_sep"])
        t.sums = {MetricKind(k): MetricSums.from_dict(v) for k, v in d["sums"].items()}
        for b, v in d["bins"].items():
            bs = BinSums(int(v["count"]), int(v["count_sep"]))
            bs.metric = {MetricKind(k): [Fraction(w), Fraction(ws)] for k, (w, ws) in v["metric"].items()}
            t.bins[int(b)] = bs
        return t


def accumulate(
    tally: WeightedTally,
    rho: DensityMatrix,
    verdict: SeparabilityVerdict,
    weights: Mapping[MetricKind, float],
    d: float,
) -> WeightedTally:
    """Add one state with precomputed verdict, weights and degree of entanglement."""
    w = {k: np.array([float(weights[k])]) for k in tally.metrics}
    bins = None
    if tally.bin_width is not None:
        bins = np.array([state_bin(rho, tally.bin_width)])
    return tally.add_weighted(np.array([verdict.ppt]), w, np.array([d]), None, bins)


# -- binning ------------------------------------------------------------------


def bin_index_float(R, width: Fraction) -> np.ndarray:
    """Half-open bins ``[1 + k w, 1 + (k+1) w)``."""
    return np.floor((np.asarray(R, dtype=float) - 1.0) / float(width)).astype(np.int64)


def bin_index_exact(trace_sq_num: np.ndarray, denom_sq: int, width: Fraction) -> np.ndarray:
    """Exact bin of ``R = denom_sq / trace_sq_num`` for integer ``tr((D rho)^2)``."""
    a, b = width.numerator, width.denominator
    s = np.asarray(trace_sq_num, dtype=np.int64)
    # floor((R - 1) / w) = floor((denom_sq - s) * b / (s * a))
    return (denom_sq - s) * b // (s * a)


def state_bin(rho: DensityMatrix, width: Fraction) -> int:
    if rho.exact is not None:
        G = rho.exact
        s = int((G.re.astype(object) ** 2 + G.im.astype(object) ** 2).sum())
        return int(Fraction(G.denom**2 - s, s) // Fraction(width))
    return int(bin_index_float(participation_ratio(rho), width))


def bin_edges(k: int, width: Fraction) -> tuple[float, float]:
    return float(1 + k * width), float(1 + (k + 1) * width)


# -- batch evaluation ---------------------------------------------------------


def _entanglement(pt_eigs: np.ndarray, ppt: np.ndarray) -> np.ndarray:
    d = np.abs(pt_eigs).sum(axis=1) - 1.0
    return np.where(ppt, 0.0, d)


def lattice_block_tally(block, metrics: Sequence[MetricKind], bin_width: Optional[Fraction] = None) -> WeightedTally:
    """Evaluate every state of an enumeration :class:`~sepprob.enumeration.StateBlock`."""
    tally = WeightedTally(tuple(metrics), bin_width)
    if len(block) == 0:
        return tally
    spec = block.spec
    dims, N, D = spec.dims, spec.N, spec.scale
    ppt = exact_ppt_batch(block.re, block.im, dims)
    A = block.matrices()
    lam = jacobi_eigvals_batch(A)
    pt_lam = jacobi_eigvals_batch(partial_transpose(A, dims))
    log_det = np.log(block.det.astype(float)) - N * math.log(D)
    logw = {}
    for k in tally.metrics:
        try:
            logw[k] = log_volume_weight(k, lam, log_det)
        except SingularWeightError:
            # rounding pushed a tiny eigenvalue to <= 0; weigh those states one by one
            logw[k] = _guarded_log_weights(k, lam, log_det)
    bins = None
    if bin_width is not None:
        s = (block.re**2 + block.im**2).sum(axis=(1, 2))
        bins = bin_index_exact(s, D * D, Fraction(bin_width))
    return tally.add_batch(ppt, logw, _entanglement(pt_lam, ppt), block.mult, bins)


def _guarded_log_weights(kind, lam, log_det) -> np.ndarray:
    out = np.full(len(lam), np.inf)
    good = np.all(lam > 0, axis=1)
    if good.any():
        out[good] = log_volume_weight(kind, lam[good], None if log_det is None else log_det[good])
    return out


def float_batch_tally(
    mats: np.ndarray,
    dims: BipartiteDims,
    metrics: Sequence[MetricKind],
    bin_width: Optional[Fraction] = None,
    lam: Optional[np.ndarray] = None,
) -> WeightedTally:
    """Evaluate floating-point states (e.g. random-search hits) with tolerance-based PPT."""
    tally = WeightedTally(tuple(metrics), bin_width)
    if len(mats) == 0:
        return tally
    if lam is None:
        lam = jacobi_eigvals_batch(mats)
    pt_lam = jacobi_eigvals_batch(partial_transpose(mats, dims))
    ppt = pt_lam[:, 0] >= -PPT_EPS
    logw = {k: _guarded_log_weights(k, lam, None) for k in tally.metrics}
    bins = None
    if bin_width is not None:
        R = 1.0 / np.sum(np.abs(mats) ** 2, axis=(1, 2))
        bins = bin_index_float(R, Fraction(bin_width))
    return tally.add_batch(ppt, logw, _entanglement(pt_lam, ppt), None, bins)


# -- reports ------------------------------------------------------------------


@dataclass
class BinRow:
    bin_lo: float
    bin_hi: float
    metric: str
    mass: float
    mass_separable: float
    p_conditional: Optional[float]
    count: int
    count_separable: int


@dataclass
class BinnedReport:
    bin_width: Fraction
    dims: BipartiteDims
    rows: list[BinRow]

    def conditional(self, metric: MetricKind) -> dict[float, Optional[float]]:
        return {r.bin_lo: r.p_conditional for r in self.rows if r.metric == MetricKind(metric).value}

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["bin_lo", "bin_hi", "metric", "mass", "mass_separable", "p_conditional"])
        for r in self.rows:
            wr.writerow([
                repr(r.bin_lo), repr(r.bin_hi), r.metric, repr(r.mass), repr(r.mass_separable),
                "" if r.p_conditional is None else repr(r.p_conditional),
            ])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "bin_width": str(self.bin_width),
            "rows": [r.__dict__ for r in self.rows],
        }


def binned_report(tally: WeightedTally, dims: BipartiteDims) -> BinnedReport:
    """Per-bin masses and conditional separability; every bin over ``[1, N]`` appears."""
    if tally.bin_width is None:
        raise ValueError("tally was built without binning")
    width = tally.bin_width
    n_bins = int(math.floor((dims.N - 1) / width)) + 1
    rows = []
    for k in tally.metrics:
        total = tally.sums[k].w
        for b in range(n_bins):
            lo, hi = bin_edges(b, width)
            bs = tally.bins.get(b)
            w, ws = bs.metric.get(k, (Fraction(0), Fraction(0))) if bs else (Fraction(0), Fraction(0))
            rows.append(BinRow(
                lo, hi, k.value,
                float(w / total) if total else 0.0,
                float(ws / total) if total else 0.0,
                float(ws / w) if w else None,
                bs.count if bs else 0,
                bs.count_sep if bs else 0,
            ))
    return BinnedReport(width, dims, rows)


@dataclass
class Report:
    command: str
    config: dict
    label: str
    totals: dict
    metrics: dict
    extra: dict = field(default_factory=dict)
    bins: Optional[BinnedReport] = None
    metadata: dict = field(default_factory=dict)

    def p(self, kind: MetricKind) -> float:
        return self.metrics[MetricKind(kind).value]["p"]

    def d(self, kind: MetricKind) -> float:
        return self.metrics[MetricKind(kind).value]["d"]

    def to_dict(self, with_metadata: bool = True) -> dict:
        out = {
            "schema": SCHEMA,
            "command": self.command,
            "config": self.config,
            "label": self.label,
            "totals": self.totals,
            "metrics": self.metrics,
            "extra": self.extra,
        }
        if self.bins is not None:
            out["bins"] = self.bins.to_dict()
        if with_metadata:
            out["metadata"] = self.metadata
        return out

    def to_json(self, with_metadata: bool = True) -> str:
        import json

        return json.dumps(self.to_dict(with_metadata), indent=2, sort_keys=True) + "\n"


def finalize(
    tally: WeightedTally,
    dims: Optional[BipartiteDims] = None,
    command: str = "",
    config: Optional[dict] = None,
) -> Report:
    """Turn a tally into a :class:`Report` with ``p = sum_w_sep / sum_w`` per metric."""
    if tally.n == 0:
        raise EmptyTallyError("no states were tallied")
    metrics = {}
    for k in tally.metrics:
        s = tally.sums[k]
        sw, sws, swd = float(s.w), float(s.w_sep), float(s.w_d)
        metrics[k.value] = {
            "p": sws / sw if sw > 0 else None,
            "d": swd / sw if sw > 0 else None,
            "sum_w": sw,
            "sum_w_sep": sws,
            "sum_w_d": swd,
            "skipped": s.skipped,
        }
    totals = {"states": tally.n, "separable": tally.n_sep, "fraction": tally.n_sep / tally.n}
    label = verdict_label(dims) if dims is not None else "separability probability"
    bins = binned_report(tally, dims) if (tally.bin_width is not None and dims is not None) else None
    return Report(command, dict(config or {}), label, totals, metrics, bins=bins)


def bin_by_participation(
    stream: Iterable[DensityMatrix],
    kinds: Sequence[MetricKind] = ALL_METRICS,
    width: Union[Fraction, float, str] = DEFAULT_BIN_WIDTH,
) -> BinnedReport:
    """Bin a stream of states by participation ratio and weigh each bin per metric."""
    width = Fraction(str(width)) if isinstance(width, float) else Fraction(width)
    tally = WeightedTally(tuple(kinds), width)
    dims = None
    for rho in stream:
        dims = rho.dims
        verdict = is_ppt(rho)
        weights = {}
        for k in tally.metrics:
            try:
                weights[k] = math.exp(log_volume_weight(k, rho.spectrum))
            except (SingularWeightError, OverflowError):
                weights[k] = math.inf
        accumulate(tally, rho, verdict, weights, degree_of_entanglement(rho))
    if dims is None:
        raise EmptyTallyError("empty stream")
    return binned_report(tally, dims)


def proportion(n_sep: int, n: int) -> tuple[float, float]:
    if n < 1:
        raise ValueError("need at least one sample")
    p = n_sep / n
    return p, math.sqrt(p * (1.0 - p) / n)


def unweighted_estimate(samples: Iterable[Union[DensityMatrix, bool]]) -> tuple[float, float]:
    """Plain separable fraction and its binomial standard error."""
    n = n_sep = 0
    for s in samples:
        ok = is_ppt(s).ppt if isinstance(s, DensityMatrix) else bool(s)
        n += 1
        n_sep += ok
    return proportion(n_sep, n)
