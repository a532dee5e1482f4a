"""Morozova-Chentsov functions and the volume-element weights built from them.

The weight of a state with spectrum ``lam`` under metric kind ``k`` is

    w_k(lam) = prod_{i,j} f_k(lam_i, lam_j) ** (1/2)

over all ordered pairs, diagonal included.  Every kind has
``f(a, a) = 1/a``, so the diagonal part is ``det ** (-1/2)`` and only the
``i < j`` pairs depend on the kind.
"""

from __future__ import annotations

import enum
import math
from typing import Iterable, Optional

import numpy as np

EQUAL_RTOL = 1e-12


class MetricKind(str, enum.Enum):
    MINIMAL = "min"
    KMB = "kmb"
    MAXIMAL = "max"
    IDENTRIC = "identric"

    @classmethod
    def parse(cls, name: str) -> "MetricKind":
        key = name.strip().lower()
        aliases = {"minimal": "min", "bures": "min", "maximal": "max", "kubo-mori": "kmb", "bkm": "kmb"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown metric {name!r}; choose from min, kmb, max, identric") from None


ALL_METRICS = (MetricKind.MINIMAL, MetricKind.KMB, MetricKind.MAXIMAL, MetricKind.IDENTRIC)
DEFAULT_METRICS = (MetricKind.MINIMAL, MetricKind.KMB, MetricKind.MAXIMAL)


class SingularWeightError(ValueError):
    pass


def parse_metrics(text: str | Iterable[str]) -> tuple[MetricKind, ...]:
    names = text.split(",") if isinstance(text, str) else list(text)
    kinds = tuple(dict.fromkeys(MetricKind.parse(n) for n in names if n.strip()))
    if not kinds:
        raise ValueError("at least one metric is required")
    return kinds


def mc_function(kind: MetricKind, a: float, b: float) -> float:
    """Morozova-Chentsov function ``f(a, b)``, the reciprocal of a mean of ``a`` and ``b``.

    Minimal: arithmetic mean; KMB: logarithmic mean; Maximal: harmonic mean;
    Identric: identric mean.  Near-equal arguments take the ``1/a`` limit.
    """
    kind = MetricKind(kind)
    if not (a > 0 and b > 0):
        raise ValueError(f"Morozova-Chentsov function needs positive arguments, got {a}, {b}")
    if a > b:
        a, b = b, a
    if kind is MetricKind.MINIMAL:
        return 2.0 / (a + b)
    if kind is MetricKind.MAXIMAL:
        return (a + b) / (2.0 * a * b)
    # written in x = (b - a)/a with log1p so close arguments lose no precision
    x = (b - a) / a
    if x <= EQUAL_RTOL:
        return 1.0 / math.sqrt(a * b) if kind is MetricKind.KMB else 2.0 / (a + b)
    if kind is MetricKind.KMB:
        return math.log1p(x) / (b - a)
    return math.exp(-(1.0 + x) * math.log1p(x) / x + 1.0) / a


def log_mc(kind: MetricKind, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise ``log f(a, b)`` for arrays of positive values."""
    kind = MetricKind(kind)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    if kind is MetricKind.MINIMAL:
        return math.log(2.0) - np.log(lo + hi)
    if kind is MetricKind.MAXIMAL:
        return np.log(lo + hi) - math.log(2.0) - np.log(lo) - np.log(hi)
    x = (hi - lo) / lo
    near = x <= EQUAL_RTOL
    xs = np.where(near, 1.0, x)
    if kind is MetricKind.KMB:
        val = np.log(np.log1p(xs)) - np.log(xs) - np.log(lo)
        return np.where(near, -0.5 * (np.log(lo) + np.log(hi)), val)
    val = 1.0 - (1.0 + xs) * np.log1p(xs) / xs - np.log(lo)
    return np.where(near, math.log(2.0) - np.log(lo + hi), val)


def log_volume_weight(
    kind: MetricKind, eigs: np.ndarray, log_det: Optional[np.ndarray] = None
) -> np.ndarray:
    """``log w`` for one spectrum ``(N,)`` or a stack ``(m, N)``.

    ``log_det`` may supply an exactly known ``log det`` for the diagonal part;
    otherwise it is ``sum(log eigs)``.
    """
    lam = np.asarray(eigs, dtype=float)
    single = lam.ndim == 1
    lam = np.atleast_2d(lam)
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise SingularWeightError("volume weight is singular for a nonpositive spectrum")
    N = lam.shape[1]
    iu, ju = np.triu_indices(N, 1)
    off = log_mc(kind, lam[:, iu], lam[:, ju]).sum(axis=1)
    if log_det is None:
        log_det = np.log(lam).sum(axis=1)
    out = off - 0.5 * np.asarray(log_det, dtype=float)
    return out[0] if single else out


def volume_weight(kind: MetricKind, eigs) -> float:
    """Square root of ``prod_{i,j} f(lam_i, lam_j)`` over all ordered pairs."""
    return float(np.exp(log_volume_weight(kind, np.asarray(eigs, dtype=float))))


def weight_bundle(eigs, kinds: Iterable[MetricKind] = ALL_METRICS) -> dict[MetricKind, float]:
    return {k: volume_weight(k, eigs) for k in kinds}
