import json
import math
from fractions import Fraction

import numpy as np
import pytest

from sepprob.enumeration import EnumerationSpec, LatticeEnumerator
from sepprob.estimate import (
    EmptyTallyError,
    WeightedTally,
    accumulate,
    bin_by_participation,
    bin_index_exact,
    bin_index_float,
    finalize,
    float_batch_tally,
    lattice_block_tally,
    proportion,
    unweighted_estimate,
)
from sepprob.linalg import BipartiteDims
from sepprob.measures import RngStream, disc_hits
from sepprob.metrics import ALL_METRICS, DEFAULT_METRICS, MetricKind
from sepprob.states import SeparabilityVerdict, make_density

from conftest import werner

D22 = BipartiteDims(2, 2)
SEP = SeparabilityVerdict(True, 0.1)
ENT = SeparabilityVerdict(False, -0.1)


def _w(x):
    return {k: x for k in ALL_METRICS}


def test_accumulate_examples():
    rho = make_density(np.eye(4) / 4, D22)
    t = accumulate(WeightedTally(), rho, SEP, _w(2.0), 0.0)
    assert all(finalize(t).p(k) == 1 for k in ALL_METRICS)
    t = accumulate(WeightedTally(), rho, ENT, _w(2.0), 0.3)
    r = finalize(t)
    assert r.p(MetricKind.KMB) == 0 and r.d(MetricKind.KMB) == pytest.approx(0.3)
    t = WeightedTally()
    accumulate(t, rho, ENT, _w(1.0), 0.2)
    accumulate(t, rho, SEP, _w(3.0), 0.0)
    assert finalize(t).p(MetricKind.MINIMAL) == 0.75


def test_nonfinite_weight_is_skipped(caplog):
    rho = make_density(np.eye(4) / 4, D22)
    t = WeightedTally((MetricKind.MINIMAL, MetricKind.MAXIMAL))
    accumulate(t, rho, SEP, {MetricKind.MINIMAL: 1.0, MetricKind.MAXIMAL: math.inf}, 0.0)
    accumulate(t, rho, ENT, _w(1.0), 0.5)
    r = finalize(t)
    assert r.metrics["max"]["skipped"] == 1 and r.p(MetricKind.MAXIMAL) == 0
    assert r.p(MetricKind.MINIMAL) == 0.5 and r.totals["states"] == 2
    assert "non-finite" in caplog.text


def test_empty_tally():
    with pytest.raises(EmptyTallyError):
        finalize(WeightedTally())


def test_bins_half_open():
    w = Fraction(1, 20)
    assert bin_index_float([1.0, 1.05, 1.0999, 4.0], w).tolist() == [0, 1, 1, 60]
    # R = D^2 / s exactly; R = 1.05 lands in bin 1, just below lands in bin 0
    assert bin_index_exact(np.array([20, 21]), 21, w).tolist() == [1, 0]


def test_bin_by_participation_examples():
    mm = make_density(np.eye(4) / 4, D22)
    rep = bin_by_participation([mm, mm], DEFAULT_METRICS)
    occupied = [r for r in rep.rows if r.metric == "min" and r.count]
    assert len(occupied) == 1 and occupied[0].bin_lo == 4.0 and occupied[0].p_conditional == 1.0
    assert all(r.p_conditional is None for r in rep.rows if r.count == 0)
    # R = 1.5 and R = 3.5 with equal weight
    a = make_density(_diag_with_ratio(1.5), D22)
    b = make_density(_diag_with_ratio(3.5), D22)
    t = WeightedTally((MetricKind.MINIMAL,), Fraction(1, 20))
    accumulate(t, a, SEP, _w(1.0), 0.0)
    accumulate(t, b, SEP, _w(1.0), 0.0)
    rows = [r for r in finalize(t, D22).bins.rows if r.count]
    assert [r.bin_lo for r in rows] == [1.5, 3.5]
    assert [r.mass for r in rows] == [0.5, 0.5]


def _diag_with_ratio(R):
    # spectrum (1 - 3y, y, y, y) with purity 1/R: 12 y^2 - 6 y + 1 - 1/R = 0, smaller root
    y = (6 - math.sqrt(36 - 48 * (1 - 1 / R))) / 24
    return np.diag([1 - 3 * y, y, y, y])


def _lattice_tally(spec, bins=Fraction(1, 20), block_size=16):
    enum = LatticeEnumerator(spec, block_size=block_size)
    t = WeightedTally(ALL_METRICS, bins)
    for block in enum.blocks():
        t.merge(lattice_block_tally(block, ALL_METRICS, bins))
    return t


def test_lattice_report_properties():
    t = _lattice_tally(EnumerationSpec(D22, 12, 5))
    r = finalize(t, D22, "enumerate", {})
    for k in ALL_METRICS:
        m = r.metrics[k.value]
        # recomputable bit for bit from the stored sums
        assert m["p"] == m["sum_w_sep"] / m["sum_w"]
        assert 0 <= m["p"] <= 1 and 0 <= m["d"] <= 1
        bw = sum(t.bins[b].metric[k][0] for b in t.bins)
        bws = sum(t.bins[b].metric[k][1] for b in t.bins)
        assert float(bw) == pytest.approx(m["sum_w"], rel=1e-10)
        assert float(bws) == pytest.approx(m["sum_w_sep"], rel=1e-10)
        masses = sum(row.mass for row in r.bins.rows if row.metric == k.value)
        assert masses == pytest.approx(1.0, rel=1e-10)
    # R >= 3 implies separable for 2x2
    for row in r.bins.rows:
        if row.bin_lo >= 3 and row.count:
            assert row.p_conditional == 1.0 and row.count == row.count_separable


def test_partition_independence():
    spec = EnumerationSpec(D22, 10, 5)
    a = _lattice_tally(spec, block_size=3)
    b = _lattice_tally(spec, block_size=40)
    assert a.to_dict() == b.to_dict()


def test_metric_independence_of_counts():
    spec = EnumerationSpec(D22, 10, 4)
    enum = LatticeEnumerator(spec)
    counts = set()
    for kinds in ((MetricKind.MINIMAL,), (MetricKind.IDENTRIC, MetricKind.MAXIMAL), ALL_METRICS):
        t = WeightedTally(kinds)
        for block in enum.blocks():
            t.merge(lattice_block_tally(block, kinds))
        counts.add((t.n, t.n_sep))
    assert len(counts) == 1


def test_tally_round_trip():
    t = _lattice_tally(EnumerationSpec(D22, 8, 4))
    d = json.loads(json.dumps(t.to_dict()))
    assert WeightedTally.from_dict(d).to_dict() == t.to_dict()


def test_float_tally_matches_lattice_weights():
    spec = EnumerationSpec(D22, 10, 4)
    enum = LatticeEnumerator(spec, block_size=1000)
    block = next(enum.blocks())
    exact = lattice_block_tally(block, ALL_METRICS)
    # expand the conjugate partners for the float path
    mats = block.matrices()
    mats = np.concatenate([mats, mats[block.mult == 2].conj()])
    fl = float_batch_tally(mats, D22, ALL_METRICS)
    assert (fl.n, fl.n_sep) == (exact.n, exact.n_sep)
    for k in ALL_METRICS:
        assert float(fl.sums[k].w) == pytest.approx(float(exact.sums[k].w), rel=1e-9)


def test_werner_degree_in_tally():
    rho = make_density(werner(0.5), D22)
    rep = bin_by_participation([rho], (MetricKind.MINIMAL,))
    assert sum(r.count for r in rep.rows) == 1


def test_unweighted_examples():
    assert unweighted_estimate([True] * 6564 + [False] * 3436)[0] == pytest.approx(0.6564)
    assert proportion(0, 50) == (0.0, 0.0)
    p, se = proportion(83, 3000)
    assert p == pytest.approx(0.0277, abs=5e-5) and se == pytest.approx(math.sqrt(p * (1 - p) / 3000))
    rho = make_density(np.eye(4) / 4, D22)
    assert unweighted_estimate([rho, make_density(werner(0.9), D22)]) == pytest.approx((0.5, 0.5 / math.sqrt(2)), rel=1e-15)
    with pytest.raises(ValueError):
        proportion(0, 0)


def test_random_search_hits_tally():
    mats, lam = disc_hits(D22, 0.25, 300_000, RngStream(2), "disc")
    t = float_batch_tally(mats, D22, DEFAULT_METRICS, Fraction(1, 20), lam)
    assert t.n == len(mats) > 0
    r = finalize(t, D22)
    assert all(0 <= r.p(k) <= 1 for k in DEFAULT_METRICS)
