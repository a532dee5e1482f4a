import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sepprob.metrics import (
    ALL_METRICS,
    EQUAL_RTOL,
    MetricKind,
    SingularWeightError,
    log_mc,
    log_volume_weight,
    mc_function,
    parse_metrics,
    volume_weight,
)

pos = st.floats(min_value=1e-9, max_value=1.0, allow_nan=False)


def test_spec_examples():
    assert mc_function(MetricKind.KMB, 0.5, 0.25) == pytest.approx(4 * math.log(2))
    for k in ALL_METRICS:
        assert mc_function(k, 0.25, 0.25) == pytest.approx(4.0)
    assert mc_function(MetricKind.MINIMAL, 0.5, 0.25) == pytest.approx(1 / 0.375)
    assert mc_function(MetricKind.MAXIMAL, 0.5, 0.25) == pytest.approx(0.375 / 0.125)


def test_identric_value():
    a, b = 0.2, 0.7
    I = math.exp(-1) * (b**b / a**a) ** (1 / (b - a))
    assert mc_function(MetricKind.IDENTRIC, a, b) == pytest.approx(1 / I, rel=1e-13)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        mc_function(MetricKind.MINIMAL, 0.0, 0.5)
    with pytest.raises(ValueError):
        mc_function(MetricKind.KMB, -0.1, 0.5)
    with pytest.raises(ValueError):
        parse_metrics("min,foo")


def test_parse_metrics():
    assert parse_metrics("min,kmb,max,identric") == ALL_METRICS
    assert parse_metrics("bures,bkm") == (MetricKind.MINIMAL, MetricKind.KMB)


def test_maximally_mixed_weight():
    for k in ALL_METRICS:
        assert volume_weight(k, [0.25] * 4) == pytest.approx(65536.0, rel=1e-12)


def test_mean_ordering_symmetry_random_pairs():
    rng = np.random.default_rng(0)
    a = rng.random(10_000) + 1e-6
    b = rng.random(10_000) + 1e-6
    vals = {k: np.exp(log_mc(k, a, b)) for k in ALL_METRICS}
    for k in ALL_METRICS:
        np.testing.assert_array_equal(vals[k], np.exp(log_mc(k, b, a)))
    tol = 1 + 1e-12
    assert np.all(vals[MetricKind.MINIMAL] <= vals[MetricKind.IDENTRIC] * tol)
    assert np.all(vals[MetricKind.IDENTRIC] <= vals[MetricKind.KMB] * tol)
    assert np.all(vals[MetricKind.KMB] <= vals[MetricKind.MAXIMAL] * tol)


@settings(max_examples=300, deadline=None)
@given(pos, pos)
def test_scalar_and_vector_agree(a, b):
    for k in ALL_METRICS:
        f = mc_function(k, a, b)
        assert f == pytest.approx(mc_function(k, b, a), rel=1e-15)
        assert math.log(f) == pytest.approx(float(log_mc(k, np.array(a), np.array(b))), rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("kind", ALL_METRICS)
def test_limit_continuity(kind):
    a = 0.3
    for eps in (10 * EQUAL_RTOL, 2 * EQUAL_RTOL, EQUAL_RTOL / 2, 0.0):
        assert mc_function(kind, a, a * (1 + eps)) == pytest.approx(1 / a, rel=1e-10)
        assert float(np.exp(log_mc(kind, np.array(a), np.array(a * (1 + eps))))) == pytest.approx(1 / a, rel=1e-10)
    for eps in (1e-4, 1e-6, 1e-8):
        assert mc_function(kind, a, a * (1 + eps)) == pytest.approx(1 / a, rel=2 * eps)


@pytest.mark.parametrize("kind", ALL_METRICS)
def test_weight_factorization(kind):
    rng = np.random.default_rng(1)
    for N in (4, 6, 9):
        lam = rng.dirichlet(np.ones(N))
        # direct product over all ordered pairs, diagonal included
        direct = 0.5 * sum(math.log(mc_function(kind, x, y)) for x in lam for y in lam)
        assert log_volume_weight(kind, lam) == pytest.approx(direct, rel=1e-10)
        # det^{-1/2} times the i<j pair product
        split = -0.5 * np.log(lam).sum() + sum(
            math.log(mc_function(kind, lam[i], lam[j])) for i in range(N) for j in range(i + 1, N)
        )
        assert log_volume_weight(kind, lam) == pytest.approx(split, rel=1e-10)
        assert log_volume_weight(kind, lam, np.log(lam).sum()) == pytest.approx(split, rel=1e-10)


def test_batch_weights():
    lam = np.random.default_rng(2).dirichlet(np.ones(4), 100)
    for k in ALL_METRICS:
        batch = log_volume_weight(k, lam)
        single = [log_volume_weight(k, x) for x in lam]
        np.testing.assert_allclose(batch, single, rtol=1e-14)


def test_singular_weight():
    with pytest.raises(SingularWeightError):
        volume_weight(MetricKind.MINIMAL, [0.5, 0.5, 0.0, 0.0])


def test_metric_ordering_of_weights():
    # larger Morozova-Chentsov function, larger weight
    lam = [0.4, 0.3, 0.2, 0.1]
    w = [volume_weight(k, lam) for k in (MetricKind.MINIMAL, MetricKind.IDENTRIC, MetricKind.KMB, MetricKind.MAXIMAL)]
    assert w == sorted(w)
