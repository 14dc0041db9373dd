import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from platoonkit.signals import (BlockPartition, DimensionError, DomainError, Signal, WeightedNormSpec,
                                block_inf_norms, norm_inf, norm_star, signal_sup_norm, truncate_above,
                                truncate_below)


def brute_star(a, n, r, D):
    # direct block-by-block evaluation
    total = 0.0
    for b in range(math.ceil(n / r)):
        blk = a[b * r:(b + 1) * r]
        total += (D[b] * max(abs(v) for v in blk)) ** 2
    return math.sqrt(total)


@pytest.mark.parametrize("a, expected", [((0, 0, 0), 0.0), ((1, -2, 3), 3.0), ((-5,), 5.0)])
def test_norm_inf_values(a, expected):
    assert norm_inf(a) == expected


def test_norm_inf_empty():
    with pytest.raises(DimensionError):
        norm_inf([])


@pytest.mark.parametrize("r, D, expected", [(4, (1,), 3.0), (1, (1, 1, 1, 1), math.sqrt(14)),
                                            (2, (1, 1), math.sqrt(13))])
def test_norm_star_examples(r, D, expected):
    spec = WeightedNormSpec(BlockPartition(4, r), D)
    assert norm_star([1, -2, 3, 0], spec) == pytest.approx(expected, abs=1e-15)


def test_norm_star_length_mismatch():
    with pytest.raises(DimensionError):
        norm_star([1, 2, 3], WeightedNormSpec.uniform(4, 2))


def test_partition_shapes():
    p = BlockPartition(10, 3)
    assert p.m == 4 and p.block_sizes == (3, 3, 3, 1)
    assert [p.block_of(i) for i in (0, 2, 3, 9)] == [0, 0, 1, 3]
    with pytest.raises(DimensionError):
        BlockPartition(4, 5)


def test_weights_must_be_positive():
    with pytest.raises(ValueError):
        WeightedNormSpec(BlockPartition(4, 2), (1.0, 0.0))
    with pytest.raises(DimensionError):
        WeightedNormSpec(BlockPartition(4, 2), (1.0,))


@st.composite
def norm_case(draw):
    n = draw(st.integers(1, 12))
    r = draw(st.integers(1, n))
    m = -(-n // r)
    D = draw(st.lists(st.floats(0.1, 10.0), min_size=m, max_size=m))
    vec = st.lists(st.floats(-1e3, 1e3), min_size=n, max_size=n)
    return n, r, tuple(D), np.array(draw(vec)), np.array(draw(vec)), draw(st.floats(-5, 5))


@given(norm_case())
def test_norm_star_is_a_norm(case):
    n, r, D, a, b, alpha = case
    spec = WeightedNormSpec(BlockPartition(n, r), D)
    na, nb = norm_star(a, spec), norm_star(b, spec)
    assert na == pytest.approx(brute_star(a, n, r, D), rel=1e-12, abs=1e-12)
    assert norm_star(alpha * a, spec) == pytest.approx(abs(alpha) * na, rel=1e-12, abs=1e-9)
    assert norm_star(a + b, spec) <= na + nb + 1e-9
    assert (na > 0) == bool(np.any(a != 0))
    m = spec.partition.m
    assert min(D) * norm_inf(a) <= na * (1 + 1e-12) + 1e-12
    assert na <= math.sqrt(m) * max(D) * norm_inf(a) * (1 + 1e-12) + 1e-12


def test_norm_star_vectorised():
    spec = WeightedNormSpec(BlockPartition(5, 2), (1.0, 2.0, 3.0))
    A = np.random.default_rng(3).normal(size=(7, 5))
    assert np.allclose(norm_star(A, spec), [norm_star(a, spec) for a in A])
    assert block_inf_norms(A, spec.partition).shape == (7, 3)


def test_truncations():
    one = Signal.constant([1.0], T=10.0)
    below, above = truncate_below(one, 5.0), truncate_above(one, 5.0)
    assert below(3.0)[0] == 1.0 and below(7.0)[0] == 0.0
    assert above(3.0)[0] == 0.0 and above(7.0)[0] == 1.0
    z = Signal.zero(2, T=10.0)
    assert np.all(truncate_below(z, 4.0)(2.0) == 0) and np.all(truncate_below(z, 4.0)(6.0) == 0)
    with pytest.raises(DomainError):
        truncate_below(one, 10.0)
    with pytest.raises(DomainError):
        truncate_above(one, -1.0)


def test_window_composition():
    u = Signal(lambda t: np.array([math.sin(t) + 2.0]), 1, T=20.0)
    win = truncate_below(truncate_above(u, 3.0), 8.0)
    for t in (1.0, 3.0, 5.5, 8.0, 9.0):
        expected = u(t)[0] if 3.0 <= t <= 8.0 else 0.0
        assert win(t)[0] == expected


@given(st.floats(0.01, 9.99), st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_truncations_split_signal(tau, c):
    u = Signal(lambda t: np.array([c[0] * math.cos(t), c[1] * t]), 2, T=10.0)
    lo, hi = truncate_below(u, tau), truncate_above(u, tau)
    for t in np.linspace(0, 9.9, 23):
        if t != tau:
            assert np.allclose(lo(t) + hi(t), u(t))
    full = signal_sup_norm(u, horizon=9.9, step=0.05)
    assert signal_sup_norm(lo, horizon=9.9, step=0.05) <= full
    assert signal_sup_norm(hi, horizon=9.9, step=0.05) <= full


def test_sup_norm_examples():
    circ = Signal(lambda t: np.array([math.sin(t), math.cos(t)]), 2)
    assert signal_sup_norm(circ, horizon=2 * math.pi) == pytest.approx(1.0, abs=1e-12)
    assert signal_sup_norm(Signal.zero(3), horizon=5.0) == 0.0
    assert signal_sup_norm(Signal.constant([2.0, -3.0]), horizon=1.7) == 3.0
    assert signal_sup_norm(circ, norm=lambda v: float(np.linalg.norm(v)), horizon=1.0, step=0.1) == pytest.approx(1.0)


def test_sup_norm_domain_errors():
    u = Signal.constant([1.0], T=2.0)
    with pytest.raises(DomainError):
        signal_sup_norm(u, horizon=3.0)
    with pytest.raises(DomainError):
        signal_sup_norm(Signal.constant([1.0]))
    assert signal_sup_norm(u) == 1.0


def test_signal_checks():
    u = Signal(lambda t: np.array([t, t]), 2, T=1.0)
    with pytest.raises(DomainError):
        u(1.0)
    with pytest.raises(DimensionError):
        Signal(lambda t: np.array([t]), 2)(0.5)
    assert u.sample([0.0, 0.5]).shape == (2, 2)
