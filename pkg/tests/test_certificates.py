import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from platoonkit.certificates import (CertificationError, ContractionCertificate, block_majorant, block_matrix_at,
                                     certify, chain_matrix, chain_mu2, diagonal_stability, dual_maximizer,
                                     epsilon_bar, induced_norm_inf_star, lyapunov_residual, mu_limit, mu_p,
                                     mu_weighted_2, recursion_weights)
from platoonkit.dynamics import PlatoonConfig, jacobian_fast, jacobian_slow, matrix_G
from platoonkit.formation import LinearLaw, TanhAffineLaw
from platoonkit.signals import BlockPartition, WeightedNormSpec, norm_star

finite = st.floats(-10, 10, allow_nan=False)
square = st.integers(1, 6).flatmap(lambda n: arrays(float, (n, n), elements=finite))


def test_measures_of_identity():
    for p in (1, 2, np.inf):
        assert mu_p(-np.eye(4), p) == -1


def test_measure_examples():
    m = 3
    sym = -np.eye(m) + 0.5 * (np.eye(m, k=1) + np.eye(m, k=-1))
    assert mu_p(sym, 2) == pytest.approx(-1 + math.cos(math.pi / 4), abs=1e-12)
    assert mu_p(sym, 2) == pytest.approx(-0.29289, abs=5e-6)
    assert mu_p(matrix_G(2), np.inf) == 0
    assert mu_p([[1.0, -3.0], [0.5, -2.0]], 1) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        mu_p(np.ones((2, 3)))
    with pytest.raises(ValueError):
        mu_p(np.eye(2), 3)


def test_chain_closed_form():
    assert chain_mu2(1) == pytest.approx(-1.0, abs=1e-15) and chain_mu2(2) == pytest.approx(-0.5, abs=1e-15)
    vals = [chain_mu2(m) for m in range(1, 51)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    for m in range(1, 51):
        assert mu_p(chain_matrix(m), 2) == pytest.approx(chain_mu2(m), abs=1e-10)


def test_limit_oracle_on_random_matrices():
    rng = np.random.default_rng(2)
    for _ in range(20):
        M = rng.normal(size=(8, 8))
        for p in (1, 2, np.inf):
            assert abs(mu_limit(M, p) - mu_p(M, p)) < 1e-5


@given(square, st.data())
def test_measure_subadditive_and_positively_homogeneous(M, data):
    N = data.draw(arrays(float, M.shape, elements=finite))
    alpha = data.draw(st.floats(0, 100))
    for p in (1, 2, np.inf):
        assert mu_p(M + N, p) <= mu_p(M, p) + mu_p(N, p) + 1e-9
        assert mu_p(alpha * M, p) == pytest.approx(alpha * mu_p(M, p), rel=1e-9, abs=1e-9)
        assert mu_p(M, p) <= np.linalg.norm(M, {1: 1, 2: 2}.get(p, np.inf)) + 1e-9


def test_weighted_measure():
    G = matrix_G(2)
    # D G D^-1 scales the (2,1) entry by D_2 / D_1
    assert mu_weighted_2(G, [1.0, 2.0]) == pytest.approx(mu_p([[-1.0, 0.0], [2.0, -1.0]], 2), abs=1e-15)
    assert mu_weighted_2(G, [1.0, 2.0]) == pytest.approx(0.0, abs=1e-15)
    assert mu_weighted_2(G, [2.0, 1.0]) == pytest.approx(-0.75, abs=1e-15)
    M = np.random.default_rng(0).normal(size=(4, 4))
    assert mu_weighted_2(M, np.ones(4)) == pytest.approx(mu_p(M, 2))
    D = np.array([1.0, 3.0, 0.5, 2.0])
    assert mu_weighted_2(M, 7.5 * D) == pytest.approx(mu_weighted_2(M, D), abs=1e-12)
    with pytest.raises(ValueError):
        mu_weighted_2(M, [1.0, 0.0, 1.0, 1.0])


def test_epsilon_bar_examples(ref_law):
    assert epsilon_bar(PlatoonConfig(ref_law, 1, 5.0), 0.19) == math.inf
    assert epsilon_bar(PlatoonConfig(ref_law, 3, 5.0), 0.19) == pytest.approx(1 / 0.76)
    assert epsilon_bar(PlatoonConfig(ref_law, 3, 5.0), 0.19) == pytest.approx(1.3158, abs=5e-5)
    two = PlatoonConfig(LinearLaw(2.0, 1.0, [10.0, 10.0]), 2, [1.0, 2.0])
    assert epsilon_bar(two, 1.0) == 0.5


def test_majorant_examples(ref_law):
    cfg = PlatoonConfig(ref_law, 1, 5.0).with_epsilon(1.0)
    assert np.array_equal(block_majorant(cfg, 0.0), chain_matrix(10))
    for k in (1.0, [1.0, 2.0, 3.0, 1.5, 1.0, 1.0, 4.0, 2.0, 1.0, 1.0]):
        full = PlatoonConfig(ref_law, 10, k)
        assert np.array_equal(block_majorant(full, 0.0), [[-1.0]])
    mixed = PlatoonConfig(ref_law, 10, [2.0, 3.0] * 5)
    assert np.array_equal(block_majorant(mixed, 0.0), [[-1.0]])


@pytest.mark.parametrize("r", [1, 2, 3, 4, 10])
def test_majorant_dominates_sampled_blocks(ref_law, r):
    cfg = PlatoonConfig(ref_law, r, 5.0)
    rng = np.random.default_rng(r)
    for eps in (cfg.eps, 0.5 * cfg.eps):
        Bbar = block_majorant(cfg)
        for _ in range(200):
            x = ref_law.e + rng.normal(0, 4, 10) * rng.choice([0.1, 1, 10])
            assert np.all(block_matrix_at(cfg, x, eps) <= Bbar + 1e-12)


def test_majorant_is_metzler_lower_triangular(ref_law):
    for r in range(1, 11):
        B = block_majorant(PlatoonConfig(ref_law, r, 5.0))
        assert np.all(np.triu(B, 1) == 0)
        assert np.all(B - np.diag(np.diag(B)) >= 0)
        assert np.all(np.diag(B) < 0)


def test_slow_jacobian_measure(ref_law):
    rng = np.random.default_rng(5)
    for _ in range(1000):
        x = ref_law.e + rng.normal(0, 5, 10)
        assert mu_p(jacobian_slow(ref_law, x), np.inf) <= -0.1 + 1e-12


def test_diagonal_stability_examples():
    for obj, part in (("rate", None), ("gain", BlockPartition(4, 1))):
        D, eta = diagonal_stability(-np.eye(4), obj, part)
        assert np.allclose(D, 1.0) and eta == pytest.approx(1.0)
    for m in (1, 2, 5, 9):
        # D = I is feasible and reproduces the closed form
        assert -mu_weighted_2(chain_matrix(m), np.ones(m)) == pytest.approx(1 - math.cos(math.pi / (m + 1)))
        D, eta = diagonal_stability(chain_matrix(m))
        assert eta >= 1 - math.cos(math.pi / (m + 1)) - 1e-12
    B = np.array([[-1.0, 0.0], [10.0, -1.0]])
    assert mu_p(B, 2) == pytest.approx(4.0)
    qs = np.geomspace(1, 1e4, 400)
    oracle = [-1 + 5 / q for q in qs]
    assert np.allclose([mu_weighted_2(B, [q, 1.0]) for q in qs], oracle)
    for obj in ("rate", "gain"):
        D, eta = diagonal_stability(B, obj, BlockPartition(2, 1))
        assert eta > 0 and lyapunov_residual(B, D, eta) <= 1e-9
        assert D[0] > 5 * D[1]


def test_diagonal_stability_failures():
    with pytest.raises(CertificationError, match="not Hurwitz"):
        diagonal_stability(np.array([[-1.0, 0.0], [1.0, 0.0]]))
    with pytest.raises(CertificationError, match="lower triangular"):
        diagonal_stability(np.array([[-1.0, 1.0], [0.0, -1.0]]))
    with pytest.raises(CertificationError, match="Metzler"):
        diagonal_stability(np.array([[-1.0, 0.0], [-1.0, -1.0]]))
    with pytest.raises(CertificationError):
        diagonal_stability(np.array([[-1e-3, 0.0], [1e3, -1e-3]]), max_ratio=10.0)
    with pytest.raises(ValueError):
        diagonal_stability(-np.eye(2), "gain")


def test_recursion_weights_certify():
    B = np.array([[-1.0, 0, 0], [4.0, -2.0, 0], [0.5, 3.0, -0.5]])
    q = recursion_weights(B)
    assert q[-1] == 1.0 and np.all(q >= 1.0)
    assert mu_weighted_2(B, q) <= -0.75 * 0.5 + 1e-12


@st.composite
def metzler_lower(draw):
    m = draw(st.integers(1, 6))
    diag = draw(arrays(float, m, elements=st.floats(-3, -0.1)))
    low = draw(arrays(float, (m, m), elements=st.floats(0, 5)))
    return np.diag(diag) + np.tril(low, -1)


@settings(max_examples=60)
@given(metzler_lower())
def test_diagonal_stability_certificate_holds(B):
    m = len(B)
    D, eta = diagonal_stability(B, "gain", BlockPartition(m, 1))
    assert eta > 0 and min(D) == pytest.approx(1.0)
    assert lyapunov_residual(B, D, eta * (1 - 1e-12)) <= 1e-9
    try:
        D, eta = diagonal_stability(B, "rate")
    except CertificationError:
        assert max(recursion_weights(B)) > 1e3
        return
    assert max(D) <= 1e3 * (1 + 1e-9)
    assert lyapunov_residual(B, D, eta * (1 - 1e-12)) <= 1e-9


def test_induced_norm_examples():
    for n in (2, 5, 10):
        spec = WeightedNormSpec.uniform(n, n)
        G = matrix_G(n)
        rows = np.abs(G).sum(axis=1).max()
        assert rows == 2
        for mode in ("upper_bound", "exact"):
            assert induced_norm_inf_star(G, spec, mode) == pytest.approx(2.0)
    spec = WeightedNormSpec(BlockPartition(1, 1), (4.0,))
    for mode in ("upper_bound", "exact", "sampled"):
        assert induced_norm_inf_star(matrix_G(1), spec, mode) == pytest.approx(0.25)


@settings(max_examples=25)
@given(st.integers(1, 8), st.data())
def test_induced_norm_ordering(n, data):
    r = data.draw(st.integers(1, n))
    part = BlockPartition(n, r)
    D = data.draw(arrays(float, part.m, elements=st.floats(1.0, 50.0)))
    spec = WeightedNormSpec(part, tuple(D))
    G = matrix_G(n)
    exact = induced_norm_inf_star(G, spec, "exact")
    sampled = induced_norm_inf_star(G, spec, "sampled", samples=200)
    assert sampled <= exact * (1 + 1e-12)
    assert exact <= induced_norm_inf_star(G, spec, "upper_bound") * (1 + 1e-12)
    # the maximising direction attains the exact value
    row = int(np.argmax([np.sqrt(np.sum([(np.abs(g[s]).sum() / w) ** 2 for s, w in zip(part.slices, D)]))
                         for g in G]))
    a = dual_maximizer(G[row], spec)
    assert norm_star(a, spec) == pytest.approx(1.0)
    assert np.max(np.abs(G @ a)) == pytest.approx(exact, rel=1e-9)


def test_certify_reference(ref_cfg):
    full = certify(ref_cfg(10))
    assert full.m == 1 and full.eta2 > 0 and full.eta1 == pytest.approx(0.1) and full.c == pytest.approx(0.19)
    one = certify(ref_cfg(1))
    assert one.m == 10 and one.eps_bar == math.inf
    cfg0 = ref_cfg(1)
    assert np.allclose(block_majorant(cfg0, 0.0), chain_matrix(10) * 1.0)
    three = certify(ref_cfg(3))
    assert three.eps == pytest.approx(min(0.2, three.eps_bar))
    for cert in (full, one, three):
        assert cert.residual() <= 1e-9


def test_certify_failure_stage():
    bad = PlatoonConfig(LinearLaw(1.0, 2.0, np.full(4, 10.0)), 2, 5.0)
    with pytest.raises(CertificationError) as exc:
        certify(bad)
    assert exc.value.stage == "formation-law"


def test_certificate_text_round_trip(ref_cfg, tmp_path):
    cert = certify(ref_cfg(3))
    path = tmp_path / "c.txt"
    cert.save(path)
    back = ContractionCertificate.load(path)
    assert back.partition == cert.partition and back.D == cert.D
    assert back.eta2 == cert.eta2 and back.eps_bar == cert.eps_bar and np.array_equal(back.Bbar, cert.Bbar)
    inf = ContractionCertificate.from_text(certify(ref_cfg(1)).to_text())
    assert inf.eps_bar == math.inf


def directional_measure(J, spec, h=1e-7, samples=300, seed=0):
    """Lower estimate of the composite-norm measure from the one-sided limit along sampled directions."""
    rng = np.random.default_rng(seed)
    I = np.eye(len(J))
    best = -np.inf
    for _ in range(samples):
        a = rng.normal(size=len(J))
        a /= norm_star(a, spec)
        best = max(best, (norm_star((I + h * J) @ a, spec) - 1.0) / h)
    return best


@pytest.mark.parametrize("r", [1, 3, 5])
def test_composite_measure_chain(ref_cfg, ref_law, r):
    cfg = ref_cfg(r)
    cert = certify(cfg)
    spec = cert.norm_spec
    bound = mu_weighted_2(cert.Bbar, cert.D)
    rng = np.random.default_rng(r)
    for _ in range(10):
        x = ref_law.e + rng.normal(0, 3, 10)
        Bx = block_matrix_at(cfg, x, cert.eps)
        mid = mu_weighted_2(Bx, cert.D)
        assert mid <= bound + 1e-12
        assert directional_measure(jacobian_fast(cfg, x, cert.eps), spec) <= mid + 1e-5


def test_certify_uncertified_tanh_law():
    law = TanhAffineLaw(0.5, 0.1, 0.3, 0.0, np.full(3, 10.0))
    with pytest.raises(CertificationError):
        certify(PlatoonConfig(law, 1, 5.0))
