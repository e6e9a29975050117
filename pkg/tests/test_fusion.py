import itertools
import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from conftest import gm1, random_mixture
from gmconsensus.errors import DegenerateInputError, DomainError
from gmconsensus.fusion import (
    FORBIDDEN,
    FusionWeights,
    TgmMessage,
    cardinality_consensus_step,
    ccf_step,
    cgma_fuse,
    cgma_step,
    cgmm_step,
    flood_mean,
    gc_tuples,
    gci_fuse,
    gm_power,
    gm_product,
    hungarian,
    message_cost,
    metropolis_matrix,
    metropolis_weights,
    pack_mixture,
    pool_tgms,
    unpack_mixture,
)
from gmconsensus.gm import GaussianMixture, RankRule, ReductionConfig, select_tgm
from gmconsensus.network import NetworkGraph, generate_network


def path(n):
    return NetworkGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def star(leaves):
    return NetworkGraph.from_edges(leaves + 1, [(0, i) for i in range(1, leaves + 1)])


def half(a=0, b=1):
    return FusionWeights(a, {a: 0.5, b: 0.5})


# --- Metropolis ------------------------------------------------------------

def test_metropolis_isolated():
    g = NetworkGraph.from_edges(1, [])
    assert metropolis_weights(g, 0).weights == {0: 1.0}


def test_metropolis_two_node_path():
    assert metropolis_weights(path(2), 0).weights == {0: 0.5, 1: 0.5}


def test_metropolis_star():
    g = star(3)
    c = metropolis_weights(g, 0)
    assert c.weights == {0: 0.25, 1: 0.25, 2: 0.25, 3: 0.25}
    leaf = metropolis_weights(g, 2)
    assert leaf.weights == {0: 0.25, 2: 0.75}
    assert leaf[1] == 0.0


@pytest.mark.parametrize("seed", range(100))
def test_metropolis_doubly_stochastic(seed):
    rng = np.random.default_rng(seed)
    g = generate_network(int(rng.integers(2, 13)), comm_radius=900.0, seed=seed)
    M = metropolis_matrix(g)
    np.testing.assert_allclose(M.sum(0), 1.0, atol=1e-12)
    np.testing.assert_allclose(M.sum(1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(M, M.T)
    assert np.all(M >= 0)


# --- cardinality consensus -------------------------------------------------

def test_cardinality_no_neighbors():
    assert cardinality_consensus_step(1.7, {}, FusionWeights(0, {0: 1.0})) == 1.7


def test_cardinality_two_node():
    assert cardinality_consensus_step(1.0, {1: 3.0}, half()) == 2.0
    assert cardinality_consensus_step(3.0, {0: 1.0}, half(1, 0)) == 2.0


def test_cardinality_fixed_point():
    g = star(4)
    for a in range(g.n):
        w = metropolis_weights(g, a)
        assert cardinality_consensus_step(2.5, {b: 2.5 for b in g.neighbors(a)}, w) == pytest.approx(2.5, abs=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_cca_conserves_sum_and_shrinks_spread(seed):
    rng = np.random.default_rng(seed)
    g = generate_network(8, comm_radius=900.0, seed=seed)
    W = rng.uniform(0, 3, g.n)
    wts = [metropolis_weights(g, a) for a in range(g.n)]
    spread = W.max() - W.min()
    for _ in range(15):
        W = np.array([cardinality_consensus_step(W[a], {b: W[b] for b in g.neighbors(a)}, wts[a])
                      for a in range(g.n)])
        new_spread = W.max() - W.min()
        assert new_spread <= spread + 1e-12
        spread = new_spread


def test_cca_sum_per_round():
    g = generate_network(10, comm_radius=800.0, seed=4)
    rng = np.random.default_rng(1)
    W = rng.uniform(0, 3, g.n)
    wts = [metropolis_weights(g, a) for a in range(g.n)]
    for _ in range(10):
        total = math.fsum(W)
        W = np.array([cardinality_consensus_step(W[a], {b: W[b] for b in g.neighbors(a)}, wts[a])
                      for a in range(g.n)])
        assert abs(math.fsum(W) - total) <= 1e-9


# --- CCF -------------------------------------------------------------------

def test_ccf_single_node():
    t = {0: (1.5, 0)}
    assert ccf_step(t, []) == t


def test_ccf_three_node_path():
    W = [1.0, 2.0, 3.0]
    tables = [{a: (W[a], 0)} for a in range(3)]
    g = path(3)
    tables = [ccf_step(tables[a], [tables[b] for b in sorted(g.neighbors(a))]) for a in range(3)]
    assert flood_mean(tables[1]) == 2.0
    assert flood_mean(tables[0]) == 1.5
    assert flood_mean(tables[2]) == 2.5


@pytest.mark.parametrize("seed", range(10))
def test_ccf_exact_at_diameter(seed):
    g = generate_network(9, comm_radius=700.0, seed=seed)
    rng = np.random.default_rng(seed)
    W = rng.uniform(0, 3, g.n)
    tables = [{a: (W[a], 0)} for a in range(g.n)]
    for _ in range(g.diameter):
        tables = [ccf_step(tables[a], [tables[b] for b in sorted(g.neighbors(a))]) for a in range(g.n)]
    for t in tables:
        assert len(t) == g.n
        assert flood_mean(t) == math.fsum(W) / g.n


# --- tuple cost and binary dump --------------------------------------------

def test_gc_tuples_4d():
    assert gc_tuples(4) == 15


def test_message_cost_examples():
    empty = GaussianMixture.empty(4)
    three = GaussianMixture(np.ones(3), np.zeros((3, 4)), np.repeat(np.eye(4)[None], 3, 0), 4)
    assert message_cost(TgmMessage(0, empty, 1.0)) == 1
    assert message_cost(TgmMessage(0, three, 1.0)) == 46
    flood = {i: (1.0, 0) for i in range(5)}
    assert message_cost(TgmMessage(0, three, 1.0, flood)) == 51
    assert message_cost(TgmMessage(0, three)) == 45


def test_pack_golden():
    g = GaussianMixture([0.5], [[1.0, 2.0]], [[[4.0, 0.5], [0.5, 9.0]]], 2)
    expected = struct.pack("<6d", 0.5, 1.0, 2.0, 4.0, 0.5, 9.0)
    assert pack_mixture(g) == expected
    assert pack_mixture(g).hex() == "000000000000e03f000000000000f03f0000000000000040" \
                                    "0000000000001040000000000000e03f0000000000002240"


def test_pack_round_trip(rng):
    g = random_mixture(rng, 5, 4)
    back = unpack_mixture(pack_mixture(g), 4)
    np.testing.assert_array_equal(back.weights, g.weights)
    np.testing.assert_array_equal(back.means, g.means)
    np.testing.assert_allclose(back.covs, 0.5 * (g.covs + np.swapaxes(g.covs, 1, 2)), rtol=0, atol=0)
    assert len(pack_mixture(g)) == 8 * 15 * 5


def test_unpack_bad_length():
    with pytest.raises(DomainError):
        unpack_mixture(b"\x00" * 24, 4)


# --- Hungarian -------------------------------------------------------------

def brute(C):
    n, m = C.shape
    if n <= m:
        return min(sum(C[i, p[i]] for i in range(n)) for p in itertools.permutations(range(m), n))
    return brute(C.T)


def test_hungarian_trivial():
    assert hungarian(np.array([[5.0]])).pairs == ((0, 0),)


def test_hungarian_2x2():
    a = hungarian(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert set(a.pairs) == {(0, 0), (1, 1)}
    assert a.cost == 2.0


def test_hungarian_empty():
    a = hungarian(np.zeros((0, 3)))
    assert a.pairs == () and a.unassigned_cols == (0, 1, 2)


def test_hungarian_forbidden_unassigned():
    C = np.array([[1.0, FORBIDDEN], [FORBIDDEN, FORBIDDEN]])
    a = hungarian(C)
    assert a.pairs == ((0, 0),)
    assert a.unassigned_rows == (1,)


@pytest.mark.parametrize("seed", range(200))
def test_hungarian_bruteforce_4x4_integer(seed):
    C = np.random.default_rng(seed).integers(0, 20, (4, 4)).astype(float)
    assert hungarian(C).cost == brute(C)


@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(1, 6))
def test_hungarian_one_to_one_or_zero(seed, n, m):
    C = np.random.default_rng(seed).uniform(0, 10, (n, m))
    a = hungarian(C)
    rows = [r for r, _ in a.pairs]
    cols = [c for _, c in a.pairs]
    assert len(set(rows)) == len(rows) == min(n, m)
    assert len(set(cols)) == len(cols)
    assert sorted(rows + list(a.unassigned_rows)) == list(range(n))
    assert sorted(cols + list(a.unassigned_cols)) == list(range(m))
    r, c = linear_sum_assignment(C)
    assert a.cost == pytest.approx(C[r, c].sum(), rel=1e-12)


# --- CGMM ------------------------------------------------------------------

def test_cgmm_pooled_identity():
    local = gm1([1.2, 0.8], means=[0, 100])
    m1 = TgmMessage(1, gm1([1.0, 0.8], means=[200, 300]), 1.8)
    m2 = TgmMessage(2, gm1([1.9], means=[400]), 1.9)
    pooled = pool_tgms(local, [m2, m1])
    assert pooled.weight_sum == math.fsum([2.0, 1.8, 1.9]) == 5.7
    np.testing.assert_array_equal(pooled.means[:, 0], [0, 100, 200, 300, 400])


def test_cgmm_hand_two_sensors():
    local = gm1([1.0], means=[3.0], covs=[2.0])
    msg = TgmMessage(1, gm1([1.0], means=[3.0], covs=[2.0]), 1.0)
    out = cgmm_step(local, [msg], half(), ReductionConfig(1e-4, 5.0, 50))
    assert len(out.mixture) == 1
    assert out.mixture.weights[0] == 1.0 and out.cardinality == 1.0
    assert out.mixture.means[0, 0] == 3.0 and out.mixture.covs[0, 0, 0] == 2.0


def test_cgmm_no_messages_keeps_weight():
    local = gm1([0.7, 0.5], means=[0, 100])
    out = cgmm_step(local, [], FusionWeights(0, {0: 1.0}))
    assert out.mixture.weight_sum == pytest.approx(1.2, rel=1e-15)


@given(st.integers(0, 10**6))
def test_cgmm_rescale_identity(seed):
    rng = np.random.default_rng(seed)
    local = random_mixture(rng, 6, 4, spread=20)
    msgs = []
    for b in (1, 2):
        g = random_mixture(rng, 4, 4, spread=20)
        msgs.append(TgmMessage(b, select_tgm(g).target_likely, g.weight_sum))
    w = FusionWeights(0, {0: 0.4, 1: 0.3, 2: 0.3})
    out = cgmm_step(local, msgs, w)
    assert abs(out.mixture.weight_sum - out.cardinality) <= 1e-12 * max(1.0, out.cardinality)
    assert out.cardinality == pytest.approx(0.4 * local.weight_sum + 0.3 * msgs[0].weight_sum_cardinality
                                            + 0.3 * msgs[1].weight_sum_cardinality, rel=1e-14)


def test_cgmm_degenerate_rescale():
    with pytest.raises(DegenerateInputError):
        cgmm_step(GaussianMixture.empty(1), [TgmMessage(1, GaussianMixture.empty(1), 2.0)], half())


# --- CGMA ------------------------------------------------------------------

def test_cgma_hand_1d():
    host = gm1([0.8], means=[0.0], covs=[1.0])
    msg = TgmMessage(1, gm1([0.6], means=[1.0], covs=[1.0]), 0.6)
    fused = cgma_fuse(host, [0], [msg], half(), 5.0)
    assert fused.weights[0] == pytest.approx(0.7, abs=1e-12)
    assert fused.means[0, 0] == pytest.approx(0.4286, abs=1e-4)
    assert fused.covs[0, 0, 0] == pytest.approx(1.1837, abs=1e-4)


def test_cgma_identical_unchanged():
    host = gm1([0.9], means=[2.0], covs=[3.0])
    out = cgma_step(host, [0], [TgmMessage(1, host, 0.9)], half(), 5.0)
    assert out.mixture.weights[0] == pytest.approx(0.9, rel=1e-15)
    assert out.mixture.means[0, 0] == 2.0 and out.mixture.covs[0, 0, 0] == 3.0


def test_cgma_no_messages_only_rescale():
    host = gm1([0.9, 0.1], means=[0, 50])
    out = cgma_step(host, [0], [], FusionWeights(0, {0: 1.0}))
    np.testing.assert_array_equal(out.mixture.means, host.means)
    assert out.mixture.weight_sum == pytest.approx(1.0)


def test_cgma_gate_cancels():
    host = gm1([0.8], means=[0.0])
    msg = TgmMessage(1, gm1([0.6], means=[6.0]), 0.6)
    fused = cgma_fuse(host, [0], [msg], half(), 5.0)
    assert fused.weights[0] == 0.8 and fused.means[0, 0] == 0.0


@given(st.integers(0, 10**6), st.integers(1, 8))
def test_cgma_size_invariant_and_omr(seed, n):
    rng = np.random.default_rng(seed)
    host = random_mixture(rng, n, 2, spread=3)
    sel = select_tgm(host, RankRule(max(1, n // 2)))
    msgs = [TgmMessage(b, random_mixture(rng, 3, 2, spread=3), 1.0) for b in (2, 1)]
    w = FusionWeights(0, {0: 0.5, 1: 0.25, 2: 0.25})
    out = cgma_step(host, sel.indices, msgs, w, 5.0)
    assert len(out.mixture) == n
    assert out.mixture.weight_sum == pytest.approx(out.cardinality, rel=1e-12)
    fused = cgma_fuse(host, sel.indices, msgs, w, 5.0)
    for i in sel.indices:
        if not np.array_equal(fused.means[i], host.means[i]):
            # fused covariance is the min-trace adjusted covariance of its group
            assert np.trace(fused.covs[i]) <= np.trace(host.covs[i] + np.outer(fused.means[i] - host.means[i],
                                                                                fused.means[i] - host.means[i])) + 1e-9


# --- GCI -------------------------------------------------------------------

def test_gci_single_source_identity(rng):
    g = random_mixture(rng, 4, 4)
    assert gci_fuse(g, [], FusionWeights(0, {0: 1.0})) is g


def test_gci_identical_single_gc():
    g = gm1([1.0], means=[3.0], covs=[2.0])
    out = gci_fuse(g, [TgmMessage(1, g)], half())
    assert len(out) == 1
    assert out.means[0, 0] == pytest.approx(3.0, abs=1e-12)
    assert out.covs[0, 0, 0] == pytest.approx(2.0, abs=1e-12)


def test_gci_closed_form_ci():
    a = gm1([1.0], means=[0.0], covs=[2.0])
    b = gm1([1.0], means=[3.0], covs=[4.0])
    out = gci_fuse(a, [TgmMessage(1, b)], half())
    assert out.covs[0, 0, 0] == pytest.approx(8.0 / 3.0, abs=1e-9)
    assert out.means[0, 0] == pytest.approx(1.0, abs=1e-9)


def test_gci_unnormalised_weight_is_bhattacharyya():
    a = gm1([1.0], means=[0.0], covs=[2.0])
    b = gm1([1.0], means=[3.0], covs=[4.0])
    out = gci_fuse(a, [TgmMessage(1, b)], half(), normalize="none")
    # integral of sqrt(N(0,2) N(3,4)) in closed form
    bc = math.sqrt(2 * math.sqrt(2 * 4) / (2 + 4)) * math.exp(-(3.0**2) / (4 * (2 + 4)))
    assert out.weights[0] == pytest.approx(bc, rel=1e-12)


def test_gci_geometric_normalisation():
    a = gm1([0.9], means=[0.0], covs=[2.0])
    b = gm1([0.4], means=[3.0], covs=[4.0])
    out = gci_fuse(a, [TgmMessage(1, b)], half())
    assert out.weight_sum == pytest.approx(math.sqrt(0.9 * 0.4), rel=1e-12)


@given(st.integers(0, 10**6))
def test_gci_self_fusion_identity(seed):
    rng = np.random.default_rng(seed)
    g = GaussianMixture(rng.uniform(0.1, 1, 3), np.array([[0.0] * 4, [500.0] * 4, [-500.0] * 4]) + rng.normal(0, 1, (3, 4)),
                        np.stack([np.diag(rng.uniform(1, 5, 4)) for _ in range(3)]), 4)
    out = gci_fuse(g, [TgmMessage(1, g)], half(), pair_gate_sq=100.0)
    assert len(out) == 3
    np.testing.assert_allclose(out.means, g.means, rtol=0, atol=1e-9 * 500)
    np.testing.assert_allclose(out.covs, g.covs, rtol=1e-9)


def test_gm_power_exact_single_gaussian():
    # (w N(x;m,P))^om integrates to w^om (2pi P)^{(1-om)/2} om^{-1/2} in 1-D
    g = gm1([0.8], means=[1.0], covs=[3.0])
    p = gm_power(g, 0.25)
    expected = 0.8**0.25 * (2 * math.pi * 3.0) ** 0.375 * 0.25**-0.5
    assert p.weights[0] == pytest.approx(expected, rel=1e-12)
    assert p.covs[0, 0, 0] == pytest.approx(12.0)


def test_gm_product_integral():
    a = gm1([0.5], means=[0.0], covs=[1.0])
    b = gm1([2.0], means=[1.0], covs=[3.0])
    p = gm_product(a, b)
    expected = 0.5 * 2.0 * math.exp(-0.5 * 1.0 / 4.0) / math.sqrt(2 * math.pi * 4.0)
    assert p.weights[0] == pytest.approx(expected, rel=1e-12)
    assert p.covs[0, 0, 0] == pytest.approx(0.75)
    assert p.means[0, 0] == pytest.approx(0.25)


def test_gci_exponents_must_sum_to_one():
    g = gm1([1.0])
    with pytest.raises(DomainError):
        gci_fuse(g, [TgmMessage(1, g)], FusionWeights(0, {0: 0.5, 1: 0.2}))


def test_gci_share_threshold():
    local = gm1([0.9, 0.004], means=[0, 40])
    out = gci_fuse(local, [TgmMessage(1, local)], half(), w_c=0.005)
    assert len(out) == 1
