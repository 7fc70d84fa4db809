import itertools

import numpy as np
import pytest

from sci_index.clustering import (
    ClusterConfig,
    FundingEdge,
    UnionFind,
    WalletGraph,
    build_cluster_map,
    cluster_common_funder,
    cluster_temporal,
    community_detect,
    filter_custodial,
    hhi_robustness_report,
    louvain,
    modularity,
    synthetic_operator_graph,
)
from sci_index.dgp import builtin_specs, path_rng, sample_path
from sci_index.metrics import NoTradeError, compute_sci_for_shock, hhi_flow


def set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1 :]
        yield [[first]] + part


def q_matrix(A, labels):
    """Newman modularity from the adjacency matrix."""
    k = A.sum(axis=1)
    two_m = A.sum()
    same = labels[:, None] == labels[None, :]
    return float(((A - np.outer(k, k) / two_m) * same).sum() / two_m)


def adj_from_matrix(A, names):
    return {names[i]: {names[j]: A[i, j] for j in range(len(names)) if A[i, j] > 0 and i != j} for i in range(len(names))}


def barbell():
    A = np.zeros((6, 6))
    for grp in ((0, 1, 2), (3, 4, 5)):
        for i, j in itertools.combinations(grp, 2):
            A[i, j] = A[j, i] = 1.0
    A[2, 3] = A[3, 2] = 1.0
    return A


class TestUnionFind:
    def test_min_id_root(self):
        uf = UnionFind(["c", "b", "a"])
        uf.union("c", "b")
        uf.union("b", "a")
        assert {uf.find(x) for x in "abc"} == {"a"}

    def test_order_independent(self):
        pairs = [("d", "b"), ("b", "e"), ("a", "c")]
        roots = []
        for perm in itertools.permutations(pairs):
            uf = UnionFind("abcde")
            for a, b in perm:
                uf.union(a, b)
            roots.append(tuple(uf.find(x) for x in "abcde"))
        assert len(set(roots)) == 1


class TestCommonFunder:
    def test_shared_source(self):
        g = WalletGraph(edges=[FundingEdge("X", "a"), FundingEdge("X", "b")])
        assert cluster_common_funder(g) == [("a", "b")]

    def test_hand_trace(self):
        g = WalletGraph(edges=[FundingEdge("A", "B"), FundingEdge("A", "C"), FundingEdge("D", "E")])
        uf = UnionFind(g.wallets)
        for a, b in cluster_common_funder(g):
            uf.union(a, b)
        assert uf.find("B") == uf.find("C") == "B"
        assert uf.find("E") == "E"

    def test_custodial_excluded(self):
        g = WalletGraph(
            edges=[FundingEdge("exch", "a"), FundingEdge("exch", "b")], custodial={"exch"}
        )
        assert cluster_common_funder(g) == []

    def test_not_first_deposit(self):
        g = WalletGraph(edges=[FundingEdge("X", "a"), FundingEdge("X", "b", first_deposit=False)])
        assert cluster_common_funder(g) == []


class TestTemporal:
    def test_identical(self):
        s = np.tile([1, -1, 0, 1], 10)
        g = WalletGraph(activity={"a": s, "b": s})
        assert cluster_temporal(g) == [("a", "b")]

    def test_anti(self):
        s = np.tile([1, -1, 1, 1], 10)
        g = WalletGraph(activity={"a": s, "b": -s})
        assert cluster_temporal(g) == []

    def test_share_example(self):
        a = np.ones(10, dtype=int)
        b = np.r_[np.ones(6), -np.ones(4)].astype(int)
        g = WalletGraph(activity={"a": a, "b": b})
        assert cluster_temporal(g, 0.5, min_joint_bins=10) == [("a", "b")]
        # the default support floor blocks merges on only 10 joint bins
        assert cluster_temporal(g) == []

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        acts = {w: rng.integers(-1, 2, 60) for w in "abcdef"}
        fwd = set(cluster_temporal(WalletGraph(activity=acts), 0.4))
        rev = set(cluster_temporal(WalletGraph(activity=dict(reversed(list(acts.items())))), 0.4))
        assert fwd == rev


class TestCustodial:
    def test_empty_identity(self):
        assert filter_custodial({"a": 1.0, "b": -2.0}, []) == {"a": 1.0, "b": -2.0}

    def test_exclude_sole(self):
        with pytest.raises(NoTradeError):
            hhi_flow(filter_custodial({"x": 5.0}, ["x"]))

    def test_downweight(self):
        out = filter_custodial({"a": 1.0, "b": 1.0}, ["b"], "downweight", 0.5)
        assert hhi_flow(out) == pytest.approx(5 / 9)

    def test_lambda_range(self):
        with pytest.raises(ValueError):
            filter_custodial({"a": 1.0}, ["a"], "downweight", 1.5)


class TestModularity:
    @pytest.mark.parametrize("seed", range(6))
    def test_matches_matrix_formula_all_partitions(self, seed):
        rng = np.random.default_rng(seed)
        n = 3 + seed % 4
        A = np.triu(rng.random((n, n)) * (rng.random((n, n)) < 0.6), 1)
        A = A + A.T
        if A.sum() == 0:
            A[0, 1] = A[1, 0] = 1.0
        names = [f"w{i}" for i in range(n)]
        adj = adj_from_matrix(A, names)
        for part in set_partitions(list(range(n))):
            labels = np.empty(n, dtype=int)
            for c, grp in enumerate(part):
                labels[grp] = c
            mine = modularity(adj, {names[i]: str(labels[i]) for i in range(n)})
            assert mine == pytest.approx(q_matrix(A, labels), abs=1e-12)

    def test_barbell_brute_force(self):
        A = barbell()
        names = [f"n{i}" for i in range(6)]
        best = max(
            set_partitions(list(range(6))),
            key=lambda p: q_matrix(A, np.array([next(c for c, g in enumerate(p) if i in g) for i in range(6)])),
        )
        expected = sorted(sorted(names[i] for i in g) for g in best)
        part = louvain(adj_from_matrix(A, names))
        got = {}
        for node, c in part.items():
            got.setdefault(c, []).append(node)
        assert sorted(sorted(v) for v in got.values()) == expected == [["n0", "n1", "n2"], ["n3", "n4", "n5"]]

    def test_two_cliques(self):
        edges = [FundingEdge(a, b, 1.0) for a, b in itertools.combinations("abcd", 2)]
        edges += [FundingEdge(a, b, 1.0) for a, b in itertools.combinations("wxyz", 2)]
        merges = community_detect(WalletGraph(edges=edges))
        uf = UnionFind("abcdwxyz")
        for a, b in merges:
            uf.union(a, b)
        assert sorted(uf.groups().values()) == [list("abcd"), list("wxyz")]

    def test_single_edge(self):
        assert community_detect(WalletGraph(edges=[FundingEdge("a", "b", 3.0)])) == [("a", "b")]

    def test_empty(self):
        assert community_detect(WalletGraph()) == []

    def test_moves_strictly_increase(self):
        rng = np.random.default_rng(3)
        A = np.triu((rng.random((12, 12)) < 0.3) * 1.0, 1)
        A = A + A.T
        trace = []
        louvain(adj_from_matrix(A, [f"v{i:02d}" for i in range(12)]), trace)
        assert trace and all(g > 0 for g in trace)


class TestClusterMap:
    def test_empty_identity(self):
        m = build_cluster_map(WalletGraph(wallets={"a", "b"}))
        assert m.assignment == {"a": "a", "b": "b"}

    def test_disjoint_honest(self):
        g = WalletGraph(wallets={"a", "b", "c"}, activity={w: np.zeros(30, int) for w in "abc"})
        flows = {"a": 1.0, "b": -2.0, "c": 3.0}
        m = build_cluster_map(g)
        assert hhi_flow(m.apply(flows)) == pytest.approx(hhi_flow(flows))

    def test_provenance(self):
        g = WalletGraph(edges=[FundingEdge("X", "a"), FundingEdge("X", "b")])
        m = build_cluster_map(g, ClusterConfig(use_community=False))
        assert m["a"] == m["b"] == "a"
        assert m.provenance[("a", "b")] == ["common_funder"]

    def test_custodial_filtered_on_apply(self):
        g = WalletGraph(wallets={"a", "exch"}, custodial={"exch"})
        m = build_cluster_map(g)
        assert m.apply({"a": 1.0, "exch": 10.0}) == {"a": 1.0}

    def test_operator_injection_collapses_sci(self):
        spec = builtin_specs()["coord_manip_broad"]
        raw, clustered = [], []
        for i in range(20):
            p = sample_path(spec, path_rng(1, 7, i), i)
            flows = p.flow_map()
            g = synthetic_operator_graph(list(flows), 0.8, np.random.default_rng(i))
            m = build_cluster_map(g)
            raw.append(compute_sci_for_shock(p.logit_prices(), p.volumes(), flows))
            clustered.append(compute_sci_for_shock(p.logit_prices(), p.volumes(), m.apply(flows)))
        assert np.mean([c.hhi_flow for c in clustered]) > 0.5
        assert np.mean([c.hhi_flow for c in clustered]) > np.mean([c.hhi_flow for c in raw])
        assert np.mean([c.sci for c in clustered]) < 0.5 * np.mean([c.sci for c in raw])


class TestRobustness:
    def test_identity(self):
        r = hhi_robustness_report({"a": 1.0, "b": 2.0}, {})
        assert r.gap == 0.0

    def test_all_merged(self):
        n = 7
        flows = {f"w{i}": 1.0 for i in range(n)}
        r = hhi_robustness_report(flows, {w: "w0" for w in flows})
        assert r.gap == pytest.approx(1 - 1 / n)

    def test_example(self):
        r = hhi_robustness_report({"a": 1.0, "b": 1.0, "c": 2.0}, {"b": "a"})
        assert (r.hhi_raw, r.hhi_clustered, r.gap) == pytest.approx((0.375, 0.5, 0.125))
