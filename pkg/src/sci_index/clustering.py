"""Multi-wallet clustering applied before the flow concentration index.

Four steps run in order: common funder, temporal co-movement, custodial
filter, then Louvain community detection on the residual funding graph.
Merges compose through a union-find whose canonical id is the smallest
member id, so cluster labels do not depend on input order.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .metrics import aggregate_flows, hhi_flow

MIN_JOINT_BINS = 20
SHARE_THRESHOLD = 0.5
DEFAULT_DOWNWEIGHT = 0.1
MODULARITY_TOL = 1e-9


class UnionFind:
    def __init__(self, items: Iterable[str] = ()):
        self.parent: dict[str, str] = {}
        for x in items:
            self.add(x)

    def add(self, x: str) -> None:
        self.parent.setdefault(x, x)

    def find(self, x: str) -> str:
        self.add(x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: str, b: str) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        # smaller id becomes the root: canonical labels are min member ids
        if rb < ra:
            ra, rb = rb, ra
        self.parent[rb] = ra
        return True

    def groups(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = defaultdict(list)
        for x in self.parent:
            out[self.find(x)].append(x)
        return {k: sorted(v) for k, v in out.items()}


@dataclass(frozen=True)
class FundingEdge:
    funder: str
    funded: str
    amount: float = 0.0
    first_deposit: bool = True


@dataclass
class WalletGraph:
    wallets: set[str] = field(default_factory=set)
    edges: list[FundingEdge] = field(default_factory=list)
    activity: dict[str, np.ndarray] = field(default_factory=dict)
    custodial: set[str] = field(default_factory=set)

    def __post_init__(self):
        for e in self.edges:
            self.wallets.update((e.funder, e.funded))
        self.wallets.update(self.activity)
        self.wallets.update(self.custodial)
        lengths = {len(v) for v in self.activity.values()}
        if len(lengths) > 1:
            raise ValueError("activity series must share a common bin index")
        self.activity = {k: np.asarray(v, dtype=int) for k, v in self.activity.items()}


Merge = tuple[str, str]


def cluster_common_funder(graph: WalletGraph) -> list[Merge]:
    """Pairs of wallets whose first deposit came from the same non-custodial source."""
    by_source: dict[str, list[str]] = defaultdict(list)
    for e in graph.edges:
        if e.first_deposit and e.funder not in graph.custodial:
            by_source[e.funder].append(e.funded)
    merges = []
    for source in sorted(by_source):
        funded = sorted(set(by_source[source]))
        merges.extend((funded[0], other) for other in funded[1:])
    return merges


def same_direction_share(a: np.ndarray, b: np.ndarray) -> tuple[float, int]:
    """Share of jointly active bins with identical sign, and the joint-bin count."""
    joint = (a != 0) & (b != 0)
    n = int(joint.sum())
    if n == 0:
        return 0.0, 0
    return float(np.mean(a[joint] == b[joint])), n


def cluster_temporal(
    graph: WalletGraph,
    share_threshold: float = SHARE_THRESHOLD,
    min_joint_bins: int = MIN_JOINT_BINS,
) -> list[Merge]:
    wallets = sorted(w for w in graph.activity if w not in graph.custodial)
    merges = []
    for a, b in itertools.combinations(wallets, 2):
        share, n = same_direction_share(graph.activity[a], graph.activity[b])
        if n >= min_joint_bins and share > share_threshold:
            merges.append((a, b))
    return merges


def filter_custodial(
    flows: Mapping[str, float],
    custodial: Iterable[str],
    mode: str = "exclude",
    downweight: float = DEFAULT_DOWNWEIGHT,
) -> dict[str, float]:
    if mode not in ("exclude", "downweight"):
        raise ValueError(f"unknown custodial mode '{mode}'")
    if mode == "downweight" and not 0.0 < downweight < 1.0:
        raise ValueError("downweight factor must lie in (0, 1)")
    listed = set(custodial)
    out = {}
    for wallet, value in flows.items():
        if wallet in listed:
            if mode == "exclude":
                continue
            value = value * downweight
        out[wallet] = value
    return out


# ---------------------------------------------------------------------------
# community detection


def _undirected_weights(edges: Iterable[FundingEdge], nodes: set[str]) -> dict[str, dict[str, float]]:
    adj: dict[str, dict[str, float]] = {n: {} for n in nodes}
    for e in edges:
        if e.funder in nodes and e.funded in nodes and e.funder != e.funded:
            w = e.amount if e.amount > 0 else 1.0
            adj[e.funder][e.funded] = adj[e.funder].get(e.funded, 0.0) + w
            adj[e.funded][e.funder] = adj[e.funded].get(e.funder, 0.0) + w
    return adj


def modularity(adj: Mapping[str, Mapping[str, float]], partition: Mapping[str, str]) -> float:
    """Newman modularity of a weighted undirected graph (self-loops excluded)."""
    two_m = sum(sum(nb.values()) for nb in adj.values())
    if two_m == 0:
        return 0.0
    inside: dict[str, float] = defaultdict(float)
    degree: dict[str, float] = defaultdict(float)
    for u, nb in adj.items():
        cu = partition[u]
        degree[cu] += sum(nb.values())
        for v, w in nb.items():
            if partition[v] == cu:
                inside[cu] += w
    return sum(inside[c] / two_m - (degree[c] / two_m) ** 2 for c in degree)


def _local_moving(adj, node_weight_self, order, trace):
    """One Louvain level: move nodes between communities while modularity rises."""
    two_m = sum(sum(nb.values()) for nb in adj.values()) + sum(node_weight_self.values())
    k = {u: sum(adj[u].values()) + node_weight_self.get(u, 0.0) for u in order}
    comm = {u: u for u in order}
    tot = dict(k)
    improved = False
    moved = True
    while moved:
        moved = False
        for u in order:
            cu = comm[u]
            links: dict[str, float] = defaultdict(float)
            for v, w in adj[u].items():
                links[comm[v]] += w
            tot[cu] -= k[u]
            # gain of inserting u into c relative to leaving it isolated
            base = links.get(cu, 0.0) - tot[cu] * k[u] / two_m
            best_c, best_gain = cu, base
            for c in sorted(links):
                gain = links[c] - tot[c] * k[u] / two_m
                if gain > best_gain + 0.5 * MODULARITY_TOL * two_m:
                    best_c, best_gain = c, gain
            tot[best_c] += k[u]
            if best_c != cu:
                comm[u] = best_c
                moved = improved = True
                if trace is not None:
                    trace.append(2.0 * (best_gain - base) / two_m)
    return comm, improved


def louvain(
    adj: Mapping[str, Mapping[str, float]], trace: Optional[list] = None
) -> dict[str, str]:
    """Louvain modularity maximization; returns node -> community (min member id).

    ``trace`` collects the modularity gain of every accepted move.
    """
    nodes = sorted(adj)
    members = {u: [u] for u in nodes}
    cur_adj = {u: dict(adj[u]) for u in nodes}
    self_w: dict[str, float] = {u: 0.0 for u in nodes}
    while True:
        order = sorted(cur_adj)
        comm, improved = _local_moving(cur_adj, self_w, order, trace)
        if not improved:
            break
        # aggregate communities into super-nodes
        new_members: dict[str, list[str]] = defaultdict(list)
        for u in order:
            new_members[comm[u]].extend(members[u])
        new_adj: dict[str, dict[str, float]] = {c: {} for c in new_members}
        new_self: dict[str, float] = {c: 0.0 for c in new_members}
        for u in order:
            new_self[comm[u]] += self_w[u]
            for v, w in cur_adj[u].items():
                cu, cv = comm[u], comm[v]
                if cu == cv:
                    new_self[cu] += w
                else:
                    new_adj[cu][cv] = new_adj[cu].get(cv, 0.0) + w
        members, cur_adj, self_w = dict(new_members), new_adj, new_self
    out = {}
    for group in members.values():
        label = min(group)
        for u in group:
            out[u] = label
    return out


def community_detect(graph: WalletGraph, residual: Optional[set[str]] = None) -> list[Merge]:
    """Louvain communities on the undirected funding graph, weighted by amount."""
    nodes = set(graph.wallets) if residual is None else set(residual)
    adj = _undirected_weights(graph.edges, nodes)
    adj = {u: nb for u, nb in adj.items() if nb}
    if not adj:
        return []
    part = louvain(adj)
    groups: dict[str, list[str]] = defaultdict(list)
    for u, c in part.items():
        groups[c].append(u)
    merges = []
    for c in sorted(groups):
        g = sorted(groups[c])
        merges.extend((g[0], other) for other in g[1:])
    return merges


# ---------------------------------------------------------------------------
# protocol


@dataclass(frozen=True)
class ClusterConfig:
    share_threshold: float = SHARE_THRESHOLD
    min_joint_bins: int = MIN_JOINT_BINS
    custodial_mode: str = "exclude"
    downweight: float = DEFAULT_DOWNWEIGHT
    use_common_funder: bool = True
    use_temporal: bool = True
    use_community: bool = True


@dataclass
class ClusterMap:
    assignment: dict[str, str]
    provenance: dict[Merge, list[str]]
    custodial: set[str] = field(default_factory=set)
    config: ClusterConfig = field(default_factory=ClusterConfig)

    def __getitem__(self, wallet: str) -> str:
        return self.assignment.get(wallet, wallet)

    def get(self, wallet: str, default: Optional[str] = None) -> Optional[str]:
        return self.assignment.get(wallet, default)

    def clusters(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = defaultdict(list)
        for w, c in self.assignment.items():
            out[c].append(w)
        return {k: sorted(v) for k, v in sorted(out.items())}

    def apply(self, flows: Mapping[str, float]) -> dict[str, float]:
        """Custodial filter, then per-cluster aggregation of absolute flows."""
        filtered = filter_custodial(flows, self.custodial, self.config.custodial_mode, self.config.downweight)
        return aggregate_flows(filtered, self.assignment)


def build_cluster_map(graph: WalletGraph, config: Optional[ClusterConfig] = None) -> ClusterMap:
    config = config or ClusterConfig()
    uf = UnionFind(sorted(graph.wallets))
    provenance: dict[Merge, list[str]] = defaultdict(list)

    def record(merges: Sequence[Merge], step: str) -> None:
        for a, b in merges:
            uf.union(a, b)
            provenance[tuple(sorted((a, b)))].append(step)

    if config.use_common_funder:
        record(cluster_common_funder(graph), "common_funder")
    if config.use_temporal:
        record(
            cluster_temporal(graph, config.share_threshold, config.min_joint_bins),
            "temporal",
        )
    # custodial wallets never join clusters; their flows are filtered at apply()
    if config.use_community:
        groups = uf.groups()
        residual = {
            w
            for w in graph.wallets
            if len(groups[uf.find(w)]) == 1 and w not in graph.custodial
        }
        record(community_detect(graph, residual), "community")
    assignment = {w: uf.find(w) for w in sorted(graph.wallets)}
    return ClusterMap(assignment, dict(provenance), set(graph.custodial), config)


@dataclass(frozen=True)
class HhiRobustness:
    hhi_raw: float
    hhi_clustered: float
    gap: float

    def as_dict(self) -> dict:
        return {"hhi_raw": self.hhi_raw, "hhi_clustered": self.hhi_clustered, "gap": self.gap}


def hhi_robustness_report(flows: Mapping[str, float], cluster_map) -> HhiRobustness:
    """Concentration with and without clustering; a large gap flags wallet splitting."""
    raw = hhi_flow(flows)
    if isinstance(cluster_map, ClusterMap):
        clustered_flows = aggregate_flows(flows, cluster_map.assignment)
    else:
        clustered_flows = aggregate_flows(flows, cluster_map)
    clustered = hhi_flow(clustered_flows)
    return HhiRobustness(raw, clustered, clustered - raw)


def synthetic_operator_graph(
    wallets: Sequence[str],
    fraction: float,
    rng: np.random.Generator,
    funder: str = "operator",
    amount: float = 1000.0,
) -> WalletGraph:
    """Test scaffolding: one operator funds a random ``fraction`` of the wallets.

    The remaining wallets get distinct funders, so they stay unmerged.
    """
    wallets = list(wallets)
    n_op = int(round(fraction * len(wallets)))
    chosen = set(rng.choice(len(wallets), n_op, replace=False).tolist()) if n_op else set()
    edges = []
    for i, w in enumerate(wallets):
        source = funder if i in chosen else f"src_{w}"
        edges.append(FundingEdge(source, w, amount, True))
    return WalletGraph(set(wallets), edges)
