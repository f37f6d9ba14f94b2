"""Archaeological relation graph: eras, attributes, and legal label assignments.

Nodes come in four kinds (dynasty, period, shape, characteristic) linked by
directed subsumption edges (parent subsumes child) and undirected exclusion
edges.  A binary labelling is legal when no excluded pair is jointly active
and every active child has at least one active parent inside the view.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

ENUMERATION_CAP = 20

Assignment = tuple[int, ...]


class GraphError(ValueError):
    pass


class CycleError(GraphError):
    pass


class OrphanError(GraphError):
    pass


class DuplicateNodeError(GraphError):
    pass


class LengthMismatchError(GraphError):
    pass


class TooLargeError(GraphError):
    pass


class Kind(str, Enum):
    DYNASTY = "dynasty"
    PERIOD = "period"
    SHAPE = "shape"
    CHARACTERISTIC = "characteristic"


class Scope(str, Enum):
    ERA = "era"
    ERA_SHAPE = "era_shape"
    ERA_CHARACTERISTIC = "era_characteristic"


@dataclass(frozen=True)
class NodeId:
    index: int
    kind: Kind
    name: str


@dataclass
class RelationGraph:
    """Validated, immutable-by-convention relation graph.

    Node indices are dense: dynasties first, then periods, shapes,
    characteristics.  `n` counts era nodes (dynasties + periods), `m` shapes
    and `k` characteristics.
    """

    nodes: list[NodeId]
    subsumption: frozenset[tuple[int, int]]  # (parent, child)
    exclusion: frozenset[frozenset[int]]
    n_dynasties: int
    n_periods: int
    m: int
    k: int

    @property
    def n(self) -> int:
        return self.n_dynasties + self.n_periods

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def by_name(self, name: str) -> NodeId:
        for node in self.nodes:
            if node.name == name:
                return node
        raise GraphError(f"unknown node {name!r}")

    def parents_of(self, index: int) -> list[int]:
        return sorted(p for (p, c) in self.subsumption if c == index)

    def children_of(self, index: int) -> list[int]:
        return sorted(c for (p, c) in self.subsumption if p == index)

    def period_parent(self, period_index: int) -> int:
        """The single dynasty parent of a period node (by global index)."""
        (parent,) = self.parents_of(period_index)
        return parent

    def view(self, scope: Scope) -> "GraphView":
        return GraphView(self, scope)

    def dynasty_indices(self) -> list[int]:
        return list(range(self.n_dynasties))

    def period_indices(self) -> list[int]:
        return list(range(self.n_dynasties, self.n))

    def shape_indices(self) -> list[int]:
        return list(range(self.n, self.n + self.m))

    def characteristic_indices(self) -> list[int]:
        return list(range(self.n + self.m, self.n + self.m + self.k))


def build_graph(
    nodes: list[tuple[str, Kind]] | list[NodeId],
    subsumption: list[tuple[str, str]] | list[tuple[int, int]],
    exclusion: list[tuple[str, str]] | list[tuple[int, int]] | None = None,
) -> RelationGraph:
    """Validate and construct a RelationGraph.

    Nodes may be given in any order; they are reindexed dynasty/period/shape/
    characteristic.  Edges may reference nodes by name or by position in the
    input list.  The mandated exclusion edges (all dynasty pairs, all period
    pairs, all shape pairs) are inserted automatically when absent.
    """
    raw: list[tuple[str, Kind]] = []
    for node in nodes:
        if isinstance(node, NodeId):
            raw.append((node.name, node.kind))
        else:
            name, kind = node
            raw.append((name, Kind(kind)))

    names = [name for name, _ in raw]
    seen = set()
    for name in names:
        if name in seen:
            raise DuplicateNodeError(f"duplicate node name {name!r}")
        seen.add(name)

    def resolve(ref, label: str) -> int:
        if isinstance(ref, str):
            try:
                return names.index(ref)
            except ValueError:
                raise GraphError(f"{label} references unknown node {ref!r}") from None
        ref = int(ref)
        if not 0 <= ref < len(names):
            raise GraphError(f"{label} references unknown node index {ref}")
        return ref

    sub_raw = [(resolve(p, "subsumption"), resolve(c, "subsumption")) for p, c in subsumption]
    exc_raw = [
        (resolve(a, "exclusion"), resolve(b, "exclusion")) for a, b in (exclusion or [])
    ]

    _check_acyclic(len(raw), sub_raw)

    # reindex: dynasties, periods, shapes, characteristics
    order = {Kind.DYNASTY: 0, Kind.PERIOD: 1, Kind.SHAPE: 2, Kind.CHARACTERISTIC: 3}
    perm = sorted(range(len(raw)), key=lambda i: (order[raw[i][1]], i))
    remap = {old: new for new, old in enumerate(perm)}
    nodes_out = [
        NodeId(index=new, kind=raw[old][1], name=raw[old][0])
        for new, old in enumerate(perm)
    ]
    sub = {(remap[p], remap[c]) for p, c in sub_raw}
    exc = {frozenset((remap[a], remap[b])) for a, b in exc_raw}

    counts = {kind: sum(1 for node in nodes_out if node.kind is kind) for kind in Kind}
    n_dyn = counts[Kind.DYNASTY]
    n_per = counts[Kind.PERIOD]
    n_shape = counts[Kind.SHAPE]
    n_char = counts[Kind.CHARACTERISTIC]
    if n_dyn == 0:
        raise GraphError("a relation graph needs at least one dynasty")

    kind_of = {node.index: node.kind for node in nodes_out}
    allowed = {
        (Kind.DYNASTY, Kind.PERIOD),
        (Kind.PERIOD, Kind.SHAPE),
        (Kind.PERIOD, Kind.CHARACTERISTIC),
    }
    for p, c in sub:
        pair = (kind_of[p], kind_of[c])
        if pair not in allowed:
            raise GraphError(
                f"subsumption {nodes_out[p].name!r} -> {nodes_out[c].name!r} links "
                f"{pair[0].value} to {pair[1].value}; not part of the era/attribute family"
            )

    for node in nodes_out:
        parents = [p for (p, c) in sub if c == node.index]
        if node.kind is Kind.PERIOD:
            if len(parents) == 0:
                raise OrphanError(f"period {node.name!r} has no dynasty parent")
            if len(parents) > 1:
                raise OrphanError(f"period {node.name!r} has multiple dynasty parents")
        elif node.kind in (Kind.SHAPE, Kind.CHARACTERISTIC):
            if len(parents) == 0:
                raise OrphanError(f"{node.kind.value} {node.name!r} has no period parent")

    for pair in exc:
        kinds = {kind_of[i] for i in pair}
        if kinds == {Kind.CHARACTERISTIC}:
            raise GraphError("characteristics are not mutually exclusive")
        if len(kinds) == 2 or not kinds <= {Kind.DYNASTY, Kind.PERIOD, Kind.SHAPE}:
            raise GraphError(
                "exclusion edges are only defined within dynasties, periods, or shapes"
            )

    for group in (
        range(n_dyn),
        range(n_dyn, n_dyn + n_per),
        range(n_dyn + n_per, n_dyn + n_per + n_shape),
    ):
        for a, b in itertools.combinations(group, 2):
            exc.add(frozenset((a, b)))

    return RelationGraph(
        nodes=nodes_out,
        subsumption=frozenset(sub),
        exclusion=frozenset(exc),
        n_dynasties=n_dyn,
        n_periods=n_per,
        m=n_shape,
        k=n_char,
    )


def _check_acyclic(n: int, edges: list[tuple[int, int]]) -> None:
    out: dict[int, list[int]] = {}
    indeg = [0] * n
    for p, c in edges:
        out.setdefault(p, []).append(c)
        indeg[c] += 1
    queue = [i for i in range(n) if indeg[i] == 0]
    visited = 0
    while queue:
        node = queue.pop()
        visited += 1
        for child in out.get(node, ()):
            indeg[child] -= 1
            if indeg[child] == 0:
                queue.append(child)
    if visited != n:
        raise CycleError("subsumption edges contain a cycle")


def graph_from_spec(spec: dict) -> RelationGraph:
    """Build a graph from the JSON schema layout.

    Expected keys: `dynasties` (names), `periods` ({name, parent}), `shapes`
    and `characteristics` ({name, parent_periods}).
    """
    nodes: list[tuple[str, Kind]] = []
    edges: list[tuple[str, str]] = []
    for name in spec.get("dynasties", []):
        nodes.append((name, Kind.DYNASTY))
    for entry in spec.get("periods", []):
        nodes.append((entry["name"], Kind.PERIOD))
        edges.append((entry["parent"], entry["name"]))
    for key, kind in (("shapes", Kind.SHAPE), ("characteristics", Kind.CHARACTERISTIC)):
        for entry in spec.get(key, []):
            nodes.append((entry["name"], kind))
            for parent in entry["parent_periods"]:
                edges.append((parent, entry["name"]))
    return build_graph(nodes, edges)


def graph_to_spec(graph: RelationGraph) -> dict:
    """Inverse of graph_from_spec (mandated exclusions are implicit)."""
    name = {node.index: node.name for node in graph.nodes}
    spec: dict = {"dynasties": [name[i] for i in graph.dynasty_indices()]}
    spec["periods"] = [
        {"name": name[i], "parent": name[graph.period_parent(i)]}
        for i in graph.period_indices()
    ]
    for key, indices in (
        ("shapes", graph.shape_indices()),
        ("characteristics", graph.characteristic_indices()),
    ):
        spec[key] = [
            {"name": name[i], "parent_periods": [name[p] for p in graph.parents_of(i)]}
            for i in indices
        ]
    return spec


def load_graph(path: str | Path) -> RelationGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return graph_from_spec(json.load(fh))


def save_graph(graph: RelationGraph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph_to_spec(graph), fh, ensure_ascii=False, indent=2)
        fh.write("\n")


def bronze_era_schema() -> dict:
    """The historical 4-dynasty / 11-period hierarchy for Chinese bronze dings."""
    parentage = {
        "Shang": ["Shang Early", "Shang Late"],
        "Western Zhou": ["Western Zhou Early", "Western Zhou Mid", "Western Zhou Late"],
        "Spring and Autumn": [
            "Spring and Autumn Early",
            "Spring and Autumn Mid",
            "Spring and Autumn Late",
        ],
        "Warring States": [
            "Warring States Early",
            "Warring States Mid",
            "Warring States Late",
        ],
    }
    return {
        "dynasties": list(parentage),
        "periods": [
            {"name": period, "parent": dynasty}
            for dynasty, periods in parentage.items()
            for period in periods
        ],
        "shapes": [],
        "characteristics": [],
    }


# ---------------------------------------------------------------------------
# views and legality

@dataclass
class GraphView:
    """A scoped slice of the graph: era nodes, optionally plus one attribute kind."""

    graph: RelationGraph
    scope: Scope
    node_indices: list[int] = field(init=False)

    def __post_init__(self):
        g = self.graph
        indices = g.dynasty_indices() + g.period_indices()
        if self.scope is Scope.ERA_SHAPE:
            indices += g.shape_indices()
        elif self.scope is Scope.ERA_CHARACTERISTIC:
            indices += g.characteristic_indices()
        self.node_indices = indices
        self._local = {global_i: local_i for local_i, global_i in enumerate(indices)}

    def __len__(self) -> int:
        return len(self.node_indices)

    def local_index(self, node: NodeId | int) -> int:
        index = node.index if isinstance(node, NodeId) else int(node)
        if index not in self._local:
            raise GraphError(f"node {index} is not part of the {self.scope.value} view")
        return self._local[index]

    def nodes(self) -> list[NodeId]:
        return [self.graph.nodes[i] for i in self.node_indices]

    def exclusion_pairs(self) -> list[tuple[int, int]]:
        """View-local exclusion pairs."""
        pairs = []
        for pair in self.graph.exclusion:
            a, b = sorted(pair)
            if a in self._local and b in self._local:
                pairs.append((self._local[a], self._local[b]))
        return sorted(pairs)

    def child_parent_lists(self) -> list[tuple[int, list[int]]]:
        """View-local (child, parents-within-view) for every child in the view."""
        out = []
        for global_i in self.node_indices:
            parents = [
                self._local[p]
                for p in self.graph.parents_of(global_i)
                if p in self._local
            ]
            if self.graph.nodes[global_i].kind is not Kind.DYNASTY:
                out.append((self._local[global_i], parents))
        return out

    def structure(self) -> "ViewStructure":
        return view_structure(self)


@dataclass
class ViewStructure:
    """Constant incidence matrices driving the factorized inference formulas."""

    scope: Scope
    n_dynasties: int
    n_periods: int
    n_attributes: int
    parent_onehot: np.ndarray  # [n_dynasties, n_periods]
    attr_parents: np.ndarray | None  # [n_periods, n_attributes]


def view_structure(view: GraphView) -> ViewStructure:
    g = view.graph
    nd, np_ = g.n_dynasties, g.n_periods
    onehot = np.zeros((nd, np_), dtype=np.float64)
    for j, period in enumerate(g.period_indices()):
        onehot[g.period_parent(period), j] = 1.0
    attr = None
    if view.scope is Scope.ERA_SHAPE:
        attr = _attr_incidence(g, g.shape_indices())
    elif view.scope is Scope.ERA_CHARACTERISTIC:
        attr = _attr_incidence(g, g.characteristic_indices())
    n_attr = 0 if attr is None else attr.shape[1]
    return ViewStructure(view.scope, nd, np_, n_attr, onehot, attr)


def _attr_incidence(g: RelationGraph, attr_indices: list[int]) -> np.ndarray:
    out = np.zeros((g.n_periods, len(attr_indices)), dtype=np.float64)
    period_local = {p: j for j, p in enumerate(g.period_indices())}
    for j, a in enumerate(attr_indices):
        for parent in g.parents_of(a):
            out[period_local[parent], j] = 1.0
    return out


def is_legal(view: GraphView, assignment) -> bool:
    """True iff no exclusion pair is jointly active and every active child
    has at least one active parent within the view."""
    bits = tuple(int(b) for b in assignment)
    if len(bits) != len(view):
        raise LengthMismatchError(
            f"assignment length {len(bits)} != view size {len(view)}"
        )
    if any(b not in (0, 1) for b in bits):
        raise LengthMismatchError("assignment entries must be 0 or 1")
    for a, b in view.exclusion_pairs():
        if bits[a] and bits[b]:
            return False
    for child, parents in view.child_parent_lists():
        if bits[child] and not any(bits[p] for p in parents):
            return False
    return True


def legal_mask(view: GraphView, bits: np.ndarray) -> np.ndarray:
    """Vectorized legality for a [count, n] matrix of candidate assignments."""
    ok = np.ones(bits.shape[0], dtype=bool)
    for a, b in view.exclusion_pairs():
        ok &= ~((bits[:, a] > 0) & (bits[:, b] > 0))
    for child, parents in view.child_parent_lists():
        active = bits[:, child] > 0
        if parents:
            has_parent = bits[:, parents].any(axis=1)
        else:
            has_parent = np.zeros(bits.shape[0], dtype=bool)
        ok &= ~(active & ~has_parent)
    return ok


def all_assignments(n: int) -> np.ndarray:
    """All 2^n bit vectors in lexicographic order (first node most significant)."""
    counts = np.arange(2 ** n, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((counts[:, None] >> shifts[None, :]) & 1).astype(np.int8)


def enumerate_legal(view: GraphView, cap: int = ENUMERATION_CAP) -> list[Assignment]:
    """Every legal assignment of the view, lexicographically ordered."""
    n = len(view)
    if n > cap:
        raise TooLargeError(f"view has {n} nodes; enumeration cap is {cap}")
    bits = all_assignments(n)
    mask = legal_mask(view, bits)
    return [tuple(int(b) for b in row) for row in bits[mask]]
