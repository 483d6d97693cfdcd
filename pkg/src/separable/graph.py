"""Causal graphs for treatment decompositions with adherence.

Nodes carry a role and a time index (`NodeLabel`). Treatment-centered graphs
hold one pair of treatment components ``A_{Y,k}, A_{D,k}`` per interval.
Strategy-centered graphs replace them with the two baseline components
``Z_Y, Z_D`` and adherence nodes ``R_k``. `convert_to_strategy_centered`
builds the second from the first.

Conditional independence questions are answered with `d_separated`. It uses
a linear-time reachability search (the "Bayes-ball" traversal) over the graph
with any fixed halves of a `Swig` removed. `check_dcc` reads the four
dismissible component conditions as d-separation statements in the SWIG where
censoring and adherence are fixed. `check_partial_isolation` looks for
directed paths that escape the blocking sets.

Examples
--------
>>> g = Dag.from_edges([("Z_D", "D_1"), ("D_1", "Y_1")])
>>> d_separated(g, {"Z_D"}, {"Y_1"}, set())
False
>>> d_separated(g, {"Z_D"}, {"Y_1"}, {"D_1"})
True
"""

from __future__ import annotations

import json
import random
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

__all__ = [
    "ROLES",
    "NodeLabel",
    "Dag",
    "Swig",
    "GraphError",
    "DccEntry",
    "DccReport",
    "build_swig",
    "check_dcc",
    "check_partial_isolation",
    "convert_to_strategy_centered",
    "d_separated",
    "dcc_swig",
    "find_open_path",
    "path_is_open",
    "random_strategy_centered_dag",
    "random_treatment_centered_dag",
    "treatment_centered_dcc",
]

ROLES = ("A_Y", "A_D", "A", "Z", "Z_Y", "Z_D", "R", "C", "D", "Y", "L_D", "L_Y", "L", "U")
TIMED = {"A_Y", "A_D", "A", "R", "C", "D", "Y", "L_D", "L_Y", "L"}
UNTIMED = {"Z", "Z_Y", "Z_D"}
_NODE_RE = re.compile(r"^(A_Y|A_D|Z_Y|Z_D|L_D|L_Y|A|Z|R|C|D|Y|L|U)(?:_(\d+))?(?:\[([^\]]+)\])?(\*)?$")


class GraphError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class NodeLabel:
    """A node identified by role, time index and an optional name.

    ``fixed`` marks the fixed half of a node split in a SWIG.
    """

    role: str
    t: int | None = None
    name: str | None = None
    fixed: bool = False

    def __post_init__(self):
        if self.role not in ROLES:
            raise GraphError(f"unknown role {self.role!r}")
        if self.role in TIMED and self.t is None:
            raise GraphError(f"role {self.role} needs a time index")
        if self.role in UNTIMED and self.t is not None:
            raise GraphError(f"role {self.role} takes no time index")

    def __str__(self):
        s = self.role if self.t is None else f"{self.role}_{self.t}"
        if self.name:
            s += f"[{self.name}]"
        return s + ("*" if self.fixed else "")

    __repr__ = __str__

    @classmethod
    def parse(cls, text: "str | NodeLabel") -> "NodeLabel":
        """Parse labels such as ``"Z_Y"``, ``"R_2"``, ``"L_D_1[bp]"`` or ``"R_1*"``."""
        if isinstance(text, NodeLabel):
            return text
        m = _NODE_RE.match(str(text).strip())
        if not m:
            raise GraphError(f"cannot parse node label {text!r}")
        role, t, name, star = m.groups()
        return cls(role, None if t is None else int(t), name, bool(star))

    def random_half(self) -> "NodeLabel":
        return NodeLabel(self.role, self.t, self.name)

    def to_dict(self) -> dict:
        out = {"role": self.role}
        if self.t is not None:
            out["t"] = self.t
        if self.name:
            out["name"] = self.name
        if self.fixed:
            out["fixed"] = True
        return out

    @property
    def is_covariate(self) -> bool:
        return self.role in ("L", "L_D", "L_Y")


def _labels(items) -> list:
    return [NodeLabel.parse(v) for v in items]


class Dag:
    """Directed acyclic graph over `NodeLabel` nodes.

    Parameters
    ----------
    nodes : iterable of NodeLabel or str
    edges : iterable of (node, node)
    deterministic : iterable of (node, node)
        Edges drawn bold in an extended DAG, such as ``Z -> Z_Y``. They are
        added to ``edges`` if missing.
    K : int, optional
        Time bound; follow-up intervals are ``1..K+1``. Inferred from the
        largest time index when omitted.
    """

    def __init__(self, nodes: Iterable = (), edges: Iterable = (), deterministic: Iterable = (), K: int | None = None):
        node_list = []
        seen = set()
        for v in _labels(nodes):
            if v not in seen:
                seen.add(v)
                node_list.append(v)
        edge_set = set()
        det = set()
        for (a, b), bucket in [(e, edge_set) for e in edges] + [(e, det) for e in deterministic]:
            a, b = NodeLabel.parse(a), NodeLabel.parse(b)
            for v in (a, b):
                if v not in seen:
                    raise GraphError(f"edge endpoint {v} is not a node")
            if a == b:
                raise GraphError(f"self-loop on {a}")
            bucket.add((a, b))
        edge_set |= det
        self.nodes = tuple(node_list)
        self.edges = frozenset(edge_set)
        self.deterministic = frozenset(det)
        self._parents = {v: set() for v in self.nodes}
        self._children = {v: set() for v in self.nodes}
        for a, b in self.edges:
            self._children[a].add(b)
            self._parents[b].add(a)
        self.order = self._toposort()
        if K is None:
            times = [v.t for v in self.nodes if v.t is not None and v.role not in ("L", "L_D", "L_Y", "U")]
            K = max(times) - 1 if times else 0
        self.K = int(K)

    @classmethod
    def from_edges(cls, edges: Iterable, nodes: Iterable = (), deterministic: Iterable = (), K: int | None = None) -> "Dag":
        """Build a graph from edges, adding their endpoints as nodes."""
        edges = [(NodeLabel.parse(a), NodeLabel.parse(b)) for a, b in edges]
        det = [(NodeLabel.parse(a), NodeLabel.parse(b)) for a, b in deterministic]
        all_nodes = _labels(nodes) + [v for e in edges + det for v in e]
        return cls(all_nodes, edges, det, K)

    def _toposort(self) -> tuple:
        indeg = {v: len(self._parents[v]) for v in self.nodes}
        queue = deque(sorted(v for v in self.nodes if indeg[v] == 0))
        out = []
        while queue:
            v = queue.popleft()
            out.append(v)
            for c in sorted(self._children[v]):
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        if len(out) != len(self.nodes):
            raise GraphError("graph contains a directed cycle")
        return tuple(out)

    # queries --------------------------------------------------------------
    def __contains__(self, v):
        try:
            return NodeLabel.parse(v) in self._parents
        except GraphError:
            return False

    def parents(self, v) -> set:
        return set(self._parents[self._get(v)])

    def children(self, v) -> set:
        return set(self._children[self._get(v)])

    def _get(self, v) -> NodeLabel:
        v = NodeLabel.parse(v)
        if v not in self._parents:
            raise GraphError(f"unknown node {v}")
        return v

    def find(self, role: str, t: int | None = None) -> list:
        """Nodes with the given role (and time index, when given)."""
        return [v for v in self.nodes if v.role == role and (t is None or v.t == t)]

    def ancestors(self, vs: Iterable) -> set:
        out = set()
        stack = [self._get(v) for v in vs]
        while stack:
            v = stack.pop()
            if v in out:
                continue
            out.add(v)
            stack.extend(self._parents[v])
        return out

    def descendants(self, vs: Iterable) -> set:
        out = set()
        stack = [self._get(v) for v in vs]
        while stack:
            v = stack.pop()
            if v in out:
                continue
            out.add(v)
            stack.extend(self._children[v])
        return out

    def edge_strings(self) -> set:
        return {(str(a), str(b)) for a, b in self.edges}

    def subgraph(self, keep: Iterable) -> "Dag":
        keep = set(_labels(keep))
        nodes = [v for v in self.nodes if v in keep]
        edges = [(a, b) for a, b in self.edges - self.deterministic if a in keep and b in keep]
        det = [(a, b) for a, b in self.deterministic if a in keep and b in keep]
        return Dag(nodes, edges, det, self.K)

    def __eq__(self, other):
        return isinstance(other, Dag) and set(self.nodes) == set(other.nodes) and self.edges == other.edges and self.deterministic == other.deterministic

    def __repr__(self):
        return f"Dag({len(self.nodes)} nodes, {len(self.edges)} edges, K={self.K})"

    # serialization ---------------------------------------------------------
    def to_json(self) -> dict:
        index = {v: i for i, v in enumerate(self.nodes)}
        plain = sorted(self.edges - self.deterministic, key=lambda e: (index[e[0]], index[e[1]]))
        det = sorted(self.deterministic, key=lambda e: (index[e[0]], index[e[1]]))
        return {
            "nodes": [v.to_dict() for v in self.nodes],
            "edges": [[index[a], index[b]] for a, b in plain + det],
            "deterministic": [[index[a], index[b]] for a, b in det],
            "K": self.K,
        }

    @classmethod
    def from_json(cls, data) -> "Dag":
        """Build from the JSON schema (a dict, a JSON string or a file path)."""
        if isinstance(data, str):
            if data.lstrip().startswith("{"):
                data = json.loads(data)
            else:
                with open(data, encoding="utf-8") as fh:
                    data = json.load(fh)
        elif hasattr(data, "read_text"):
            data = json.loads(data.read_text(encoding="utf-8"))
        try:
            nodes = [NodeLabel(n["role"], n.get("t"), n.get("name"), bool(n.get("fixed", False))) for n in data["nodes"]]
            edges = [(nodes[i], nodes[j]) for i, j in data.get("edges", [])]
            det = [(nodes[i], nodes[j]) for i, j in data.get("deterministic", [])]
        except (KeyError, IndexError, TypeError) as exc:
            raise GraphError(f"malformed graph JSON: {exc}") from exc
        det_set = set(det)
        return cls(nodes, [e for e in edges if e not in det_set], det, data.get("K"))

    def to_dot(self, name: str = "G") -> str:
        lines = [f"digraph {name} {{", "  rankdir=LR;"]
        for v in self.nodes:
            shape = "box" if v.fixed else "ellipse"
            style = ', style="dashed"' if v.role == "U" else ""
            lines.append(f'  "{v}" [shape={shape}{style}];')
        index = {v: i for i, v in enumerate(self.nodes)}
        for a, b in sorted(self.edges, key=lambda e: (index[e[0]], index[e[1]])):
            bold = " [penwidth=3]" if (a, b) in self.deterministic else ""
            lines.append(f'  "{a}" -> "{b}"{bold};')
        lines.append("}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Encoding conversion


def convert_to_strategy_centered(g: Dag) -> Dag:
    """Replace treatment nodes ``A_{W,k}`` by ``Z_W`` and ``R_k``.

    Each ``A_{W,k}`` maps to ``R_k``. For every child ``X`` of ``A_{W,k}``
    the edges ``Z_W -> X'`` and ``R_k -> X'`` are added (``X'`` is the image
    of ``X``; the second edge is skipped when ``X' = R_k``). Every parent of
    ``A_{W,k}`` points into ``R_k``, and ``Z_W -> R_k`` is always added.
    Edges among the other nodes are kept. A deterministic edge
    ``Z -> A_{W,k}`` becomes ``Z -> Z_W``.

    Raises
    ------
    GraphError
        If the input already has ``Z_Y``, ``Z_D`` or ``R`` nodes, uses the
        undecomposed role ``A``, has gaps in the treatment time indices, or
        the result would be cyclic.
    """
    roles = {v.role for v in g.nodes}
    if roles & {"Z_Y", "Z_D", "R"}:
        raise GraphError("graph is already strategy-centered (has Z_Y, Z_D or R nodes)")
    if "A" in roles:
        raise GraphError("split treatment nodes A_k into A_Y and A_D components first")
    K = g.K
    for role in ("A_Y", "A_D"):
        times = sorted(v.t for v in g.find(role))
        if not times:
            raise GraphError(f"graph has no {role} nodes")
        if times != list(range(1, K + 2)):
            raise GraphError(f"{role} time indices {times} must be exactly 1..{K + 1}")

    comp = {"A_Y": NodeLabel("Z_Y"), "A_D": NodeLabel("Z_D")}

    def gamma(v: NodeLabel) -> NodeLabel:
        return NodeLabel("R", v.t) if v.role in comp else v

    is_a = lambda v: v.role in comp  # noqa: E731
    plain = g.edges - g.deterministic
    new_edges = set()
    det_edges = set()
    for a, b in g.deterministic:
        if is_a(b):
            det_edges.add((a, comp[b.role]))
        elif not is_a(a):
            det_edges.add((a, b))
        else:
            raise GraphError(f"deterministic edge out of a treatment node: {a} -> {b}")
    for a_node in sorted(v for v in g.nodes if is_a(v)):
        zw = comp[a_node.role]
        rk = gamma(a_node)
        for x in sorted(g.children(a_node)):
            if (a_node, x) not in plain:
                continue
            gx = gamma(x)
            new_edges.add((zw, gx))
            if gx != rk:
                new_edges.add((rk, gx))
        for x in sorted(g.parents(a_node)):
            if (x, a_node) not in plain:
                continue
            gx = gamma(x)
            if gx != rk:
                new_edges.add((gx, rk))
        new_edges.add((zw, rk))
    for a, b in plain:
        if not is_a(a) and not is_a(b):
            new_edges.add((a, b))
    keep = [v for v in g.nodes if not is_a(v)]
    extra = [NodeLabel("Z_Y"), NodeLabel("Z_D")] + [NodeLabel("R", k) for k in range(1, K + 2)]
    new_edges -= det_edges
    try:
        return Dag(extra + keep, new_edges, det_edges, K)
    except GraphError as exc:
        raise GraphError(f"conversion produced an invalid graph: {exc}") from exc


# ---------------------------------------------------------------------------
# SWIGs and d-separation


@dataclass
class Swig:
    """Single-world intervention graph.

    ``graph`` holds the split graph: each intervened node keeps its label
    (random half, incoming edges) and gains a fixed half (``fixed=True``)
    holding the outgoing edges.
    """

    base: Dag
    interventions: dict
    graph: Dag = field(repr=False)

    @property
    def random_graph(self) -> Dag:
        """The split graph with fixed halves removed; d-separation is read here."""
        return self.graph.subgraph(v for v in self.graph.nodes if not v.fixed)

    def fixed(self, v) -> NodeLabel:
        v = NodeLabel.parse(v)
        if v not in self.interventions:
            raise GraphError(f"{v} is not intervened on")
        return NodeLabel(v.role, v.t, v.name, True)


def build_swig(g: Dag, interventions) -> Swig:
    """Split every intervened node into a random and a fixed half.

    Parameters
    ----------
    g : Dag
    interventions : mapping or iterable of (node, value)
    """
    items = interventions.items() if isinstance(interventions, Mapping) else interventions
    iv = {}
    for node, value in items:
        node = NodeLabel.parse(node)
        if node not in g:
            raise GraphError(f"cannot intervene on {node}: not in graph")
        iv[node] = value
    if not iv:
        return Swig(g, {}, g)
    fixed = {v: NodeLabel(v.role, v.t, v.name, True) for v in iv}
    nodes = list(g.nodes) + [fixed[v] for v in g.nodes if v in fixed]
    edges = []
    det = []
    for a, b in g.edges:
        src = fixed.get(a, a)
        (det if (a, b) in g.deterministic else edges).append((src, b))
    return Swig(g, iv, Dag(nodes, edges, det, g.K))


def _as_graph(g) -> Dag:
    if isinstance(g, Swig):
        return g.random_graph
    return g


def _node_set(graph: Dag, vs, what: str) -> set:
    if isinstance(vs, (str, NodeLabel)):
        vs = [vs]
    out = set()
    for v in vs:
        v = NodeLabel.parse(v)
        if v not in graph:
            raise GraphError(f"unknown node {v} in {what}")
        out.add(v)
    return out


def _reachable(graph: Dag, xs: set, zs: set) -> set:
    """Nodes d-connected to ``xs`` given ``zs`` (Bayes-ball reachability)."""
    anc = graph.ancestors(zs) if zs else set()
    visited = set()
    out = set()
    queue = deque((x, "up") for x in xs)
    while queue:
        v, d = queue.popleft()
        if (v, d) in visited:
            continue
        visited.add((v, d))
        if v not in zs:
            out.add(v)
        if d == "up" and v not in zs:
            queue.extend((p, "up") for p in graph._parents[v])
            queue.extend((c, "down") for c in graph._children[v])
        elif d == "down":
            if v not in zs:
                queue.extend((c, "down") for c in graph._children[v])
            if v in anc:
                queue.extend((p, "up") for p in graph._parents[v])
    return out - xs


def d_separated(g, x, y, z=()) -> bool:
    """True when every path between ``x`` and ``y`` is blocked by ``z``.

    ``g`` may be a `Dag` or a `Swig`; for a SWIG, paths through fixed halves
    are ignored. Node arguments accept labels or strings.
    """
    graph = _as_graph(g)
    xs, ys, zs = (_node_set(graph, v, w) for v, w in ((x, "x"), (y, "y"), (z, "z")))
    if xs & ys or xs & zs or ys & zs:
        raise GraphError("x, y and z must be disjoint")
    return not (_reachable(graph, xs, zs) & ys)


def path_is_open(g, path, z=()) -> bool:
    """Whether a given path (sequence of adjacent nodes) is open given ``z``."""
    graph = _as_graph(g)
    path = _labels(path)
    zs = _node_set(graph, z, "z")
    anc = graph.ancestors(zs) if zs else set()
    for a, b in zip(path, path[1:]):
        if (a, b) not in graph.edges and (b, a) not in graph.edges:
            raise GraphError(f"{a} and {b} are not adjacent")
    for prev, v, nxt in zip(path, path[1:], path[2:]):
        collider = (prev, v) in graph.edges and (nxt, v) in graph.edges
        if collider and v not in anc:
            return False
        if not collider and v in zs:
            return False
    return len(set(path)) == len(path)


def find_open_path(g, x, y, z=()) -> list | None:
    """Return one open simple path from ``x`` to ``y`` given ``z``, or None."""
    graph = _as_graph(g)
    xs, ys, zs = (_node_set(graph, v, w) for v, w in ((x, "x"), (y, "y"), (z, "z")))
    if not (_reachable(graph, xs, zs) & ys):
        return None
    anc = graph.ancestors(zs) if zs else set()

    def neighbors(v):
        for c in sorted(graph._children[v]):
            yield c, True  # edge v -> c
        for p in sorted(graph._parents[v]):
            yield p, False  # edge v <- p

    def dfs(path, on_path, into_last):
        v = path[-1]
        for w, forward in neighbors(v):
            if w in on_path:
                continue
            if len(path) > 1:
                collider = into_last and not forward
                if collider and v not in anc:
                    continue
                if not collider and v in zs:
                    continue
            if w in ys:
                return path + [w]
            if w in xs:
                continue
            on_path.add(w)
            found = dfs(path + [w], on_path, forward)
            on_path.discard(w)
            if found:
                return found
        return None

    for x0 in sorted(xs):
        found = dfs([x0], {x0}, False)
        if found:
            return found
    return None  # pragma: no cover - reachability guarantees a path


# ---------------------------------------------------------------------------
# Dismissible component conditions


@dataclass(frozen=True)
class DccEntry:
    k: int
    condition: int
    statement: str
    passed: bool
    path: tuple | None = None


@dataclass
class DccReport:
    entries: list

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def failures(self) -> list:
        return [e for e in self.entries if not e.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "entries": [
                {
                    "k": e.k,
                    "condition": e.condition,
                    "statement": e.statement,
                    "passed": e.passed,
                    "path": None if e.path is None else [str(v) for v in e.path],
                }
                for e in self.entries
            ],
        }


def _resolve_partition(g: Dag, partition) -> dict:
    """Map every covariate node to its block, "L_D" or "L_Y"."""
    cov = [v for v in g.nodes if v.is_covariate]
    out = {}
    if partition is None or isinstance(partition, str):
        for v in cov:
            if v.role in ("L_D", "L_Y"):
                out[v] = v.role
            elif partition in ("L_D", "L_Y"):
                out[v] = partition
            else:
                raise GraphError(f"covariate node {v} has no block; pass a partition")
        return out
    assigned = {}
    for node, block in dict(partition).items():
        node = NodeLabel.parse(node)
        if node not in g or not node.is_covariate:
            raise GraphError(f"partition entry {node} is not a covariate node of the graph")
        if block not in ("L_D", "L_Y"):
            raise GraphError(f"unknown block {block!r} for {node}")
        if node.role in ("L_D", "L_Y") and node.role != block:
            raise GraphError(f"partition puts {node} in {block}, contradicting its role")
        assigned[node] = block
    for v in cov:
        if v in assigned:
            out[v] = assigned[v]
        elif v.role in ("L_D", "L_Y"):
            out[v] = v.role
        else:
            raise GraphError(f"partition does not assign covariate node {v}")
    return out


def dcc_swig(g: Dag) -> Swig:
    """SWIG used for the dismissible component conditions.

    The original treatment ``Z`` and the deterministic edges are dropped, as in
    the four-arm trial where ``Z_Y`` and ``Z_D`` are assigned at random.
    Censoring and adherence nodes are split.
    """
    keep = [v for v in g.nodes if v.role != "Z"]
    trial = g.subgraph(keep)
    trial = Dag(trial.nodes, trial.edges - trial.deterministic, (), g.K)
    iv = {v: (0 if v.role == "C" else 1) for v in trial.nodes if v.role in ("C", "R")}
    return build_swig(trial, iv)


def check_dcc(g: Dag, partition=None, K: int | None = None) -> DccReport:
    """Check the dismissible component conditions as d-separations.

    For every ``k = 0..K`` the four statements are

    1. ``Y_{k+1} ⫫ Z_D | Z_Y, D̄_{k+1}, Ȳ_k, L̄_k``
    2. ``D_{k+1} ⫫ Z_Y | Z_D, D̄_k, Ȳ_k, L̄_k``
    3. ``L_{Y,k} ⫫ Z_D | Z_Y, D̄_k, Ȳ_k, L_{D,k}, L̄_{k-1}``
    4. ``L_{D,k} ⫫ Z_Y | Z_D, D̄_k, Ȳ_k, L̄_{k-1}``

    read in the SWIG of `dcc_swig`. A statement whose left-hand side has no
    nodes holds trivially.

    Parameters
    ----------
    g : Dag
        Strategy-centered graph.
    partition : None, "L_D", "L_Y" or mapping
        Block of each covariate node. Nodes with roles ``L_D``/``L_Y`` carry
        their own block; ``"L_D"`` puts every role-``L`` node in ``L_D``.
    K : int, optional
        Defaults to ``g.K``.
    """
    roles = {v.role for v in g.nodes}
    if not {"Z_Y", "Z_D"} <= roles:
        raise GraphError("check_dcc needs a strategy-centered graph with Z_Y and Z_D")
    blocks = _resolve_partition(g, partition)
    K = g.K if K is None else K
    swig = dcc_swig(g)
    graph = swig.random_graph
    zy, zd = NodeLabel("Z_Y"), NodeLabel("Z_D")

    def at(role, lo, hi):
        return {v for v in graph.nodes if v.role == role and lo <= v.t <= hi}

    def cov(block, lo, hi):
        return {v for v in graph.nodes if v in blocks and blocks[v] == block and lo <= v.t <= hi}

    entries = []
    for k in range(K + 1):
        lbar_k = cov("L_D", 0, k) | cov("L_Y", 0, k)
        lbar_km1 = cov("L_D", 0, k - 1) | cov("L_Y", 0, k - 1)
        checks = [
            (1, f"Y_{k + 1} ⫫ Z_D | Z_Y, D̄_{k + 1}, Ȳ_{k}, L̄_{k}", at("Y", k + 1, k + 1), zd,
             {zy} | at("D", 1, k + 1) | at("Y", 1, k) | lbar_k),
            (2, f"D_{k + 1} ⫫ Z_Y | Z_D, D̄_{k}, Ȳ_{k}, L̄_{k}", at("D", k + 1, k + 1), zy,
             {zd} | at("D", 1, k) | at("Y", 1, k) | lbar_k),
            (3, f"L_Y_{k} ⫫ Z_D | Z_Y, D̄_{k}, Ȳ_{k}, L_D_{k}, L̄_{k - 1}", cov("L_Y", k, k), zd,
             {zy} | at("D", 1, k) | at("Y", 1, k) | cov("L_D", k, k) | lbar_km1),
            (4, f"L_D_{k} ⫫ Z_Y | Z_D, D̄_{k}, Ȳ_{k}, L̄_{k - 1}", cov("L_D", k, k), zy,
             {zd} | at("D", 1, k) | at("Y", 1, k) | lbar_km1),
        ]
        for cond, text, lhs, comp, given in checks:
            if not lhs:
                entries.append(DccEntry(k, cond, text, True))
                continue
            ok = d_separated(graph, lhs, {comp}, given)
            path = None if ok else tuple(find_open_path(graph, {comp}, lhs, given))
            entries.append(DccEntry(k, cond, text, ok, path))
    return DccReport(entries)


def treatment_centered_dcc(g: Dag, K: int | None = None) -> list:
    """Boolean outcomes of the treatment-centered conditions for each ``(k, condition)``.

    The SWIG splits only censoring nodes; treatment components stay random.
    Statements mirror `check_dcc` with ``Z_Y`` replaced by ``Ā_{Y,k+1}``
    (``Ā_{Y,k}`` for the covariate conditions) and likewise for ``Z_D``.
    """
    K = g.K if K is None else K
    iv = {v: 0 for v in g.nodes if v.role == "C"}
    trial = Dag([v for v in g.nodes if v.role != "Z"], [(a, b) for a, b in g.edges - g.deterministic if a.role != "Z" and b.role != "Z"], (), g.K)
    graph = build_swig(trial, iv).random_graph

    def at(role, lo, hi):
        return {v for v in graph.nodes if v.role == role and lo <= v.t <= hi}

    out = []
    for k in range(K + 1):
        lbar_k = at("L_D", 0, k) | at("L_Y", 0, k)
        lbar_km1 = at("L_D", 0, k - 1) | at("L_Y", 0, k - 1)
        checks = [
            (1, at("Y", k + 1, k + 1), at("A_D", 1, k + 1), at("A_Y", 1, k + 1) | at("D", 1, k + 1) | at("Y", 1, k) | lbar_k),
            (2, at("D", k + 1, k + 1), at("A_Y", 1, k + 1), at("A_D", 1, k + 1) | at("D", 1, k) | at("Y", 1, k) | lbar_k),
            (3, at("L_Y", k, k), at("A_D", 1, k), at("A_Y", 1, k) | at("D", 1, k) | at("Y", 1, k) | at("L_D", k, k) | lbar_km1),
            (4, at("L_D", k, k), at("A_Y", 1, k), at("A_D", 1, k) | at("D", 1, k) | at("Y", 1, k) | lbar_km1),
        ]
        for cond, lhs, comp, given in checks:
            ok = True if not lhs or not comp else d_separated(graph, lhs, comp, given)
            out.append(((k, cond), ok))
    return out


# ---------------------------------------------------------------------------
# Partial isolation


def check_partial_isolation(g: Dag, which: str) -> tuple:
    """Check ``Z_Y`` or ``Z_D`` partial isolation.

    For ``Z_Y`` every directed path to a competing-event node must pass
    through an event-of-interest node ``Y_1..Y_K``, an adherence node or a
    censoring node. For ``Z_D`` every directed path to an event-of-interest
    node must pass through a competing-event, adherence or censoring node.
    Only intermediate nodes count. Deterministic edges are ignored.

    Returns
    -------
    (bool, list or None)
        The verdict and, when it fails, one violating directed path.
    """
    if which not in ("Z_Y", "Z_D"):
        raise GraphError("which must be 'Z_Y' or 'Z_D'")
    src = NodeLabel(which)
    if src not in g:
        raise GraphError(f"graph has no {which} node")
    K = g.K
    if which == "Z_Y":
        targets = {v for v in g.nodes if v.role == "D"}
        blockers = {v for v in g.nodes if (v.role == "Y" and v.t <= K) or v.role in ("R", "C")}
    else:
        targets = {v for v in g.nodes if v.role == "Y"}
        blockers = {v for v in g.nodes if v.role in ("D", "R", "C")}
    plain = g.edges - g.deterministic
    children = {v: sorted(b for a, b in plain if a == v) for v in g.nodes}
    # BFS over nodes reachable from src through non-blocking intermediates
    prev = {src: None}
    queue = deque([src])
    while queue:
        v = queue.popleft()
        for c in children[v]:
            if c in prev:
                continue
            prev[c] = v
            if c in targets:
                path = [c]
                while prev[path[-1]] is not None:
                    path.append(prev[path[-1]])
                return False, path[::-1]
            if c not in blockers and c != src:
                queue.append(c)
    return True, None


# ---------------------------------------------------------------------------
# Random graphs


def _interval_nodes(k: int, covs: int, treatment: bool) -> list:
    nodes = [NodeLabel("C", k)]
    nodes += [NodeLabel("A_Y", k), NodeLabel("A_D", k)] if treatment else [NodeLabel("R", k)]
    nodes += [NodeLabel("D", k), NodeLabel("Y", k)]
    return nodes


def random_treatment_centered_dag(K: int, seed=None, p: float = 0.3, n_cov: int = 1, n_latent: int = 0) -> Dag:
    """Random treatment-centered graph respecting the interval order.

    Nodes per interval ``k`` are ``C_k, A_{Y,k}, A_{D,k}, D_k, Y_k`` followed
    by ``n_cov`` covariates (not for ``k = K+1``); covariates are also
    measured at time 0. Each covariate is randomly placed in ``L_D`` or
    ``L_Y``. Edges point forward in time and are drawn with probability
    ``p``; ``A_{Y,k}`` and ``A_{D,k}`` are never adjacent.
    """
    rng = random.Random(seed)
    order = []

    def covs(t):
        return [NodeLabel(rng.choice(("L_D", "L_Y")), t, f"x{i}") for i in range(n_cov)]

    order += covs(0)
    for k in range(1, K + 2):
        order += _interval_nodes(k, n_cov, True)
        if k <= K:
            order += covs(k)
    latents = [NodeLabel("U", None, f"u{i}") for i in range(n_latent)]
    edges = []
    for i, a in enumerate(order):
        for b in order[i + 1 :]:
            if {a.role, b.role} == {"A_Y", "A_D"} and a.t == b.t:
                continue
            if rng.random() < p:
                edges.append((a, b))
    for u in latents:
        pos = rng.randrange(len(order))
        for b in order[pos:]:
            if rng.random() < p:
                edges.append((u, b))
    return Dag(latents + order, edges, (), K)


def random_strategy_centered_dag(K: int, seed=None, p: float = 0.3, p_z: float = 0.3, n_cov: int = 1, n_latent: int = 0, covariate_role: str = "L_D") -> Dag:
    """Random strategy-centered graph respecting the interval order.

    ``Z_Y`` and ``Z_D`` are roots with edges to later nodes drawn with
    probability ``p_z``. Other edges point forward in time with probability
    ``p``. Latent nodes ``U`` get random children.
    """
    rng = random.Random(seed)
    order = [NodeLabel(covariate_role, 0, f"x{i}") for i in range(n_cov)]
    for k in range(1, K + 2):
        order += _interval_nodes(k, n_cov, False)
        if k <= K:
            order += [NodeLabel(covariate_role, k, f"x{i}") for i in range(n_cov)]
    zs = [NodeLabel("Z_Y"), NodeLabel("Z_D")]
    edges = []
    for z in zs:
        for b in order:
            if b.t == 0:
                continue
            if b.role == "R" or rng.random() < p_z:
                edges.append((z, b))
    for i, a in enumerate(order):
        for b in order[i + 1 :]:
            if rng.random() < p:
                edges.append((a, b))
    latents = [NodeLabel("U", None, f"u{i}") for i in range(n_latent)]
    for u in latents:
        kids = [b for b in order if rng.random() < p]
        edges += [(u, b) for b in kids]
    return Dag(zs + latents + order, edges, (), K)
