"""Scene graphs, constituency trees, captions, vocabularies, and their JSONL forms.

Scene graphs are directed: objects, attributes, and relations are all nodes,
and edges are unlabeled (object -> attribute, subject -> relation -> object).
Constituency trees keep phrasal nodes internal and word nodes at the leaves;
the left-to-right leaf sequence spells the caption. All node ids are dense
0..n-1 and equal to list position, which is what the encoders index by.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SG_KINDS = ("object", "attribute", "relation")
SC_KINDS = ("phrasal", "word")

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")


class GraphValidationError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code


class TreeValidationError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code


class JsonlError(ValueError):
    """Raised for malformed JSONL lines or records that break the schema."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        loc = f" (line {line})" if line is not None else ""
        fld = f" at {path}" if path else ""
        super().__init__(f"{message}{fld}{loc}")
        self.line = line
        self.path = path


@dataclass
class SgNode:
    id: int
    label: str
    kind: str


@dataclass
class SceneGraph:
    nodes: list[SgNode]
    edges: list[tuple[int, int]]
    features: np.ndarray | None = None


@dataclass
class ScNode:
    id: int
    label: str
    kind: str


@dataclass
class ConstituencyTree:
    nodes: list[ScNode]
    parent: list[int | None]
    children: list[list[int]]


@dataclass
class CaptionSequence:
    """Token ids in model I/O form: starts with BOS and ends with EOS."""

    language: str
    ids: list[int] = field(default_factory=list)

    def content(self) -> list[int]:
        return self.ids[1:-1]


def validate_scene_graph(g: SceneGraph) -> None:
    n = len(g.nodes)
    for i, node in enumerate(g.nodes):
        if node.id != i:
            raise GraphValidationError("node-ids", f"node at position {i} has id {node.id}; ids must be dense 0..n-1 in order")
        if node.kind not in SG_KINDS:
            raise GraphValidationError("bad-kind", f"node {i} has kind {node.kind!r}; expected one of {SG_KINDS}")
        if not node.label:
            raise GraphValidationError("bad-label", f"node {i} has an empty label")
    for e, (src, dst) in enumerate(g.edges):
        if not (0 <= src < n and 0 <= dst < n):
            raise GraphValidationError("dangling-edge", f"edge {e} = ({src}, {dst}) references a missing node (graph has {n} nodes)")
        if src == dst:
            raise GraphValidationError("self-loop", f"edge {e} loops on node {src}")
    in_deg = [0] * n
    out_deg = [0] * n
    for src, dst in g.edges:
        out_deg[src] += 1
        in_deg[dst] += 1
    for i, node in enumerate(g.nodes):
        if node.kind == "attribute":
            attached = any(
                (g.nodes[other].kind == "object")
                for (src, dst) in g.edges
                for other in ((src,) if dst == i else (dst,) if src == i else ())
            )
            if not attached:
                raise GraphValidationError("attribute-unattached", f"attribute node {i} ({node.label!r}) has no edge to an object node")
        elif node.kind == "relation":
            if in_deg[i] < 1 or out_deg[i] < 1:
                raise GraphValidationError(
                    "relation-degree",
                    f"relation node {i} ({node.label!r}) needs in-degree and out-degree of at least 1, has ({in_deg[i]}, {out_deg[i]})",
                )
    if g.features is not None:
        feats = np.asarray(g.features)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise GraphValidationError("feature-shape", f"features must be (n_nodes, width), got {feats.shape} for {n} nodes")


def validate_constituency_tree(t: ConstituencyTree, tokens: Sequence[str] | None = None) -> None:
    n = len(t.nodes)
    if len(t.parent) != n or len(t.children) != n:
        raise TreeValidationError("node-ids", f"parent/children arrays must have one entry per node ({n})")
    roots = []
    for i, node in enumerate(t.nodes):
        if node.id != i:
            raise TreeValidationError("node-ids", f"node at position {i} has id {node.id}; ids must be dense 0..n-1 in order")
        if node.kind not in SC_KINDS:
            raise TreeValidationError("bad-kind", f"node {i} has kind {node.kind!r}; expected one of {SC_KINDS}")
        if t.parent[i] is None:
            roots.append(i)
        elif not (0 <= t.parent[i] < n):
            raise TreeValidationError("node-ids", f"node {i} has parent {t.parent[i]} outside 0..{n - 1}")
    if len(roots) != 1:
        raise TreeValidationError("root-count", f"expected exactly one root, found {len(roots)}: {roots}")
    seen_as_child = [0] * n
    for p, kids in enumerate(t.children):
        for c in kids:
            if not (0 <= c < n):
                raise TreeValidationError("node-ids", f"node {p} lists child {c} outside 0..{n - 1}")
            if t.parent[c] != p:
                raise TreeValidationError("parent-child-mismatch", f"node {p} lists child {c}, but parent[{c}] = {t.parent[c]}")
            seen_as_child[c] += 1
    for i in range(n):
        if t.parent[i] is not None and seen_as_child[i] != 1:
            raise TreeValidationError("parent-child-mismatch", f"node {i} appears {seen_as_child[i]} times in children lists; expected once")
    # reachability doubles as the cycle check: a parent cycle is unreachable from the root
    reached = set()
    stack = [roots[0]]
    while stack:
        node = stack.pop()
        if node in reached:
            raise TreeValidationError("cycle", f"node {node} reached twice while walking from the root")
        reached.add(node)
        stack.extend(reversed(t.children[node]))
    if len(reached) != n:
        missing = sorted(set(range(n)) - reached)
        raise TreeValidationError("cycle", f"nodes {missing} are not reachable from the root (cycle or orphan)")
    for i, node in enumerate(t.nodes):
        if node.kind == "phrasal" and not t.children[i]:
            raise TreeValidationError("phrasal-leaf", f"phrasal node {i} ({node.label!r}) has no children")
        if node.kind == "word" and t.children[i]:
            raise TreeValidationError("word-with-children", f"word node {i} ({node.label!r}) has children {t.children[i]}")
    if tokens is not None:
        got = tree_leaves(t)
        if list(tokens) != got:
            raise TreeValidationError("leaf-tokens", f"leaf sequence {got} does not spell the stored tokens {list(tokens)}")


def tree_leaves(t: ConstituencyTree) -> list[str]:
    """Word labels in left-to-right order (depth-first, children order)."""
    root = next(i for i, p in enumerate(t.parent) if p is None)
    out: list[str] = []
    stack = [root]
    while stack:
        node = stack.pop()
        if t.nodes[node].kind == "word":
            out.append(t.nodes[node].label)
        stack.extend(reversed(t.children[node]))
    return out


def sg_edge_triples(g: SceneGraph) -> list[tuple[str, str]]:
    """Canonical directed (source-label, target-label) pairs: lowercased,
    deduplicated, sorted. This is the overlap currency of the graph metrics."""
    pairs = {
        (g.nodes[src].label.lower(), g.nodes[dst].label.lower())
        for src, dst in g.edges
    }
    return sorted(pairs)


def sc_nodes_by_depth(t: ConstituencyTree) -> list[tuple[str, int]]:
    """(label, depth) for every phrasal node, breadth-first, root at depth 1."""
    root = next(i for i, p in enumerate(t.parent) if p is None)
    out: list[tuple[str, int]] = []
    queue: list[tuple[int, int]] = [(root, 1)]
    while queue:
        node, depth = queue.pop(0)
        if t.nodes[node].kind == "phrasal":
            out.append((t.nodes[node].label, depth))
        queue.extend((c, depth + 1) for c in t.children[node])
    return out


class Vocabulary:
    """Token table with fixed reserved ids: PAD=0, BOS=1, EOS=2, UNK=3."""

    def __init__(self, tokens: Sequence[str]):
        for reserved in RESERVED_TOKENS:
            if reserved in tokens:
                raise ValueError(f"Vocabulary: token {reserved!r} collides with a reserved symbol")
        if len(set(tokens)) != len(tokens):
            raise ValueError("Vocabulary: duplicate tokens")
        self.tokens = list(RESERVED_TOKENS) + list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, words: Sequence[str], language: str) -> CaptionSequence:
        ids = [BOS_ID] + [self.index.get(w, UNK_ID) for w in words] + [EOS_ID]
        return CaptionSequence(language=language, ids=ids)

    def decode(self, seq: CaptionSequence) -> list[str]:
        """Content tokens of a model I/O sequence. UNK stays visible as <unk>
        (a generated unknown must count as wrong, not vanish); PAD/BOS/EOS
        inside the content span are dropped."""
        return [self.tokens[i] for i in seq.content() if i >= UNK_ID]

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"tokens": self.tokens[len(RESERVED_TOKENS):]}, fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_file(cls, path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        return cls(payload["tokens"])


def sg_to_record(g: SceneGraph) -> dict:
    rec: dict = {
        "nodes": [{"id": n.id, "label": n.label, "kind": n.kind} for n in g.nodes],
        "edges": [[src, dst] for src, dst in g.edges],
    }
    if g.features is not None:
        rec["features"] = [[float(v) for v in row] for row in np.asarray(g.features)]
    return rec


def sg_from_record(rec: dict, line: int | None = None) -> SceneGraph:
    nodes = []
    for i, nd in enumerate(_expect(rec, "nodes", list, line)):
        if not isinstance(nd, dict):
            raise JsonlError("node must be an object", line, f"nodes[{i}]")
        nodes.append(
            SgNode(
                id=_expect(nd, "id", int, line, f"nodes[{i}]"),
                label=_expect(nd, "label", str, line, f"nodes[{i}]"),
                kind=_expect(nd, "kind", str, line, f"nodes[{i}]"),
            )
        )
    edges = []
    for i, e in enumerate(_expect(rec, "edges", list, line)):
        if not (isinstance(e, list) and len(e) == 2 and all(isinstance(v, int) for v in e)):
            raise JsonlError("edge must be a [src, dst] integer pair", line, f"edges[{i}]")
        edges.append((e[0], e[1]))
    features = None
    if "features" in rec:
        raw = _expect(rec, "features", list, line)
        try:
            features = np.asarray(raw, dtype=np.float64)
        except ValueError as exc:
            raise JsonlError(f"features are not a rectangular float matrix: {exc}", line, "features") from None
        if features.ndim != 2:
            raise JsonlError(f"features must be 2-D, got shape {features.shape}", line, "features")
    return SceneGraph(nodes=nodes, edges=edges, features=features)


def sc_to_record(t: ConstituencyTree) -> dict:
    return {
        "nodes": [{"id": n.id, "label": n.label, "kind": n.kind} for n in t.nodes],
        "parent": [p for p in t.parent],
        "children": [list(c) for c in t.children],
    }


def sc_from_record(rec: dict, line: int | None = None) -> ConstituencyTree:
    nodes = []
    for i, nd in enumerate(_expect(rec, "nodes", list, line)):
        if not isinstance(nd, dict):
            raise JsonlError("node must be an object", line, f"nodes[{i}]")
        nodes.append(
            ScNode(
                id=_expect(nd, "id", int, line, f"nodes[{i}]"),
                label=_expect(nd, "label", str, line, f"nodes[{i}]"),
                kind=_expect(nd, "kind", str, line, f"nodes[{i}]"),
            )
        )
    parent = []
    for i, p in enumerate(_expect(rec, "parent", list, line)):
        if p is not None and not isinstance(p, int):
            raise JsonlError("parent entries must be integers or null", line, f"parent[{i}]")
        parent.append(p)
    children = []
    for i, kids in enumerate(_expect(rec, "children", list, line)):
        if not (isinstance(kids, list) and all(isinstance(c, int) for c in kids)):
            raise JsonlError("children entries must be integer lists", line, f"children[{i}]")
        children.append(list(kids))
    return ConstituencyTree(nodes=nodes, parent=parent, children=children)


def caption_to_record(language: str, tokens: Sequence[str]) -> dict:
    return {"lang": language, "tokens": list(tokens)}


def caption_from_record(rec: dict, line: int | None = None) -> tuple[str, list[str]]:
    lang = _expect(rec, "lang", str, line)
    tokens = _expect(rec, "tokens", list, line)
    for i, tok in enumerate(tokens):
        if not isinstance(tok, str):
            raise JsonlError("tokens must be strings", line, f"tokens[{i}]")
    return lang, list(tokens)


def _expect(rec: dict, key: str, typ, line: int | None, prefix: str = ""):
    path = f"{prefix}.{key}" if prefix else key
    if key not in rec:
        raise JsonlError(f"missing required field", line, path)
    val = rec[key]
    if typ is int and isinstance(val, bool):
        raise JsonlError("expected an integer, got a boolean", line, path)
    if not isinstance(val, typ):
        raise JsonlError(f"expected {typ.__name__}, got {type(val).__name__}", line, path)
    return val


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise JsonlError(f"malformed JSON: {exc.msg}", lineno) from None
            if not isinstance(rec, dict):
                raise JsonlError("each line must hold a JSON object", lineno)
            out.append(rec)
    return out
