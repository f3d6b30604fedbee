"""Synthetic bilingual scene corpus.

A scene is a small set of typed objects with attributes and directed
relations. From one scene the corpus derives, all deterministically:

* a scene graph (objects, attributes, relations as nodes; unlabeled edges),
  optionally carrying noisy per-node feature vectors standing in for vision;
* a pivot-language caption and its constituency tree;
* a target-language caption and its constituency tree.

The two grammars diverge on purpose. The pivot language puts attributes
before the head noun and the relation between its arguments:

    a red ball , a small girl holding a red ball

The target language reverses every lexeme's surface form, puts attributes
after the noun behind a linker particle ``de``, and moves the relation to
the end of the clause:

    a llab de der , a lrig de llams a llab de der gnidloh

Token-level translation is a bijection (string reversal) except for ``de``,
which exists only in the target language, so attribute-bearing captions have
different lengths in the two languages. Round-tripping a rendered target
caption through the dictionary translator reproduces the pivot caption
exactly. Both grammars parse deterministically, which is what lets the
back-translation losses and the structure probes run without any external
linguistic tooling.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .structures import (
    ConstituencyTree,
    SceneGraph,
    ScNode,
    SgNode,
    Vocabulary,
    caption_to_record,
    sc_to_record,
    sg_to_record,
    write_jsonl,
)

LINKER = "de"
PIVOT_CONJ = "and"
PIVOT_DET = "a"

PHRASAL_LABELS = ("S", "CL", "NP", "AP", "MP")


def _t(word: str) -> str:
    """Pivot lexeme -> target lexeme (string reversal; injective)."""
    return word[::-1]


@dataclass(frozen=True)
class SceneOntology:
    objects: tuple[str, ...]
    attributes: tuple[str, ...]
    relations: tuple[str, ...]
    attr_allowed: dict[str, tuple[str, ...]]
    rel_subjects: dict[str, tuple[str, ...]]
    rel_objects: dict[str, tuple[str, ...]]

    def fingerprint(self) -> str:
        payload = {
            "objects": list(self.objects),
            "attributes": list(self.attributes),
            "relations": list(self.relations),
            "attr_allowed": {k: list(v) for k, v in sorted(self.attr_allowed.items())},
            "rel_subjects": {k: list(v) for k, v in sorted(self.rel_subjects.items())},
            "rel_objects": {k: list(v) for k, v in sorted(self.rel_objects.items())},
        }
        blob = json.dumps(payload, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def default_ontology() -> SceneOntology:
    objects = (
        "girl", "boy", "man", "woman",
        "dog", "cat", "bird", "horse", "cow", "fox",
        "car", "bus", "boat", "kite", "ball", "book", "chair", "tree", "house", "flower",
    )
    attributes = ("red", "blue", "green", "white", "black", "small", "big", "old", "young", "round")
    relations = ("near", "above", "under", "behind", "holding", "riding", "watching", "chasing")

    people = ("girl", "boy", "man", "woman")
    animals = ("dog", "cat", "bird", "horse", "cow", "fox")
    animate = people + animals
    things = tuple(o for o in objects if o not in people)
    roundish = ("kite", "ball", "flower")

    attr_allowed: dict[str, tuple[str, ...]] = {}
    for obj in objects:
        allowed = ["small", "big"]
        if obj in animate:
            allowed += ["old", "young"]
        if obj in things:
            allowed += ["red", "blue", "green", "white", "black"]
        if obj in roundish:
            allowed += ["round"]
        # keep ontology attribute order so sampling order is canonical
        attr_allowed[obj] = tuple(a for a in attributes if a in allowed)

    rideable = ("horse", "car", "bus", "boat")
    rel_subjects = {r: objects for r in ("near", "above", "under", "behind")}
    rel_objects = {r: objects for r in ("near", "above", "under", "behind")}
    for r in ("holding", "watching", "chasing"):
        rel_subjects[r] = animate
        rel_objects[r] = objects
    rel_subjects["riding"] = animate
    rel_objects["riding"] = rideable
    return SceneOntology(
        objects=objects,
        attributes=attributes,
        relations=relations,
        attr_allowed=attr_allowed,
        rel_subjects=rel_subjects,
        rel_objects=rel_objects,
    )


@dataclass
class SceneObject:
    name: str
    attrs: list[str]


@dataclass
class Scene:
    objects: list[SceneObject]
    relations: list[tuple[int, str, int]]

    def signature(self) -> tuple:
        return (
            tuple((o.name, tuple(o.attrs)) for o in self.objects),
            tuple(self.relations),
        )


def sample_scene(seed: int, ontology: SceneOntology | None = None) -> Scene:
    """Draws a scene deterministically from ``seed``.

    2-5 distinct object types (fewer if the ontology is smaller), 0-2
    compatible attributes each, and enough relations (1-3) that every object
    takes part in at least one, except in single-object scenes.
    """
    onto = ontology or default_ontology()
    rng = np.random.default_rng([seed, 0])
    n_obj = min(int(rng.integers(2, 6)), len(onto.objects))
    names = [str(x) for x in rng.choice(np.array(onto.objects), size=n_obj, replace=False)]
    objects = []
    for name in names:
        allowed = onto.attr_allowed.get(name, ())
        k = min(int(rng.integers(0, 3)), len(allowed))
        attrs = [str(a) for a in rng.choice(np.array(allowed), size=k, replace=False)] if k else []
        objects.append(SceneObject(name=name, attrs=attrs))

    relations: list[tuple[int, str, int]] = []
    if n_obj >= 2:
        order = list(range(n_obj))
        rng.shuffle(order)
        pairs = [(order[i], order[i + 1]) for i in range(0, n_obj - 1, 2)]
        if n_obj % 2 == 1:
            partner = order[int(rng.integers(0, n_obj - 1))]
            pairs.append((order[-1], partner))
        for a, b in pairs:
            combos = []
            for subj, obj in ((a, b), (b, a)):
                for rel in onto.relations:
                    if names[subj] in onto.rel_subjects[rel] and names[obj] in onto.rel_objects[rel]:
                        combos.append((subj, rel, obj))
            relations.append(combos[int(rng.integers(0, len(combos)))])
    return Scene(objects=objects, relations=relations)


def label_feature(label: str, width: int, seed: int = 0) -> np.ndarray:
    """Unit-norm feature direction for a label, fixed by (label, width, seed)."""
    h = int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")
    rng = np.random.default_rng([h, seed, width])
    v = rng.normal(size=width)
    return v / np.linalg.norm(v)


def derive_scene_graph(
    scene: Scene,
    feature_width: int | None = None,
    noise_sigma: float = 0.0,
    noise_seed: int = 0,
    feature_seed: int = 0,
) -> SceneGraph:
    """Scene graph of a scene; with ``feature_width`` set, attaches per-node
    features (seeded label direction plus Gaussian noise) standing in for
    detector output."""
    nodes: list[SgNode] = []
    edges: list[tuple[int, int]] = []
    obj_node: dict[int, int] = {}
    for i, obj in enumerate(scene.objects):
        obj_node[i] = len(nodes)
        nodes.append(SgNode(id=len(nodes), label=obj.name, kind="object"))
    for i, obj in enumerate(scene.objects):
        for attr in obj.attrs:
            nid = len(nodes)
            nodes.append(SgNode(id=nid, label=attr, kind="attribute"))
            edges.append((obj_node[i], nid))
    for subj, rel, obj in scene.relations:
        nid = len(nodes)
        nodes.append(SgNode(id=nid, label=rel, kind="relation"))
        edges.append((obj_node[subj], nid))
        edges.append((nid, obj_node[obj]))
    features = None
    if feature_width is not None:
        rng = np.random.default_rng([noise_seed, 1])
        features = np.stack([label_feature(n.label, feature_width, feature_seed) for n in nodes])
        if noise_sigma > 0:
            features = features + noise_sigma * rng.normal(size=features.shape)
    return SceneGraph(nodes=nodes, edges=edges, features=features)


# ---------------------------------------------------------------------------
# Caption ASTs, rendering, derivation trees, and parsing
# ---------------------------------------------------------------------------


@dataclass
class NpRef:
    noun: str
    attrs: list[str]


@dataclass
class Clause:
    subj: NpRef
    rel: str | None = None
    obj: NpRef | None = None


def scene_to_ast(scene: Scene) -> list[Clause]:
    """Clause list in pivot lexeme space: one clause per relation, or a bare
    existential clause for a relation-less (single-object) scene."""
    def np_of(i: int) -> NpRef:
        o = scene.objects[i]
        return NpRef(noun=o.name, attrs=list(o.attrs))

    if not scene.relations:
        return [Clause(subj=np_of(0))]
    return [Clause(subj=np_of(s), rel=r, obj=np_of(o)) for s, r, o in scene.relations]


def ast_to_pivot_tokens(ast: Sequence[Clause]) -> list[str]:
    out: list[str] = []
    for i, cl in enumerate(ast):
        if i:
            out.append(PIVOT_CONJ)
        out += [PIVOT_DET] + list(cl.subj.attrs) + [cl.subj.noun]
        if cl.rel is not None:
            out.append(cl.rel)
            out += [PIVOT_DET] + list(cl.obj.attrs) + [cl.obj.noun]
    return out


def ast_to_target_tokens(ast: Sequence[Clause]) -> list[str]:
    def np_tokens(np_ref: NpRef) -> list[str]:
        toks = [_t(PIVOT_DET), _t(np_ref.noun)]
        if np_ref.attrs:
            toks.append(LINKER)
            toks += [_t(a) for a in np_ref.attrs]
        return toks

    out: list[str] = []
    for i, cl in enumerate(ast):
        if i:
            out.append(_t(PIVOT_CONJ))
        out += np_tokens(cl.subj)
        if cl.rel is not None:
            out += np_tokens(cl.obj)
            out.append(_t(cl.rel))
    return out


def _build_tree(spec) -> ConstituencyTree:
    """Flattens a nested ("phrasal", label, children) / ("word", label) spec
    into a ConstituencyTree with pre-order node ids."""
    nodes: list[ScNode] = []
    parent: list[int | None] = []
    children: list[list[int]] = []

    def walk(node_spec, par: int | None) -> int:
        nid = len(nodes)
        kind = node_spec[0]
        nodes.append(ScNode(id=nid, label=node_spec[1], kind=kind))
        parent.append(par)
        children.append([])
        if par is not None:
            children[par].append(nid)
        if kind == "phrasal":
            for child in node_spec[2]:
                walk(child, nid)
        return nid

    walk(spec, None)
    return ConstituencyTree(nodes=nodes, parent=parent, children=children)


def _pivot_np_spec(np_ref: NpRef):
    kids = [("word", PIVOT_DET)]
    kids += [("phrasal", "AP", [("word", a)]) for a in np_ref.attrs]
    kids.append(("word", np_ref.noun))
    return ("phrasal", "NP", kids)


def _target_np_spec(np_ref: NpRef):
    kids = [("word", _t(PIVOT_DET)), ("word", _t(np_ref.noun))]
    if np_ref.attrs:
        mp_kids = [("word", LINKER)]
        mp_kids += [("phrasal", "AP", [("word", _t(a))]) for a in np_ref.attrs]
        kids.append(("phrasal", "MP", mp_kids))
    return ("phrasal", "NP", kids)


def ast_to_pivot_tree(ast: Sequence[Clause]) -> ConstituencyTree:
    top = []
    for i, cl in enumerate(ast):
        if i:
            top.append(("word", PIVOT_CONJ))
        kids = [_pivot_np_spec(cl.subj)]
        if cl.rel is not None:
            kids.append(("word", cl.rel))
            kids.append(_pivot_np_spec(cl.obj))
        top.append(("phrasal", "CL", kids))
    return _build_tree(("phrasal", "S", top))


def ast_to_target_tree(ast: Sequence[Clause]) -> ConstituencyTree:
    top = []
    for i, cl in enumerate(ast):
        if i:
            top.append(("word", _t(PIVOT_CONJ)))
        kids = [_target_np_spec(cl.subj)]
        if cl.rel is not None:
            kids.append(_target_np_spec(cl.obj))
            kids.append(("word", _t(cl.rel)))
        top.append(("phrasal", "CL", kids))
    return _build_tree(("phrasal", "S", top))


class _Cursor:
    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        self.pos = 0

    def peek(self) -> str | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> str | None:
        tok = self.peek()
        if tok is not None:
            self.pos += 1
        return tok


def parse_pivot_caption(tokens: Sequence[str], ontology: SceneOntology | None = None) -> list[Clause] | None:
    """Recovers the clause AST from a pivot caption, or None if ungrammatical."""
    onto = ontology or default_ontology()
    objects, attrs, rels = set(onto.objects), set(onto.attributes), set(onto.relations)
    cur = _Cursor(tokens)

    def parse_np() -> NpRef | None:
        if cur.take() != PIVOT_DET:
            return None
        got_attrs = []
        while cur.peek() in attrs:
            got_attrs.append(cur.take())
        noun = cur.take()
        if noun not in objects:
            return None
        return NpRef(noun=noun, attrs=got_attrs)

    ast: list[Clause] = []
    while True:
        subj = parse_np()
        if subj is None:
            return None
        nxt = cur.peek()
        if nxt in rels:
            rel = cur.take()
            obj = parse_np()
            if obj is None:
                return None
            ast.append(Clause(subj=subj, rel=rel, obj=obj))
        else:
            ast.append(Clause(subj=subj))
        nxt = cur.peek()
        if nxt is None:
            break
        if nxt != PIVOT_CONJ:
            return None
        cur.take()
    return ast if ast else None


def parse_target_caption(tokens: Sequence[str], ontology: SceneOntology | None = None) -> list[Clause] | None:
    """Recovers the clause AST (in pivot lexeme space) from a target caption,
    or None if ungrammatical."""
    onto = ontology or default_ontology()
    objects_t = {_t(o): o for o in onto.objects}
    attrs_t = {_t(a): a for a in onto.attributes}
    rels_t = {_t(r): r for r in onto.relations}
    det_t = _t(PIVOT_DET)
    conj_t = _t(PIVOT_CONJ)
    cur = _Cursor(tokens)

    def parse_np() -> NpRef | None:
        if cur.take() != det_t:
            return None
        noun = cur.take()
        if noun not in objects_t:
            return None
        got_attrs: list[str] = []
        if cur.peek() == LINKER:
            cur.take()
            while cur.peek() in attrs_t:
                got_attrs.append(attrs_t[cur.take()])
            if not got_attrs:
                return None
        return NpRef(noun=objects_t[noun], attrs=got_attrs)

    ast: list[Clause] = []
    while True:
        subj = parse_np()
        if subj is None:
            return None
        if cur.peek() == det_t:
            obj = parse_np()
            if obj is None:
                return None
            rel = cur.take()
            if rel not in rels_t:
                return None
            ast.append(Clause(subj=subj, rel=rels_t[rel], obj=obj))
        else:
            ast.append(Clause(subj=subj))
        nxt = cur.peek()
        if nxt is None:
            break
        if nxt != conj_t:
            return None
        cur.take()
    return ast if ast else None


def pivot_tree_or_flat(tokens: Sequence[str], ontology: SceneOntology | None = None) -> ConstituencyTree:
    """Constituency tree of a pivot caption; ungrammatical output degrades to
    a flat single-level tree so the pipeline stays total."""
    ast = parse_pivot_caption(tokens, ontology)
    if ast is not None:
        return ast_to_pivot_tree(ast)
    return flat_tree(tokens)


def target_tree_or_flat(tokens: Sequence[str], ontology: SceneOntology | None = None) -> ConstituencyTree:
    ast = parse_target_caption(tokens, ontology)
    if ast is not None:
        return ast_to_target_tree(ast)
    return flat_tree(tokens)


def flat_tree(tokens: Sequence[str]) -> ConstituencyTree:
    """Single phrasal root with every token as a word child (the "no syntax"
    degenerate form). An empty caption still yields a one-word placeholder so
    the tree stays valid."""
    toks = list(tokens) if tokens else ["<unk>"]
    return _build_tree(("phrasal", "S", [("word", t) for t in toks]))


def ast_to_scene_graph(ast: Sequence[Clause]) -> SceneGraph:
    """Scene graph spelled by a clause AST (pivot lexeme space). Entities are
    keyed by noun: repeat mentions merge, attributes union in mention order."""
    order: list[str] = []
    attrs_of: dict[str, list[str]] = {}

    def visit(np_ref: NpRef) -> None:
        if np_ref.noun not in attrs_of:
            order.append(np_ref.noun)
            attrs_of[np_ref.noun] = []
        for a in np_ref.attrs:
            if a not in attrs_of[np_ref.noun]:
                attrs_of[np_ref.noun].append(a)

    triples: list[tuple[str, str, str]] = []
    for cl in ast:
        visit(cl.subj)
        if cl.rel is not None:
            visit(cl.obj)
            trip = (cl.subj.noun, cl.rel, cl.obj.noun)
            if trip not in triples:
                triples.append(trip)

    nodes: list[SgNode] = []
    edges: list[tuple[int, int]] = []
    obj_node: dict[str, int] = {}
    for noun in order:
        obj_node[noun] = len(nodes)
        nodes.append(SgNode(id=len(nodes), label=noun, kind="object"))
    for noun in order:
        for attr in attrs_of[noun]:
            nid = len(nodes)
            nodes.append(SgNode(id=nid, label=attr, kind="attribute"))
            edges.append((obj_node[noun], nid))
    for subj, rel, obj in triples:
        nid = len(nodes)
        nodes.append(SgNode(id=nid, label=rel, kind="relation"))
        edges.append((obj_node[subj], nid))
        edges.append((nid, obj_node[obj]))
    return SceneGraph(nodes=nodes, edges=edges, features=None)


def scene_graph_from_target_caption(tokens: Sequence[str], ontology: SceneOntology | None = None) -> SceneGraph:
    """Scene graph asserted by a target caption, for structure probes.

    Ungrammatical captions degrade to a bag of recognizable object nodes with
    no edges, which scores zero structural overlap against any non-trivial
    reference graph."""
    onto = ontology or default_ontology()
    ast = parse_target_caption(tokens, onto)
    if ast is not None:
        return ast_to_scene_graph(ast)
    objects_t = {_t(o): o for o in onto.objects}
    seen: list[str] = []
    for tok in tokens:
        noun = objects_t.get(tok)
        if noun is not None and noun not in seen:
            seen.append(noun)
    nodes = [SgNode(id=i, label=noun, kind="object") for i, noun in enumerate(seen)]
    return SceneGraph(nodes=nodes, edges=[], features=None)


def scene_graph_from_pivot_caption(tokens: Sequence[str], ontology: SceneOntology | None = None) -> SceneGraph:
    """Pivot-side twin of scene_graph_from_target_caption."""
    onto = ontology or default_ontology()
    ast = parse_pivot_caption(tokens, onto)
    if ast is not None:
        return ast_to_scene_graph(ast)
    objects = set(onto.objects)
    seen: list[str] = []
    for tok in tokens:
        if tok in objects and tok not in seen:
            seen.append(tok)
    nodes = [SgNode(id=i, label=noun, kind="object") for i, noun in enumerate(seen)]
    return SceneGraph(nodes=nodes, edges=[], features=None)


# ---------------------------------------------------------------------------
# Bilingual lexicon
# ---------------------------------------------------------------------------


@dataclass
class Lexicon:
    """Bijective pivot<->target token dictionary plus the target-only linker."""

    pivot_to_target: dict[str, str]
    target_to_pivot: dict[str, str]
    ontology: SceneOntology = field(default_factory=default_ontology)

    @classmethod
    def build(cls, ontology: SceneOntology | None = None) -> "Lexicon":
        onto = ontology or default_ontology()
        lexemes = list(onto.objects) + list(onto.attributes) + list(onto.relations) + [PIVOT_DET, PIVOT_CONJ]
        p2t = {w: _t(w) for w in lexemes}
        if len(set(p2t.values())) != len(p2t) or LINKER in p2t.values():
            raise ValueError("Lexicon: target surface forms collide; the dictionary must stay bijective")
        t2p = {v: k for k, v in p2t.items()}
        return cls(pivot_to_target=p2t, target_to_pivot=t2p, ontology=onto)

    def pivot_tokens(self) -> list[str]:
        return sorted(self.pivot_to_target)

    def target_tokens(self) -> list[str]:
        return sorted(list(self.target_to_pivot) + [LINKER])

    def translate_target_to_pivot(self, tokens: Sequence[str]) -> list[str]:
        """Deterministic oracle inverse of the rendering pipeline.

        Grammatical captions are parsed and re-rendered in pivot order, which
        makes the round trip exact. Anything else falls back to token-wise
        dictionary mapping with the linker dropped and unknowns kept visible
        as <unk>, so the oracle is total on arbitrary token lists."""
        ast = parse_target_caption(tokens, self.ontology)
        if ast is not None:
            return ast_to_pivot_tokens(ast)
        out = []
        for tok in tokens:
            if tok == LINKER:
                continue
            out.append(self.target_to_pivot.get(tok, "<unk>"))
        return out

    def translate_pivot_to_target(self, tokens: Sequence[str]) -> list[str]:
        """Mirror oracle (pivot -> target), same totality contract."""
        ast = parse_pivot_caption(tokens, self.ontology)
        if ast is not None:
            return ast_to_target_tokens(ast)
        return [self.pivot_to_target.get(tok, "<unk>") for tok in tokens]


def build_vocabularies(ontology: SceneOntology | None = None) -> tuple[Vocabulary, Vocabulary, Lexicon]:
    lex = Lexicon.build(ontology)
    return Vocabulary(lex.pivot_tokens()), Vocabulary(lex.target_tokens()), lex


def sg_label_list(ontology: SceneOntology | None = None) -> list[str]:
    onto = ontology or default_ontology()
    return sorted(list(onto.objects) + list(onto.attributes) + list(onto.relations))


def sc_label_list() -> list[str]:
    return list(PHRASAL_LABELS)


# ---------------------------------------------------------------------------
# Dataset emission
# ---------------------------------------------------------------------------


@dataclass
class CorpusConfig:
    n_caption_train: int = 256
    n_caption_test: int = 64
    n_parallel_train: int = 256
    n_parallel_test: int = 64
    feature_width: int = 32
    noise_sigma: float = 0.1
    base_seed: int = 7


SPLIT_OFFSETS = {
    "caption_train": 0,
    "caption_test": 1_000_000,
    "parallel_train": 2_000_000,
    "parallel_test": 3_000_000,
}


def split_seeds(cfg: CorpusConfig) -> dict[str, list[int]]:
    sizes = {
        "caption_train": cfg.n_caption_train,
        "caption_test": cfg.n_caption_test,
        "parallel_train": cfg.n_parallel_train,
        "parallel_test": cfg.n_parallel_test,
    }
    return {
        name: [cfg.base_seed + SPLIT_OFFSETS[name] + i for i in range(size)]
        for name, size in sizes.items()
    }


def emit_dataset(cfg: CorpusConfig, out_dir: str, ontology: SceneOntology | None = None) -> dict:
    """Writes every split as aligned JSONL files plus vocabularies and a
    manifest; returns the manifest. Line i of every file in a split describes
    the same scene. Reruns with the same config are byte-identical."""
    onto = ontology or default_ontology()
    vocab_p, vocab_t, _ = build_vocabularies(onto)
    os.makedirs(out_dir, exist_ok=True)

    manifest: dict = {
        "version": 1,
        "config": {
            "n_caption_train": cfg.n_caption_train,
            "n_caption_test": cfg.n_caption_test,
            "n_parallel_train": cfg.n_parallel_train,
            "n_parallel_test": cfg.n_parallel_test,
            "feature_width": cfg.feature_width,
            "noise_sigma": cfg.noise_sigma,
            "base_seed": cfg.base_seed,
        },
        "ontology_fingerprint": onto.fingerprint(),
        "seed_ranges": {
            name: [seeds[0], seeds[-1]] if seeds else []
            for name, seeds in split_seeds(cfg).items()
        },
        "vocab": {"pivot": "vocab_pivot.json", "target": "vocab_target.json"},
        "splits": {},
        "file_sha256": {},
    }

    vocab_p.to_file(os.path.join(out_dir, "vocab_pivot.json"))
    vocab_t.to_file(os.path.join(out_dir, "vocab_target.json"))

    for split, seeds in split_seeds(cfg).items():
        vsg_recs, lsg_recs = [], []
        cap_p, cap_t, sc_p, sc_t = [], [], [], []
        for seed in seeds:
            scene = sample_scene(seed, onto)
            vsg = derive_scene_graph(
                scene,
                feature_width=cfg.feature_width,
                noise_sigma=cfg.noise_sigma,
                noise_seed=seed,
                feature_seed=cfg.base_seed,
            )
            lsg = derive_scene_graph(scene)
            ast = scene_to_ast(scene)
            vsg_recs.append(sg_to_record(vsg))
            lsg_recs.append(sg_to_record(lsg))
            cap_p.append(caption_to_record("pivot", ast_to_pivot_tokens(ast)))
            cap_t.append(caption_to_record("target", ast_to_target_tokens(ast)))
            sc_p.append(sc_to_record(ast_to_pivot_tree(ast)))
            sc_t.append(sc_to_record(ast_to_target_tree(ast)))

        files = {
            f"{split}.vsg.jsonl": vsg_recs,
            f"{split}.lsg.jsonl": lsg_recs,
            f"{split}.caption_pivot.jsonl": cap_p,
            f"{split}.caption_target.jsonl": cap_t,
            f"{split}.sc_pivot.jsonl": sc_p,
            f"{split}.sc_target.jsonl": sc_t,
        }
        for name, recs in files.items():
            write_jsonl(os.path.join(out_dir, name), recs)
        manifest["splits"][split] = {
            "count": len(seeds),
            "scene_graph": {"visual": f"{split}.vsg.jsonl", "language": f"{split}.lsg.jsonl"},
            "caption": {"pivot": f"{split}.caption_pivot.jsonl", "target": f"{split}.caption_target.jsonl"},
            "constituency": {"pivot": f"{split}.sc_pivot.jsonl", "target": f"{split}.sc_target.jsonl"},
        }

    for split_info in manifest["splits"].values():
        for group in ("scene_graph", "caption", "constituency"):
            for name in split_info[group].values():
                manifest["file_sha256"][name] = _file_sha256(os.path.join(out_dir, name))
    for name in ("vocab_pivot.json", "vocab_target.json"):
        manifest["file_sha256"][name] = _file_sha256(os.path.join(out_dir, name))

    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest


def _file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
