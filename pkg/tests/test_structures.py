"""Structure records: validation error codes, JSONL roundtrips, vocabulary
encoding, and the canonical traversals the metrics are built on."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pivotcap.structures import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    UNK_ID,
    CaptionSequence,
    ConstituencyTree,
    GraphValidationError,
    JsonlError,
    SceneGraph,
    ScNode,
    SgNode,
    TreeValidationError,
    Vocabulary,
    caption_from_record,
    caption_to_record,
    read_jsonl,
    sc_from_record,
    sc_nodes_by_depth,
    sc_to_record,
    sg_edge_triples,
    sg_from_record,
    sg_to_record,
    tree_leaves,
    validate_constituency_tree,
    validate_scene_graph,
    write_jsonl,
)


def make_graph(features=None):
    # cat --sits_on--> mat, cat --has attribute--> black
    nodes = [
        SgNode(0, "cat", "object"),
        SgNode(1, "sits_on", "relation"),
        SgNode(2, "mat", "object"),
        SgNode(3, "black", "attribute"),
    ]
    edges = [(0, 1), (1, 2), (0, 3)]
    return SceneGraph(nodes=nodes, edges=edges, features=features)


def make_tree():
    # S -> NP(the cat) VP(sat)
    nodes = [
        ScNode(0, "S", "phrasal"),
        ScNode(1, "NP", "phrasal"),
        ScNode(2, "VP", "phrasal"),
        ScNode(3, "the", "word"),
        ScNode(4, "cat", "word"),
        ScNode(5, "sat", "word"),
    ]
    parent = [None, 0, 0, 1, 1, 2]
    children = [[1, 2], [3, 4], [5], [], [], []]
    return ConstituencyTree(nodes=nodes, parent=parent, children=children)


# -- scene graph validation --------------------------------------------------


def test_valid_graph_passes():
    validate_scene_graph(make_graph())
    validate_scene_graph(make_graph(np.ones((4, 8))))


def graph_error(mutate):
    g = make_graph()
    mutate(g)
    with pytest.raises(GraphValidationError) as exc:
        validate_scene_graph(g)
    return exc.value


def test_graph_error_codes():
    assert graph_error(lambda g: setattr(g.nodes[1], "id", 7)).code == "node-ids"
    assert graph_error(lambda g: setattr(g.nodes[0], "kind", "verb")).code == "bad-kind"
    assert graph_error(lambda g: setattr(g.nodes[2], "label", "")).code == "bad-label"
    assert graph_error(lambda g: g.edges.append((0, 9))).code == "dangling-edge"
    assert graph_error(lambda g: g.edges.append((2, 2))).code == "self-loop"
    assert graph_error(lambda g: g.edges.remove((0, 3))).code == "attribute-unattached"
    assert graph_error(lambda g: g.edges.remove((1, 2))).code == "relation-degree"
    assert graph_error(lambda g: setattr(g, "features", np.ones((3, 8)))).code == "feature-shape"
    assert graph_error(lambda g: setattr(g, "features", np.ones(4))).code == "feature-shape"


def test_graph_error_message_carries_code():
    err = graph_error(lambda g: g.edges.append((1, 1)))
    assert str(err).startswith("[self-loop]")


def test_attribute_attached_through_incoming_edge():
    # attribute -> object direction also counts as attached
    g = make_graph()
    g.edges.remove((0, 3))
    g.edges.append((3, 0))
    validate_scene_graph(g)


# -- constituency tree validation --------------------------------------------


def test_valid_tree_passes():
    validate_constituency_tree(make_tree())
    validate_constituency_tree(make_tree(), tokens=["the", "cat", "sat"])


def tree_error(mutate, tokens=None):
    t = make_tree()
    mutate(t)
    with pytest.raises(TreeValidationError) as exc:
        validate_constituency_tree(t, tokens=tokens)
    return exc.value


def test_tree_error_codes():
    assert tree_error(lambda t: t.parent.pop()).code == "node-ids"
    assert tree_error(lambda t: setattr(t.nodes[2], "id", 9)).code == "node-ids"
    assert tree_error(lambda t: setattr(t.nodes[0], "kind", "leaf")).code == "bad-kind"
    assert tree_error(lambda t: t.parent.__setitem__(3, 99)).code == "node-ids"
    assert tree_error(lambda t: t.parent.__setitem__(1, None)).code == "root-count"
    assert tree_error(lambda t: t.parent.__setitem__(0, 1)).code == "root-count"
    assert tree_error(lambda t: t.children[0].__setitem__(0, 2)).code == "parent-child-mismatch"
    assert tree_error(lambda t: setattr(t.nodes[5], "kind", "phrasal")).code == "phrasal-leaf"
    assert (
        tree_error(lambda t: (setattr(t.nodes[3], "kind", "phrasal"),)).code == "phrasal-leaf"
    )
    assert tree_error(lambda t: t.children.__setitem__(5, [3])).code == "parent-child-mismatch"


def test_word_with_children_code():
    # hang an extra word under word node 5 so only that rule is violated
    t = make_tree()
    t.nodes.append(ScNode(6, "now", "word"))
    t.parent.append(5)
    t.children[5] = [6]
    t.children.append([])
    err = pytest.raises(TreeValidationError, validate_constituency_tree, t).value
    assert err.code == "word-with-children"


def test_cycle_detection():
    nodes = [
        ScNode(0, "S", "phrasal"),
        ScNode(1, "NP", "phrasal"),
        ScNode(2, "cat", "word"),
    ]
    # 1 is its own ancestor through the child list; 0 is root over nothing
    t = ConstituencyTree(nodes=nodes, parent=[None, 1, 1], children=[[], [1, 2], []])
    with pytest.raises(TreeValidationError) as exc:
        validate_constituency_tree(t)
    assert exc.value.code in ("cycle", "parent-child-mismatch")


def test_unreachable_node_is_a_cycle_error():
    nodes = [
        ScNode(0, "S", "phrasal"),
        ScNode(1, "cat", "word"),
        ScNode(2, "NP", "phrasal"),
        ScNode(3, "dog", "word"),
    ]
    # 2 and 3 form an island: parent entries point at each other
    t = ConstituencyTree(
        nodes=nodes, parent=[None, 0, 3, 2], children=[[1], [], [3], [2]]
    )
    with pytest.raises(TreeValidationError) as exc:
        validate_constituency_tree(t)
    assert exc.value.code in ("cycle", "parent-child-mismatch")


def test_leaf_tokens_mismatch():
    err = tree_error(lambda t: None, tokens=["the", "dog", "sat"])
    assert err.code == "leaf-tokens"


# -- traversals ---------------------------------------------------------------


def test_tree_leaves_left_to_right():
    assert tree_leaves(make_tree()) == ["the", "cat", "sat"]


def test_tree_leaves_respects_child_order():
    t = make_tree()
    t.children[0] = [2, 1]
    assert tree_leaves(t) == ["sat", "the", "cat"]


def test_sg_edge_triples_lowercase_dedupe_sorted():
    nodes = [
        SgNode(0, "Cat", "object"),
        SgNode(1, "Mat", "object"),
        SgNode(2, "cat", "object"),
    ]
    g = SceneGraph(nodes=nodes, edges=[(0, 1), (2, 1), (1, 0)])
    assert sg_edge_triples(g) == [("cat", "mat"), ("mat", "cat")]


def test_sc_nodes_by_depth_breadth_first_phrasal_only():
    got = sc_nodes_by_depth(make_tree())
    assert got == [("S", 1), ("NP", 2), ("VP", 2)]


# -- vocabulary ----------------------------------------------------------------


def test_reserved_ids_are_fixed():
    v = Vocabulary(["cat", "sat"])
    assert (PAD_ID, BOS_ID, EOS_ID, UNK_ID) == (0, 1, 2, 3)
    assert v.tokens[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]
    assert v.index["cat"] == 4
    assert len(v) == 6


def test_encode_wraps_with_bos_eos_and_unks_unknowns():
    v = Vocabulary(["cat", "sat"])
    seq = v.encode(["cat", "flew", "sat"], language="pivot")
    assert seq.ids[0] == BOS_ID and seq.ids[-1] == EOS_ID
    assert seq.ids[1:-1] == [v.index["cat"], UNK_ID, v.index["sat"]]
    assert seq.language == "pivot"


def test_decode_keeps_unk_visible_drops_padding():
    v = Vocabulary(["cat"])
    seq = CaptionSequence("pivot", [BOS_ID, v.index["cat"], UNK_ID, PAD_ID, EOS_ID])
    assert v.decode(seq) == ["cat", "<unk>"]


def test_vocabulary_rejects_collisions_and_duplicates():
    with pytest.raises(ValueError, match="reserved"):
        Vocabulary(["cat", "<unk>"])
    with pytest.raises(ValueError, match="duplicate"):
        Vocabulary(["cat", "cat"])


def test_vocabulary_file_roundtrip(tmp_path):
    v = Vocabulary(["cat", "sat", "mat"])
    path = tmp_path / "vocab.json"
    v.to_file(path)
    w = Vocabulary.from_file(path)
    assert w.tokens == v.tokens
    assert w.index == v.index


def test_caption_content_strips_delimiters():
    seq = CaptionSequence("target", [BOS_ID, 5, 6, EOS_ID])
    assert seq.content() == [5, 6]


# -- record roundtrips ---------------------------------------------------------


def test_scene_graph_record_roundtrip():
    g = make_graph(np.arange(8.0).reshape(4, 2))
    back = sg_from_record(sg_to_record(g))
    assert [(n.id, n.label, n.kind) for n in back.nodes] == [
        (n.id, n.label, n.kind) for n in g.nodes
    ]
    assert back.edges == g.edges
    assert np.array_equal(back.features, g.features)
    bare = sg_from_record(sg_to_record(make_graph()))
    assert bare.features is None


def test_tree_record_roundtrip():
    t = make_tree()
    back = sc_from_record(sc_to_record(t))
    assert back.parent == t.parent
    assert back.children == t.children
    assert [(n.id, n.label, n.kind) for n in back.nodes] == [
        (n.id, n.label, n.kind) for n in t.nodes
    ]


def test_caption_record_roundtrip():
    rec = caption_to_record("pivot", ["the", "cat"])
    lang, toks = caption_from_record(rec)
    assert (lang, toks) == ("pivot", ["the", "cat"])


def test_record_schema_errors_name_field_and_line():
    with pytest.raises(JsonlError, match=r"nodes\[0\]"):
        sg_from_record({"nodes": ["not an object"], "edges": []}, line=3)
    with pytest.raises(JsonlError, match=r"edges\[0\].*line 3"):
        sg_from_record({"nodes": [], "edges": [[0]]}, line=3)
    with pytest.raises(JsonlError, match="missing required field"):
        sg_from_record({"edges": []})
    with pytest.raises(JsonlError, match=r"nodes\[0\]\.label"):
        sg_from_record({"nodes": [{"id": 0, "kind": "object"}], "edges": []})
    with pytest.raises(JsonlError, match="boolean"):
        sg_from_record({"nodes": [{"id": True, "label": "x", "kind": "object"}], "edges": []})
    with pytest.raises(JsonlError, match="rectangular"):
        sg_from_record({"nodes": [], "edges": [], "features": [[1.0], [1.0, 2.0]]})
    with pytest.raises(JsonlError, match="2-D"):
        sg_from_record({"nodes": [], "edges": [], "features": [1.0, 2.0]})
    with pytest.raises(JsonlError, match=r"parent\[0\]"):
        sc_from_record({"nodes": [], "parent": ["x"], "children": []})
    with pytest.raises(JsonlError, match=r"children\[0\]"):
        sc_from_record({"nodes": [], "parent": [], "children": ["x"]})
    with pytest.raises(JsonlError, match=r"tokens\[1\]"):
        caption_from_record({"lang": "pivot", "tokens": ["ok", 3]})


def test_jsonl_roundtrip_and_errors(tmp_path):
    path = tmp_path / "x.jsonl"
    records = [{"a": 1}, {"b": [1, 2]}]
    write_jsonl(path, records)
    assert read_jsonl(path) == records

    path.write_text('{"ok": 1}\nnot json\n', encoding="utf-8")
    with pytest.raises(JsonlError, match="line 2"):
        read_jsonl(path)

    path.write_text('[1, 2]\n', encoding="utf-8")
    with pytest.raises(JsonlError, match="JSON object"):
        read_jsonl(path)

    path.write_text('{"ok": 1}\n\n{"ok": 2}\n', encoding="utf-8")
    assert len(read_jsonl(path)) == 2


# -- property tests -------------------------------------------------------------

WORDS = st.text(alphabet="abcdefg", min_size=1, max_size=6)


@given(st.lists(WORDS, min_size=1, max_size=8, unique=True), st.lists(WORDS, max_size=8))
def test_encode_decode_roundtrip_known_words(vocab_words, sentence):
    v = Vocabulary(vocab_words)
    seq = v.encode(sentence, language="pivot")
    decoded = v.decode(seq)
    want = [w if w in v.index else "<unk>" for w in sentence]
    assert decoded == want


@given(st.integers(1, 6))
def test_right_spine_tree_roundtrips_and_validates(depth):
    nodes = []
    parent = []
    children = []
    for i in range(depth):
        nodes.append(ScNode(len(nodes), f"P{i}", "phrasal"))
        parent.append(len(nodes) - 2 if i else None)
        children.append([])
        if i:
            children[len(nodes) - 2].append(len(nodes) - 1)
    nodes.append(ScNode(len(nodes), "leaf", "word"))
    parent.append(len(nodes) - 2)
    children[len(nodes) - 2].append(len(nodes) - 1)
    children.append([])
    t = ConstituencyTree(nodes=nodes, parent=parent, children=children)
    validate_constituency_tree(t, tokens=["leaf"])
    back = sc_from_record(sc_to_record(t))
    assert back.parent == t.parent and back.children == t.children
    assert tree_leaves(back) == ["leaf"]
    assert sc_nodes_by_depth(back)[0] == ("P0", 1)
