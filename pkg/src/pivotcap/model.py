"""Full model assembly: shared graph encoders, two decoders, fusion.

Parameter sharing follows the architecture's two pivots. One GCN encodes
every scene graph, visual or language-side; the only difference is how node
vectors start out (a learned projection of detector features versus a label
embedding). One GCN encodes every constituency tree, pivot or target-side.
Word nodes of a pivot tree start from the pivot decoder's hidden states for
those tokens, tying the translation input to the captioner's output space;
word nodes of a target tree start from the target token embedding.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoders import DecoderConfig, TransformerDecoder, fuse_structures
from .encoders import gcn_forward, init_gcn
from .structures import (
    UNK_ID,
    ConstituencyTree,
    SceneGraph,
    Vocabulary,
)
from .tensor import ShapeError, Tensor, add, concat, embedding_lookup, gather_rows, matmul

SG_KIND_INDEX = {"object": 0, "attribute": 1, "relation": 2}
SC_KIND_INDEX = {"phrasal": 0, "word": 1}


class ParamRegistry:
    """Ordered name -> Tensor map for every trainable parameter."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def register(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"ParamRegistry: duplicate parameter name {name!r}")
        t = Tensor(array, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        mine, theirs = set(self._params), set(state)
        if mine != theirs:
            missing = sorted(mine - theirs)
            extra = sorted(theirs - mine)
            raise ValueError(f"load_state: parameter names disagree (missing {missing}, unexpected {extra})")
        for name, t in self._params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"load_state: {name} has shape {arr.shape}, expected {t.data.shape}")
            t.data = np.ascontiguousarray(arr)
            t.grad = None


@dataclass
class ModelConfig:
    hidden_dim: int = 64
    heads: int = 4
    dec_layers: int = 2
    ffn_dim: int = 128
    gcn_layers: int = 2
    feature_width: int = 32
    max_len: int = 40
    fusion_mode: str = "residual"
    ablate_sg_structure: bool = False
    ablate_sc_structure: bool = False


class CaptionModel:
    """Scene graph -> pivot caption -> (constituency) -> target caption."""

    def __init__(
        self,
        cfg: ModelConfig,
        pivot_vocab: Vocabulary,
        target_vocab: Vocabulary,
        sg_labels: list[str],
        sc_labels: list[str],
        seed: int = 0,
    ):
        self.cfg = cfg
        self.pivot_vocab = pivot_vocab
        self.target_vocab = target_vocab
        # row 0 of each label table is the unknown-label fallback
        self.sg_label_index = {lab: i + 1 for i, lab in enumerate(sg_labels)}
        self.sc_label_index = {lab: i + 1 for i, lab in enumerate(sc_labels)}
        self.registry = ParamRegistry()
        rng = np.random.default_rng([seed, 99])
        d = cfg.hidden_dim
        std = 1.0 / np.sqrt(d)
        reg = self.registry.register
        reg("sg/label_emb", rng.normal(0.0, std, size=(len(sg_labels) + 1, d)))
        reg("sg/kind_emb", rng.normal(0.0, std, size=(len(SG_KIND_INDEX), d)))
        reg("sg/vis_w", rng.normal(0.0, 1.0 / np.sqrt(cfg.feature_width), size=(cfg.feature_width, d)))
        reg("sg/vis_b", np.zeros(d))
        reg("sc/label_emb", rng.normal(0.0, std, size=(len(sc_labels) + 1, d)))
        reg("sc/kind_emb", rng.normal(0.0, std, size=(len(SC_KIND_INDEX), d)))
        init_gcn(self.registry, "sg_gcn", d, cfg.gcn_layers, rng)
        init_gcn(self.registry, "sc_gcn", d, cfg.gcn_layers, rng)
        dec_cfg = dict(dim=d, heads=cfg.heads, layers=cfg.dec_layers, ffn_dim=cfg.ffn_dim, max_len=cfg.max_len)
        self.pivot_decoder = TransformerDecoder(
            "pivot_dec", DecoderConfig(vocab_size=len(pivot_vocab), **dec_cfg), self.registry, rng
        )
        self.target_decoder = TransformerDecoder(
            "target_dec", DecoderConfig(vocab_size=len(target_vocab), **dec_cfg), self.registry, rng
        )

    # -- scene graphs --------------------------------------------------

    def _sg_label_ids(self, g: SceneGraph) -> np.ndarray:
        return np.asarray([self.sg_label_index.get(n.label, 0) for n in g.nodes], dtype=np.int64)

    def encode_scene_graph(self, g: SceneGraph) -> Tensor:
        """Node representations H (one row per node id). Graphs with features
        use the visual projection; label embeddings otherwise."""
        if not g.nodes:
            raise ShapeError("encode_scene_graph", "graph has no nodes")
        kinds = np.asarray([SG_KIND_INDEX[n.kind] for n in g.nodes], dtype=np.int64)
        if g.features is not None:
            feats = np.asarray(g.features, dtype=np.float64)
            if feats.shape != (len(g.nodes), self.cfg.feature_width):
                raise ShapeError(
                    "encode_scene_graph",
                    f"features shape {feats.shape} does not match (n_nodes, {self.cfg.feature_width})",
                )
            base = add(matmul(Tensor(feats), self.registry["sg/vis_w"]), self.registry["sg/vis_b"])
        else:
            base = embedding_lookup(self.registry["sg/label_emb"], self._sg_label_ids(g))
        h0 = add(base, embedding_lookup(self.registry["sg/kind_emb"], kinds))
        edges = [] if self.cfg.ablate_sg_structure else g.edges
        return gcn_forward(h0, edges, self.registry, "sg_gcn", self.cfg.gcn_layers)

    # -- constituency trees --------------------------------------------

    def _tree_edges(self, t: ConstituencyTree) -> list[tuple[int, int]]:
        return [(p, c) for p, kids in enumerate(t.children) for c in kids]

    def _encode_tree(self, t: ConstituencyTree, word_rows: Tensor, word_node_ids: list[int]) -> Tensor:
        n = len(t.nodes)
        phrasal_ids = [i for i in range(n) if t.nodes[i].kind == "phrasal"]
        if len(word_node_ids) != word_rows.shape[0]:
            raise ShapeError(
                "encode_tree",
                f"{len(word_node_ids)} word nodes but {word_rows.shape[0]} word vectors",
            )
        lab_ids = np.asarray(
            [self.sc_label_index.get(t.nodes[i].label, 0) for i in phrasal_ids], dtype=np.int64
        )
        phrasal_rows = embedding_lookup(self.registry["sc/label_emb"], lab_ids)
        stacked = concat([phrasal_rows, word_rows], axis=0) if word_node_ids else phrasal_rows
        position = np.empty(n, dtype=np.int64)
        for pos, node in enumerate(phrasal_ids):
            position[node] = pos
        for pos, node in enumerate(word_node_ids):
            position[node] = len(phrasal_ids) + pos
        base = gather_rows(stacked, position)
        kinds = np.asarray([SC_KIND_INDEX[nd.kind] for nd in t.nodes], dtype=np.int64)
        h0 = add(base, embedding_lookup(self.registry["sc/kind_emb"], kinds))
        edges = [] if self.cfg.ablate_sc_structure else self._tree_edges(t)
        return gcn_forward(h0, edges, self.registry, "sc_gcn", self.cfg.gcn_layers)

    def encode_pivot_tree(self, t: ConstituencyTree, word_states: Tensor) -> Tensor:
        """Encodes a pivot-side tree whose word nodes start from decoder
        hidden states (one row per leaf, in leaf order)."""
        word_ids = self._word_node_ids(t)
        return self._encode_tree(t, word_states, word_ids)

    def encode_target_tree(self, t: ConstituencyTree) -> Tensor:
        """Encodes a target-side tree; word nodes start from the target token
        embedding of their label."""
        word_ids = self._word_node_ids(t)
        tok_ids = np.asarray(
            [self.target_vocab.index.get(t.nodes[i].label, UNK_ID) for i in word_ids], dtype=np.int64
        )
        word_rows = embedding_lookup(self.registry["target_dec/token_emb"], tok_ids)
        return self._encode_tree(t, word_rows, word_ids)

    @staticmethod
    def _word_node_ids(t: ConstituencyTree) -> list[int]:
        """Word node ids in left-to-right leaf order."""
        root = next(i for i, p in enumerate(t.parent) if p is None)
        out: list[int] = []
        stack = [root]
        while stack:
            node = stack.pop()
            if t.nodes[node].kind == "word":
                out.append(node)
            stack.extend(reversed(t.children[node]))
        return out

    # -- captioning ----------------------------------------------------

    def caption_logits(self, h: Tensor, io_ids: list[int]) -> Tensor:
        """Teacher-forced pivot logits: feed all but the final token, score
        positions 1..T against the fed prefix."""
        _, logits = self.pivot_decoder.forward(h, io_ids[:-1])
        return logits

    def caption_greedy(self, h: Tensor) -> list[int]:
        return self.pivot_decoder.greedy(h)

    def pivot_word_states(self, h: Tensor, io_ids: list[int]) -> Tensor:
        """Hidden state of the pivot decoder at each content token of a full
        I/O sequence [BOS, w_1..w_T, EOS]: the state that has just read w_i."""
        from .tensor import narrow

        hidden, _ = self.pivot_decoder.forward(h, io_ids[:-1])
        t = len(io_ids) - 2
        if t == 0:
            raise ShapeError("pivot_word_states", "caption has no content tokens")
        return narrow(hidden, 0, 1, t)

    # -- translation ---------------------------------------------------

    def translation_memory(self, h: Tensor, pivot_io_ids: list[int], tree: ConstituencyTree) -> Tensor:
        """Fused memory for the target decoder: encode the pivot tree (word
        nodes seeded with captioner hidden states), then fuse with the scene."""
        word_states = self.pivot_word_states(h, pivot_io_ids)
        r = self.encode_pivot_tree(tree, word_states)
        return fuse_structures(r, h, self.cfg.hidden_dim, self.cfg.fusion_mode)

    def translation_logits(self, memory: Tensor, target_io_ids: list[int]) -> Tensor:
        _, logits = self.target_decoder.forward(memory, target_io_ids[:-1])
        return logits

    def translation_greedy(self, memory: Tensor) -> list[int]:
        return self.target_decoder.greedy(memory)
