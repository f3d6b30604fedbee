"""Numeric gradient verification for every primitive op and every loss.

Each check compares reverse-mode gradients with central differences via
numeric_grad_check and reports the worst relative error. Discrete choices
(positive-pair selection, greedy decoding) are computed once and held fixed
inside the differentiated closure, matching what backpropagation actually
differentiates; random constants are hoisted outside the closures so finite
differencing sees a deterministic function.
"""
from __future__ import annotations

import warnings
from typing import Callable, List, Tuple

import numpy as np

from .alignment import AlignmentConfig, contrastive_loss, select_positive_pairs, similarity_matrix
from .backtranslation import (
    BackTranslationStats,
    DictionaryBackTranslator,
    SeededFeatureGenerator,
    ipb_intermediates,
    ipb_scoring,
    ptb_intermediates,
    ptb_scoring,
)
from .corpus import (
    CorpusConfig,
    build_vocabularies,
    default_ontology,
    derive_scene_graph,
    pivot_tree_or_flat,
    sample_scene,
    sc_label_list,
    scene_graph_from_pivot_caption,
    scene_to_ast,
    ast_to_pivot_tokens,
    ast_to_pivot_tree,
    ast_to_target_tokens,
    ast_to_target_tree,
    sg_label_list,
)
from .data import Example
from .model import CaptionModel, ModelConfig
from .objectives import caption_loss, translation_loss
from .tensor import (
    Tensor,
    add,
    concat,
    cosine_matrix,
    cross_entropy,
    exp,
    gather_rows,
    layer_norm,
    log,
    matmul,
    mul,
    narrow,
    numeric_grad_check,
    relu,
    reshape,
    scale,
    segment_sum,
    softmax,
    tensor_mean,
    tensor_sum,
    transpose,
)

Row = Tuple[str, float]


def _weighted(out) -> Tensor:
    # deterministic weighting so elementwise gradient errors cannot cancel
    w = Tensor(np.linspace(0.5, 1.5, out.data.size).reshape(out.shape))
    return tensor_sum(mul(out, w))


def op_checks(seed: int = 0) -> List[Row]:
    rng = np.random.default_rng([seed, 7])
    t = lambda *shape: Tensor(rng.normal(size=shape), requires_grad=True)
    const = lambda *shape: Tensor(rng.normal(size=shape))

    a4x3 = t(4, 3)
    b4x3 = const(4, 3)
    m3x5 = const(3, 5)
    pos = Tensor(np.abs(rng.normal(size=(4, 3))) + 0.5, requires_grad=True)
    ids = np.array([2, 0, 3, 1, 2], dtype=np.int64)
    seg = np.array([1, 0, 1, 2], dtype=np.int64)
    logits = t(5, 7)
    targets = np.array([3, 0, 6, 2, 6], dtype=np.int64)
    cos_b = const(5, 3)

    cases: List[Tuple[str, Callable[[Tensor], Tensor], Tensor]] = [
        ("add", lambda x: _weighted(add(x, b4x3)), a4x3),
        ("mul", lambda x: _weighted(mul(x, b4x3)), a4x3),
        ("scale", lambda x: _weighted(scale(x, -1.7)), a4x3),
        ("matmul", lambda x: _weighted(matmul(x, m3x5)), a4x3),
        ("transpose", lambda x: _weighted(transpose(x)), a4x3),
        ("reshape", lambda x: _weighted(reshape(x, (2, 6))), a4x3),
        ("concat", lambda x: _weighted(concat([x, b4x3], axis=0)), a4x3),
        ("narrow", lambda x: _weighted(narrow(x, 0, 1, 2)), a4x3),
        ("relu", lambda x: _weighted(relu(x)), a4x3),
        ("exp", lambda x: _weighted(exp(scale(x, 0.3))), a4x3),
        ("log", lambda x: _weighted(log(x)), pos),
        ("softmax", lambda x: _weighted(softmax(x, axis=-1)), a4x3),
        ("layer_norm", lambda x: _weighted(layer_norm(x)), a4x3),
        ("gather_rows", lambda x: _weighted(gather_rows(x, ids)), a4x3),
        ("segment_sum", lambda x: _weighted(segment_sum(x, seg, 3)), a4x3),
        ("sum", lambda x: tensor_sum(x), a4x3),
        ("mean", lambda x: tensor_mean(x), a4x3),
        ("cross_entropy", lambda x: cross_entropy(x, targets), logits),
        ("cosine_matrix", lambda x: _weighted(cosine_matrix(x, cos_b)), a4x3),
    ]
    return [(f"op/{name}", numeric_grad_check(f, x)) for name, f, x in cases]


def _toy_world(seed: int):
    onto = default_ontology()
    pivot_vocab, target_vocab, lexicon = build_vocabularies(onto)
    width = 8
    mcfg = ModelConfig(
        hidden_dim=8, heads=2, dec_layers=1, ffn_dim=16, gcn_layers=1,
        feature_width=width, max_len=32,
    )
    model = CaptionModel(mcfg, pivot_vocab, target_vocab, sg_label_list(onto), sc_label_list(), seed=seed)
    base = CorpusConfig().base_seed
    examples = []
    for i in range(2):
        scene = sample_scene(base + seed + i, onto)
        ast = scene_to_ast(scene)
        examples.append(
            Example(
                visual_sg=derive_scene_graph(scene, feature_width=width, noise_sigma=0.1,
                                             noise_seed=seed + i, feature_seed=base),
                language_sg=derive_scene_graph(scene),
                pivot=pivot_vocab.encode(ast_to_pivot_tokens(ast), "pivot"),
                pivot_tree=ast_to_pivot_tree(ast),
                target=target_vocab.encode(ast_to_target_tokens(ast), "target"),
                target_tree=ast_to_target_tree(ast),
            )
        )
    parser = lambda toks: pivot_tree_or_flat(toks, onto)
    graph_parser = lambda toks: scene_graph_from_pivot_caption(toks, onto)
    return model, examples, lexicon, parser, graph_parser, onto


def loss_checks(seed: int = 0) -> List[Row]:
    model, examples, lexicon, parser, graph_parser, _ = _toy_world(seed)
    acfg = AlignmentConfig()
    ex, pex = examples[0], examples[1]

    def cma_fixed() -> Callable[[], Tensor]:
        v0 = model.encode_scene_graph(ex.visual_sg)
        l0 = model.encode_scene_graph(ex.language_sg)
        pairs = select_positive_pairs(similarity_matrix(v0, l0).data, acfg.rho_m)
        if not pairs:
            pairs = [(0, int(np.argmax(similarity_matrix(v0, l0).data[0])))]

        def f() -> Tensor:
            s = similarity_matrix(
                model.encode_scene_graph(ex.visual_sg), model.encode_scene_graph(ex.language_sg)
            )
            return contrastive_loss(s, pairs, acfg.tau_m, acfg.include_positive_in_denominator)

        return f

    def cla_fixed() -> Callable[[], Tensor]:
        def reps():
            h = model.encode_scene_graph(pex.language_sg)
            states = model.pivot_word_states(h, pex.pivot.ids)
            return (
                model.encode_pivot_tree(pex.pivot_tree, states),
                model.encode_target_tree(pex.target_tree),
            )

        r0, t0 = reps()
        pairs = select_positive_pairs(similarity_matrix(r0, t0).data, acfg.rho_l)
        if not pairs:
            pairs = [(0, int(np.argmax(similarity_matrix(r0, t0).data[0])))]

        def f() -> Tensor:
            rp, rt = reps()
            return contrastive_loss(
                similarity_matrix(rp, rt), pairs, acfg.tau_l, acfg.include_positive_in_denominator
            )

        return f

    stats = BackTranslationStats()
    translator = DictionaryBackTranslator(lexicon)
    generator = SeededFeatureGenerator(width=model.cfg.feature_width, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        inter_ipb = ipb_intermediates(model, ex, translator, parser, graph_parser, stats)
        inter_ptb = ptb_intermediates(model, pex, generator, parser, stats)
    if inter_ipb is None or inter_ptb is None:
        raise RuntimeError(f"toy world produced no back-translation intermediates: {stats.reasons}")

    cma_f = cma_fixed()
    cla_f = cla_fixed()
    losses: List[Tuple[str, Callable[[], Tensor], Tuple[str, ...]]] = [
        ("loss/caption", lambda: caption_loss(model, [ex]),
         ("sg/vis_b", "pivot_dec/l0/ffn/b1", "sg_gcn/l0/b")),
        ("loss/translation", lambda: translation_loss(model, [pex]),
         ("sc/kind_emb", "target_dec/l0/cross/bo", "sg_gcn/l0/b")),
        ("loss/cma", cma_f, ("sg/vis_b", "sg/kind_emb", "sg_gcn/l0/b")),
        ("loss/cla", cla_f, ("sc/kind_emb", "sc_gcn/l0/b", "pivot_dec/l0/ffn/b1")),
        ("loss/ipb", lambda: ipb_scoring(model, ex, inter_ipb),
         ("sg/vis_b", "pivot_dec/l0/ffn/b1")),
        ("loss/ptb", lambda: ptb_scoring(model, pex, inter_ptb),
         ("target_dec/l0/ffn/b1", "sc_gcn/l0/b", "sg/vis_b")),
    ]
    rows: List[Row] = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for name, f, param_names in losses:
            worst = 0.0
            touched = False
            for pname in param_names:
                p = model.registry[pname]
                err = numeric_grad_check(lambda _: f(), p)
                worst = max(worst, err)
                model.registry.zero_grad()
                loss = f()
                if loss.requires_grad:
                    loss.backward()
                if p.grad is not None and np.abs(p.grad).max() > 0:
                    touched = True
            if not touched:
                worst = float("inf")  # every checked parameter was dead: vacuous pass
            rows.append((name, worst))
    model.registry.zero_grad()
    return rows


def run_grad_checks(seed: int = 0) -> List[Row]:
    return op_checks(seed) + loss_checks(seed)
