"""End-to-end evaluation: run the pipeline on held-out scenes, score text
quality against gold captions, and probe structural coincidence.

Text metrics score the final target captions (and the intermediate pivot
captions) against gold. Structure probes compare, per sample:

* beta_g: the scene graph asserted by the predicted target caption against
  the input visual scene graph;
* beta_c: the constituency tree of the predicted pivot caption against the
  tree of the predicted target caption.

Both use the corpus grammar for parsing, with flat/bag fallbacks for
ungrammatical output, so the probes are total over anything the model emits.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Callable, List, Optional, Sequence

from .corpus import (
    default_ontology,
    pivot_tree_or_flat,
    scene_graph_from_pivot_caption,
    scene_graph_from_target_caption,
    target_tree_or_flat,
)
from .data import Example
from .metrics import bleu, cider, rouge_l, sc_coincidence, sg_coincidence
from .tensor import no_grad


@dataclass
class MetricReport:
    bleu_1: float
    bleu_2: float
    bleu_3: float
    bleu_4: float
    rouge_l: float
    cider: float
    beta_g: float
    beta_c: float
    pivot_bleu_1: float
    pivot_bleu_4: float
    sample_count: int

    def to_dict(self) -> dict:
        return asdict(self)


def _ids_to_tokens(vocab, ids: Sequence[int]) -> List[str]:
    return [vocab.tokens[i] for i in ids]


def generate_predictions(
    model,
    examples: Sequence[Example],
    ontology=None,
    parser: Optional[Callable] = None,
    max_samples: int = 0,
) -> List[dict]:
    """Greedy full-pipeline decode for each example.

    The translation stage re-derives the generated pivot sentence's
    structures (constituency tree and scene graph) from the text itself,
    mirroring how translation trains on the gold pivot's structures; the
    visual encoding conditions only the captioning stage. Returns one record
    per example with predicted and gold token lists. An empty generated pivot
    (nothing between the sentinels), or one whose parsed scene graph has no
    nodes, yields an empty target since the translator has nothing to
    condition on.
    """
    onto = ontology or default_ontology()
    parser = parser or (lambda toks: pivot_tree_or_flat(toks, onto))
    if max_samples and max_samples < len(examples):
        examples = examples[:max_samples]
    records = []
    for ex in examples:
        with no_grad():
            h = model.encode_scene_graph(ex.visual_sg)
            pivot_gen = model.caption_greedy(h)
            pivot_tokens = _ids_to_tokens(model.pivot_vocab, pivot_gen[1:-1])
            target_tokens = []
            if pivot_tokens:
                tree = parser(pivot_tokens)
                lsg = scene_graph_from_pivot_caption(pivot_tokens, onto)
                if lsg.nodes:
                    memory = model.translation_memory(
                        model.encode_scene_graph(lsg), pivot_gen, tree
                    )
                    target_gen = model.translation_greedy(memory)
                    target_tokens = _ids_to_tokens(model.target_vocab, target_gen[1:-1])
        records.append(
            {
                "pivot_pred": pivot_tokens,
                "target_pred": target_tokens,
                "pivot_gold": model.pivot_vocab.decode(ex.pivot),
                "target_gold": model.target_vocab.decode(ex.target),
            }
        )
    return records


def evaluate(
    model,
    examples: Sequence[Example],
    ontology=None,
    parser: Optional[Callable] = None,
    max_samples: int = 0,
) -> MetricReport:
    onto = ontology or default_ontology()
    parser = parser or (lambda toks: pivot_tree_or_flat(toks, onto))
    records = generate_predictions(model, examples, onto, parser, max_samples)
    used = examples[: len(records)]

    cand_t = [r["target_pred"] for r in records]
    refs_t = [r["target_gold"] for r in records]
    cand_p = [r["pivot_pred"] for r in records]
    refs_p = [r["pivot_gold"] for r in records]

    b_t = bleu(cand_t, refs_t)
    b_p = bleu(cand_p, refs_p)
    betas_g = []
    betas_c = []
    for r, ex in zip(records, used):
        pred_sg = scene_graph_from_target_caption(r["target_pred"], onto)
        betas_g.append(sg_coincidence(pred_sg, ex.visual_sg))
        pivot_tree = parser(r["pivot_pred"])
        target_tree = target_tree_or_flat(r["target_pred"], onto)
        betas_c.append(sc_coincidence(pivot_tree, target_tree))

    n = len(records)
    return MetricReport(
        bleu_1=b_t["bleu_1"],
        bleu_2=b_t["bleu_2"],
        bleu_3=b_t["bleu_3"],
        bleu_4=b_t["bleu_4"],
        rouge_l=rouge_l(cand_t, refs_t),
        cider=cider(cand_t, refs_t),
        beta_g=sum(betas_g) / n,
        beta_c=sum(betas_c) / n,
        pivot_bleu_1=b_p["bleu_1"],
        pivot_bleu_4=b_p["bleu_4"],
        sample_count=n,
    )


def probe_alignment(
    model,
    examples: Sequence[Example],
    ontology=None,
    parser: Optional[Callable] = None,
    max_samples: int = 0,
) -> dict:
    """Structure-coincidence probe over a split.

    "gold" rates use only the dataset (visual vs language scene graph, pivot
    vs target gold trees) and characterize the corpus; "predicted" rates use
    the model's own output and characterize the run.
    """
    onto = ontology or default_ontology()
    parser = parser or (lambda toks: pivot_tree_or_flat(toks, onto))
    if max_samples and max_samples < len(examples):
        examples = examples[:max_samples]
    gold_g = [sg_coincidence(ex.visual_sg, ex.language_sg) for ex in examples]
    gold_c = [sc_coincidence(ex.pivot_tree, ex.target_tree) for ex in examples]
    records = generate_predictions(model, examples, onto, parser)
    pred_g = []
    pred_c = []
    for r, ex in zip(records, examples):
        pred_g.append(sg_coincidence(scene_graph_from_target_caption(r["target_pred"], onto), ex.visual_sg))
        pred_c.append(
            sc_coincidence(parser(r["pivot_pred"]), target_tree_or_flat(r["target_pred"], onto))
        )
    n = len(examples)
    return {
        "sample_count": n,
        "gold": {
            "beta_g_mean": sum(gold_g) / n,
            "beta_g_min": min(gold_g),
            "beta_c_mean": sum(gold_c) / n,
            "beta_c_min": min(gold_c),
        },
        "predicted": {
            "beta_g_mean": sum(pred_g) / n,
            "beta_g_min": min(pred_g),
            "beta_c_mean": sum(pred_c) / n,
            "beta_c_min": min(pred_c),
        },
    }
