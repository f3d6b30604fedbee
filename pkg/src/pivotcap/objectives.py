"""Supervised objectives: caption likelihood and translation likelihood.

Both are means, not sums: token-level NLL averaged within a sample, then
averaged over the batch, so magnitudes stay comparable across caption lengths
and batch sizes when the combined objective weighs terms against each other.
"""
from __future__ import annotations

from typing import Sequence

from .structures import PAD_ID
from .tensor import Tensor, add, cross_entropy, scale


def mean_scalars(terms: Sequence[Tensor]) -> Tensor:
    if not terms:
        raise ValueError("mean_scalars: empty term list")
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return scale(total, 1.0 / len(terms))


def caption_loss(model, examples) -> Tensor:
    """Mean NLL of gold pivot captions given each example's visual scene graph."""
    if not examples:
        raise ValueError("caption_loss: empty batch")
    losses = []
    for ex in examples:
        h = model.encode_scene_graph(ex.visual_sg)
        logits = model.caption_logits(h, ex.pivot.ids)
        losses.append(cross_entropy(logits, ex.pivot.ids[1:], ignore_index=PAD_ID))
    return mean_scalars(losses)


def translation_loss(model, examples) -> Tensor:
    """Mean NLL of gold target captions given the pivot caption, its tree, and
    the caption-aligned (language-side) scene graph."""
    if not examples:
        raise ValueError("translation_loss: empty batch")
    losses = []
    for ex in examples:
        h = model.encode_scene_graph(ex.language_sg)
        memory = model.translation_memory(h, ex.pivot.ids, ex.pivot_tree)
        logits = model.translation_logits(memory, ex.target.ids)
        losses.append(cross_entropy(logits, ex.target.ids[1:], ignore_index=PAD_ID))
    return mean_scalars(losses)
