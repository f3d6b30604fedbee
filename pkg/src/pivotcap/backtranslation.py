"""Round-trip (back-translation) objectives and the oracles they consume.

Two losses close the loop between the caption path and the translation path:

* image->pivot back-translation (ipb): run the full pipeline on a visual
  scene graph, hand the generated target caption to an external
  target->pivot translator, and score the returned pseudo pivot caption
  under the captioner. At the oracle's fixed point (exact translator, model
  emitting gold captions) this equals the plain caption objective.
* pivot->target back-translation (ptb): synthesize visual-style node
  features for a language scene graph with an external feature generator,
  run the caption stage on that pseudo-visual graph, and score the gold
  target caption through the translation stage conditioned on the generated
  pivot.

Generation is frozen: greedy decodes and oracle calls happen under no_grad
and are exposed separately as "intermediates" so the differentiable scoring
half can be checked in isolation. Gradients flow only through the scoring
pass (teacher-forced likelihoods), never through argmax choices.

Oracles are pluggable. In-process defaults wrap the synthetic corpus
(dictionary translation, seeded label features); subprocess variants speak a
line protocol so an external program can stand in:

* translator process: one request per line, the target tokens joined by
  single spaces; it must answer with one line of pivot tokens joined by
  single spaces (an empty line means "no translation").
* generator process: one request per line, the node labels joined by single
  spaces; it must answer with one line holding one group per node, groups
  separated by ";", each group holding `width` floats separated by ",".
  Floats are parsed with Python float(); print them with repr() for an
  exact round trip.
"""
from __future__ import annotations

import subprocess
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .corpus import Lexicon, label_feature
from .structures import ConstituencyTree, SceneGraph, Vocabulary
from .tensor import Tensor, cross_entropy, no_grad
from .objectives import mean_scalars


class EmptyBatchWarning(UserWarning):
    """Every example in a back-translation batch was skipped."""


# -- oracles ------------------------------------------------------------


class DictionaryBackTranslator:
    """Target->pivot translation backed by the synthetic-corpus lexicon."""

    def __init__(self, lexicon: Lexicon):
        self.lexicon = lexicon

    def target_to_pivot(self, tokens: List[str]) -> List[str]:
        return self.lexicon.translate_target_to_pivot(list(tokens))


class SeededFeatureGenerator:
    """Deterministic node features from label identity.

    Each node gets the unit-norm seeded direction for its label plus optional
    Gaussian noise. Noise draws are keyed on the whole label sequence so the
    same graph always receives the same features regardless of call order.
    """

    def __init__(self, width: int, seed: int = 0, sigma: float = 0.0):
        if width <= 0:
            raise ValueError(f"feature width must be positive, got {width}")
        self.width = width
        self.seed = seed
        self.sigma = sigma

    def features_for(self, g: SceneGraph) -> np.ndarray:
        labels = [n.label for n in g.nodes]
        base = np.stack([label_feature(lab, self.width, self.seed) for lab in labels])
        if self.sigma > 0.0:
            import hashlib

            digest = hashlib.sha256(" ".join(labels).encode("utf-8")).digest()
            key = int.from_bytes(digest[:8], "little")
            rng = np.random.default_rng([key, self.seed, 2])
            base = base + self.sigma * rng.normal(size=base.shape)
        return base


def _check_tokens(tokens: List[str], what: str) -> None:
    for tok in tokens:
        if not tok or any(c.isspace() for c in tok):
            raise ValueError(f"{what} token {tok!r} is empty or contains whitespace")


class _LineProcess:
    """One persistent child process spoken to line-by-line over stdio."""

    def __init__(self, cmd: List[str]):
        self.cmd = list(cmd)
        self._proc: Optional[subprocess.Popen] = None

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._proc

    def round_trip(self, line: str) -> str:
        proc = self._ensure()
        assert proc.stdin is not None and proc.stdout is not None
        proc.stdin.write(line + "\n")
        proc.stdin.flush()
        reply = proc.stdout.readline()
        if reply == "":
            code = proc.poll()
            raise RuntimeError(f"oracle process {self.cmd[0]!r} closed its output (exit code {code})")
        return reply.rstrip("\n")

    def close(self) -> None:
        if self._proc is None:
            return
        proc, self._proc = self._proc, None
        try:
            if proc.stdin is not None:
                proc.stdin.close()
            proc.wait(timeout=5)
        except Exception:
            proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class SubprocessBackTranslator(_LineProcess):
    """Target->pivot translator running as a child process (line protocol)."""

    def target_to_pivot(self, tokens: List[str]) -> List[str]:
        _check_tokens(tokens, "target")
        reply = self.round_trip(" ".join(tokens))
        return reply.split() if reply.strip() else []


class SubprocessFeatureGenerator(_LineProcess):
    """Node-feature generator running as a child process (line protocol)."""

    def __init__(self, cmd: List[str], width: int):
        super().__init__(cmd)
        if width <= 0:
            raise ValueError(f"feature width must be positive, got {width}")
        self.width = width

    def features_for(self, g: SceneGraph) -> np.ndarray:
        labels = [n.label for n in g.nodes]
        _check_tokens(labels, "label")
        reply = self.round_trip(" ".join(labels))
        groups = reply.split(";")
        if len(groups) != len(labels):
            raise ValueError(
                f"generator returned {len(groups)} node groups for {len(labels)} nodes"
            )
        rows = []
        for gi, grp in enumerate(groups):
            vals = [float(x) for x in grp.split(",")]
            if len(vals) != self.width:
                raise ValueError(
                    f"generator group {gi} holds {len(vals)} values, expected {self.width}"
                )
            rows.append(vals)
        return np.asarray(rows, dtype=np.float64)


# -- shared helpers ------------------------------------------------------


@dataclass
class BackTranslationStats:
    used: int = 0
    skipped: int = 0
    reasons: Dict[str, int] = field(default_factory=dict)

    def skip(self, reason: str) -> None:
        self.skipped += 1
        self.reasons[reason] = self.reasons.get(reason, 0) + 1


TreeParser = Callable[[List[str]], ConstituencyTree]
GraphParser = Callable[[List[str]], SceneGraph]


def _tokens_for_ids(vocab: Vocabulary, content_ids: List[int]) -> List[str]:
    """One token string per id, sentinels included, so downstream trees keep
    exactly one leaf per generated position."""
    return [vocab.tokens[i] for i in content_ids]


def _fits_decoder(io_ids: List[int], max_len: int) -> bool:
    # the decoder feeds io_ids[:-1] and holds max_len + 2 position rows
    return len(io_ids) - 1 <= max_len + 2


# -- image -> pivot back-translation -------------------------------------


def ipb_intermediates(
    model,
    ex,
    translator,
    parser: TreeParser,
    graph_parser: GraphParser,
    stats: BackTranslationStats,
) -> Optional[dict]:
    """Frozen half of the ipb loss: full-pipeline generation plus the oracle
    call. Translation conditions on the structures parsed from the generated
    pivot text, the same interface the evaluation pipeline uses. Returns None
    (and counts the reason) when the example cannot produce a scoreable
    pseudo caption."""
    with no_grad():
        h = model.encode_scene_graph(ex.visual_sg)
        pivot_gen = model.caption_greedy(h)
        if len(pivot_gen) <= 2:
            stats.skip("empty_generated_pivot")
            return None
        pivot_tokens = _tokens_for_ids(model.pivot_vocab, pivot_gen[1:-1])
        tree = parser(pivot_tokens)
        pivot_sg = graph_parser(pivot_tokens)
        if not pivot_sg.nodes:
            stats.skip("empty_pivot_graph")
            return None
        memory = model.translation_memory(model.encode_scene_graph(pivot_sg), pivot_gen, tree)
        target_gen = model.translation_greedy(memory)
    if len(target_gen) <= 2:
        stats.skip("empty_generated_target")
        return None
    target_tokens = _tokens_for_ids(model.target_vocab, target_gen[1:-1])
    pseudo_tokens = translator.target_to_pivot(target_tokens)
    if not pseudo_tokens:
        stats.skip("empty_pseudo_pivot")
        return None
    pseudo = model.pivot_vocab.encode(pseudo_tokens, "pivot")
    if not _fits_decoder(pseudo.ids, model.cfg.max_len):
        stats.skip("pseudo_pivot_too_long")
        return None
    return {
        "pivot_gen": pivot_gen,
        "target_gen": target_gen,
        "pseudo_pivot_ids": pseudo.ids,
    }


def ipb_scoring(model, ex, inter: dict) -> Tensor:
    """Differentiable half: NLL of the pseudo pivot caption given the visual
    scene graph. This is the only part gradients reach."""
    h = model.encode_scene_graph(ex.visual_sg)
    logits = model.caption_logits(h, inter["pseudo_pivot_ids"])
    return cross_entropy(logits, inter["pseudo_pivot_ids"][1:])


def ipb_loss(model, examples, translator, parser: TreeParser, graph_parser: GraphParser):
    """Mean ipb scoring loss over the batch. Returns (loss, stats); a batch
    with no usable example yields a constant zero and a warning."""
    stats = BackTranslationStats()
    terms = []
    for ex in examples:
        inter = ipb_intermediates(model, ex, translator, parser, graph_parser, stats)
        if inter is None:
            continue
        terms.append(ipb_scoring(model, ex, inter))
        stats.used += 1
    if not terms:
        warnings.warn("ipb_loss: every example was skipped, loss is zero", EmptyBatchWarning)
        return Tensor(np.float64(0.0)), stats
    return mean_scalars(terms), stats


# -- pivot -> target back-translation -------------------------------------


def ptb_intermediates(model, ex, generator, parser: TreeParser, stats: BackTranslationStats) -> Optional[dict]:
    """Frozen half of the ptb loss: pseudo-visual features for the language
    scene graph plus the generated pivot caption on top of them."""
    feats = np.asarray(generator.features_for(ex.language_sg), dtype=np.float64)
    if feats.shape != (len(ex.language_sg.nodes), model.cfg.feature_width):
        raise ValueError(
            f"generator produced features of shape {feats.shape}, expected "
            f"({len(ex.language_sg.nodes)}, {model.cfg.feature_width})"
        )
    pseudo_sg = SceneGraph(nodes=ex.language_sg.nodes, edges=ex.language_sg.edges, features=feats)
    with no_grad():
        h = model.encode_scene_graph(pseudo_sg)
        pivot_gen = model.caption_greedy(h)
    if len(pivot_gen) <= 2:
        stats.skip("empty_generated_pivot")
        return None
    pivot_tokens = _tokens_for_ids(model.pivot_vocab, pivot_gen[1:-1])
    return {
        "pseudo_sg": pseudo_sg,
        "pivot_gen": pivot_gen,
        "pivot_tree": parser(pivot_tokens),
    }


def ptb_scoring(model, ex, inter: dict) -> Tensor:
    """Differentiable half: NLL of the gold target caption through the
    translation stage, conditioned on the generated pivot over pseudo-visual
    features. Gradients reach both stages' parameters, not the argmax."""
    h = model.encode_scene_graph(inter["pseudo_sg"])
    memory = model.translation_memory(h, inter["pivot_gen"], inter["pivot_tree"])
    logits = model.translation_logits(memory, ex.target.ids)
    return cross_entropy(logits, ex.target.ids[1:])


def ptb_loss(model, examples, generator, parser: TreeParser):
    """Mean ptb scoring loss over the batch. Returns (loss, stats)."""
    stats = BackTranslationStats()
    terms = []
    for ex in examples:
        inter = ptb_intermediates(model, ex, generator, parser, stats)
        if inter is None:
            continue
        terms.append(ptb_scoring(model, ex, inter))
        stats.used += 1
    if not terms:
        warnings.warn("ptb_loss: every example was skipped, loss is zero", EmptyBatchWarning)
        return Tensor(np.float64(0.0)), stats
    return mean_scalars(terms), stats
