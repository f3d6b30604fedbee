"""Four-stage training: supervised warm-up, alignment, back-translation,
joint fine-tuning.

Every source of randomness derives from the run seed, batches are drawn by
epoch-shuffled round robin, decoding is greedy, and arithmetic is float64,
so two runs with the same config and data are bit-identical per kernel
backend. Each stage starts a fresh optimizer on the parameters the previous
stage left behind; resuming therefore happens at stage boundaries (or at
any saved step, which restarts that stage's remaining steps only if you
rerun the whole stage).

Checkpoint file layout (magic "PVCK1"):

    PVCK1\n
    {json header}\n      names, shapes, byte offsets, meta
    raw little-endian float64 payload, C order, params sorted by name
"""
from __future__ import annotations

import json
import os
import shlex
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .alignment import AlignmentConfig, EmptyPairSetWarning, cla_loss, cma_loss
from .backtranslation import (
    DictionaryBackTranslator,
    EmptyBatchWarning,
    SeededFeatureGenerator,
    SubprocessBackTranslator,
    SubprocessFeatureGenerator,
    ipb_loss,
    ptb_loss,
)
from .config import TrainingConfig
from .corpus import (
    build_vocabularies,
    default_ontology,
    pivot_tree_or_flat,
    sc_label_list,
    scene_graph_from_pivot_caption,
    sg_label_list,
)
from .data import Dataset
from .model import CaptionModel, ModelConfig
from .objectives import caption_loss, mean_scalars, translation_loss
from .tensor import Tensor, global_norm

CHECKPOINT_MAGIC = b"PVCK1\n"
STAGES = (1, 2, 3, 4)


# -- optimizer ------------------------------------------------------------


class Adam:
    """Adam over a parameter registry, with global-norm gradient clipping
    applied before the update. Parameters without a gradient step with a
    zero gradient, which leaves them unchanged."""

    def __init__(self, registry, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, clip_norm: float = 0.0):
        self.registry = registry
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in registry.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in registry.items()}

    def step(self) -> float:
        """Applies one update from the gradients currently in the registry.
        Returns the pre-clip global gradient norm."""
        grads = {
            name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in self.registry.items()
        }
        norm = global_norm(grads.values())
        scale = 1.0
        if self.clip_norm > 0.0 and norm > self.clip_norm:
            scale = self.clip_norm / norm
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in self.registry.items():
            g = grads[name] * scale
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
        return norm


# -- loss-weight schedule --------------------------------------------------


def lambda_value(start: float, end: float, step: int, total: int) -> float:
    """Linear interpolation from start (step 0) to end (step == total).

    Written as a convex combination so both endpoints are exact in float64;
    a flat schedule returns its constant unconditionally.
    """
    if start == end or total <= 0:
        return start
    s = min(max(step, 0), total)
    f = s / total
    return start * (1.0 - f) + end * f


LAMBDA_NAMES = ("cap", "trans", "cma", "cla", "ipb", "ptb")


def stage4_lambdas(cfg: TrainingConfig, step: int, total: int) -> Dict[str, float]:
    out = {}
    for name in LAMBDA_NAMES:
        start = getattr(cfg, f"lambda_{name}_start")
        end = getattr(cfg, f"lambda_{name}_end")
        out[name] = lambda_value(start, end, step, total)
    return out


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(path: str, state: Dict[str, np.ndarray], meta: dict) -> None:
    names = sorted(state)
    entries = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(np.asarray(state[name], dtype=np.float64))
        blob = arr.astype("<f8", copy=False).tobytes(order="C")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += len(blob)
        blobs.append(blob)
    header = json.dumps({"meta": meta, "params": entries}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(header.encode("utf-8") + b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str):
    """Returns (state, meta). Refuses files without the expected magic or
    with a payload that disagrees with the header."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path!r} is not a checkpoint (bad magic {magic!r})")
        header_line = fh.readline()
        if not header_line.endswith(b"\n"):
            raise ValueError(f"{path!r}: truncated header")
        header = json.loads(header_line.decode("utf-8"))
        payload = fh.read()
    state: Dict[str, np.ndarray] = {}
    expected = 0
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        stop = start + count * 8
        expected = max(expected, stop)
        if stop > len(payload):
            raise ValueError(f"{path!r}: payload too short for {entry['name']!r}")
        state[entry["name"]] = (
            np.frombuffer(payload[start:stop], dtype="<f8").astype(np.float64).reshape(shape)
        )
    if expected != len(payload):
        raise ValueError(f"{path!r}: payload holds {len(payload)} bytes, header describes {expected}")
    return state, header["meta"]


def read_checkpoint_meta(path: str) -> dict:
    """Reads only the magic and header line, not the parameter payload."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path!r} is not a checkpoint (bad magic {magic!r})")
        header_line = fh.readline()
        if not header_line.endswith(b"\n"):
            raise ValueError(f"{path!r}: truncated header")
    return json.loads(header_line.decode("utf-8"))["meta"]


def write_manifest(checkpoint_dir: str) -> str:
    """Rewrites manifest.json listing every checkpoint in the directory."""
    entries = []
    fingerprint = None
    for name in sorted(os.listdir(checkpoint_dir)):
        if not name.endswith(".ckpt"):
            continue
        meta = read_checkpoint_meta(os.path.join(checkpoint_dir, name))
        entries.append(
            {
                "file": name,
                "global_step": meta.get("global_step"),
                "stage": meta.get("stage"),
                "stage_step": meta.get("stage_step"),
            }
        )
        fingerprint = meta.get("config_fingerprint", fingerprint)
    path = os.path.join(checkpoint_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {"checkpoints": entries, "config_fingerprint": fingerprint},
            fh,
            sort_keys=True,
            indent=2,
        )
        fh.write("\n")
    return path


def average_checkpoints(paths: Sequence[str]) -> Dict[str, np.ndarray]:
    """Element-wise mean of k parameter sets with identical names and shapes."""
    if not paths:
        raise ValueError("average_checkpoints: no paths given")
    acc: Dict[str, np.ndarray] = {}
    names: Optional[set] = None
    for p in paths:
        state, _ = load_checkpoint(p)
        if names is None:
            names = set(state)
            acc = {n: state[n].copy() for n in state}
        else:
            if set(state) != names:
                raise ValueError(f"{p!r}: parameter names differ from the first checkpoint")
            for n in names:
                if state[n].shape != acc[n].shape:
                    raise ValueError(f"{p!r}: shape of {n!r} differs")
                acc[n] += state[n]
    k = float(len(paths))
    return {n: a / k for n, a in acc.items()}


# -- batching ---------------------------------------------------------------


class _RoundRobin:
    """Deterministic epoch-shuffled batch source over one example pool."""

    def __init__(self, pool, rng: np.random.Generator, batch_size: int):
        if not pool:
            raise ValueError("empty example pool")
        self.pool = pool
        self.rng = rng
        self.batch_size = max(1, min(batch_size, len(pool)))
        self._order: List[int] = []
        self._pos = 0

    def next_batch(self):
        out = []
        while len(out) < self.batch_size:
            if self._pos >= len(self._order):
                self._order = list(self.rng.permutation(len(self.pool)))
                self._pos = 0
            out.append(self.pool[self._order[self._pos]])
            self._pos += 1
        return out


# -- trainer -----------------------------------------------------------------


@dataclass
class StageRecord:
    stage: int
    steps: List[dict] = field(default_factory=list)
    lambda_final: Optional[Dict[str, float]] = None
    suppressed_warnings: int = 0


class Trainer:
    """Runs the staged curriculum over an emitted dataset.

    Oracles (back-translator, feature generator) and the pivot tree parser
    default to the synthetic-corpus implementations; inject replacements for
    other data sources. A fresh Adam state begins each stage.
    """

    def __init__(
        self,
        cfg: TrainingConfig,
        dataset: Dataset,
        model: Optional[CaptionModel] = None,
        translator=None,
        generator=None,
        parser=None,
        ontology=None,
    ):
        self.cfg = cfg
        self.dataset = dataset
        onto = ontology or default_ontology()
        fp = dataset.manifest.get("ontology_fingerprint")
        if fp is not None and fp != onto.fingerprint():
            raise ValueError(
                "dataset was generated with a different ontology; pass the matching one"
            )
        self.ontology = onto
        if model is None:
            model = CaptionModel(
                self.model_config(),
                dataset.pivot_vocab,
                dataset.target_vocab,
                sg_label_list(onto),
                sc_label_list(),
                seed=cfg.seed,
            )
        self.model = model
        self.translator = translator or self._build_translator(cfg, onto)
        self.generator = generator or self._build_generator(cfg)
        self.parser = parser or (lambda toks: pivot_tree_or_flat(toks, onto))
        self.graph_parser = lambda toks: scene_graph_from_pivot_caption(toks, onto)
        self.align_cfg = AlignmentConfig(
            rho_m=cfg.rho_m,
            rho_l=cfg.rho_l,
            tau_m=cfg.tau_m,
            tau_l=cfg.tau_l,
            include_positive_in_denominator=cfg.include_positive_in_denominator,
            symmetric_anchors=cfg.symmetric_anchors,
        )
        self.global_step = 0
        self.records: List[StageRecord] = []
        os.makedirs(self.checkpoint_dir, exist_ok=True)

    # -- construction helpers -------------------------------------------

    @staticmethod
    def _build_translator(cfg: TrainingConfig, onto):
        if cfg.translator_oracle == "dictionary":
            _, _, lexicon = build_vocabularies(onto)
            return DictionaryBackTranslator(lexicon)
        if cfg.translator_oracle.startswith("subprocess:"):
            cmd = shlex.split(cfg.translator_oracle[len("subprocess:"):])
            if not cmd:
                raise ValueError("translator_oracle: empty subprocess command")
            return SubprocessBackTranslator(cmd)
        raise ValueError(
            f"translator_oracle {cfg.translator_oracle!r} is not 'dictionary' "
            "or 'subprocess:<command>'"
        )

    @staticmethod
    def _build_generator(cfg: TrainingConfig):
        if cfg.generator_oracle == "seeded":
            return SeededFeatureGenerator(
                width=cfg.feature_width, seed=cfg.seed, sigma=cfg.generator_sigma
            )
        if cfg.generator_oracle.startswith("subprocess:"):
            cmd = shlex.split(cfg.generator_oracle[len("subprocess:"):])
            if not cmd:
                raise ValueError("generator_oracle: empty subprocess command")
            return SubprocessFeatureGenerator(cmd, width=cfg.feature_width)
        raise ValueError(
            f"generator_oracle {cfg.generator_oracle!r} is not 'seeded' "
            "or 'subprocess:<command>'"
        )

    def model_config(self) -> ModelConfig:
        c = self.cfg
        return ModelConfig(
            hidden_dim=c.hidden_dim,
            heads=c.heads,
            dec_layers=c.dec_layers,
            ffn_dim=c.ffn_dim,
            gcn_layers=c.gcn_layers,
            feature_width=c.feature_width,
            max_len=c.max_len,
            fusion_mode=c.fusion_mode,
            ablate_sg_structure=c.ablate_sg_structure,
            ablate_sc_structure=c.ablate_sc_structure,
        )

    @property
    def checkpoint_dir(self) -> str:
        return os.path.join(self.cfg.out_dir, "checkpoints")

    def _stage_rng(self, stage: int) -> np.random.Generator:
        return np.random.default_rng([self.cfg.seed, 1000 + stage])

    def _stage_steps(self, stage: int) -> int:
        return getattr(self.cfg, f"stage{stage}_steps")

    # -- per-sample encodings shared by alignment losses ------------------

    def _cma_batch(self, batch) -> Tensor:
        terms = []
        for ex in batch:
            v = self.model.encode_scene_graph(ex.visual_sg)
            l = self.model.encode_scene_graph(ex.language_sg)
            terms.append(cma_loss(v, l, self.align_cfg))
        return mean_scalars(terms)

    def _cla_batch(self, batch) -> Tensor:
        terms = []
        for ex in batch:
            h = self.model.encode_scene_graph(ex.language_sg)
            states = self.model.pivot_word_states(h, ex.pivot.ids)
            rp = self.model.encode_pivot_tree(ex.pivot_tree, states)
            rt = self.model.encode_target_tree(ex.target_tree)
            terms.append(cla_loss(rp, rt, self.align_cfg))
        return mean_scalars(terms)

    # -- stage driver ------------------------------------------------------

    def run_stage(self, stage: int) -> StageRecord:
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage}; stages are {STAGES}")
        cfg = self.cfg
        rng = self._stage_rng(stage)
        # one shared generator: batch draws interleave deterministically
        cap_pool = _RoundRobin(self.dataset.split("caption_train"), rng, cfg.batch_size)
        par_pool = _RoundRobin(self.dataset.split("parallel_train"), rng, cfg.batch_size)
        opt = Adam(
            self.model.registry,
            lr=cfg.lr,
            beta1=cfg.adam_beta1,
            beta2=cfg.adam_beta2,
            eps=cfg.adam_eps,
            clip_norm=cfg.clip_norm,
        )
        total = self._stage_steps(stage)
        record = StageRecord(stage=stage)
        for s in range(total):
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", EmptyPairSetWarning)
                warnings.simplefilter("always", EmptyBatchWarning)
                loss, parts = self._stage_loss(stage, s, total, cap_pool, par_pool)
            record.suppressed_warnings += len(caught)
            self.model.registry.zero_grad()
            if loss.requires_grad:
                loss.backward()
            norm = opt.step()
            self.global_step += 1
            entry = {
                "stage": stage,
                "step": s,
                "global_step": self.global_step,
                "loss": float(loss.item()),
                "grad_norm": norm,
            }
            entry.update(parts)
            record.steps.append(entry)
            if cfg.checkpoint_interval > 0 and (s + 1) % cfg.checkpoint_interval == 0:
                self.save(self._ckpt_path(), stage=stage, stage_step=s + 1)
        if stage == 4:
            record.lambda_final = stage4_lambdas(cfg, total, total)
        self.save(self._ckpt_path(), stage=stage, stage_step=total)
        self.records.append(record)
        return record

    def _stage_loss(self, stage, s, total, cap_pool, par_pool):
        cfg = self.cfg
        if stage == 1:
            if s % 2 == 0:
                loss = caption_loss(self.model, cap_pool.next_batch())
                return loss, {"objective": "caption"}
            loss = translation_loss(self.model, par_pool.next_batch())
            return loss, {"objective": "translation"}
        if stage == 2:
            terms = []
            parts: dict = {"objective": "alignment"}
            if not cfg.disable_cma:
                t = self._cma_batch(cap_pool.next_batch())
                parts["cma"] = float(t.item())
                terms.append(t)
            if not cfg.disable_cla:
                t = self._cla_batch(par_pool.next_batch())
                parts["cla"] = float(t.item())
                terms.append(t)
            return self._sum_or_zero(terms), parts
        if stage == 3:
            terms = []
            parts = {"objective": "backtranslation"}
            if not cfg.disable_ipb:
                t, st = ipb_loss(self.model, cap_pool.next_batch(), self.translator, self.parser, self.graph_parser)
                parts["ipb"] = float(t.item())
                parts["ipb_used"] = st.used
                terms.append(t)
            if not cfg.disable_ptb:
                t, st = ptb_loss(self.model, par_pool.next_batch(), self.generator, self.parser)
                parts["ptb"] = float(t.item())
                parts["ptb_used"] = st.used
                terms.append(t)
            return self._sum_or_zero(terms), parts
        # stage 4: all objectives, weighted by the schedule at this step
        lam = stage4_lambdas(cfg, s, total)
        cap_batch = cap_pool.next_batch()
        par_batch = par_pool.next_batch()
        terms = []
        parts = {"objective": "joint", "lambdas": lam}
        terms.append(caption_loss(self.model, cap_batch) * lam["cap"])
        terms.append(translation_loss(self.model, par_batch) * lam["trans"])
        if not cfg.disable_cma:
            terms.append(self._cma_batch(cap_batch) * lam["cma"])
        if not cfg.disable_cla:
            terms.append(self._cla_batch(par_batch) * lam["cla"])
        if not cfg.disable_ipb:
            t, st = ipb_loss(self.model, cap_batch, self.translator, self.parser, self.graph_parser)
            parts["ipb_used"] = st.used
            terms.append(t * lam["ipb"])
        if not cfg.disable_ptb:
            t, st = ptb_loss(self.model, par_batch, self.generator, self.parser)
            parts["ptb_used"] = st.used
            terms.append(t * lam["ptb"])
        total_loss = terms[0]
        for t in terms[1:]:
            total_loss = total_loss + t
        return total_loss, parts

    @staticmethod
    def _sum_or_zero(terms):
        if not terms:
            return Tensor(np.float64(0.0))
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        return total

    # -- persistence -------------------------------------------------------

    def _ckpt_path(self) -> str:
        return os.path.join(self.checkpoint_dir, f"step{self.global_step:06d}.ckpt")

    def save(self, path: str, stage: int, stage_step: int) -> str:
        meta = {
            "global_step": self.global_step,
            "stage": stage,
            "stage_step": stage_step,
            "config_fingerprint": self.cfg.fingerprint(),
        }
        save_checkpoint(path, self.model.registry.state_dict(), meta)
        parent = os.path.dirname(os.path.abspath(path))
        if parent == os.path.abspath(self.checkpoint_dir):
            write_manifest(parent)
        return path

    def load(self, path: str) -> dict:
        state, meta = load_checkpoint(path)
        self.model.registry.load_state(state)
        self.global_step = int(meta.get("global_step", 0))
        return meta

    def run_stages(self, stages: Sequence[int]) -> List[StageRecord]:
        return [self.run_stage(s) for s in stages]

    def write_log(self, path: Optional[str] = None) -> str:
        """Writes the deterministic stage log (no wall-clock values)."""
        path = path or os.path.join(self.cfg.out_dir, "training_log.json")
        payload = {
            "config_fingerprint": self.cfg.fingerprint(),
            "stages": [
                {
                    "stage": r.stage,
                    "lambda_final": r.lambda_final,
                    "suppressed_warnings": r.suppressed_warnings,
                    "steps": r.steps,
                }
                for r in self.records
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
        return path

    def average_recent(self, k: Optional[int] = None) -> Dict[str, np.ndarray]:
        """Mean of the last k saved checkpoints (by global step)."""
        k = k or self.cfg.average_last_k
        files = sorted(
            f for f in os.listdir(self.checkpoint_dir) if f.startswith("step") and f.endswith(".ckpt")
        )
        if not files:
            raise ValueError("no checkpoints saved yet")
        chosen = files[-k:]
        return average_checkpoints([os.path.join(self.checkpoint_dir, f) for f in chosen])
