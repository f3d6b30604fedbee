"""Transformer decoders and the structure-fusion step.

Both decoders are standard post-norm transformer stacks: causal multi-head
self-attention, cross-attention over an external memory, and a two-layer
feed-forward block, each wrapped in residual + layer norm with learned gain
and bias. Positions come from fixed sinusoids. Decoding is greedy and
deterministic (argmax, lowest index on ties).

``fuse_structures`` combines syntax rows R (queries' keys) with scene rows H
so the final translation step can see the scene. The default mode scores
every (scene node, syntax node) pair, normalizes over syntax nodes, and adds
the scene summary back onto R through a residual:

    A = softmax_rows(H R^T / sqrt(d)),   e = R + A^T H

An alternative "literal" mode pools H to a single vector, scores syntax rows
by summed concatenation, and replaces every row with one attention-weighted
average of R (no residual). "none" passes R through untouched.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .structures import BOS_ID, EOS_ID
from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat,
    embedding_lookup,
    layer_norm,
    matmul,
    mul,
    narrow,
    no_grad,
    relu,
    reshape,
    scale,
    softmax,
    tensor_mean,
    tensor_sum,
    transpose,
)

FUSION_MODES = ("residual", "literal", "none")


@dataclass
class DecoderConfig:
    vocab_size: int
    dim: int = 64
    heads: int = 4
    layers: int = 2
    ffn_dim: int = 128
    max_len: int = 40


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Fixed sin/cos position table, one row per position."""
    pos = np.arange(length)[:, None].astype(np.float64)
    i = np.arange(dim)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, (2.0 * (i // 2)) / dim)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


class TransformerDecoder:
    """A named decoder whose parameters live in a shared registry."""

    def __init__(self, name: str, cfg: DecoderConfig, registry, rng: np.random.Generator):
        if cfg.dim % cfg.heads != 0:
            raise ShapeError("decoder", f"dim {cfg.dim} must divide evenly into {cfg.heads} heads")
        self.name = name
        self.cfg = cfg
        self.registry = registry
        std = 1.0 / np.sqrt(cfg.dim)
        reg = registry.register
        reg(f"{name}/token_emb", rng.normal(0.0, std, size=(cfg.vocab_size, cfg.dim)))
        for layer in range(cfg.layers):
            for block in ("self", "cross"):
                for mat in ("wq", "wk", "wv", "wo"):
                    reg(f"{name}/l{layer}/{block}/{mat}", rng.normal(0.0, std, size=(cfg.dim, cfg.dim)))
                reg(f"{name}/l{layer}/{block}/bo", np.zeros(cfg.dim))
            reg(f"{name}/l{layer}/ffn/w1", rng.normal(0.0, std, size=(cfg.dim, cfg.ffn_dim)))
            reg(f"{name}/l{layer}/ffn/b1", np.zeros(cfg.ffn_dim))
            reg(f"{name}/l{layer}/ffn/w2", rng.normal(0.0, 1.0 / np.sqrt(cfg.ffn_dim), size=(cfg.ffn_dim, cfg.dim)))
            reg(f"{name}/l{layer}/ffn/b2", np.zeros(cfg.dim))
            for ln in ("ln1", "ln2", "ln3"):
                reg(f"{name}/l{layer}/{ln}/g", np.ones(cfg.dim))
                reg(f"{name}/l{layer}/{ln}/b", np.zeros(cfg.dim))
        reg(f"{name}/out/w", rng.normal(0.0, std, size=(cfg.dim, cfg.vocab_size)))
        reg(f"{name}/out/b", np.zeros(cfg.vocab_size))
        self._positions = sinusoidal_positions(cfg.max_len + 2, cfg.dim)
        self._mask_cache: dict[int, Tensor] = {}

    def _causal_mask(self, t: int) -> Tensor:
        cached = self._mask_cache.get(t)
        if cached is None:
            cached = Tensor(np.triu(np.full((t, t), -np.inf), k=1))
            self._mask_cache[t] = cached
        return cached

    def _attention(self, x: Tensor, kv: Tensor, prefix: str, mask: Tensor | None) -> Tensor:
        cfg = self.cfg
        reg = self.registry
        dh = cfg.dim // cfg.heads
        q = matmul(x, reg[f"{prefix}/wq"])
        k = matmul(kv, reg[f"{prefix}/wk"])
        v = matmul(kv, reg[f"{prefix}/wv"])
        heads = []
        for h in range(cfg.heads):
            qh = narrow(q, 1, h * dh, dh)
            kh = narrow(k, 1, h * dh, dh)
            vh = narrow(v, 1, h * dh, dh)
            scores = scale(matmul(qh, transpose(kh)), 1.0 / np.sqrt(dh))
            if mask is not None:
                scores = add(scores, mask)
            weights = softmax(scores, axis=-1)
            heads.append(matmul(weights, vh))
        ctx = concat(heads, axis=1)
        return add(matmul(ctx, reg[f"{prefix}/wo"]), reg[f"{prefix}/bo"])

    def _ln(self, x: Tensor, prefix: str) -> Tensor:
        return add(mul(layer_norm(x), self.registry[f"{prefix}/g"]), self.registry[f"{prefix}/b"])

    def forward(self, memory: Tensor, input_ids: list[int]) -> tuple[Tensor, Tensor]:
        """Teacher-forced pass. Returns (hidden states, logits), one row per
        input position; logits at position p score the token at p+1."""
        if memory.data.ndim != 2 or memory.shape[0] == 0:
            raise ShapeError("decoder", f"memory must be a non-empty (nodes, dim) matrix, got {memory.shape}")
        if memory.shape[1] != self.cfg.dim:
            raise ShapeError("decoder", f"memory width {memory.shape[1]} does not match model dim {self.cfg.dim}")
        t = len(input_ids)
        if t == 0:
            raise ShapeError("decoder", "teacher forcing needs at least one input token (BOS)")
        if t > self._positions.shape[0]:
            raise ShapeError("decoder", f"sequence length {t} exceeds the position table ({self._positions.shape[0]})")
        name = self.name
        emb = embedding_lookup(self.registry[f"{name}/token_emb"], np.asarray(input_ids, dtype=np.int64))
        x = add(scale(emb, np.sqrt(self.cfg.dim)), Tensor(self._positions[:t]))
        mask = self._causal_mask(t)
        for layer in range(self.cfg.layers):
            base = f"{name}/l{layer}"
            x = self._ln(add(x, self._attention(x, x, f"{base}/self", mask)), f"{base}/ln1")
            x = self._ln(add(x, self._attention(x, memory, f"{base}/cross", None)), f"{base}/ln2")
            h1 = relu(add(matmul(x, self.registry[f"{base}/ffn/w1"]), self.registry[f"{base}/ffn/b1"]))
            ff = add(matmul(h1, self.registry[f"{base}/ffn/w2"]), self.registry[f"{base}/ffn/b2"])
            x = self._ln(add(x, ff), f"{base}/ln3")
        logits = add(matmul(x, self.registry[f"{name}/out/w"]), self.registry[f"{name}/out/b"])
        return x, logits

    def greedy(self, memory: Tensor, max_len: int | None = None) -> list[int]:
        """Greedy decode: argmax each step, ties to the lowest id. Returns the
        full I/O sequence [BOS, ..., EOS]; a run hitting the length cap is
        closed with EOS."""
        cap = self.cfg.max_len if max_len is None else min(max_len, self.cfg.max_len)
        ids = [BOS_ID]
        with no_grad():
            while len(ids) - 1 < cap:
                _, logits = self.forward(memory, ids)
                nxt = int(np.argmax(logits.data[-1]))
                ids.append(nxt)
                if nxt == EOS_ID:
                    return ids
        ids.append(EOS_ID)
        return ids


def fuse_structures(
    r: Tensor,
    h: Tensor,
    dim: int,
    mode: str = "residual",
    return_weights: bool = False,
):
    """Combines syntax rows ``r`` with scene rows ``h``; see the module
    docstring for the three modes. Output always has one row per syntax row."""
    if mode not in FUSION_MODES:
        raise ValueError(f"fuse_structures: unknown mode {mode!r}; expected one of {FUSION_MODES}")
    if r.data.ndim != 2 or h.data.ndim != 2:
        raise ShapeError("fuse_structures", f"expects 2-D inputs, got {r.shape} and {h.shape}")
    if r.shape[1] != h.shape[1]:
        raise ShapeError("fuse_structures", f"widths disagree: {r.shape} vs {h.shape}")
    if r.shape[0] == 0 or h.shape[0] == 0:
        raise ShapeError("fuse_structures", f"inputs must be non-empty, got {r.shape} and {h.shape}")
    if mode == "none":
        out = r
        return (out, np.zeros((h.shape[0], r.shape[0]))) if return_weights else out
    if mode == "residual":
        scores = scale(matmul(h, transpose(r)), 1.0 / np.sqrt(dim))
        weights = softmax(scores, axis=-1)
        out = add(r, matmul(transpose(weights), h))
        return (out, weights.data.copy()) if return_weights else out
    # literal: pool the scene, score each syntax row by summed concatenation,
    # and give every output row the same attention-weighted average of r.
    h_bar = tensor_mean(h, axis=0)
    z = scale(add(tensor_sum(r, axis=1), tensor_sum(h_bar)), 1.0 / np.sqrt(dim))
    a = softmax(z, axis=-1)
    pooled = matmul(reshape(a, (1, r.shape[0])), r)
    out = concat([pooled] * r.shape[0], axis=0)
    return (out, np.tile(a.data, (h.shape[0], 1))) if return_weights else out
