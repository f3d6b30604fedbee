"""Direction-aware graph convolution over scene graphs and constituency trees.

One layer computes, for every node i,

    h_i' = relu(W_self h_i + W_in sum_{j -> i} h_j + W_out sum_{i -> j} h_j + b)

so a node sees its in-neighborhood and out-neighborhood through separate
weights. Aggregation happens before the linear maps (the two commute), which
keeps the hot path at two gathers, two segment sums, and three matmuls per
layer. The final layer stays linear: downstream consumers take cosine
similarities between node vectors, and a rectified last layer can zero out an
entire row, which has no direction. Zero layers returns the initial node
vectors untouched.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, add, gather_rows, matmul, relu, segment_sum


def init_gcn(registry, prefix: str, dim: int, layers: int, rng: np.random.Generator) -> None:
    std = 1.0 / np.sqrt(dim)
    for layer in range(layers):
        for name in ("w_self", "w_in", "w_out"):
            registry.register(f"{prefix}/l{layer}/{name}", rng.normal(0.0, std, size=(dim, dim)))
        registry.register(f"{prefix}/l{layer}/b", np.zeros(dim))


def gcn_forward(
    h0: Tensor,
    edges: list[tuple[int, int]],
    registry,
    prefix: str,
    layers: int,
) -> Tensor:
    """Runs ``layers`` rounds of message passing over ``edges`` starting from
    node vectors ``h0`` (one row per node, rows indexed by node id)."""
    n = h0.shape[0]
    src = np.asarray([e[0] for e in edges], dtype=np.int64)
    dst = np.asarray([e[1] for e in edges], dtype=np.int64)
    h = h0
    for layer in range(layers):
        w_self = registry[f"{prefix}/l{layer}/w_self"]
        w_in = registry[f"{prefix}/l{layer}/w_in"]
        w_out = registry[f"{prefix}/l{layer}/w_out"]
        b = registry[f"{prefix}/l{layer}/b"]
        m_in = segment_sum(gather_rows(h, src), dst, n)
        m_out = segment_sum(gather_rows(h, dst), src, n)
        z = add(add(matmul(h, w_self), matmul(m_in, w_in)), add(matmul(m_out, w_out), b))
        h = relu(z) if layer + 1 < layers else z
    return h
