"""Pairwise pattern correlation and per-node cumulative correlation.

The correlation of two embeddings is their outer product: entry (n, n')
measures how strongly pattern n in one view co-occurs with pattern n' in
the other. Each view node accumulates its correlations with every node
(itself included, at similarity 1), weighted by spatial similarity, giving
an N x N descriptor of the shape as seen from that node. Because each
outer product of simplex vectors has entries summing to 1, the cumulative
matrix's entries sum to the node's total similarity mass.
"""

import numpy as np

from .geometry import ViewGraph


def pattern_correlation(d_a: np.ndarray, d_b: np.ndarray) -> np.ndarray:
    """Outer product d_a d_b^T of two embeddings; (N, N), entries sum to 1."""
    d_a = np.asarray(d_a, dtype=np.float64)
    d_b = np.asarray(d_b, dtype=np.float64)
    if d_a.ndim != 1 or d_a.shape != d_b.shape:
        raise ValueError(
            f"embeddings must be equal-length vectors, got {d_a.shape} and {d_b.shape}"
        )
    return np.outer(d_a, d_b)


def _check_embeddings(embeddings: np.ndarray, graph_views: int) -> np.ndarray:
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2:
        raise ValueError(f"embeddings must be (V, N), got shape {embeddings.shape}")
    if embeddings.shape[0] != graph_views:
        raise ValueError(
            f"{embeddings.shape[0]} embeddings for a graph of {graph_views} views"
        )
    return embeddings


def cumulative_correlation(
    node: int, embeddings: np.ndarray, graph: ViewGraph
) -> np.ndarray:
    """Similarity-weighted sum of the node's correlations with every view.

    Returns sum_{j'} s[node, j'] * outer(d_node, d_j'), including the
    self-pair at similarity 1. Equals outer(d_node, S[node] @ D), so the
    result has rank 1 even though it is stored dense.
    """
    embeddings = _check_embeddings(embeddings, graph.num_views)
    if not 0 <= node < graph.num_views:
        raise ValueError(f"node {node} out of range [0, {graph.num_views})")
    weighted = graph.similarity[node] @ embeddings
    return np.outer(embeddings[node], weighted)


def all_cumulative_correlations(
    embeddings: np.ndarray, similarity: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative correlations of every node at once.

    Returns ``(cums, weighted)`` where ``weighted = similarity @ embeddings``
    holds each node's similarity-weighted embedding sum (V, N) and
    ``cums[j] = outer(embeddings[j], weighted[j])`` is (V, N, N).
    """
    weighted = similarity @ embeddings
    cums = np.einsum("jn,jm->jnm", embeddings, weighted)
    return cums, weighted


def correlation_backward(
    node: int,
    embeddings: np.ndarray,
    graph: ViewGraph,
    grad_cum: np.ndarray,
) -> np.ndarray:
    """Gradients of <grad_cum, C_node> w.r.t. every embedding; (V, N).

    The node's own embedding appears as the left factor of every term and as
    the right factor of the self-pair, so for V = 1 this reduces to
    (G + G^T) @ d.
    """
    embeddings = _check_embeddings(embeddings, graph.num_views)
    if not 0 <= node < graph.num_views:
        raise ValueError(f"node {node} out of range [0, {graph.num_views})")
    grad_cum = np.asarray(grad_cum, dtype=np.float64)
    n = embeddings.shape[1]
    if grad_cum.shape != (n, n):
        raise ValueError(f"upstream gradient must be ({n}, {n}), got {grad_cum.shape}")
    sims = graph.similarity[node]
    grads = sims[:, None] * (grad_cum.T @ embeddings[node])[None, :]
    grads[node] += grad_cum @ (sims @ embeddings)
    return grads


def all_correlation_backward(
    embeddings: np.ndarray,
    similarity: np.ndarray,
    weighted: np.ndarray,
    grad_cums: np.ndarray,
) -> np.ndarray:
    """Backward of :func:`all_cumulative_correlations` for per-node upstream grads.

    ``weighted`` is the (V, N) cache returned by the forward pass. Each
    embedding receives a left-factor term through its own cumulative matrix
    and right-factor terms from every node's.
    """
    left = np.einsum("jnm,jm->jn", grad_cums, weighted)
    right_per_node = np.einsum("jnm,jn->jm", grad_cums, embeddings)
    return left + similarity @ right_per_node
