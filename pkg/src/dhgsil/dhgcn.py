"""Discrepant-homophily graph convolution.

The propagation kernel for a step blends geography (threshold adjacency and a
distance decay) with mobility similarity (the pairwise comparison operator
applied to that step's flow matrix):

    M = 1/2 * A * W_D * (I (x) I^T + I^T (x) I) + Id

with elementwise products, ``W_D[u, v] = exp(-d_uv / L) / sqrt(deg u * deg v)``
and ``L`` the decay length (the graph threshold unless set explicitly). The
identity term keeps each city's own signal, which matters for isolated cities.
"""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .geo import GeographyGraph


class EmptyComparisonSetError(ValueError):
    pass


def _as_flow_stack(flows) -> np.ndarray:
    arr = np.asarray(getattr(flows, "flows", flows), dtype=np.float64)
    return arr[None] if arr.ndim == 2 else arr


def mobility_delta(flows, dist: np.ndarray, u: int, v: int, tau: float | None = None) -> float:
    """Flow-history discrepancy between cities u and v.

    Compares the T-step histories of k->u vs k->v and u->k vs v->k over the
    third cities k that are (almost) equidistant from u and v:
    ``|d_uk - d_vk| < tau``, or exact equality when ``tau`` is None.
    """
    stack = _as_flow_stack(flows)
    dist = np.asarray(dist)
    gap = np.abs(dist[u] - dist[v])
    ks = np.nonzero(gap == 0 if tau is None else gap < tau)[0]
    if ks.size == 0:
        raise EmptyComparisonSetError(f"no comparison cities for pair ({u}, {v})")
    inbound = np.linalg.norm(stack[:, ks, u] - stack[:, ks, v], axis=0)
    outbound = np.linalg.norm(stack[:, u, ks] - stack[:, v, ks], axis=0)
    return float(np.sqrt(np.sum(inbound + outbound) / (2 * ks.size)))


def otimes(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """c_ij = 1 - sqrt(sum_k |a_ik - b_kj| / N) for two N x N matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape != b.shape:
        raise dc.ShapeError(f"otimes: need two square matrices of one order, got {a.shape} and {b.shape}")
    n = a.shape[0]
    return 1.0 - np.sqrt(np.abs(a[:, :, None] - b[None, :, :]).sum(axis=1) / n)


def mobility_bracket(flow: np.ndarray) -> np.ndarray:
    flow = np.asarray(flow, dtype=np.float64)
    return otimes(flow, flow.T) + otimes(flow.T, flow)


def decay_weights(graph: GeographyGraph, dist: np.ndarray, decay_km: float | None = None) -> np.ndarray:
    length = graph.epsilon if decay_km is None else decay_km
    deg = graph.degree
    norm = np.sqrt(np.outer(deg, deg))
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.exp(-np.asarray(dist) / length) / norm if length > 0 else np.zeros_like(norm)
    return np.where(graph.adjacency > 0, w, 0.0)


def build_kernel(flow: np.ndarray, graph: GeographyGraph, dist: np.ndarray,
                 decay_km: float | None = None) -> np.ndarray:
    """Mobility kernel for one flow matrix (C x C)."""
    flow = np.asarray(flow, dtype=np.float64)
    n = graph.adjacency.shape[0]
    if flow.shape != (n, n) or np.shape(dist) != (n, n):
        raise dc.ShapeError(f"build_kernel: flow {flow.shape}, graph {(n, n)}, distances {np.shape(dist)}")
    m = 0.5 * graph.adjacency * decay_weights(graph, dist, decay_km) * mobility_bracket(flow)
    return m + np.eye(n)


def build_kernels(flows, graph: GeographyGraph, dist: np.ndarray, decay_km: float | None = None) -> np.ndarray:
    return np.stack([build_kernel(f, graph, dist, decay_km) for f in _as_flow_stack(flows)])


def plain_gcn_kernel(graph: GeographyGraph) -> np.ndarray:
    """Symmetric-normalized adjacency with self-loops, D^-1/2 (A + Id) D^-1/2."""
    a = graph.adjacency + np.eye(graph.adjacency.shape[0])
    inv = 1.0 / np.sqrt(a.sum(axis=1))
    return a * inv[:, None] * inv[None, :]


def init_layers(rng: np.random.Generator, dims: Sequence[int], prefix: str = "gcn") -> dict[str, np.ndarray]:
    params = {}
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"{prefix}.w{i}"] = rng.normal(0.0, 1.0 / np.sqrt(d_in), (d_in, d_out))
        params[f"{prefix}.b{i}"] = np.zeros(d_out)
    return params


def layer_list(params: Mapping[str, Tensor], prefix: str = "gcn") -> list[tuple[Tensor, Tensor]]:
    layers = []
    i = 0
    while f"{prefix}.w{i}" in params:
        layers.append((params[f"{prefix}.w{i}"], params[f"{prefix}.b{i}"]))
        i += 1
    return layers


def dhgcn_forward(kernel, h, layers: Sequence[tuple]) -> Tensor:
    """Stacked ``H <- b + M H W`` with softplus between layers; the last layer is linear.

    ``kernel`` may be (C, C) or batched (T, C, C); ``h`` is (C, d) or (T, C, d).
    """
    m = dc.as_tensor(kernel)
    h = dc.as_tensor(h)
    for i, (w, b) in enumerate(layers):
        w, b = dc.as_tensor(w), dc.as_tensor(b)
        if h.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
            raise dc.ShapeError(f"dhgcn layer {i}: input width {h.shape[-1]}, weight {w.shape}, bias {b.shape}")
        h = b + m @ (h @ w)
        if i < len(layers) - 1:
            h = dc.softplus(h)
    return h


def gcn_forward_plain(graph: GeographyGraph, h, layers: Sequence[tuple]) -> Tensor:
    return dhgcn_forward(plain_gcn_kernel(graph), h, layers)
