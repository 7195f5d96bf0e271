"""Synchronous multi-sensor filtering over a sensor graph.

Each round runs local predict/update at every node, then ``iterations``
consensus rounds in which every node fuses the snapshot beliefs of its
closed neighbourhood. The augmented-measurement configuration instead runs
one central filter on the stacked model and feeds the result back to all
nodes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .densities import Gaussian, StudentT
from .filtering import Belief, MeasurementModel, ProcessModel, predict, update_guarded
from .fusion import FusionKind, FusionMethod, am_stack, fuse


class FilterKind(enum.Enum):
    STKF = "stkf"
    KF = "kf"


@dataclass(frozen=True, eq=False)
class SensorNode:
    id: int
    belief: Belief
    measurement_model: MeasurementModel
    process_model: ProcessModel
    fault: np.ndarray = field(default_factory=lambda: np.zeros((), dtype=bool))
    # last fusion weights over all S nodes (zero outside the neighbourhood)
    weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.belief.dim != self.process_model.dim:
            raise ValueError(
                f"node {self.id}: belief dimension {self.belief.dim} "
                f"!= process model dimension {self.process_model.dim}"
            )


@dataclass(frozen=True, eq=False)
class SensorGraph:
    adjacency: np.ndarray
    consensus_iterations: int = 1

    def __post_init__(self) -> None:
        adj = np.array(self.adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency must be square")
        if not np.array_equal(adj, adj.T):
            raise ValueError("adjacency must be symmetric")
        if self.consensus_iterations < 1:
            raise ValueError("consensus_iterations must be >= 1")
        np.fill_diagonal(adj, True)
        object.__setattr__(self, "adjacency", adj)

    @classmethod
    def complete(cls, size: int, iterations: int = 1) -> "SensorGraph":
        return cls(np.ones((size, size), dtype=bool), iterations)

    @property
    def size(self) -> int:
        return self.adjacency.shape[0]

    def neighbourhood(self, s: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.adjacency[s]))


@dataclass(frozen=True)
class FusionConfig:
    method: FusionMethod = field(default_factory=FusionMethod)
    filter_kind: FilterKind = FilterKind.STKF


def _is_am(cfg: FusionConfig) -> bool:
    return cfg.method.kind is FusionKind.AM


def _local_filter(node: SensorNode, z) -> SensorNode:
    prior = predict(node.belief, node.process_model)
    post, ok = update_guarded(prior, node.measurement_model, z)
    return replace(node, belief=post, fault=~ok)


def _consensus(nodes: list[SensorNode], graph: SensorGraph, cfg: FusionConfig) -> list[SensorNode]:
    size = len(nodes)
    for _ in range(graph.consensus_iterations):
        snapshot = [n.belief for n in nodes]
        cache: dict[tuple[int, ...], tuple[Belief, np.ndarray]] = {}
        fused_nodes = []
        for s, node in enumerate(nodes):
            hood = graph.neighbourhood(s)
            if len(hood) == 1 or cfg.method.kind is FusionKind.NONE:
                fused_nodes.append(node)
                continue
            if hood not in cache:
                cache[hood] = fuse([snapshot[i] for i in hood], cfg.method)
            density, w = cache[hood]
            full = np.zeros(w.shape[:-1] + (size,))
            full[..., list(hood)] = w
            fused_nodes.append(replace(node, belief=density, weights=full))
        nodes = fused_nodes
    return nodes


def step(
    nodes: Sequence[SensorNode],
    graph: SensorGraph,
    cfg: FusionConfig,
    measurements: Sequence[np.ndarray],
) -> list[SensorNode]:
    """One synchronous filtering round over all nodes."""
    nodes = list(nodes)
    if len(measurements) != len(nodes):
        raise ValueError(f"{len(measurements)} measurements for {len(nodes)} nodes")
    if graph.size != len(nodes):
        raise ValueError(f"graph has {graph.size} nodes, network has {len(nodes)}")
    if _is_am(cfg):
        stacked = am_stack([n.measurement_model for n in nodes])
        central = replace(nodes[0], measurement_model=stacked)
        z = np.concatenate([np.asarray(m, dtype=float) for m in measurements], axis=-1)
        central = _local_filter(central, z)
        return [replace(n, belief=central.belief, fault=central.fault) for n in nodes]
    local = [_local_filter(n, z) for n, z in zip(nodes, measurements)]
    return _consensus(local, graph, cfg)


def run_sequence(
    nodes: Sequence[SensorNode],
    graph: SensorGraph,
    cfg: FusionConfig,
    measurement_sequence: Sequence[Sequence[np.ndarray]],
) -> list[list[SensorNode]]:
    """Fold :func:`step` over time; element ``k`` holds the nodes after the
    ``k``-th measurement round."""
    if len(measurement_sequence) == 0:
        raise ValueError("measurement sequence is empty")
    history = []
    current = list(nodes)
    for measurements in measurement_sequence:
        current = step(current, graph, cfg, measurements)
        history.append(current)
    return history


def initial_belief(mean, cov, filter_kind: FilterKind, dof: float = 3.0) -> Belief:
    """Prior with the given mean and covariance; a t prior gets scale
    ``(dof - 2) / dof * cov`` so its covariance equals ``cov``."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if filter_kind is FilterKind.KF:
        return Gaussian(mean, cov)
    return StudentT(mean, (dof - 2.0) / dof * cov, dof)
