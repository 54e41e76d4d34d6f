"""Deterministic genotype-to-phenotype decoding.

Executes a genotype's division program against the ancestor network (one
convolutional cell between an embedded input and a pool+classifier output)
and produces an immutable DAG of cells.  Decoding is total: every genotype
yields a structurally valid, trainable graph.
"""

from __future__ import annotations

import heapq
import json
from collections import deque
from dataclasses import dataclass

from cellevo.gp import END, PAR, SEQ, Genotype

INPUT = -1   # embedded input layer
OUTPUT = -2  # temporal average pool + fully connected classifier

ANCESTOR_KERNEL = 3
CELL_CHANNELS = 64
KERNEL_CYCLE = (3, 5, 7)


def shift_right(kernel: int) -> int:
    """Deterministic kernel assignment for PAR children: 3 -> 5 -> 7 -> 3."""
    try:
        return KERNEL_CYCLE[(KERNEL_CYCLE.index(kernel) + 1) % 3]
    except ValueError:
        raise ValueError("kernel must be one of %s, got %r" % (list(KERNEL_CYCLE), kernel))


@dataclass
class Cell:
    """A convolutional block: two (conv -> batch norm -> ReLU) stages.

    ``in_channels`` is 0 until channels are resolved; ``creation_index``
    equals ``id`` and fixes concatenation order at shared destinations.
    """

    id: int
    kernel: int
    stride: int = 2
    padding: int = 1
    in_channels: int = 0
    out_channels: int = CELL_CHANNELS

    @property
    def creation_index(self) -> int:
        return self.id


def _node_order(node: int) -> int:
    # input sorts before all cells, output after; cells by creation index
    if node == INPUT:
        return -1
    if node == OUTPUT:
        return 1 << 30
    return node


class PhenotypeGraph:
    """DAG of cells between the input and output nodes.

    Incoming neighbour lists are kept in ascending creation order of the
    sources, which fixes channel-concatenation order.  Instances are
    immutable once channels are resolved.
    """

    def __init__(self, cells, in_edges, out_edges, class_count, embed_dim=CELL_CHANNELS):
        self.cells = cells
        self.in_edges = in_edges
        self.out_edges = out_edges
        self.class_count = class_count
        self.embed_dim = embed_dim
        self.fc_in = 0
        self.resolved = False

    @property
    def cell_count(self) -> int:
        return len(self.cells)

    def edges(self):
        """All edges as (src, dst), deterministically ordered."""
        out = []
        for dst in sorted(self.in_edges, key=_node_order):
            for src in self.in_edges[dst]:
                out.append((src, dst))
        return out

    def source_channels(self, node: int) -> int:
        return self.embed_dim if node == INPUT else self.cells[node].out_channels

    def topological_cells(self):
        """Cell ids in execution order: a topological sort that breaks ties
        by creation index so the order is unique."""
        remaining = {}
        ready = []
        for c in self.cells:
            n = sum(1 for s in self.in_edges[c.id] if s != INPUT)
            remaining[c.id] = n
            if n == 0:
                ready.append(c.id)
        heapq.heapify(ready)
        order = []
        while ready:
            v = heapq.heappop(ready)
            order.append(v)
            for w in self.out_edges[v]:
                if w == OUTPUT:
                    continue
                remaining[w] -= 1
                if remaining[w] == 0:
                    heapq.heappush(ready, w)
        if len(order) != len(self.cells):
            raise ValueError("graph contains a cycle")
        return order

    def validate(self) -> None:
        """Check structural invariants; raises ValueError on violation."""
        order = self.topological_cells()  # raises on cycles
        assert len(order) == len(self.cells)
        reach_fwd = {INPUT}
        for v in order:
            if any(s in reach_fwd for s in self.in_edges[v]):
                reach_fwd.add(v)
        reach_bwd = {OUTPUT} | set(self.in_edges[OUTPUT])
        for v in reversed(order):
            if any(d in reach_bwd for d in self.out_edges[v]):
                reach_bwd.add(v)
        for c in self.cells:
            if c.id not in reach_fwd or c.id not in reach_bwd:
                raise ValueError("cell %d is not on an input->output path" % c.id)
            srcs = self.in_edges[c.id]
            if not srcs:
                raise ValueError("cell %d has no inbound edges" % c.id)
            if srcs != sorted(srcs, key=_node_order):
                raise ValueError("cell %d incoming edges are not in creation order" % c.id)
            if len(set(srcs)) != len(srcs):
                raise ValueError("cell %d has duplicate inbound edges" % c.id)
        if not self.in_edges[OUTPUT]:
            raise ValueError("output node has no inbound edges")

    def to_json(self) -> str:
        """Stable structured dump used for fixtures and debugging."""
        data = {
            "class_count": self.class_count,
            "embed_dim": self.embed_dim,
            "cells": [
                {
                    "id": c.id,
                    "kernel": c.kernel,
                    "stride": c.stride,
                    "padding": c.padding,
                    "in_channels": c.in_channels,
                    "out_channels": c.out_channels,
                }
                for c in self.cells
            ],
            "edges": [[src, dst] for src, dst in self.edges()],
            "fc_in": self.fc_in,
        }
        return json.dumps(data, sort_keys=True, separators=(",", ":"))


def decode(g: Genotype, class_count: int, stride: int = 2, padding: int = 1,
           embed_dim: int = CELL_CHANNELS) -> PhenotypeGraph:
    """Execute the genotype's program and return the resolved phenotype.

    A FIFO work queue is seeded with (ancestor cell, root node).  SEQ
    inserts the child between the mother and the mother's current outputs;
    PAR attaches the child to the mother's current inputs and outputs with
    a shift-right kernel.  The mother continues with the left subtree, the
    child with the right.
    """
    if class_count < 2:
        raise ValueError("class_count must be >= 2, got %d" % class_count)
    cells = [Cell(0, ANCESTOR_KERNEL, stride, padding)]
    in_edges = {0: [INPUT], OUTPUT: [0]}
    out_edges = {INPUT: [0], 0: [OUTPUT]}
    queue = deque([(0, g.root)])
    while queue:
        mother, node = queue.popleft()
        if node.kind == END:
            continue
        child = len(cells)
        m = cells[mother]
        if node.kind == SEQ:
            cells.append(Cell(child, m.kernel, stride, padding))
            out_edges[child] = out_edges[mother]
            for dst in out_edges[child]:
                dsts = in_edges[dst]
                dsts[dsts.index(mother)] = child
            out_edges[mother] = [child]
            in_edges[child] = [mother]
        else:  # PAR
            cells.append(Cell(child, shift_right(m.kernel), stride, padding))
            in_edges[child] = list(in_edges[mother])
            for src in in_edges[child]:
                out_edges[src].append(child)
            out_edges[child] = list(out_edges[mother])
            for dst in out_edges[child]:
                in_edges[dst].append(child)
        queue.append((mother, node.left))
        queue.append((child, node.right))
    for node in in_edges:
        in_edges[node].sort(key=_node_order)
    for node in out_edges:
        out_edges[node].sort(key=_node_order)
    graph = PhenotypeGraph(cells, in_edges, out_edges, class_count, embed_dim)
    return resolve_channels(graph)


def resolve_channels(graph: PhenotypeGraph) -> PhenotypeGraph:
    """Set every cell's in_channels (and the classifier width) to the sum
    of its incoming sources' output channels, in edge order."""
    for cell in graph.cells:
        srcs = graph.in_edges[cell.id]
        if not srcs:
            raise ValueError("cell %d has no inbound edges" % cell.id)
        cell.in_channels = sum(graph.source_channels(s) for s in srcs)
    if not graph.in_edges[OUTPUT]:
        raise ValueError("output node has no inbound edges")
    graph.fc_in = sum(graph.source_channels(s) for s in graph.in_edges[OUTPUT])
    graph.resolved = True
    return graph


def cell_parameter_count(cell: Cell) -> int:
    out = cell.out_channels
    conv1 = cell.kernel * cell.in_channels * out + out
    conv2 = cell.kernel * out * out + out
    return conv1 + conv2 + 2 * (2 * out)


def parameter_count(graph: PhenotypeGraph, embed_dim: int, alphabet_size: int,
                    class_count: int) -> int:
    """Exact trainable-parameter total of the built network: embedding table
    plus per-cell conv/bn parameters plus the final linear layer."""
    if not graph.resolved:
        raise ValueError("channels must be resolved before counting parameters")
    total = alphabet_size * embed_dim
    for cell in graph.cells:
        total += cell_parameter_count(cell)
    total += graph.fc_in * class_count + class_count
    return total


def _dot_name(node: int) -> str:
    if node == INPUT:
        return "input"
    if node == OUTPUT:
        return "output"
    return "c%d" % node


def to_dot(graph: PhenotypeGraph) -> str:
    """Deterministic DOT rendering with kernel and channel labels."""
    lines = ["digraph phenotype {"]
    lines.append('  input [shape=box label="input (embed %d)"];' % graph.embed_dim)
    for c in graph.cells:
        lines.append(
            '  c%d [label="cell %d\\nk=%d %d->%d"];'
            % (c.id, c.id, c.kernel, c.in_channels, c.out_channels)
        )
    lines.append(
        '  output [shape=box label="output (pool %d -> fc %d)"];'
        % (graph.fc_in, graph.class_count)
    )
    for src, dst in graph.edges():
        lines.append("  %s -> %s;" % (_dot_name(src), _dot_name(dst)))
    lines.append("}")
    return "\n".join(lines) + "\n"
