"""Genotype trees and evolutionary operators for the cell-division encoding.

A genotype is a binary program tree whose internal nodes are SEQ or PAR
division operations and whose leaves are END terminals.  Trees are
immutable after construction; every operator takes an explicit numpy
``Generator`` and returns new trees, so identical (seed, inputs) pairs
reproduce bit-identical results and operators can run concurrently on
disjoint rng streams.

Depth is counted in node levels including leaves: a lone END has depth 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cellevo.errors import ConfigError

SEQ = "SEQ"
PAR = "PAR"
END = "END"

MAX_DEPTH = 17
CROSSOVER_ATTEMPTS = 10
MUTATION_ATTEMPTS = 10


class Node:
    """One tree node.  Structural metadata is cached so subtree navigation
    by preorder index and depth checks are O(1) per step."""

    __slots__ = ("kind", "left", "right", "size", "depth", "seq_count", "par_count")

    def __init__(self, kind, left=None, right=None):
        self.kind = kind
        self.left = left
        self.right = right
        if kind == END:
            self.size = 1
            self.depth = 1
            self.seq_count = 0
            self.par_count = 0
        else:
            self.size = 1 + left.size + right.size
            self.depth = 1 + max(left.depth, right.depth)
            self.seq_count = left.seq_count + right.seq_count + (kind == SEQ)
            self.par_count = left.par_count + right.par_count + (kind == PAR)


_END_NODE = Node(END)


def _subtree_at(node: Node, index: int) -> Node:
    # preorder: node itself is 0, then the left subtree, then the right
    while index:
        index -= 1
        if index < node.left.size:
            node = node.left
        else:
            index -= node.left.size
            node = node.right
    return node


def _replace_at(node: Node, index: int, sub: Node) -> Node:
    if index == 0:
        return sub
    index -= 1
    if index < node.left.size:
        return Node(node.kind, _replace_at(node.left, index, sub), node.right)
    return Node(node.kind, node.left, _replace_at(node.right, index - node.left.size, sub))


def _to_text(node: Node) -> str:
    if node.kind == END:
        return END
    return "(%s %s %s)" % (node.kind, _to_text(node.left), _to_text(node.right))


def _parse(tokens: list, pos: int) -> tuple:
    if pos >= len(tokens):
        raise ValueError("unexpected end of genotype text")
    tok = tokens[pos]
    if tok == END:
        return _END_NODE, pos + 1
    if tok != "(":
        raise ValueError("expected '(' or END, got %r" % tok)
    kind = tokens[pos + 1] if pos + 1 < len(tokens) else None
    if kind not in (SEQ, PAR):
        raise ValueError("expected SEQ or PAR, got %r" % kind)
    left, pos = _parse(tokens, pos + 2)
    right, pos = _parse(tokens, pos)
    if pos >= len(tokens) or tokens[pos] != ")":
        raise ValueError("expected ')' closing %s" % kind)
    return Node(kind, left, right), pos + 1


class Genotype:
    """Immutable wrapper around a program tree root."""

    __slots__ = ("root",)

    def __init__(self, root: Node):
        self.root = root

    @property
    def depth(self) -> int:
        return self.root.depth

    @property
    def node_count(self) -> int:
        return self.root.size

    @property
    def seq_count(self) -> int:
        return self.root.seq_count

    @property
    def par_count(self) -> int:
        return self.root.par_count

    def subtree(self, index: int) -> Node:
        if not 0 <= index < self.node_count:
            raise IndexError("node index %d out of range" % index)
        return _subtree_at(self.root, index)

    def replace(self, index: int, sub: Node) -> "Genotype":
        if not 0 <= index < self.node_count:
            raise IndexError("node index %d out of range" % index)
        return Genotype(_replace_at(self.root, index, sub))

    def to_text(self) -> str:
        return _to_text(self.root)

    @classmethod
    def from_text(cls, text: str) -> "Genotype":
        tokens = text.replace("(", " ( ").replace(")", " ) ").split()
        root, pos = _parse(tokens, 0)
        if pos != len(tokens):
            raise ValueError("trailing tokens after genotype: %r" % tokens[pos:])
        return cls(root)

    def __eq__(self, other):
        return isinstance(other, Genotype) and self.to_text() == other.to_text()

    def __hash__(self):
        return hash(self.to_text())

    def __repr__(self):
        return "Genotype(%s)" % self.to_text()


@dataclass(frozen=True)
class Lineage:
    """Provenance of one individual in the genealogy graph."""

    individual_id: int
    parent_ids: tuple = ()
    producing_op: str = "init"  # init | elite-copy | copy | crossover | mutation | depth-reduction
    generation: int = 0


def _check_depth_bounds(depth_min: int, depth_max: int) -> None:
    if not (1 <= depth_min <= depth_max <= MAX_DEPTH):
        raise ConfigError(
            "depth bounds must satisfy 1 <= min <= max <= %d, got [%d, %d]"
            % (MAX_DEPTH, depth_min, depth_max)
        )


def _grow_node(rng, level: int, target: int, depth_min: int) -> Node:
    if level == target:
        return _END_NODE
    if level >= depth_min and rng.integers(0, 3) == 0:
        return _END_NODE
    kind = SEQ if rng.integers(0, 2) == 0 else PAR
    left = _grow_node(rng, level + 1, target, depth_min)
    right = _grow_node(rng, level + 1, target, depth_min)
    return Node(kind, left, right)


def _full_node(rng, level: int, target: int) -> Node:
    if level == target:
        return _END_NODE
    kind = SEQ if rng.integers(0, 2) == 0 else PAR
    left = _full_node(rng, level + 1, target)
    right = _full_node(rng, level + 1, target)
    return Node(kind, left, right)


def generate_tree(rng, depth_min: int, depth_max: int, method: str = "grow") -> Genotype:
    """Generate a random tree with depth in [depth_min, depth_max].

    ``full`` places END leaves exactly at the target depth (drawn uniformly
    from the range); ``grow`` allows early END termination once depth_min
    is reached.  Internal node kinds are uniform over {SEQ, PAR}.
    """
    _check_depth_bounds(depth_min, depth_max)
    if method not in ("full", "grow"):
        raise ConfigError("method must be 'full' or 'grow', got %r" % method)
    target = depth_min if depth_min == depth_max else int(rng.integers(depth_min, depth_max + 1))
    if method == "full":
        return Genotype(_full_node(rng, 1, target))
    return Genotype(_grow_node(rng, 1, target, depth_min))


def init_population(rng, size: int, depth_range=(1, 3)) -> list:
    """Ramped half-and-half initial population: methods alternate per
    individual and the target depth cycles across the range."""
    if size < 2:
        raise ConfigError("population size must be >= 2, got %d" % size)
    lo, hi = depth_range
    _check_depth_bounds(lo, hi)
    span = hi - lo + 1
    population = []
    for i in range(size):
        target = lo + (i % span)
        if i % 2 == 0:
            population.append(generate_tree(rng, target, target, "full"))
        else:
            population.append(generate_tree(rng, lo, target, "grow"))
    return population


def tournament_select(rng, population: list, fitnesses, k: int, ids=None):
    """Fitness-argmax of k uniform draws with replacement.

    Ties go to the lowest id (list index when ``ids`` is not given).
    Returns the selected element of ``population``.
    """
    if len(population) == 0:
        raise ValueError("tournament over an empty population")
    if len(fitnesses) != len(population):
        raise ValueError("fitnesses are not aligned with the population")
    if k < 1:
        raise ConfigError("tournament size must be >= 1, got %d" % k)
    draws = rng.integers(0, len(population), size=k)
    best = None
    for i in draws:
        i = int(i)
        tie_key = ids[i] if ids is not None else i
        if best is None or (fitnesses[i], -tie_key) > (fitnesses[best], -best_key):
            best, best_key = i, tie_key
    return population[best]


def crossover_single_point(rng, a: Genotype, b: Genotype, max_depth: int = MAX_DEPTH):
    """Swap uniformly chosen subtrees between two parents.

    If either offspring would exceed the depth limit, points are redrawn
    (up to CROSSOVER_ATTEMPTS); after that, copies of the parents are
    returned unchanged.
    """
    for _ in range(CROSSOVER_ATTEMPTS):
        i = int(rng.integers(0, a.node_count))
        j = int(rng.integers(0, b.node_count))
        sub_a = a.subtree(i)
        sub_b = b.subtree(j)
        c1 = a.replace(i, sub_b)
        c2 = b.replace(j, sub_a)
        if c1.depth <= max_depth and c2.depth <= max_depth:
            return c1, c2
    return Genotype(a.root), Genotype(b.root)


def mutate_uniform(rng, g: Genotype, grow_depth=(1, 2), max_depth: int = MAX_DEPTH) -> Genotype:
    """Replace a uniformly chosen node with a fresh grow-tree.

    Uses the same redraw-then-skip repair as crossover to preserve the
    depth limit.  The replacement may equal the replaced subtree.
    """
    for _ in range(MUTATION_ATTEMPTS):
        i = int(rng.integers(0, g.node_count))
        sub = generate_tree(rng, grow_depth[0], grow_depth[1], "grow")
        mutated = g.replace(i, sub.root)
        if mutated.depth <= max_depth:
            return mutated
    return Genotype(g.root)


def reinit_reduced(rng, g: Genotype) -> Genotype:
    """Fresh grow-tree with depth in [1, max(1, floor(depth/2))]; used when
    a phenotype is rejected by the training budget."""
    return generate_tree(rng, 1, max(1, g.depth // 2), "grow")


def tree_stats(g: Genotype) -> dict:
    return {
        "depth": g.depth,
        "seq_count": g.seq_count,
        "par_count": g.par_count,
        "node_count": g.node_count,
    }


def save_population(population, path) -> None:
    """One s-expression per line, UTF-8."""
    with open(path, "w", encoding="utf-8") as fh:
        for g in population:
            fh.write(g.to_text() + "\n")


def load_population(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [Genotype.from_text(line) for line in fh if line.strip()]
