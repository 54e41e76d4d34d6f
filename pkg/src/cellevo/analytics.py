"""Architecture metrics, genealogy reconstruction and statistics.

All functions here are read-only analyses over immutable graphs or run
records, so they are safe to call concurrently.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from cellevo.decoder import INPUT, OUTPUT, PhenotypeGraph


# ---------------------------------------------------------------------------
# Graph metrics
# ---------------------------------------------------------------------------

def depth(graph: PhenotypeGraph) -> int:
    """Longest input->output path, counted in cells."""
    longest = {INPUT: 0}
    for v in graph.topological_cells():
        longest[v] = 1 + max(longest[s] for s in graph.in_edges[v])
    return max(longest[s] for s in graph.in_edges[OUTPUT])


def path_density(graph: PhenotypeGraph) -> int:
    """Number of distinct input->output paths (exact, arbitrary precision)."""
    paths = {INPUT: 1}
    for v in graph.topological_cells():
        paths[v] = sum(paths[s] for s in graph.in_edges[v])
    return sum(paths[s] for s in graph.in_edges[OUTPUT])


def cell_to_depth_ratio(graph: PhenotypeGraph) -> float:
    """Depth divided by cell count: 1.0 for pure chains, approaching 0 for
    wide flat graphs."""
    return depth(graph) / graph.cell_count


@dataclass
class PhenotypeMetrics:
    cell_count: int
    depth: int
    cell_to_depth_ratio: float
    path_density: int
    parameter_count: int
    seq_count: int
    par_count: int
    fitness: float = float("nan")


def phenotype_metrics(graph, genotype, params: int, fitness=float("nan")) -> PhenotypeMetrics:
    return PhenotypeMetrics(
        cell_count=graph.cell_count,
        depth=depth(graph),
        cell_to_depth_ratio=cell_to_depth_ratio(graph),
        path_density=path_density(graph),
        parameter_count=params,
        seq_count=genotype.seq_count,
        par_count=genotype.par_count,
        fitness=fitness,
    )


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank test
# ---------------------------------------------------------------------------

@dataclass
class WilcoxonResult:
    statistic: float  # W = min(W+, W-)
    p_value: float
    alpha: float
    reject: bool
    n_effective: int
    method: str  # "exact" or "normal"


def _rank_abs(values):
    """Average ranks of |values| (1-based, ties share the mean rank)."""
    a = np.abs(np.asarray(values, dtype=float))
    order = np.argsort(a, kind="stable")
    ranks = np.empty(len(a))
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and a[order[j + 1]] == a[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_tail_counts(double_ranks, w_plus_doubled):
    """Distribution of 2*W+ over all sign assignments via a convolution DP.

    Average ranks are multiples of 1/2, so doubling makes them integers and
    the DP array indexes every achievable 2*W+ value exactly.  Returns the
    number of assignments with 2*W+ <= w and >= w.
    """
    total = sum(double_ranks)
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    upto = 0
    for r in double_ranks:
        nxt = counts.copy()
        nxt[r : upto + r + 1] += counts[: upto + 1]
        counts = nxt
        upto += r
    c_le = int(sum(counts[: w_plus_doubled + 1]))
    c_ge = int(sum(counts[w_plus_doubled:]))
    return c_le, c_ge


def wilcoxon_signed_rank(x, y, alpha: float = 0.05) -> WilcoxonResult:
    """Paired two-sided Wilcoxon signed-rank test.

    Zero differences are dropped; ties in |x - y| receive average ranks.
    For n <= 20 effective pairs the p-value is exact over all 2^n sign
    assignments (computed by dynamic programming over the doubled ranks);
    above that a normal approximation with tie correction is used.

    Parameters
    ----------
    x, y : sequences of equal length
        Paired observations.
    alpha : float
        Significance level; ``reject`` is True iff p < alpha.

    Returns
    -------
    WilcoxonResult
        statistic is the classic W = min(W+, W-).

    Raises
    ------
    ValueError
        If fewer than 5 nonzero differences remain.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d sequences of equal length")
    d = x - y
    d = d[d != 0.0]
    n = len(d)
    if n < 5:
        raise ValueError(
            "need at least 5 nonzero differences for the signed-rank test, got %d" % n
        )
    ranks = _rank_abs(d)
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    statistic = min(w_plus, w_minus)
    if n <= 20:
        double_ranks = [int(round(2 * r)) for r in ranks]
        c_le, c_ge = _exact_tail_counts(double_ranks, int(round(2 * w_plus)))
        p = min(1.0, 2.0 * min(c_le, c_ge) / 2.0 ** n)
        method = "exact"
    else:
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var -= float(((tie_counts ** 3 - tie_counts) / 48.0).sum())
        z = (w_plus - mean) / math.sqrt(var)
        p = math.erfc(abs(z) / math.sqrt(2.0))
        method = "normal"
    return WilcoxonResult(statistic, p, alpha, p < alpha, n, method)


# ---------------------------------------------------------------------------
# Genealogy
# ---------------------------------------------------------------------------

@dataclass
class LineageTree:
    """Ancestor closure of one individual: nodes map id -> lineage entry,
    edges run child -> parent annotated with the child's producing op."""

    root_id: int
    nodes: dict
    edges: list


def genealogy_of(record, individual_id: int) -> LineageTree:
    """Reconstruct the full ancestor tree of an individual back to
    generation 0 from a run record's genealogy store."""
    store = record.genealogy
    if individual_id not in store:
        raise KeyError("individual %d not present in the run record" % individual_id)
    nodes = {}
    edges = []
    frontier = [individual_id]
    while frontier:
        nid = frontier.pop()
        if nid in nodes:
            continue
        entry = store[nid]
        nodes[nid] = entry
        for parent in entry["parents"]:
            edges.append((nid, parent, entry["op"]))
            frontier.append(parent)
    edges.sort()
    return LineageTree(individual_id, nodes, edges)


def lineage_to_dot(tree: LineageTree) -> str:
    lines = ["digraph lineage {"]
    for nid in sorted(tree.nodes):
        entry = tree.nodes[nid]
        lines.append(
            '  n%d [label="#%d gen %d\\n%s"];' % (nid, nid, entry["gen"], entry["op"])
        )
    for child, parent, op in tree.edges:
        lines.append('  n%d -> n%d [label="%s"];' % (parent, child, op))
    lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------

PHENOTYPE_COLUMNS = [
    "algo", "seed", "generation", "individual_id", "fitness", "cell_count",
    "depth", "cell_to_depth_ratio", "path_density", "parameter_count",
    "seq_count", "par_count",
]


def export_metrics(records, out_dir) -> dict:
    """Write plot-ready CSV tables for a set of run records.

    Emits per-phenotype metric rows, per-generation fitness quantiles and
    the joint SEQ/PAR operation histogram.  Output is byte-stable: rows are
    fully ordered and floats use repr formatting.
    """
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not records:
        raise ValueError("need at least one run record to export")
    records = sorted(records, key=lambda r: (r.algo, r.seed))

    paths = {}
    paths["phenotypes"] = out_dir / "phenotypes.csv"
    with open(paths["phenotypes"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PHENOTYPE_COLUMNS)
        for rec in records:
            for gen in rec.generations:
                for ind in gen["individuals"]:
                    w.writerow([
                        rec.algo, rec.seed, gen["generation"], ind["id"],
                        repr(ind["fitness"]), ind["cell_count"], ind["depth"],
                        repr(ind["cell_to_depth_ratio"]), ind["path_density"],
                        ind["parameter_count"], ind["seq_count"], ind["par_count"],
                    ])

    paths["generations"] = out_dir / "generations.csv"
    with open(paths["generations"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algo", "seed", "generation", "min", "q25", "median", "q75", "max"])
        for rec in records:
            for gen in rec.generations:
                fits = np.sort(np.array([i["fitness"] for i in gen["individuals"]]))
                qs = np.quantile(fits, [0.0, 0.25, 0.5, 0.75, 1.0])
                w.writerow([rec.algo, rec.seed, gen["generation"]] + [repr(float(q)) for q in qs])

    paths["op_histogram"] = out_dir / "op_histogram.csv"
    hist = {}
    for rec in records:
        for gen in rec.generations:
            for ind in gen["individuals"]:
                key = (rec.algo, ind["seq_count"], ind["par_count"])
                hist[key] = hist.get(key, 0) + 1
    with open(paths["op_histogram"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algo", "seq_count", "par_count", "phenotypes"])
        for key in sorted(hist):
            w.writerow([key[0], key[1], key[2], hist[key]])

    return paths
