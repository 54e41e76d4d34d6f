import numpy as np
import pytest
from oracles import all_genotypes, enumerate_paths, wilcoxon_bruteforce

from cellevo.analytics import (
    cell_to_depth_ratio,
    depth,
    export_metrics,
    genealogy_of,
    lineage_to_dot,
    path_density,
    phenotype_metrics,
    wilcoxon_signed_rank,
)
from cellevo.decoder import decode, parameter_count
from cellevo.evolution import RunRecord
from cellevo.gp import Genotype


class TestGraphMetrics:
    def test_ancestor(self):
        graph = decode(Genotype.from_text("END"), 4)
        assert depth(graph) == 1
        assert path_density(graph) == 1
        assert cell_to_depth_ratio(graph) == 1.0

    def test_chain_of_five(self):
        graph = decode(Genotype.from_text(
            "(SEQ END (SEQ END (SEQ END (SEQ END END))))"), 4)
        assert graph.cell_count == 5
        assert depth(graph) == 5
        assert cell_to_depth_ratio(graph) == 1.0

    def test_single_diamond(self):
        graph = decode(Genotype.from_text("(PAR END END)"), 4)
        assert path_density(graph) == 2
        assert depth(graph) == 1

    def test_eight_parallel_cells_ratio(self):
        # seven PAR divisions leave 8 cells side by side, all width
        text = "(PAR (PAR (PAR (PAR (PAR (PAR (PAR END END) END) END) END) END) END) END)"
        graph = decode(Genotype.from_text(text), 4)
        assert graph.cell_count == 8
        assert depth(graph) == 1
        assert cell_to_depth_ratio(graph) == pytest.approx(1 / 8)

    def test_exhaustive_small_genotypes_match_bruteforce(self):
        checked = 0
        for genotype in all_genotypes(4):
            graph = decode(genotype, 4)
            paths = enumerate_paths(graph)
            assert path_density(graph) == len(paths)
            assert depth(graph) == max(len(p) for p in paths)
            ratio = cell_to_depth_ratio(graph)
            assert ratio == pytest.approx(max(len(p) for p in paths) / graph.cell_count)
            if genotype.par_count == 0:
                assert ratio == 1.0
            checked += 1
        assert checked == 275

    def test_metrics_invariant_under_reserialization(self):
        genotype = Genotype.from_text("(SEQ (PAR END END) (PAR END (SEQ END END)))")
        a = decode(genotype, 4)
        b = decode(Genotype.from_text(genotype.to_text()), 4)
        ma = phenotype_metrics(a, genotype, parameter_count(a, 64, 70, 4))
        mb = phenotype_metrics(b, genotype, parameter_count(b, 64, 70, 4))
        assert ma == mb


class TestWilcoxon:
    def test_identical_samples_error(self):
        x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
        with pytest.raises(ValueError):
            wilcoxon_signed_rank(x, x)

    def test_all_positive_n6(self):
        x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
        y = [0.5, 1.0, 2.0, 3.0, 4.0, 5.0]
        result = wilcoxon_signed_rank(x, y)
        assert result.p_value == pytest.approx(2 / 2 ** 6)
        assert result.reject
        assert result.method == "exact"
        assert result.n_effective == 6

    def test_exact_matches_bruteforce_enumeration(self):
        rng = np.random.default_rng(42)
        for trial in range(120):
            n = int(rng.integers(5, 11))
            x = rng.integers(0, 6, size=n) / 4.0  # integer grid forces ties
            y = rng.integers(0, 6, size=n) / 4.0
            if np.all(x == y):
                continue
            nonzero = int((x != y).sum())
            if nonzero < 5:
                continue
            result = wilcoxon_signed_rank(x, y)
            assert result.p_value == wilcoxon_bruteforce(x, y)
            assert result.n_effective == nonzero

    def test_zero_differences_dropped(self):
        x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]
        y = [1.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]  # first pair ties
        result = wilcoxon_signed_rank(x, y)
        assert result.n_effective == 6

    def test_statistic_is_min_rank_sum(self):
        x = [2.0, 3.0, 1.0, 5.0, 9.0]
        y = [1.0, 1.0, 2.0, 1.0, 1.0]
        # |d| = [1, 2, 1, 4, 8]: the lone negative difference shares the
        # tied average rank 1.5, so W = min(W+, W-) = 1.5
        result = wilcoxon_signed_rank(x, y)
        assert result.statistic == 1.5

    def test_normal_mode_above_twenty(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(25) + 1.2
        y = rng.standard_normal(25)
        result = wilcoxon_signed_rank(x, y)
        assert result.method == "normal"
        assert 0.0 <= result.p_value < 0.01
        assert result.reject

    def test_reject_iff_p_below_alpha(self):
        x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
        y = [0.5, 2.5, 2.0, 4.5, 4.0, 6.5]
        result = wilcoxon_signed_rank(x, y, alpha=0.05)
        assert result.reject == (result.p_value < 0.05)


def fake_record(algo, seed, fits):
    generations = []
    genealogy = {}
    next_id = 0
    for gen, gen_fits in enumerate(fits):
        individuals = []
        for f in gen_fits:
            genealogy[next_id] = {
                "parents": [] if gen == 0 else [next_id - len(gen_fits)],
                "op": "init" if gen == 0 else "elite-copy",
                "gen": gen,
            }
            individuals.append({
                "id": next_id, "generation": gen, "fitness": f,
                "genotype": "END", "op": genealogy[next_id]["op"],
                "parents": genealogy[next_id]["parents"],
                "cell_count": 1, "depth": 1, "cell_to_depth_ratio": 1.0,
                "path_density": 1, "parameter_count": 29_764,
                "seq_count": 0, "par_count": 0,
            })
            next_id += 1
        generations.append({"generation": gen, "best_fitness": max(gen_fits),
                            "individuals": individuals})
    best = max((i for g in generations for i in g["individuals"]),
               key=lambda i: i["fitness"])
    return RunRecord(algo=algo, seed=seed, config={}, generations=generations,
                     counters={"evaluations": next_id, "crossovers": 0,
                               "mutations": 0, "rejections": 0, "elite_copies": 0},
                     genealogy=genealogy, fittest=best, events=[])


class TestGenealogy:
    def test_generation_zero_single_node(self):
        record = fake_record("ec", 1, [[0.5, 0.6]])
        tree = genealogy_of(record, 0)
        assert tree.nodes.keys() == {0}
        assert tree.edges == []

    def test_elite_chain(self):
        record = fake_record("ec", 1, [[0.5, 0.6], [0.5, 0.6], [0.5, 0.6]])
        tree = genealogy_of(record, 4)
        assert sorted(tree.nodes) == [0, 2, 4]
        assert [op for _, _, op in tree.edges] == ["elite-copy", "elite-copy"]

    def test_unknown_id(self):
        record = fake_record("ec", 1, [[0.5]])
        with pytest.raises(KeyError):
            genealogy_of(record, 99)

    def test_dot_export(self):
        record = fake_record("ec", 1, [[0.5, 0.6], [0.5, 0.7]])
        dot = lineage_to_dot(genealogy_of(record, 3))
        assert dot.startswith("digraph lineage")
        assert "elite-copy" in dot


class TestExports:
    def test_row_count_equals_individuals(self, tmp_path):
        records = [fake_record("ec", 1, [[0.1, 0.2], [0.3, 0.4]]),
                   fake_record("random", 1, [[0.2, 0.5]])]
        paths = export_metrics(records, tmp_path)
        rows = paths["phenotypes"].read_text().splitlines()
        assert len(rows) == 1 + 6

    def test_reexport_byte_identical(self, tmp_path):
        records = [fake_record("ec", 3, [[0.1, 0.9], [0.5, 0.4]])]
        paths1 = export_metrics(records, tmp_path / "a")
        paths2 = export_metrics(records, tmp_path / "b")
        for key in paths1:
            assert paths1[key].read_bytes() == paths2[key].read_bytes()

    def test_histogram_marginals_match_totals(self, tmp_path):
        records = [fake_record("ec", 1, [[0.1, 0.2, 0.3]])]
        paths = export_metrics(records, tmp_path)
        rows = paths["op_histogram"].read_text().splitlines()[1:]
        total = sum(int(r.rsplit(",", 1)[1]) for r in rows)
        assert total == records[0].counters["evaluations"]

    def test_empty_records_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            export_metrics([], tmp_path)
