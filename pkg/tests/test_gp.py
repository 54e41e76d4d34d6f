import numpy as np
import pytest

from cellevo import gp
from cellevo.errors import ConfigError
from cellevo.gp import (
    END,
    MAX_DEPTH,
    PAR,
    SEQ,
    Genotype,
    crossover_single_point,
    generate_tree,
    init_population,
    mutate_uniform,
    reinit_reduced,
    tournament_select,
    tree_stats,
)


def walk(node):
    yield node
    if node.kind != END:
        yield from walk(node.left)
        yield from walk(node.right)


def check_valid(g, max_depth=MAX_DEPTH):
    """Independent structural validation: recompute everything by traversal
    instead of trusting the cached node metadata."""

    def measure(node):
        if node.kind == END:
            assert node.left is None and node.right is None
            return 1, 1
        assert node.kind in (SEQ, PAR)
        assert node.left is not None and node.right is not None
        ld, ls = measure(node.left)
        rd, rs = measure(node.right)
        return 1 + max(ld, rd), 1 + ls + rs

    depth, size = measure(g.root)
    assert depth == g.depth
    assert size == g.node_count
    assert depth <= max_depth


class StubRNG:
    """Deterministic stand-in for a Generator: integers() pops scripted
    values, random() pops scripted floats."""

    def __init__(self, ints=(), floats=()):
        self._ints = list(ints)
        self._floats = list(floats)

    def integers(self, low, high=None, size=None):
        if size is not None:
            return np.array([self._ints.pop(0) for _ in range(size)])
        return self._ints.pop(0)

    def random(self):
        return self._floats.pop(0)


class TestGenerateTree:
    def test_min_depth_forces_terminal(self, rng):
        g = generate_tree(rng, 1, 1, "full")
        assert g.to_text() == "END"
        assert generate_tree(rng, 1, 1, "grow").to_text() == "END"

    def test_full_depth_3(self, rng):
        # a full tree at target 3 has two internal levels and all four
        # leaves at level 3
        g = generate_tree(rng, 3, 3, "full")
        assert g.depth == 3
        assert g.node_count == 7
        assert g.seq_count + g.par_count == 3
        for leaf in (g.root.left.left, g.root.left.right, g.root.right.left,
                     g.root.right.right):
            assert leaf.kind == END

    def test_depth_bounds_respected(self, rng):
        for _ in range(300):
            g = generate_tree(rng, 2, 5, "grow")
            assert 2 <= g.depth <= 5
            check_valid(g)
            g = generate_tree(rng, 2, 5, "full")
            assert 2 <= g.depth <= 5
            check_valid(g)

    def test_invalid_bounds(self, rng):
        with pytest.raises(ConfigError):
            generate_tree(rng, 0, 3)
        with pytest.raises(ConfigError):
            generate_tree(rng, 3, 2)
        with pytest.raises(ConfigError):
            generate_tree(rng, 1, MAX_DEPTH + 1)
        with pytest.raises(ConfigError):
            generate_tree(rng, 1, 3, "ramped")

    def test_grow_kind_fraction_is_uniform(self):
        # Monte-Carlo: internal node kinds are a fair coin
        rng = np.random.default_rng(7)
        seq = par = 0
        for _ in range(10_000):
            g = generate_tree(rng, 1, 3, "grow")
            seq += g.seq_count
            par += g.par_count
        frac = seq / (seq + par)
        assert abs(frac - 0.5) < 0.02


class TestInitPopulation:
    def test_table_defaults(self, rng):
        pop = init_population(rng, 30, (1, 3))
        assert len(pop) == 30
        assert all(1 <= g.depth <= 3 for g in pop)
        for g in pop:
            check_valid(g)

    def test_depth_one_range(self, rng):
        pop = init_population(rng, 2, (1, 1))
        assert [g.to_text() for g in pop] == ["END", "END"]

    def test_same_seed_identical(self):
        a = init_population(np.random.default_rng(11), 20, (1, 3))
        b = init_population(np.random.default_rng(11), 20, (1, 3))
        assert [g.to_text() for g in a] == [g.to_text() for g in b]

    def test_size_below_two(self, rng):
        with pytest.raises(ConfigError):
            init_population(rng, 1, (1, 3))


class TestTournament:
    def test_full_coverage_returns_global_best(self):
        # scripted draws covering every index stand in for sampling
        # without replacement
        pop = list("abcd")
        fits = [0.1, 0.4, 0.2, 0.3]
        stub = StubRNG(ints=[0, 1, 2, 3])
        assert tournament_select(stub, pop, fits, 4) == "b"

    def test_k1_is_uniform(self):
        rng = np.random.default_rng(3)
        pop = list(range(5))
        fits = [1.0] * 5
        counts = np.zeros(5)
        for _ in range(20_000):
            counts[tournament_select(rng, pop, fits, 1)] += 1
        assert np.all(np.abs(counts / 20_000 - 0.2) < 0.02)

    def test_selection_probability_of_best(self):
        # with replacement: P(best in 3 draws) = 1 - (3/4)^3 = 37/64
        rng = np.random.default_rng(17)
        pop = list(range(4))
        fits = [0.1, 0.2, 0.3, 0.4]
        hits = sum(
            tournament_select(rng, pop, fits, 3) == 3 for _ in range(100_000)
        )
        assert abs(hits / 100_000 - 37 / 64) < 0.02

    def test_tie_break_by_lower_id(self):
        pop = ["x", "y"]
        fits = [0.5, 0.5]
        stub = StubRNG(ints=[1, 0])
        assert tournament_select(stub, pop, fits, 2) == "x"
        # explicit ids reverse the preference
        stub = StubRNG(ints=[1, 0])
        assert tournament_select(stub, pop, fits, 2, ids=[9, 2]) == "y"

    def test_empty_population(self, rng):
        with pytest.raises(ValueError):
            tournament_select(rng, [], [], 3)


class TestCrossover:
    def test_root_swap_copies_parents(self):
        a = Genotype.from_text("(SEQ END END)")
        b = Genotype.from_text("(PAR END (PAR END END))")
        stub = StubRNG(ints=[0, 0])
        c1, c2 = crossover_single_point(stub, a, b)
        assert c1.to_text() == b.to_text()
        assert c2.to_text() == a.to_text()

    def test_end_parent(self, rng):
        a = Genotype.from_text("END")
        b = Genotype.from_text("(SEQ (PAR END END) END)")
        for _ in range(50):
            c1, c2 = crossover_single_point(rng, a, b)
            # one offspring embeds all of b at a's root, the other is b
            # with one subtree cut down to END
            assert c1.node_count >= 1
            assert c2.node_count <= b.node_count
            check_valid(c1)
            check_valid(c2)

    def test_depth_limit_repair(self):
        rng = np.random.default_rng(5)
        a = generate_tree(rng, 9, 9, "full")
        b = generate_tree(rng, 9, 9, "full")
        for _ in range(1000):
            c1, c2 = crossover_single_point(rng, a, b)
            assert c1.depth <= MAX_DEPTH
            assert c2.depth <= MAX_DEPTH

    def test_kind_multiset_preserved(self):
        # with shallow parents the repair fallback can never fire, so the
        # combined SEQ/PAR/END counts are invariant
        rng = np.random.default_rng(6)
        for _ in range(300):
            a = generate_tree(rng, 1, 6, "grow")
            b = generate_tree(rng, 1, 6, "grow")
            c1, c2 = crossover_single_point(rng, a, b)
            assert c1.seq_count + c2.seq_count == a.seq_count + b.seq_count
            assert c1.par_count + c2.par_count == a.par_count + b.par_count
            assert c1.node_count + c2.node_count == a.node_count + b.node_count


class TestMutation:
    def test_end_genotype_outcomes(self):
        g = Genotype.from_text("END")
        seen = set()
        for seed in range(40):
            m = mutate_uniform(np.random.default_rng(seed), g)
            assert m.depth <= 2
            check_valid(m)
            seen.add(m.to_text())
        # both the no-op END replacement and depth-2 subtrees occur
        assert "END" in seen
        assert any(t != "END" for t in seen)

    def test_uniform_position_choice(self):
        class Recording(StubRNG):
            def __init__(self, inner):
                self.inner = inner
                self.positions = []
                self.armed = True

            def integers(self, low, high=None, size=None):
                v = self.inner.integers(low, high, size=size)
                if self.armed and high is not None:
                    self.positions.append(int(v))
                    self.armed = False
                return v

            def random(self):
                return self.inner.random()

        base = Genotype.from_text("(SEQ (PAR END END) (SEQ END (PAR END END)))")
        n = base.node_count
        rec = Recording(np.random.default_rng(2))
        counts = np.zeros(n)
        for _ in range(10_000):
            rec.armed = True
            m = mutate_uniform(rec, base)
            assert m.depth <= MAX_DEPTH
            check_valid(m)
            counts[rec.positions[-1]] += 1
        assert np.all(np.abs(counts / 10_000 - 1 / n) < 0.02)

    def test_deep_tree_respects_limit(self):
        rng = np.random.default_rng(9)
        g = generate_tree(rng, 17, 17, "full")
        for _ in range(200):
            m = mutate_uniform(rng, g)
            assert m.depth <= MAX_DEPTH


class TestReinitReduced:
    def test_depth_one(self, rng):
        assert reinit_reduced(rng, Genotype.from_text("END")).to_text() == "END"

    def test_depth_17_bound(self):
        rng = np.random.default_rng(1)
        g = generate_tree(rng, 17, 17, "full")
        for _ in range(100):
            assert 1 <= reinit_reduced(rng, g).depth <= 8

    def test_reaches_depth_one_within_five_steps(self):
        # worst-case bound sequence 17 -> 8 -> 4 -> 2 -> 1
        for seed in range(50):
            rng = np.random.default_rng(seed)
            g = generate_tree(rng, 17, 17, "full")
            for step in range(5):
                g = reinit_reduced(rng, g)
                if g.depth == 1:
                    break
            assert g.depth == 1


class TestTreeStats:
    def test_single_end(self):
        assert tree_stats(Genotype.from_text("END")) == {
            "depth": 1, "seq_count": 0, "par_count": 0, "node_count": 1,
        }

    def test_mixed_tree(self):
        g = Genotype.from_text("(SEQ END (PAR END END))")
        assert tree_stats(g) == {
            "depth": 3, "seq_count": 1, "par_count": 1, "node_count": 5,
        }

    def test_internal_count_identity(self):
        rng = np.random.default_rng(21)
        for _ in range(1000):
            g = generate_tree(rng, 1, 8, "grow")
            stats = tree_stats(g)
            leaves = sum(1 for n in walk(g.root) if n.kind == END)
            assert stats["seq_count"] + stats["par_count"] == stats["node_count"] - leaves


class TestSerialization:
    @pytest.mark.parametrize("text", [
        "END",
        "(SEQ END END)",
        "(PAR END (SEQ END (PAR END END)))",
    ])
    def test_round_trip_examples(self, text):
        assert Genotype.from_text(text).to_text() == text

    def test_round_trip_random(self):
        rng = np.random.default_rng(31)
        for _ in range(500):
            g = generate_tree(rng, 1, 10, "grow")
            assert Genotype.from_text(g.to_text()) == g

    @pytest.mark.parametrize("bad", [
        "", "SEQ", "(SEQ END)", "(SEQ END END", "(END END END)",
        "(SEQ END END) END",
    ])
    def test_rejects_malformed(self, bad):
        with pytest.raises(ValueError):
            Genotype.from_text(bad)

    def test_population_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        pop = gp.init_population(rng, 10, (1, 3))
        path = tmp_path / "population.txt"
        gp.save_population(pop, path)
        assert gp.load_population(path) == pop
        assert len(path.read_text(encoding="utf-8").splitlines()) == 10


def test_operators_never_emit_invalid_trees():
    # property sweep across ~1e5 operator applications
    rng = np.random.default_rng(99)
    pool = [generate_tree(rng, 1, 9, "grow") for _ in range(200)]
    for _ in range(25_000):
        i, j = rng.integers(0, len(pool), size=2)
        c1, c2 = crossover_single_point(rng, pool[i], pool[j])
        m = mutate_uniform(rng, c1)
        r = reinit_reduced(rng, pool[j])
        for g in (c1, c2, m, r):
            assert g.depth <= MAX_DEPTH
        pool[int(i)] = m if m.depth < 12 else pool[int(i)]
    for g in pool:
        check_valid(g)
