"""Evolutionary and random architecture search under surrogate budgets.

A run is driven entirely by rng streams derived from (run seed, generation,
position), so fitness evaluations can execute in parallel without changing
any result, and an interrupted run resumes bit-exactly from its last
completed generation.

Run records persist as one JSONL event per operation (eval, rejection,
crossover, mutation, elite-copy) plus a summary document.  Wall-clock
timings are kept in memory and in a sidecar file only, never in the
canonical record, so re-running a manifest reproduces byte-identical
records.
"""

from __future__ import annotations

import json
import math
import multiprocessing
import os
import time
from dataclasses import dataclass, field

import numpy as np

from cellevo import analytics, gp
from cellevo.data import LabeledDataset, subsample
from cellevo.decoder import decode, parameter_count
from cellevo.errors import ConfigError
from cellevo.gp import Genotype, Lineage
from cellevo.nn import TrainConfig, build_network, evaluate, train

# stream namespaces: (seed, namespace, ...) feeds a SeedSequence
S_INIT, S_EVAL, S_BREED, S_DATA, S_FINAL = range(5)


def stream(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def derived_seed(*key) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class BudgetConfig:
    """Surrogate training budget; the parameter ceiling stands in for GPU
    memory and must admit the ancestor network."""

    max_params: int = 20_000_000
    epochs: int = 10
    data_fraction: float = 0.25
    precision: str = "reduced"


@dataclass
class EvoConfig:
    generations: int = 30
    pop_size: int = 30
    elitism: float = 0.1
    crossover_p: float = 0.5
    mutation_p: float = 0.1
    tournament_k: int = 3
    init_depth: tuple = (1, 3)
    max_depth: int = 17
    mutation_growth: tuple = (1, 2)
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    batch_size: int = 128
    lr0: float = 0.01
    momentum: float = 0.9
    lr_halve_every: int = 3
    stride: int = 2
    padding: int = 1
    embed_dim: int = 64
    max_len: int = 256

    @property
    def elite_count(self) -> int:
        return math.ceil(self.elitism * self.pop_size)

    def validate(self):
        if self.generations < 1:
            raise ConfigError("generations must be >= 1")
        if self.pop_size < 2:
            raise ConfigError("pop_size must be >= 2")
        for name in ("elitism", "crossover_p", "mutation_p"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError("%s must be in [0, 1], got %r" % (name, v))
        if self.tournament_k < 1:
            raise ConfigError("tournament_k must be >= 1")
        lo, hi = self.init_depth
        if not 1 <= lo <= hi <= self.max_depth:
            raise ConfigError("init_depth must satisfy 1 <= lo <= hi <= max_depth")
        if not 1 <= self.max_depth <= gp.MAX_DEPTH:
            raise ConfigError("max_depth must be in [1, %d]" % gp.MAX_DEPTH)
        if self.elite_count >= self.pop_size:
            raise ConfigError("elitism leaves no room for offspring")
        if self.budget.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0.0 < self.budget.data_fraction <= 1.0:
            raise ConfigError("data_fraction must be in (0, 1]")
        if self.budget.precision not in ("full", "reduced"):
            raise ConfigError("precision must be 'full' or 'reduced'")
        if self.budget.max_params < 1:
            raise ConfigError("max_params must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.lr_halve_every < 1:
            raise ConfigError("lr_halve_every must be >= 1")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if self.padding < 0:
            raise ConfigError("padding must be >= 0")
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1")

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "budget"}
        d["init_depth"] = list(self.init_depth)
        d["mutation_growth"] = list(self.mutation_growth)
        d.update({
            "max_params": self.budget.max_params,
            "epochs": self.budget.epochs,
            "data_fraction": self.budget.data_fraction,
            "precision": self.budget.precision,
        })
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvoConfig":
        budget_keys = {"max_params", "epochs", "data_fraction", "precision"}
        budget = BudgetConfig(**{k: d[k] for k in budget_keys if k in d})
        kwargs = {k: v for k, v in d.items() if k not in budget_keys}
        for key in ("init_depth", "mutation_growth"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        unknown = set(kwargs) - {f for f in cls.__dataclass_fields__ if f != "budget"}
        if unknown:
            raise ConfigError("unknown config keys: %s" % ", ".join(sorted(unknown)))
        return cls(budget=budget, **kwargs)

    @classmethod
    def from_file(cls, path) -> "EvoConfig":
        """Flat `key = value` text file; '#' starts a comment."""
        d = {}
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError("%s line %d: expected key = value" % (path, line_no))
                key, value = (s.strip() for s in line.split("=", 1))
                d[key] = _parse_config_value(value)
        return cls.from_dict(d)


def _parse_config_value(value: str):
    if "," in value:
        return [_parse_config_value(v.strip()) for v in value.split(",")]
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


# ---------------------------------------------------------------------------
# Individuals and records
# ---------------------------------------------------------------------------

@dataclass
class Individual:
    id: int
    genotype: Genotype
    lineage: Lineage
    fitness: float = float("nan")
    eval_seconds: float = 0.0
    stats: dict = None

    @property
    def evaluated(self) -> bool:
        return not math.isnan(self.fitness)

    def record(self, generation: int) -> dict:
        rec = {
            "id": self.id,
            "generation": generation,
            "fitness": self.fitness,
            "genotype": self.genotype.to_text(),
            "op": self.lineage.producing_op,
            "parents": list(self.lineage.parent_ids),
        }
        rec.update(self.stats or {})
        return rec


COUNTER_KEYS = ("evaluations", "crossovers", "mutations", "rejections", "elite_copies")


@dataclass
class RunRecord:
    algo: str
    seed: int
    config: dict
    generations: list
    counters: dict
    genealogy: dict
    fittest: dict
    events: list
    timings: dict = field(default_factory=dict)  # id -> seconds, not persisted in records

    def best_fitness(self) -> float:
        return self.fittest["fitness"]

    def summary_dict(self) -> dict:
        return {
            "algo": self.algo,
            "seed": self.seed,
            "config": self.config,
            "counters": self.counters,
            "generations": self.generations,
            "genealogy": {str(k): v for k, v in self.genealogy.items()},
            "fittest": self.fittest,
        }

    def save(self, out_dir) -> dict:
        from pathlib import Path

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        base = "%s_seed%d" % (self.algo, self.seed)
        paths = {
            "events": out_dir / (base + ".events.jsonl"),
            "summary": out_dir / (base + ".summary.json"),
            "timings": out_dir / (base + ".timings.csv"),
        }
        with open(paths["events"], "w", encoding="utf-8") as fh:
            for event in self.events:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
        with open(paths["summary"], "w", encoding="utf-8") as fh:
            json.dump(self.summary_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")
        with open(paths["timings"], "w", encoding="utf-8") as fh:
            fh.write("individual_id,eval_seconds\n")
            for iid in sorted(self.timings):
                fh.write("%d,%r\n" % (iid, self.timings[iid]))
        return paths

    @classmethod
    def load(cls, out_dir, algo: str, seed: int) -> "RunRecord":
        from pathlib import Path

        out_dir = Path(out_dir)
        base = "%s_seed%d" % (algo, seed)
        with open(out_dir / (base + ".summary.json"), encoding="utf-8") as fh:
            s = json.load(fh)
        events = []
        with open(out_dir / (base + ".events.jsonl"), encoding="utf-8") as fh:
            for line in fh:
                events.append(json.loads(line))
        return cls(
            algo=s["algo"], seed=s["seed"], config=s["config"],
            generations=s["generations"], counters=s["counters"],
            genealogy={int(k): v for k, v in s["genealogy"].items()},
            fittest=s["fittest"], events=events,
        )


def replay_counters(events) -> dict:
    """Recount operator totals from an event stream."""
    counts = {k: 0 for k in COUNTER_KEYS}
    kind_to_counter = {
        "eval": "evaluations", "crossover": "crossovers", "mutation": "mutations",
        "rejection": "rejections", "elite-copy": "elite_copies",
    }
    for event in events:
        counts[kind_to_counter[event["type"]]] += 1
    return counts


# ---------------------------------------------------------------------------
# Budgeted evaluation
# ---------------------------------------------------------------------------

_CTX = {}


def _set_eval_context(train_set, val_set, cfg_dict):
    _CTX["train"] = train_set
    _CTX["val"] = val_set
    _CTX["cfg"] = EvoConfig.from_dict(cfg_dict)


def _graph_stats(graph, genotype, params) -> dict:
    return {
        "cell_count": graph.cell_count,
        "depth": analytics.depth(graph),
        "cell_to_depth_ratio": analytics.cell_to_depth_ratio(graph),
        "path_density": analytics.path_density(graph),
        "parameter_count": params,
        "seq_count": genotype.seq_count,
        "par_count": genotype.par_count,
    }


def _decode_within_budget(genotype, cfg, class_count, vocab_size, rng):
    """Reject-and-reduce loop: reinitialize at half depth until the decoded
    phenotype fits the parameter budget.  Terminates because the depth
    bound halves and the ancestor always fits."""
    rejections = []
    while True:
        graph = decode(genotype, class_count, cfg.stride, cfg.padding, cfg.embed_dim)
        params = parameter_count(graph, cfg.embed_dim, vocab_size, class_count)
        if params <= cfg.budget.max_params:
            return genotype, graph, params, rejections
        reduced = gp.reinit_reduced(rng, genotype)
        rejections.append({
            "rejected_params": params,
            "max_params": cfg.budget.max_params,
            "old_depth": genotype.depth,
            "new_depth": reduced.depth,
            "genotype": reduced.to_text(),
        })
        genotype = reduced


def _eval_task(task):
    """Worker body: decode under budget, train the surrogate, return the
    payload.  All randomness comes from the task's entropy key."""
    genotype_text, entropy = task
    train_set, val_set, cfg = _CTX["train"], _CTX["val"], _CTX["cfg"]
    rng = stream(*entropy)
    genotype = Genotype.from_text(genotype_text)
    t0 = time.perf_counter()
    genotype, graph, params, rejections = _decode_within_budget(
        genotype, cfg, train_set.class_count, train_set.vocab_size, rng)
    network = build_network(graph, train_set.vocab_size, train_set.class_count, rng,
                            cfg.budget.precision)
    tc = TrainConfig(epochs=cfg.budget.epochs, batch_size=cfg.batch_size, lr0=cfg.lr0,
                     momentum=cfg.momentum, lr_halve_every=cfg.lr_halve_every,
                     precision=cfg.budget.precision)
    history = train(network, train_set, val_set, tc, rng)
    return {
        "genotype": genotype.to_text(),
        "fitness": max(history.val_accuracy),
        "stats": _graph_stats(graph, genotype, params),
        "rejections": rejections,
        "seconds": time.perf_counter() - t0,
    }


def evaluate_with_budget(genotype: Genotype, data, cfg: EvoConfig, rng):
    """Decode under the parameter budget (reducing depth on rejection) and
    train the surrogate; fitness is the max per-epoch validation accuracy.

    Returns the evaluated Individual and the accepted (possibly reduced)
    genotype.  ``data`` is a (reduced_train, validation) pair.
    """
    train_set, val_set = data
    cfg.validate()
    _validate_budget(cfg, train_set)
    surrogate_train = subsample(train_set, cfg.budget.data_fraction,
                                int(rng.integers(2 ** 63)))
    t0 = time.perf_counter()
    genotype_out, graph, params, rejections = _decode_within_budget(
        genotype, cfg, train_set.class_count, train_set.vocab_size, rng)
    network = build_network(graph, train_set.vocab_size, train_set.class_count, rng,
                            cfg.budget.precision)
    tc = TrainConfig(epochs=cfg.budget.epochs, batch_size=cfg.batch_size, lr0=cfg.lr0,
                     momentum=cfg.momentum, lr_halve_every=cfg.lr_halve_every,
                     precision=cfg.budget.precision)
    history = train(network, surrogate_train, val_set, tc, rng)
    op = "depth-reduction" if rejections else "init"
    individual = Individual(
        id=0, genotype=genotype_out,
        lineage=Lineage(0, (), op, 0),
        fitness=max(history.val_accuracy),
        eval_seconds=time.perf_counter() - t0,
        stats=_graph_stats(graph, genotype_out, params),
    )
    return individual, genotype_out


def _validate_budget(cfg: EvoConfig, train_set: LabeledDataset):
    ancestor = decode(Genotype.from_text("END"), train_set.class_count,
                      cfg.stride, cfg.padding, cfg.embed_dim)
    needed = parameter_count(ancestor, cfg.embed_dim, train_set.vocab_size,
                             train_set.class_count)
    if cfg.budget.max_params < needed:
        raise ConfigError(
            "max_params=%d cannot admit the ancestor network (%d parameters)"
            % (cfg.budget.max_params, needed)
        )


class _Evaluator:
    """Maps evaluation tasks to payloads, serially or over a process pool.

    Results come back in task order, so scheduling never affects records.
    """

    def __init__(self, train_set, val_set, cfg, jobs):
        self.ctx_args = (train_set, val_set, cfg.to_dict())
        self.pool = None
        if jobs and jobs > 1:
            mp = multiprocessing.get_context("fork")
            self.pool = mp.Pool(jobs, initializer=_set_eval_context,
                                initargs=self.ctx_args)
        _set_eval_context(*self.ctx_args)

    def map(self, tasks):
        if self.pool is not None:
            return self.pool.map(_eval_task, tasks)
        return [_eval_task(t) for t in tasks]

    def close(self):
        if self.pool is not None:
            self.pool.close()
            self.pool.join()
            self.pool = None


# ---------------------------------------------------------------------------
# Run drivers
# ---------------------------------------------------------------------------

class _RunState:
    """Mutable per-run bookkeeping: id assignment, genealogy, counters and
    the event/ population logs, checkpointable as one JSON blob."""

    def __init__(self, algo, seed, cfg):
        self.algo = algo
        self.seed = seed
        self.cfg = cfg
        self.next_id = 0
        self.genealogy = {}
        self.counters = {k: 0 for k in COUNTER_KEYS}
        self.events = []
        self.generations = []
        self.timings = {}
        self.population = []
        self.start_gen = 0

    def new_individual(self, genotype, op, parents, gen, fitness=float("nan"),
                       stats=None) -> Individual:
        ind = Individual(self.next_id, genotype,
                         Lineage(self.next_id, tuple(parents), op, gen),
                         fitness=fitness, stats=stats)
        self.genealogy[ind.id] = {"parents": list(parents), "op": op, "gen": gen}
        self.next_id += 1
        return ind

    def event(self, kind, **payload):
        self.events.append({"type": kind, **payload})

    def checkpoint_dict(self, next_gen) -> dict:
        return {
            "algo": self.algo,
            "seed": self.seed,
            "config": self.cfg.to_dict(),
            "next_gen": next_gen,
            "next_id": self.next_id,
            "genealogy": {str(k): v for k, v in self.genealogy.items()},
            "counters": self.counters,
            "events": self.events,
            "generations": self.generations,
            "population": [
                {"id": i.id, "genotype": i.genotype.to_text(), "fitness": i.fitness,
                 "op": i.lineage.producing_op, "parents": list(i.lineage.parent_ids),
                 "gen": i.lineage.generation, "stats": i.stats}
                for i in self.population
            ],
        }

    def restore(self, d):
        self.next_id = d["next_id"]
        self.genealogy = {int(k): v for k, v in d["genealogy"].items()}
        self.counters = d["counters"]
        self.events = d["events"]
        self.generations = d["generations"]
        self.start_gen = d["next_gen"]
        self.population = [
            Individual(p["id"], Genotype.from_text(p["genotype"]),
                       Lineage(p["id"], tuple(p["parents"]), p["op"], p["gen"]),
                       fitness=p["fitness"], stats=p["stats"])
            for p in d["population"]
        ]


def _checkpoint_path(out_dir, algo, seed):
    from pathlib import Path

    return Path(out_dir) / ("%s_seed%d.checkpoint.json" % (algo, seed))


def _write_checkpoint(path, state, next_gen):
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(state.checkpoint_dict(next_gen), fh, sort_keys=True)
    os.replace(tmp, path)


def _evaluate_generation(state, evaluator, gen):
    """Evaluate every not-yet-scored individual in population order;
    depth reductions splice replacement individuals into their slots."""
    tasks = []
    positions = []
    for pos, ind in enumerate(state.population):
        if ind.evaluated:
            continue
        tasks.append((ind.genotype.to_text(), (state.seed, S_EVAL, gen, pos)))
        positions.append(pos)
    payloads = evaluator.map(tasks)
    for pos, payload in zip(positions, payloads):
        current = state.population[pos]
        for rej in payload["rejections"]:
            state.event("rejection", gen=gen, id=current.id,
                        rejected_params=rej["rejected_params"],
                        max_params=rej["max_params"], old_depth=rej["old_depth"],
                        new_depth=rej["new_depth"])
            state.counters["rejections"] += 1
            current = state.new_individual(Genotype.from_text(rej["genotype"]),
                                           "depth-reduction", [current.id], gen)
            state.population[pos] = current
        assert current.genotype.to_text() == payload["genotype"]
        current.fitness = payload["fitness"]
        current.stats = payload["stats"]
        current.eval_seconds = payload["seconds"]
        state.timings[current.id] = payload["seconds"]
        state.event("eval", gen=gen, id=current.id, fitness=current.fitness,
                    genotype=payload["genotype"], **payload["stats"])
        state.counters["evaluations"] += 1


def _generation_summary(state, gen):
    pop = state.population
    best = max(pop, key=lambda i: (i.fitness, -i.id))
    state.generations.append({
        "generation": gen,
        "best_fitness": best.fitness,
        "individuals": [i.record(gen) for i in pop],
    })


def _breed(state, cfg, gen):
    """Produce generation gen+1: elites copied unchanged, the rest bred by
    tournament selection, pairwise single-point crossover and uniform
    mutation.  All draws come from the per-generation breeding stream."""
    brng = stream(state.seed, S_BREED, gen)
    pop = state.population
    elite_count = cfg.elite_count
    elites = sorted(pop, key=lambda i: (-i.fitness, i.id))[:elite_count]
    elite_copies = []
    for e in elites:
        copy = state.new_individual(e.genotype, "elite-copy", [e.id], gen + 1,
                                    fitness=e.fitness, stats=e.stats)
        state.event("elite-copy", gen=gen + 1, id=copy.id, parent=e.id,
                    fitness=e.fitness)
        state.counters["elite_copies"] += 1
        elite_copies.append(copy)

    fitnesses = [i.fitness for i in pop]
    ids = [i.id for i in pop]
    pool_size = cfg.pop_size - elite_count
    selected = [gp.tournament_select(brng, pop, fitnesses, cfg.tournament_k, ids=ids)
                for _ in range(pool_size)]

    offspring = []
    for i in range(0, pool_size - 1, 2):
        a, b = selected[i], selected[i + 1]
        if brng.random() < cfg.crossover_p:
            g1, g2 = gp.crossover_single_point(brng, a.genotype, b.genotype,
                                               cfg.max_depth)
            c1 = state.new_individual(g1, "crossover", [a.id, b.id], gen + 1)
            c2 = state.new_individual(g2, "crossover", [a.id, b.id], gen + 1)
            state.event("crossover", gen=gen + 1, parents=[a.id, b.id],
                        children=[c1.id, c2.id])
            state.counters["crossovers"] += 1
        else:
            c1 = state.new_individual(a.genotype, "copy", [a.id], gen + 1)
            c2 = state.new_individual(b.genotype, "copy", [b.id], gen + 1)
        offspring.extend([c1, c2])
    if pool_size % 2 == 1:
        last = selected[-1]
        offspring.append(state.new_individual(last.genotype, "copy", [last.id], gen + 1))

    for slot, child in enumerate(offspring):
        if brng.random() < cfg.mutation_p:
            mutated = gp.mutate_uniform(brng, child.genotype, cfg.mutation_growth,
                                        cfg.max_depth)
            m = state.new_individual(mutated, "mutation", [child.id], gen + 1)
            state.event("mutation", gen=gen + 1, parent=child.id, child=m.id)
            state.counters["mutations"] += 1
            offspring[slot] = m

    state.population = offspring + elite_copies


def _finish_run(state, cfg, fittest, out_dir):
    record = RunRecord(
        algo=state.algo, seed=state.seed, config=cfg.to_dict(),
        generations=state.generations, counters=state.counters,
        genealogy=state.genealogy, fittest=fittest.record(cfg.generations - 1),
        events=state.events, timings=state.timings,
    )
    if out_dir is not None:
        record.save(out_dir)
        ckpt = _checkpoint_path(out_dir, state.algo, state.seed)
        if ckpt.exists():
            ckpt.unlink()
    return record


def _prepare_run(algo, cfg, data, seed, out_dir, resume):
    cfg.validate()
    train_set, val_set = data
    _validate_budget(cfg, train_set)
    if seed < 0:
        raise ConfigError("seeds must be non-negative")
    if out_dir is not None:
        from pathlib import Path

        Path(out_dir).mkdir(parents=True, exist_ok=True)
    state = _RunState(algo, seed, cfg)
    if resume and out_dir is not None:
        ckpt = _checkpoint_path(out_dir, algo, seed)
        if ckpt.exists():
            with open(ckpt, encoding="utf-8") as fh:
                saved = json.load(fh)
            if saved["config"] != cfg.to_dict():
                raise ConfigError("checkpoint config does not match the requested config")
            state.restore(saved)
    surrogate_train = subsample(train_set, cfg.budget.data_fraction,
                                derived_seed(seed, S_DATA))
    return state, surrogate_train, val_set


def run_search(cfg: EvoConfig, data, seed: int, jobs: int = 1, out_dir=None,
               resume: bool = False, stop_after=None) -> RunRecord:
    """One evolutionary run: init population at depth [1,3], evaluate every
    non-elite under the surrogate budget, then per generation copy the
    elite fraction unchanged and refill the population with tournament +
    crossover + mutation offspring.  Returns the full run record with the
    fittest individual of the final generation."""
    state, surrogate_train, val_set = _prepare_run("ec", cfg, data, seed, out_dir, resume)
    if state.start_gen == 0 and not state.population:
        init_rng = stream(seed, S_INIT)
        state.population = [
            state.new_individual(g, "init", [], 0)
            for g in gp.init_population(init_rng, cfg.pop_size, cfg.init_depth)
        ]
    evaluator = _Evaluator(surrogate_train, val_set, cfg, jobs)
    try:
        for gen in range(state.start_gen, cfg.generations):
            _evaluate_generation(state, evaluator, gen)
            _generation_summary(state, gen)
            if gen < cfg.generations - 1:
                _breed(state, cfg, gen)
            if out_dir is not None:
                _write_checkpoint(_checkpoint_path(out_dir, "ec", seed), state, gen + 1)
            if stop_after is not None and gen >= stop_after:
                return None
    finally:
        evaluator.close()
    fittest = max(state.population, key=lambda i: (i.fitness, -i.id))
    return _finish_run(state, cfg, fittest, out_dir)


def run_random(cfg: EvoConfig, data, seed: int, jobs: int = 1, out_dir=None,
               resume: bool = False, stop_after=None) -> RunRecord:
    """Operator-free baseline over the same encoding: every generation is a
    fresh half-and-half sample with depths cycling over [1, max_depth],
    evaluated under identical budgets.  The fittest individual is the
    best found across the whole run."""
    state, surrogate_train, val_set = _prepare_run("random", cfg, data, seed, out_dir, resume)
    evaluator = _Evaluator(surrogate_train, val_set, cfg, jobs)
    try:
        for gen in range(state.start_gen, cfg.generations):
            rng = stream(seed, S_INIT, gen)
            population = []
            for pos in range(cfg.pop_size):
                j = gen * cfg.pop_size + pos
                target = 1 + (j % cfg.max_depth)
                if j % 2 == 0:
                    g = gp.generate_tree(rng, target, target, "full")
                else:
                    g = gp.generate_tree(rng, 1, target, "grow")
                population.append(state.new_individual(g, "init", [], gen))
            state.population = population
            _evaluate_generation(state, evaluator, gen)
            _generation_summary(state, gen)
            if out_dir is not None:
                _write_checkpoint(_checkpoint_path(out_dir, "random", seed), state, gen + 1)
            if stop_after is not None and gen >= stop_after:
                return None
    finally:
        evaluator.close()
    best = None
    for gen_summary in state.generations:
        for rec in gen_summary["individuals"]:
            if best is None or (rec["fitness"], -rec["id"]) > (best["fitness"], -best["id"]):
                best = rec
    record = RunRecord(
        algo=state.algo, seed=state.seed, config=cfg.to_dict(),
        generations=state.generations, counters=state.counters,
        genealogy=state.genealogy, fittest=best, events=state.events,
        timings=state.timings,
    )
    if out_dir is not None:
        record.save(out_dir)
        ckpt = _checkpoint_path(out_dir, "random", seed)
        if ckpt.exists():
            ckpt.unlink()
    return record


def train_final(fittest_genotype: Genotype, full_train: LabeledDataset,
                eval_set: LabeledDataset, cfg: EvoConfig, seed: int = 0):
    """Rebuild the champion at full precision with a fresh Kaiming init,
    train on 100% of the given training set, and evaluate once on the
    held-out set.  Per-epoch accuracy in the history is measured on the
    held-out set for monitoring."""
    cfg.validate()
    rng = stream(seed, S_FINAL)
    graph = decode(fittest_genotype, full_train.class_count, cfg.stride, cfg.padding,
                   cfg.embed_dim)
    network = build_network(graph, full_train.vocab_size, full_train.class_count,
                            rng, "full")
    tc = TrainConfig(epochs=cfg.budget.epochs, batch_size=cfg.batch_size, lr0=cfg.lr0,
                     momentum=cfg.momentum, lr_halve_every=cfg.lr_halve_every,
                     precision="full")
    history = train(network, full_train, eval_set, tc, rng)
    accuracy = evaluate(network, eval_set, cfg.batch_size)
    return accuracy, history, network


@dataclass
class ComparisonTable:
    seeds: list
    random_best: list
    ec_best: list

    @property
    def differences(self):
        return [e - r for e, r in zip(self.ec_best, self.random_best)]

    def summary(self) -> dict:
        rb = np.array(self.random_best)
        eb = np.array(self.ec_best)
        return {
            "runs": len(self.seeds),
            "random_mean": float(rb.mean()), "random_std": float(rb.std()),
            "ec_mean": float(eb.mean()), "ec_std": float(eb.std()),
        }


def compare_runs(ec_records, random_records) -> ComparisonTable:
    """Pair the best fitness of each evolutionary run with the best of the
    random run that used the same seed."""
    if len(ec_records) != len(random_records):
        raise ValueError("need the same number of runs from both algorithms")
    ec = sorted(ec_records, key=lambda r: r.seed)
    rd = sorted(random_records, key=lambda r: r.seed)
    for a, b in zip(ec, rd):
        if a.seed != b.seed:
            raise ValueError("run seeds do not match pairwise: %d vs %d" % (a.seed, b.seed))
    return ComparisonTable(
        seeds=[r.seed for r in ec],
        random_best=[r.best_fitness() for r in rd],
        ec_best=[r.best_fitness() for r in ec],
    )
