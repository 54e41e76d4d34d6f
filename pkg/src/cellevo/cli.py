"""Command-line entry point.

Subcommands: search, random, compare, decode, train-final, gradcheck,
analyze.  Exit codes: 0 ok, 1 runtime failure, 2 configuration error.
"""

import os

# Pin BLAS threading before numpy loads so results do not depend on core
# count or on how many worker processes share the machine.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from cellevo import analytics, gradcheck
from cellevo.data import (
    Alphabet,
    encode_samples,
    file_sha256,
    load_csv,
    split_train_validation,
    synth_dataset,
)
from cellevo.decoder import decode, parameter_count, to_dot
from cellevo.errors import ConfigError
from cellevo.evolution import (
    EvoConfig,
    RunRecord,
    compare_runs,
    run_random,
    run_search,
    train_final,
)
from cellevo.gp import Genotype
from cellevo.nn import capture_activations, write_activations

DATA_DIR_ENV = "CELLEVO_DATA_DIR"

# (flag, config key, type, help); None defaults defer to EvoConfig/--config
SEARCH_FLAGS = [
    ("--pop", "pop_size", int, "population size (default 30)"),
    ("--gens", "generations", int, "number of generations (default 30)"),
    ("--elitism", "elitism", float, "elite fraction copied unchanged (default 0.1)"),
    ("--crossover-p", "crossover_p", float, "per-pair crossover probability (default 0.5)"),
    ("--mutation-p", "mutation_p", float, "per-offspring mutation probability (default 0.1)"),
    ("--tournament-k", "tournament_k", int, "tournament size (default 3)"),
    ("--max-depth", "max_depth", int, "genotype depth limit (default 17)"),
    ("--epochs", "epochs", int, "surrogate training epochs (default 10)"),
    ("--batch", "batch_size", int, "mini-batch size (default 128)"),
    ("--lr", "lr0", float, "initial learning rate, halved every 3 epochs (default 0.01)"),
    ("--data-fraction", "data_fraction", float, "training data usage (default 0.25)"),
    ("--max-params", "max_params", int, "parameter budget per phenotype (default 20000000)"),
    ("--stride", "stride", int, "cell stride (default 2)"),
    ("--max-len", "max_len", int, "max sentence length in characters (default 256)"),
]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cellevo",
        description="Evolve character-level CNN architectures over SEQ/PAR cell divisions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, runner, blurb in (
        ("search", cmd_search, "evolutionary architecture search"),
        ("random", cmd_random, "random-sampling baseline over the same encoding"),
    ):
        p = sub.add_parser(name, help=blurb)
        p.add_argument("--config", help="flat key=value config file; flags override it")
        p.add_argument("--manifest", help="re-run an existing run manifest verbatim")
        for flag, _key, typ, help_text in SEARCH_FLAGS:
            p.add_argument(flag, type=typ, default=None, help=help_text)
        p.add_argument("--precision", choices=["full", "reduced"], default=None,
                       help="surrogate precision mode (default reduced)")
        p.add_argument("--seeds", default="1",
                       help="run seeds: a count N (seeds 1..N) or a comma list; "
                            "the full experiment uses 30 unique seeds")
        p.add_argument("--jobs", type=int, default=os.cpu_count(),
                       help="parallel fitness evaluations (default: all cores)")
        p.add_argument("--out", default="runs", help="output directory")
        p.add_argument("--resume", action="store_true",
                       help="continue interrupted runs from their checkpoints")
        _add_data_flags(p)
        p.set_defaults(func=runner)

    p = sub.add_parser("decode", help="decode a genotype and report its phenotype")
    p.add_argument("genotype", help="s-expression text like '(SEQ END END)' or a file path")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--alphabet-size", type=int, default=71,
                   help="embedding rows incl. the pad row (default 71)")
    p.add_argument("--dot", help="write DOT here (default: print to stdout)")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("compare", help="paired Wilcoxon test of search vs random runs")
    p.add_argument("ec_dir")
    p.add_argument("random_dir")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("train-final", help="retrain a run's champion at full precision")
    p.add_argument("record", help="summary.json of the run whose champion to retrain")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--history", default="final_history.csv", help="training history CSV path")
    p.add_argument("--activations", default=None,
                   help="directory for per-cell activation CSVs of one held-out sample")
    p.add_argument("--final-seed", type=int, default=0)
    _add_data_flags(p)
    p.set_defaults(func=cmd_train_final)

    p = sub.add_parser("gradcheck", help="finite-difference checks for every op")
    p.add_argument("--cases", type=int, default=20, help="random shapes per op")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("analyze", help="export metric CSVs from run records")
    p.add_argument("record_dirs", nargs="+")
    p.add_argument("--out", default="analysis")
    p.add_argument("--lineage-of", type=int, default=None,
                   help="also export this individual's lineage as DOT")
    p.set_defaults(func=cmd_analyze)

    return parser


def _add_data_flags(p):
    p.add_argument("--data-dir", default=None,
                   help="directory with train.csv/test.csv ($%s)" % DATA_DIR_ENV)
    p.add_argument("--synthetic", action="store_true",
                   help="use the planted-marker synthetic task instead of CSV data")
    p.add_argument("--synth-classes", type=int, default=4)
    p.add_argument("--synth-train", type=int, default=2000)
    p.add_argument("--synth-val", type=int, default=400)
    p.add_argument("--synth-test", type=int, default=400)
    p.add_argument("--synth-length", type=int, default=64)
    p.add_argument("--data-seed", type=int, default=20240601,
                   help="seed for splits and synthetic generation")
    p.add_argument("--alphabet-file", default=None, help="override the 70-symbol alphabet")


def _build_config(args) -> EvoConfig:
    cfg = EvoConfig.from_file(args.config) if args.config else EvoConfig()
    overrides = {}
    for flag, key, _typ, _help in SEARCH_FLAGS:
        value = getattr(args, flag.lstrip("-").replace("-", "_"))
        if value is not None:
            overrides[key] = value
    if args.precision is not None:
        overrides["precision"] = args.precision
    if overrides:
        d = cfg.to_dict()
        d.update(overrides)
        cfg = EvoConfig.from_dict(d)
    cfg.validate()
    return cfg


def _parse_seeds(text) -> list:
    if isinstance(text, list):
        return [int(s) for s in text]
    text = str(text)
    if "," in text:
        return [int(s) for s in text.split(",")]
    count = int(text)
    if count < 1:
        raise ConfigError("--seeds must name at least one seed")
    return list(range(1, count + 1))


def _load_data(args, max_len):
    """Build (train, validation, test) LabeledDatasets plus a manifest
    descriptor of where they came from."""
    alphabet = Alphabet.from_file(args.alphabet_file) if args.alphabet_file else Alphabet()
    if args.synthetic:
        rng = np.random.default_rng(args.data_seed)
        classes = args.synth_classes
        total = args.synth_train + args.synth_val + args.synth_test
        synth = synth_dataset(rng, classes, total, args.synth_length)
        full = encode_samples(synth.samples, alphabet, classes, max_len)
        n1 = args.synth_train
        n2 = n1 + args.synth_val
        train_set = full.subset(np.arange(0, n1))
        val_set = full.subset(np.arange(n1, n2))
        test_set = full.subset(np.arange(n2, total))
        descriptor = {
            "kind": "synthetic",
            "classes": classes,
            "train": args.synth_train,
            "val": args.synth_val,
            "test": args.synth_test,
            "length": args.synth_length,
            "data_seed": args.data_seed,
            "alphabet_file": args.alphabet_file,
        }
        return train_set, val_set, test_set, descriptor
    data_dir = args.data_dir or os.environ.get(DATA_DIR_ENV)
    if not data_dir:
        raise ConfigError("no dataset: pass --synthetic, --data-dir or set $%s" % DATA_DIR_ENV)
    train_csv = Path(data_dir) / "train.csv"
    test_csv = Path(data_dir) / "test.csv"
    for path in (train_csv, test_csv):
        if not path.exists():
            raise ConfigError("missing dataset file: %s" % path)
    train_load = load_csv(train_csv)
    test_load = load_csv(test_csv, expected_classes=train_load.class_count)
    full_train = encode_samples(train_load.samples, alphabet, train_load.class_count, max_len)
    test_set = encode_samples(test_load.samples, alphabet, train_load.class_count, max_len)
    reduced, validation = split_train_validation(
        full_train, len(full_train), len(test_set), args.data_seed)
    histogram = " ".join("%d:%d" % (c + 1, train_load.class_histogram[c])
                         for c in sorted(train_load.class_histogram))
    print("loaded %d train / %d test rows over %d classes (histogram %s; "
          "validation split %d/%d)"
          % (len(full_train), len(test_set), train_load.class_count, histogram,
             len(reduced), len(validation)))
    descriptor = {
        "kind": "csv",
        "train_csv": str(train_csv),
        "train_sha256": file_sha256(train_csv),
        "train_rows": len(full_train),
        "test_csv": str(test_csv),
        "test_sha256": file_sha256(test_csv),
        "test_rows": len(test_set),
        "class_count": train_load.class_count,
        "data_seed": args.data_seed,
        "alphabet_file": args.alphabet_file,
    }
    return reduced, validation, test_set, descriptor


def _apply_manifest(args):
    with open(args.manifest, encoding="utf-8") as fh:
        manifest = json.load(fh)
    cfg = EvoConfig.from_dict(manifest["config"])
    seeds = manifest["seeds"]
    data = manifest["data"]
    if data["kind"] == "synthetic":
        args.synthetic = True
        args.synth_classes = data["classes"]
        args.synth_train = data["train"]
        args.synth_val = data["val"]
        args.synth_test = data["test"]
        args.synth_length = data["length"]
    else:
        args.synthetic = False
        args.data_dir = str(Path(data["train_csv"]).parent)
    args.data_seed = data["data_seed"]
    args.alphabet_file = data.get("alphabet_file")
    return cfg, seeds


def _write_manifest(out_dir, cfg, seeds, descriptor):
    manifest = {
        "config": cfg.to_dict(),
        "seeds": seeds,
        "data": descriptor,
        "out_dir": str(out_dir),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    path = Path(out_dir) / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def _run_many(args, runner, algo):
    if args.manifest:
        cfg, seeds = _apply_manifest(args)
    else:
        cfg = _build_config(args)
        seeds = _parse_seeds(args.seeds)
    if len(set(seeds)) != len(seeds):
        raise ConfigError("run seeds must be unique")
    train_set, val_set, _test, descriptor = _load_data(args, cfg.max_len)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(out_dir, cfg, seeds, descriptor)
    print("%s: %d seed(s), pop %d, %d generations, jobs=%d"
          % (algo, len(seeds), cfg.pop_size, cfg.generations, args.jobs))
    t0 = time.perf_counter()
    for seed in seeds:
        record = runner(cfg, (train_set, val_set), seed, jobs=args.jobs,
                        out_dir=out_dir, resume=args.resume)
        best = record.fittest
        print("seed %-4d best fitness %.4f  (%d cells, depth %d, %d params)  "
              "evals=%d rejections=%d"
              % (seed, best["fitness"], best["cell_count"], best["depth"],
                 best["parameter_count"], record.counters["evaluations"],
                 record.counters["rejections"]))
    print("total %.1fs, records in %s" % (time.perf_counter() - t0, out_dir))
    return 0


def cmd_search(args):
    return _run_many(args, run_search, "evolutionary search")


def cmd_random(args):
    return _run_many(args, run_random, "random search")


def _read_genotype(text_or_path) -> Genotype:
    if Path(text_or_path).exists():
        text_or_path = Path(text_or_path).read_text(encoding="utf-8").strip()
    return Genotype.from_text(text_or_path.strip())


def cmd_decode(args):
    genotype = _read_genotype(args.genotype)
    graph = decode(genotype, args.classes, stride=args.stride)
    params = parameter_count(graph, graph.embed_dim, args.alphabet_size, args.classes)
    kernels = ",".join(str(c.kernel) for c in graph.cells)
    print("cells=%d depth=%d path_density=%d params=%d kernels=[%s]"
          % (graph.cell_count, analytics.depth(graph), analytics.path_density(graph),
             params, kernels))
    dot = to_dot(graph)
    if args.dot:
        Path(args.dot).write_text(dot, encoding="utf-8")
        print("wrote %s" % args.dot)
    else:
        sys.stdout.write(dot)
    return 0


def _load_records(record_dir) -> list:
    record_dir = Path(record_dir)
    records = []
    for summary in sorted(record_dir.glob("*_seed*.summary.json")):
        name = summary.name.split(".summary.json")[0]
        algo, seed = name.rsplit("_seed", 1)
        records.append(RunRecord.load(record_dir, algo, int(seed)))
    if not records:
        raise ValueError("no run records found in %s" % record_dir)
    return records


def cmd_compare(args):
    ec = [r for r in _load_records(args.ec_dir) if r.algo == "ec"]
    rd = [r for r in _load_records(args.random_dir) if r.algo == "random"]
    if not ec or not rd:
        raise ValueError("compare needs 'ec' records in the first directory and "
                         "'random' records in the second")
    table = compare_runs(ec, rd)
    print("seed  random_best  ec_best  difference")
    for seed, r, e in zip(table.seeds, table.random_best, table.ec_best):
        print("%-5d %11.4f %8.4f %+11.4f" % (seed, r, e, e - r))
    s = table.summary()
    print("means: random %.4f±%.4f   ec %.4f±%.4f"
          % (s["random_mean"], s["random_std"], s["ec_mean"], s["ec_std"]))
    result = analytics.wilcoxon_signed_rank(table.ec_best, table.random_best,
                                            alpha=args.alpha)
    print("wilcoxon signed-rank (%s): W=%.1f p=%.6g alpha=%g n=%d -> %s"
          % (result.method, result.statistic, result.p_value, result.alpha,
             result.n_effective,
             "reject (distributions differ)" if result.reject else "no rejection"))
    return 0


def cmd_train_final(args):
    with open(args.record, encoding="utf-8") as fh:
        summary = json.load(fh)
    cfg = EvoConfig.from_dict(summary["config"])
    if args.epochs is not None:
        d = cfg.to_dict()
        d["epochs"] = args.epochs
        cfg = EvoConfig.from_dict(d)
    train_set, val_set, test_set, _descriptor = _load_data(args, cfg.max_len)
    genotype = Genotype.from_text(summary["fittest"]["genotype"])
    print("retraining champion %s at full precision for %d epochs"
          % (summary["fittest"]["genotype"], cfg.budget.epochs))
    accuracy, history, network = train_final(genotype, train_set, test_set, cfg,
                                             seed=args.final_seed)
    history.to_csv(args.history)
    print("test accuracy %.4f  (history in %s)" % (accuracy, args.history))
    if args.activations:
        capture = capture_activations(network, val_set.X[0])
        paths = write_activations(capture, args.activations)
        print("wrote %d activation dumps to %s" % (len(paths), args.activations))
    return 0


def cmd_gradcheck(args):
    results = gradcheck.run_suite(args.cases, args.seed)
    failed = False
    for name in sorted(results):
        err = results[name]
        ok = err < gradcheck.TOLERANCE
        failed |= not ok
        print("%-22s max rel err %.3e  %s" % (name, err, "ok" if ok else "FAIL"))
    return 1 if failed else 0


def cmd_analyze(args):
    records = []
    for record_dir in args.record_dirs:
        records.extend(_load_records(record_dir))
    out_dir = Path(args.out)
    paths = analytics.export_metrics(records, out_dir)
    for name in sorted(paths):
        print("wrote %s" % paths[name])
    if args.lineage_of is not None:
        for record in records:
            if args.lineage_of in record.genealogy:
                tree = analytics.genealogy_of(record, args.lineage_of)
                path = out_dir / ("lineage_%d.dot" % args.lineage_of)
                path.write_text(analytics.lineage_to_dot(tree), encoding="utf-8")
                print("wrote %s" % path)
                break
        else:
            raise ValueError("individual %d not found in any record" % args.lineage_of)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
