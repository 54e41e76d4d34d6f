import json

import pytest

from cellevo.cli import main

SMALL_RUN = [
    "--synthetic", "--synth-train", "300", "--synth-val", "120",
    "--synth-test", "120", "--synth-length", "48",
    "--pop", "4", "--gens", "2", "--epochs", "1", "--batch", "64",
    "--data-fraction", "0.5", "--max-params", "400000", "--max-len", "48",
    "--jobs", "1",
]


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestSearch:
    def test_writes_one_record_per_seed(self, tmp_path, capsys):
        out = tmp_path / "runs"
        code, stdout, _ = run_cli(capsys, "search", *SMALL_RUN,
                                  "--seeds", "3", "--out", str(out))
        assert code == 0
        assert sorted(p.name for p in out.glob("ec_seed*.summary.json")) == [
            "ec_seed1.summary.json", "ec_seed2.summary.json", "ec_seed3.summary.json",
        ]
        assert (out / "manifest.json").exists()
        assert "best fitness" in stdout

    def test_invalid_elitism_exits_2(self, tmp_path, capsys):
        code, _, stderr = run_cli(capsys, "search", *SMALL_RUN,
                                  "--elitism", "1.5", "--out", str(tmp_path))
        assert code == 2
        assert "elitism" in stderr

    def test_missing_dataset_exits_2(self, tmp_path, capsys, monkeypatch):
        monkeypatch.delenv("CELLEVO_DATA_DIR", raising=False)
        code, _, stderr = run_cli(capsys, "search", "--pop", "4", "--gens", "1",
                                  "--out", str(tmp_path))
        assert code == 2
        assert "dataset" in stderr

    def test_manifest_rerun_is_byte_identical(self, tmp_path, capsys):
        first = tmp_path / "first"
        code, _, _ = run_cli(capsys, "search", *SMALL_RUN, "--seeds", "1",
                             "--out", str(first))
        assert code == 0
        second = tmp_path / "second"
        code, _, _ = run_cli(capsys, "search", "--manifest",
                             str(first / "manifest.json"), "--jobs", "1",
                             "--seeds", "1", "--out", str(second))
        assert code == 0
        for name in ("ec_seed1.summary.json", "ec_seed1.events.jsonl"):
            assert (first / name).read_bytes() == (second / name).read_bytes()

    def test_seed_list_parsing(self, tmp_path, capsys):
        code, _, _ = run_cli(capsys, "search", *SMALL_RUN, "--seeds", "7,9",
                             "--out", str(tmp_path))
        assert code == 0
        assert (tmp_path / "ec_seed7.summary.json").exists()
        assert (tmp_path / "ec_seed9.summary.json").exists()


class TestRandom:
    def test_runs_and_reports(self, tmp_path, capsys):
        code, stdout, _ = run_cli(capsys, "random", *SMALL_RUN, "--seeds", "1",
                                  "--out", str(tmp_path))
        assert code == 0
        assert (tmp_path / "random_seed1.summary.json").exists()
        record = json.loads((tmp_path / "random_seed1.summary.json").read_text())
        assert record["counters"]["evaluations"] == 8


class TestCsvData:
    def test_search_on_csv_directory(self, tmp_path, capsys, monkeypatch):
        import csv as _csv
        import numpy as np

        from cellevo.data import synth_dataset

        data_dir = tmp_path / "data"
        data_dir.mkdir()
        synth = synth_dataset(np.random.default_rng(0), 2, 260, 32)
        rows = [(label + 1, text[:12], text[12:]) for label, text in synth.samples]
        for name, chunk in (("train.csv", rows[:200]), ("test.csv", rows[200:])):
            with open(data_dir / name, "w", newline="") as fh:
                _csv.writer(fh, quoting=_csv.QUOTE_ALL).writerows(chunk)
        monkeypatch.setenv("CELLEVO_DATA_DIR", str(data_dir))
        out = tmp_path / "runs"
        code, stdout, _ = run_cli(
            capsys, "search", "--pop", "4", "--gens", "1", "--epochs", "1",
            "--batch", "64", "--max-len", "32", "--jobs", "1",
            "--seeds", "1", "--out", str(out))
        assert code == 0
        assert "histogram" in stdout
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["data"]["kind"] == "csv"
        assert manifest["data"]["train_rows"] == 200
        assert len(manifest["data"]["train_sha256"]) == 64


class TestDecode:
    def test_par_example(self, capsys, tmp_path):
        dot = tmp_path / "p.dot"
        code, stdout, _ = run_cli(capsys, "decode", "(PAR END END)",
                                  "--dot", str(dot))
        assert code == 0
        assert "cells=2" in stdout
        assert "depth=1" in stdout
        assert "kernels=[3,5]" in stdout
        assert dot.read_text().startswith("digraph")

    def test_genotype_from_file(self, capsys, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text("(SEQ END END)\n", encoding="utf-8")
        code, stdout, _ = run_cli(capsys, "decode", str(path))
        assert code == 0
        assert "cells=2" in stdout
        assert "digraph" in stdout

    def test_malformed_genotype_exits_1(self, capsys):
        code, _, stderr = run_cli(capsys, "decode", "(SEQ END)")
        assert code == 1
        assert stderr


@pytest.fixture(scope="module")
def run_dirs(tmp_path_factory):
    from cellevo.evolution import RunRecord

    def record(algo, seed, fitness):
        ind = {"id": 0, "generation": 0, "fitness": fitness, "genotype": "END",
               "op": "init", "parents": [], "cell_count": 1, "depth": 1,
               "cell_to_depth_ratio": 1.0, "path_density": 1,
               "parameter_count": 29_764, "seq_count": 0, "par_count": 0}
        return RunRecord(
            algo=algo, seed=seed, config={},
            generations=[{"generation": 0, "best_fitness": fitness,
                          "individuals": [ind]}],
            counters={"evaluations": 1, "crossovers": 0, "mutations": 0,
                      "rejections": 0, "elite_copies": 0},
            genealogy={0: {"parents": [], "op": "init", "gen": 0}},
            fittest=ind, events=[{"type": "eval", "gen": 0, "id": 0,
                                  "fitness": fitness, "genotype": "END"}],
        )

    base = tmp_path_factory.mktemp("cmp")
    ec, rd = base / "ec", base / "rd"
    for i, seed in enumerate(range(1, 7)):
        record("ec", seed, 0.60 + 0.02 * i).save(ec)
        record("random", seed, 0.50 + 0.01 * i).save(rd)
    return ec, rd


class TestCompare:
    def test_prints_table_and_wilcoxon(self, run_dirs, capsys):
        ec, rd = run_dirs
        code, stdout, _ = run_cli(capsys, "compare", str(ec), str(rd))
        assert code == 0
        assert "wilcoxon signed-rank" in stdout
        assert "means:" in stdout
        assert "reject" in stdout

    def test_equal_fitness_error_path(self, run_dirs, capsys):
        # zero differences everywhere: the signed-rank test cannot run and
        # the command reports it cleanly
        ec, _ = run_dirs
        import json as _json

        mirrored = ec.parent / "mirrored"
        mirrored.mkdir(exist_ok=True)
        for path in ec.glob("ec_seed*"):
            target = mirrored / path.name.replace("ec_seed", "random_seed")
            if path.suffix == ".json" and "summary" in path.name:
                data = _json.loads(path.read_text())
                data["algo"] = "random"
                target.write_text(_json.dumps(data))
            else:
                target.write_bytes(path.read_bytes())
        code, _, stderr = run_cli(capsys, "compare", str(ec), str(mirrored))
        assert code == 1
        assert stderr.startswith("error:")
        assert "nonzero differences" in stderr


class TestTrainFinal:
    def test_retrains_champion(self, tmp_path, capsys):
        out = tmp_path / "runs"
        assert main(["search", *SMALL_RUN, "--seeds", "1", "--out", str(out)]) == 0
        capsys.readouterr()
        hist = tmp_path / "hist.csv"
        acts = tmp_path / "acts"
        code, stdout, _ = run_cli(
            capsys, "train-final", str(out / "ec_seed1.summary.json"),
            "--synthetic", "--synth-train", "300", "--synth-val", "120",
            "--synth-test", "120", "--synth-length", "48",
            "--epochs", "2", "--history", str(hist), "--activations", str(acts))
        assert code == 0
        assert "test accuracy" in stdout
        assert hist.read_text().startswith("epoch,train_loss,val_accuracy,lr,seconds")
        assert list(acts.glob("cell_*.csv"))


class TestGradcheckCommand:
    def test_passes_and_exits_zero(self, capsys):
        code, stdout, _ = run_cli(capsys, "gradcheck", "--cases", "3")
        assert code == 0
        assert stdout.count("ok") == 8


class TestAnalyze:
    def test_exports_csvs_and_lineage(self, tmp_path, capsys):
        runs = tmp_path / "runs"
        assert main(["search", *SMALL_RUN, "--seeds", "1", "--out", str(runs)]) == 0
        capsys.readouterr()
        summary = json.loads((runs / "ec_seed1.summary.json").read_text())
        champion = summary["fittest"]["id"]
        out = tmp_path / "analysis"
        code, stdout, _ = run_cli(capsys, "analyze", str(runs), "--out", str(out),
                                  "--lineage-of", str(champion))
        assert code == 0
        for name in ("phenotypes.csv", "generations.csv", "op_histogram.csv"):
            assert (out / name).exists()
        assert (out / ("lineage_%d.dot" % champion)).exists()


def test_help_documents_parameters(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["search", "--help"])
    assert exc.value.code == 0
    stdout = " ".join(capsys.readouterr().out.split())
    for flag in ("--pop", "--gens", "--elitism", "--crossover-p", "--mutation-p",
                 "--tournament-k", "--max-depth", "--epochs", "--batch", "--lr",
                 "--data-fraction", "--max-params", "--stride", "--max-len",
                 "--seeds", "--jobs", "--synthetic", "--precision"):
        assert flag in stdout
    for default in ("default 30", "default 0.1", "default 0.5", "default 3",
                    "default 17", "default 128", "default 0.01"):
        assert default in stdout
