import csv
import json

import pytest

from tobitbo.cli import load_config, main, UsageError


def write_cfg(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(p):
    with open(p, newline="") as fh:
        return list(csv.reader(fh))


TINY = """
[experiment]
output = out
seeds = 0
[data]
functions = branin, hartmann3
schemes = p10, p80
[study]
ensemble_size = 1
folds = 2
sh_iterations = 2
[train]
epochs = 1
[optimize]
budget = 1
cold_start = 3
inner_epochs = 5
pool_size = 16
validation_runs = 20
"""


class TestConfig:
    def test_paths_relative_to_config(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, "[experiment]\noutput = results\nseeds = 0-2, 7\n"))
        assert cfg.output == (tmp_path / "results").resolve()
        assert cfg.seeds == [0, 1, 2, 7]

    def test_unknown_key(self, tmp_path):
        with pytest.raises(UsageError, match="unknown key"):
            load_config(write_cfg(tmp_path, "[train]\nepoch = 3\n"))

    def test_unknown_section(self, tmp_path):
        with pytest.raises(UsageError, match="unknown section"):
            load_config(write_cfg(tmp_path, "[misc]\na = 1\n"))

    def test_cli_exit_code(self, tmp_path, capsys):
        assert main(["datagen", "--config", str(write_cfg(tmp_path, "[train]\nepoch = 3\n"))]) == 2
        assert "unknown key" in capsys.readouterr().err

    def test_bad_value(self, tmp_path):
        assert main(["datagen", "--config", str(write_cfg(tmp_path, "[experiment]\nseeds = a\n"))]) == 2

    def test_usage_error_exit_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["nonsense"])
        assert exc.value.code == 2


class TestDatagen:
    def test_files_and_reproducibility(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, TINY)
        assert main(["datagen", "--config", str(cfg), "--functions", "branin", "--schemes", "p80"]) == 0
        p = tmp_path / "out" / "branin_p80_seed0.jsonl"
        first = p.read_bytes()
        lines = first.decode().splitlines()
        assert len(lines) == 2000
        assert set(json.loads(lines[0])) == {"x", "y", "censored", "cutoff"}
        assert "censored fraction" in capsys.readouterr().out
        assert main(["datagen", "--config", str(cfg), "--functions", "branin", "--schemes", "p80"]) == 0
        assert p.read_bytes() == first

    def test_invalid_function_writes_nothing(self, tmp_path):
        out = tmp_path / "o"
        assert main(["datagen", "--out", str(out), "--functions", "branin, nope"]) == 2
        assert not out.exists() or not any(out.iterdir())

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["datagen", "--out", str(blocker / "sub"), "--functions", "branin"]) == 2


class TestTable1:
    def test_layout(self, tmp_path):
        cfg = write_cfg(tmp_path, TINY)
        assert main(["table1", "--config", str(cfg)]) == 0
        rows = read_csv(tmp_path / "out" / "table1.csv")
        assert rows[0] == ["function"] + [f"{p}_{s}" for p in ("p10", "p80") for s in ("I", "D", "SH", "T")]
        assert [r[0] for r in rows[1:]] == ["branin", "hartmann3"]
        assert all(v != "" for r in rows[1:] for v in r[1:])
        folds = read_csv(tmp_path / "out" / "table1_folds.csv")
        assert len(folds) == 1 + 2 * 2 * 2


class TestShtrace:
    def test_rows(self, tmp_path):
        cfg = write_cfg(tmp_path, TINY)
        assert main(["shtrace", "--config", str(cfg), "--functions", "branin", "--schemes", "p20", "-K", "1"]) == 0
        rows = read_csv(tmp_path / "out" / "shtrace_branin_p20.csv")
        assert rows[0] == ["iteration", "mean", "std"]
        assert [r[0] for r in rows[1:]] == ["1", "tobit"]


class TestOptimize:
    def test_outputs(self, tmp_path):
        cfg = write_cfg(tmp_path, TINY.replace("seeds = 0", "seeds = 0, 1"))
        assert main(["optimize", "--config", str(cfg)]) == 0
        out = tmp_path / "out"
        assert len(list(out.glob("history_*.jsonl"))) == 4
        assert len(list(out.glob("trajectory_*.csv"))) == 4
        summary = read_csv(out / "summary.csv")
        assert summary[0] == ["method", "n", "median", "q25", "q75"]
        assert len(summary) == 3
        for r in summary[1:]:
            assert float(r[3]) <= float(r[2]) <= float(r[4])

    def test_reproducible(self, tmp_path):
        cfg = write_cfg(tmp_path, TINY)
        main(["optimize", "--config", str(cfg), "--budget", "200"])
        out = tmp_path / "out"
        before = {p.name: p.read_bytes() for p in out.iterdir()}
        main(["optimize", "--config", str(cfg), "--budget", "200"])
        assert before == {p.name: p.read_bytes() for p in out.iterdir()}

    def test_unknown_method(self, tmp_path):
        assert main(["optimize", "--out", str(tmp_path), "--methods", "grid"]) == 2


class TestFitPredict:
    @pytest.fixture
    def dataset(self, tmp_path):
        main(["datagen", "--out", str(tmp_path), "--functions", "branin", "--schemes", "p40"])
        return tmp_path / "branin_p40_seed0.jsonl"

    def test_round_trip(self, tmp_path, dataset):
        model = tmp_path / "m.bin"
        assert main(["fit", "--data", str(dataset), "--strategy", "T", "--model", str(model),
                     "--members", "2", "--epochs", "1"]) == 0
        preds = tmp_path / "p.csv"
        assert main(["predict", "--model", str(model), "--data", str(dataset), "--predictions", str(preds)]) == 0
        rows = read_csv(preds)
        assert rows[0] == ["x0", "x1", "mu", "sigma2"]
        assert len(rows) == 2001
        assert all(float(v) == float(v) for r in rows[1:] for v in r)
        first = preds.read_bytes()
        main(["predict", "--model", str(model), "--data", str(dataset), "--predictions", str(preds)])
        assert preds.read_bytes() == first

    def test_dimension_mismatch(self, tmp_path, dataset):
        model = tmp_path / "m.bin"
        main(["fit", "--data", str(dataset), "--model", str(model), "--members", "1", "--epochs", "1"])
        other = tmp_path / "h3"
        main(["datagen", "--out", str(other), "--functions", "hart3", "--schemes", "none"])
        assert main(["predict", "--model", str(model), "--data", str(other / "hartmann3_none_seed0.jsonl"),
                     "--predictions", str(tmp_path / "p.csv")]) == 2

    def test_drop_all_censored(self, tmp_path, capsys):
        p = tmp_path / "c.jsonl"
        p.write_text('{"x": [0.0], "y": 1.0, "censored": true, "cutoff": 1.0}\n' * 3)
        assert main(["fit", "--data", str(p), "--strategy", "D", "--model", str(tmp_path / "m")]) == 2
        assert "no uncensored observations" in capsys.readouterr().err

    def test_malformed_line(self, tmp_path, capsys):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"x": [0.0], "y": 1.0, "censored": false, "cutoff": null}\n{oops\n')
        assert main(["fit", "--data", str(p), "--model", str(tmp_path / "m")]) == 2
        assert "line 2" in capsys.readouterr().err


class TestValidate:
    def test_point(self, tmp_path):
        assert main(["validate", "--out", str(tmp_path), "--x", "3.14159,2.275", "--runs", "50"]) == 0
        rows = read_csv(tmp_path / "validation.csv")
        assert rows[0] == ["n", "mean", "median", "q25", "q75"] and rows[1][0] == "50"

    def test_needs_one_source(self, tmp_path):
        assert main(["validate", "--out", str(tmp_path)]) == 2

    def test_outside_domain(self, tmp_path):
        assert main(["validate", "--out", str(tmp_path), "--x", "50,50"]) == 2
