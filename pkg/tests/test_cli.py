import json

import numpy as np
import pytest
import yaml

from stfit.cli import (
    ConfigError,
    DEFAULT_RATIO_GRID,
    default_config,
    dump_config,
    experiment_id,
    main,
    validate_config,
)
from stfit.data import load_dataset


TINY_TRAIN = {
    "max_epochs": 2,
    "patience": 2,
    "hidden_dim": 8,
    "batch_size": 8,
    "node_ratio": 0.34,
    "k_pairs": 3,
}
TINY_DATASET = {"kind": "synthetic", "n_nodes": 12, "n_steps": 260, "seed": 0}


def write_config(tmp_path, train=None, dataset=None, name="config.yaml"):
    config = {
        "dataset": {**TINY_DATASET, **(dataset or {})},
        "train": {**TINY_TRAIN, **(train or {})},
    }
    path = tmp_path / name
    path.write_text(yaml.safe_dump(config))
    return path


def run_cli(*argv):
    return main(list(argv))


class TestConfig:
    def test_roundtrip_identity(self):
        config = validate_config({"train": {"lr": 0.01}})
        again = validate_config(yaml.safe_load(dump_config(config)))
        assert config == again

    def test_unknown_train_key_named(self):
        with pytest.raises(ConfigError, match="train.learning_rat"):
            validate_config({"train": {"learning_rat": 0.1}})

    def test_unknown_section_named(self):
        with pytest.raises(ConfigError, match="trian"):
            validate_config({"trian": {}})

    def test_defaults_fill_in(self):
        config = validate_config({})
        assert config["train"]["lr"] == 0.02
        assert config["train"]["eps"] == 0.9
        assert config["evaluate"]["horizons"] == [3, 6, 12]

    def test_bad_value_is_config_error(self):
        with pytest.raises(ConfigError, match="lam"):
            validate_config({"train": {"lam": 0.9}})

    def test_experiment_id_stable(self):
        config = default_config()
        assert experiment_id(config) == experiment_id(json.loads(json.dumps(config)))

    def test_directory_kind_needs_path(self):
        with pytest.raises(ConfigError, match="path"):
            validate_config({"dataset": {"kind": "directory"}})


class TestConvert:
    def _write_source(self, tmp_path, with_csv=True):
        source = tmp_path / "source"
        source.mkdir()
        rng = np.random.default_rng(0)
        data = rng.normal(100.0, 10.0, size=(60, 4, 3)).astype(np.float32)
        np.savez(source / "sample.npz", data=data)
        if with_csv:
            (source / "distance.csv").write_text(
                "from,to,cost\n0,1,2.5\n1,2,1.0\n3,0,4.0\n"
            )
        return source

    def test_convert_and_load(self, tmp_path, capsys):
        source = self._write_source(tmp_path)
        dest = tmp_path / "converted"
        assert run_cli("convert", str(source), str(dest)) == 0
        out = capsys.readouterr().out
        assert "N=4 T=60 C=1" in out
        graph = load_dataset(dest)
        assert graph.features.shape == (60, 4, 1)
        assert graph.adjacency[0, 1] == graph.adjacency[1, 0] == 2.5
        assert graph.adjacency[0, 3] == 4.0

    def test_convert_twice_bit_identical(self, tmp_path):
        source = self._write_source(tmp_path)
        dest_a, dest_b = tmp_path / "a", tmp_path / "b"
        run_cli("convert", str(source), str(dest_a))
        run_cli("convert", str(source), str(dest_b))
        assert (dest_a / "data.bin").read_bytes() == (dest_b / "data.bin").read_bytes()

    def test_missing_distance_csv_warns_and_omits_adjacency(self, tmp_path, capsys):
        source = self._write_source(tmp_path, with_csv=False)
        dest = tmp_path / "noadj"
        assert run_cli("convert", str(source), str(dest)) == 0
        assert "warning" in capsys.readouterr().out
        graph = load_dataset(dest)
        assert graph.adjacency is None

    def test_missing_source_is_validation_error(self, tmp_path):
        assert run_cli("convert", str(tmp_path / "nope"), str(tmp_path / "out")) == 1


class TestTrain:
    def test_train_writes_store_layout(self, tmp_path, capsys):
        config = write_config(tmp_path)
        store = tmp_path / "store"
        assert run_cli("train", "--config", str(config), "--out", str(store)) == 0
        run_dirs = list(store.iterdir())
        assert len(run_dirs) == 1
        run_dir = run_dirs[0]
        for name in ("config.yaml", "checkpoint.pt", "metrics.jsonl", "record.json", "train.log"):
            assert (run_dir / name).is_file(), name
        records = [json.loads(l) for l in (run_dir / "metrics.jsonl").read_text().splitlines()]
        assert len(records) == 2
        assert "wall_seconds" not in records[0]  # deterministic mode strips timing
        assert records[0]["loss_kl"] >= 0
        record = json.loads((run_dir / "record.json").read_text())
        assert record["id"] == run_dir.name
        assert record["epochs"] == 2

    def test_unknown_config_key_exits_one(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump({"train": {"learning_rat": 0.1}}))
        assert run_cli("train", "--config", str(path)) == 1
        assert "learning_rat" in capsys.readouterr().err

    def test_ratio_one_is_accepted(self, tmp_path):
        config = write_config(tmp_path, train={"node_ratio": 1.0, "max_epochs": 1,
                                               "patience": 1, "k_pairs": 2})
        store = tmp_path / "store"
        assert run_cli("train", "--config", str(config), "--out", str(store)) == 0

    def test_seed_override_changes_id(self, tmp_path):
        config = write_config(tmp_path)
        store = tmp_path / "store"
        run_cli("train", "--config", str(config), "--out", str(store), "--seed", "5")
        run_cli("train", "--config", str(config), "--out", str(store), "--seed", "6")
        assert len(list(store.iterdir())) == 2

    def test_stfit_home_env_is_store_root(self, tmp_path, monkeypatch):
        config = write_config(tmp_path)
        home = tmp_path / "home"
        monkeypatch.setenv("STFIT_HOME", str(home))
        monkeypatch.chdir(tmp_path)
        assert run_cli("train", "--config", str(config)) == 0
        assert home.is_dir() and list(home.iterdir())


class TestDeterminism:
    def test_two_runs_bit_identical_metrics(self, tmp_path):
        config = write_config(tmp_path)
        store_a, store_b = tmp_path / "a", tmp_path / "b"
        assert run_cli("train", "--config", str(config), "--out", str(store_a)) == 0
        assert run_cli("train", "--config", str(config), "--out", str(store_b)) == 0
        metrics_a = next(store_a.iterdir()) / "metrics.jsonl"
        metrics_b = next(store_b.iterdir()) / "metrics.jsonl"
        assert metrics_a.read_bytes() == metrics_b.read_bytes()


class TestEvaluate:
    @pytest.fixture()
    def trained_store(self, tmp_path):
        config = write_config(tmp_path)
        store = tmp_path / "store"
        run_cli("train", "--config", str(config), "--out", str(store))
        run_id = next(store.iterdir()).name
        return store, run_id

    def test_evaluate_record_writes_reports(self, trained_store, capsys):
        store, run_id = trained_store
        assert run_cli("evaluate", "--record", run_id, "--out", str(store)) == 0
        run_dir = store / run_id
        assert (run_dir / "report.json").is_file()
        assert (run_dir / "report.csv").is_file()
        report = json.loads((run_dir / "report.json").read_text())
        horizons = report["full"]["horizons"]
        assert set(horizons) == {"3", "6", "12", "overall"}

    def test_evaluate_twice_identical_reports(self, trained_store):
        store, run_id = trained_store
        run_cli("evaluate", "--record", run_id, "--out", str(store))
        first = (store / run_id / "report.json").read_bytes()
        run_cli("evaluate", "--record", run_id, "--out", str(store))
        assert (store / run_id / "report.json").read_bytes() == first

    def test_node_scope_changes_counts(self, trained_store):
        store, run_id = trained_store
        run_cli("evaluate", "--record", run_id, "--out", str(store))
        all_sc = json.loads((store / run_id / "report.json").read_text())
        run_cli("evaluate", "--record", run_id, "--node-scope", "all", "--out", str(store))
        test_sc = json.loads((store / run_id / "report.json").read_text())
        assert (
            all_sc["full"]["horizons"]["overall"]["count"]
            != test_sc["full"]["horizons"]["overall"]["count"]
        )

    def test_export_topology_flag(self, trained_store):
        store, run_id = trained_store
        assert run_cli("evaluate", "--record", run_id, "--out", str(store),
                       "--export-topology") == 0
        assert (store / run_id / "topology.csv").is_file()

    def test_missing_record_exits_one(self, trained_store):
        store, _ = trained_store
        assert run_cli("evaluate", "--record", "doesnotexist", "--out", str(store)) == 1

    def test_checkpoint_path_mode(self, trained_store):
        store, run_id = trained_store
        ckpt = store / run_id / "checkpoint.pt"
        assert run_cli("evaluate", "--checkpoint", str(ckpt), "--out", str(store)) == 0


class TestAblate:
    def test_two_variant_ablation(self, tmp_path):
        config = write_config(
            tmp_path, train={"max_epochs": 1, "patience": 1}
        )
        store = tmp_path / "store"
        assert run_cli(
            "ablate", "--config", str(config), "--out", str(store),
            "--variants", "full", "w/o aug",
        ) == 0
        run_dir = next(store.iterdir())
        summary = (run_dir / "summary.csv").read_text().strip().splitlines()
        assert summary[0] == "variant,mae,rmse,mape_pct"
        assert len(summary) == 3
        summaries = json.loads((run_dir / "summaries.json").read_text())
        by_variant = {s["variant"]: s for s in summaries}
        assert by_variant["w/o aug"]["phase1_steps"] == 0
        assert by_variant["full"]["phase1_steps"] > 0

    def test_unknown_variant_exits_one(self, tmp_path, capsys):
        config = write_config(tmp_path)
        assert run_cli("ablate", "--config", str(config), "--variants", "nope") == 1
        assert "w/o aug" in capsys.readouterr().err


class TestSweep:
    def test_lambda_sweep_csv_and_plots(self, tmp_path):
        config = write_config(tmp_path, train={"max_epochs": 1, "patience": 1})
        store = tmp_path / "store"
        assert run_cli(
            "sweep", "--config", str(config), "--out", str(store),
            "--axis", "lambda", "--values", "0.25", "0.5", "--seeds", "0", "1",
        ) == 0
        run_dir = next(store.iterdir())
        lines = (run_dir / "sweep.csv").read_text().strip().splitlines()
        assert lines[0] == "axis,value,seed,mae,rmse,mape_pct"
        assert len(lines) == 1 + 2 * 2  # values x seeds
        for metric in ("mae", "rmse", "mape_pct"):
            assert (run_dir / "plots" / f"sweep_lambda_{metric}.png").is_file()

    def test_default_ratio_grid_has_six_points(self):
        assert len(DEFAULT_RATIO_GRID) == 6
        assert DEFAULT_RATIO_GRID == [0.05, 0.10, 0.25, 0.50, 0.75, 1.00]

    def test_epsilon_grid_endpoints_accepted(self, tmp_path):
        config = write_config(tmp_path, train={"max_epochs": 1, "patience": 1})
        store = tmp_path / "store"
        assert run_cli(
            "sweep", "--config", str(config), "--out", str(store),
            "--axis", "epsilon", "--values", "0.0", "1.0", "--seeds", "0",
        ) == 0

    def test_bad_axis_exits_one(self, tmp_path):
        config = write_config(tmp_path)
        assert run_cli("sweep", "--config", str(config), "--axis", "gamma") == 1


class TestPlot:
    def test_loss_plot_and_reproducibility(self, tmp_path):
        config = write_config(tmp_path)
        store = tmp_path / "store"
        run_cli("train", "--config", str(config), "--out", str(store))
        run_id = next(store.iterdir()).name
        assert run_cli("plot", "--records", run_id, "--kind", "losses",
                       "--out", str(store)) == 0
        path = store / run_id / "plots" / "losses.png"
        first = path.read_bytes()
        assert run_cli("plot", "--records", run_id, "--kind", "losses",
                       "--out", str(store)) == 0
        assert path.read_bytes() == first

    def test_metrics_plot_after_evaluate(self, tmp_path):
        config = write_config(tmp_path)
        store = tmp_path / "store"
        run_cli("train", "--config", str(config), "--out", str(store))
        run_id = next(store.iterdir()).name
        run_cli("evaluate", "--record", run_id, "--out", str(store))
        assert run_cli("plot", "--records", run_id, "--kind", "metrics",
                       "--out", str(store)) == 0
        assert (store / run_id / "plots" / "metrics.png").is_file()

    def test_missing_record_exits_one(self, tmp_path):
        assert run_cli("plot", "--records", "ghost", "--kind", "losses",
                       "--out", str(tmp_path)) == 1


class TestExitCodes:
    def test_corrupt_checkpoint_is_runtime_failure(self, tmp_path):
        bad = tmp_path / "checkpoint.pt"
        bad.write_bytes(b"not a checkpoint")
        assert run_cli("evaluate", "--checkpoint", str(bad)) == 2

    def test_nondeterministic_mode_keeps_wall_seconds(self, tmp_path):
        config = write_config(tmp_path, train={"deterministic": False,
                                               "max_epochs": 1, "patience": 1})
        store = tmp_path / "store"
        assert run_cli("train", "--config", str(config), "--out", str(store)) == 0
        line = (next(store.iterdir()) / "metrics.jsonl").read_text().splitlines()[0]
        assert "wall_seconds" in json.loads(line)


class TestSweepSeries:
    def test_x_axis_matches_swept_values_exactly(self):
        from stfit.cli import sweep_series

        rows = [
            {"value": 0.5, "seed": 0, "mae": 1.0, "rmse": 2.0, "mape_pct": 3.0},
            {"value": 0.1, "seed": 0, "mae": 2.0, "rmse": 2.0, "mape_pct": 3.0},
            {"value": 0.1, "seed": 1, "mae": 4.0, "rmse": 2.0, "mape_pct": 3.0},
        ]
        values, means, stds = sweep_series(rows, "mae")
        assert values == [0.1, 0.5]
        assert means == [3.0, 1.0]
        assert stds == [1.0, 0.0]
