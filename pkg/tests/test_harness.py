import csv
import json

import numpy as np
import pytest

from fedselect import mask as M
from fedselect.cli import main
from fedselect.config import ConfigError, FLConfig, from_dict, load_config, load_sweep, to_dict
from fedselect.data import Dataset
from fedselect.harness import evaluate_client, iou_matrix, run_experiment, run_grid
from fedselect.model import LayerSpec, Model

MINIMAL = """
n_clients = 2
rounds = 2
hidden = [8]

[algorithm]
kind = "{kind}"

[local]
local_epochs = 1
batch_size = 10
p = 0.2
alpha = {alpha}

[data]
n_classes = 4
input_dim = 5
train_size = 20
test_size = 10
"""


@pytest.fixture
def config_file(tmp_path):
    def make(kind="fedselect", alpha=0.5, text=None):
        path = tmp_path / f"{kind}_{alpha}.toml"
        path.write_text(text if text is not None else MINIMAL.format(kind=kind, alpha=alpha))
        return path

    return make


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestEvaluate:
    model = Model((LayerSpec(2, 2, "identity"),))

    def test_constant_logits_pick_class_zero(self):
        test = Dataset(np.random.default_rng(0).normal(size=(4, 2)), np.array([0, 1, 0, 1]), 2)
        assert evaluate_client(self.model, np.zeros(6), test) == 0.5

    def test_perfect(self):
        # logit_j = x_j
        theta = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
        test = Dataset(np.array([[2.0, 0.0], [0.0, 3.0]]), np.array([0, 1]), 2)
        assert evaluate_client(self.model, theta, test) == 1.0

    def test_hand_counted(self):
        theta = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
        x = np.array([[2, 1], [0, 1], [3, 3], [1, 5], [4, 0]], dtype=float)
        y = np.array([0, 0, 1, 1, 1])
        # predictions: 0, 1, 0 (tie), 1, 0 -> correct on samples 0 and 3
        assert evaluate_client(self.model, theta, Dataset(x, y, 2)) == pytest.approx(2 / 5)

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate_client(self.model, np.zeros(6), Dataset(np.zeros((0, 2)), np.zeros(0, int), 2))


class TestIoUMatrix:
    def test_identical(self):
        m = np.array([1, 0, 1], bool)
        assert np.array_equal(iou_matrix([m, m, m]), np.ones((3, 3)))

    def test_appendix_masks(self):
        ms = [np.array(r, bool) for r in ([1, 1, 0, 0], [1, 0, 1, 0], [1, 0, 0, 1])]
        out = iou_matrix(ms)
        assert np.allclose(out[~np.eye(3, dtype=bool)], 1 / 3)
        assert np.array_equal(out, out.T) and np.all(np.diag(out) == 1)

    def test_empty_masks_degenerate(self):
        assert np.array_equal(iou_matrix([M.zeros(4)] * 2), np.ones((2, 2)))

    def test_span(self):
        a, b = np.array([1, 1, 0, 1], bool), np.array([0, 1, 0, 1], bool)
        assert iou_matrix([a, b], (2, 4))[0, 1] == 1.0


class TestConfig:
    def test_roundtrip(self, config_file):
        cfg = load_config(config_file())
        assert from_dict(to_dict(cfg)) == cfg

    def test_missing_field(self):
        with pytest.raises(ConfigError, match="rounds"):
            from_dict({"n_clients": 2, "algorithm": {"kind": "fedavg"}})

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            from_dict({"n_clients": 2, "rounds": 1, "algorithm": {"kind": "fedavg"}, "bogus": 1})

    def test_partition_requirements(self):
        with pytest.raises(ConfigError):
            from_dict({"n_clients": 2, "rounds": 1, "algorithm": {"kind": "fixed_partition"}})

    def test_overrides(self, config_file):
        cfg = load_config(config_file()).with_overrides({"local.alpha": 0.3, "rounds": 7})
        assert cfg.local.alpha == 0.3 and cfg.rounds == 7
        with pytest.raises(ConfigError):
            cfg.with_overrides({"local.nope": 1})

    def test_shipped_configs_load(self):
        for name in ("minimal", "cifar_like"):
            assert isinstance(load_config(f"configs/{name}.toml"), FLConfig)
        assert load_sweep("configs/sweep_p_alpha.toml") == {"local.p": [0.05, 0.2], "local.alpha": [0.3, 0.5]}


class TestRunExperiment:
    def test_outputs(self, config_file, tmp_path):
        cfg = load_config(config_file())
        res = run_experiment(cfg, tmp_path / "out")
        out = res.out_dir
        assert len((out / "history.jsonl").read_text().splitlines()) == 2
        assert len(read_rows(out / "summary.csv")) == 1 + 2
        assert read_rows(out / "summary.csv")[0] == ["client_id", "accuracy", "sparsity"]
        iou = read_rows(out / "iou.csv")
        assert len(iou) == 2 and all(len(r) == 2 for r in iou)
        assert len(read_rows(out / "curve.csv")) == 1 + 2
        rec = json.loads((out / "history.jsonl").read_text().splitlines()[0])
        assert rec["mean_accuracy"] == pytest.approx(np.mean(rec["per_client_accuracy"]))

    def test_snapshots(self, config_file, tmp_path):
        cfg = load_config(config_file()).replace(snapshot_interval=1)
        run_experiment(cfg, tmp_path / "out")
        snap = tmp_path / "out" / "snapshots"
        theta = np.load(snap / "round_00001_theta.npy")
        masks = json.loads((snap / "round_00001_masks.json").read_text())
        assert theta.shape[0] == 2
        assert M.from_rle(masks["0"]).size == theta.shape[1]

    def test_byte_identical_rerun(self, config_file, tmp_path):
        cfg = load_config(config_file())
        run_experiment(cfg, tmp_path / "a")
        run_experiment(cfg, tmp_path / "b")
        for name in ("history.jsonl", "summary.csv", "iou.csv", "curve.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestGrid:
    def test_alpha_zero_cells_equal_fedavg(self, config_file, tmp_path):
        base = load_config(config_file())
        rows = run_grid(base, {"local.alpha": [0.0], "local.p": [0.1, 0.5]}, tmp_path / "g")
        fedavg = run_experiment(load_config(config_file("fedavg")), tmp_path / "f")
        assert all(r["mean_accuracy"] == fedavg.final.mean_accuracy for r in rows)
        for i in range(2):
            assert (tmp_path / "g" / f"cell_{i:03d}" / "history.jsonl").read_bytes() == (
                tmp_path / "f" / "history.jsonl"
            ).read_bytes()

    def test_single_cell_equals_run(self, config_file, tmp_path):
        base = load_config(config_file())
        (row,) = run_grid(base, {"local.alpha": [0.5]}, tmp_path / "g")
        assert row["mean_accuracy"] == run_experiment(base, tmp_path / "r").final.mean_accuracy

    def test_two_by_two_reproducible(self, config_file, tmp_path):
        base = load_config(config_file())
        sweep = {"local.p": [0.05, 0.2], "local.alpha": [0.3, 0.5]}
        a = run_grid(base, sweep, tmp_path / "a")
        b = run_grid(base, sweep, tmp_path / "b")
        assert len(a) == 4 and a == b
        assert (tmp_path / "a" / "grid.csv").read_bytes() == (tmp_path / "b" / "grid.csv").read_bytes()


class TestCLI:
    def test_run(self, config_file, tmp_path, capsys):
        assert main(["run", str(config_file()), "--out-dir", str(tmp_path / "o"), "--seed", "3"]) == 0
        assert (tmp_path / "o" / "curve.csv").exists()

    def test_missing_field_exit_2(self, config_file, tmp_path):
        bad = config_file(text="n_clients = 2\n[algorithm]\nkind = 'fedavg'\n")
        assert main(["run", str(bad), "--out-dir", str(tmp_path)]) == 2

    def test_unreadable_config_exit_2(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.toml")]) == 2

    def test_runtime_error_exit_1(self, config_file, tmp_path):
        csv_path = tmp_path / "d.csv"
        csv_path.write_text("f0,label\n1,0\nnot-a-number,1\n")
        text = MINIMAL.format(kind="fedselect", alpha=0.5).replace(
            "[data]\n", f"[data]\nsource = 'csv'\ncsv_path = '{csv_path}'\n"
        )
        assert main(["run", str(config_file(text=text)), "--out-dir", str(tmp_path / "o")]) == 1

    def test_grid(self, config_file, tmp_path):
        sweep = tmp_path / "s.toml"
        sweep.write_text('[sweep]\n"local.alpha" = [0.0, 0.5]\n')
        assert main(["grid", str(config_file()), str(sweep), "--out-dir", str(tmp_path / "g")]) == 0
        assert len(read_rows(tmp_path / "g" / "grid.csv")) == 3

    def test_verify(self, tmp_path, capsys):
        assert main(["verify", "--out-dir", str(tmp_path)]) == 0
        report = json.loads((tmp_path / "verify.json").read_text())
        assert report["passed"] and report["theorem2"]["appendix_pattern"]["max_deviation"] <= 1e-10
