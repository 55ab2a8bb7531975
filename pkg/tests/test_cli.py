import os

import numpy as np
import pytest

from boxsplit.cli import main
from boxsplit.config import RunConfig, parse_config_file, resolve_seed

TRAIN_FLAGS = [
    "--width", "32", "--layers", "2", "--heads", "2", "--epochs", "4",
    "--diffusion-T", "50", "--sample-steps", "10",
]
VQ_FLAGS = ["--vocab-size", "64", "--vq-latent-dim", "8", "--vq-hidden-dim", "32", "--vq-epochs", "5"]


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("data") / "ds")
    rc = main(["prepare-data", "--family", "table", "--count", "12", "--seed", "7", "--out", out])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def checkpoint_dir(tmp_path_factory, dataset_dir):
    ckpt = str(tmp_path_factory.mktemp("ckpts"))
    for cmd, name in (
        ("train-pivot", "pivot.ckpt"),
        ("train-split", "cond_split.ckpt"),
        ("train-uncond", "uncond.ckpt"),
        ("train-token", "token.ckpt"),
    ):
        rc = main(
            [cmd, "--dataset", dataset_dir, "--out", os.path.join(ckpt, name), "--seed", "3"]
            + TRAIN_FLAGS
            + VQ_FLAGS
        )
        assert rc == 0, cmd
    return ckpt


class TestPrepareData:
    def test_deterministic_bytes(self, tmp_path):
        a = str(tmp_path / "a")
        b = str(tmp_path / "b")
        for out in (a, b):
            assert main(["prepare-data", "--family", "chair", "--count", "6", "--seed", "5", "--out", out]) == 0
        for rel in ["dataset.txt"] + [f"trees/{i:05d}.boxtree" for i in range(6)]:
            with open(os.path.join(a, rel), "rb") as fa, open(os.path.join(b, rel), "rb") as fb:
                assert fa.read() == fb.read(), rel

    def test_manifest_written(self, dataset_dir):
        with open(os.path.join(dataset_dir, "manifest.txt")) as fh:
            lines = fh.read().splitlines()
        assert lines[0] == "boxsplit-manifest v1"
        assert "command prepare-data" in lines
        assert any(ln.startswith("seed ") for ln in lines)

    def test_validation_error_exit_1(self, tmp_path):
        assert main(["prepare-data", "--family", "table", "--count", "1", "--out", str(tmp_path / "x")]) == 1

    def test_unknown_family_runtime_exit(self, tmp_path):
        rc = main(["prepare-data", "--family", "starship", "--count", "4", "--out", str(tmp_path / "x")])
        assert rc == 2
        assert not os.path.exists(str(tmp_path / "x" / "dataset.txt"))


class TestArgHandling:
    def test_unknown_flag_exit_1(self, capsys):
        assert main(["prepare-data", "--nonsense", "1"]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_subcommand_exit_1(self):
        assert main(["fly"]) == 1

    def test_env_seed_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("BOXSPLIT_SEED", "99")
        out = str(tmp_path / "env")
        assert main(["prepare-data", "--family", "table", "--count", "4", "--out", out]) == 0
        with open(os.path.join(out, "manifest.txt")) as fh:
            assert "seed 99" in fh.read().splitlines()

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("width=16\nepochs=2  # short\n\n# comment\n")
        values = parse_config_file(str(cfg))
        assert values == {"width": "16", "epochs": "2"}
        rc = RunConfig.from_dict({**values, "seed": 1})
        assert rc.width == 16 and rc.epochs == 2

    def test_resolve_seed_flag_wins(self, monkeypatch):
        monkeypatch.setenv("BOXSPLIT_SEED", "5")
        assert resolve_seed(3) == 3
        assert resolve_seed(None) == 5
        monkeypatch.delenv("BOXSPLIT_SEED")
        assert resolve_seed(None) == 0


class TestTrainAndSample:
    def test_checkpoints_exist(self, checkpoint_dir):
        for name in ("pivot.ckpt", "cond_split.ckpt", "uncond.ckpt", "token.ckpt"):
            assert os.path.exists(os.path.join(checkpoint_dir, name))
            assert os.path.exists(os.path.join(checkpoint_dir, name + ".losses.csv"))

    def test_sample_writes_all_cardinalities(self, checkpoint_dir, tmp_path):
        out = str(tmp_path / "samples.txt")
        rc = main(
            ["sample", "--checkpoint-dir", checkpoint_dir, "--target-count", "9", "--seed", "3",
             "--sample-steps", "10", "--out", out]
        )
        assert rc == 0
        from boxsplit.report import load_boxsets

        sets = load_boxsets(out)
        counts = sorted(params.shape[0] for _lv, params in sets)
        assert counts == list(range(1, 10))
        assert os.path.exists(out + ".png")

    def test_sample_deterministic(self, checkpoint_dir, tmp_path):
        outs = []
        for name in ("s1.txt", "s2.txt"):
            out = str(tmp_path / name)
            rc = main(
                ["sample", "--checkpoint-dir", checkpoint_dir, "--target-count", "5", "--seed", "11",
                 "--sample-steps", "8", "--out", out]
            )
            assert rc == 0
            with open(out, "rb") as fh:
                outs.append(fh.read())
        assert outs[0] == outs[1]

    def test_eval_report_and_figures(self, checkpoint_dir, dataset_dir, tmp_path):
        samples = str(tmp_path / "gen.txt")
        assert main(
            ["sample", "--checkpoint-dir", checkpoint_dir, "--target-count", "6", "--count", "4",
             "--seed", "2", "--sample-steps", "8", "--out", samples]
        ) == 0
        out = str(tmp_path / "report")
        rc = main(
            ["eval", "--generated", samples, "--reference", dataset_dir, "--levels", "4,5",
             "--distance", "cd", "--points", "64", "--seed", "2", "--out", out]
        )
        assert rc == 0
        from boxsplit.report import parse_report_text

        with open(os.path.join(out, "report.txt")) as fh:
            report = parse_report_text(fh.read())
        assert {r.level for r in report.rows} == {4, 5}
        assert os.path.exists(os.path.join(out, "report.csv"))
        figures = os.listdir(os.path.join(out, "figures"))
        assert any(f.endswith(".png") for f in figures)

    def test_eval_bad_distance_exit_1(self, dataset_dir, tmp_path):
        rc = main(
            ["eval", "--generated", "nope.txt", "--reference", dataset_dir, "--distance", "l7",
             "--out", str(tmp_path / "r")]
        )
        assert rc == 1
