import json
import subprocess
import sys

import numpy as np
import pytest
from conftest import bars_dataset
from test_data import write_idx_images, write_idx_labels

from sscnet.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VERIFY, main
from sscnet.data import DATASET_DIRS, MNIST_FILES


@pytest.fixture
def data_dir(tmp_path):
    """Bars images written as tiny MNIST-format datasets."""
    root = tmp_path / "data"
    for name, seed in (("mnist", 1), ("fashion_mnist", 2)):
        d = root / DATASET_DIRS[name]
        d.mkdir(parents=True)
        for split, n in (("train", 200), ("test", 100)):
            ds = bars_dataset(n, seed=seed + (10 if split == "test" else 0))
            img, lab = MNIST_FILES[split]
            write_idx_images(d / img, ds.pixels[:, 0])
            write_idx_labels(d / lab, ds.labels)
    return root


def run(*args):
    return main([str(a) for a in args])


class TestLayout:
    def test_prints_and_writes(self, tmp_path, capsys):
        out = tmp_path / "lay"
        assert run("layout", "--M", 36, "--N", 4, "--g", 2, "--p", 2, "--out", out) == EXIT_OK
        text = capsys.readouterr().out
        assert "layer R_p = 72.22%" in text
        assert {p.name for p in out.iterdir()} == {"layout.json", "cost.csv", "manifest.json"}
        man = json.loads((out / "manifest.json").read_text())
        assert man["command"] == "layout" and man["spec"]["M"] == 36
        assert "code_version" in man and "kernel_backend" in man

    def test_idempotent(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b, a):
            assert run("layout", "--M", 8, "--N", 4, "--out", d) == EXIT_OK
        for f in ("layout.json", "cost.csv"):
            assert (a / f).read_bytes() == (b / f).read_bytes()
        assert not [p for p in tmp_path.iterdir() if p.name.startswith(".")]

    def test_special_case_tag(self, capsys):
        run("layout", "--M", 6, "--N", 3, "--g", 0, "--p", 1)
        assert "PWC-equivalent" in capsys.readouterr().out

    def test_divisibility_error(self, capsys):
        assert run("layout", "--M", 36, "--N", 4, "--g", 7) == EXIT_USAGE
        err = capsys.readouterr().err
        assert "valid g" in err and "36" in err

    def test_bad_flag(self):
        assert run("layout", "--bogus") == EXIT_USAGE


class TestCost:
    def test_solver(self, capsys):
        assert run("cost", "--M", 36, "--target-rp", 90) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "g,p,achieved_rp" and lines[1] == "6,6,90.1235"

    def test_odd_report(self, capsys):
        assert run("cost", "--M", 36, "--N", 4, "--parity", "odd",
                   "--parity-policy", "odd_only") == EXIT_OK
        assert "75.00%" in capsys.readouterr().out

    def test_needs_n(self):
        assert run("cost", "--M", 36) == EXIT_USAGE

    def test_bad_target(self):
        assert run("cost", "--M", 36, "--target-rp", 150) == EXIT_USAGE


class TestVerify:
    def test_passes(self, tmp_path):
        j = tmp_path / "v.json"
        assert run("verify", "--json", j) == EXIT_OK
        doc = json.loads(j.read_text())
        assert doc["passed"] and {c["scope"] for c in doc["checks"]} == {
            "layout", "cost", "oracle", "grad", "ortho"}

    def test_negative_control(self, capsys):
        assert run("verify", "--scope", "oracle", "--inject-corruption") == EXIT_VERIFY
        out = capsys.readouterr().out
        assert "[FAIL]" in out and "corrupted mask at filter" in out and "tap" in out


class TestTrainTransfer:
    def test_train_then_transfer(self, tmp_path, data_dir):
        a = tmp_path / "a"
        common = ["--set", "arch=tiny", "--set", "epochs=2", "--set", "batch_size=16",
                  "--set", "lr=0.05", "--data-dir", data_dir]
        assert run("train", "--out", a, "--set", "data_fraction=0.5", *common) == EXIT_OK
        man = json.loads((a / "manifest.json").read_text())
        assert man["data_fraction"] == 0.5
        assert man["data"]["train"]["n"] == 200 and man["train_samples_used"] == 100
        assert {"config.txt", "metrics.csv", "model.ckpt", "manifest.json"} <= {
            p.name for p in a.iterdir()}

        b = tmp_path / "b"
        assert run("transfer", "--checkpoint", a / "model.ckpt", "--out", b,
                   "--set", "dataset=fashion_mnist", *common) == EXIT_OK
        assert json.loads((b / "manifest.json").read_text())["source_checkpoint"].endswith("model.ckpt")

        c = tmp_path / "c"
        assert run("transfer", "--checkpoint", a / "model.ckpt", "--out", c, "--set", "g=4",
                   "--set", "dataset=fashion_mnist", *common) == EXIT_USAGE
        assert not c.exists()

        d = tmp_path / "d"
        assert run("analyze", "--checkpoint", a / "model.ckpt", "--checkpoint", b / "model.ckpt",
                   "--tag", "A", "--tag", "B", "--out", d) == EXIT_OK
        assert (d / "comparison.csv").read_text().startswith("layer,C_l[A],C_l[B]")

    def test_config_file_precedence(self, tmp_path, data_dir):
        cfg = tmp_path / "c.txt"
        cfg.write_text("arch = tiny\nepochs = 1  # short\nbatch_size = 50\n")
        out = tmp_path / "o"
        assert run("train", "--config", cfg, "--set", "epochs=2", "--out", out,
                   "--data-dir", data_dir) == EXIT_OK
        conf = json.loads((out / "manifest.json").read_text())["config"]
        assert conf["epochs"] == 2 and conf["batch_size"] == 50

    def test_unknown_key(self, tmp_path, data_dir):
        assert run("train", "--set", "colour=red", "--out", tmp_path / "o",
                   "--data-dir", data_dir) == EXIT_USAGE

    def test_missing_data(self, tmp_path):
        assert run("train", "--out", tmp_path / "o", "--data-dir", tmp_path / "nothing") == EXIT_RUNTIME
        assert not (tmp_path / "o").exists()


class TestOther:
    def test_missing_checkpoint(self, tmp_path):
        assert run("analyze", "--checkpoint", tmp_path / "nope.ckpt") == EXIT_RUNTIME

    def test_corrupt_checkpoint(self, tmp_path):
        p = tmp_path / "bad.ckpt"
        p.write_bytes(b"junk" * 10)
        assert run("analyze", "--checkpoint", p) == EXIT_RUNTIME

    def test_bench(self, tmp_path):
        out = tmp_path / "bench"
        assert run("bench", "--M", 16, "--N", 16, "--batch", 1, "--size", 6, "--reps", 1,
                   "--backend", "python", "--out", out) == EXIT_OK
        assert (out / "bench.csv").read_text().startswith("label,")

    def test_console_entry(self):
        r = subprocess.run([sys.executable, "-m", "sscnet.cli", "cost", "--M", "36",
                            "--target-rp", "90"], capture_output=True, text=True)
        assert r.returncode == 0 and "6,6,90.1235" in r.stdout
        assert np.isfinite(float(r.stdout.splitlines()[1].split(",")[2]))
