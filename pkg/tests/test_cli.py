import subprocess
import sys

import numpy as np
import pytest

from alignflow.cli import main
from alignflow.harness import (
    TrainConfig,
    build_model,
    duration_targets,
    save_config,
    save_duration_corpus,
)
from alignflow.corpus import generate_corpus
from alignflow.numerics import Rng


@pytest.fixture
def grid_csv(tmp_path):
    rng = Rng(1)
    path = tmp_path / "grid.csv"
    P = rng.normal((3, 6))
    np.savetxt(path, P, delimiter=",")
    return path


@pytest.fixture
def run_config(tmp_path):
    cfg = TrainConfig(seed=3, steps_main=25, steps_duration=8, eval_every=25,
                      n_train=5, n_eval=2, hidden_width=16, ff_width=24,
                      dur_hidden=8, flow_hidden=8)
    path = tmp_path / "run.cfg"
    save_config(cfg, path)
    return path


def invoke(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, out


class TestMas:
    def test_durations_and_best_q_on_stdout(self, capsys, grid_csv):
        code, out = invoke(capsys, "mas", "--grid", grid_csv)
        assert code == 0
        lines = out.strip().split("\n")
        durations = [int(x) for x in lines[0].split(",")]
        assert len(durations) == 3 and sum(durations) == 6
        assert lines[1].startswith("best_Q=")

    def test_repeat_is_bit_identical(self, capsys, grid_csv):
        _, out1 = invoke(capsys, "mas", "--grid", grid_csv, "--noise-scale", "0.5",
                         "--seed", "11")
        _, out2 = invoke(capsys, "mas", "--grid", grid_csv, "--noise-scale", "0.5",
                         "--seed", "11")
        assert out1 == out2

    def test_single_row_grid(self, capsys, tmp_path):
        path = tmp_path / "row.csv"
        path.write_text("0.1,0.5,-0.2\n")
        code, out = invoke(capsys, "mas", "--grid", path)
        assert out.split("\n")[0] == "3"


class TestTrainToy:
    def test_writes_all_outputs(self, capsys, run_config, tmp_path):
        out_dir = tmp_path / "run"
        code, out = invoke(capsys, "train-toy", "--config", run_config,
                           "--out", out_dir, "--seed", "3")
        assert code == 0
        for name in ("config.txt", "corpus.json", "main_metrics.csv",
                     "duration_metrics.csv", "duration_corpus.csv", "checkpoint.bin"):
            assert (out_dir / name).exists(), name

    def test_determinism_across_invocations(self, capsys, run_config, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        _, out1 = invoke(capsys, "train-toy", "--config", run_config, "--out", a,
                         "--seed", "9")
        _, out2 = invoke(capsys, "train-toy", "--config", run_config, "--out", b,
                         "--seed", "9")
        for name in ("main_metrics.csv", "duration_metrics.csv", "checkpoint.bin",
                     "corpus.json", "duration_corpus.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
        assert out1.replace(str(a), "") == out2.replace(str(b), "")

    def test_seed_flag_overrides_config(self, capsys, run_config, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        invoke(capsys, "train-toy", "--config", run_config, "--out", a, "--seed", "1")
        invoke(capsys, "train-toy", "--config", run_config, "--out", b, "--seed", "2")
        assert (a / "corpus.json").read_bytes() != (b / "corpus.json").read_bytes()


class TestTrainDuration:
    @pytest.fixture
    def duration_corpus(self, tmp_path):
        cfg = TrainConfig(n_train=4, hidden_width=16, ff_width=24, flow_hidden=8)
        corpus = generate_corpus(cfg.corpus_spec(), Rng(2))
        model = build_model(cfg, Rng(3))
        path = tmp_path / "durations.csv"
        save_duration_corpus(path, duration_targets(model, corpus.train))
        return path

    def test_writes_loss_csv(self, capsys, duration_corpus, tmp_path):
        out = tmp_path / "losses.csv"
        code, _ = invoke(capsys, "train-duration", "--corpus", duration_corpus,
                         "--steps", "12", "--seed", "4", "--out", out)
        assert code == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "step,loss_d,loss_g_adv,loss_g_mse"
        assert len(lines) == 13

    def test_determinism(self, capsys, duration_corpus, tmp_path):
        o1, o2 = tmp_path / "l1.csv", tmp_path / "l2.csv"
        invoke(capsys, "train-duration", "--corpus", duration_corpus, "--steps", "10",
               "--seed", "6", "--out", o1)
        invoke(capsys, "train-duration", "--corpus", duration_corpus, "--steps", "10",
               "--seed", "6", "--out", o2)
        assert o1.read_bytes() == o2.read_bytes()


class TestEvalAlign:
    def test_reports_rates(self, capsys, run_config, tmp_path):
        out_dir = tmp_path / "run"
        invoke(capsys, "train-toy", "--config", run_config, "--out", out_dir,
               "--seed", "3")
        code, out = invoke(capsys, "eval-align", "--ckpt", out_dir / "checkpoint.bin",
                           "--corpus", out_dir / "corpus.json")
        assert code == 0
        assert out.startswith("exact_match=")
        assert "mae=" in out


class TestCheckGrad:
    def test_single_seed_passes(self, capsys):
        code, out = invoke(capsys, "check-grad", "--seed", "0", "--seeds", "1")
        assert code == 0
        assert "FAIL" not in out
        assert "coupling.input" in out


class TestDumpAttention:
    def test_writes_csv_and_pgm(self, capsys, run_config, tmp_path):
        out_dir = tmp_path / "run"
        invoke(capsys, "train-toy", "--config", run_config, "--out", out_dir,
               "--seed", "3")
        frames = tmp_path / "frames.csv"
        rng = Rng(5)
        np.savetxt(frames, rng.normal((2, 7)), delimiter=",")
        maps_dir = tmp_path / "maps"
        code, _ = invoke(capsys, "dump-attention", "--ckpt", out_dir / "checkpoint.bin",
                         "--input", frames, "--out", maps_dir)
        assert code == 0
        for li in range(2):
            csv = maps_dir / f"attention_layer{li}.csv"
            pgm = maps_dir / f"attention_layer{li}.pgm"
            assert csv.exists() and pgm.exists()
            rows = np.loadtxt(csv, delimiter=",").reshape(7, 7)
            np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-10)
            header = pgm.read_bytes()[:15]
            assert header.startswith(b"P5\n7 7\n255\n")

    def test_determinism(self, capsys, run_config, tmp_path):
        out_dir = tmp_path / "run"
        invoke(capsys, "train-toy", "--config", run_config, "--out", out_dir,
               "--seed", "3")
        frames = tmp_path / "frames.csv"
        np.savetxt(frames, Rng(5).normal((2, 5)), delimiter=",")
        d1, d2 = tmp_path / "m1", tmp_path / "m2"
        invoke(capsys, "dump-attention", "--ckpt", out_dir / "checkpoint.bin",
               "--input", frames, "--out", d1)
        invoke(capsys, "dump-attention", "--ckpt", out_dir / "checkpoint.bin",
               "--input", frames, "--out", d2)
        for li in range(2):
            for suffix in ("csv", "pgm"):
                name = f"attention_layer{li}.{suffix}"
                assert (d1 / name).read_bytes() == (d2 / name).read_bytes()


class TestEntryPoint:
    def test_module_invocation(self, tmp_path):
        rng = Rng(1)
        path = tmp_path / "grid.csv"
        np.savetxt(path, rng.normal((2, 4)), delimiter=",")
        proc = subprocess.run(
            [sys.executable, "-m", "alignflow.cli", "mas", "--grid", str(path)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "best_Q=" in proc.stdout
